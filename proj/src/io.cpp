#include "ctdg/io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ctdg/errors.hpp"

namespace ctdg::io {

namespace {

constexpr char kMatMagic[8] = {'C', 'T', 'D', 'G', 'M', 'A', 'T', 'F'};
constexpr char kTensMagic[8] = {'C', 'T', 'D', 'G', 'T', 'E', 'N', 'S'};

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw ValidationError("truncated binary file");
    return v;
}

void write_mat_body(std::ostream& os, const Eigen::MatrixXd& m) {
    write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
    write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            write_pod<double>(os, m(i, j));
        }
    }
}

Eigen::MatrixXd read_mat_body(std::istream& is) {
    const auto rows = read_pod<std::uint64_t>(is);
    const auto cols = read_pod<std::uint64_t>(is);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            m(i, j) = read_pod<double>(is);
        }
    }
    return m;
}

}  // namespace

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

Eigen::MatrixXd load_matrix(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open matrix file: " + path);
    char magic[8] = {};
    is.read(magic, 8);
    if (is && std::memcmp(magic, kMatMagic, 8) == 0) {
        const auto version = read_pod<std::uint32_t>(is);
        if (version != 1) throw ValidationError("unsupported matrix file version in " + path);
        return read_mat_body(is);
    }
    // Plain CSV fallback.
    is.clear();
    is.seekg(0);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto cells = split_csv_line(line);
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(c, &used));
                if (used != c.size()) throw std::invalid_argument(c);
            } catch (const std::exception&) {
                throw ValidationError(path + ":" + std::to_string(lineno) +
                                      ": cannot parse '" + c + "' as a number");
            }
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": ragged row");
        }
        rows.push_back(std::move(row));
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                      rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return m;
}

void save_matrix_csv(const Eigen::MatrixXd& m, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    char buf[64];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
            os << buf;
            if (j + 1 < m.cols()) os << ',';
        }
        os << '\n';
    }
}

void save_matrix_binary(const Eigen::MatrixXd& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os.write(kMatMagic, 8);
    write_pod<std::uint32_t>(os, 1);
    write_mat_body(os, m);
}

const Eigen::MatrixXd* TensorFile::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

void save_tensors(const TensorFile& tf, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os.write(kTensMagic, 8);
    write_pod<std::uint32_t>(os, 1);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tf.tensors.size()));
    for (const auto& [name, t] : tf.tensors) {
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_mat_body(os, t);
    }
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tf.meta.size()));
    for (const auto& [k, v] : tf.meta) {
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(k.size()));
        os.write(k.data(), static_cast<std::streamsize>(k.size()));
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(v.size()));
        os.write(v.data(), static_cast<std::streamsize>(v.size()));
    }
}

TensorFile load_tensors(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open tensor file: " + path);
    char magic[8] = {};
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kTensMagic, 8) != 0) {
        throw ValidationError(path + ": not a tensor file (bad magic)");
    }
    const auto version = read_pod<std::uint32_t>(is);
    if (version != 1) throw ValidationError("unsupported tensor file version in " + path);
    TensorFile tf;
    const auto count = read_pod<std::uint32_t>(is);
    tf.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = read_pod<std::uint32_t>(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        tf.tensors.emplace_back(std::move(name), read_mat_body(is));
    }
    const auto meta_count = read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < meta_count; ++i) {
        const auto klen = read_pod<std::uint32_t>(is);
        std::string k(klen, '\0');
        is.read(k.data(), klen);
        const auto vlen = read_pod<std::uint32_t>(is);
        std::string v(vlen, '\0');
        is.read(v.data(), vlen);
        tf.meta.emplace(std::move(k), std::move(v));
    }
    return tf;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << content;
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace ctdg::io
