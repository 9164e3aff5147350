#ifndef CTDG_IO_HPP
#define CTDG_IO_HPP

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

namespace ctdg::io {

std::vector<std::string> split_csv_line(const std::string& line);

// Dense matrix as CSV (no header) or the binary layout below; the loader
// sniffs the magic bytes.
Eigen::MatrixXd load_matrix(const std::string& path);
void save_matrix_csv(const Eigen::MatrixXd& m, const std::string& path);

// Binary matrix layout: "CTDGMATF" magic, u32 version (1), u64 rows,
// u64 cols, then rows*cols little-endian float64 in row-major order.
void save_matrix_binary(const Eigen::MatrixXd& m, const std::string& path);

// Named tensor container used for checkpoints and spectral bases:
// "CTDGTENS" magic, u32 version (1), u32 tensor count, then per tensor:
// u32 name length, name bytes, u64 rows, u64 cols, row-major float64 data.
// A free-form key/value text section ("meta") trails the tensor table.
struct TensorFile {
    std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;
    std::map<std::string, std::string> meta;

    const Eigen::MatrixXd* find(const std::string& name) const;
};

void save_tensors(const TensorFile& tf, const std::string& path);
TensorFile load_tensors(const std::string& path);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace ctdg::io

#endif  // CTDG_IO_HPP
