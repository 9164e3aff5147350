#include "ctdg/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

#include "ctdg/errors.hpp"
#include "ctdg/io.hpp"
#include "ctdg/rng.hpp"

namespace ctdg {

double NormalizedLaplacian::max_diagonal() const {
    double m = 0.0;
    for (Eigen::Index i = 0; i < matrix.rows(); ++i) m = std::max(m, matrix.coeff(i, i));
    return m;
}

NormalizedLaplacian build_laplacian(const std::vector<std::pair<NodeId, NodeId>>& edges,
                                    NodeId n_nodes, bool strict) {
    std::vector<double> degree(static_cast<std::size_t>(n_nodes), 0.0);
    std::vector<std::pair<NodeId, NodeId>> undirected;
    undirected.reserve(edges.size());
    for (const auto& [a, b] : edges) {
        if (a < 0 || a >= n_nodes || b < 0 || b >= n_nodes) {
            throw ValidationError("edge endpoint out of range");
        }
        if (a == b) continue;
        undirected.emplace_back(std::min(a, b), std::max(a, b));
    }
    std::sort(undirected.begin(), undirected.end());
    undirected.erase(std::unique(undirected.begin(), undirected.end()), undirected.end());
    for (const auto& [a, b] : undirected) {
        degree[static_cast<std::size_t>(a)] += 1.0;
        degree[static_cast<std::size_t>(b)] += 1.0;
    }

    NormalizedLaplacian lap;
    std::vector<Eigen::Index> remap(static_cast<std::size_t>(n_nodes), -1);
    for (NodeId u = 0; u < n_nodes; ++u) {
        if (degree[static_cast<std::size_t>(u)] > 0.0) {
            remap[static_cast<std::size_t>(u)] = static_cast<Eigen::Index>(lap.kept.size());
            lap.kept.push_back(u);
        } else if (strict) {
            throw ValidationError("isolated node " + std::to_string(u) +
                                  " (use permissive mode to drop it)");
        } else {
            ++lap.dropped;
        }
    }
    if (lap.dropped > 0) {
        std::cerr << "build_laplacian: dropped " << lap.dropped << " isolated node(s)\n";
    }

    const auto n = static_cast<Eigen::Index>(lap.kept.size());
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(undirected.size() * 2 + static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) trip.emplace_back(i, i, 1.0);
    for (const auto& [a, b] : undirected) {
        const Eigen::Index ia = remap[static_cast<std::size_t>(a)];
        const Eigen::Index ib = remap[static_cast<std::size_t>(b)];
        const double w = -1.0 / std::sqrt(degree[static_cast<std::size_t>(a)] *
                                          degree[static_cast<std::size_t>(b)]);
        trip.emplace_back(ia, ib, w);
        trip.emplace_back(ib, ia, w);
    }
    lap.matrix.resize(n, n);
    lap.matrix.setFromTriplets(trip.begin(), trip.end());
    return lap;
}

void SpectralParams::validate(Eigen::Index n) const {
    if (s < 1 || s > n) throw ValidationError("spectral.s must lie in [1, N]");
    if (r < 1) throw ValidationError("spectral.r must be >= 1");
    if (p < 1) throw ValidationError("spectral.p must be >= 1");
    if (r + p > s) throw ValidationError("spectral.r + spectral.p must not exceed spectral.s");
    if (q < 1) throw ValidationError("spectral.q must be >= 1");
    if (eig_floor <= 0.0) throw ValidationError("spectral eigenvalue floor must be positive");
}

double SpectralBasis::orthogonality_error() const {
    const Eigen::MatrixXd g = vectors.transpose() * vectors;
    return (g - Eigen::MatrixXd::Identity(g.rows(), g.cols())).norm();
}

namespace {

std::vector<Eigen::Index> sample_without_replacement(Eigen::Index n, int s, std::uint64_t seed) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    for (int i = 0; i < s; ++i) {
        const auto j = static_cast<Eigen::Index>(
            i + static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(s));
    std::sort(idx.begin(), idx.end());
    return idx;
}

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
    }
    return m;
}

}  // namespace

SpectralBasis nystrom_eig(const NormalizedLaplacian& lap, const SpectralParams& params) {
    const Eigen::Index n = lap.size();
    params.validate(n);
    const int rp = params.r + params.p;

    // Low mode decomposes M = 2I - L so the range finder's dominant end maps
    // to the smallest Laplacian frequencies.
    Eigen::SparseMatrix<double> m;
    if (params.spectrum_end == SpectrumEnd::Low) {
        Eigen::SparseMatrix<double> eye(n, n);
        eye.setIdentity();
        m = (eye * 2.0 - lap.matrix).pruned();
    } else {
        m = lap.matrix;
    }

    const std::vector<Eigen::Index> cols =
        sample_without_replacement(n, params.s, derive_seed(params.seed, "columns"));

    Eigen::SparseMatrix<double> c(n, params.s);
    {
        std::vector<Eigen::Triplet<double>> trip;
        for (int j = 0; j < params.s; ++j) {
            const Eigen::Index col = cols[static_cast<std::size_t>(j)];
            for (Eigen::SparseMatrix<double>::InnerIterator it(m, col); it; ++it) {
                trip.emplace_back(it.row(), j, it.value());
            }
        }
        c.setFromTriplets(trip.begin(), trip.end());
    }
    Eigen::MatrixXd a(params.s, params.s);
    {
        std::vector<Eigen::Index> inv(static_cast<std::size_t>(n), -1);
        for (int j = 0; j < params.s; ++j) inv[static_cast<std::size_t>(cols[static_cast<std::size_t>(j)])] = j;
        a.setZero();
        for (int j = 0; j < params.s; ++j) {
            const Eigen::Index col = cols[static_cast<std::size_t>(j)];
            for (Eigen::SparseMatrix<double>::InnerIterator it(m, col); it; ++it) {
                const Eigen::Index i = inv[static_cast<std::size_t>(it.row())];
                if (i >= 0) a(i, j) = it.value();
            }
        }
    }

    // A^{-1/2} through the dense eigendecomposition with a spectrum floor.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> asolver(a);
    if (asolver.info() != Eigen::Success) {
        throw std::runtime_error("eigendecomposition of the intersection block failed");
    }
    SpectralBasis basis;
    basis.params = params;
    basis.requested_r = params.r;
    Eigen::VectorXd avals = asolver.eigenvalues();
    for (Eigen::Index i = 0; i < avals.size(); ++i) {
        if (avals(i) < params.eig_floor) {
            basis.floor_applied = true;
            avals(i) = params.eig_floor;
        }
    }
    const Eigen::MatrixXd a_inv_sqrt = asolver.eigenvectors() *
                                       avals.cwiseInverse().cwiseSqrt().asDiagonal() *
                                       asolver.eigenvectors().transpose();

    const Eigen::MatrixXd ctc = Eigen::MatrixXd(Eigen::SparseMatrix<double>(c.transpose() * c));
    const Eigen::MatrixXd w = a_inv_sqrt * ctc * a_inv_sqrt;

    // Randomized range finder with power iterations, then the one-pass solve
    // Z (Q^T Omega) = Q^T W Omega.
    const Eigen::MatrixXd omega =
        gaussian_matrix(params.s, rp, derive_seed(params.seed, "omega"));
    Eigen::MatrixXd y = omega;
    const Eigen::MatrixXd& pow_target =
        (params.power_target == PowerTarget::IntersectionBlock) ? a : w;
    for (int i = 0; i < params.q; ++i) y = pow_target * y;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
    const Eigen::MatrixXd qmat =
        qr.householderQ() * Eigen::MatrixXd::Identity(params.s, rp);
    const Eigen::MatrixXd b = qmat.transpose() * omega;       // (r+p) x (r+p)
    const Eigen::MatrixXd rhs = qmat.transpose() * (w * omega);
    Eigen::MatrixXd z =
        b.transpose().colPivHouseholderQr().solve(rhs.transpose()).transpose();
    z = 0.5 * (z + z.transpose());

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> zsolver(z);
    if (zsolver.info() != Eigen::Success) {
        throw std::runtime_error("eigendecomposition of the projected block failed");
    }
    // Keep the r dominant eigenpairs (ascending order from Eigen: take the top).
    struct Pair {
        double sigma;
        Eigen::Index idx;
    };
    std::vector<Pair> pairs;
    for (Eigen::Index i = 0; i < zsolver.eigenvalues().size(); ++i) {
        pairs.push_back(Pair{zsolver.eigenvalues()(i), i});
    }
    std::sort(pairs.begin(), pairs.end(),
              [](const Pair& x, const Pair& y2) { return x.sigma > y2.sigma; });

    int r_eff = 0;
    for (int i = 0; i < params.r && i < static_cast<int>(pairs.size()); ++i) {
        if (pairs[static_cast<std::size_t>(i)].sigma < params.eig_floor) break;
        ++r_eff;
    }
    if (r_eff < params.r) {
        std::cerr << "nystrom_eig: shrinking rank from " << params.r << " to " << r_eff
                  << " (eigenvalues below the floor)\n";
    }
    if (r_eff == 0) throw std::runtime_error("no eigenvalues above the floor");

    Eigen::VectorXd sigma(r_eff);
    Eigen::MatrixXd u_z(rp, r_eff);
    for (int i = 0; i < r_eff; ++i) {
        sigma(i) = pairs[static_cast<std::size_t>(i)].sigma;
        u_z.col(i) = zsolver.eigenvectors().col(pairs[static_cast<std::size_t>(i)].idx);
    }
    const Eigen::MatrixXd u_w = qmat * u_z;
    Eigen::MatrixXd ext = a_inv_sqrt * u_w;
    for (int i = 0; i < r_eff; ++i) ext.col(i) /= std::sqrt(sigma(i));
    Eigen::MatrixXd u_full = c * ext;  // N x r_eff

    // Map back to Laplacian frequencies and sort ascending.
    Eigen::VectorXd lambda(r_eff);
    for (int i = 0; i < r_eff; ++i) {
        lambda(i) = (params.spectrum_end == SpectrumEnd::Low) ? 2.0 - sigma(i) : sigma(i);
    }
    std::vector<int> order(static_cast<std::size_t>(r_eff));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y2) { return lambda(x) < lambda(y2); });
    basis.eigenvalues.resize(r_eff);
    basis.vectors.resize(n, r_eff);
    for (int i = 0; i < r_eff; ++i) {
        basis.eigenvalues(i) = lambda(order[static_cast<std::size_t>(i)]);
        basis.vectors.col(i) = u_full.col(order[static_cast<std::size_t>(i)]);
    }
    return basis;
}

Eigen::VectorXd gft(const SpectralBasis& basis, const Eigen::VectorXd& f, GftDirection dir) {
    if (dir == GftDirection::Forward) {
        if (f.size() != basis.vectors.rows()) throw ValidationError("gft: signal size mismatch");
        return basis.vectors.transpose() * f;
    }
    if (f.size() != basis.vectors.cols()) throw ValidationError("gft: spectrum size mismatch");
    return basis.vectors * f;
}

Band band_from_range(int lo, int hi, int rank) {
    if (lo < 0 || hi > rank || lo > hi) {
        throw ValidationError("band range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                              ") out of bounds for rank " + std::to_string(rank));
    }
    Band band;
    for (int i = lo; i < hi; ++i) band.indices.push_back(i);
    return band;
}

Band band_from_frequency(const SpectralBasis& basis, double freq_above) {
    Band band;
    for (int i = 0; i < basis.rank(); ++i) {
        if (basis.eigenvalues(i) > freq_above) band.indices.push_back(i);
    }
    return band;
}

namespace {

void check_band(const Band& band, const SpectralBasis& basis) {
    for (int i : band.indices) {
        if (i < 0 || i >= basis.rank()) {
            throw ValidationError("band index " + std::to_string(i) + " out of range");
        }
    }
}

Eigen::VectorXd band_projection(const SpectralBasis& basis, const Eigen::VectorXd& y,
                                const Band& band) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(y.size());
    for (int l : band.indices) {
        const auto u = basis.vectors.col(l);
        acc += u * (u.dot(y));
    }
    return acc;
}

}  // namespace

Eigen::VectorXd intra_perturb(const SpectralBasis& basis, const Eigen::VectorXd& y,
                              const Band& band) {
    check_band(band, basis);
    return y - band_projection(basis, y, band);
}

Eigen::VectorXd inter_perturb(const SpectralBasis& basis, const Eigen::VectorXd& y1,
                              const Eigen::VectorXd& y2, const Band& band) {
    check_band(band, basis);
    return y2 - band_projection(basis, y2, band) + band_projection(basis, y1, band);
}

namespace {

double spectral_norm_power(const Eigen::MatrixXd& m, std::uint64_t seed, int iters = 300) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd v(m.rows());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
    v.normalize();
    double norm = 0.0;
    for (int i = 0; i < iters; ++i) {
        Eigen::VectorXd w = m * v;
        norm = w.norm();
        if (norm <= 0.0) return 0.0;
        v = w / norm;
    }
    return norm;
}

}  // namespace

BoundReport bound_check(const NormalizedLaplacian& lap, const SpectralParams& params,
                        int trials) {
    const Eigen::Index n = lap.size();
    if (n > 500) throw ValidationError("bound_check needs N <= 500 for the dense oracle");
    if (params.p <= 1) throw ValidationError("bound_check needs oversampling p > 1");
    params.validate(n);
    if (trials < 1) throw ValidationError("bound_check needs at least one trial");

    const Eigen::MatrixXd dense = Eigen::MatrixXd(lap.matrix);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(dense);
    Eigen::VectorXd evals = solver.eigenvalues();  // ascending, within [0, 2]

    // ||L - L_r||_2: residual after keeping the r largest eigenvalues.
    const double lr_err = evals(n - params.r - 1);

    const double e = std::exp(1.0);
    const double zeta = 1.0 + std::sqrt(static_cast<double>(params.r) / (params.p - 1.0)) +
                        (e * std::sqrt(static_cast<double>(params.r + params.p)) / params.p) *
                            std::sqrt(static_cast<double>(params.s - params.r));
    const double zq = std::pow(zeta, 1.0 / static_cast<double>(params.q));
    const double rhs = zq * lr_err +
                       (1.0 + zq) * (static_cast<double>(n) / std::sqrt(params.s)) *
                           lap.max_diagonal();

    double acc = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        SpectralParams p2 = params;
        p2.spectrum_end = SpectrumEnd::High;  // the bound addresses L itself
        p2.seed = derive_seed(params.seed, "trial", static_cast<std::uint64_t>(trial));
        const SpectralBasis basis = nystrom_eig(lap, p2);
        const Eigen::MatrixXd approx =
            basis.vectors * basis.eigenvalues.asDiagonal() * basis.vectors.transpose();
        acc += spectral_norm_power(dense - approx,
                                   derive_seed(params.seed, "norm", static_cast<std::uint64_t>(trial)));
    }
    BoundReport report;
    report.empirical_mean = acc / trials;
    report.zeta = zeta;
    report.rhs = rhs;
    report.best_rank_r_error = lr_err;
    report.pass = report.empirical_mean <= rhs;
    return report;
}

void save_basis(const SpectralBasis& basis, const std::string& path) {
    io::TensorFile tf;
    tf.tensors.emplace_back("eigenvalues", basis.eigenvalues);
    tf.tensors.emplace_back("vectors", basis.vectors);
    tf.meta["s"] = std::to_string(basis.params.s);
    tf.meta["r"] = std::to_string(basis.params.r);
    tf.meta["p"] = std::to_string(basis.params.p);
    tf.meta["q"] = std::to_string(basis.params.q);
    tf.meta["seed"] = std::to_string(basis.params.seed);
    tf.meta["spectrum_end"] =
        basis.params.spectrum_end == SpectrumEnd::Low ? "low" : "high";
    tf.meta["floor_applied"] = basis.floor_applied ? "1" : "0";
    tf.meta["requested_r"] = std::to_string(basis.requested_r);
    io::save_tensors(tf, path);
}

SpectralBasis load_basis(const std::string& path) {
    io::TensorFile tf = io::load_tensors(path);
    SpectralBasis basis;
    const Eigen::MatrixXd* vals = tf.find("eigenvalues");
    const Eigen::MatrixXd* vecs = tf.find("vectors");
    if (!vals || !vecs) throw ValidationError(path + ": not a spectral basis file");
    basis.eigenvalues = vals->col(0);
    basis.vectors = *vecs;
    basis.params.s = std::stoi(tf.meta.at("s"));
    basis.params.r = std::stoi(tf.meta.at("r"));
    basis.params.p = std::stoi(tf.meta.at("p"));
    basis.params.q = std::stoi(tf.meta.at("q"));
    basis.params.seed = std::stoull(tf.meta.at("seed"));
    basis.params.spectrum_end =
        tf.meta.at("spectrum_end") == "low" ? SpectrumEnd::Low : SpectrumEnd::High;
    basis.floor_applied = tf.meta.at("floor_applied") == "1";
    basis.requested_r = std::stoi(tf.meta.at("requested_r"));
    return basis;
}

}  // namespace ctdg
