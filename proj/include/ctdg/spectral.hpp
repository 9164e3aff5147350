#ifndef CTDG_SPECTRAL_HPP
#define CTDG_SPECTRAL_HPP

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cstdint>
#include <string>
#include <vector>

#include "ctdg/dyngraph.hpp"

namespace ctdg {

// L = I - D^{-1/2} A D^{-1/2} over the retained (non-isolated) nodes.
struct NormalizedLaplacian {
    Eigen::SparseMatrix<double> matrix;
    std::vector<NodeId> kept;  // retained node ids, ascending
    int dropped = 0;           // isolated nodes removed in permissive mode

    Eigen::Index size() const { return matrix.rows(); }
    double max_diagonal() const;
};

// strict: isolated nodes are an error; otherwise they are dropped.
NormalizedLaplacian build_laplacian(const std::vector<std::pair<NodeId, NodeId>>& edges,
                                    NodeId n_nodes, bool strict = true);

enum class SpectrumEnd { Low, High };
enum class PowerTarget { IntersectionBlock, NormalizedBlock };  // A^q (as written) or W^q

struct SpectralParams {
    int s = 0;  // sampled columns
    int r = 0;  // rank
    int p = 8;  // oversampling
    int q = 4;  // power iterations
    std::uint64_t seed = 0;
    SpectrumEnd spectrum_end = SpectrumEnd::Low;
    PowerTarget power_target = PowerTarget::IntersectionBlock;
    double eig_floor = 1e-10;

    void validate(Eigen::Index n) const;
};

struct SpectralBasis {
    Eigen::VectorXd eigenvalues;  // r ascending Laplacian frequencies
    Eigen::MatrixXd vectors;      // N x r, near-orthonormal columns
    SpectralParams params;
    bool floor_applied = false;   // intersection block hit the eigenvalue floor
    int requested_r = 0;          // r before any shrink

    int rank() const { return static_cast<int>(eigenvalues.size()); }
    double orthogonality_error() const;  // ||U^T U - I||_F
};

// Scalable orthogonalized decomposition: sample s columns, form the
// normalized block W = A^{-1/2} C^T C A^{-1/2}, run the randomized range
// finder with power iterations, solve Z Q^T Omega = Q^T W Omega, and
// extrapolate U = C A^{-1/2} U_W Sigma_W^{-1/2}. Low mode decomposes
// 2I - L and maps eigenvalues back through lambda = 2 - sigma.
SpectralBasis nystrom_eig(const NormalizedLaplacian& lap, const SpectralParams& params);

enum class GftDirection { Forward, Inverse };

Eigen::VectorXd gft(const SpectralBasis& basis, const Eigen::VectorXd& f, GftDirection dir);

struct Band {
    std::vector<int> indices;  // positions in the basis, each < rank
};

Band band_from_range(int lo, int hi, int rank);             // [lo, hi)
Band band_from_frequency(const SpectralBasis& basis, double freq_above);

// y - sum_{l in S} u_l u_l^T y: rejects the band's frequency content.
Eigen::VectorXd intra_perturb(const SpectralBasis& basis, const Eigen::VectorXd& y,
                              const Band& band);

// y2 with its band-S content replaced by y1's.
Eigen::VectorXd inter_perturb(const SpectralBasis& basis, const Eigen::VectorXd& y1,
                              const Eigen::VectorXd& y2, const Band& band);

struct BoundReport {
    double empirical_mean = 0.0;  // mean ||L - U S U^T||_2 over trials
    double rhs = 0.0;
    double zeta = 0.0;
    double best_rank_r_error = 0.0;  // ||L - L_r||_2
    bool pass = false;
};

// Empirical check of the spectral-norm error bound; needs p > 1 and a
// graph small enough for the dense oracle.
BoundReport bound_check(const NormalizedLaplacian& lap, const SpectralParams& params, int trials);

void save_basis(const SpectralBasis& basis, const std::string& path);
SpectralBasis load_basis(const std::string& path);

}  // namespace ctdg

#endif  // CTDG_SPECTRAL_HPP
