#include "ctdg/cluster.hpp"

#include <limits>
#include <random>

#include "ctdg/errors.hpp"
#include "ctdg/io.hpp"

namespace ctdg {

Eigen::MatrixXd ClusterModel::one_hot() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(assignment.size()), k);
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        m(static_cast<Eigen::Index>(i), assignment[i]) = 1.0;
    }
    return m;
}

namespace {

int nearest_centroid(const Eigen::MatrixXd& centroids, const Eigen::VectorXd& x) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
        const double d = (centroids.row(c).transpose() - x).squaredNorm();
        if (d < best_d) {  // strict: ties keep the smallest id
            best_d = d;
            best = static_cast<int>(c);
        }
    }
    return best;
}

}  // namespace

ClusterModel fit_clusters(const Eigen::MatrixXd& x, int k, const Eigen::VectorXd& weights,
                          std::uint64_t seed, int max_iters,
                          std::vector<double>* objective_trace) {
    const Eigen::Index n = x.rows();
    if (k < 1) throw ValidationError("cluster count must be >= 1");
    if (k > n) throw ValidationError("cluster count exceeds number of points");
    if (weights.size() != n) throw ValidationError("weight vector size mismatch");
    if ((weights.array() <= 0.0).any()) throw ValidationError("weights must be positive");

    ClusterModel m;
    m.k = k;
    m.centroids.resize(k, x.cols());
    m.assignment.assign(static_cast<std::size_t>(n), 0);

    // Farthest-point seeding.
    std::mt19937_64 rng(seed);
    std::vector<Eigen::Index> chosen;
    chosen.push_back(static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n)));
    Eigen::VectorXd dist_to_set =
        (x.rowwise() - x.row(chosen[0])).rowwise().squaredNorm();
    while (static_cast<int>(chosen.size()) < k) {
        Eigen::Index far = 0;
        dist_to_set.maxCoeff(&far);
        chosen.push_back(far);
        Eigen::VectorXd d = (x.rowwise() - x.row(far)).rowwise().squaredNorm();
        dist_to_set = dist_to_set.cwiseMin(d);
    }
    for (int c = 0; c < k; ++c) m.centroids.row(c) = x.row(chosen[static_cast<std::size_t>(c)]);

    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            const int c = nearest_centroid(m.centroids, x.row(i).transpose());
            if (c != m.assignment[static_cast<std::size_t>(i)]) {
                m.assignment[static_cast<std::size_t>(i)] = c;
                changed = true;
            }
        }
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(k, x.cols());
        Eigen::VectorXd wsum = Eigen::VectorXd::Zero(k);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int c = m.assignment[static_cast<std::size_t>(i)];
            acc.row(c) += weights(i) * x.row(i);
            wsum(c) += weights(i);
        }
        for (int c = 0; c < k; ++c) {
            if (wsum(c) > 0.0) {
                m.centroids.row(c) = acc.row(c) / wsum(c);
            } else {
                // Re-seed an emptied cluster from the point farthest from its
                // current centroid.
                Eigen::Index far = 0;
                Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
                for (Eigen::Index i = 0; i < n; ++i) {
                    const int ci = m.assignment[static_cast<std::size_t>(i)];
                    d(i) = (x.row(i) - m.centroids.row(ci)).squaredNorm();
                }
                d.maxCoeff(&far);
                m.centroids.row(c) = x.row(far);
                m.assignment[static_cast<std::size_t>(far)] = c;
                changed = true;
            }
        }
        if (objective_trace) objective_trace->push_back(kmeans_objective(x, weights, m));
        if (!changed && iter > 0) break;
    }
    return m;
}

ClusterModel fit_clusters(const Eigen::MatrixXd& x, int k, std::uint64_t seed) {
    return fit_clusters(x, k, Eigen::VectorXd::Ones(x.rows()), seed);
}

int assign(const ClusterModel& m, const Eigen::VectorXd& x) {
    if (x.size() != m.centroids.cols()) throw ValidationError("feature size mismatch in assign");
    return nearest_centroid(m.centroids, x);
}

double kmeans_objective(const Eigen::MatrixXd& x, const Eigen::VectorXd& weights,
                        const ClusterModel& m) {
    double obj = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const int c = m.assignment[static_cast<std::size_t>(i)];
        obj += weights(i) * (x.row(i) - m.centroids.row(c)).squaredNorm();
    }
    return obj;
}

void save_cluster_model(const ClusterModel& m, const std::string& assignment_path,
                        const std::string& centroid_path) {
    Eigen::MatrixXd a(static_cast<Eigen::Index>(m.assignment.size()), 1);
    for (std::size_t i = 0; i < m.assignment.size(); ++i) {
        a(static_cast<Eigen::Index>(i), 0) = m.assignment[i];
    }
    io::save_matrix_csv(a, assignment_path);
    io::save_matrix_csv(m.centroids, centroid_path);
}

ClusterModel load_cluster_model(const std::string& assignment_path,
                                const std::string& centroid_path) {
    ClusterModel m;
    Eigen::MatrixXd a = io::load_matrix(assignment_path);
    m.centroids = io::load_matrix(centroid_path);
    m.k = static_cast<int>(m.centroids.rows());
    m.assignment.resize(static_cast<std::size_t>(a.rows()));
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const int c = static_cast<int>(a(i, 0));
        if (c < 0 || c >= m.k) throw ValidationError("assignment id out of range");
        m.assignment[static_cast<std::size_t>(i)] = c;
    }
    return m;
}

}  // namespace ctdg
