#ifndef CTDG_CLUSTER_HPP
#define CTDG_CLUSTER_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace ctdg {

// K groups sharing intensity parameters. Immutable once fitted.
struct ClusterModel {
    int k = 0;
    Eigen::MatrixXd centroids;    // K x F
    std::vector<int> assignment;  // one id per fitted row

    Eigen::MatrixXd one_hot() const;  // N x K
};

// Weighted K-means on the linear kernel: farthest-point seeding from the
// seed, Lloyd iterations to an assignment fixpoint (at most max_iters).
// An emptied cluster is re-seeded from the point farthest from its centroid.
// objective_trace, when given, records the objective after each iteration.
ClusterModel fit_clusters(const Eigen::MatrixXd& x, int k, const Eigen::VectorXd& weights,
                          std::uint64_t seed, int max_iters = 100,
                          std::vector<double>* objective_trace = nullptr);

ClusterModel fit_clusters(const Eigen::MatrixXd& x, int k, std::uint64_t seed);

// Nearest-centroid assignment; ties resolve to the smallest cluster id.
int assign(const ClusterModel& m, const Eigen::VectorXd& x);

// Weighted within-cluster squared distance.
double kmeans_objective(const Eigen::MatrixXd& x, const Eigen::VectorXd& weights,
                        const ClusterModel& m);

void save_cluster_model(const ClusterModel& m, const std::string& assignment_path,
                        const std::string& centroid_path);
ClusterModel load_cluster_model(const std::string& assignment_path,
                                const std::string& centroid_path);

}  // namespace ctdg

#endif  // CTDG_CLUSTER_HPP
