#ifndef CTDG_METRICS_HPP
#define CTDG_METRICS_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace ctdg {

// Ordered name -> value pairs; order is stable for reproducible reports.
struct MetricReport {
    std::vector<std::pair<std::string, double>> values;

    void set(const std::string& name, double v) { values.emplace_back(name, v); }
    double get(const std::string& name) const;
    bool has(const std::string& name) const;
    std::string to_csv() const;
};

// 1-based rank of `target` under descending scores; ties resolve by index
// so that any monotone transform of the scores leaves ranks unchanged.
int rank_of(const Eigen::VectorXd& scores, int target);

double hit_rate_at(const std::vector<int>& ranks, int k);
double ndcg_at(const std::vector<int>& ranks, int k);  // single holdout: 1/log2(rank+1)

MetricReport evaluate_link(const std::vector<Eigen::VectorXd>& scores,
                           const std::vector<int>& truth, const std::vector<int>& ks);

// Macro-F1 over all classes, F1 of the designated minority class, accuracy.
MetricReport evaluate_node(const std::vector<int>& predicted, const std::vector<int>& truth,
                           int num_classes, int minority_class);

MetricReport evaluate_traffic(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth);

}  // namespace ctdg

#endif  // CTDG_METRICS_HPP
