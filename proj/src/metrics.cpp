#include "ctdg/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "ctdg/errors.hpp"

namespace ctdg {

double MetricReport::get(const std::string& name) const {
    for (const auto& [n, v] : values) {
        if (n == name) return v;
    }
    throw ValidationError("metric not present: " + name);
}

bool MetricReport::has(const std::string& name) const {
    for (const auto& [n, v] : values) {
        if (n == name) return true;
    }
    return false;
}

std::string MetricReport::to_csv() const {
    std::string out = "metric,value\n";
    char buf[64];
    for (const auto& [n, v] : values) {
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        out += n;
        out += ',';
        out += buf;
        out += '\n';
    }
    return out;
}

int rank_of(const Eigen::VectorXd& scores, int target) {
    const double st = scores(target);
    int rank = 1;
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        if (i == target) continue;
        if (scores(i) > st || (scores(i) == st && i < target)) ++rank;
    }
    return rank;
}

double hit_rate_at(const std::vector<int>& ranks, int k) {
    if (ranks.empty()) throw ValidationError("empty test set");
    double hits = 0.0;
    for (int r : ranks) hits += (r <= k) ? 1.0 : 0.0;
    return hits / static_cast<double>(ranks.size());
}

double ndcg_at(const std::vector<int>& ranks, int k) {
    if (ranks.empty()) throw ValidationError("empty test set");
    double acc = 0.0;
    for (int r : ranks) {
        if (r <= k) acc += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    }
    return acc / static_cast<double>(ranks.size());
}

MetricReport evaluate_link(const std::vector<Eigen::VectorXd>& scores,
                           const std::vector<int>& truth, const std::vector<int>& ks) {
    if (scores.empty() || scores.size() != truth.size()) {
        throw ValidationError("evaluate_link: empty or misaligned predictions");
    }
    std::vector<int> ranks;
    ranks.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        ranks.push_back(rank_of(scores[i], truth[i]));
    }
    MetricReport report;
    for (int k : ks) report.set("hr@" + std::to_string(k), hit_rate_at(ranks, k));
    for (int k : ks) report.set("ndcg@" + std::to_string(k), ndcg_at(ranks, k));
    return report;
}

MetricReport evaluate_node(const std::vector<int>& predicted, const std::vector<int>& truth,
                           int num_classes, int minority_class) {
    if (predicted.empty() || predicted.size() != truth.size()) {
        throw ValidationError("evaluate_node: empty or misaligned predictions");
    }
    std::vector<double> tp(static_cast<std::size_t>(num_classes), 0.0);
    std::vector<double> fp(static_cast<std::size_t>(num_classes), 0.0);
    std::vector<double> fn(static_cast<std::size_t>(num_classes), 0.0);
    double correct = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int p = predicted[i];
        const int t = truth[i];
        if (p == t) {
            tp[static_cast<std::size_t>(t)] += 1.0;
            correct += 1.0;
        } else {
            fp[static_cast<std::size_t>(p)] += 1.0;
            fn[static_cast<std::size_t>(t)] += 1.0;
        }
    }
    auto f1_of = [&](int c) {
        const double denom = 2.0 * tp[static_cast<std::size_t>(c)] +
                             fp[static_cast<std::size_t>(c)] + fn[static_cast<std::size_t>(c)];
        return denom > 0.0 ? 2.0 * tp[static_cast<std::size_t>(c)] / denom : 0.0;
    };
    double macro = 0.0;
    for (int c = 0; c < num_classes; ++c) macro += f1_of(c);
    macro /= static_cast<double>(num_classes);

    MetricReport report;
    report.set("macro_f1", macro);
    report.set("micro_f1", f1_of(minority_class));
    report.set("accuracy", correct / static_cast<double>(truth.size()));
    return report;
}

MetricReport evaluate_traffic(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth) {
    if (predicted.size() == 0 || predicted.size() != truth.size()) {
        throw ValidationError("evaluate_traffic: empty or misaligned predictions");
    }
    const Eigen::ArrayXd err = (predicted - truth).array();
    const double mae = err.abs().mean();
    const double rmse = std::sqrt(err.square().mean());
    double mape = 0.0;
    int n = 0;
    for (Eigen::Index i = 0; i < truth.size(); ++i) {
        if (std::abs(truth(i)) > 1e-8) {
            mape += std::abs(err(i)) / std::abs(truth(i));
            ++n;
        }
    }
    mape = n > 0 ? mape / static_cast<double>(n) : 0.0;
    MetricReport report;
    report.set("mae", mae);
    report.set("rmse", rmse);
    report.set("mape", mape);
    return report;
}

}  // namespace ctdg
