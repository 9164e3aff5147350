#include "ctdg/cam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "ctdg/errors.hpp"

namespace ctdg {

Eigen::VectorXd temporal_encoding(double t, int d) {
    if (d < 2 || d % 2 != 0) throw ValidationError("temporal encoding dimension must be even");
    Eigen::VectorXd te(d);
    for (int i = 0; i < d; i += 2) {
        const double denom = std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
        te(i) = std::sin(t / denom);
        te(i + 1) = std::cos(t / denom);
    }
    return te;
}

std::function<Eigen::VectorXd(double, int)> make_te_hook(double time_scale) {
    return [time_scale](double t, int dim) {
        const int even = dim - (dim % 2);
        Eigen::VectorXd out = Eigen::VectorXd::Zero(dim);
        if (even >= 2) out.head(even) = temporal_encoding(t / time_scale, even);
        return out;
    };
}

bool MaskPlan::key_removed(int query, NodeId key) const {
    if (query >= static_cast<int>(masked_keys.size())) return false;
    const auto& v = masked_keys[static_cast<std::size_t>(query)];
    return std::binary_search(v.begin(), v.end(), key);
}

int MaskPlan::masked_count() const {
    int c = 0;
    for (auto m : masked_query) c += m;
    return c;
}

MaskPlan plan_masks(const MaskPlanInput& input, double ratio, std::uint64_t seed, MaskMode mode) {
    if (ratio < 0.0 || ratio >= 1.0) throw ValidationError("mask ratio must lie in [0, 1)");
    if (input.labels.rows() != input.num_queries) {
        throw ValidationError("label matrix must have one row per query");
    }
    MaskPlan plan;
    plan.ratio = ratio;
    plan.seed = seed;
    plan.mode = mode;
    plan.labels = input.labels;
    plan.masked_query.assign(static_cast<std::size_t>(input.num_queries), 0);
    plan.masked_keys.resize(static_cast<std::size_t>(input.num_queries));
    if (ratio == 0.0) return plan;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int q = 0; q < input.num_queries; ++q) {
        plan.masked_query[static_cast<std::size_t>(q)] = uni(rng) < ratio ? 1 : 0;
    }
    if (mode == MaskMode::SpecialToken) return plan;  // keys are kept, only rows replaced

    for (int q = 0; q < input.num_queries; ++q) {
        const auto& keys = input.keys[static_cast<std::size_t>(q)];
        const NodeId self = input.query_ids.empty() ? NodeId(-1)
                                                    : input.query_ids[static_cast<std::size_t>(q)];
        auto& removed = plan.masked_keys[static_cast<std::size_t>(q)];
        int kept = 0;
        for (const NodeId key : keys) {
            const bool eligible = key != self;  // a query never masks itself
            if (eligible && uni(rng) < ratio) {
                removed.push_back(key);
            } else {
                ++kept;
            }
        }
        if (kept == 0 && !removed.empty()) {
            // Keep the most recent key visible rather than emptying the query.
            const NodeId most_recent = keys.back();
            removed.erase(std::remove(removed.begin(), removed.end(), most_recent),
                          removed.end());
        }
        std::sort(removed.begin(), removed.end());
    }
    return plan;
}

MaskPlan plan_masks(const DynamicGraph& g, double ratio, const Eigen::MatrixXd& labels,
                    std::uint64_t seed, MaskMode mode) {
    MaskPlanInput input;
    input.num_queries = static_cast<int>(g.num_nodes());
    input.query_ids.resize(static_cast<std::size_t>(g.num_nodes()));
    input.keys.resize(static_cast<std::size_t>(g.num_nodes()));
    const double horizon = g.events().empty() ? g.t0() + 1.0 : g.events().back().t + 1.0;
    for (NodeId u = 0; u < g.num_nodes(); ++u) {
        input.query_ids[static_cast<std::size_t>(u)] = u;
        History h = g.neighborhood_at(u, horizon);
        auto& keys = input.keys[static_cast<std::size_t>(u)];
        keys.reserve(h.entries.size());
        for (const auto& e : h.entries) keys.push_back(e.neighbor);
    }
    input.labels = labels;
    return plan_masks(input, ratio, seed, mode);
}

void save_mask_plan(const MaskPlan& plan, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "# mask plan: ratio=" << plan.ratio << " seed=" << plan.seed << " mode="
       << (plan.mode == MaskMode::CaM ? "cam" : "special-token") << "\n";
    for (std::size_t q = 0; q < plan.masked_query.size(); ++q) {
        os << q << ',' << int(plan.masked_query[q]);
        for (NodeId k : plan.masked_keys[q]) os << ',' << k;
        os << '\n';
    }
}

std::vector<ad::Var> masked_forward(ad::Tape& tape, const MaskedForwardProblem& problem) {
    const EncoderConfig& cfg = *problem.cfg;
    const std::size_t q_count = problem.queries.size();
    if (problem.base_rows.size() != q_count) {
        throw ValidationError("masked_forward: base rows and queries disagree");
    }

    // Layer-0 rows: masked queries carry label embeddings (or the shared
    // token in the baseline mode); everyone else keeps raw content.
    std::vector<ad::Var> rows;
    rows.reserve(q_count);
    for (std::size_t q = 0; q < q_count; ++q) {
        const bool masked = problem.plan && problem.plan->is_masked(static_cast<int>(q));
        if (masked && problem.plan->mode == MaskMode::SpecialToken) {
            rows.push_back(problem.token);
        } else if (masked) {
            Eigen::VectorXd y = problem.plan->labels.row(static_cast<Eigen::Index>(q));
            rows.push_back(tape.matmul(problem.w_q, tape.leaf(y, /*requires_grad=*/false)));
        } else {
            rows.push_back(tape.leaf(problem.base_rows[q], /*requires_grad=*/false));
        }
    }

    // Masked keys are dropped once per forward pass; the topology is shared
    // by every layer.
    std::vector<QuerySpec> queries = problem.queries;
    if (problem.plan && problem.plan->mode == MaskMode::CaM) {
        for (std::size_t q = 0; q < q_count; ++q) {
            QuerySpec& spec = queries[q];
            const auto full = spec.keys;
            spec.keys.clear();
            for (const KeyRef& k : full) {
                if (!problem.plan->key_removed(static_cast<int>(q), k.id)) {
                    spec.keys.push_back(k);
                }
            }
            if (spec.keys.empty() && !full.empty()) {
                // Same guard as plan_masks: keep the most recent key.
                spec.keys.push_back(full.back());
            }
        }
    }

    ForwardHooks hooks;
    hooks.force_unit_intensity = problem.force_unit_intensity;
    hooks.value_touch_counter = problem.value_touch_counter;
    if (problem.temporal) hooks.time_encoding = make_te_hook(problem.time_scale);

    for (std::size_t l = 0; l < problem.layers->size(); ++l) {
        rows = layer_forward(tape, (*problem.layers)[l], cfg, rows, queries, hooks, nullptr);
    }
    return rows;
}

}  // namespace ctdg
