#ifndef CTDG_CAM_HPP
#define CTDG_CAM_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "ctdg/ad.hpp"
#include "ctdg/dyngraph.hpp"
#include "ctdg/encoder.hpp"
#include "ctdg/params.hpp"

namespace ctdg {

// Sinusoidal temporal encoding: even index i gets sin(t / 10000^(i/d)),
// odd index i gets cos(t / 10000^((i-1)/d)). d must be even.
Eigen::VectorXd temporal_encoding(double t, int d);

// Adapter used as a ForwardHooks::time_encoding: divides times by the
// configured scale and tolerates odd target dimensions (last entry zero).
std::function<Eigen::VectorXd(double, int)> make_te_hook(double time_scale);

enum class MaskMode {
    CaM,           // masked keys removed; masked queries carry label embeddings
    SpecialToken,  // baseline: masked rows replaced by one shared token, keys kept
};

struct MaskPlan {
    double ratio = 0.0;
    std::uint64_t seed = 0;
    MaskMode mode = MaskMode::CaM;
    std::vector<std::uint8_t> masked_query;        // per query: 1 if masked
    std::vector<std::vector<NodeId>> masked_keys;  // per query: removed key ids (sorted)
    Eigen::MatrixXd labels;                        // Q x C_y, rows for masked queries

    bool is_masked(int query) const {
        return query < static_cast<int>(masked_query.size()) &&
               masked_query[static_cast<std::size_t>(query)] != 0;
    }
    bool key_removed(int query, NodeId key) const;
    int masked_count() const;
};

// Key-id lists must be ordered oldest to most recent; when a draw would
// remove every key of a query, the most recent key is kept.
struct MaskPlanInput {
    int num_queries = 0;
    std::vector<NodeId> query_ids;          // the id each query carries as a key
    std::vector<std::vector<NodeId>> keys;  // per query, ordered by recency
    Eigen::MatrixXd labels;                 // Q x C_y
};

MaskPlan plan_masks(const MaskPlanInput& input, double ratio, std::uint64_t seed,
                    MaskMode mode = MaskMode::CaM);

// Graph overload: queries are nodes, key sets are full neighborhoods.
MaskPlan plan_masks(const DynamicGraph& g, double ratio, const Eigen::MatrixXd& labels,
                    std::uint64_t seed, MaskMode mode = MaskMode::CaM);

void save_mask_plan(const MaskPlan& plan, const std::string& path);

// Masked multi-layer forward pass of Eq-style attention with temporal
// encodings on the score path. Queries double as key rows: key row indices
// refer to positions in `queries`.
struct MaskedForwardProblem {
    const EncoderConfig* cfg = nullptr;
    const std::vector<LayerVars>* layers = nullptr;   // bound encoder params
    std::vector<Eigen::VectorXd> base_rows;           // layer-0 inputs per query
    std::vector<QuerySpec> queries;                   // full (unmasked) key lists
    const MaskPlan* plan = nullptr;                   // optional
    ad::Var w_q;                                      // input_dim x C_y (CaM)
    ad::Var token;                                    // input_dim x 1 (SpecialToken)
    bool temporal = true;
    double time_scale = 1.0;
    bool force_unit_intensity = false;
    long* value_touch_counter = nullptr;
};

// Returns final-layer embeddings for every query.
std::vector<ad::Var> masked_forward(ad::Tape& tape, const MaskedForwardProblem& problem);

}  // namespace ctdg

#endif  // CTDG_CAM_HPP
