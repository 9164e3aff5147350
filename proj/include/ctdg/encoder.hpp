#ifndef CTDG_ENCODER_HPP
#define CTDG_ENCODER_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctdg/ad.hpp"
#include "ctdg/dyngraph.hpp"
#include "ctdg/params.hpp"

namespace ctdg {

enum class AttentionVariant { SA, GAT, GATv2 };

AttentionVariant parse_variant(const std::string& s);
std::string variant_name(AttentionVariant v);

struct EncoderConfig {
    int layers = 1;
    int heads = 1;
    int dim = 16;       // d; must be divisible by heads
    int input_dim = 0;  // F + K, set once the dataset is known
    int clusters = 1;
    AttentionVariant variant = AttentionVariant::SA;
    double leaky_slope = 0.2;
    double time_scale = 1.0;  // divisor applied to elapsed seconds
    int neighbor_cap = 0;     // keep only the cap most recent neighbors; 0: all

    int head_dim() const { return dim / heads; }
    void validate() const;
};

// Tape-bound view of one head's tensors.
struct HeadVars {
    ad::Var w_v;          // d_h x in
    ad::Var w_q, w_k;     // SA: both; GAT/GATv2: w_k only
    ad::Var attn_a;       // GAT/GATv2: 2*d_h x 1
    struct Intensity {
        ad::Var w_g;      // d_h x d_h
        ad::Var b_g;      // d_h x 1, per unit (scaled) time
        ad::Var w;        // d_h x 1
        ad::Var mu;       // 1 x 1
        ad::Var log_phi;  // 1 x 1; phi = exp(log_phi) keeps the timescale positive
    };
    std::vector<Intensity> intensity;  // one per cluster
};

using LayerVars = std::vector<HeadVars>;  // one entry per head

// Registers all encoder tensors (layer/head/cluster structure) in the store.
void init_encoder_params(ParamStore& store, const EncoderConfig& cfg, std::uint64_t seed);

// Binds the store's encoder tensors for one tape pass.
std::vector<LayerVars> bind_encoder(const ParamStore& store, const EncoderConfig& cfg,
                                    ad::Tape& tape, const std::vector<ad::Var>& bound);

struct KeyRef {
    int row = 0;             // index into the layer input rows
    NodeId id = 0;           // reduction order is ascending id
    double pair_time = 0.0;  // previous event time on the (query, key) pair
    int cluster = 0;
};

struct QuerySpec {
    int row = 0;       // the query's own input row
    double t = 0.0;    // query time
    double tbar = 0.0; // previous event time for the query's process; t >= tbar
    std::vector<KeyRef> keys;
};

struct ForwardHooks {
    bool force_unit_intensity = false;  // lambda == 1: plain attention
    // Optional additive encoding mixed into score-path inputs (queries get
    // their query time, keys their pair time). Values never carry it.
    std::function<Eigen::VectorXd(double t, int dim)> time_encoding;
    long* value_touch_counter = nullptr;  // counts value-vector computations
};

// H_0 = [X_f || X_c].
Eigen::MatrixXd encode_input(const Eigen::MatrixXd& x_f, const Eigen::MatrixXd& x_c);

// Raw attention score e_{u,i} for one (query, key) pair of transformed inputs.
// SA: (W_q x_u)^T (W_k x_i) / sqrt(d_h); GAT: LeakyReLU(a^T [k_u || k_i]);
// GATv2: a^T LeakyReLU([k_u || k_i]).
ad::Var attention_score(ad::Tape& tape, AttentionVariant variant, const HeadVars& head,
                        ad::Var query_in, ad::Var key_in, double leaky_slope);

// Softmax over unmasked neighbor scores, then the weighted value sum.
// Empty key set yields a zero vector and sets *empty_flag.
ad::Var endogenous_encode(ad::Tape& tape, const LayerVars& layer, const EncoderConfig& cfg,
                          const std::vector<ad::Var>& rows, const QuerySpec& query,
                          const ForwardHooks& hooks = {}, bool* empty_flag = nullptr);

// lambda_k(t) = phi * log(1 + exp((w^T g + mu) / phi)) with
// g = LeakyReLU(W_g s + b_g * dt). dt is elapsed time already divided by
// the configured time scale; dt < 0 is a precondition violation.
ad::Var conditional_intensity(ad::Tape& tape, const HeadVars::Intensity& params, ad::Var s,
                              double dt, double leaky_slope);

// One encoder layer: per head, intensity-modulated attention; heads
// concatenated. Intensities are computed once per (query, cluster) pair.
// Output is aligned with `queries`.
std::vector<ad::Var> layer_forward(ad::Tape& tape, const LayerVars& layer,
                                   const EncoderConfig& cfg, const std::vector<ad::Var>& rows,
                                   const std::vector<QuerySpec>& queries,
                                   const ForwardHooks& hooks = {},
                                   std::vector<std::uint8_t>* empty_flags = nullptr);

// Single-query form taking key inputs directly; used by the recursive
// per-query expansions where key embeddings depend on the query time.
struct DirectKey {
    ad::Var input;
    NodeId id = 0;
    double pair_time = 0.0;
    int cluster = 0;
};

ad::Var query_forward(ad::Tape& tape, const LayerVars& layer, const EncoderConfig& cfg,
                      ad::Var query_input, double t, double tbar,
                      const std::vector<DirectKey>& keys, const ForwardHooks& hooks = {},
                      bool* empty_flag = nullptr);

// Per-head endogenous states for the same single query (layer-1 form used by
// the likelihood evaluator); returns one d_h vector per head.
std::vector<ad::Var> endogenous_heads(ad::Tape& tape, const LayerVars& layer,
                                      const EncoderConfig& cfg, ad::Var query_input, double t,
                                      const std::vector<DirectKey>& keys,
                                      const ForwardHooks& hooks = {});

}  // namespace ctdg

#endif  // CTDG_ENCODER_HPP
