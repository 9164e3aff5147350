#include "ctdg/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

#include "ctdg/errors.hpp"
#include "ctdg/rng.hpp"

namespace ctdg {

AttentionVariant parse_variant(const std::string& s) {
    if (s == "SA" || s == "sa") return AttentionVariant::SA;
    if (s == "GAT" || s == "gat") return AttentionVariant::GAT;
    if (s == "GATv2" || s == "gatv2") return AttentionVariant::GATv2;
    throw ValidationError("unknown attention variant '" + s + "' (expected SA, GAT or GATv2)");
}

std::string variant_name(AttentionVariant v) {
    switch (v) {
        case AttentionVariant::SA: return "SA";
        case AttentionVariant::GAT: return "GAT";
        case AttentionVariant::GATv2: return "GATv2";
    }
    return "?";
}

void EncoderConfig::validate() const {
    if (layers < 1) throw ValidationError("encoder.layers must be >= 1");
    if (heads < 1) throw ValidationError("encoder.heads must be >= 1");
    if (dim < 1 || dim % heads != 0) {
        throw ValidationError("encoder.dim must be positive and divisible by encoder.heads");
    }
    if (input_dim < 1) throw ValidationError("encoder.input_dim must be set");
    if (clusters < 1) throw ValidationError("encoder.clusters must be >= 1");
    if (time_scale <= 0.0) throw ValidationError("encoder.time_scale must be positive");
}

namespace {

Eigen::MatrixXd xavier(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
    }
    return m;
}

std::string pname(int layer, int head, const std::string& leaf) {
    return "enc.l" + std::to_string(layer) + ".h" + std::to_string(head) + "." + leaf;
}

std::string pname(int layer, int head, int cluster, const std::string& leaf) {
    return pname(layer, head, "c" + std::to_string(cluster) + "." + leaf);
}

}  // namespace

void init_encoder_params(ParamStore& store, const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(derive_seed(seed, "encoder-init"));
    const int dh = cfg.head_dim();
    for (int l = 0; l < cfg.layers; ++l) {
        const int in = (l == 0) ? cfg.input_dim : cfg.dim;
        for (int h = 0; h < cfg.heads; ++h) {
            store.add(pname(l, h, "W_V"), xavier(dh, in, rng));
            if (cfg.variant == AttentionVariant::SA) {
                store.add(pname(l, h, "W_Q"), xavier(dh, in, rng));
            }
            store.add(pname(l, h, "W_K"), xavier(dh, in, rng));
            if (cfg.variant != AttentionVariant::SA) {
                store.add(pname(l, h, "a"), xavier(2 * dh, 1, rng));
            }
            for (int k = 0; k < cfg.clusters; ++k) {
                store.add(pname(l, h, k, "W_G"), xavier(dh, dh, rng));
                store.add(pname(l, h, k, "b_G"), Eigen::MatrixXd::Zero(dh, 1));
                store.add(pname(l, h, k, "w"), xavier(dh, 1, rng));
                store.add(pname(l, h, k, "mu"), Eigen::MatrixXd::Zero(1, 1));
                store.add(pname(l, h, k, "log_phi"), Eigen::MatrixXd::Zero(1, 1));
            }
        }
    }
}

std::vector<LayerVars> bind_encoder(const ParamStore& store, const EncoderConfig& cfg,
                                    ad::Tape& tape, const std::vector<ad::Var>& bound) {
    (void)tape;
    std::vector<LayerVars> layers;
    layers.resize(static_cast<std::size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l) {
        auto& lv = layers[static_cast<std::size_t>(l)];
        lv.resize(static_cast<std::size_t>(cfg.heads));
        for (int h = 0; h < cfg.heads; ++h) {
            HeadVars& hv = lv[static_cast<std::size_t>(h)];
            hv.w_v = bound[static_cast<std::size_t>(store.require(pname(l, h, "W_V")))];
            if (cfg.variant == AttentionVariant::SA) {
                hv.w_q = bound[static_cast<std::size_t>(store.require(pname(l, h, "W_Q")))];
            }
            hv.w_k = bound[static_cast<std::size_t>(store.require(pname(l, h, "W_K")))];
            if (cfg.variant != AttentionVariant::SA) {
                hv.attn_a = bound[static_cast<std::size_t>(store.require(pname(l, h, "a")))];
            }
            hv.intensity.resize(static_cast<std::size_t>(cfg.clusters));
            for (int k = 0; k < cfg.clusters; ++k) {
                auto& iv = hv.intensity[static_cast<std::size_t>(k)];
                iv.w_g = bound[static_cast<std::size_t>(store.require(pname(l, h, k, "W_G")))];
                iv.b_g = bound[static_cast<std::size_t>(store.require(pname(l, h, k, "b_G")))];
                iv.w = bound[static_cast<std::size_t>(store.require(pname(l, h, k, "w")))];
                iv.mu = bound[static_cast<std::size_t>(store.require(pname(l, h, k, "mu")))];
                iv.log_phi =
                    bound[static_cast<std::size_t>(store.require(pname(l, h, k, "log_phi")))];
            }
        }
    }
    return layers;
}

Eigen::MatrixXd encode_input(const Eigen::MatrixXd& x_f, const Eigen::MatrixXd& x_c) {
    if (x_f.rows() != x_c.rows()) {
        throw ValidationError("feature and cluster encodings disagree on node count");
    }
    Eigen::MatrixXd h0(x_f.rows(), x_f.cols() + x_c.cols());
    h0 << x_f, x_c;
    return h0;
}

ad::Var attention_score(ad::Tape& tape, AttentionVariant variant, const HeadVars& head,
                        ad::Var query_in, ad::Var key_in, double leaky_slope) {
    switch (variant) {
        case AttentionVariant::SA: {
            ad::Var q = tape.matmul(head.w_q, query_in);
            ad::Var k = tape.matmul(head.w_k, key_in);
            const double scale = 1.0 / std::sqrt(static_cast<double>(q.val().rows()));
            return tape.scale(tape.dot(q, k), scale);
        }
        case AttentionVariant::GAT: {
            ad::Var ku = tape.matmul(head.w_k, query_in);
            ad::Var ki = tape.matmul(head.w_k, key_in);
            ad::Var cc = tape.concat_rows(ku, ki);
            return tape.leaky_relu(tape.dot(head.attn_a, cc), leaky_slope);
        }
        case AttentionVariant::GATv2: {
            ad::Var ku = tape.matmul(head.w_k, query_in);
            ad::Var ki = tape.matmul(head.w_k, key_in);
            ad::Var cc = tape.leaky_relu(tape.concat_rows(ku, ki), leaky_slope);
            return tape.dot(head.attn_a, cc);
        }
    }
    throw std::logic_error("unreachable");
}

ad::Var conditional_intensity(ad::Tape& tape, const HeadVars::Intensity& params, ad::Var s,
                              double dt, double leaky_slope) {
    if (dt < 0.0) {
        throw std::invalid_argument("conditional_intensity: query time precedes previous event");
    }
    ad::Var g = tape.leaky_relu(
        tape.add(tape.matmul(params.w_g, s), tape.scale(params.b_g, dt)), leaky_slope);
    ad::Var x = tape.add(tape.dot(params.w, g), params.mu);
    ad::Var phi = tape.exp(params.log_phi);
    return tape.mul(phi, tape.softplus(tape.div(x, phi)));
}

namespace {

struct HeadPass {
    ad::Var softmax;            // n x 1 over the query's keys
    std::vector<ad::Var> vals;  // value vectors in reduction order
    ad::Var s;                  // endogenous encoding
};

ad::Var score_input(ad::Tape& tape, const std::vector<ad::Var>& rows, int row, double t,
                    const ForwardHooks& hooks) {
    ad::Var x = rows[static_cast<std::size_t>(row)];
    if (hooks.time_encoding) {
        Eigen::VectorXd te = hooks.time_encoding(t, static_cast<int>(x.val().rows()));
        x = tape.add(x, tape.leaf(te, /*requires_grad=*/false));
    }
    return x;
}

HeadPass head_attention(ad::Tape& tape, const HeadVars& head, const EncoderConfig& cfg,
                        const std::vector<ad::Var>& rows, const QuerySpec& query,
                        const std::vector<KeyRef>& keys, const ForwardHooks& hooks,
                        std::vector<ad::Var>* value_cache) {
    HeadPass out;
    ad::Var q_in = score_input(tape, rows, query.row, query.t, hooks);
    std::vector<ad::Var> scores;
    scores.reserve(keys.size());
    out.vals.reserve(keys.size());
    for (const KeyRef& k : keys) {
        ad::Var v;
        if (value_cache) {
            ad::Var& slot = (*value_cache)[static_cast<std::size_t>(k.row)];
            if (!slot.valid()) {
                slot = tape.matmul(head.w_v, rows[static_cast<std::size_t>(k.row)]);
                if (hooks.value_touch_counter) ++(*hooks.value_touch_counter);
            }
            v = slot;
        } else {
            v = tape.matmul(head.w_v, rows[static_cast<std::size_t>(k.row)]);
            if (hooks.value_touch_counter) ++(*hooks.value_touch_counter);
        }
        out.vals.push_back(v);
        ad::Var k_in = score_input(tape, rows, k.row, k.pair_time, hooks);
        scores.push_back(attention_score(tape, cfg.variant, head, q_in, k_in, cfg.leaky_slope));
    }
    out.softmax = tape.softmax_col(tape.stack(scores));
    out.s = tape.combine(out.softmax, out.vals);
    return out;
}

std::vector<KeyRef> sorted_keys(const QuerySpec& query) {
    std::vector<KeyRef> keys = query.keys;
    std::sort(keys.begin(), keys.end(), [](const KeyRef& a, const KeyRef& b) {
        return a.id < b.id;
    });
    return keys;
}

}  // namespace

ad::Var endogenous_encode(ad::Tape& tape, const LayerVars& layer, const EncoderConfig& cfg,
                          const std::vector<ad::Var>& rows, const QuerySpec& query,
                          const ForwardHooks& hooks, bool* empty_flag) {
    if (query.keys.empty()) {
        if (empty_flag) *empty_flag = true;
        return tape.leaf(Eigen::MatrixXd::Zero(cfg.dim, 1), /*requires_grad=*/false);
    }
    if (empty_flag) *empty_flag = false;
    const std::vector<KeyRef> keys = sorted_keys(query);
    ad::Var out;
    for (std::size_t h = 0; h < layer.size(); ++h) {
        HeadPass hp = head_attention(tape, layer[h], cfg, rows, query, keys, hooks, nullptr);
        out = (h == 0) ? hp.s : tape.concat_rows(out, hp.s);
    }
    return out;
}

namespace {

struct DirectHeadPass {
    ad::Var softmax;
    std::vector<ad::Var> vals;
    ad::Var s;
};

DirectHeadPass direct_head_attention(ad::Tape& tape, const HeadVars& head,
                                     const EncoderConfig& cfg, ad::Var query_input, double t,
                                     const std::vector<DirectKey>& keys,
                                     const ForwardHooks& hooks) {
    DirectHeadPass out;
    ad::Var q_in = query_input;
    if (hooks.time_encoding) {
        q_in = tape.add(q_in, tape.leaf(hooks.time_encoding(
                                            t, static_cast<int>(q_in.val().rows())),
                                        false));
    }
    std::vector<ad::Var> scores;
    scores.reserve(keys.size());
    out.vals.reserve(keys.size());
    for (const DirectKey& k : keys) {
        out.vals.push_back(tape.matmul(head.w_v, k.input));
        if (hooks.value_touch_counter) ++(*hooks.value_touch_counter);
        ad::Var k_in = k.input;
        if (hooks.time_encoding) {
            k_in = tape.add(k_in, tape.leaf(hooks.time_encoding(
                                                k.pair_time,
                                                static_cast<int>(k_in.val().rows())),
                                            false));
        }
        scores.push_back(attention_score(tape, cfg.variant, head, q_in, k_in, cfg.leaky_slope));
    }
    out.softmax = tape.softmax_col(tape.stack(scores));
    out.s = tape.combine(out.softmax, out.vals);
    return out;
}

std::vector<DirectKey> sorted_direct(const std::vector<DirectKey>& keys) {
    std::vector<DirectKey> out = keys;
    std::sort(out.begin(), out.end(),
              [](const DirectKey& a, const DirectKey& b) { return a.id < b.id; });
    return out;
}

}  // namespace

ad::Var query_forward(ad::Tape& tape, const LayerVars& layer, const EncoderConfig& cfg,
                      ad::Var query_input, double t, double tbar,
                      const std::vector<DirectKey>& keys, const ForwardHooks& hooks,
                      bool* empty_flag) {
    if (keys.empty()) {
        if (empty_flag) *empty_flag = true;
        return tape.leaf(Eigen::MatrixXd::Zero(cfg.dim, 1), false);
    }
    if (empty_flag) *empty_flag = false;
    const std::vector<DirectKey> sorted = sorted_direct(keys);
    const double dt = (t - tbar) / cfg.time_scale;
    ad::Var unit;
    if (hooks.force_unit_intensity) {
        unit = tape.leaf(Eigen::MatrixXd::Constant(1, 1, 1.0), false);
    }
    ad::Var row_out;
    for (std::size_t h = 0; h < layer.size(); ++h) {
        DirectHeadPass hp = direct_head_attention(tape, layer[h], cfg, query_input, t, sorted,
                                                  hooks);
        std::map<int, ad::Var> lambda_by_cluster;
        std::vector<ad::Var> lambda_per_key;
        lambda_per_key.reserve(sorted.size());
        for (const DirectKey& k : sorted) {
            auto it = lambda_by_cluster.find(k.cluster);
            if (it == lambda_by_cluster.end()) {
                ad::Var lam = hooks.force_unit_intensity
                                  ? unit
                                  : conditional_intensity(
                                        tape,
                                        layer[h].intensity[static_cast<std::size_t>(k.cluster)],
                                        hp.s, dt, cfg.leaky_slope);
                it = lambda_by_cluster.emplace(k.cluster, lam).first;
            }
            lambda_per_key.push_back(it->second);
        }
        ad::Var modulated = tape.mul(hp.softmax, tape.stack(lambda_per_key));
        ad::Var head_out = tape.combine(modulated, hp.vals);
        row_out = (h == 0) ? head_out : tape.concat_rows(row_out, head_out);
    }
    return row_out;
}

std::vector<ad::Var> endogenous_heads(ad::Tape& tape, const LayerVars& layer,
                                      const EncoderConfig& cfg, ad::Var query_input, double t,
                                      const std::vector<DirectKey>& keys,
                                      const ForwardHooks& hooks) {
    std::vector<ad::Var> out;
    out.reserve(layer.size());
    if (keys.empty()) {
        for (std::size_t h = 0; h < layer.size(); ++h) {
            out.push_back(tape.leaf(Eigen::MatrixXd::Zero(cfg.head_dim(), 1), false));
        }
        return out;
    }
    const std::vector<DirectKey> sorted = sorted_direct(keys);
    for (std::size_t h = 0; h < layer.size(); ++h) {
        out.push_back(
            direct_head_attention(tape, layer[h], cfg, query_input, t, sorted, hooks).s);
    }
    return out;
}

std::vector<ad::Var> layer_forward(ad::Tape& tape, const LayerVars& layer,
                                   const EncoderConfig& cfg, const std::vector<ad::Var>& rows,
                                   const std::vector<QuerySpec>& queries,
                                   const ForwardHooks& hooks,
                                   std::vector<std::uint8_t>* empty_flags) {
    std::vector<std::vector<ad::Var>> value_cache(
        layer.size(), std::vector<ad::Var>(rows.size()));
    std::vector<ad::Var> outputs;
    outputs.reserve(queries.size());
    if (empty_flags) empty_flags->assign(queries.size(), 0);

    ad::Var unit;
    if (hooks.force_unit_intensity) {
        unit = tape.leaf(Eigen::MatrixXd::Constant(1, 1, 1.0), /*requires_grad=*/false);
    }

    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        const QuerySpec& query = queries[qi];
        if (query.keys.empty()) {
            if (empty_flags) (*empty_flags)[qi] = 1;
            outputs.push_back(tape.leaf(Eigen::MatrixXd::Zero(cfg.dim, 1), false));
            continue;
        }
        const std::vector<KeyRef> keys = sorted_keys(query);
        const double dt = (query.t - query.tbar) / cfg.time_scale;
        ad::Var row_out;
        for (std::size_t h = 0; h < layer.size(); ++h) {
            HeadPass hp = head_attention(tape, layer[h], cfg, rows, query, keys, hooks,
                                         &value_cache[h]);
            // One intensity per (query, cluster), shared across that
            // query's neighbors in the cluster.
            std::map<int, ad::Var> lambda_by_cluster;
            std::vector<ad::Var> lambda_per_key;
            lambda_per_key.reserve(keys.size());
            for (const KeyRef& k : keys) {
                auto it = lambda_by_cluster.find(k.cluster);
                if (it == lambda_by_cluster.end()) {
                    ad::Var lam;
                    if (hooks.force_unit_intensity) {
                        lam = unit;
                    } else {
                        lam = conditional_intensity(tape,
                                                    layer[h].intensity[static_cast<std::size_t>(
                                                        k.cluster)],
                                                    hp.s, dt, cfg.leaky_slope);
                    }
                    it = lambda_by_cluster.emplace(k.cluster, lam).first;
                }
                lambda_per_key.push_back(it->second);
            }
            ad::Var modulated = tape.mul(hp.softmax, tape.stack(lambda_per_key));
            ad::Var head_out = tape.combine(modulated, hp.vals);
            row_out = (h == 0) ? head_out : tape.concat_rows(row_out, head_out);
        }
        outputs.push_back(row_out);
    }
    return outputs;
}

}  // namespace ctdg
