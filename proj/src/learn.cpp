#include "ctdg/learn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include "ctdg/errors.hpp"
#include "ctdg/io.hpp"
#include "ctdg/rng.hpp"

namespace ctdg {

TaskKind parse_task(const std::string& s) {
    if (s == "link") return TaskKind::LinkPrediction;
    if (s == "node") return TaskKind::NodeClassification;
    if (s == "traffic") return TaskKind::TrafficForecast;
    throw ValidationError("unknown task '" + s + "' (expected link, node or traffic)");
}

std::string task_name(TaskKind k) {
    switch (k) {
        case TaskKind::LinkPrediction: return "link";
        case TaskKind::NodeClassification: return "node";
        case TaskKind::TrafficForecast: return "traffic";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ValidationError("train.lr must be positive");
    if (decay_every < 1) throw ValidationError("train.decay_every must be >= 1");
    if (decay_rate <= 0.0 || decay_rate > 1.0) throw ValidationError("train.decay_rate in (0,1]");
    if (epochs < 0) throw ValidationError("train.epochs must be >= 0");
    if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
    if (mask_ratio < 0.0 || mask_ratio >= 1.0) throw ValidationError("train.mask_ratio in [0,1)");
    if (gamma < 0.0) throw ValidationError("train.gamma must be >= 0");
    if (mc_samples < 1) throw ValidationError("train.mc_samples must be >= 1");
    if (patience < 1) throw ValidationError("train.patience must be >= 1");
}

double TrainConfig::lr_at(int epoch) const {
    const int steps = epoch / decay_every;
    return lr * std::pow(decay_rate, steps);
}

std::string epoch_log_csv(const std::vector<EpochRecord>& log) {
    std::string out = "epoch,lr,train_loss,val_metric\n";
    char buf[160];
    for (const EpochRecord& r : log) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", r.epoch, r.lr, r.train_loss,
                      r.val_metric);
        out += buf;
    }
    return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    io::TensorFile tf;
    for (int id = 0; id < ckpt.params.count(); ++id) {
        tf.tensors.emplace_back(ckpt.params.name(id), ckpt.params.value(id));
    }
    tf.meta = ckpt.meta;
    tf.meta["task"] = task_name(ckpt.kind);
    tf.meta["enc.layers"] = std::to_string(ckpt.encoder.layers);
    tf.meta["enc.heads"] = std::to_string(ckpt.encoder.heads);
    tf.meta["enc.dim"] = std::to_string(ckpt.encoder.dim);
    tf.meta["enc.input_dim"] = std::to_string(ckpt.encoder.input_dim);
    tf.meta["enc.clusters"] = std::to_string(ckpt.encoder.clusters);
    tf.meta["enc.variant"] = variant_name(ckpt.encoder.variant);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", ckpt.encoder.time_scale);
    tf.meta["enc.time_scale"] = buf;
    tf.meta["enc.neighbor_cap"] = std::to_string(ckpt.encoder.neighbor_cap);
    io::save_tensors(tf, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    io::TensorFile tf = io::load_tensors(path);
    Checkpoint ckpt;
    for (auto& [name, t] : tf.tensors) ckpt.params.add(name, std::move(t));
    ckpt.meta = tf.meta;
    ckpt.kind = parse_task(tf.meta.at("task"));
    ckpt.encoder.layers = std::stoi(tf.meta.at("enc.layers"));
    ckpt.encoder.heads = std::stoi(tf.meta.at("enc.heads"));
    ckpt.encoder.dim = std::stoi(tf.meta.at("enc.dim"));
    ckpt.encoder.input_dim = std::stoi(tf.meta.at("enc.input_dim"));
    ckpt.encoder.clusters = std::stoi(tf.meta.at("enc.clusters"));
    ckpt.encoder.variant = parse_variant(tf.meta.at("enc.variant"));
    ckpt.encoder.time_scale = std::stod(tf.meta.at("enc.time_scale"));
    if (tf.meta.count("enc.neighbor_cap")) {
        ckpt.encoder.neighbor_cap = std::stoi(tf.meta.at("enc.neighbor_cap"));
    }
    return ckpt;
}

void AdamOptimizer::step(ParamStore& store, const std::vector<Eigen::MatrixXd>& grads,
                         double lr) {
    if (m_.empty()) {
        m_.resize(grads.size());
        v_.resize(grads.size());
        for (std::size_t i = 0; i < grads.size(); ++i) {
            m_[i] = Eigen::MatrixXd::Zero(grads[i].rows(), grads[i].cols());
            v_[i] = Eigen::MatrixXd::Zero(grads[i].rows(), grads[i].cols());
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
        const Eigen::MatrixXd mhat = m_[i] / bc1;
        const Eigen::MatrixXd vhat = v_[i] / bc2;
        store.value(static_cast<int>(i)) -=
            lr * mhat.cwiseQuotient(vhat.cwiseSqrt().array().matrix() +
                                    Eigen::MatrixXd::Constant(vhat.rows(), vhat.cols(), eps_));
    }
}

ad::Var total_objective(ad::Tape& tape, ad::Var task_loss, const std::vector<ad::Var>& tpple_terms,
                        double gamma) {
    if (tpple_terms.empty() || gamma == 0.0) return task_loss;
    ad::Var acc = tpple_terms[0];
    for (std::size_t i = 1; i < tpple_terms.size(); ++i) acc = tape.add(acc, tpple_terms[i]);
    acc = tape.scale(acc, 1.0 / static_cast<double>(tpple_terms.size()));
    return tape.sub(task_loss, tape.scale(acc, gamma));
}

ad::Var softmax_cross_entropy(ad::Tape& tape, ad::Var logits, int target) {
    return tape.sub(tape.logsumexp(logits), tape.at(logits, target));
}

// ------------------------------------------------------------------ train ----

TrainResult train(ParamStore& store, TaskModel& model, const EncoderConfig& enc,
                  const TrainConfig& tc) {
    tc.validate();
    AdamOptimizer adam(tc.beta1, tc.beta2, tc.eps);
    TrainResult result;

    auto snapshot = [&]() {
        Checkpoint c;
        c.kind = model.kind();
        c.encoder = enc;
        c.params = store;
        c.meta = model.meta();
        return c;
    };
    auto better = [&](double a, double b) {
        return model.higher_is_better() ? a > b : a < b;
    };

    double best_val = model.validation_metric();
    result.best = snapshot();
    result.best_epoch = 0;
    result.log.push_back(
        EpochRecord{0, tc.lr_at(0), std::numeric_limits<double>::quiet_NaN(), best_val});

    std::vector<int> order(static_cast<std::size_t>(model.train_example_count()));
    std::iota(order.begin(), order.end(), 0);
    int since_best = 0;
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(derive_seed(tc.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        const double lr = tc.lr_at(epoch);
        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(tc.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
            std::vector<int> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
            const std::uint64_t step_seed = derive_seed(
                tc.seed, "step", static_cast<std::uint64_t>(epoch) * 1000003ULL +
                                     static_cast<std::uint64_t>(batches));
            ad::Tape tape;
            const std::vector<ad::Var> bound = store.bind(tape, true);
            ad::Var obj = model.batch_objective(tape, bound, batch, step_seed, tc);
            const double value = obj.scalar();
            if (!std::isfinite(value)) {
                result.diverged = true;
                result.diagnostic = "non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batches) +
                                    "; returning the best finite checkpoint";
                return result;
            }
            tape.backward(obj);
            std::vector<Eigen::MatrixXd> grads;
            grads.reserve(bound.size());
            for (const ad::Var& v : bound) grads.push_back(tape.grad(v));
            adam.step(store, grads, lr);
            loss_sum += value;
            ++batches;
        }
        const double val = model.validation_metric();
        result.log.push_back(EpochRecord{epoch, lr, loss_sum / std::max(1, batches), val});
        if (better(val, best_val)) {
            best_val = val;
            result.best = snapshot();
            result.best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
            if (since_best >= tc.patience) break;
        }
    }
    return result;
}

// -------------------------------------------------------------- link task ----

LinkDataset make_link_dataset(std::shared_ptr<const DynamicGraph> graph, NodeId n_users,
                              std::uint64_t seed, double val_frac, double test_frac) {
    if (n_users <= 0 || n_users >= graph->num_nodes()) {
        throw ValidationError("link dataset needs users below items in the id space");
    }
    LinkDataset data;
    data.graph = std::move(graph);
    data.n_users = n_users;
    std::vector<NodeId> users;
    for (NodeId u = 0; u < n_users; ++u) {
        if (!data.graph->outgoing_event_indices(u).empty()) users.push_back(u);
    }
    std::mt19937_64 rng(derive_seed(seed, "user-split"));
    std::shuffle(users.begin(), users.end(), rng);
    const std::size_t n = users.size();
    const std::size_t n_val = static_cast<std::size_t>(std::floor(val_frac * static_cast<double>(n)));
    const std::size_t n_test = static_cast<std::size_t>(std::floor(test_frac * static_cast<double>(n)));
    const std::size_t n_train = n - n_val - n_test;
    data.train_users.assign(users.begin(), users.begin() + static_cast<std::ptrdiff_t>(n_train));
    data.val_users.assign(users.begin() + static_cast<std::ptrdiff_t>(n_train),
                          users.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    data.test_users.assign(users.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
                           users.end());
    std::sort(data.train_users.begin(), data.train_users.end());
    std::sort(data.val_users.begin(), data.val_users.end());
    std::sort(data.test_users.begin(), data.test_users.end());
    return data;
}

UserSequence LinkTask::sequence_for(NodeId user, bool holdout_last) const {
    const DynamicGraph& g = *data_->graph;
    UserSequence seq;
    seq.user = user;
    const auto& idx = g.outgoing_event_indices(user);
    std::vector<std::pair<NodeId, double>> raw;
    raw.reserve(idx.size());
    for (std::size_t i : idx) {
        const Event& e = g.events()[i];
        raw.emplace_back(e.v, e.t);
    }
    if (holdout_last) {
        if (raw.empty()) throw ValidationError("cannot hold out from an empty sequence");
        seq.holdout_item = raw.back().first;
        seq.holdout_time = raw.back().second;
        raw.pop_back();
    }
    const auto& assignment = g.cluster_assignment();
    std::map<NodeId, double> latest;
    for (const auto& [item, t] : raw) {
        seq.events.push_back(TppEvent{assignment[static_cast<std::size_t>(item)], t});
        auto [it, inserted] = latest.try_emplace(item, t);
        if (!inserted && t > it->second) it->second = t;
    }
    seq.positions.reserve(latest.size());
    for (const auto& [item, t] : latest) {
        seq.positions.push_back(
            SeqPosition{item, t, assignment[static_cast<std::size_t>(item)]});
    }
    std::sort(seq.positions.begin(), seq.positions.end(),
              [](const SeqPosition& a, const SeqPosition& b) {
                  if (a.t != b.t) return a.t < b.t;
                  return a.item < b.item;
              });
    if (enc_.neighbor_cap > 0 &&
        seq.positions.size() > static_cast<std::size_t>(enc_.neighbor_cap)) {
        seq.positions.erase(seq.positions.begin(),
                            seq.positions.end() - enc_.neighbor_cap);
    }
    return seq;
}

LinkTask::LinkTask(const LinkDataset& data, const ClusterModel& clusters, ParamStore& store,
                   EncoderConfig enc, std::uint64_t seed)
    : data_(&data), store_(&store), enc_(enc) {
    const DynamicGraph& g = *data.graph;
    n_items_ = g.num_nodes() - data.n_users;
    if (g.features().rows() != g.num_nodes()) {
        throw ValidationError("link task needs a feature matrix covering all nodes");
    }
    h0_ = encode_input(g.features(), clusters.one_hot());
    enc_.input_dim = static_cast<int>(h0_.cols());
    enc_.clusters = clusters.k;
    enc_.validate();
    init_encoder_params(store, enc_, seed);
    std::mt19937_64 rng(derive_seed(seed, "link-head"));
    auto xavier = [&rng](Eigen::Index r, Eigen::Index c) {
        const double b = std::sqrt(6.0 / static_cast<double>(r + c));
        std::uniform_real_distribution<double> dist(-b, b);
        Eigen::MatrixXd m(r, c);
        for (Eigen::Index i = 0; i < r; ++i) {
            for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
        }
        return m;
    };
    store.add("cam.W_q", xavier(enc_.input_dim, 1));
    store.add("cam.token", xavier(enc_.input_dim, 1));
    store.add("head.W_O", xavier(n_items_, enc_.dim));
    store.add("head.b_O", Eigen::MatrixXd::Zero(n_items_, 1));

    for (NodeId u : data.train_users) train_seqs_.push_back(sequence_for(u, false));
    for (NodeId u : data.val_users) {
        if (data.graph->outgoing_event_indices(u).size() >= 2) {
            val_seqs_.push_back(sequence_for(u, true));
        }
    }
    for (NodeId u : data.test_users) {
        if (data.graph->outgoing_event_indices(u).size() >= 2) {
            test_seqs_.push_back(sequence_for(u, true));
        }
    }
}

int LinkTask::train_example_count() const { return static_cast<int>(train_seqs_.size()); }

std::map<std::string, std::string> LinkTask::meta() const {
    std::map<std::string, std::string> m;
    m["link.n_users"] = std::to_string(data_->n_users);
    m["link.n_items"] = std::to_string(n_items_);
    return m;
}

namespace {

// Shared plumbing for the sequence forward: positions as rows, every
// position attends over the whole (surviving) sequence.
std::vector<QuerySpec> sequence_queries(const UserSequence& seq) {
    std::vector<QuerySpec> queries(seq.positions.size());
    std::vector<KeyRef> all_keys;
    all_keys.reserve(seq.positions.size());
    for (std::size_t i = 0; i < seq.positions.size(); ++i) {
        const SeqPosition& p = seq.positions[i];
        all_keys.push_back(KeyRef{static_cast<int>(i), p.item, p.t, p.cluster});
    }
    for (std::size_t j = 0; j < seq.positions.size(); ++j) {
        QuerySpec& q = queries[j];
        q.row = static_cast<int>(j);
        q.t = seq.positions[j].t;
        q.tbar = (j > 0) ? seq.positions[j - 1].t : seq.positions[j].t;
        q.keys = all_keys;
    }
    return queries;
}

struct TppleContext {
    std::vector<ad::Var> s_heads;
    bool ready = false;
};

}  // namespace

// Causal intensity path for one user: within interval (t_{i-1}, t_i] the
// endogenous state comes from first-layer attention over the collapsed
// prefix of the first i-1 events; the per-type intensity is the head average.
struct LinkForward {
    static VarIntensityPath tpple_path(ad::Tape& tape, const LinkTask& task,
                                       const std::vector<LayerVars>& layers,
                                       const UserSequence& seq, int event_cap) {
        const DynamicGraph& g = *task.data_->graph;
        const auto& assignment = g.cluster_assignment();

        // Raw (item, time) pairs aligned with seq.events, capped to the most
        // recent window.
        auto raw = std::make_shared<std::vector<std::pair<NodeId, double>>>();
        for (std::size_t i : g.outgoing_event_indices(seq.user)) {
            const Event& e = g.events()[i];
            if (seq.holdout_item >= 0 && e.t >= seq.holdout_time) break;
            raw->emplace_back(e.v, e.t);
        }
        if (raw->size() > seq.events.size()) raw->resize(seq.events.size());
        VarIntensityPath path;
        path.events = seq.events;
        for (TppEvent& e : path.events) e.t /= task.enc_.time_scale;
        for (auto& [item, te] : *raw) te /= task.enc_.time_scale;
        if (event_cap > 0 && static_cast<int>(path.events.size()) > event_cap) {
            const std::size_t drop = path.events.size() - static_cast<std::size_t>(event_cap);
            path.events.erase(path.events.begin(),
                              path.events.begin() + static_cast<std::ptrdiff_t>(drop));
            raw->erase(raw->begin(), raw->begin() + static_cast<std::ptrdiff_t>(drop));
        }
        path.t0 = path.events.empty() ? 0.0 : path.events.front().t;

        auto grid = std::make_shared<std::vector<double>>();
        grid->push_back(path.t0);
        for (const TppEvent& e : path.events) grid->push_back(e.t);
        auto contexts = std::make_shared<std::vector<TppleContext>>(grid->size());
        auto tape_ptr = &tape;
        auto task_ptr = &task;
        auto layers_ptr = &layers;
        auto assign_ptr = &assignment;
        const EncoderConfig cfg = task.enc_;

        path.evaluator = [tape_ptr, task_ptr, layers_ptr, assign_ptr, contexts, grid, raw,
                          cfg](double t) {
            ad::Tape& tp = *tape_ptr;
            const std::vector<double>& gr = *grid;
            // Context c: the first c events have occurred; covers (gr[c], gr[c+1]].
            std::size_t c;
            {
                auto it = std::lower_bound(gr.begin(), gr.end(), t);
                if (it == gr.begin()) {
                    c = 0;
                } else {
                    c = static_cast<std::size_t>(it - gr.begin()) - 1;
                    if (it == gr.end()) c = gr.size() - 1;
                }
            }
            TppleContext& ctx = (*contexts)[c];
            if (!ctx.ready) {
                std::map<NodeId, double> latest;
                for (std::size_t i = 0; i < c; ++i) {  // first c events
                    const auto& [item, te] = (*raw)[i];
                    auto [it2, ins] = latest.try_emplace(item, te);
                    if (!ins && te > it2->second) it2->second = te;
                }
                std::vector<DirectKey> keys;
                NodeId last_item = -1;
                double last_t = -std::numeric_limits<double>::infinity();
                for (const auto& [item, te] : latest) {
                    keys.push_back(DirectKey{
                        tp.leaf(task_ptr->h0_.row(item).transpose(), false), item, te,
                        (*assign_ptr)[static_cast<std::size_t>(item)]});
                    if (te > last_t) {
                        last_t = te;
                        last_item = item;
                    }
                }
                ad::Var query_input =
                    keys.empty() ? tp.leaf(Eigen::MatrixXd::Zero(cfg.input_dim, 1), false)
                                 : tp.leaf(task_ptr->h0_.row(last_item).transpose(), false);
                ctx.s_heads = endogenous_heads(tp, (*layers_ptr)[0], cfg, query_input, gr[c],
                                               keys, ForwardHooks{});
                ctx.ready = true;
            }
            const double dt = std::max(0.0, t - gr[c]);  // already in TPP clock units
            std::vector<ad::Var> lambdas;
            lambdas.reserve(static_cast<std::size_t>(cfg.clusters));
            for (int k = 0; k < cfg.clusters; ++k) {
                ad::Var acc;
                for (std::size_t h = 0; h < ctx.s_heads.size(); ++h) {
                    ad::Var lam = conditional_intensity(
                        tp, (*layers_ptr)[0][h].intensity[static_cast<std::size_t>(k)],
                        ctx.s_heads[h], dt, cfg.leaky_slope);
                    acc = (h == 0) ? lam : tp.add(acc, lam);
                }
                lambdas.push_back(tp.scale(acc, 1.0 / static_cast<double>(ctx.s_heads.size())));
            }
            return lambdas;
        };
        return path;
    }
};

ad::Var LinkTask::batch_objective(ad::Tape& tape, const std::vector<ad::Var>& bound,
                                  const std::vector<int>& batch, std::uint64_t step_seed,
                                  const TrainConfig& tc) {
    const std::vector<LayerVars> layers = bind_encoder(*store_, enc_, tape, bound);
    const ad::Var w_q = bound[static_cast<std::size_t>(store_->require("cam.W_q"))];
    const ad::Var token = bound[static_cast<std::size_t>(store_->require("cam.token"))];
    const ad::Var w_o = bound[static_cast<std::size_t>(store_->require("head.W_O"))];
    const ad::Var b_o = bound[static_cast<std::size_t>(store_->require("head.b_O"))];

    ad::Var task_sum;
    std::vector<ad::Var> tpple_terms;
    bool first = true;
    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const UserSequence& seq = train_seqs_[static_cast<std::size_t>(batch[bi])];
        if (seq.positions.empty()) continue;

        MaskPlanInput mpi;
        mpi.num_queries = static_cast<int>(seq.positions.size());
        mpi.labels = Eigen::MatrixXd::Ones(mpi.num_queries, 1);  // positive-unlabeled
        mpi.query_ids.reserve(seq.positions.size());
        std::vector<NodeId> key_ids;
        for (const SeqPosition& p : seq.positions) key_ids.push_back(p.item);
        for (const SeqPosition& p : seq.positions) mpi.query_ids.push_back(p.item);
        mpi.keys.assign(static_cast<std::size_t>(mpi.num_queries), key_ids);
        MaskPlan plan = plan_masks(mpi, tc.mask_ratio,
                                   derive_seed(step_seed, "mask", static_cast<std::uint64_t>(batch[bi])),
                                   tc.mask_mode);
        if (plan.masked_count() == 0) {
            // Always have a supervised position to reconstruct.
            plan.masked_query.back() = 1;
        }

        MaskedForwardProblem problem;
        problem.cfg = &enc_;
        problem.layers = &layers;
        problem.queries = sequence_queries(seq);
        problem.base_rows.reserve(seq.positions.size());
        for (const SeqPosition& p : seq.positions) {
            problem.base_rows.push_back(h0_.row(p.item).transpose());
        }
        problem.plan = &plan;
        problem.w_q = w_q;
        problem.token = token;
        problem.time_scale = enc_.time_scale;
        const std::vector<ad::Var> rows = masked_forward(tape, problem);

        ad::Var user_loss;
        int masked = 0;
        for (std::size_t j = 0; j < seq.positions.size(); ++j) {
            if (!plan.is_masked(static_cast<int>(j))) continue;
            const int target = static_cast<int>(seq.positions[j].item - data_->n_users);
            ad::Var logits = tape.add(tape.matmul(w_o, rows[j]), b_o);
            ad::Var ce = softmax_cross_entropy(tape, logits, target);
            user_loss = (masked == 0) ? ce : tape.add(user_loss, ce);
            ++masked;
        }
        if (masked == 0) continue;
        user_loss = tape.scale(user_loss, 1.0 / static_cast<double>(masked));
        task_sum = first ? user_loss : tape.add(task_sum, user_loss);
        first = false;

        if (tc.gamma > 0.0 && !seq.events.empty()) {
            VarIntensityPath path =
                LinkForward::tpple_path(tape, *this, layers, seq, tc.tpple_event_cap);
            IntegratorConfig ic;
            ic.kind = tc.integrator;
            ic.mc_samples = tc.mc_samples;
            ic.seed = derive_seed(step_seed, "mc", static_cast<std::uint64_t>(batch[bi]));
            tpple_terms.push_back(tpp_log_likelihood_var(tape, path, ic));
        }
    }
    if (first) {
        return tape.leaf(Eigen::MatrixXd::Zero(1, 1), false);
    }
    ad::Var task_mean = tape.scale(task_sum, 1.0 / static_cast<double>(batch.size()));
    return total_objective(tape, task_mean, tpple_terms, tc.gamma);
}

Eigen::VectorXd LinkTask::scores_for(const UserSequence& seq, double t) const {
    ad::Tape tape;
    const std::vector<ad::Var> bound = store_->bind(tape, false);
    const std::vector<LayerVars> layers = bind_encoder(*store_, enc_, tape, bound);
    const ad::Var w_q = bound[static_cast<std::size_t>(store_->require("cam.W_q"))];
    const ad::Var w_o = bound[static_cast<std::size_t>(store_->require("head.W_O"))];
    const ad::Var b_o = bound[static_cast<std::size_t>(store_->require("head.b_O"))];

    // Sequence rows plus the appended label-embedding query q(1) at time t.
    std::vector<ad::Var> rows;
    rows.reserve(seq.positions.size() + 1);
    for (const SeqPosition& p : seq.positions) {
        rows.push_back(tape.leaf(h0_.row(p.item).transpose(), false));
    }
    rows.push_back(tape.matmul(w_q, tape.leaf(Eigen::MatrixXd::Ones(1, 1), false)));

    std::vector<QuerySpec> queries = sequence_queries(seq);
    QuerySpec probe;
    probe.row = static_cast<int>(seq.positions.size());
    probe.t = t;
    probe.tbar = seq.positions.empty() ? t : seq.positions.back().t;
    for (std::size_t i = 0; i < seq.positions.size(); ++i) {
        const SeqPosition& p = seq.positions[i];
        probe.keys.push_back(KeyRef{static_cast<int>(i), p.item, p.t, p.cluster});
    }
    queries.push_back(probe);

    ForwardHooks hooks;
    hooks.time_encoding = make_te_hook(enc_.time_scale);
    std::vector<ad::Var> cur = rows;
    for (int l = 0; l < enc_.layers; ++l) {
        cur = layer_forward(tape, layers[static_cast<std::size_t>(l)], enc_, cur, queries, hooks,
                            nullptr);
    }
    ad::Var logits = tape.add(tape.matmul(w_o, cur.back()), b_o);
    return logits.val().col(0);
}

Eigen::VectorXd LinkTask::predict(const UserSequence& seq, double t) const {
    const Eigen::VectorXd logits = scores_for(seq, t);
    const double m = logits.maxCoeff();
    Eigen::VectorXd p = (logits.array() - m).exp();
    return p / p.sum();
}

double LinkTask::validation_metric() {
    if (val_seqs_.empty()) return 0.0;
    std::vector<int> ranks;
    ranks.reserve(val_seqs_.size());
    for (const UserSequence& seq : val_seqs_) {
        const Eigen::VectorXd scores = scores_for(seq, seq.holdout_time);
        ranks.push_back(rank_of(scores, static_cast<int>(seq.holdout_item - data_->n_users)));
    }
    return hit_rate_at(ranks, 10);
}

MetricReport LinkTask::test_metrics(const std::vector<int>& ks) const {
    std::vector<Eigen::VectorXd> scores;
    std::vector<int> truth;
    for (const UserSequence& seq : test_seqs_) {
        scores.push_back(scores_for(seq, seq.holdout_time));
        truth.push_back(static_cast<int>(seq.holdout_item - data_->n_users));
    }
    return evaluate_link(scores, truth, ks);
}

// -------------------------------------------------------------- node task ----

NodeDataset make_node_dataset(std::shared_ptr<const DynamicGraph> graph, std::vector<int> labels,
                              std::vector<double> label_times, int classes, double train_frac,
                              double val_frac) {
    if (labels.size() != static_cast<std::size_t>(graph->num_nodes()) ||
        label_times.size() != labels.size()) {
        throw ValidationError("labels and label times must cover every node");
    }
    NodeDataset data;
    data.graph = std::move(graph);
    data.labels = std::move(labels);
    data.label_times = std::move(label_times);
    data.classes = classes;
    std::vector<NodeId> order(data.labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](NodeId a, NodeId b) {
        return data.label_times[static_cast<std::size_t>(a)] <
               data.label_times[static_cast<std::size_t>(b)];
    });
    const std::size_t n = order.size();
    const auto n_train = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::floor(val_frac * static_cast<double>(n)));
    data.train_nodes.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    data.val_nodes.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                          order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    data.test_nodes.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
                           order.end());
    return data;
}

namespace {

// Per-query recursive expansion: a node's layer-l embedding at query time t
// attends over its neighborhood before the cutoff, with neighbor embeddings
// evaluated at the same query time (one hop deeper).
struct TreeForward {
    ad::Tape& tape;
    const DynamicGraph& graph;
    const Eigen::MatrixXd& h0;
    const std::vector<LayerVars>& layers;
    const EncoderConfig& cfg;
    ForwardHooks hooks;
    const MaskPlan* plan = nullptr;        // nullptr: inference
    ad::Var w_q, token;
    const std::vector<NodeId>* removed = nullptr;  // sorted; root's masked keys
    std::map<std::pair<NodeId, int>, ad::Var> memo;

    ad::Var row0(NodeId u) {
        const bool masked = plan && plan->is_masked(static_cast<int>(u));
        if (masked && plan->mode == MaskMode::SpecialToken) return token;
        if (masked) {
            Eigen::VectorXd y = plan->labels.row(static_cast<Eigen::Index>(u));
            return tape.matmul(w_q, tape.leaf(y, false));
        }
        return tape.leaf(h0.row(u).transpose(), false);
    }

    bool is_removed(NodeId w) const {
        return removed && std::binary_search(removed->begin(), removed->end(), w);
    }

    ad::Var embed(NodeId u, int layer, double t, double cutoff) {
        const auto key = std::make_pair(u, layer);
        auto it = memo.find(key);
        if (it != memo.end()) return it->second;
        ad::Var out;
        if (layer == 0) {
            out = row0(u);
        } else {
            History h = graph.neighborhood_at(u, cutoff, cfg.neighbor_cap);
            std::vector<DirectKey> keys;
            keys.reserve(h.entries.size());
            for (const HistoryEntry& e : h.entries) {
                if (is_removed(e.neighbor)) continue;
                DirectKey k;
                k.input = embed(e.neighbor, layer - 1, t, cutoff);
                k.id = e.neighbor;
                k.pair_time = e.t;
                k.cluster = e.cluster;
                keys.push_back(k);
            }
            if (keys.empty() && !h.entries.empty()) {
                // Same guard as plan_masks: keep the most recent neighbor.
                const HistoryEntry& e = h.entries.back();
                keys.push_back(DirectKey{embed(e.neighbor, layer - 1, t, cutoff), e.neighbor,
                                         e.t, e.cluster});
            }
            out = query_forward(tape, layers[static_cast<std::size_t>(layer - 1)], cfg,
                                embed(u, layer - 1, t, cutoff), t, std::max(h.tbar, graph.t0()),
                                keys, hooks, nullptr);
        }
        memo.emplace(key, out);
        return out;
    }

    ad::Var root_embed(NodeId u, double t, double cutoff) {
        memo.clear();
        if (plan && plan->mode == MaskMode::CaM &&
            static_cast<std::size_t>(u) < plan->masked_keys.size()) {
            removed = &plan->masked_keys[static_cast<std::size_t>(u)];
        } else {
            removed = nullptr;
        }
        return embed(u, cfg.layers, t, cutoff);
    }
};

// Intensity path over a node's incident events using first-layer attention
// over the causal neighborhood; intensities averaged across heads.
VarIntensityPath node_tpple_path(ad::Tape& tape, const DynamicGraph& graph,
                                 const Eigen::MatrixXd& h0, const std::vector<LayerVars>& layers,
                                 const EncoderConfig& cfg, NodeId u, double horizon,
                                 int event_cap) {
    VarIntensityPath path;
    auto events = graph.incident_events_before(u, horizon);
    if (event_cap > 0 && static_cast<int>(events.size()) > event_cap) {
        events.erase(events.begin(), events.end() - static_cast<std::ptrdiff_t>(event_cap));
    }
    // The TPP clock runs in time_scale units so the non-event integral stays
    // on the same footing as the per-event log terms.
    for (const auto& [t, cl] : events) path.events.push_back(TppEvent{cl, t / cfg.time_scale});
    path.t0 = path.events.empty() ? graph.t0() / cfg.time_scale : path.events.front().t;

    auto raw_times = std::make_shared<std::vector<double>>();
    for (const auto& [t, cl] : events) raw_times->push_back(t);

    auto grid = std::make_shared<std::vector<double>>();
    grid->push_back(path.t0);
    for (const TppEvent& e : path.events) grid->push_back(e.t);
    auto contexts = std::make_shared<std::vector<TppleContext>>(grid->size());
    auto tape_ptr = &tape;
    auto graph_ptr = &graph;
    auto h0_ptr = &h0;
    auto layers_ptr = &layers;
    const EncoderConfig cfg_copy = cfg;

    path.evaluator = [tape_ptr, graph_ptr, h0_ptr, layers_ptr, contexts, grid, raw_times,
                      cfg_copy, u](double t) {
        ad::Tape& tp = *tape_ptr;
        const std::vector<double>& gr = *grid;
        std::size_t c = 0;
        {
            auto it = std::lower_bound(gr.begin(), gr.end(), t);
            if (it == gr.begin()) {
                c = 0;
            } else if (it == gr.end()) {
                c = gr.size() - 1;
            } else {
                c = static_cast<std::size_t>(it - gr.begin()) - 1;
            }
        }
        TppleContext& ctx = (*contexts)[c];
        if (!ctx.ready) {
            // History strictly before the interval endpoint gr[c+1] equals
            // events at or before gr[c]; the probe works on the raw clock.
            const std::vector<double>& rt = *raw_times;
            const double probe = (c < rt.size()) ? rt[c]
                                                 : std::nextafter(rt.back(), rt.back() + 1.0);
            History h = graph_ptr->neighborhood_at(u, probe);
            std::vector<DirectKey> keys;
            keys.reserve(h.entries.size());
            for (const HistoryEntry& e : h.entries) {
                keys.push_back(DirectKey{tp.leaf(h0_ptr->row(e.neighbor).transpose(), false),
                                         e.neighbor, e.t, e.cluster});
            }
            ad::Var query_input = tp.leaf(h0_ptr->row(u).transpose(), false);
            ctx.s_heads = endogenous_heads(tp, (*layers_ptr)[0], cfg_copy, query_input, gr[c],
                                           keys, ForwardHooks{});
            ctx.ready = true;
        }
        const double dt = std::max(0.0, t - gr[c]);  // TPP clock units
        std::vector<ad::Var> lambdas;
        for (int k = 0; k < cfg_copy.clusters; ++k) {
            ad::Var acc;
            for (std::size_t h = 0; h < ctx.s_heads.size(); ++h) {
                ad::Var lam = conditional_intensity(
                    tp, (*layers_ptr)[0][h].intensity[static_cast<std::size_t>(k)],
                    ctx.s_heads[h], dt, cfg_copy.leaky_slope);
                acc = (h == 0) ? lam : tp.add(acc, lam);
            }
            lambdas.push_back(tp.scale(acc, 1.0 / static_cast<double>(ctx.s_heads.size())));
        }
        return lambdas;
    };
    return path;
}

}  // namespace

NodeTask::NodeTask(const NodeDataset& data, const ClusterModel& clusters, ParamStore& store,
                   EncoderConfig enc, std::uint64_t seed)
    : data_(&data), store_(&store), enc_(enc) {
    const DynamicGraph& g = *data.graph;
    if (g.features().rows() != g.num_nodes()) {
        throw ValidationError("node task needs a feature matrix covering all nodes");
    }
    h0_ = encode_input(g.features(), clusters.one_hot());
    enc_.input_dim = static_cast<int>(h0_.cols());
    enc_.clusters = clusters.k;
    enc_.validate();
    init_encoder_params(store, enc_, seed);
    std::mt19937_64 rng(derive_seed(seed, "node-head"));
    auto xavier = [&rng](Eigen::Index r, Eigen::Index c) {
        const double b = std::sqrt(6.0 / static_cast<double>(r + c));
        std::uniform_real_distribution<double> dist(-b, b);
        Eigen::MatrixXd m(r, c);
        for (Eigen::Index i = 0; i < r; ++i) {
            for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
        }
        return m;
    };
    store.add("cam.W_q", xavier(enc_.input_dim, data.classes));
    store.add("cam.token", xavier(enc_.input_dim, 1));
    store.add("head.W_O", xavier(data.classes, enc_.dim));
    store.add("head.b_O", Eigen::MatrixXd::Zero(data.classes, 1));

    std::vector<long> counts(static_cast<std::size_t>(data.classes), 0);
    for (int label : data.labels) ++counts[static_cast<std::size_t>(label)];
    minority_class_ = static_cast<int>(
        std::min_element(counts.begin(), counts.end()) - counts.begin());
}

int NodeTask::train_example_count() const { return static_cast<int>(data_->train_nodes.size()); }

std::map<std::string, std::string> NodeTask::meta() const {
    std::map<std::string, std::string> m;
    m["node.classes"] = std::to_string(data_->classes);
    m["node.minority_class"] = std::to_string(minority_class_);
    return m;
}

ad::Var NodeTask::batch_objective(ad::Tape& tape, const std::vector<ad::Var>& bound,
                                  const std::vector<int>& batch, std::uint64_t step_seed,
                                  const TrainConfig& tc) {
    const std::vector<LayerVars> layers = bind_encoder(*store_, enc_, tape, bound);
    const ad::Var w_q = bound[static_cast<std::size_t>(store_->require("cam.W_q"))];
    const ad::Var token = bound[static_cast<std::size_t>(store_->require("cam.token"))];
    const ad::Var w_o = bound[static_cast<std::size_t>(store_->require("head.W_O"))];
    const ad::Var b_o = bound[static_cast<std::size_t>(store_->require("head.b_O"))];
    const DynamicGraph& g = *data_->graph;

    // One plan over all nodes per step; each node's label row is one-hot.
    Eigen::MatrixXd labels = Eigen::MatrixXd::Zero(g.num_nodes(), data_->classes);
    for (NodeId u = 0; u < g.num_nodes(); ++u) {
        labels(u, data_->labels[static_cast<std::size_t>(u)]) = 1.0;
    }
    MaskPlan plan =
        plan_masks(g, tc.mask_ratio, labels, derive_seed(step_seed, "mask"), tc.mask_mode);

    TreeForward fwd{tape, g, h0_, layers, enc_, ForwardHooks{}, &plan, w_q, token, nullptr, {}};
    fwd.hooks.time_encoding = make_te_hook(enc_.time_scale);

    ad::Var loss_sum;
    std::vector<ad::Var> tpple_terms;
    int n = 0;
    for (int idx : batch) {
        const NodeId u = data_->train_nodes[static_cast<std::size_t>(idx)];
        const double t = data_->label_times[static_cast<std::size_t>(u)];
        ad::Var emb = fwd.root_embed(u, t, t);
        ad::Var logits = tape.add(tape.matmul(w_o, emb), b_o);
        ad::Var ce = softmax_cross_entropy(tape, logits, data_->labels[static_cast<std::size_t>(u)]);
        loss_sum = (n == 0) ? ce : tape.add(loss_sum, ce);
        ++n;
        if (tc.gamma > 0.0) {
            VarIntensityPath path =
                node_tpple_path(tape, g, h0_, layers, enc_, u, t, tc.tpple_event_cap);
            if (!path.events.empty()) {
                IntegratorConfig ic;
                ic.kind = tc.integrator;
                ic.mc_samples = tc.mc_samples;
                ic.seed = derive_seed(step_seed, "mc", static_cast<std::uint64_t>(u));
                tpple_terms.push_back(tpp_log_likelihood_var(tape, path, ic));
            }
        }
    }
    if (n == 0) return tape.leaf(Eigen::MatrixXd::Zero(1, 1), false);
    ad::Var task_mean = tape.scale(loss_sum, 1.0 / static_cast<double>(n));
    return total_objective(tape, task_mean, tpple_terms, tc.gamma);
}

Eigen::VectorXd NodeTask::predict(NodeId u, double t) const {
    if (u < 0 || u >= data_->graph->num_nodes()) {
        throw ValidationError("predict: unknown node id " + std::to_string(u));
    }
    ad::Tape tape;
    const std::vector<ad::Var> bound = store_->bind(tape, false);
    const std::vector<LayerVars> layers = bind_encoder(*store_, enc_, tape, bound);
    const ad::Var w_o = bound[static_cast<std::size_t>(store_->require("head.W_O"))];
    const ad::Var b_o = bound[static_cast<std::size_t>(store_->require("head.b_O"))];
    TreeForward fwd{tape, *data_->graph, h0_, layers, enc_, ForwardHooks{}, nullptr, {}, {}, nullptr, {}};
    fwd.hooks.time_encoding = make_te_hook(enc_.time_scale);
    ad::Var emb = fwd.root_embed(u, t, t);
    Eigen::VectorXd logits = (tape.add(tape.matmul(w_o, emb), b_o)).val().col(0);
    const double m = logits.maxCoeff();
    Eigen::VectorXd p = (logits.array() - m).exp();
    return p / p.sum();
}

double NodeTask::validation_metric() {
    if (data_->val_nodes.empty()) return 0.0;
    std::vector<int> pred, truth;
    for (NodeId u : data_->val_nodes) {
        Eigen::VectorXd p = predict(u, data_->label_times[static_cast<std::size_t>(u)]);
        Eigen::Index best = 0;
        p.maxCoeff(&best);
        pred.push_back(static_cast<int>(best));
        truth.push_back(data_->labels[static_cast<std::size_t>(u)]);
    }
    return evaluate_node(pred, truth, data_->classes, minority_class_).get("accuracy");
}

MetricReport NodeTask::test_metrics() const {
    std::vector<int> pred, truth;
    for (NodeId u : data_->test_nodes) {
        Eigen::VectorXd p = predict(u, data_->label_times[static_cast<std::size_t>(u)]);
        Eigen::Index best = 0;
        p.maxCoeff(&best);
        pred.push_back(static_cast<int>(best));
        truth.push_back(data_->labels[static_cast<std::size_t>(u)]);
    }
    return evaluate_node(pred, truth, data_->classes, minority_class_);
}

// ----------------------------------------------------------- traffic task ----

TrafficDataset make_traffic_dataset(const ReadingSeries& readings,
                                    const std::vector<std::pair<NodeId, NodeId>>& road_edges,
                                    const ClusterModel& clusters, int horizon_steps,
                                    std::vector<int> eval_horizons, double train_frac,
                                    double val_frac) {
    TrafficDataset data;
    data.readings = readings;
    data.horizon_steps = horizon_steps;
    data.eval_horizons = std::move(eval_horizons);
    const int T = static_cast<int>(readings.values.rows());
    const int n_train = static_cast<int>(std::floor(train_frac * T));
    const int n_val = static_cast<int>(std::floor(val_frac * T));
    if (T < 3 || n_train < 2) throw ValidationError("traffic series too short to split");
    data.cadence = readings.timestamps[1] - readings.timestamps[0];

    // Congestion statistics come from the train span only; event detection
    // runs over the full series so later splits see their own history.
    ReadingSeries train_span;
    train_span.timestamps.assign(readings.timestamps.begin(),
                                 readings.timestamps.begin() + n_train);
    train_span.values = readings.values.topRows(n_train);
    EventLog events = derive_congestion_events_with_stats(readings, train_span, road_edges);

    const int max_h = std::max(
        horizon_steps, *std::max_element(data.eval_horizons.begin(), data.eval_horizons.end()));
    for (int i = 0; i < T; ++i) {
        if (i + max_h >= T) continue;
        if (i + max_h < n_train) {
            data.train_idx.push_back(i);
        } else if (i >= n_train && i < n_train + n_val) {
            data.val_idx.push_back(i);
        } else if (i >= n_train + n_val) {
            data.test_idx.push_back(i);
        }
    }
    data.norm_mean = train_span.values.mean();
    const double var =
        (train_span.values.array() - data.norm_mean).square().mean();
    data.norm_std = std::sqrt(std::max(var, 1e-12));

    const NodeId n_nodes = readings.values.cols();
    Eigen::MatrixXd features = Eigen::MatrixXd::Zero(n_nodes, 1);  // per-sample rows replace this
    auto graph = std::make_shared<DynamicGraph>(n_nodes, road_edges, std::move(events), features,
                                                readings.timestamps.front());
    std::vector<int> assignment = clusters.assignment;
    data.graph = std::make_shared<DynamicGraph>(graph->with_clusters(assignment));
    return data;
}

TrafficTask::TrafficTask(const TrafficDataset& data, ParamStore& store, EncoderConfig enc,
                         std::uint64_t seed)
    : data_(&data), store_(&store), enc_(enc) {
    const int k = static_cast<int>(
        1 + *std::max_element(data.graph->cluster_assignment().begin(),
                              data.graph->cluster_assignment().end()));
    enc_.clusters = std::max(enc_.clusters, k);
    enc_.input_dim = 1 + enc_.clusters;
    enc_.validate();
    init_encoder_params(store, enc_, seed);
    std::mt19937_64 rng(derive_seed(seed, "traffic-head"));
    auto xavier = [&rng](Eigen::Index r, Eigen::Index c) {
        const double b = std::sqrt(6.0 / static_cast<double>(r + c));
        std::uniform_real_distribution<double> dist(-b, b);
        Eigen::MatrixXd m(r, c);
        for (Eigen::Index i = 0; i < r; ++i) {
            for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
        }
        return m;
    };
    store.add("cam.W_q", xavier(enc_.input_dim, 2));  // label is [reading, 1]
    store.add("cam.token", xavier(enc_.input_dim, 1));
    store.add("head.w_O", xavier(1, enc_.dim));
    store.add("head.b_O", Eigen::MatrixXd::Zero(1, 1));
}

int TrafficTask::train_example_count() const { return static_cast<int>(data_->train_idx.size()); }

std::map<std::string, std::string> TrafficTask::meta() const {
    char buf[64];
    std::map<std::string, std::string> m;
    std::snprintf(buf, sizeof(buf), "%.17g", data_->norm_mean);
    m["traffic.norm_mean"] = buf;
    std::snprintf(buf, sizeof(buf), "%.17g", data_->norm_std);
    m["traffic.norm_std"] = buf;
    m["traffic.horizon_steps"] = std::to_string(data_->horizon_steps);
    return m;
}

namespace {

Eigen::MatrixXd traffic_h0(const TrafficDataset& data, const EncoderConfig& enc, int tau) {
    const Eigen::Index n = data.readings.values.cols();
    Eigen::MatrixXd h0 = Eigen::MatrixXd::Zero(n, enc.input_dim);
    const auto& assignment = data.graph->cluster_assignment();
    for (Eigen::Index u = 0; u < n; ++u) {
        h0(u, 0) = (data.readings.values(tau, u) - data.norm_mean) / data.norm_std;
        h0(u, 1 + assignment[static_cast<std::size_t>(u)]) = 1.0;
    }
    return h0;
}

}  // namespace

ad::Var TrafficTask::batch_objective(ad::Tape& tape, const std::vector<ad::Var>& bound,
                                     const std::vector<int>& batch, std::uint64_t step_seed,
                                     const TrainConfig& tc) {
    const std::vector<LayerVars> layers = bind_encoder(*store_, enc_, tape, bound);
    const ad::Var w_q = bound[static_cast<std::size_t>(store_->require("cam.W_q"))];
    const ad::Var token = bound[static_cast<std::size_t>(store_->require("cam.token"))];
    const ad::Var w_o = bound[static_cast<std::size_t>(store_->require("head.w_O"))];
    const ad::Var b_o = bound[static_cast<std::size_t>(store_->require("head.b_O"))];
    const DynamicGraph& g = *data_->graph;
    const Eigen::Index n_nodes = data_->readings.values.cols();

    ad::Var loss_sum;
    std::vector<ad::Var> tpple_terms;
    int terms = 0;
    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const int tau = data_->train_idx[static_cast<std::size_t>(batch[bi])];
        const double now = data_->readings.timestamps[static_cast<std::size_t>(tau)];
        const double t = now + data_->horizon_steps * data_->cadence;
        const double cutoff = now + 0.5 * data_->cadence;
        const Eigen::MatrixXd h0 = traffic_h0(*data_, enc_, tau);

        Eigen::MatrixXd labels(n_nodes, 2);
        for (Eigen::Index u = 0; u < n_nodes; ++u) {
            labels(u, 0) = (data_->readings.values(tau + data_->horizon_steps, u) -
                            data_->norm_mean) / data_->norm_std;
            labels(u, 1) = 1.0;
        }
        MaskPlan plan = plan_masks(g, tc.mask_ratio, labels,
                                   derive_seed(step_seed, "mask", static_cast<std::uint64_t>(tau)),
                                   tc.mask_mode);

        TreeForward fwd{tape, g, h0, layers, enc_, ForwardHooks{}, &plan, w_q, token, nullptr, {}};
        fwd.hooks.time_encoding = make_te_hook(enc_.time_scale);
        for (Eigen::Index u = 0; u < n_nodes; ++u) {
            ad::Var emb = fwd.root_embed(u, t, cutoff);
            ad::Var pred = tape.add(tape.matmul(w_o, emb), b_o);
            ad::Var err = tape.sub(pred, tape.leaf(Eigen::MatrixXd::Constant(1, 1, labels(u, 0)),
                                                   false));
            ad::Var sq = tape.mul(err, err);
            loss_sum = (terms == 0) ? sq : tape.add(loss_sum, sq);
            ++terms;
            if (tc.gamma > 0.0) {
                VarIntensityPath path = node_tpple_path(tape, g, h0, layers, enc_, u, cutoff,
                                                        tc.tpple_event_cap);
                if (!path.events.empty()) {
                    IntegratorConfig ic;
                    ic.kind = tc.integrator;
                    ic.mc_samples = tc.mc_samples;
                    ic.seed = derive_seed(step_seed, "mc",
                                          static_cast<std::uint64_t>(tau) * 131ULL +
                                              static_cast<std::uint64_t>(u));
                    tpple_terms.push_back(tpp_log_likelihood_var(tape, path, ic));
                }
            }
        }
    }
    if (terms == 0) return tape.leaf(Eigen::MatrixXd::Zero(1, 1), false);
    ad::Var task_mean = tape.scale(loss_sum, 1.0 / static_cast<double>(terms));
    return total_objective(tape, task_mean, tpple_terms, tc.gamma);
}

Eigen::VectorXd TrafficTask::predict(int tau, int horizon_steps) const {
    ad::Tape tape;
    const std::vector<ad::Var> bound = store_->bind(tape, false);
    const std::vector<LayerVars> layers = bind_encoder(*store_, enc_, tape, bound);
    const ad::Var w_o = bound[static_cast<std::size_t>(store_->require("head.w_O"))];
    const ad::Var b_o = bound[static_cast<std::size_t>(store_->require("head.b_O"))];
    const double now = data_->readings.timestamps[static_cast<std::size_t>(tau)];
    const double t = now + horizon_steps * data_->cadence;
    const double cutoff = now + 0.5 * data_->cadence;
    const Eigen::MatrixXd h0 = traffic_h0(*data_, enc_, tau);
    TreeForward fwd{tape, *data_->graph, h0, layers, enc_, ForwardHooks{}, nullptr, {}, {}, nullptr, {}};
    fwd.hooks.time_encoding = make_te_hook(enc_.time_scale);
    const Eigen::Index n_nodes = data_->readings.values.cols();
    Eigen::VectorXd out(n_nodes);
    for (Eigen::Index u = 0; u < n_nodes; ++u) {
        ad::Var emb = fwd.root_embed(u, t, cutoff);
        const double pred = (tape.add(tape.matmul(w_o, emb), b_o)).scalar();
        out(u) = pred * data_->norm_std + data_->norm_mean;
    }
    return out;
}

double TrafficTask::validation_metric() {
    if (data_->val_idx.empty()) return 0.0;
    double sq = 0.0;
    long n = 0;
    const std::size_t stride = std::max<std::size_t>(1, data_->val_idx.size() / 24);
    for (std::size_t i = 0; i < data_->val_idx.size(); i += stride) {
        const int tau = data_->val_idx[i];
        const Eigen::VectorXd pred = predict(tau, data_->horizon_steps);
        for (Eigen::Index u = 0; u < pred.size(); ++u) {
            const double truth = data_->readings.values(tau + data_->horizon_steps, u);
            sq += (pred(u) - truth) * (pred(u) - truth);
            ++n;
        }
    }
    return std::sqrt(sq / static_cast<double>(n));
}

MetricReport TrafficTask::test_metrics() const {
    MetricReport report;
    const std::size_t stride = std::max<std::size_t>(1, data_->test_idx.size() / 48);
    for (int h : data_->eval_horizons) {
        std::vector<double> preds, truths;
        for (std::size_t i = 0; i < data_->test_idx.size(); i += stride) {
            const int tau = data_->test_idx[i];
            const Eigen::VectorXd pred = predict(tau, h);
            for (Eigen::Index u = 0; u < pred.size(); ++u) {
                preds.push_back(pred(u));
                truths.push_back(data_->readings.values(tau + h, u));
            }
        }
        Eigen::VectorXd p = Eigen::Map<Eigen::VectorXd>(preds.data(),
                                                        static_cast<Eigen::Index>(preds.size()));
        Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(truths.data(),
                                                        static_cast<Eigen::Index>(truths.size()));
        MetricReport r = evaluate_traffic(p, y);
        const std::string suffix = "_h" + std::to_string(h);
        for (const auto& [name, value] : r.values) report.set(name + suffix, value);
    }
    return report;
}

}  // namespace ctdg
