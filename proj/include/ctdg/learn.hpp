#ifndef CTDG_LEARN_HPP
#define CTDG_LEARN_HPP

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ctdg/ad.hpp"
#include "ctdg/cam.hpp"
#include "ctdg/cluster.hpp"
#include "ctdg/dyngraph.hpp"
#include "ctdg/encoder.hpp"
#include "ctdg/metrics.hpp"
#include "ctdg/params.hpp"
#include "ctdg/tpple.hpp"

namespace ctdg {

enum class TaskKind { LinkPrediction, NodeClassification, TrafficForecast };

TaskKind parse_task(const std::string& s);
std::string task_name(TaskKind k);

struct TrainConfig {
    double lr = 0.01;
    int decay_every = 10;      // epochs between x decay_rate steps
    double decay_rate = 0.9;
    int epochs = 30;
    int batch_size = 16;
    std::uint64_t seed = 42;
    double mask_ratio = 0.2;
    MaskMode mask_mode = MaskMode::CaM;
    double gamma = 0.1;        // TPPLE weight
    Integrator integrator = Integrator::Trapezoid;
    int mc_samples = 5;
    int patience = 10;         // epochs without validation improvement
    int tpple_event_cap = 16;  // most recent events per node entering R
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void validate() const;
    double lr_at(int epoch) const;  // epoch is 1-based
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_metric = 0.0;
};

std::string epoch_log_csv(const std::vector<EpochRecord>& log);

struct Checkpoint {
    TaskKind kind = TaskKind::LinkPrediction;
    EncoderConfig encoder;
    ParamStore params;
    std::map<std::string, std::string> meta;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Adaptive moment estimation with bias correction.
class AdamOptimizer {
  public:
    AdamOptimizer(double beta1, double beta2, double eps)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(ParamStore& store, const std::vector<Eigen::MatrixXd>& grads, double lr);

  private:
    std::vector<Eigen::MatrixXd> m_, v_;
    long t_ = 0;
    double beta1_, beta2_, eps_;
};

// E[task] - gamma * E[R]; tpple_terms may be empty.
ad::Var total_objective(ad::Tape& tape, ad::Var task_loss, const std::vector<ad::Var>& tpple_terms,
                        double gamma);

ad::Var softmax_cross_entropy(ad::Tape& tape, ad::Var logits, int target);

// ---------------------------------------------------------------- tasks ----

class TaskModel {
  public:
    virtual ~TaskModel() = default;
    virtual TaskKind kind() const = 0;
    virtual int train_example_count() const = 0;
    // Mean task loss and the per-node TPPLE terms for one batch, on one tape.
    virtual ad::Var batch_objective(ad::Tape& tape, const std::vector<ad::Var>& bound,
                                    const std::vector<int>& batch, std::uint64_t step_seed,
                                    const TrainConfig& tc) = 0;
    virtual double validation_metric() = 0;
    virtual bool higher_is_better() const = 0;
    virtual std::map<std::string, std::string> meta() const { return {}; }
};

struct TrainResult {
    Checkpoint best;
    std::vector<EpochRecord> log;
    int best_epoch = 0;
    bool diverged = false;
    std::string diagnostic;
};

TrainResult train(ParamStore& store, TaskModel& model, const EncoderConfig& enc,
                  const TrainConfig& tc);

// ------------------------------------------------------------- link task ----

struct SeqPosition {
    NodeId item = 0;
    double t = 0.0;
    int cluster = 0;
};

struct UserSequence {
    NodeId user = 0;
    std::vector<SeqPosition> positions;  // collapsed per item, ascending time
    std::vector<TppEvent> events;        // raw events, ascending
    NodeId holdout_item = -1;            // val/test users only
    double holdout_time = 0.0;
};

struct LinkDataset {
    std::shared_ptr<const DynamicGraph> graph;  // users [0, n_users), items above
    NodeId n_users = 0;
    std::vector<NodeId> train_users, val_users, test_users;
};

// 8:1:1 user split by default; val/test sequences hold out the last event.
LinkDataset make_link_dataset(std::shared_ptr<const DynamicGraph> graph, NodeId n_users,
                              std::uint64_t seed, double val_frac = 0.1, double test_frac = 0.1);

class LinkTask : public TaskModel {
  public:
    LinkTask(const LinkDataset& data, const ClusterModel& clusters, ParamStore& store,
             EncoderConfig enc, std::uint64_t seed);

    TaskKind kind() const override { return TaskKind::LinkPrediction; }
    int train_example_count() const override;
    ad::Var batch_objective(ad::Tape& tape, const std::vector<ad::Var>& bound,
                            const std::vector<int>& batch, std::uint64_t step_seed,
                            const TrainConfig& tc) override;
    double validation_metric() override;  // HR@10 on validation users
    bool higher_is_better() const override { return true; }
    std::map<std::string, std::string> meta() const override;

    // Ranking scores (logits) for a held-out query at time t.
    Eigen::VectorXd scores_for(const UserSequence& seq, double t) const;
    // Softmax distribution over items; sums to one.
    Eigen::VectorXd predict(const UserSequence& seq, double t) const;

    UserSequence sequence_for(NodeId user, bool holdout_last) const;
    MetricReport test_metrics(const std::vector<int>& ks) const;
    NodeId item_count() const { return n_items_; }

    const ParamStore& store() const { return *store_; }

  private:
    friend struct LinkForward;
    const LinkDataset* data_;
    ParamStore* store_;
    EncoderConfig enc_;
    NodeId n_items_ = 0;
    Eigen::MatrixXd h0_;  // item input rows: [X_f || X_c]
    std::vector<UserSequence> train_seqs_, val_seqs_, test_seqs_;
};

// ------------------------------------------------------------- node task ----

struct NodeDataset {
    std::shared_ptr<const DynamicGraph> graph;
    std::vector<int> labels;        // per node, in [0, classes)
    std::vector<double> label_times;  // query time per node
    int classes = 2;
    std::vector<NodeId> train_nodes, val_nodes, test_nodes;  // split along time
};

NodeDataset make_node_dataset(std::shared_ptr<const DynamicGraph> graph, std::vector<int> labels,
                              std::vector<double> label_times, int classes,
                              double train_frac = 0.7, double val_frac = 0.1);

class NodeTask : public TaskModel {
  public:
    NodeTask(const NodeDataset& data, const ClusterModel& clusters, ParamStore& store,
             EncoderConfig enc, std::uint64_t seed);

    TaskKind kind() const override { return TaskKind::NodeClassification; }
    int train_example_count() const override;
    ad::Var batch_objective(ad::Tape& tape, const std::vector<ad::Var>& bound,
                            const std::vector<int>& batch, std::uint64_t step_seed,
                            const TrainConfig& tc) override;
    double validation_metric() override;  // accuracy on validation nodes
    bool higher_is_better() const override { return true; }
    std::map<std::string, std::string> meta() const override;

    Eigen::VectorXd predict(NodeId u, double t) const;  // class probabilities
    MetricReport test_metrics() const;

  private:
    friend struct NodeForward;
    const NodeDataset* data_;
    ParamStore* store_;
    EncoderConfig enc_;
    Eigen::MatrixXd h0_;
    int minority_class_ = 0;
};

// ---------------------------------------------------------- traffic task ----

struct TrafficDataset {
    std::shared_ptr<const DynamicGraph> graph;  // road graph + congestion events
    ReadingSeries readings;
    double cadence = 300.0;        // seconds between readings
    double norm_mean = 0.0, norm_std = 1.0;  // z-score stats from the train span
    int horizon_steps = 3;         // training horizon
    std::vector<int> eval_horizons = {3, 6, 9};
    std::vector<int> train_idx, val_idx, test_idx;  // sample time indices
};

// 70/10/20 chronological split; congestion statistics and normalization come
// from the train span only.
TrafficDataset make_traffic_dataset(const ReadingSeries& readings,
                                    const std::vector<std::pair<NodeId, NodeId>>& road_edges,
                                    const ClusterModel& clusters, int horizon_steps,
                                    std::vector<int> eval_horizons, double train_frac = 0.7,
                                    double val_frac = 0.1);

class TrafficTask : public TaskModel {
  public:
    TrafficTask(const TrafficDataset& data, ParamStore& store, EncoderConfig enc,
                std::uint64_t seed);

    TaskKind kind() const override { return TaskKind::TrafficForecast; }
    int train_example_count() const override;
    ad::Var batch_objective(ad::Tape& tape, const std::vector<ad::Var>& bound,
                            const std::vector<int>& batch, std::uint64_t step_seed,
                            const TrainConfig& tc) override;
    double validation_metric() override;  // RMSE (original units), train horizon
    bool higher_is_better() const override { return false; }
    std::map<std::string, std::string> meta() const override;

    // Readings (original units) for all sensors, `horizon_steps` ahead of
    // the sample at time index tau.
    Eigen::VectorXd predict(int tau, int horizon_steps) const;
    MetricReport test_metrics() const;  // rows per eval horizon

  private:
    friend struct TrafficForward;
    const TrafficDataset* data_;
    ParamStore* store_;
    EncoderConfig enc_;
};

}  // namespace ctdg

#endif  // CTDG_LEARN_HPP
