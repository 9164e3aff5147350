#ifndef CTDG_DYNGRAPH_HPP
#define CTDG_DYNGRAPH_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ctdg {

using NodeId = std::int64_t;

enum class EventOp { Add };

struct Event {
    NodeId u = 0;
    NodeId v = 0;
    EventOp op = EventOp::Add;
    double t = 0.0;  // seconds since epoch
};

using EventLog = std::vector<Event>;

struct HistoryEntry {
    NodeId neighbor = 0;
    double t = 0.0;   // latest event time on the (owner, neighbor) pair
    int cluster = 0;  // cluster id of the neighbor
};

// Time-resolved neighborhood of one node: one entry per neighbor (repeated
// events on a pair collapse to the latest timestamp), sorted ascending by t.
struct History {
    NodeId owner = 0;
    std::vector<HistoryEntry> entries;
    double tbar = 0.0;  // time of most recent event on owner; t0 if none
};

// Dense time-indexed readings, one row per timestamp.
struct ReadingSeries {
    std::vector<double> timestamps;  // ascending
    Eigen::MatrixXd values;          // T x N
};

// Initial topology plus a time-ordered log of edge-addition events.
// Immutable after construction; safe to share across concurrent readers.
class DynamicGraph {
  public:
    DynamicGraph(NodeId n_nodes, std::vector<std::pair<NodeId, NodeId>> initial_edges,
                 EventLog events, Eigen::MatrixXd features, double t0);

    NodeId num_nodes() const { return n_; }
    double t0() const { return t0_; }
    const EventLog& events() const { return events_; }
    const Eigen::MatrixXd& features() const { return features_; }
    const std::vector<std::pair<NodeId, NodeId>>& initial_edges() const { return initial_edges_; }

    // Cluster ids stamped into History entries; defaults to all-zero.
    DynamicGraph with_clusters(std::vector<int> assignment) const;
    const std::vector<int>& cluster_assignment() const { return cluster_of_; }

    // Neighbors connected to u through initial edges or Add events strictly
    // before t. cap > 0 keeps only the cap most recent entries.
    History neighborhood_at(NodeId u, double t, int cap = 0) const;

    // All events incident to u with event time strictly before t, ascending.
    // Each element is (time, cluster-of-other-endpoint).
    std::vector<std::pair<double, int>> incident_events_before(NodeId u, double t) const;

    // Events where u appears as the first endpoint (ingestion order kept),
    // e.g. the per-user interaction sequence in bipartite data.
    const std::vector<std::size_t>& outgoing_event_indices(NodeId u) const;

  private:
    NodeId n_;
    double t0_;
    std::vector<std::pair<NodeId, NodeId>> initial_edges_;
    EventLog events_;
    Eigen::MatrixXd features_;
    std::vector<int> cluster_of_;
    std::vector<std::vector<NodeId>> initial_adj_;
    std::vector<std::vector<std::size_t>> incident_;  // event indices touching node, by time
    std::vector<std::vector<std::size_t>> outgoing_;  // event indices with u as first endpoint
};

struct DatasetPaths {
    std::string events;         // required
    std::string initial_edges;  // optional
    std::string features;       // optional (csv or binary)
    NodeId n_nodes = 0;         // 0: inferred from max id + 1
    std::optional<double> t0;   // default: first event time (0 if no events)
};

// Event CSV ingestion. Header `u,v,op,t`; rows must be sorted non-decreasing
// in t (ties keep file order). Malformed rows, out-of-order timestamps and
// unsupported ops are reported with their line number.
DynamicGraph load_events(const std::string& path);
DynamicGraph load_dataset(const DatasetPaths& paths);

void save_events(const EventLog& events, const std::string& path);

// Congestion events from traffic readings: for each sensor and hour-of-day,
// a reading strictly below mean - 1.645 * stddev (one-sided 95%) emits an
// Add event on every edge incident to that road at the reading timestamp.
// Buckets with zero variance never fire.
EventLog derive_congestion_events(const ReadingSeries& readings,
                                  const std::vector<std::pair<NodeId, NodeId>>& road_graph);

// Same detection, but per-(sensor, hour) statistics come from a separate
// window (the training span) while events are emitted over `detect`.
EventLog derive_congestion_events_with_stats(const ReadingSeries& detect,
                                             const ReadingSeries& stats_window,
                                             const std::vector<std::pair<NodeId, NodeId>>& road_graph);

ReadingSeries load_readings(const std::string& path);

}  // namespace ctdg

#endif  // CTDG_DYNGRAPH_HPP
