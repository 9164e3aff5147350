#ifndef CTDG_SYNTH_HPP
#define CTDG_SYNTH_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <vector>

#include "ctdg/dyngraph.hpp"

namespace ctdg {

// Bipartite interaction stream with a planted periodic repurchase pattern:
// each user rebuys one personal niche item on a daily rhythm, interleaved
// with purchases of a small set of globally popular items.
struct LinkSynthParams {
    int n_users = 150;
    int n_items = 350;
    int n_genres = 8;
    int hit_items = 10;        // globally popular items, genre 0
    double start_time = 0.0;
    double days = 12.0;
    double period = 86400.0;   // repurchase period (24 h)
    double jitter = 1800.0;    // +- jitter on each repurchase
    double noise_prob = 0.35;  // chance an event is a popular-item purchase
    int feature_noise_dim = 8;
};

struct LinkSynthData {
    EventLog events;
    Eigen::MatrixXd features;  // (n_users + n_items) x F; user rows zero
    NodeId n_users = 0;
    NodeId n_items = 0;
};

LinkSynthData make_link_stream(const LinkSynthParams& params, std::uint64_t seed);

// Ring-with-chords road network whose speeds follow a daily profile plus
// congestion episodes that propagate to graph neighbors.
struct TrafficSynthParams {
    int n_sensors = 24;
    double days = 6.0;
    double cadence = 300.0;  // 5 minutes
    double base = 60.0;
    double daily_amp = 8.0;
    double noise = 1.0;
    double onset_prob = 0.01;    // spontaneous congestion per sensor per step
    double congest_drop = 25.0;  // speed drop at full congestion
    int congest_len = 8;         // steps an episode lasts
    double propagate_prob = 0.7;
    int chords = 6;
};

struct TrafficSynthData {
    ReadingSeries readings;
    std::vector<std::pair<NodeId, NodeId>> edges;
};

TrafficSynthData make_traffic_series(const TrafficSynthParams& params, std::uint64_t seed);

// Homophilous event graph over Gaussian feature blobs; labels are blob ids
// and each node's query time is drawn inside the event span.
struct NodeSynthParams {
    int n_nodes = 60;
    int classes = 2;
    int feature_dim = 6;
    double blob_sep = 4.0;
    double within_edge_prob = 0.25;
    double cross_edge_prob = 0.02;
    double span = 1000.0;
};

struct NodeSynthData {
    std::shared_ptr<DynamicGraph> graph;
    std::vector<int> labels;
    std::vector<double> label_times;
    int classes = 2;
};

NodeSynthData make_node_blobs(const NodeSynthParams& params, std::uint64_t seed);

}  // namespace ctdg

#endif  // CTDG_SYNTH_HPP
