#include "ctdg/dyngraph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

#include "ctdg/errors.hpp"
#include "ctdg/io.hpp"

namespace ctdg {

DynamicGraph::DynamicGraph(NodeId n_nodes, std::vector<std::pair<NodeId, NodeId>> initial_edges,
                           EventLog events, Eigen::MatrixXd features, double t0)
    : n_(n_nodes),
      t0_(t0),
      initial_edges_(std::move(initial_edges)),
      events_(std::move(events)),
      features_(std::move(features)) {
    if (n_ <= 0) throw ValidationError("graph must have at least one node");
    if (features_.size() > 0 && features_.rows() != n_) {
        throw ValidationError("feature matrix has " + std::to_string(features_.rows()) +
                              " rows but the graph has " + std::to_string(n_) + " nodes");
    }
    cluster_of_.assign(static_cast<std::size_t>(n_), 0);
    initial_adj_.resize(static_cast<std::size_t>(n_));
    for (const auto& [a, b] : initial_edges_) {
        if (a < 0 || a >= n_ || b < 0 || b >= n_) {
            throw ValidationError("initial edge endpoint out of range");
        }
        if (a == b) throw ValidationError("self-loop in initial edges");
        initial_adj_[static_cast<std::size_t>(a)].push_back(b);
        initial_adj_[static_cast<std::size_t>(b)].push_back(a);
    }
    incident_.resize(static_cast<std::size_t>(n_));
    outgoing_.resize(static_cast<std::size_t>(n_));
    double prev_t = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < events_.size(); ++i) {
        const Event& e = events_[i];
        if (e.u < 0 || e.u >= n_ || e.v < 0 || e.v >= n_) {
            throw ValidationError("event " + std::to_string(i) + " endpoint out of range");
        }
        if (e.u == e.v) throw ValidationError("event " + std::to_string(i) + " is a self-loop");
        if (e.t < prev_t) throw ValidationError("event log is not sorted by time");
        if (e.t < t0_) throw ValidationError("event precedes the initial graph time t0");
        prev_t = e.t;
        incident_[static_cast<std::size_t>(e.u)].push_back(i);
        incident_[static_cast<std::size_t>(e.v)].push_back(i);
        outgoing_[static_cast<std::size_t>(e.u)].push_back(i);
    }
}

DynamicGraph DynamicGraph::with_clusters(std::vector<int> assignment) const {
    if (assignment.size() != static_cast<std::size_t>(n_)) {
        throw ValidationError("cluster assignment size does not match node count");
    }
    DynamicGraph g = *this;
    g.cluster_of_ = std::move(assignment);
    return g;
}

History DynamicGraph::neighborhood_at(NodeId u, double t, int cap) const {
    if (u < 0 || u >= n_) {
        throw ValidationError("unknown node id " + std::to_string(u));
    }
    if (t < t0_) throw ValidationError("query time precedes t0");
    History h;
    h.owner = u;
    h.tbar = t0_;
    std::unordered_map<NodeId, double> latest;
    for (NodeId nb : initial_adj_[static_cast<std::size_t>(u)]) {
        latest.emplace(nb, t0_);
    }
    for (std::size_t idx : incident_[static_cast<std::size_t>(u)]) {
        const Event& e = events_[idx];
        if (e.t >= t) break;  // strict past only
        const NodeId other = (e.u == u) ? e.v : e.u;
        auto [it, inserted] = latest.try_emplace(other, e.t);
        if (!inserted && e.t > it->second) it->second = e.t;
        if (e.t > h.tbar) h.tbar = e.t;
    }
    h.entries.reserve(latest.size());
    for (const auto& [nb, te] : latest) {
        h.entries.push_back(HistoryEntry{nb, te, cluster_of_[static_cast<std::size_t>(nb)]});
    }
    std::sort(h.entries.begin(), h.entries.end(), [](const HistoryEntry& a, const HistoryEntry& b) {
        if (a.t != b.t) return a.t < b.t;
        return a.neighbor < b.neighbor;
    });
    if (cap > 0 && h.entries.size() > static_cast<std::size_t>(cap)) {
        h.entries.erase(h.entries.begin(),
                        h.entries.end() - static_cast<std::ptrdiff_t>(cap));
    }
    return h;
}

std::vector<std::pair<double, int>> DynamicGraph::incident_events_before(NodeId u, double t) const {
    if (u < 0 || u >= n_) throw ValidationError("unknown node id " + std::to_string(u));
    std::vector<std::pair<double, int>> out;
    for (std::size_t idx : incident_[static_cast<std::size_t>(u)]) {
        const Event& e = events_[idx];
        if (e.t >= t) break;
        const NodeId other = (e.u == u) ? e.v : e.u;
        out.emplace_back(e.t, cluster_of_[static_cast<std::size_t>(other)]);
    }
    return out;
}

const std::vector<std::size_t>& DynamicGraph::outgoing_event_indices(NodeId u) const {
    if (u < 0 || u >= n_) throw ValidationError("unknown node id " + std::to_string(u));
    return outgoing_[static_cast<std::size_t>(u)];
}

namespace {

NodeId parse_node_id(const std::string& s, const std::string& path, std::size_t lineno) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used != s.size() || v < 0) throw std::invalid_argument(s);
        return static_cast<NodeId>(v);
    } catch (const std::exception&) {
        throw ValidationError(path + ":" + std::to_string(lineno) +
                              ": cannot parse node id '" + s + "'");
    }
}

double parse_time(const std::string& s, const std::string& path, std::size_t lineno) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError(path + ":" + std::to_string(lineno) +
                              ": cannot parse timestamp '" + s + "'");
    }
}

EventLog parse_event_csv(const std::string& path, NodeId* max_id) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open event file: " + path);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(is, line)) throw ValidationError(path + ": empty file");
    ++lineno;
    {
        auto header = io::split_csv_line(line);
        if (header.size() != 4 || header[0] != "u" || header[1] != "v" || header[2] != "op" ||
            header[3] != "t") {
            throw ValidationError(path + ":1: expected header 'u,v,op,t'");
        }
    }
    EventLog events;
    double prev_t = -std::numeric_limits<double>::infinity();
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto cells = io::split_csv_line(line);
        if (cells.size() != 4) {
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": expected 4 fields, got " + std::to_string(cells.size()));
        }
        Event e;
        e.u = parse_node_id(cells[0], path, lineno);
        e.v = parse_node_id(cells[1], path, lineno);
        if (cells[2] == "Add") {
            e.op = EventOp::Add;
        } else if (cells[2] == "Delete") {
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": unsupported operation 'Delete' (edge deletion is not modeled)");
        } else {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": unknown operation '" +
                                  cells[2] + "'");
        }
        e.t = parse_time(cells[3], path, lineno);
        if (e.u == e.v) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": self-loop event");
        }
        if (e.t < prev_t) {
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": timestamps not sorted (t=" + std::to_string(e.t) +
                                  " after t=" + std::to_string(prev_t) + ")");
        }
        prev_t = e.t;
        *max_id = std::max({*max_id, e.u, e.v});
        events.push_back(e);
    }
    return events;
}

std::vector<std::pair<NodeId, NodeId>> parse_edge_csv(const std::string& path, NodeId* max_id) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open edge file: " + path);
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::pair<NodeId, NodeId>> edges;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        if (lineno == 1 && line.rfind("u,", 0) == 0) continue;  // optional header
        auto cells = io::split_csv_line(line);
        if (cells.size() != 2) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": expected 'u,v'");
        }
        const NodeId a = parse_node_id(cells[0], path, lineno);
        const NodeId b = parse_node_id(cells[1], path, lineno);
        *max_id = std::max({*max_id, a, b});
        edges.emplace_back(a, b);
    }
    return edges;
}

}  // namespace

DynamicGraph load_events(const std::string& path) {
    DatasetPaths p;
    p.events = path;
    return load_dataset(p);
}

DynamicGraph load_dataset(const DatasetPaths& paths) {
    NodeId max_id = -1;
    EventLog events = parse_event_csv(paths.events, &max_id);
    std::vector<std::pair<NodeId, NodeId>> initial;
    if (!paths.initial_edges.empty()) {
        initial = parse_edge_csv(paths.initial_edges, &max_id);
    }
    Eigen::MatrixXd features;
    if (!paths.features.empty()) {
        features = io::load_matrix(paths.features);
        max_id = std::max(max_id, static_cast<NodeId>(features.rows()) - 1);
    }
    NodeId n = paths.n_nodes > 0 ? paths.n_nodes : max_id + 1;
    if (n <= 0) throw ValidationError(paths.events + ": no nodes in dataset");
    const double t0 = paths.t0.value_or(events.empty() ? 0.0 : events.front().t);
    return DynamicGraph(n, std::move(initial), std::move(events), std::move(features), t0);
}

void save_events(const EventLog& events, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "u,v,op,t\n";
    char buf[64];
    for (const Event& e : events) {
        std::snprintf(buf, sizeof(buf), "%.17g", e.t);
        os << e.u << ',' << e.v << ",Add," << buf << '\n';
    }
}

namespace {

int hour_of(double t) {
    return static_cast<int>(static_cast<std::int64_t>(std::floor(t / 3600.0)) % 24);
}

}  // namespace

EventLog derive_congestion_events_with_stats(
    const ReadingSeries& detect, const ReadingSeries& stats_window,
    const std::vector<std::pair<NodeId, NodeId>>& road_graph) {
    const Eigen::Index T = detect.values.rows();
    const Eigen::Index N = detect.values.cols();
    if (static_cast<Eigen::Index>(detect.timestamps.size()) != T ||
        stats_window.values.cols() != N) {
        throw ValidationError("readings timestamps and rows disagree");
    }
    if (stats_window.values.rows() < 2) {
        throw ValidationError("readings must cover at least one full day");
    }
    const double cadence = stats_window.timestamps[1] - stats_window.timestamps[0];
    if (cadence <= 0) throw ValidationError("reading timestamps must be strictly increasing");
    const double span = stats_window.timestamps.back() - stats_window.timestamps.front();
    if (span + cadence < 86400.0) {
        throw ValidationError("readings must cover at least one full day");
    }

    // Per (sensor, hour-of-day) statistics over the statistics window.
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(24, N);
    Eigen::MatrixXd sumsq = Eigen::MatrixXd::Zero(24, N);
    Eigen::MatrixXd count = Eigen::MatrixXd::Zero(24, N);
    for (Eigen::Index i = 0; i < stats_window.values.rows(); ++i) {
        const int h = hour_of(stats_window.timestamps[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < N; ++j) {
            const double x = stats_window.values(i, j);
            sum(h, j) += x;
            sumsq(h, j) += x * x;
            count(h, j) += 1.0;
        }
    }

    std::vector<std::vector<NodeId>> adj(static_cast<std::size_t>(N));
    for (const auto& [a, b] : road_graph) {
        adj[static_cast<std::size_t>(a)].push_back(b);
        adj[static_cast<std::size_t>(b)].push_back(a);
    }
    for (auto& v : adj) std::sort(v.begin(), v.end());

    constexpr double kZ95 = 1.645;  // one-sided 95%
    EventLog events;
    for (Eigen::Index i = 0; i < T; ++i) {
        const int h = hour_of(detect.timestamps[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < N; ++j) {
            const double n = count(h, j);
            if (n <= 0) continue;
            const double mean = sum(h, j) / n;
            const double var = std::max(0.0, sumsq(h, j) / n - mean * mean);
            const double sd = std::sqrt(var);
            if (sd <= 0.0) continue;  // zero-variance bucket never fires
            if (detect.values(i, j) < mean - kZ95 * sd) {
                for (NodeId nb : adj[static_cast<std::size_t>(j)]) {
                    events.push_back(Event{static_cast<NodeId>(j), nb, EventOp::Add,
                                           detect.timestamps[static_cast<std::size_t>(i)]});
                }
            }
        }
    }
    return events;
}

EventLog derive_congestion_events(const ReadingSeries& readings,
                                  const std::vector<std::pair<NodeId, NodeId>>& road_graph) {
    return derive_congestion_events_with_stats(readings, readings, road_graph);
}

ReadingSeries load_readings(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open readings file: " + path);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(is, line)) throw ValidationError(path + ": empty file");
    ++lineno;
    auto header = io::split_csv_line(line);
    if (header.size() < 2 || header[0] != "timestamp") {
        throw ValidationError(path + ":1: expected header 'timestamp,sensor_0,...'");
    }
    const std::size_t n = header.size() - 1;
    ReadingSeries rs;
    std::vector<std::vector<double>> rows;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto cells = io::split_csv_line(line);
        if (cells.size() != n + 1) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": expected " +
                                  std::to_string(n + 1) + " fields");
        }
        rs.timestamps.push_back(parse_time(cells[0], path, lineno));
        std::vector<double> row(n);
        for (std::size_t j = 0; j < n; ++j) row[j] = parse_time(cells[j + 1], path, lineno);
        rows.push_back(std::move(row));
    }
    rs.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            rs.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return rs;
}

}  // namespace ctdg
