#include "ctdg/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "ctdg/errors.hpp"
#include "ctdg/io.hpp"
#include "ctdg/rng.hpp"

namespace ctdg {

TaskModel& Pipeline::model() {
    if (link) return *link;
    if (node) return *node;
    if (traffic) return *traffic;
    throw std::logic_error("pipeline has no task model");
}

void load_node_labels(const std::string& path, NodeId n_nodes, std::vector<int>* labels,
                      std::vector<double>* label_times, int* classes) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open labels file: " + path);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(is, line)) throw ValidationError(path + ": empty file");
    ++lineno;
    if (io::split_csv_line(line) != std::vector<std::string>{"node", "label", "t"}) {
        throw ValidationError(path + ":1: expected header 'node,label,t'");
    }
    labels->assign(static_cast<std::size_t>(n_nodes), 0);
    label_times->assign(static_cast<std::size_t>(n_nodes), 0.0);
    std::vector<bool> seen(static_cast<std::size_t>(n_nodes), false);
    int max_label = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto cells = io::split_csv_line(line);
        if (cells.size() != 3) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": expected 'node,label,t'");
        }
        const long node = std::stol(cells[0]);
        const int label = std::stoi(cells[1]);
        const double t = std::stod(cells[2]);
        if (node < 0 || node >= n_nodes) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": node id out of range");
        }
        if (label < 0) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": negative label");
        }
        (*labels)[static_cast<std::size_t>(node)] = label;
        (*label_times)[static_cast<std::size_t>(node)] = t;
        seen[static_cast<std::size_t>(node)] = true;
        max_label = std::max(max_label, label);
    }
    for (NodeId u = 0; u < n_nodes; ++u) {
        if (!seen[static_cast<std::size_t>(u)]) {
            throw ValidationError(path + ": missing label for node " + std::to_string(u));
        }
    }
    *classes = std::max(*classes, max_label + 1);
}

namespace {

// Sensors clustered by their hourly mean profile over the train span.
Eigen::MatrixXd sensor_profiles(const ReadingSeries& readings, int train_rows) {
    const Eigen::Index n = readings.values.cols();
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, 24);
    Eigen::MatrixXd cnt = Eigen::MatrixXd::Zero(n, 24);
    for (int i = 0; i < train_rows; ++i) {
        const int h = static_cast<int>(
            static_cast<long long>(readings.timestamps[static_cast<std::size_t>(i)] / 3600.0) % 24);
        for (Eigen::Index u = 0; u < n; ++u) {
            sum(u, h) += readings.values(i, u);
            cnt(u, h) += 1.0;
        }
    }
    for (Eigen::Index u = 0; u < n; ++u) {
        for (int h = 0; h < 24; ++h) {
            if (cnt(u, h) > 0) sum(u, h) /= cnt(u, h);
        }
    }
    return sum;
}

}  // namespace

std::unique_ptr<Pipeline> build_pipeline(const RunConfig& cfg) {
    auto pipe = std::make_unique<Pipeline>();
    pipe->cfg = cfg;
    pipe->enc = cfg.encoder;
    pipe->enc.neighbor_cap = cfg.neighbor_cap;

    if (cfg.task == TaskKind::TrafficForecast) {
        ReadingSeries readings = load_readings(cfg.readings_path);
        NodeId max_id = -1;
        std::vector<std::pair<NodeId, NodeId>> roads;
        {
            std::ifstream is(cfg.initial_edges_path);
            if (!is) throw ValidationError("cannot open edges: " + cfg.initial_edges_path);
            std::string line;
            std::size_t lineno = 0;
            while (std::getline(is, line)) {
                ++lineno;
                if (line.empty() || line == "\r") continue;
                if (lineno == 1 && line.rfind("u,", 0) == 0) continue;
                auto cells = io::split_csv_line(line);
                if (cells.size() != 2) {
                    throw ValidationError(cfg.initial_edges_path + ":" + std::to_string(lineno) +
                                          ": expected 'u,v'");
                }
                roads.emplace_back(std::stoll(cells[0]), std::stoll(cells[1]));
                max_id = std::max({max_id, roads.back().first, roads.back().second});
            }
        }
        if (max_id + 1 > readings.values.cols()) {
            throw ValidationError("road graph references more sensors than the readings have");
        }
        const int train_rows =
            static_cast<int>(cfg.train_frac * static_cast<double>(readings.values.rows()));
        const Eigen::MatrixXd profiles = sensor_profiles(readings, train_rows);
        const int k = std::min<int>(cfg.cluster_k, static_cast<int>(profiles.rows()));
        pipe->clusters = fit_clusters(profiles, k, derive_seed(cfg.seed, "cluster"));
        pipe->traffic_data = std::make_unique<TrafficDataset>(make_traffic_dataset(
            readings, roads, pipe->clusters, cfg.horizon_steps, cfg.eval_horizons,
            cfg.train_frac, cfg.val_frac));
        pipe->graph = pipe->traffic_data->graph;
        if (cfg.time_scale_auto) {
            pipe->enc.time_scale = median_interevent_gap(pipe->graph->events());
        }
        pipe->enc.clusters = k;
        pipe->traffic = std::make_unique<TrafficTask>(*pipe->traffic_data, pipe->store, pipe->enc,
                                                      cfg.seed);
        pipe->enc.input_dim = 1 + pipe->enc.clusters;
        return pipe;
    }

    DatasetPaths paths;
    paths.events = cfg.events_path;
    paths.features = cfg.features_path;
    paths.initial_edges = cfg.initial_edges_path;
    paths.n_nodes = cfg.n_nodes;
    paths.t0 = cfg.t0;
    DynamicGraph loaded = load_dataset(paths);
    if (loaded.features().size() == 0) {
        throw ValidationError("this task needs a feature matrix (data.features)");
    }

    if (cfg.task == TaskKind::LinkPrediction) {
        // Clusters are fitted on item rows; users are assigned inductively.
        const NodeId n = loaded.num_nodes();
        if (cfg.n_users <= 0 || cfg.n_users >= n) {
            throw ValidationError("data.n_users must split users below items");
        }
        const Eigen::MatrixXd item_rows =
            loaded.features().bottomRows(n - cfg.n_users);
        const int k = std::min<int>(cfg.cluster_k, static_cast<int>(item_rows.rows()));
        pipe->clusters = fit_clusters(item_rows, k, derive_seed(cfg.seed, "cluster"));
        std::vector<int> assignment(static_cast<std::size_t>(n), 0);
        for (NodeId u = 0; u < n; ++u) {
            if (u < cfg.n_users) {
                assignment[static_cast<std::size_t>(u)] =
                    assign(pipe->clusters, loaded.features().row(u).transpose());
            } else {
                assignment[static_cast<std::size_t>(u)] =
                    pipe->clusters.assignment[static_cast<std::size_t>(u - cfg.n_users)];
            }
        }
        // The task consumes per-node one-hot encodings over all nodes.
        ClusterModel full = pipe->clusters;
        full.assignment = assignment;
        pipe->graph = std::make_shared<DynamicGraph>(loaded.with_clusters(assignment));
        if (cfg.time_scale_auto) {
            pipe->enc.time_scale = median_interevent_gap(pipe->graph->events());
        }
        pipe->enc.clusters = k;
        pipe->link_data = std::make_unique<LinkDataset>(
            make_link_dataset(pipe->graph, cfg.n_users, cfg.seed, cfg.val_frac, cfg.val_frac));
        pipe->link = std::make_unique<LinkTask>(*pipe->link_data, full, pipe->store, pipe->enc,
                                                cfg.seed);
        pipe->enc.input_dim = static_cast<int>(loaded.features().cols()) + k;
        return pipe;
    }

    // Node classification.
    std::vector<int> labels;
    std::vector<double> label_times;
    int classes = cfg.classes;
    load_node_labels(cfg.labels_path, loaded.num_nodes(), &labels, &label_times, &classes);
    const int k = std::min<int>(cfg.cluster_k, static_cast<int>(loaded.num_nodes()));
    pipe->clusters = fit_clusters(loaded.features(), k, derive_seed(cfg.seed, "cluster"));
    pipe->graph = std::make_shared<DynamicGraph>(loaded.with_clusters(pipe->clusters.assignment));
    if (cfg.time_scale_auto) {
        pipe->enc.time_scale = median_interevent_gap(pipe->graph->events());
    }
    pipe->enc.clusters = k;
    pipe->node_data = std::make_unique<NodeDataset>(
        make_node_dataset(pipe->graph, labels, label_times, classes, cfg.train_frac, cfg.val_frac));
    pipe->node = std::make_unique<NodeTask>(*pipe->node_data, pipe->clusters, pipe->store,
                                            pipe->enc, cfg.seed);
    pipe->enc.input_dim = static_cast<int>(loaded.features().cols()) + k;
    return pipe;
}

void load_checkpoint_into(Pipeline& pipe, const Checkpoint& ckpt) {
    if (ckpt.kind != pipe.cfg.task) {
        throw ValidationError("checkpoint task '" + task_name(ckpt.kind) +
                              "' does not match configured task '" +
                              task_name(pipe.cfg.task) + "'");
    }
    if (ckpt.params.count() != pipe.store.count()) {
        throw ValidationError("checkpoint and configuration disagree on parameter layout");
    }
    for (int id = 0; id < ckpt.params.count(); ++id) {
        const std::string& name = ckpt.params.name(id);
        const int mine = pipe.store.find(name);
        if (mine < 0) throw ValidationError("checkpoint tensor '" + name + "' is not expected");
        if (pipe.store.value(mine).rows() != ckpt.params.value(id).rows() ||
            pipe.store.value(mine).cols() != ckpt.params.value(id).cols()) {
            throw ValidationError("checkpoint tensor '" + name + "' has the wrong shape");
        }
        pipe.store.value(mine) = ckpt.params.value(id);
    }
}

std::vector<std::pair<NodeId, NodeId>> interpretation_edges(const Pipeline& pipe) {
    std::set<std::pair<NodeId, NodeId>> edges;
    if (pipe.cfg.task == TaskKind::LinkPrediction) {
        // Item-item co-purchase projection of the bipartite stream.
        const DynamicGraph& g = *pipe.graph;
        const NodeId n_users = pipe.cfg.n_users;
        for (NodeId u = 0; u < n_users; ++u) {
            const auto& idx = g.outgoing_event_indices(u);
            std::set<NodeId> items;
            for (std::size_t i : idx) items.insert(g.events()[i].v - n_users);
            for (auto a = items.begin(); a != items.end(); ++a) {
                auto b = a;
                for (++b; b != items.end(); ++b) edges.emplace(*a, *b);
            }
        }
    } else if (pipe.cfg.task == TaskKind::TrafficForecast) {
        for (const auto& e : pipe.graph->initial_edges()) {
            edges.emplace(std::min(e.first, e.second), std::max(e.first, e.second));
        }
    } else {
        for (const auto& e : pipe.graph->initial_edges()) {
            edges.emplace(std::min(e.first, e.second), std::max(e.first, e.second));
        }
        for (const Event& e : pipe.graph->events()) {
            edges.emplace(std::min(e.u, e.v), std::max(e.u, e.v));
        }
    }
    return {edges.begin(), edges.end()};
}

}  // namespace ctdg
