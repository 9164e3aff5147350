#include "ctdg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ctdg/rng.hpp"

namespace ctdg {

LinkSynthData make_link_stream(const LinkSynthParams& params, std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, "link-synth"));
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    LinkSynthData data;
    data.n_users = params.n_users;
    data.n_items = params.n_items;
    const NodeId n = params.n_users + params.n_items;
    const int f = params.n_genres + params.feature_noise_dim;
    data.features = Eigen::MatrixXd::Zero(n, f);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<int> genre(static_cast<std::size_t>(params.n_items));
    for (int i = 0; i < params.n_items; ++i) {
        // Popular items live in genre 0; the niche pool spreads over the rest.
        genre[static_cast<std::size_t>(i)] =
            (i < params.hit_items) ? 0 : 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(
                                                  params.n_genres - 1));
        const NodeId row = params.n_users + i;
        data.features(row, genre[static_cast<std::size_t>(i)]) = 1.0;
        for (int j = 0; j < params.feature_noise_dim; ++j) {
            data.features(row, params.n_genres + j) = 0.3 * normal(rng);
        }
    }

    struct Raw {
        NodeId u, v;
        double t;
    };
    std::vector<Raw> raw;
    for (int u = 0; u < params.n_users; ++u) {
        const int personal =
            params.hit_items + static_cast<int>(rng() % static_cast<std::uint64_t>(
                                                    params.n_items - params.hit_items));
        const double phase = uni(rng) * params.period;
        double t = params.start_time + phase;
        const double end = params.start_time + params.days * 86400.0;
        while (t < end) {
            raw.push_back(Raw{u, params.n_users + personal, t});
            // Noise purchases of popular items between repurchases.
            if (uni(rng) < params.noise_prob) {
                const NodeId hit = params.n_users +
                                   static_cast<NodeId>(rng() % static_cast<std::uint64_t>(
                                                           params.hit_items));
                raw.push_back(Raw{u, hit, t + uni(rng) * params.period * 0.8});
            }
            t += params.period + (uni(rng) * 2.0 - 1.0) * params.jitter;
        }
    }
    std::stable_sort(raw.begin(), raw.end(), [](const Raw& a, const Raw& b) { return a.t < b.t; });
    data.events.reserve(raw.size());
    for (const Raw& r : raw) {
        if (r.t < params.start_time + params.days * 86400.0) {
            data.events.push_back(Event{r.u, r.v, EventOp::Add, r.t});
        }
    }
    return data;
}

TrafficSynthData make_traffic_series(const TrafficSynthParams& params, std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, "traffic-synth"));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    TrafficSynthData data;
    const int n = params.n_sensors;
    for (int i = 0; i < n; ++i) data.edges.emplace_back(i, (i + 1) % n);
    for (int c = 0; c < params.chords; ++c) {
        const NodeId a = static_cast<NodeId>(rng() % static_cast<std::uint64_t>(n));
        const NodeId b = static_cast<NodeId>(rng() % static_cast<std::uint64_t>(n));
        if (a != b) data.edges.emplace_back(std::min(a, b), std::max(a, b));
    }
    std::sort(data.edges.begin(), data.edges.end());
    data.edges.erase(std::unique(data.edges.begin(), data.edges.end()), data.edges.end());

    std::vector<std::vector<NodeId>> adj(static_cast<std::size_t>(n));
    for (const auto& [a, b] : data.edges) {
        adj[static_cast<std::size_t>(a)].push_back(b);
        adj[static_cast<std::size_t>(b)].push_back(a);
    }

    const int steps = static_cast<int>(params.days * 86400.0 / params.cadence);
    data.readings.values.resize(steps, n);
    data.readings.timestamps.resize(static_cast<std::size_t>(steps));
    std::vector<double> phase(static_cast<std::size_t>(n));
    for (int u = 0; u < n; ++u) phase[static_cast<std::size_t>(u)] = uni(rng) * 2.0 * M_PI;
    std::vector<int> congested(static_cast<std::size_t>(n), 0);  // remaining steps

    for (int i = 0; i < steps; ++i) {
        const double t = i * params.cadence;
        data.readings.timestamps[static_cast<std::size_t>(i)] = t;
        std::vector<int> next = congested;
        for (int u = 0; u < n; ++u) {
            if (congested[static_cast<std::size_t>(u)] == params.congest_len) {
                // Fresh episode: may spill onto neighbors next step.
                for (NodeId v : adj[static_cast<std::size_t>(u)]) {
                    if (next[static_cast<std::size_t>(v)] == 0 &&
                        uni(rng) < params.propagate_prob) {
                        next[static_cast<std::size_t>(v)] = params.congest_len;
                    }
                }
            }
            if (congested[static_cast<std::size_t>(u)] > 0) {
                --next[static_cast<std::size_t>(u)];
            } else if (uni(rng) < params.onset_prob) {
                next[static_cast<std::size_t>(u)] = params.congest_len;
            }
        }
        for (int u = 0; u < n; ++u) {
            const double day = 2.0 * M_PI * t / 86400.0;
            double v = params.base +
                       params.daily_amp * std::sin(day + phase[static_cast<std::size_t>(u)]) +
                       params.noise * normal(rng);
            if (congested[static_cast<std::size_t>(u)] > 0) {
                const double depth =
                    static_cast<double>(congested[static_cast<std::size_t>(u)]) /
                    static_cast<double>(params.congest_len);
                v -= params.congest_drop * (0.5 + 0.5 * depth);
            }
            data.readings.values(i, u) = v;
        }
        congested = next;
    }
    return data;
}

NodeSynthData make_node_blobs(const NodeSynthParams& params, std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, "node-synth"));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    NodeSynthData data;
    data.classes = params.classes;
    const int n = params.n_nodes;
    Eigen::MatrixXd features(n, params.feature_dim);
    data.labels.resize(static_cast<std::size_t>(n));
    Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(params.classes, params.feature_dim);
    for (int c = 0; c < params.classes; ++c) {
        centers(c, c % params.feature_dim) = params.blob_sep;
    }
    for (int u = 0; u < n; ++u) {
        const int c = u % params.classes;
        data.labels[static_cast<std::size_t>(u)] = c;
        for (int j = 0; j < params.feature_dim; ++j) {
            features(u, j) = centers(c, j) + normal(rng);
        }
    }

    std::vector<std::pair<NodeId, NodeId>> initial;
    struct Raw {
        NodeId u, v;
        double t;
    };
    std::vector<Raw> raw;
    for (int u = 0; u < n; ++u) {
        for (int v = u + 1; v < n; ++v) {
            const bool same =
                data.labels[static_cast<std::size_t>(u)] == data.labels[static_cast<std::size_t>(v)];
            const double prob = same ? params.within_edge_prob : params.cross_edge_prob;
            if (uni(rng) < prob) {
                raw.push_back(Raw{u, v, uni(rng) * params.span});
            }
        }
    }
    std::stable_sort(raw.begin(), raw.end(), [](const Raw& a, const Raw& b) { return a.t < b.t; });
    EventLog events;
    for (const Raw& r : raw) events.push_back(Event{r.u, r.v, EventOp::Add, r.t});

    data.label_times.resize(static_cast<std::size_t>(n));
    for (int u = 0; u < n; ++u) {
        data.label_times[static_cast<std::size_t>(u)] = params.span * (0.5 + 0.5 * uni(rng));
    }
    data.graph = std::make_shared<DynamicGraph>(n, initial, std::move(events), features, 0.0);
    return data;
}

}  // namespace ctdg
