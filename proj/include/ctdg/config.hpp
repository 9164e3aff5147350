#ifndef CTDG_CONFIG_HPP
#define CTDG_CONFIG_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctdg/dyngraph.hpp"
#include "ctdg/encoder.hpp"
#include "ctdg/learn.hpp"
#include "ctdg/spectral.hpp"

namespace ctdg {

// Flat INI-style sections; every field has a default. Validation gathers
// every invalid field before failing.
struct RunConfig {
    TaskKind task = TaskKind::LinkPrediction;
    std::string out_dir = "out";
    std::uint64_t seed = 42;

    // [data]
    std::string events_path;
    std::string features_path;
    std::string initial_edges_path;
    std::string readings_path;
    std::string labels_path;
    NodeId n_nodes = 0;  // 0: inferred
    NodeId n_users = 0;  // link task
    std::optional<double> t0;

    // [cluster]
    int cluster_k = 8;

    // [encoder]
    EncoderConfig encoder;
    bool time_scale_auto = true;  // dataset median inter-event gap
    int neighbor_cap = 0;         // 0: unlimited

    // [train]
    TrainConfig train;

    // [task]
    int classes = 2;
    int horizon_steps = 3;
    std::vector<int> eval_horizons = {3, 6, 9};
    double train_frac = 0.7;
    double val_frac = 0.1;

    // [spectral]
    SpectralParams spectral;

    std::string resolved_text() const;  // reproducible snapshot
};

// Parses the config file and validates, reporting every invalid field in a
// single ValidationError. Values from `overrides` (CLI flags) win.
RunConfig parse_run_config(const std::string& path,
                           const std::map<std::string, std::string>& overrides = {});

// Raw INI reader: "section.key" -> value. '#' and ';' start comments.
std::map<std::string, std::string> read_ini(const std::string& path);

// Median inter-event gap used as the default elapsed-time divisor.
double median_interevent_gap(const EventLog& events);

}  // namespace ctdg

#endif  // CTDG_CONFIG_HPP
