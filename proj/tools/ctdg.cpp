// Command-line surface for the continuous-time dynamic-graph pipeline:
// ingest, cluster, train, eval and interpret subcommands driven by an
// INI-style config file. Exit codes: 1 usage, 2 validation, 3 runtime.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ctdg/config.hpp"
#include "ctdg/errors.hpp"
#include "ctdg/io.hpp"
#include "ctdg/pipeline.hpp"
#include "ctdg/rng.hpp"
#include "ctdg/spectral.hpp"

namespace fs = std::filesystem;
using namespace ctdg;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_override;
    std::int64_t seed_override = -1;
};

RunConfig load_config(const CommonOpts& opts) {
    std::map<std::string, std::string> overrides;
    if (!opts.out_override.empty()) overrides["run.out"] = opts.out_override;
    if (opts.seed_override >= 0) overrides["run.seed"] = std::to_string(opts.seed_override);
    return parse_run_config(opts.config_path, overrides);
}

void write_out(const RunConfig& cfg, const std::string& name, const std::string& content) {
    fs::create_directories(cfg.out_dir);
    io::write_text_file((fs::path(cfg.out_dir) / name).string(), content);
}

void write_snapshot(const RunConfig& cfg) { write_out(cfg, "config.resolved", cfg.resolved_text()); }

int cmd_ingest(const CommonOpts& opts) {
    RunConfig cfg = load_config(opts);
    auto pipe = build_pipeline(cfg);
    std::ostringstream os;
    os << "key,value\n";
    os << "task," << task_name(cfg.task) << "\n";
    os << "nodes," << pipe->graph->num_nodes() << "\n";
    os << "events," << pipe->graph->events().size() << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", pipe->graph->t0());
    os << "t0," << buf << "\n";
    if (!pipe->graph->events().empty()) {
        std::snprintf(buf, sizeof(buf), "%.17g", pipe->graph->events().back().t);
        os << "t_end," << buf << "\n";
    }
    std::snprintf(buf, sizeof(buf), "%.17g", pipe->enc.time_scale);
    os << "time_scale," << buf << "\n";
    write_snapshot(cfg);
    write_out(cfg, "summary.csv", os.str());
    std::cout << os.str();
    return 0;
}

int cmd_cluster(const CommonOpts& opts) {
    RunConfig cfg = load_config(opts);
    auto pipe = build_pipeline(cfg);
    write_snapshot(cfg);
    save_cluster_model(pipe->clusters, (fs::path(cfg.out_dir) / "assignment.csv").string(),
                       (fs::path(cfg.out_dir) / "centroids.csv").string());
    std::cout << "wrote " << cfg.out_dir << "/assignment.csv and centroids.csv (K="
              << pipe->clusters.k << ")\n";
    return 0;
}

int cmd_train(const CommonOpts& opts) {
    RunConfig cfg = load_config(opts);
    auto pipe = build_pipeline(cfg);
    write_snapshot(cfg);
    TrainResult result = train(pipe->store, pipe->model(), pipe->enc, cfg.train);
    write_out(cfg, "epochs.csv", epoch_log_csv(result.log));
    save_checkpoint(result.best, (fs::path(cfg.out_dir) / "checkpoint.bin").string());
    save_cluster_model(pipe->clusters, (fs::path(cfg.out_dir) / "assignment.csv").string(),
                       (fs::path(cfg.out_dir) / "centroids.csv").string());
    if (result.diverged) {
        std::cerr << "training diverged: " << result.diagnostic << "\n";
        return 3;
    }
    std::cout << "best epoch " << result.best_epoch << ", checkpoint written to " << cfg.out_dir
              << "/checkpoint.bin\n";
    return 0;
}

struct EvalArtifacts {
    MetricReport metrics;
    Eigen::MatrixXd predictions;  // rows: examples; cols: signal dimension
    std::string truth_csv;
};

EvalArtifacts evaluate_pipeline(Pipeline& pipe) {
    EvalArtifacts art;
    if (pipe.link) {
        art.metrics = pipe.link->test_metrics({10, 50, 100});
        std::vector<UserSequence> seqs;
        for (NodeId u : pipe.link_data->test_users) {
            if (pipe.graph->outgoing_event_indices(u).size() >= 2) {
                seqs.push_back(pipe.link->sequence_for(u, true));
            }
        }
        art.predictions.resize(static_cast<Eigen::Index>(seqs.size()), pipe.link->item_count());
        std::ostringstream truth;
        truth << "user,item_index,t\n";
        char buf[64];
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            art.predictions.row(static_cast<Eigen::Index>(i)) =
                pipe.link->scores_for(seqs[i], seqs[i].holdout_time).transpose();
            std::snprintf(buf, sizeof(buf), "%.17g", seqs[i].holdout_time);
            truth << seqs[i].user << ','
                  << (seqs[i].holdout_item - pipe.link_data->n_users) << ',' << buf << "\n";
        }
        art.truth_csv = truth.str();
    } else if (pipe.node) {
        art.metrics = pipe.node->test_metrics();
        const NodeId n = pipe.graph->num_nodes();
        art.predictions.resize(n, pipe.node_data->classes);
        std::ostringstream truth;
        truth << "node,label,split\n";
        std::vector<char> split(static_cast<std::size_t>(n), 'x');
        for (NodeId u : pipe.node_data->train_nodes) split[static_cast<std::size_t>(u)] = 'r';
        for (NodeId u : pipe.node_data->val_nodes) split[static_cast<std::size_t>(u)] = 'v';
        for (NodeId u : pipe.node_data->test_nodes) split[static_cast<std::size_t>(u)] = 't';
        for (NodeId u = 0; u < n; ++u) {
            art.predictions.row(u) =
                pipe.node->predict(u, pipe.node_data->label_times[static_cast<std::size_t>(u)])
                    .transpose();
            truth << u << ',' << pipe.node_data->labels[static_cast<std::size_t>(u)] << ','
                  << split[static_cast<std::size_t>(u)] << "\n";
        }
        art.truth_csv = truth.str();
    } else {
        art.metrics = pipe.traffic->test_metrics();
        const auto& idx = pipe.traffic_data->test_idx;
        const std::size_t stride = std::max<std::size_t>(1, idx.size() / 48);
        std::vector<int> taus;
        for (std::size_t i = 0; i < idx.size(); i += stride) taus.push_back(idx[i]);
        const Eigen::Index n = pipe.traffic_data->readings.values.cols();
        art.predictions.resize(static_cast<Eigen::Index>(taus.size()), n);
        std::ostringstream truth;
        truth << "tau,horizon";
        for (Eigen::Index u = 0; u < n; ++u) truth << ",sensor_" << u;
        truth << "\n";
        char buf[64];
        const int h = pipe.traffic_data->horizon_steps;
        for (std::size_t i = 0; i < taus.size(); ++i) {
            art.predictions.row(static_cast<Eigen::Index>(i)) =
                pipe.traffic->predict(taus[i], h).transpose();
            truth << taus[i] << ',' << h;
            for (Eigen::Index u = 0; u < n; ++u) {
                std::snprintf(buf, sizeof(buf), "%.17g",
                              pipe.traffic_data->readings.values(taus[i] + h, u));
                truth << ',' << buf;
            }
            truth << "\n";
        }
        art.truth_csv = truth.str();
    }
    return art;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint_path) {
    RunConfig cfg = load_config(opts);
    auto pipe = build_pipeline(cfg);
    Checkpoint ckpt = load_checkpoint((checkpoint_path.empty()
                                           ? (fs::path(cfg.out_dir) / "checkpoint.bin").string()
                                           : checkpoint_path));
    load_checkpoint_into(*pipe, ckpt);
    EvalArtifacts art = evaluate_pipeline(*pipe);
    write_snapshot(cfg);
    write_out(cfg, "metrics.csv", art.metrics.to_csv());
    io::save_matrix_csv(art.predictions, (fs::path(cfg.out_dir) / "predictions.csv").string());
    write_out(cfg, "truth.csv", art.truth_csv);
    std::cout << art.metrics.to_csv();
    return 0;
}

MetricReport metrics_from_predictions(const Pipeline& pipe, const Eigen::MatrixXd& predictions,
                                      const std::string& truth_csv_path) {
    std::ifstream is(truth_csv_path);
    if (!is) throw ValidationError("cannot open truth file: " + truth_csv_path);
    std::string line;
    std::getline(is, line);  // header
    if (pipe.cfg.task == TaskKind::LinkPrediction) {
        std::vector<Eigen::VectorXd> scores;
        std::vector<int> truth;
        std::size_t row = 0;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            auto cells = io::split_csv_line(line);
            truth.push_back(std::stoi(cells[1]));
            scores.push_back(predictions.row(static_cast<Eigen::Index>(row)).transpose());
            ++row;
        }
        return evaluate_link(scores, truth, {10, 50, 100});
    }
    if (pipe.cfg.task == TaskKind::NodeClassification) {
        std::vector<int> pred, truth;
        std::size_t row = 0;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            auto cells = io::split_csv_line(line);
            if (cells[2] == "t") {
                Eigen::Index best = 0;
                predictions.row(static_cast<Eigen::Index>(row)).maxCoeff(&best);
                pred.push_back(static_cast<int>(best));
                truth.push_back(std::stoi(cells[1]));
            }
            ++row;
        }
        const int classes = static_cast<int>(predictions.cols());
        int minority = 0;
        if (pipe.node_data) minority = std::stoi(pipe.node->meta().at("node.minority_class"));
        return evaluate_node(pred, truth, classes, minority);
    }
    std::vector<double> p, y;
    std::size_t row = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto cells = io::split_csv_line(line);
        for (std::size_t j = 2; j < cells.size(); ++j) {
            p.push_back(predictions(static_cast<Eigen::Index>(row),
                                    static_cast<Eigen::Index>(j - 2)));
            y.push_back(std::stod(cells[j]));
        }
        ++row;
    }
    Eigen::VectorXd pv = Eigen::Map<Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
    Eigen::VectorXd yv = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
    return evaluate_traffic(pv, yv);
}

int cmd_interpret(const CommonOpts& opts, const std::string& predictions_path,
                  const std::string& predictions2_path, const std::string& truth_path,
                  const std::string& band_spec, double freq_above, const std::string& basis_path) {
    RunConfig cfg = load_config(opts);
    auto pipe = build_pipeline(cfg);
    const std::string pred_path =
        predictions_path.empty() ? (fs::path(cfg.out_dir) / "predictions.csv").string()
                                 : predictions_path;
    const std::string truth_file =
        truth_path.empty() ? (fs::path(cfg.out_dir) / "truth.csv").string() : truth_path;
    Eigen::MatrixXd predictions = io::load_matrix(pred_path);

    // Basis over the graph the prediction signals live on.
    SpectralBasis basis;
    if (!basis_path.empty() && fs::exists(basis_path)) {
        basis = load_basis(basis_path);
    } else {
        auto edges = interpretation_edges(*pipe);
        NodeId n_signal = predictions.cols();
        NormalizedLaplacian lap = build_laplacian(edges, n_signal, /*strict=*/false);
        SpectralParams sp = cfg.spectral;
        if (sp.s <= 0) sp.s = static_cast<int>(lap.size());
        if (sp.r <= 0) sp.r = std::max(1, std::min<int>(sp.s - sp.p, 64));
        sp.seed = derive_seed(cfg.seed, "spectral");
        basis = nystrom_eig(lap, sp);
        if (static_cast<NodeId>(lap.size()) != n_signal) {
            throw ValidationError("interpretation graph dropped isolated nodes; signals would "
                                  "misalign (provide a connected graph)");
        }
        if (!basis_path.empty()) save_basis(basis, basis_path);
        save_basis(basis, (fs::path(cfg.out_dir) / "basis.bin").string());
    }

    Band band;
    if (!band_spec.empty()) {
        const auto dots = band_spec.find("..");
        if (dots == std::string::npos) {
            throw ValidationError("--band expects 'lo..hi' (half-open index range)");
        }
        band = band_from_range(std::stoi(band_spec.substr(0, dots)),
                               std::stoi(band_spec.substr(dots + 2)), basis.rank());
    } else if (freq_above >= 0.0) {
        band = band_from_frequency(basis, freq_above);
    }

    const bool inter = !predictions2_path.empty();
    Eigen::MatrixXd donor;
    if (inter) donor = io::load_matrix(predictions2_path);

    MetricReport before = metrics_from_predictions(*pipe, predictions, truth_file);
    Eigen::MatrixXd perturbed(predictions.rows(), predictions.cols());
    Eigen::VectorXd energy = Eigen::VectorXd::Zero(basis.rank());
    for (Eigen::Index i = 0; i < predictions.rows(); ++i) {
        const Eigen::VectorXd y = predictions.row(i).transpose();
        Eigen::VectorXd spec = gft(basis, y, GftDirection::Forward);
        const double norm = spec.norm();
        if (norm > 0) energy += (spec / norm).cwiseAbs2();
        if (inter) {
            // Donor band content transplanted into the base predictions.
            perturbed.row(i) =
                inter_perturb(basis, donor.row(i).transpose(), y, band).transpose();
        } else {
            perturbed.row(i) = intra_perturb(basis, y, band).transpose();
        }
    }
    energy /= std::max<double>(1, predictions.rows());
    MetricReport after = metrics_from_predictions(*pipe, perturbed, truth_file);

    write_snapshot(cfg);
    io::save_matrix_csv(perturbed,
                        (fs::path(cfg.out_dir) / "perturbed_predictions.csv").string());
    {
        std::ostringstream os;
        os << "metric,original,perturbed,delta\n";
        char buf[64];
        for (const auto& [name, v0] : before.values) {
            const double v1 = after.get(name);
            os << name;
            std::snprintf(buf, sizeof(buf), ",%.9g", v0);
            os << buf;
            std::snprintf(buf, sizeof(buf), ",%.9g", v1);
            os << buf;
            std::snprintf(buf, sizeof(buf), ",%.9g", v1 - v0);
            os << buf << "\n";
        }
        write_out(cfg, "delta_metrics.csv", os.str());
        std::cout << os.str();
    }
    {
        std::ostringstream os;
        os << "index,eigenvalue,energy\n";
        char buf[96];
        for (int i = 0; i < basis.rank(); ++i) {
            std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", i, basis.eigenvalues(i), energy(i));
            os << buf;
        }
        write_out(cfg, "spectrum.csv", os.str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continuous-time dynamic graph learning and interpretation"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string checkpoint_path, predictions_path, predictions2_path, truth_path, band_spec,
        basis_path;
    double freq_above = -1.0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config_path, "config file (INI sections)")->required();
        sub->add_option("--seed", opts.seed_override, "override run.seed");
        sub->add_option("--out", opts.out_override, "override run.out");
    };

    CLI::App* ingest = app.add_subcommand("ingest", "validate a dataset and write a summary");
    add_common(ingest);
    CLI::App* cluster = app.add_subcommand("cluster", "fit the cluster model");
    add_common(cluster);
    CLI::App* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
    add_common(train_cmd);
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(eval_cmd);
    eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint path (default out dir)");
    CLI::App* interpret =
        app.add_subcommand("interpret", "perturb predictions in the graph Fourier domain");
    add_common(interpret);
    interpret->add_option("--predictions", predictions_path, "prediction matrix (default out dir)");
    interpret->add_option("--predictions2", predictions2_path,
                          "donor predictions: runs inter-perturbation");
    interpret->add_option("--truth", truth_path, "truth file written by eval");
    interpret->add_option("--band", band_spec, "eigen-index band 'lo..hi'");
    interpret->add_option("--freq-above", freq_above, "band of frequencies above this value");
    interpret->add_option("--basis", basis_path, "load/save the spectral basis here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage problems map to exit code 1
    }

    try {
        if (app.got_subcommand(ingest)) return cmd_ingest(opts);
        if (app.got_subcommand(cluster)) return cmd_cluster(opts);
        if (app.got_subcommand(train_cmd)) return cmd_train(opts);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(opts, checkpoint_path);
        if (app.got_subcommand(interpret)) {
            return cmd_interpret(opts, predictions_path, predictions2_path, truth_path, band_spec,
                                 freq_above, basis_path);
        }
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
