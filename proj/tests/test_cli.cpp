#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ctdg/config.hpp"
#include "ctdg/io.hpp"
#include "ctdg/learn.hpp"
#include "ctdg/pipeline.hpp"
#include "ctdg/synth.hpp"

using namespace ctdg;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(CTDG_BIN) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string capture_cli(const std::string& args) {
    const auto out = (fs::temp_directory_path() / "cli_capture.txt").string();
    const std::string cmd = std::string(CTDG_BIN) + " " + args + " >" + out + " 2>&1";
    std::system(cmd.c_str());
    return io::read_text_file(out);
}

fs::path repo_data() { return fs::path(CTDG_DATA_DIR); }

// Five users, five items, everyone ends on item 5; the co-purchase graph
// over items is complete.
struct FiveUserFixture {
    fs::path dir;
    std::string config;

    FiveUserFixture() {
        dir = fs::temp_directory_path() / "ctdg_five";
        fs::create_directories(dir);
        EventLog events;
        for (int step = 0; step < 5; ++step) {
            for (NodeId u = 0; u < 5; ++u) {
                const NodeId item = (step < 4) ? (6 + (step + u) % 4) : 5;
                events.push_back(Event{u, item, EventOp::Add,
                                       1000.0 * step + 10.0 * static_cast<double>(u)});
            }
        }
        save_events(events, (dir / "events.csv").string());
        Eigen::MatrixXd features = Eigen::MatrixXd::Zero(10, 3);
        for (int i = 5; i < 10; ++i) {
            features(i, i % 3) = 1.0;
            features(i, (i + 1) % 3) = 0.25 * i;
        }
        io::save_matrix_csv(features, (dir / "features.csv").string());
        std::ostringstream cfg;
        cfg << "[run]\ntask=link\nout=" << (dir / "run").string() << "\nseed=4\n"
            << "[data]\nevents=" << (dir / "events.csv").string() << "\nfeatures="
            << (dir / "features.csv").string() << "\nn_users=5\n"
            << "[cluster]\nk=2\n"
            << "[encoder]\nlayers=1\nheads=1\ndim=4\ntime_scale=auto\n"
            << "[train]\nlr=0.05\nepochs=2\nbatch_size=4\nmask_ratio=0.3\ngamma=0.05\n"
            << "[task]\nval_frac=0.2\n";
        config = (dir / "config.ini").string();
        io::write_text_file(config, cfg.str());
    }
};

std::map<std::string, double> read_metrics(const fs::path& path) {
    std::map<std::string, double> out;
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto cells = io::split_csv_line(line);
        out[cells[0]] = std::stod(cells[1]);
    }
    return out;
}

}  // namespace

TEST_CASE("usage problems exit with code 1") {
    CHECK(run_cli("") == 1);
    CHECK(run_cli("bogus-subcommand") == 1);
    CHECK(run_cli("train") == 1);  // missing --config
}

TEST_CASE("missing dataset paths are reported as validation failures, all at once") {
    const auto dir = fs::temp_directory_path() / "ctdg_badcfg";
    fs::create_directories(dir);
    io::write_text_file((dir / "bad.ini").string(),
                        "[run]\ntask=link\n[data]\nevents=/nonexistent/events.csv\n"
                        "[train]\nlr=-1\n");
    const std::string out = capture_cli("train --config " + (dir / "bad.ini").string());
    CHECK(run_cli("train --config " + (dir / "bad.ini").string()) == 2);
    CHECK(out.find("data.events") != std::string::npos);
    CHECK(out.find("data.n_users") != std::string::npos);
    CHECK(out.find("train.lr") != std::string::npos);
}

TEST_CASE("unknown config keys are rejected by name") {
    const auto dir = fs::temp_directory_path() / "ctdg_badkey";
    fs::create_directories(dir);
    io::write_text_file((dir / "bad.ini").string(), "[run]\ntask=link\nbananas=3\n");
    const std::string out = capture_cli("train --config " + (dir / "bad.ini").string());
    CHECK(out.find("run.bananas") != std::string::npos);
}

TEST_CASE("train on the bundled 100-node set writes checkpoint, log and snapshot") {
    const auto out_dir = fs::temp_directory_path() / "ctdg_bundled";
    fs::remove_all(out_dir);
    const auto repo_root = repo_data().parent_path();
    const auto cwd = fs::current_path();
    fs::current_path(repo_root);  // the bundled config uses repo-relative paths
    const int code =
        run_cli("train --config data/synth100/config.ini --out " + out_dir.string());
    fs::current_path(cwd);
    REQUIRE(code == 0);
    CHECK(fs::exists(out_dir / "checkpoint.bin"));
    CHECK(fs::exists(out_dir / "epochs.csv"));
    CHECK(fs::exists(out_dir / "config.resolved"));
    const std::string log = io::read_text_file((out_dir / "epochs.csv").string());
    CHECK(log.rfind("epoch,lr,train_loss,val_metric", 0) == 0);
}

TEST_CASE("identical config and seed give byte-identical logs and checkpoints") {
    FiveUserFixture fx;
    const auto out1 = fs::temp_directory_path() / "ctdg_det1";
    const auto out2 = fs::temp_directory_path() / "ctdg_det2";
    fs::remove_all(out1);
    fs::remove_all(out2);
    REQUIRE(run_cli("train --config " + fx.config + " --out " + out1.string()) == 0);
    REQUIRE(run_cli("train --config " + fx.config + " --out " + out2.string()) == 0);
    CHECK(io::read_text_file((out1 / "epochs.csv").string()) ==
          io::read_text_file((out2 / "epochs.csv").string()));
    CHECK(io::read_text_file((out1 / "checkpoint.bin").string()) ==
          io::read_text_file((out2 / "checkpoint.bin").string()));
}

TEST_CASE("a perfect-oracle checkpoint evaluates to HR@10 = NDCG@10 = 1") {
    FiveUserFixture fx;
    // Build the pipeline layout for this config, zero all tensors and put
    // the whole mass on item 5's bias.
    RunConfig cfg = parse_run_config(fx.config);
    auto pipe = build_pipeline(cfg);
    Checkpoint ck;
    ck.kind = TaskKind::LinkPrediction;
    ck.encoder = pipe->enc;
    ck.params = pipe->store;
    for (int id = 0; id < ck.params.count(); ++id) ck.params.value(id).setZero();
    ck.params.value(ck.params.require("head.b_O"))(0, 0) = 10.0;  // item 5 is index 0
    const auto ck_path = (fx.dir / "oracle.bin").string();
    save_checkpoint(ck, ck_path);

    const auto out_dir = fs::temp_directory_path() / "ctdg_oracle_eval";
    fs::remove_all(out_dir);
    REQUIRE(run_cli("eval --config " + fx.config + " --checkpoint " + ck_path + " --out " +
                    out_dir.string()) == 0);
    auto metrics = read_metrics(out_dir / "metrics.csv");
    CHECK(metrics.at("hr@10") == 1.0);
    CHECK(metrics.at("ndcg@10") == 1.0);
    CHECK(fs::exists(out_dir / "predictions.csv"));
    CHECK(fs::exists(out_dir / "truth.csv"));
}

TEST_CASE("task mismatch between checkpoint and config is a validation error") {
    FiveUserFixture fx;
    RunConfig cfg = parse_run_config(fx.config);
    auto pipe = build_pipeline(cfg);
    Checkpoint ck;
    ck.kind = TaskKind::NodeClassification;  // wrong on purpose
    ck.encoder = pipe->enc;
    ck.params = pipe->store;
    const auto ck_path = (fx.dir / "wrong_task.bin").string();
    save_checkpoint(ck, ck_path);
    CHECK(run_cli("eval --config " + fx.config + " --checkpoint " + ck_path) == 2);
}

TEST_CASE("node-task reports carry macro f1, minority-class f1 and accuracy") {
    const auto dir = fs::temp_directory_path() / "ctdg_node";
    fs::remove_all(dir);
    REQUIRE(std::system((std::string(CTDG_BIN) + "-datagen node --out " + dir.string() +
                         " --nodes 30 --classes 2 --seed 3 >/dev/null 2>&1")
                            .c_str()) == 0);
    // Shrink the run so this stays a schema test.
    std::string cfg = io::read_text_file((dir / "config.ini").string());
    cfg.replace(cfg.find("epochs=15"), 9, "epochs=2");
    io::write_text_file((dir / "config.ini").string(), cfg);
    const auto out_dir = dir / "run";
    REQUIRE(run_cli("train --config " + (dir / "config.ini").string()) == 0);
    REQUIRE(run_cli("eval --config " + (dir / "config.ini").string()) == 0);
    auto metrics = read_metrics(out_dir / "metrics.csv");
    CHECK(metrics.count("macro_f1") == 1);
    CHECK(metrics.count("micro_f1") == 1);
    CHECK(metrics.count("accuracy") == 1);
}

TEST_CASE("traffic-task reports carry three-horizon metric rows") {
    const auto dir = fs::temp_directory_path() / "ctdg_traffic";
    fs::remove_all(dir);
    REQUIRE(std::system((std::string(CTDG_BIN) + "-datagen traffic --out " + dir.string() +
                         " --sensors 10 --days 3 --seed 3 >/dev/null 2>&1")
                            .c_str()) == 0);
    std::string cfg = io::read_text_file((dir / "config.ini").string());
    cfg.replace(cfg.find("epochs=10"), 9, "epochs=1");
    io::write_text_file((dir / "config.ini").string(), cfg);
    const auto out_dir = dir / "run";
    REQUIRE(run_cli("train --config " + (dir / "config.ini").string()) == 0);
    REQUIRE(run_cli("eval --config " + (dir / "config.ini").string()) == 0);
    auto metrics = read_metrics(out_dir / "metrics.csv");
    for (const std::string h : {"3", "6", "9"}) {
        CHECK(metrics.count("mae_h" + h) == 1);
        CHECK(metrics.count("rmse_h" + h) == 1);
        CHECK(metrics.count("mape_h" + h) == 1);
    }
}

TEST_CASE("interpret: empty band leaves metrics unchanged; donor transplant too") {
    FiveUserFixture fx;
    const auto out_dir = fs::temp_directory_path() / "ctdg_interp";
    fs::remove_all(out_dir);
    REQUIRE(run_cli("train --config " + fx.config + " --out " + out_dir.string()) == 0);
    REQUIRE(run_cli("eval --config " + fx.config + " --out " + out_dir.string()) == 0);

    // Empty band: zero deltas.
    REQUIRE(run_cli("interpret --config " + fx.config + " --out " + out_dir.string() +
                    " --band 0..0") == 0);
    {
        std::ifstream is(out_dir / "delta_metrics.csv");
        std::string line;
        std::getline(is, line);
        CHECK(line == "metric,original,perturbed,delta");
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            auto cells = io::split_csv_line(line);
            CHECK(std::stod(cells[3]) == 0.0);
        }
        CHECK(fs::exists(out_dir / "spectrum.csv"));
        CHECK(fs::exists(out_dir / "perturbed_predictions.csv"));
    }

    // Inter-perturbation with identical donor predictions changes nothing.
    REQUIRE(run_cli("interpret --config " + fx.config + " --out " + out_dir.string() +
                    " --band 0..2 --predictions2 " +
                    (out_dir / "predictions.csv").string()) == 0);
    {
        std::ifstream is(out_dir / "delta_metrics.csv");
        std::string line;
        std::getline(is, line);
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            auto cells = io::split_csv_line(line);
            CHECK(std::abs(std::stod(cells[3])) < 1e-12);
        }
    }

    // Band indices beyond the basis rank are rejected.
    CHECK(run_cli("interpret --config " + fx.config + " --out " + out_dir.string() +
                  " --band 0..500") == 2);
}

TEST_CASE("resolved config snapshots reproduce the run") {
    FiveUserFixture fx;
    const auto out_dir = fs::temp_directory_path() / "ctdg_snapshot";
    fs::remove_all(out_dir);
    REQUIRE(run_cli("train --config " + fx.config + " --out " + out_dir.string() +
                    " --seed 11") == 0);
    const std::string snap = io::read_text_file((out_dir / "config.resolved").string());
    CHECK(snap.find("seed=11") != std::string::npos);
    CHECK(snap.find("task=link") != std::string::npos);
    // The snapshot itself is a valid config that reproduces the epoch log.
    const auto snap_cfg = fs::temp_directory_path() / "ctdg_snapshot.ini";
    io::write_text_file(snap_cfg.string(), snap);
    const auto out2 = fs::temp_directory_path() / "ctdg_snapshot2";
    fs::remove_all(out2);
    REQUIRE(run_cli("train --config " + snap_cfg.string() + " --out " + out2.string()) == 0);
    CHECK(io::read_text_file((out_dir / "epochs.csv").string()) ==
          io::read_text_file((out2 / "epochs.csv").string()));
}

TEST_CASE("ingest and cluster write their artifacts") {
    FiveUserFixture fx;
    const auto out_dir = fs::temp_directory_path() / "ctdg_ingest";
    fs::remove_all(out_dir);
    REQUIRE(run_cli("ingest --config " + fx.config + " --out " + out_dir.string()) == 0);
    CHECK(fs::exists(out_dir / "summary.csv"));
    REQUIRE(run_cli("cluster --config " + fx.config + " --out " + out_dir.string()) == 0);
    CHECK(fs::exists(out_dir / "assignment.csv"));
    CHECK(fs::exists(out_dir / "centroids.csv"));
}
