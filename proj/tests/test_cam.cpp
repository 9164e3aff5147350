#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "ctdg/cam.hpp"
#include "ctdg/errors.hpp"
#include "ctdg/params.hpp"

using namespace ctdg;

namespace {

Eigen::MatrixXd randmat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = normal(rng);
    }
    return m;
}

struct Fixture {
    EncoderConfig cfg;
    ParamStore store;
    std::vector<Eigen::VectorXd> rows;
    std::vector<QuerySpec> queries;

    Fixture(int n, int d_in, int d, std::uint64_t seed, int heads = 1) {
        cfg.layers = 1;
        cfg.heads = heads;
        cfg.dim = d;
        cfg.input_dim = d_in;
        cfg.clusters = 2;
        cfg.time_scale = 1.0;
        init_encoder_params(store, cfg, seed);
        std::mt19937_64 rng(seed + 1);
        for (int i = 0; i < n; ++i) rows.push_back(randmat(d_in, 1, rng));
        for (int i = 0; i < n; ++i) {
            QuerySpec q;
            q.row = i;
            q.t = 100.0;
            q.tbar = 90.0 + i;
            for (int j = 0; j < n; ++j) {
                q.keys.push_back(KeyRef{j, j, 50.0 + j, j % 2});
            }
            queries.push_back(q);
        }
    }
};

}  // namespace

TEST_CASE("temporal encoding closed forms") {
    Eigen::VectorXd te0 = temporal_encoding(0.0, 6);
    for (int i = 0; i < 6; i += 2) CHECK(te0(i) == 0.0);
    for (int i = 1; i < 6; i += 2) CHECK(te0(i) == 1.0);

    Eigen::VectorXd te = temporal_encoding(10000.0, 2);
    CHECK(te(0) == doctest::Approx(std::sin(10000.0)).epsilon(1e-12));
    CHECK(te(1) == doctest::Approx(std::cos(10000.0)).epsilon(1e-12));
    // Exponent progression: pair at index 2 of d=4 divides by 10000^(2/4).
    Eigen::VectorXd te4 = temporal_encoding(10000.0, 4);
    CHECK(te4(2) == doctest::Approx(std::sin(10000.0 / 100.0)).epsilon(1e-12));
    CHECK(te4(3) == doctest::Approx(std::cos(10000.0 / 100.0)).epsilon(1e-12));
    CHECK(te4(0) == doctest::Approx(std::sin(10000.0)).epsilon(1e-12));

    CHECK_THROWS_AS(temporal_encoding(1.0, 3), ValidationError);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> uni(-1e9, 1e9);
    for (int trial = 0; trial < 10000; ++trial) {
        Eigen::VectorXd v = temporal_encoding(uni(rng), 8);
        REQUIRE(v.maxCoeff() <= 1.0);
        REQUIRE(v.minCoeff() >= -1.0);
    }
}

TEST_CASE("te hook pads odd dimensions with a zero entry") {
    auto hook = make_te_hook(2.0);
    Eigen::VectorXd v = hook(10.0, 5);
    CHECK(v.size() == 5);
    CHECK(v(4) == 0.0);
    CHECK(v(0) == doctest::Approx(std::sin(5.0)));  // time divided by the scale
}

TEST_CASE("plans are reproducible and empty at ratio zero") {
    MaskPlanInput input;
    input.num_queries = 12;
    input.labels = Eigen::MatrixXd::Ones(12, 1);
    for (int i = 0; i < 12; ++i) {
        input.query_ids.push_back(i);
        std::vector<NodeId> keys;
        for (int j = 0; j < 12; ++j) keys.push_back(j);
        input.keys.push_back(keys);
    }
    MaskPlan zero = plan_masks(input, 0.0, 5);
    CHECK(zero.masked_count() == 0);
    MaskPlan a = plan_masks(input, 0.4, 99);
    MaskPlan b = plan_masks(input, 0.4, 99);
    CHECK(a.masked_query == b.masked_query);
    CHECK(a.masked_keys == b.masked_keys);
    MaskPlan c = plan_masks(input, 0.4, 100);
    CHECK(a.masked_query != c.masked_query);
}

TEST_CASE("masked fraction concentrates around the ratio") {
    MaskPlanInput input;
    input.num_queries = 10000;
    input.labels = Eigen::MatrixXd::Ones(10000, 1);
    input.query_ids.resize(10000);
    input.keys.assign(10000, {});
    for (int i = 0; i < 10000; ++i) input.query_ids[static_cast<std::size_t>(i)] = i;
    MaskPlan plan = plan_masks(input, 0.5, 31);
    const double frac = plan.masked_count() / 10000.0;
    CHECK(frac == doctest::Approx(0.5).epsilon(0.04));  // 0.5 +- 0.02
}

TEST_CASE("a query never masks itself and never loses every key") {
    MaskPlanInput input;
    input.num_queries = 40;
    input.labels = Eigen::MatrixXd::Ones(40, 1);
    for (int i = 0; i < 40; ++i) {
        input.query_ids.push_back(i);
        input.keys.push_back({i, (i + 1) % 40});  // self plus one other
    }
    MaskPlan plan = plan_masks(input, 0.9, 3);
    for (int q = 0; q < 40; ++q) {
        CHECK_FALSE(plan.key_removed(q, q));
        int removed = 0;
        for (NodeId k : input.keys[static_cast<std::size_t>(q)]) {
            removed += plan.key_removed(q, k) ? 1 : 0;
        }
        CHECK(removed < 2);
    }
}

TEST_CASE("masked_forward with an identity replacement equals the unmasked pass") {
    Fixture fx(5, 6, 4, 21);
    // Labels are the original rows and W_q is the identity, so the masked
    // query carries exactly its own content; no keys are removed.
    MaskPlan plan;
    plan.mode = MaskMode::CaM;
    plan.masked_query.assign(5, 0);
    plan.masked_query[2] = 1;
    plan.masked_keys.resize(5);
    plan.labels = Eigen::MatrixXd::Zero(5, 6);
    for (int i = 0; i < 5; ++i) plan.labels.row(i) = fx.rows[static_cast<std::size_t>(i)];

    auto run = [&](const MaskPlan* p) {
        ad::Tape tape;
        auto bound = fx.store.bind(tape, false);
        auto layers = bind_encoder(fx.store, fx.cfg, tape, bound);
        MaskedForwardProblem problem;
        problem.cfg = &fx.cfg;
        problem.layers = &layers;
        problem.base_rows = fx.rows;
        problem.queries = fx.queries;
        problem.plan = p;
        problem.w_q = tape.leaf(Eigen::MatrixXd::Identity(6, 6), false);
        problem.token = tape.leaf(Eigen::MatrixXd::Zero(6, 1), false);
        problem.time_scale = 1.0;
        auto out = masked_forward(tape, problem);
        Eigen::MatrixXd result(4, 5);
        for (int i = 0; i < 5; ++i) result.col(i) = out[static_cast<std::size_t>(i)].val();
        return result;
    };
    const Eigen::MatrixXd masked = run(&plan);
    const Eigen::MatrixXd unmasked = run(nullptr);
    CHECK((masked - unmasked).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("shared labels produce identical masked-query outputs") {
    Fixture fx(6, 5, 4, 33);
    // Two masked queries with the same label, same times and the same keys.
    for (auto& q : fx.queries) {
        q.t = 100.0;
        q.tbar = 95.0;
        q.keys.clear();
        for (int j = 2; j < 6; ++j) q.keys.push_back(KeyRef{j, j, 50.0 + j, j % 2});
    }
    MaskPlan plan;
    plan.mode = MaskMode::CaM;
    plan.masked_query.assign(6, 0);
    plan.masked_query[0] = plan.masked_query[1] = 1;
    plan.masked_keys.resize(6);
    plan.labels = Eigen::MatrixXd::Ones(6, 1);  // positive-unlabeled link labels

    ad::Tape tape;
    auto bound = fx.store.bind(tape, false);
    auto layers = bind_encoder(fx.store, fx.cfg, tape, bound);
    std::mt19937_64 rng(2);
    MaskedForwardProblem problem;
    problem.cfg = &fx.cfg;
    problem.layers = &layers;
    problem.base_rows = fx.rows;
    problem.queries = fx.queries;
    problem.plan = &plan;
    problem.w_q = tape.leaf(randmat(5, 1, rng), false);
    problem.token = tape.leaf(Eigen::MatrixXd::Zero(5, 1), false);
    auto out = masked_forward(tape, problem);
    CHECK((out[0].val() - out[1].val()).cwiseAbs().maxCoeff() == 0.0);  // bitwise
}

TEST_CASE("removing a key renormalizes the surviving attention weights") {
    // Three identical keys: equal scores. Removing one leaves the average of
    // the two survivors, which shows the weights renormalize to one.
    Fixture fx(4, 5, 4, 55);
    for (auto& q : fx.queries) {
        q.tbar = 95.0;  // equal elapsed times so intensities agree
        q.keys.clear();
        for (int j = 1; j < 4; ++j) q.keys.push_back(KeyRef{j, j, 50.0, 0});
    }
    fx.rows[2] = fx.rows[1];
    fx.rows[3] = fx.rows[1];

    MaskPlan plan;
    plan.mode = MaskMode::CaM;
    plan.masked_query.assign(4, 0);
    plan.masked_keys.resize(4);
    plan.masked_keys[0] = {3};  // remove one of the three identical keys
    plan.labels = Eigen::MatrixXd::Ones(4, 1);

    ad::Tape tape;
    auto bound = fx.store.bind(tape, false);
    auto layers = bind_encoder(fx.store, fx.cfg, tape, bound);
    MaskedForwardProblem problem;
    problem.cfg = &fx.cfg;
    problem.layers = &layers;
    problem.base_rows = fx.rows;
    problem.queries = fx.queries;
    problem.plan = &plan;
    problem.w_q = tape.leaf(Eigen::MatrixXd::Zero(5, 1), false);
    problem.token = tape.leaf(Eigen::MatrixXd::Zero(5, 1), false);
    problem.temporal = false;  // identical pair times anyway
    auto out = masked_forward(tape, problem);

    // With lambda shared (same cluster) the output is lambda * mean(values);
    // removal must leave the same mean over two identical survivors.
    CHECK((out[0].val() - out[1].val()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("masked keys are removed with zero compute") {
    Fixture fx(4, 5, 4, 77, 2);
    for (auto& q : fx.queries) {
        q.keys.clear();
        for (int j = 1; j < 4; ++j) q.keys.push_back(KeyRef{j, j, 50.0, j % 2});
    }
    MaskPlan plan;
    plan.mode = MaskMode::CaM;
    plan.masked_query.assign(4, 0);
    plan.masked_keys.resize(4);
    for (int q = 0; q < 4; ++q) plan.masked_keys[static_cast<std::size_t>(q)] = {2};
    plan.labels = Eigen::MatrixXd::Ones(4, 1);

    ad::Tape tape;
    auto bound = fx.store.bind(tape, false);
    auto layers = bind_encoder(fx.store, fx.cfg, tape, bound);
    long touches = 0;
    MaskedForwardProblem problem;
    problem.cfg = &fx.cfg;
    problem.layers = &layers;
    problem.base_rows = fx.rows;
    problem.queries = fx.queries;
    problem.plan = &plan;
    problem.w_q = tape.leaf(Eigen::MatrixXd::Zero(5, 1), false);
    problem.token = tape.leaf(Eigen::MatrixXd::Zero(5, 1), false);
    problem.value_touch_counter = &touches;
    masked_forward(tape, problem);
    // Key row 2 is removed everywhere: value vectors computed only for rows
    // 1 and 3, once per head (cached across queries).
    CHECK(touches == 2 * fx.cfg.heads);
}

TEST_CASE("special-token mode keeps keys and shares one embedding") {
    Fixture fx(4, 5, 4, 91);
    MaskPlan plan;
    plan.mode = MaskMode::SpecialToken;
    plan.masked_query.assign(4, 0);
    plan.masked_query[0] = plan.masked_query[1] = 1;
    plan.masked_keys.resize(4);
    plan.labels = Eigen::MatrixXd::Ones(4, 2);

    ad::Tape tape;
    auto bound = fx.store.bind(tape, false);
    auto layers = bind_encoder(fx.store, fx.cfg, tape, bound);
    long touches = 0;
    std::mt19937_64 rng(6);
    MaskedForwardProblem problem;
    problem.cfg = &fx.cfg;
    problem.layers = &layers;
    problem.base_rows = fx.rows;
    problem.queries = fx.queries;
    problem.plan = &plan;
    problem.w_q = tape.leaf(randmat(5, 2, rng), false);
    problem.token = tape.leaf(randmat(5, 1, rng), false);
    problem.value_touch_counter = &touches;
    auto out = masked_forward(tape, problem);
    CHECK(out.size() == 4);
    // All four keys stay in play (cached once per head across queries).
    CHECK(touches == 4 * fx.cfg.heads);
}

TEST_CASE("plan guard holds on the graph overload") {
    // Tiny graph where an aggressive ratio would strip every key.
    EventLog events = {{0, 1, EventOp::Add, 1.0}, {0, 2, EventOp::Add, 2.0}};
    DynamicGraph g(3, {}, events, Eigen::MatrixXd::Zero(3, 1), 0.0);
    Eigen::MatrixXd labels = Eigen::MatrixXd::Ones(3, 1);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        MaskPlan plan = plan_masks(g, 0.95, labels, seed);
        History h = g.neighborhood_at(0, 10.0);
        int kept = 0;
        for (const auto& e : h.entries) kept += plan.key_removed(0, e.neighbor) ? 0 : 1;
        CHECK(kept >= 1);
    }
}

TEST_CASE("mask plan serializes for debugging") {
    MaskPlanInput input;
    input.num_queries = 3;
    input.labels = Eigen::MatrixXd::Ones(3, 1);
    input.query_ids = {0, 1, 2};
    input.keys = {{1, 2}, {0, 2}, {0, 1}};
    MaskPlan plan = plan_masks(input, 0.5, 4);
    const auto path = (std::filesystem::temp_directory_path() / "plan.txt").string();
    save_mask_plan(plan, path);
    std::ifstream is(path);
    std::string first;
    std::getline(is, first);
    CHECK(first.find("seed=4") != std::string::npos);
}
