#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "ctdg/encoder.hpp"
#include "ctdg/errors.hpp"
#include "support.hpp"

using namespace ctdg;

namespace {

Eigen::MatrixXd randmat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = normal(rng);
    }
    return m;
}

HeadVars make_head(ad::Tape& tape, const Eigen::MatrixXd& w_v, const Eigen::MatrixXd& w_q,
                   const Eigen::MatrixXd& w_k) {
    HeadVars head;
    head.w_v = tape.leaf(w_v);
    head.w_q = tape.leaf(w_q);
    head.w_k = tape.leaf(w_k);
    return head;
}

HeadVars::Intensity make_intensity(ad::Tape& tape, const Eigen::MatrixXd& w_g,
                                   const Eigen::VectorXd& b_g, const Eigen::VectorXd& w,
                                   double mu, double log_phi) {
    HeadVars::Intensity iv;
    iv.w_g = tape.leaf(w_g);
    iv.b_g = tape.leaf(b_g);
    iv.w = tape.leaf(w);
    iv.mu = tape.leaf(Eigen::MatrixXd::Constant(1, 1, mu));
    iv.log_phi = tape.leaf(Eigen::MatrixXd::Constant(1, 1, log_phi));
    return iv;
}

}  // namespace

TEST_CASE("encode_input concatenates features and cluster encodings") {
    Eigen::MatrixXd xf = Eigen::MatrixXd::Zero(4, 3);
    xf(1, 0) = 2.5;
    Eigen::MatrixXd xc = Eigen::MatrixXd::Zero(4, 5);
    for (int i = 0; i < 4; ++i) xc(i, 3) = 1.0;  // everyone in cluster 3
    Eigen::MatrixXd h0 = encode_input(xf, xc);
    CHECK(h0.cols() == 8);
    for (int i = 0; i < 4; ++i) {
        CHECK(h0(i, 3 + 3) == 1.0);
        CHECK(h0(i, 3 + 0) == 0.0);
        CHECK(h0(i, 3 + 4) == 0.0);
    }
    CHECK(h0(1, 0) == 2.5);
    // Zero features: only the cluster encoding carries signal.
    Eigen::MatrixXd h0z = encode_input(Eigen::MatrixXd::Zero(4, 3), xc);
    CHECK(h0z.leftCols(3).cwiseAbs().sum() == 0.0);
    CHECK(h0z.rightCols(5).sum() == 4.0);
}

TEST_CASE("SA score with unit query and key at d=4 is one half") {
    ad::Tape tape;
    HeadVars head = make_head(tape, Eigen::MatrixXd::Identity(4, 4),
                              Eigen::MatrixXd::Identity(4, 4), Eigen::MatrixXd::Identity(4, 4));
    Eigen::VectorXd e1 = Eigen::VectorXd::Unit(4, 0);
    ad::Var q = tape.leaf(e1, false);
    ad::Var e = attention_score(tape, AttentionVariant::SA, head, q, q, 0.2);
    CHECK(e.scalar() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("GAT with a = 0 scores everything zero (uniform weights downstream)") {
    ad::Tape tape;
    std::mt19937_64 rng(3);
    HeadVars head;
    head.w_k = tape.leaf(randmat(4, 6, rng));
    head.attn_a = tape.leaf(Eigen::MatrixXd::Zero(8, 1));
    ad::Var x = tape.leaf(randmat(6, 1, rng), false);
    ad::Var y = tape.leaf(randmat(6, 1, rng), false);
    CHECK(attention_score(tape, AttentionVariant::GAT, head, x, y, 0.2).scalar() == 0.0);
    CHECK(attention_score(tape, AttentionVariant::GATv2, head, x, y, 0.2).scalar() == 0.0);
}

TEST_CASE("SA scores equal brute-force dot products on a random instance") {
    std::mt19937_64 rng(17);
    const int d_in = 5, d = 4;
    Eigen::MatrixXd wq = randmat(d, d_in, rng), wk = randmat(d, d_in, rng);
    ad::Tape tape;
    HeadVars head = make_head(tape, Eigen::MatrixXd::Identity(d_in, d_in), wq, wk);
    Eigen::MatrixXd rows = randmat(5, d_in, rng);
    ad::Var q = tape.leaf(rows.row(0).transpose(), false);
    for (int i = 0; i < 5; ++i) {
        ad::Var k = tape.leaf(rows.row(i).transpose(), false);
        const double got = attention_score(tape, AttentionVariant::SA, head, q, k, 0.2).scalar();
        const double want =
            (wq * rows.row(0).transpose()).dot(wk * rows.row(i).transpose()) / std::sqrt(4.0);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("GAT and GATv2 scores match their closed forms") {
    std::mt19937_64 rng(23);
    const int d_in = 3, d = 2;
    Eigen::MatrixXd wk = randmat(d, d_in, rng);
    Eigen::VectorXd a = randmat(2 * d, 1, rng);
    ad::Tape tape;
    HeadVars head;
    head.w_k = tape.leaf(wk);
    head.attn_a = tape.leaf(a);
    Eigen::VectorXd xu = randmat(d_in, 1, rng), xi = randmat(d_in, 1, rng);
    ad::Var vu = tape.leaf(xu, false), vi = tape.leaf(xi, false);
    auto leaky = [](double v) { return v > 0 ? v : 0.2 * v; };
    Eigen::VectorXd cc(2 * d);
    cc << wk * xu, wk * xi;
    const double gat = attention_score(tape, AttentionVariant::GAT, head, vu, vi, 0.2).scalar();
    CHECK(gat == doctest::Approx(leaky(a.dot(cc))).epsilon(1e-12));
    const double gatv2 =
        attention_score(tape, AttentionVariant::GATv2, head, vu, vi, 0.2).scalar();
    CHECK(gatv2 == doctest::Approx(a.dot(cc.unaryExpr(leaky))).epsilon(1e-12));
}

TEST_CASE("endogenous encoding: singleton, symmetry and brute-force oracle") {
    std::mt19937_64 rng(31);
    const int d_in = 4, d = 4;
    EncoderConfig cfg;
    cfg.layers = 1;
    cfg.heads = 1;
    cfg.dim = d;
    cfg.input_dim = d_in;
    cfg.clusters = 1;

    Eigen::MatrixXd wv = randmat(d, d_in, rng);
    Eigen::MatrixXd rows_m = randmat(7, d_in, rng);

    ad::Tape tape;
    LayerVars layer(1);
    layer[0] = make_head(tape, wv, randmat(d, d_in, rng), randmat(d, d_in, rng));
    std::vector<ad::Var> rows;
    for (int i = 0; i < 7; ++i) rows.push_back(tape.leaf(rows_m.row(i).transpose(), false));

    // Single neighbor: s equals that neighbor's value vector.
    QuerySpec q1{0, 1.0, 1.0, {KeyRef{1, 1, 0.5, 0}}};
    ad::Var s1 = endogenous_encode(tape, layer, cfg, rows, q1);
    CHECK((s1.val() - wv * rows_m.row(1).transpose()).cwiseAbs().maxCoeff() < 1e-14);

    // Two identical neighbors: equal scores, so the average of the values.
    QuerySpec q2{0, 1.0, 1.0, {KeyRef{1, 1, 0.5, 0}, KeyRef{1, 2, 0.5, 0}}};
    ad::Var s2 = endogenous_encode(tape, layer, cfg, rows, q2);
    CHECK((s2.val() - wv * rows_m.row(1).transpose()).cwiseAbs().maxCoeff() < 1e-12);

    // Six neighbors against the direct softmax-weighted sum.
    QuerySpec q6{0, 1.0, 1.0, {}};
    for (int i = 1; i <= 6; ++i) q6.keys.push_back(KeyRef{i, i, 0.1 * i, 0});
    ad::Var s6 = endogenous_encode(tape, layer, cfg, rows, q6);
    {
        Eigen::MatrixXd wq = layer[0].w_q.val(), wk = layer[0].w_k.val();
        Eigen::VectorXd qv = wq * rows_m.row(0).transpose();
        Eigen::VectorXd scores(6);
        for (int i = 1; i <= 6; ++i) {
            scores(i - 1) = qv.dot(wk * rows_m.row(i).transpose()) / std::sqrt(double(d));
        }
        Eigen::VectorXd w = (scores.array() - scores.maxCoeff()).exp();
        w /= w.sum();
        Eigen::VectorXd want = Eigen::VectorXd::Zero(d);
        for (int i = 1; i <= 6; ++i) want += w(i - 1) * (wv * rows_m.row(i).transpose());
        CHECK((s6.val() - want).cwiseAbs().maxCoeff() < 1e-12);
    }

    // Softmax weights over neighbors sum to one: all-ones values.
    ad::Tape tape2;
    LayerVars ones_layer(1);
    ones_layer[0] = make_head(tape2, Eigen::MatrixXd::Ones(1, d_in), randmat(1, d_in, rng),
                              randmat(1, d_in, rng));
    EncoderConfig cfg1 = cfg;
    cfg1.dim = 1;
    std::vector<ad::Var> rows2;
    for (int i = 0; i < 7; ++i) rows2.push_back(tape2.leaf(rows_m.row(i).transpose(), false));
    std::vector<ad::Var> unit_rows;
    for (int i = 0; i < 7; ++i) {
        unit_rows.push_back(tape2.leaf(Eigen::VectorXd::Ones(d_in) / double(d_in), false));
    }
    QuerySpec qa{0, 1.0, 1.0, {}};
    for (int i = 1; i <= 5; ++i) qa.keys.push_back(KeyRef{i, i, 0.0, 0});
    ad::Var s = endogenous_encode(tape2, ones_layer, cfg1, unit_rows, qa);
    CHECK(std::abs(s.scalar() - 1.0) < 1e-12);

    // Empty neighborhood: zero vector plus a flag.
    bool empty = false;
    QuerySpec qe{0, 1.0, 1.0, {}};
    ad::Var se = endogenous_encode(tape, layer, cfg, rows, qe, {}, &empty);
    CHECK(empty);
    CHECK(se.val().cwiseAbs().sum() == 0.0);
}

TEST_CASE("conditional intensity closed-form values") {
    ad::Tape tape;
    const int d = 3;
    SUBCASE("softplus(0) with phi=1 is ln 2") {
        auto iv = make_intensity(tape, Eigen::MatrixXd::Zero(d, d), Eigen::VectorXd::Zero(d),
                                 Eigen::VectorXd::Zero(d), 0.0, 0.0);
        ad::Var s = tape.leaf(Eigen::VectorXd::Ones(d), false);
        ad::Var lam = conditional_intensity(tape, iv, s, 0.7, 0.2);
        CHECK(lam.scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-13));
    }
    SUBCASE("asymptote: inner value 20 gives lambda within 1e-8 of 20") {
        auto iv = make_intensity(tape, Eigen::MatrixXd::Zero(d, d), Eigen::VectorXd::Zero(d),
                                 Eigen::VectorXd::Zero(d), 20.0, 0.0);
        ad::Var s = tape.leaf(Eigen::VectorXd::Ones(d), false);
        CHECK(conditional_intensity(tape, iv, s, 0.0, 0.2).scalar() ==
              doctest::Approx(20.0).epsilon(1e-8));
    }
    SUBCASE("x=-5 and phi=0.5 give 0.5*ln(1+e^-10)") {
        auto iv = make_intensity(tape, Eigen::MatrixXd::Zero(d, d), Eigen::VectorXd::Zero(d),
                                 Eigen::VectorXd::Zero(d), -5.0, std::log(0.5));
        ad::Var s = tape.leaf(Eigen::VectorXd::Ones(d), false);
        const double want = 0.5 * std::log1p(std::exp(-10.0));
        CHECK(conditional_intensity(tape, iv, s, 0.0, 0.2).scalar() ==
              doctest::Approx(want).epsilon(1e-10));
        CHECK(conditional_intensity(tape, iv, s, 0.0, 0.2).scalar() ==
              doctest::Approx(2.2700e-5).epsilon(1e-3));
    }
    SUBCASE("negative elapsed time violates the precondition") {
        auto iv = make_intensity(tape, Eigen::MatrixXd::Zero(d, d), Eigen::VectorXd::Zero(d),
                                 Eigen::VectorXd::Zero(d), 0.0, 0.0);
        ad::Var s = tape.leaf(Eigen::VectorXd::Ones(d), false);
        CHECK_THROWS_AS(conditional_intensity(tape, iv, s, -0.5, 0.2), std::invalid_argument);
    }
}

TEST_CASE("intensity stays positive over random draws") {
    std::mt19937_64 rng(101);
    std::normal_distribution<double> normal(0.0, 2.0);
    std::uniform_real_distribution<double> uni(0.0, 5.0);
    const int d = 4;
    for (int trial = 0; trial < 10000; ++trial) {
        ad::Tape tape;
        auto iv = make_intensity(tape, randmat(d, d, rng, 2.0), randmat(d, 1, rng, 2.0),
                                 randmat(d, 1, rng, 2.0), normal(rng), normal(rng) * 0.5);
        ad::Var s = tape.leaf(randmat(d, 1, rng, 3.0), false);
        const double lam = conditional_intensity(tape, iv, s, uni(rng), 0.2).scalar();
        REQUIRE(lam > 0.0);
        REQUIRE(std::isfinite(lam));
    }
}

namespace {

struct SmallInstance {
    EncoderConfig cfg;
    std::vector<Eigen::VectorXd> rows;
    std::vector<QuerySpec> queries;
};

SmallInstance small_instance(std::mt19937_64& rng, int n, int d_in, int d, int heads,
                             int clusters) {
    SmallInstance inst;
    inst.cfg.layers = 1;
    inst.cfg.heads = heads;
    inst.cfg.dim = d;
    inst.cfg.input_dim = d_in;
    inst.cfg.clusters = clusters;
    inst.cfg.time_scale = 2.0;
    for (int i = 0; i < n; ++i) inst.rows.push_back(randmat(d_in, 1, rng));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        QuerySpec q;
        q.row = i;
        q.t = 10.0 + uni(rng);
        q.tbar = 9.0;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            q.keys.push_back(KeyRef{j, j, 5.0 + uni(rng), j % clusters});
        }
        inst.queries.push_back(q);
    }
    return inst;
}

}  // namespace

TEST_CASE("layer_forward with unit intensities reproduces plain attention bitwise") {
    std::mt19937_64 rng(7);
    SmallInstance inst = small_instance(rng, 5, 4, 6, 2, 3);

    ad::Tape tape;
    ParamStore store;
    init_encoder_params(store, inst.cfg, 77);
    auto bound = store.bind(tape, false);
    auto layers = bind_encoder(store, inst.cfg, tape, bound);
    std::vector<ad::Var> rows;
    for (const auto& r : inst.rows) rows.push_back(tape.leaf(r, false));

    ForwardHooks unit;
    unit.force_unit_intensity = true;
    auto modulated = layer_forward(tape, layers[0], inst.cfg, rows, inst.queries, unit);
    for (std::size_t i = 0; i < inst.queries.size(); ++i) {
        ad::Var plain = endogenous_encode(tape, layers[0], inst.cfg, rows, inst.queries[i]);
        REQUIRE(modulated[i].val().rows() == plain.val().rows());
        for (Eigen::Index j = 0; j < plain.val().rows(); ++j) {
            CHECK(modulated[i].val()(j, 0) == plain.val()(j, 0));  // bitwise
        }
    }
}

TEST_CASE("single neighbor with lambda=2 doubles the value vector") {
    EncoderConfig cfg;
    cfg.layers = 1;
    cfg.heads = 1;
    cfg.dim = 3;
    cfg.input_dim = 3;
    cfg.clusters = 1;
    ad::Tape tape;
    std::mt19937_64 rng(5);
    LayerVars layer(1);
    layer[0] = make_head(tape, randmat(3, 3, rng), randmat(3, 3, rng), randmat(3, 3, rng));
    // lambda = softplus(mu) with phi=1; mu = ln(e^2 - 1) makes lambda exactly 2.
    layer[0].intensity.push_back(make_intensity(tape, Eigen::MatrixXd::Zero(3, 3),
                                                Eigen::VectorXd::Zero(3),
                                                Eigen::VectorXd::Zero(3),
                                                std::log(std::exp(2.0) - 1.0), 0.0));
    std::vector<ad::Var> rows = {tape.leaf(randmat(3, 1, rng), false),
                                 tape.leaf(randmat(3, 1, rng), false)};
    QuerySpec q{0, 1.0, 1.0, {KeyRef{1, 1, 0.5, 0}}};
    auto out = layer_forward(tape, layer, cfg, rows, {q});
    Eigen::VectorXd v1 = layer[0].w_v.val() * rows[1].val();
    CHECK((out[0].val() - 2.0 * v1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two heads concatenate and match the per-head brute force") {
    std::mt19937_64 rng(13);
    SmallInstance inst = small_instance(rng, 4, 5, 8, 2, 2);
    ad::Tape tape;
    ParamStore store;
    init_encoder_params(store, inst.cfg, 3);
    auto bound = store.bind(tape, false);
    auto layers = bind_encoder(store, inst.cfg, tape, bound);
    std::vector<ad::Var> rows;
    for (const auto& r : inst.rows) rows.push_back(tape.leaf(r, false));
    auto out = layer_forward(tape, layers[0], inst.cfg, rows, inst.queries);
    REQUIRE(out[0].val().rows() == 8);

    // Brute force head by head for query 0.
    const QuerySpec& q = inst.queries[0];
    std::vector<KeyRef> keys = q.keys;
    std::sort(keys.begin(), keys.end(), [](const KeyRef& a, const KeyRef& b) { return a.id < b.id; });
    const double dt = (q.t - q.tbar) / inst.cfg.time_scale;
    Eigen::VectorXd want(8);
    for (int h = 0; h < 2; ++h) {
        const HeadVars& head = layers[0][static_cast<std::size_t>(h)];
        Eigen::MatrixXd wq = head.w_q.val(), wk = head.w_k.val(), wv = head.w_v.val();
        Eigen::VectorXd qv = wq * inst.rows[static_cast<std::size_t>(q.row)];
        Eigen::VectorXd scores(keys.size());
        for (std::size_t i = 0; i < keys.size(); ++i) {
            scores(static_cast<Eigen::Index>(i)) =
                qv.dot(wk * inst.rows[static_cast<std::size_t>(keys[i].row)]) / 2.0;
        }
        Eigen::VectorXd sm = (scores.array() - scores.maxCoeff()).exp();
        sm /= sm.sum();
        Eigen::VectorXd s = Eigen::VectorXd::Zero(4);
        for (std::size_t i = 0; i < keys.size(); ++i) {
            s += sm(static_cast<Eigen::Index>(i)) *
                 (wv * inst.rows[static_cast<std::size_t>(keys[i].row)]);
        }
        auto leaky = [](double v) { return v > 0 ? v : 0.2 * v; };
        auto lambda_of = [&](int cluster) {
            const auto& iv = head.intensity[static_cast<std::size_t>(cluster)];
            Eigen::VectorXd g =
                (iv.w_g.val() * s + iv.b_g.val() * dt).unaryExpr(leaky);
            const double x = iv.w.val().col(0).dot(g) + iv.mu.val()(0, 0);
            const double phi = std::exp(iv.log_phi.val()(0, 0));
            return phi * ad::softplus_stable(x / phi);
        };
        Eigen::VectorXd hvec = Eigen::VectorXd::Zero(4);
        for (std::size_t i = 0; i < keys.size(); ++i) {
            hvec += sm(static_cast<Eigen::Index>(i)) * lambda_of(keys[i].cluster) *
                    (wv * inst.rows[static_cast<std::size_t>(keys[i].row)]);
        }
        want.segment(4 * h, 4) = hvec;
    }
    CHECK((out[0].val().col(0) - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("permuting the neighbor list leaves the output unchanged") {
    std::mt19937_64 rng(29);
    SmallInstance inst = small_instance(rng, 6, 4, 4, 1, 2);
    auto run = [&](const std::vector<KeyRef>& keys) {
        ad::Tape tape;
        ParamStore store;
        init_encoder_params(store, inst.cfg, 11);
        auto bound = store.bind(tape, false);
        auto layers = bind_encoder(store, inst.cfg, tape, bound);
        std::vector<ad::Var> rows;
        for (const auto& r : inst.rows) rows.push_back(tape.leaf(r, false));
        QuerySpec q = inst.queries[0];
        q.keys = keys;
        return layer_forward(tape, layers[0], inst.cfg, rows, {q})[0].val();
    };
    std::vector<KeyRef> keys = inst.queries[0].keys;
    const Eigen::MatrixXd base = run(keys);
    std::reverse(keys.begin(), keys.end());
    const Eigen::MatrixXd rev = run(keys);
    CHECK((base - rev).cwiseAbs().maxCoeff() == 0.0);  // id-sorted reduction
    std::mt19937_64 shuf(4);
    std::shuffle(keys.begin(), keys.end(), shuf);
    CHECK((base - run(keys)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradient contract: layer stack gradients match finite differences") {
    std::mt19937_64 rng(43);
    for (int draw = 0; draw < 3; ++draw) {
        SmallInstance inst = small_instance(rng, 5, 4, 4, 2, 2);
        inst.cfg.layers = 2;
        ParamStore store;
        init_encoder_params(store, inst.cfg, 100 + static_cast<std::uint64_t>(draw));
        std::vector<Eigen::VectorXd> probes;
        for (std::size_t i = 0; i < inst.queries.size(); ++i) probes.push_back(randmat(4, 1, rng));

        auto objective = [&](ad::Tape& tape, const std::vector<ad::Var>& bound) {
            auto layers = bind_encoder(store, inst.cfg, tape, bound);
            std::vector<ad::Var> rows;
            for (const auto& r : inst.rows) rows.push_back(tape.leaf(r, false));
            for (int l = 0; l < inst.cfg.layers; ++l) {
                rows = layer_forward(tape, layers[static_cast<std::size_t>(l)], inst.cfg, rows,
                                     inst.queries);
            }
            ad::Var acc = tape.leaf(Eigen::MatrixXd::Zero(1, 1), false);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                acc = tape.add(acc, tape.dot(rows[i], tape.leaf(probes[i], false)));
            }
            return acc;
        };
        auto res = testing::check_gradients(store, objective, 1e-5);
        INFO("draw " << draw << " worst " << res.worst);
        CHECK(res.max_err <= 1e-3);
    }
}

TEST_CASE("encoder config validation") {
    EncoderConfig cfg;
    cfg.layers = 0;
    cfg.input_dim = 4;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.layers = 1;
    cfg.dim = 5;
    cfg.heads = 2;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    CHECK_THROWS_AS(parse_variant("bogus"), ValidationError);
}
