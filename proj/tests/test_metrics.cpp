#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ctdg/errors.hpp"
#include "ctdg/metrics.hpp"

using namespace ctdg;

TEST_CASE("holdout ranked first gives HR@10 = NDCG@10 = 1") {
    Eigen::VectorXd scores(20);
    scores.setLinSpaced(20, 0.0, 1.0);
    std::vector<Eigen::VectorXd> preds = {scores};
    std::vector<int> truth = {19};  // the top-scored item
    MetricReport r = evaluate_link(preds, truth, {10});
    CHECK(r.get("hr@10") == 1.0);
    CHECK(r.get("ndcg@10") == 1.0);
}

TEST_CASE("holdout ranked second gives NDCG@10 = 1/log2(3)") {
    Eigen::VectorXd scores(20);
    scores.setLinSpaced(20, 0.0, 1.0);
    std::vector<Eigen::VectorXd> preds = {scores};
    std::vector<int> truth = {18};
    MetricReport r = evaluate_link(preds, truth, {10});
    CHECK(r.get("hr@10") == 1.0);
    CHECK(r.get("ndcg@10") == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));
    CHECK(r.get("ndcg@10") == doctest::Approx(0.63093).epsilon(1e-4));
}

TEST_CASE("holdout outside the cut contributes zero") {
    Eigen::VectorXd scores(20);
    scores.setLinSpaced(20, 0.0, 1.0);
    std::vector<Eigen::VectorXd> preds = {scores, scores};
    std::vector<int> truth = {0, 19};
    MetricReport r = evaluate_link(preds, truth, {10});
    CHECK(r.get("hr@10") == 0.5);
}

TEST_CASE("rank is invariant under positive temperature scaling") {
    Eigen::VectorXd scores(50);
    for (int i = 0; i < 50; ++i) scores(i) = std::sin(i * 1.7);
    for (int target : {0, 7, 23, 49}) {
        const int base = rank_of(scores, target);
        CHECK(rank_of((scores * 3.7).eval(), target) == base);
        CHECK(rank_of((scores * 0.01).eval(), target) == base);
    }
}

TEST_CASE("ties break deterministically by index") {
    Eigen::VectorXd scores = Eigen::VectorXd::Zero(5);
    CHECK(rank_of(scores, 0) == 1);
    CHECK(rank_of(scores, 4) == 5);
}

TEST_CASE("identical traffic predictions give zero errors") {
    Eigen::VectorXd y(4);
    y << 50, 60, 55, 62;
    MetricReport r = evaluate_traffic(y, y);
    CHECK(r.get("mae") == 0.0);
    CHECK(r.get("rmse") == 0.0);
    CHECK(r.get("mape") == 0.0);
}

TEST_CASE("traffic errors match hand-computed values") {
    Eigen::VectorXd pred(2), truth(2);
    pred << 3.0, 5.0;
    truth << 1.0, 1.0;
    MetricReport r = evaluate_traffic(pred, truth);
    CHECK(r.get("mae") == doctest::Approx(3.0));
    CHECK(r.get("rmse") == doctest::Approx(std::sqrt((4.0 + 16.0) / 2.0)));
    CHECK(r.get("mape") == doctest::Approx(3.0));
}

TEST_CASE("f1 values match hand-computed confusion matrices") {
    // Fixture 1: binary, perfect.
    {
        std::vector<int> t = {0, 1, 0, 1};
        MetricReport r = evaluate_node(t, t, 2, 1);
        CHECK(r.get("macro_f1") == 1.0);
        CHECK(r.get("micro_f1") == 1.0);
        CHECK(r.get("accuracy") == 1.0);
    }
    // Fixture 2: binary with one FP and one FN on class 1.
    // truth:  1 1 0 0 0 ; pred: 1 0 1 0 0
    // class1: tp=1 fp=1 fn=1 -> F1 = 2/4 = 0.5
    // class0: tp=2 fp=1 fn=1 -> F1 = 4/6 = 2/3
    {
        std::vector<int> truth = {1, 1, 0, 0, 0};
        std::vector<int> pred = {1, 0, 1, 0, 0};
        MetricReport r = evaluate_node(pred, truth, 2, 1);
        CHECK(r.get("micro_f1") == doctest::Approx(0.5));
        CHECK(r.get("macro_f1") == doctest::Approx(0.5 * (0.5 + 2.0 / 3.0)));
        CHECK(r.get("accuracy") == doctest::Approx(3.0 / 5.0));
    }
    // Fixture 3: three classes, one absent from predictions.
    // truth: 0 0 1 1 2 ; pred: 0 1 1 1 1
    // class0: tp=1 fp=0 fn=1 -> 2/3; class1: tp=2 fp=2 fn=0 -> 4/6 = 2/3
    // class2: tp=0 -> 0
    {
        std::vector<int> truth = {0, 0, 1, 1, 2};
        std::vector<int> pred = {0, 1, 1, 1, 1};
        MetricReport r = evaluate_node(pred, truth, 3, 2);
        CHECK(r.get("macro_f1") == doctest::Approx((2.0 / 3.0 + 2.0 / 3.0 + 0.0) / 3.0));
        CHECK(r.get("micro_f1") == 0.0);
        CHECK(r.get("accuracy") == doctest::Approx(3.0 / 5.0));
    }
}

TEST_CASE("empty test sets are rejected") {
    CHECK_THROWS_AS(evaluate_link({}, {}, {10}), ValidationError);
    CHECK_THROWS_AS(evaluate_node({}, {}, 2, 1), ValidationError);
    CHECK_THROWS_AS(evaluate_traffic(Eigen::VectorXd(), Eigen::VectorXd()), ValidationError);
}

TEST_CASE("metric report serializes in insertion order") {
    MetricReport r;
    r.set("b", 2.0);
    r.set("a", 1.0);
    CHECK(r.to_csv() == "metric,value\nb,2\na,1\n");
}
