#include <doctest.h>

#include <cmath>

#include "ermcal/data.hpp"
#include "ermcal/errors.hpp"

using namespace ermcal;

TEST_CASE("toy generator is deterministic and well-formed") {
    const LabeledDataset a = gen_toy(10, 42, 2), b = gen_toy(10, 42, 2);
    CHECK(format_dataset_csv(a) == format_dataset_csv(b));
    CHECK(a.X.rows() == 10);
    CHECK(a.X.cols() == 2);
    const LabeledDataset one = gen_toy(10, 42, 1);
    CHECK(one.X.col(0) == a.X.col(0));
    CHECK(one.y == a.y);
    CHECK_THROWS_AS(gen_toy(0, 1, 2), InputError);
    CHECK_THROWS_AS(gen_toy(5, 1, 3), InputError);
}

TEST_CASE("toy class means follow the labels") {
    const LabeledDataset d = gen_toy(20000, 1, 2);
    double pos = 0.0, neg = 0.0;
    int np = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.y[i] == 1) {
            pos += d.X(static_cast<Eigen::Index>(i), 0);
            ++np;
        } else {
            neg += d.X(static_cast<Eigen::Index>(i), 0);
        }
    }
    CHECK(pos / np == doctest::Approx(-1.0).epsilon(0.05));
    CHECK(neg / (20000 - np) == doctest::Approx(1.0).epsilon(0.05));
    CHECK(np / 20000.0 == doctest::Approx(0.5).epsilon(0.03));
}

TEST_CASE("Bayes probability of the toy mixture") {
    CHECK(bayes_probability(Vector::Zero(2)) == 0.5);
    CHECK(bayes_probability(Vector::Constant(2, -1.0)) == doctest::Approx(0.98201379));
    CHECK(bayes_probability(Vector::Constant(2, 1.0)) == doctest::Approx(0.01798621));
}

TEST_CASE("stratified subsample") {
    LabeledDataset d;
    d.X.resize(10, 1);
    for (int i = 0; i < 10; ++i) d.X(i, 0) = i;
    d.y = {1, 1, 1, 1, 1, 1, 0, 0, 0, 0};

    const LabeledDataset all = stratified_subsample(d, 10, 3);
    CHECK(all.y == d.y);
    CHECK(all.X == d.X);

    LabeledDataset big;
    big.X.resize(100, 1);
    big.y.resize(100);
    for (int i = 0; i < 100; ++i) {
        big.X(i, 0) = i;
        big.y[static_cast<std::size_t>(i)] = i < 60 ? 1 : 0;
    }
    const LabeledDataset s = stratified_subsample(big, 10, 5);
    int ones = 0;
    for (int v : s.y) ones += v;
    CHECK(ones == 6);
    CHECK(stratified_subsample(big, 10, 5).X == s.X);
    for (Eigen::Index i = 1; i < s.X.rows(); ++i) CHECK(s.X(i, 0) > s.X(i - 1, 0));
    CHECK_THROWS_AS(stratified_subsample(big, 0, 1), InputError);
    CHECK_THROWS_AS(stratified_subsample(big, 101, 1), InputError);
}

TEST_CASE("distortions") {
    const RecalibrationSet t1 = gen_miscalibrated_scores(50, Distortion::make_temperature(1.0), 8);
    const RecalibrationSet a1 = gen_miscalibrated_scores(50, Distortion::make_affine(1.0, 0.0), 8);
    const LabeledDataset toy = gen_toy(50, 8, 2);
    for (std::size_t i = 0; i < 50; ++i)
        CHECK(t1.scores[i] == bayes_logit(toy.X.row(static_cast<Eigen::Index>(i)).transpose()));
    CHECK(t1.scores == a1.scores);
    CHECK(t1.labels == toy.y);
    CHECK(*t1.space == Space::Logit);
    CHECK(parse_distortion("temperature:0.5").temperature == 0.5);
    CHECK(parse_distortion("affine:2:-1").offset == -1.0);
    CHECK_THROWS_AS(parse_distortion("scale:2"), InputError);
    CHECK_THROWS_AS(gen_miscalibrated_scores(5, Distortion::make_temperature(0.0), 1), InputError);
}

TEST_CASE("temperature 0.5 scores are visibly miscalibrated") {
    const auto base = to_prediction_set(gen_miscalibrated_scores(5000, Distortion::make_temperature(1.0), 2));
    const auto hot = to_prediction_set(gen_miscalibrated_scores(5000, Distortion::make_temperature(0.5), 2));
    CHECK(smooth_ce(hot.to_probability()).value > smooth_ce(base.to_probability()).value);
}

TEST_CASE("score files") {
    const RecalibrationSet s = parse_score_csv("score,label\n0.3,1\n0.9,0\n", "mem");
    CHECK(s.scores == std::vector<double>{0.3, 0.9});
    CHECK(s.labels == std::vector<int>{1, 0});
    CHECK_FALSE(s.space.has_value());
    CHECK_THROWS_AS(parse_score_csv("", "mem"), InputError);
    CHECK_THROWS_AS(parse_score_csv("score,label\n", "mem"), InputError);
    CHECK_THROWS_AS(parse_score_csv("score,label\n0.5,2\n", "mem"), InputError);
    try {
        parse_score_csv("# space=logit\nscore,label\n0.1,1\nabc,0\n", "mem");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 4);
    }

    const RecalibrationSet p = parse_score_csv("# space=probability\nvalue,label\n0.25,1\n", "mem");
    CHECK(*p.space == Space::Probability);
    const RecalibrationSet back = parse_score_csv(format_score_csv(p), "mem");
    CHECK(back.scores == p.scores);
    CHECK(*back.space == Space::Probability);
    CHECK_THROWS_AS(to_prediction_set(s), InputError);
    CHECK_THROWS_AS(build_recalibration_set("/nonexistent/dir/scores.csv"), IoError);
}

TEST_CASE("dataset CSV round trip") {
    const LabeledDataset d = gen_toy(7, 3, 2);
    const LabeledDataset back = parse_dataset_csv(format_dataset_csv(d));
    CHECK(back.X == d.X);
    CHECK(back.y == d.y);
    CHECK_THROWS_AS(parse_dataset_csv("x1,y\n0.5\n"), ParseError);
    CHECK_THROWS_AS(parse_dataset_csv("x1,y\n"), InputError);
}

TEST_CASE("seed derivation") {
    CHECK(derive_seed({1, 2, 3}) == derive_seed({1, 2, 3}));
    CHECK(derive_seed({1, 2, 3}) != derive_seed({1, 2, 4}));
    CHECK(derive_seed({1, 2}) != derive_seed({2, 1}));
}
