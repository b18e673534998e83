#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include "ermcal/kernels.hpp"
#include "ermcal/metrics.hpp"

namespace ermcal {

enum class Provenance { SyntheticGaussian, ScoreFile, RecalibrationDerived };

struct LabeledDataset {
    Matrix X;
    std::vector<int> y;
    Provenance provenance = Provenance::SyntheticGaussian;
    std::optional<std::uint64_t> seed;

    std::size_t size() const noexcept { return y.size(); }
};

// One-dimensional scores g(x) with labels, the input of a recalibrator.
struct RecalibrationSet {
    std::vector<double> scores;
    std::vector<int> labels;
    std::string source_model_id;
    std::optional<Space> space;  // from the "# space=" header comment, if any

    Matrix as_inputs() const;  // n x 1
};

// Stateless 64-bit mixing of a list of integers into one seed.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

// y ~ Bernoulli(1/2); x | y=1 ~ N((-1,-1), I), x | y=0 ~ N((1,1), I).
// dim = 1 keeps the first coordinate of the same draw.
LabeledDataset gen_toy(long long n, std::uint64_t seed, int dim = 2);

// P(y = 1 | x) for the toy generator: sigmoid(-2 * sum(x)).
double bayes_probability(const Eigen::Ref<const Vector>& x);
double bayes_logit(const Eigen::Ref<const Vector>& x);

// Class-proportional sample without replacement (largest-remainder quotas,
// every class present in the input kept when m >= 2). Rows keep input order.
LabeledDataset stratified_subsample(const LabeledDataset& data, long long m, std::uint64_t seed);

struct Distortion {
    enum class Kind { Temperature, Affine } kind = Kind::Temperature;
    double temperature = 1.0;
    double scale = 1.0;   // affine a
    double offset = 0.0;  // affine c

    static Distortion make_temperature(double t) { return {Kind::Temperature, t, 1.0, 0.0}; }
    static Distortion make_affine(double a, double c) { return {Kind::Affine, 1.0, a, c}; }
    double apply(double logit) const;
    std::string describe() const;
};

Distortion parse_distortion(const std::string& text);  // "temperature:0.5" or "affine:a:c"

// Toy data passed through the Bayes logit and then distorted; labels are the
// true toy labels. Scores are logits.
RecalibrationSet gen_miscalibrated_scores(long long n, const Distortion& distortion, std::uint64_t seed);

// Score CSV: header "score,label" (or "value,label"), '#' comment lines,
// optional "# space=probability|logit".
RecalibrationSet parse_score_csv(const std::string& text, const std::string& source_id);
RecalibrationSet build_recalibration_set(const std::string& path);
std::string format_score_csv(const RecalibrationSet& set, const std::string& value_column = "score");
void write_score_file(const std::string& path, const RecalibrationSet& set);

// Prediction files are score files whose space declaration is mandatory.
PredictionSet read_prediction_file(const std::string& path);
PredictionSet to_prediction_set(const RecalibrationSet& set);

// Dataset CSV: header "x1,...,xd,y".
std::string format_dataset_csv(const LabeledDataset& data);
LabeledDataset parse_dataset_csv(const std::string& text);
LabeledDataset read_dataset(const std::string& path);
void write_dataset(const std::string& path, const LabeledDataset& data);

}  // namespace ermcal
