#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ermcal/data.hpp"
#include "ermcal/kernels.hpp"
#include "ermcal/metrics.hpp"

namespace ermcal {

enum class SweepAxis { SampleSize, Lambda };

// Models a sweep can run. Constant predicts the training base rate and
// Uncalibrated passes score-file logits through unchanged; both are baselines.
enum class SweepModel { Krr, Klr, Constant, Uncalibrated };

std::string_view to_string(SweepModel m);
SweepModel parse_sweep_model(std::string_view s);

enum class DataSource { Toy1D, Toy2D, RecalibrationFile, SyntheticMiscalibrated };

// KRR lambda = n^(-exponent) per kernel family.
struct PowerLawSchedule {
    double gaussian_exponent = 0.5;
    double laplace_exponent = 1.0 / 3.0;

    double lambda_for(KernelFamily f, long long n) const;
    static PowerLawSchedule gaussian_half() { return {0.5, 1.0 / 3.0}; }
    static PowerLawSchedule laplace_half() { return {1.0 / 3.0, 0.5}; }
};

struct SweepConfig {
    SweepAxis axis = SweepAxis::SampleSize;
    std::vector<long long> n_grid = {100};  // Lambda axis uses n_grid.front()
    std::vector<double> lambda_grid = {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0};
    std::optional<double> krr_fixed_lambda;  // replaces the power law on the SampleSize axis
    PowerLawSchedule schedule = PowerLawSchedule::gaussian_half();
    double klr_lambda = 0.01;
    std::vector<KernelFamily> kernels = {KernelFamily::Gaussian, KernelFamily::Laplace};
    std::vector<SweepModel> models = {SweepModel::Krr, SweepModel::Klr};
    int seeds = 10;
    std::uint64_t master_seed = 0;
    DataSource source = DataSource::Toy1D;
    std::string recal_train_path, recal_test_path;
    Distortion distortion = Distortion::make_temperature(0.5);
    long long test_size = 2000;
    int workers = 1;
    long long exact_kernel_max_n = 4000;
    long long rff_features = 2000;
    int klr_max_iter = 1000;
    double klr_step = 0.01;
    double klr_tolerance = 1e-6;

    void validate() const;
};

// Flat key=value text, '#' comments. Unknown keys are rejected by name.
SweepConfig parse_sweep_config(const std::string& text);
SweepConfig load_sweep_config(const std::string& path);
std::string format_sweep_config(const SweepConfig& cfg);

// Log-spaced grids; integer grids are rounded and deduplicated.
std::vector<long long> log_spaced_ints(long long lo, long long hi, int points);
std::vector<double> log_spaced(double lo, double hi, int points);

enum class Split { Train, Test };

struct SweepRow {
    int seed = 0;
    long long n = 0;
    double lambda = 0.0;
    std::string kernel;  // "gaussian", "laplace" or "none"
    SweepModel model = SweepModel::Krr;
    Split split = Split::Train;
    bool ok = true;
    MetricReport metrics;
    std::string error;
};

struct AggregateRow {
    long long n = 0;
    double lambda = 0.0;
    std::string kernel;
    SweepModel model = SweepModel::Krr;
    Split split = Split::Train;
    int count = 0;  // successful seeds
    int failed = 0;
    bool single_seed = false;
    // smce, dual_smce, pgap_sq, pgap_logistic, binned_ece, mmce, accuracy
    std::vector<std::optional<double>> mean, stddev;
};

const std::vector<std::string>& aggregate_metric_names();

struct SweepResult {
    SweepAxis axis = SweepAxis::SampleSize;
    std::vector<SweepRow> rows;
    std::vector<AggregateRow> aggregates;
};

SweepResult run_sweep(const SweepConfig& config);

// Mean and unbiased (n-1) standard deviation per (n, lambda, kernel, model,
// split), skipping failed rows.
std::vector<AggregateRow> aggregate(const std::vector<SweepRow>& rows);

std::string rows_csv_header();
std::string format_rows_csv(const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_rows_csv(const std::string& text);
std::string format_aggregate_csv(const std::vector<AggregateRow>& agg);
std::vector<AggregateRow> parse_aggregate_csv(const std::string& text);

double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct TrendCheck {
    std::string check;   // spearman_n, interior_argmin, large_lambda_collapse
    std::string series;  // "<model>/<kernel>"
    double value = 0.0;
    double threshold = 0.0;
    bool pass = false;
    std::string detail;
};

struct TrendReport {
    std::vector<TrendCheck> checks;
    bool all_pass() const;
    std::string text() const;
    std::string csv() const;
};

inline constexpr double kSpearmanThreshold = -0.6;
inline constexpr double kCollapseTolerance = 0.05;
inline constexpr double kCollapseLambda = 1e2;

// Trend checks on test-split mean smooth CE. Rank and argmin checks need at
// least four grid points per (model, kernel) series; the large-lambda collapse
// check needs a KLR point at lambda = 1e2 and a constant baseline.
TrendReport assert_trends(const SweepResult& result);

// Named protocol bundles: "erm_sweeps" (sample-size and lambda sweeps on the toy
// data) and "recalibration" (recalibration of temperature-distorted scores).
// desk_scale shrinks grids and seed counts for a run of a few minutes.
std::vector<std::pair<std::string, SweepConfig>> preset_configs(const std::string& name, bool desk_scale);

}  // namespace ermcal
