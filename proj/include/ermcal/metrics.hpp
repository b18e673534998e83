#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ermcal/kernels.hpp"

namespace ermcal {

enum class Space { Probability, Logit };

std::string_view to_string(Space s);
Space parse_space(std::string_view s);

double sigmoid(double s);
// Softplus log(1 + e^s), overflow safe.
double softplus(double s);

// Paired predictions and binary labels. In logit space the implied
// probability is sigmoid(value).
class PredictionSet {
public:
    PredictionSet(std::vector<double> values, std::vector<int> labels, Space space);

    static PredictionSet probabilities(std::vector<double> p, std::vector<int> y) {
        return PredictionSet(std::move(p), std::move(y), Space::Probability);
    }
    static PredictionSet logits(std::vector<double> g, std::vector<int> y) {
        return PredictionSet(std::move(g), std::move(y), Space::Logit);
    }

    Space space() const noexcept { return space_; }
    std::size_t size() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    std::span<const int> labels() const noexcept { return labels_; }

    double probability(std::size_t i) const;
    // Sigmoid-mapped copy of a logit set (identity for probability sets).
    PredictionSet to_probability() const;

private:
    std::vector<double> values_;
    std::vector<int> labels_;
    Space space_;
};

// Solution of the Lipschitz-constrained witness problem over the sorted,
// tie-merged prediction values.
struct LipschitzWitness {
    std::vector<double> values;   // strictly increasing
    std::vector<double> weights;  // sum of (y_i - p_i) / n per distinct value
    std::vector<double> counts;   // samples per distinct value
    std::vector<double> witness;  // h_j
    double objective = 0.0;
    double lipschitz = 1.0;
    double box = 1.0;
};

// Sorted distinct values with aggregated residual weights; witness left empty.
LipschitzWitness merge_ties(const PredictionSet& preds);

struct SmoothCe {
    double value = 0.0;
    LipschitzWitness witness;
};

// sup over 1-Lipschitz h: [0,1] -> [-1,1] of (1/n) sum h(p_i)(y_i - p_i).
SmoothCe smooth_ce(const PredictionSet& preds);

// sup over (1/4)-Lipschitz h: R -> [-1,1] of (1/n) sum h(g_i)(y_i - sigmoid(g_i)).
SmoothCe dual_smooth_ce(const PredictionSet& preds);

// Squared-loss gain from the best 1-Lipschitz [-1,1] additive correction.
double pgap_sq(const PredictionSet& preds);

// Logistic-loss gain from the best 1-Lipschitz [-4,4] logit correction.
double pgap_logistic(const PredictionSet& preds);

struct BinnedEce {
    double value = 0.0;
    int bins = 1;
};

int default_bin_count(std::size_t n);
BinnedEce binned_ece(const PredictionSet& preds, std::optional<int> bins = std::nullopt);

double mmce(const PredictionSet& preds, const KernelSpec& spec);
// Laplace kernel with the median-heuristic bandwidth on the prediction values.
double mmce(const PredictionSet& preds);

// Grid dynamic program over h_j in {-box, -box + step, ..., box} with chain
// constraints on the raw sorted samples. Verification oracle for the LP.
double witness_oracle(const PredictionSet& preds, double lipschitz, double box, double step);

double accuracy(const PredictionSet& preds);

struct MetricReport {
    double smce = 0.0;
    std::optional<double> dual_smce;
    std::optional<double> pgap_sq;
    std::optional<double> pgap_logistic;
    double binned_ece = 0.0;
    int bin_count = 1;
    double mmce = 0.0;
    double accuracy = 0.0;
    std::size_t n = 0;
};

// Full metric panel. Probability sets get smce, pgap_sq, ece, mmce; logit sets
// additionally get the dual metrics.
MetricReport evaluate_metrics(const PredictionSet& preds);

// Checks the sandwich inequalities that every report must satisfy.
bool satisfies_sandwich(const MetricReport& r, double slack = 1e-6);

std::string metric_csv_header();
std::string metric_csv_row(const MetricReport& r);
MetricReport parse_metric_csv_row(std::string_view row);

}  // namespace ermcal
