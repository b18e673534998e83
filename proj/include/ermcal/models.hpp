#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "ermcal/kernels.hpp"
#include "ermcal/metrics.hpp"

namespace ermcal {

enum class LossFamily { Squared, Logistic };

std::string_view to_string(LossFamily f);
LossFamily parse_loss_family(std::string_view s);  // "krr"/"squared" or "klr"/"logistic"

// L2-regularized kernel model f(x) = sum_i alpha_i k(x, x_i) + b, or in the
// random-feature form f(x) = w . z(x) + b. The bias is never regularized.
// Coefficients absorb the 1/n factor of the representer expansion.
struct KernelModel {
    LossFamily loss = LossFamily::Squared;
    double lambda = 1.0;
    double bias = 0.0;
    Vector coeffs;  // alpha (exact form) or w (random-feature form)

    // Exact form: kernel + support inputs. Random-feature form: rff.
    KernelSpec kernel;
    Matrix support;
    std::optional<RffMap> rff;

    double hilbert_norm_sq = 0.0;  // alpha' K alpha, or |w|^2
    double train_objective = 0.0;

    bool uses_rff() const noexcept { return rff.has_value(); }
    Eigen::Index input_dim() const { return uses_rff() ? rff->input_dim() : support.cols(); }
    double hilbert_norm() const { return std::sqrt(std::max(hilbert_norm_sq, 0.0)); }

    // Raw output: regression value (Squared) or logit (Logistic).
    Vector decision(const Matrix& X) const;
    // Gram/feature matrix between X and the model's basis (n x coeffs).
    Matrix basis(const Matrix& X) const;
    // alpha' K alpha or w'w, recomputed from the coefficients.
    double recompute_norm_sq() const;
};

struct TrainReport {
    int iterations = 0;
    double final_grad_norm = 0.0;
    std::optional<double> err_n;  // absent when not estimated (KLR without reference run)
    bool converged = false;
    double rcond = 1.0;           // reciprocal condition estimate of the KRR system
};

struct FitResult {
    KernelModel model;
    TrainReport report;
};

// Regularized empirical risk of the model on (X, y); the norm term is
// recomputed from the coefficients.
double objective(const KernelModel& model, const Matrix& X, std::span<const int> y);

// Euclidean gradient of objective() with respect to (coeffs, bias); the last
// entry is the bias component.
Vector objective_gradient(const KernelModel& model, const Matrix& X, std::span<const int> y);

// Exact minimizer of the squared objective: solves
//   (K + n lambda I) alpha + b 1 = y,   1' alpha = 0.
FitResult fit_krr(const Matrix& X, std::span<const int> y, const KernelSpec& spec, double lambda);
// Ridge regression on random features with an unpenalized intercept.
FitResult fit_krr(const Matrix& X, std::span<const int> y, const RffMap& map, double lambda);

struct KlrOptions {
    int max_iter = 1000;
    double step = 0.01;
    double tolerance = 1e-6;       // on objective decrease between accepted steps
    int divergence_patience = 50;  // consecutive rejected steps before giving up
    bool estimate_err_n = true;    // run the 10x reference optimization
};

// Full-batch gradient descent from zero. A step that would increase the
// objective is rejected and the step size halved.
FitResult fit_klr(const Matrix& X, std::span<const int> y, const KernelSpec& spec, double lambda,
                  const KlrOptions& opts = {});
FitResult fit_klr(const Matrix& X, std::span<const int> y, const RffMap& map, double lambda,
                  const KlrOptions& opts = {});

struct Predictions {
    Vector raw;          // regression value or logit
    Vector probability;  // clipped regression value or sigmoid(logit)
};

inline constexpr double kProbabilityClip = 1e-6;

Predictions predict(const KernelModel& model, const Matrix& X);
PredictionSet to_prediction_set(const KernelModel& model, const Predictions& preds, std::span<const int> y);

// sqrt(lambda + err_n) for squared-loss models.
double smce_bound(const KernelModel& model, const TrainReport& report);

std::string serialize_model(const KernelModel& model);
KernelModel deserialize_model(std::string_view text);

}  // namespace ermcal
