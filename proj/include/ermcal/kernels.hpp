#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <string_view>

namespace ermcal {

enum class KernelFamily { Gaussian, Laplace };

std::string_view to_string(KernelFamily f);
KernelFamily parse_kernel_family(std::string_view s);

// Shift-invariant kernel with unit peak:
//   Gaussian: exp(-|x - x'|^2 / (2 sigma^2))
//   Laplace:  exp(-|x - x'| / sigma)
struct KernelSpec {
    KernelFamily family = KernelFamily::Gaussian;
    double bandwidth = 1.0;

    KernelSpec() = default;
    KernelSpec(KernelFamily f, double sigma);

    // Kernel value as a function of the Euclidean distance.
    double from_distance(double dist) const;
};

// Rows of X are samples.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Vector>& x,
                   const Eigen::Ref<const Vector>& xp);

Matrix gram_matrix(const KernelSpec& spec, const Matrix& X);

// Cross kernel matrix, entry (i, j) = k(A_i, B_j).
Matrix cross_kernel(const KernelSpec& spec, const Matrix& A, const Matrix& B);

struct BandwidthChoice {
    double sigma = 1.0;
    bool fallback = false;  // all pairwise distances were zero
};

// Median of pairwise Euclidean distances over i < j. Inputs with more than
// `max_rows` rows use an evenly strided subset of that many rows.
BandwidthChoice median_heuristic(const Matrix& X, Eigen::Index max_rows = 4096);

// Random Fourier features z(x)_j = sqrt(2/D) cos(w_j . x + phi_j).
struct RffMap {
    KernelFamily family = KernelFamily::Gaussian;
    double bandwidth = 1.0;
    std::uint64_t seed = 0;
    Matrix frequencies;  // D x d
    Vector phases;       // D, in [0, 2 pi)

    Eigen::Index feature_count() const { return frequencies.rows(); }
    Eigen::Index input_dim() const { return frequencies.cols(); }
};

// Gaussian frequencies are N(0, I / sigma^2). Laplace frequencies are drawn
// from the multivariate Cauchy density (the Fourier transform of
// exp(-|x|/sigma)), which reduces to a scaled standard Cauchy for d = 1.
RffMap make_rff_map(const KernelSpec& spec, Eigen::Index input_dim,
                    Eigen::Index feature_count, std::uint64_t seed);

Vector rff_features(const RffMap& map, const Eigen::Ref<const Vector>& x);

// Feature matrix, one row per sample of X.
Matrix rff_transform(const RffMap& map, const Matrix& X);

}  // namespace ermcal
