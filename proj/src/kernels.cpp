#include "ermcal/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "ermcal/errors.hpp"

namespace ermcal {

std::string_view to_string(KernelFamily f) {
    return f == KernelFamily::Gaussian ? "gaussian" : "laplace";
}

KernelFamily parse_kernel_family(std::string_view s) {
    if (s == "gaussian" || s == "rbf") return KernelFamily::Gaussian;
    if (s == "laplace") return KernelFamily::Laplace;
    throw InputError("unknown kernel family '" + std::string(s) + "'");
}

KernelSpec::KernelSpec(KernelFamily f, double sigma) : family(f), bandwidth(sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
        throw InputError("kernel bandwidth must be positive and finite");
}

double KernelSpec::from_distance(double dist) const {
    if (family == KernelFamily::Gaussian)
        return std::exp(-dist * dist / (2.0 * bandwidth * bandwidth));
    return std::exp(-dist / bandwidth);
}

double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Vector>& x,
                   const Eigen::Ref<const Vector>& xp) {
    if (x.size() != xp.size() || x.size() == 0)
        throw InputError("kernel_eval: dimension mismatch");
    return spec.from_distance((x - xp).norm());
}

Matrix gram_matrix(const KernelSpec& spec, const Matrix& X) {
    const Eigen::Index n = X.rows();
    if (n < 1) throw InputError("gram_matrix: need at least one row");
    Matrix K(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        K(j, j) = 1.0;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            const double v = spec.from_distance((X.row(i) - X.row(j)).norm());
            K(i, j) = v;
            K(j, i) = v;
        }
    }
    return K;
}

Matrix cross_kernel(const KernelSpec& spec, const Matrix& A, const Matrix& B) {
    if (A.cols() != B.cols()) throw InputError("cross_kernel: dimension mismatch");
    Matrix K(A.rows(), B.rows());
    for (Eigen::Index j = 0; j < B.rows(); ++j)
        for (Eigen::Index i = 0; i < A.rows(); ++i)
            K(i, j) = spec.from_distance((A.row(i) - B.row(j)).norm());
    return K;
}

BandwidthChoice median_heuristic(const Matrix& X, Eigen::Index max_rows) {
    if (X.rows() < 2) throw InputError("median_heuristic: need at least two rows");
    std::vector<Eigen::Index> rows;
    if (X.rows() <= max_rows) {
        rows.resize(static_cast<std::size_t>(X.rows()));
        for (Eigen::Index i = 0; i < X.rows(); ++i) rows[static_cast<std::size_t>(i)] = i;
    } else {
        for (Eigen::Index k = 0; k < max_rows; ++k) rows.push_back(k * X.rows() / max_rows);
    }

    std::vector<double> dists;
    dists.reserve(rows.size() * (rows.size() - 1) / 2);
    for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = a + 1; b < rows.size(); ++b)
            dists.push_back((X.row(rows[a]) - X.row(rows[b])).norm());

    const std::size_t m = dists.size();
    const std::size_t mid = m / 2;
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid), dists.end());
    double med = dists[mid];
    if (m % 2 == 0) {
        const double lower = *std::max_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid));
        med = 0.5 * (lower + med);
    }
    if (!(med > 0.0)) return {1.0, true};
    return {med, false};
}

RffMap make_rff_map(const KernelSpec& spec, Eigen::Index input_dim,
                    Eigen::Index feature_count, std::uint64_t seed) {
    if (input_dim < 1 || feature_count < 1)
        throw InputError("make_rff_map: dimensions must be positive");
    RffMap map;
    map.family = spec.family;
    map.bandwidth = spec.bandwidth;
    map.seed = seed;
    map.frequencies.resize(feature_count, input_dim);
    map.phases.resize(feature_count);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    for (Eigen::Index j = 0; j < feature_count; ++j) {
        for (Eigen::Index c = 0; c < input_dim; ++c) map.frequencies(j, c) = normal(rng);
        if (spec.family == KernelFamily::Laplace) {
            // N(0, I) / |N(0, 1)| is multivariate Cauchy.
            double chi = 0.0;
            while (chi == 0.0) chi = std::abs(normal(rng));
            map.frequencies.row(j) /= chi;
        }
        map.phases(j) = phase(rng);
    }
    map.frequencies /= spec.bandwidth;
    return map;
}

Vector rff_features(const RffMap& map, const Eigen::Ref<const Vector>& x) {
    if (x.size() != map.input_dim()) throw InputError("rff_features: dimension mismatch");
    const double scale = std::sqrt(2.0 / static_cast<double>(map.feature_count()));
    Vector z = map.frequencies * x + map.phases;
    return scale * z.array().cos().matrix();
}

Matrix rff_transform(const RffMap& map, const Matrix& X) {
    if (X.cols() != map.input_dim()) throw InputError("rff_transform: dimension mismatch");
    const double scale = std::sqrt(2.0 / static_cast<double>(map.feature_count()));
    Matrix Z = X * map.frequencies.transpose();
    Z.rowwise() += map.phases.transpose();
    return scale * Z.array().cos().matrix();
}

}  // namespace ermcal
