#include "ermcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "ermcal/chain_solver.hpp"
#include "ermcal/errors.hpp"
#include "ermcal/text_io.hpp"

namespace ermcal {

std::string_view to_string(Space s) { return s == Space::Probability ? "probability" : "logit"; }

Space parse_space(std::string_view s) {
    if (s == "probability") return Space::Probability;
    if (s == "logit") return Space::Logit;
    throw InputError("unknown prediction space '" + std::string(s) + "'");
}

double sigmoid(double s) {
    if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
    const double e = std::exp(s);
    return e / (1.0 + e);
}

double softplus(double s) { return std::max(s, 0.0) + std::log1p(std::exp(-std::abs(s))); }

PredictionSet::PredictionSet(std::vector<double> values, std::vector<int> labels, Space space)
    : values_(std::move(values)), labels_(std::move(labels)), space_(space) {
    if (values_.empty()) throw InputError("prediction set is empty");
    if (values_.size() != labels_.size())
        throw InputError("prediction set: values and labels differ in length");
    for (std::size_t i = 0; i < values_.size(); ++i) {
        const double v = values_[i];
        if (!std::isfinite(v)) throw InputError("prediction set: non-finite value");
        if (space_ == Space::Probability && (v < 0.0 || v > 1.0))
            throw InputError("prediction set: probability outside [0,1]");
        if (labels_[i] != 0 && labels_[i] != 1) throw InputError("prediction set: labels must be 0 or 1");
    }
}

double PredictionSet::probability(std::size_t i) const {
    return space_ == Space::Probability ? values_[i] : sigmoid(values_[i]);
}

PredictionSet PredictionSet::to_probability() const {
    if (space_ == Space::Probability) return *this;
    std::vector<double> p(values_.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = sigmoid(values_[i]);
    return PredictionSet(std::move(p), labels_, Space::Probability);
}

namespace {

struct MergedGroups {
    LipschitzWitness base;
    std::vector<double> label_sums;
};

MergedGroups merge(const PredictionSet& preds) {
    const std::size_t n = preds.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const auto vals = preds.values();
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });

    MergedGroups g;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = order[k];
        const double resid = static_cast<double>(preds.labels()[i]) - preds.probability(i);
        if (g.base.values.empty() || vals[i] != g.base.values.back()) {
            g.base.values.push_back(vals[i]);
            g.base.weights.push_back(0.0);
            g.base.counts.push_back(0.0);
            g.label_sums.push_back(0.0);
        }
        g.base.weights.back() += resid * inv_n;
        g.base.counts.back() += 1.0;
        g.label_sums.back() += preds.labels()[i];
    }
    return g;
}

std::vector<double> chain_gaps(const std::vector<double>& values, double lipschitz) {
    std::vector<double> gaps(values.size() - 1);
    for (std::size_t j = 0; j + 1 < values.size(); ++j) gaps[j] = lipschitz * (values[j + 1] - values[j]);
    return gaps;
}

SmoothCe solve_witness_lp(const PredictionSet& preds, double lipschitz) {
    SmoothCe out;
    out.witness = merge(preds).base;
    LipschitzWitness& w = out.witness;
    w.lipschitz = lipschitz;
    w.box = 1.0;
    const std::vector<double> zeros(w.values.size(), 0.0);
    std::vector<double> lin(w.weights.size());
    for (std::size_t j = 0; j < lin.size(); ++j) lin[j] = -w.weights[j];
    w.witness = solve_chain_qp(zeros, lin, chain_gaps(w.values, lipschitz), 1.0);
    double obj = 0.0;
    for (std::size_t j = 0; j < w.values.size(); ++j) obj += w.weights[j] * w.witness[j];
    w.objective = std::max(obj, 0.0);
    out.value = w.objective;
    return out;
}

}  // namespace

LipschitzWitness merge_ties(const PredictionSet& preds) { return merge(preds).base; }

SmoothCe smooth_ce(const PredictionSet& preds) {
    if (preds.space() != Space::Probability) throw InputError("smooth_ce expects probability-space predictions");
    return solve_witness_lp(preds, 1.0);
}

SmoothCe dual_smooth_ce(const PredictionSet& preds) {
    if (preds.space() != Space::Logit) throw InputError("dual_smooth_ce expects logit-space predictions");
    return solve_witness_lp(preds, 0.25);
}

double pgap_sq(const PredictionSet& preds) {
    if (preds.space() != Space::Probability) throw InputError("pgap_sq expects probability-space predictions");
    const LipschitzWitness w = merge(preds).base;
    const double inv_n = 1.0 / static_cast<double>(preds.size());
    // (1/n) sum_{i in j} (r_i - h)^2 = (c_j/n) h^2 - 2 w_j h + const
    std::vector<double> quad(w.values.size()), lin(w.values.size());
    for (std::size_t j = 0; j < quad.size(); ++j) {
        quad[j] = w.counts[j] * inv_n;
        lin[j] = -2.0 * w.weights[j];
    }
    const std::vector<double> h = solve_chain_qp(quad, lin, chain_gaps(w.values, 1.0), 1.0);
    double gain = 0.0;
    for (std::size_t j = 0; j < h.size(); ++j) gain -= quad[j] * h[j] * h[j] + lin[j] * h[j];
    return std::max(gain, 0.0);
}

double pgap_logistic(const PredictionSet& preds) {
    if (preds.space() != Space::Logit) throw InputError("pgap_logistic expects logit-space predictions");
    const MergedGroups g = merge(preds);
    const auto& vals = g.base.values;
    const auto& counts = g.base.counts;
    const std::size_t m = vals.size();
    const double inv_n = 1.0 / static_cast<double>(preds.size());
    const std::vector<double> gaps = chain_gaps(vals, 1.0);
    constexpr double box = 4.0;

    // Loss change relative to h = 0; the gap is its negated minimum.
    const auto delta = [&](const std::vector<double>& h) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j)
            acc += counts[j] * (softplus(vals[j] + h[j]) - softplus(vals[j])) - h[j] * g.label_sums[j];
        return acc * inv_n;
    };

    // Proximal Newton: each step minimizes the local quadratic model exactly
    // over the chain polytope, then backtracks along the feasible segment.
    std::vector<double> h(m, 0.0), quad(m), lin(m), grad(m), trial(m);
    double current = 0.0;
    for (int iter = 0; iter < 200; ++iter) {
        for (std::size_t j = 0; j < m; ++j) {
            const double s = sigmoid(vals[j] + h[j]);
            grad[j] = (counts[j] * s - g.label_sums[j]) * inv_n;
            quad[j] = 0.5 * counts[j] * s * (1.0 - s) * inv_n + 1e-12 * counts[j] * inv_n;
            lin[j] = grad[j] - 2.0 * quad[j] * h[j];
        }
        const std::vector<double> target = solve_chain_qp(quad, lin, gaps, box);
        double slope = 0.0;
        for (std::size_t j = 0; j < m; ++j) slope += grad[j] * (target[j] - h[j]);
        if (!(slope < -1e-18)) break;

        double t = 1.0, next = current;
        for (; t > 1e-12; t *= 0.5) {
            for (std::size_t j = 0; j < m; ++j) trial[j] = h[j] + t * (target[j] - h[j]);
            next = delta(trial);
            if (next <= current + 1e-4 * t * slope) break;
        }
        if (t <= 1e-12) break;
        const double improvement = current - next;
        h.swap(trial);
        current = next;
        if (improvement < 1e-16) break;
    }
    return std::max(-current, 0.0);
}

int default_bin_count(std::size_t n) {
    int b = static_cast<int>(std::floor(std::cbrt(static_cast<double>(n))));
    // cbrt of a perfect cube can land just below the integer.
    while (static_cast<std::size_t>(b + 1) * static_cast<std::size_t>(b + 1) * static_cast<std::size_t>(b + 1) <= n) ++b;
    return std::max(b, 1);
}

BinnedEce binned_ece(const PredictionSet& preds, std::optional<int> bins) {
    if (preds.space() != Space::Probability) throw InputError("binned_ece expects probability-space predictions");
    const int b = bins.value_or(default_bin_count(preds.size()));
    if (b <= 0) throw InputError("binned_ece: bin count must be positive");
    std::vector<double> sums(static_cast<std::size_t>(b), 0.0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double p = preds.values()[i];
        const int idx = std::min(static_cast<int>(std::floor(p * b)), b - 1);
        sums[static_cast<std::size_t>(idx)] += preds.labels()[i] - p;
    }
    double total = 0.0;
    for (double s : sums) total += std::abs(s);
    return {total / static_cast<double>(preds.size()), b};
}

double mmce(const PredictionSet& preds, const KernelSpec& spec) {
    if (preds.space() != Space::Probability) throw InputError("mmce expects probability-space predictions");
    const std::size_t n = preds.size();
    const auto p = preds.values();
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = preds.labels()[i] - p[i];
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) row += r[j] * spec.from_distance(std::abs(p[i] - p[j]));
        acc += r[i] * (r[i] + 2.0 * row);
    }
    const double radicand = acc / (static_cast<double>(n) * static_cast<double>(n));
    return std::sqrt(std::max(radicand, 0.0));
}

double mmce(const PredictionSet& preds) {
    const PredictionSet probs = preds.to_probability();
    double sigma = 1.0;
    if (probs.size() >= 2) {
        const auto v = probs.values();
        Matrix col(static_cast<Eigen::Index>(v.size()), 1);
        for (std::size_t i = 0; i < v.size(); ++i) col(static_cast<Eigen::Index>(i), 0) = v[i];
        sigma = median_heuristic(col).sigma;
    }
    return mmce(probs, KernelSpec(KernelFamily::Laplace, sigma));
}

double witness_oracle(const PredictionSet& preds, double lipschitz, double box, double step) {
    if (!(step > 0.0)) throw InputError("witness_oracle: step must be positive");
    if (!(box > 0.0) || lipschitz < 0.0) throw InputError("witness_oracle: invalid box or Lipschitz bound");
    const std::size_t n = preds.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const auto vals = preds.values();
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });

    const long half = static_cast<long>(std::floor(box / step + 1e-9));
    const std::size_t grid = static_cast<std::size_t>(2 * half + 1);
    const auto level = [&](std::size_t k) { return (static_cast<long>(k) - half) * step; };

    std::vector<double> best(grid), next(grid);
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t i = order[s];
        const double w = (preds.labels()[i] - preds.probability(i)) / static_cast<double>(n);
        if (s == 0) {
            for (std::size_t k = 0; k < grid; ++k) best[k] = w * level(k);
            continue;
        }
        const double gap = lipschitz * (vals[i] - vals[order[s - 1]]);
        const std::size_t radius = static_cast<std::size_t>(std::floor(gap / step + 1e-9));
        // Sliding-window maximum of best over [k - radius, k + radius].
        std::deque<std::size_t> window;
        std::size_t right = 0;
        for (std::size_t k = 0; k < grid; ++k) {
            while (right < grid && right <= k + radius) {
                while (!window.empty() && best[window.back()] <= best[right]) window.pop_back();
                window.push_back(right++);
            }
            while (window.front() + radius < k) window.pop_front();
            next[k] = best[window.front()] + w * level(k);
        }
        best.swap(next);
    }
    return *std::max_element(best.begin(), best.end());
}

double accuracy(const PredictionSet& preds) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int guess = preds.probability(i) >= 0.5 ? 1 : 0;
        hits += guess == preds.labels()[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

MetricReport evaluate_metrics(const PredictionSet& preds) {
    const PredictionSet probs = preds.to_probability();
    MetricReport r;
    r.n = preds.size();
    r.smce = smooth_ce(probs).value;
    r.pgap_sq = pgap_sq(probs);
    if (preds.space() == Space::Logit) {
        r.dual_smce = dual_smooth_ce(preds).value;
        r.pgap_logistic = pgap_logistic(preds);
    }
    const BinnedEce ece = binned_ece(probs);
    r.binned_ece = ece.value;
    r.bin_count = ece.bins;
    r.mmce = mmce(probs);
    r.accuracy = accuracy(probs);
    return r;
}

bool satisfies_sandwich(const MetricReport& r, double slack) {
    bool ok = r.smce >= 0.0 && r.smce <= 1.0 + slack;
    if (r.pgap_sq) ok = ok && r.smce * r.smce <= *r.pgap_sq + slack && *r.pgap_sq <= 2.0 * r.smce + slack;
    if (r.dual_smce && r.pgap_logistic) {
        const double d = *r.dual_smce;
        ok = ok && 2.0 * d * d <= *r.pgap_logistic + slack && *r.pgap_logistic <= 4.0 * d + slack;
        ok = ok && r.smce <= d + 1e-9;
    }
    return ok;
}

std::string metric_csv_header() {
    return "smce,dual_smce,pgap_sq,pgap_logistic,binned_ece,bin_count,mmce,accuracy,n";
}

namespace {
std::string opt_field(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }
std::optional<double> parse_opt(const std::string& s) {
    if (trim(s).empty()) return std::nullopt;
    return parse_double(s);
}
}  // namespace

std::string metric_csv_row(const MetricReport& r) {
    return format_double(r.smce) + "," + opt_field(r.dual_smce) + "," + opt_field(r.pgap_sq) + "," +
           opt_field(r.pgap_logistic) + "," + format_double(r.binned_ece) + "," + std::to_string(r.bin_count) +
           "," + format_double(r.mmce) + "," + format_double(r.accuracy) + "," + std::to_string(r.n);
}

MetricReport parse_metric_csv_row(std::string_view row) {
    const auto f = split(trim(row), ',');
    if (f.size() != 9) throw InputError("metric row must have 9 fields");
    MetricReport r;
    r.smce = parse_double(f[0]);
    r.dual_smce = parse_opt(f[1]);
    r.pgap_sq = parse_opt(f[2]);
    r.pgap_logistic = parse_opt(f[3]);
    r.binned_ece = parse_double(f[4]);
    r.bin_count = static_cast<int>(parse_int(f[5]));
    r.mmce = parse_double(f[6]);
    r.accuracy = parse_double(f[7]);
    r.n = static_cast<std::size_t>(parse_int(f[8]));
    return r;
}

}  // namespace ermcal
