// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ermcal/data.hpp"
#include "ermcal/harness.hpp"
#include "ermcal/metrics.hpp"
#include "ermcal/models.hpp"

using namespace ermcal;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

PredictionSet random_set(std::mt19937_64& rng, std::size_t n, Space space) {
    std::uniform_real_distribution<double> prob(0.0, 1.0), logit(-5.0, 5.0);
    std::bernoulli_distribution coin(0.5);
    std::vector<double> v(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = space == Space::Probability ? prob(rng) : logit(rng);
        y[i] = coin(rng) ? 1 : 0;
    }
    return PredictionSet(std::move(v), std::move(y), space);
}

std::size_t random_size(std::mt19937_64& rng, std::size_t max) {
    return std::uniform_int_distribution<std::size_t>(1, max)(rng);
}

Outcome oracle_equivalence() {
    std::mt19937_64 rng(1001);
    double worst_primal = 0.0, worst_dual = 0.0;
    for (int t = 0; t < 200; ++t) {
        const auto p = random_set(rng, random_size(rng, 12), Space::Probability);
        worst_primal = std::max(worst_primal, std::abs(smooth_ce(p).value - witness_oracle(p, 1.0, 1.0, 1e-4)));
        const auto g = random_set(rng, random_size(rng, 12), Space::Logit);
        worst_dual = std::max(worst_dual, std::abs(dual_smooth_ce(g).value - witness_oracle(g, 0.25, 1.0, 1e-4)));
    }
    return {worst_primal <= 2e-4 && worst_dual <= 2e-4,
            "max |smce - oracle| = " + fmt("%.3g", worst_primal) + ", max |dual - oracle| = " + fmt("%.3g", worst_dual)};
}

Outcome primal_sandwich() {
    std::mt19937_64 rng(1002);
    double worst_low = -1e9, worst_high = -1e9;
    for (int t = 0; t < 100; ++t) {
        const auto p = random_set(rng, random_size(rng, 200), Space::Probability);
        const double s = smooth_ce(p).value, g = pgap_sq(p);
        worst_low = std::max(worst_low, s * s - g);
        worst_high = std::max(worst_high, g - 2.0 * s);
    }
    return {worst_low <= 1e-6 && worst_high <= 1e-6,
            "max(smce^2 - pgap) = " + fmt("%.3g", worst_low) + ", max(pgap - 2 smce) = " + fmt("%.3g", worst_high)};
}

Outcome dual_sandwich() {
    std::mt19937_64 rng(1003);
    double worst_low = -1e9, worst_high = -1e9;
    for (int t = 0; t < 100; ++t) {
        const auto g = random_set(rng, random_size(rng, 200), Space::Logit);
        const double d = dual_smooth_ce(g).value, gap = pgap_logistic(g);
        worst_low = std::max(worst_low, 2.0 * d * d - gap);
        worst_high = std::max(worst_high, gap + 1e-6 - 4.0 * d);
    }
    return {worst_low <= 1e-6 && worst_high <= 2e-6, "max(2 dual^2 - gap) = " + fmt("%.3g", worst_low) +
                                                         ", max(gap + 1e-6 - 4 dual) = " + fmt("%.3g", worst_high)};
}

Outcome primal_dual_ordering() {
    std::mt19937_64 rng(1004);
    double worst = -1e9;
    for (int t = 0; t < 100; ++t) {
        const auto g = random_set(rng, random_size(rng, 200), Space::Logit);
        worst = std::max(worst, smooth_ce(g.to_probability()).value - dual_smooth_ce(g).value);
    }
    return {worst <= 1e-9, "max(smce(sigmoid g) - dual(g)) = " + fmt("%.3g", worst)};
}

Outcome closed_regime_bound() {
    Outcome o;
    for (long long n : {200LL, 500LL}) {
        const LabeledDataset d = gen_toy(n, derive_seed({1005, static_cast<std::uint64_t>(n)}), 1);
        const KernelSpec spec(KernelFamily::Laplace, median_heuristic(d.X).sigma);
        for (double lambda : {0.05, 0.1}) {
            const FitResult r = fit_krr(d.X, d.y, spec, lambda);
            const double s = smooth_ce(to_prediction_set(r.model, predict(r.model, d.X), d.y)).value;
            const double bound = smce_bound(r.model, r.report);
            o.pass = o.pass && *r.report.err_n == 0.0 && s <= bound + 1e-6;
            o.detail += "n=" + std::to_string(n) + " lambda=" + fmt("%g", lambda) + ": " + fmt("%.4f", s) +
                        " <= " + fmt("%.4f", bound) + "; ";
        }
    }
    return o;
}

Outcome norm_budgets() {
    Outcome o;
    const LabeledDataset d = gen_toy(150, 1006, 2);
    const KernelSpec spec(KernelFamily::Laplace, median_heuristic(d.X).sigma);
    double l0 = 0.0;
    for (int v : d.y) l0 += v * v;
    l0 /= static_cast<double>(d.size());
    double krr_slack = -1e9, klr_slack = -1e9;
    for (double lambda : {1e-2, 3e-2, 1e-1, 3e-1, 1.0}) {
        const FitResult krr = fit_krr(d.X, d.y, spec, lambda);
        krr_slack = std::max(krr_slack, krr.model.hilbert_norm() - std::sqrt(l0 / lambda));
        KlrOptions opts;
        opts.max_iter = 50000;
        opts.estimate_err_n = false;
        const FitResult klr = fit_klr(d.X, d.y, spec, lambda, opts);
        o.pass = o.pass && klr.report.converged;
        klr_slack = std::max(klr_slack, klr.model.hilbert_norm() - std::sqrt(std::log(2.0) / lambda));
    }
    o.pass = o.pass && krr_slack <= 1e-8 && klr_slack <= 1e-4;
    o.detail = "max KRR norm - budget = " + fmt("%.3g", krr_slack) + ", max KLR norm - budget = " + fmt("%.3g", klr_slack);
    return o;
}

Outcome gradients() {
    std::mt19937_64 rng(1007);
    std::normal_distribution<double> z(0.0, 0.5);
    double worst_rel = 0.0;
    for (int t = 0; t < 20; ++t) {
        const LabeledDataset d = gen_toy(10 + t, derive_seed({1007, static_cast<std::uint64_t>(t)}), 2);
        KernelModel m;
        m.loss = LossFamily::Logistic;
        m.lambda = 0.01 * (t + 1);
        m.kernel = KernelSpec(t % 2 ? KernelFamily::Laplace : KernelFamily::Gaussian, 1.0);
        m.support = d.X;
        m.coeffs = Vector(d.X.rows());
        for (Eigen::Index i = 0; i < m.coeffs.size(); ++i) m.coeffs(i) = z(rng);
        m.bias = z(rng);
        const Vector g = objective_gradient(m, d.X, d.y);
        for (Eigen::Index k = 0; k <= m.coeffs.size(); ++k) {
            const double h = 1e-5;
            KernelModel plus = m, minus = m;
            (k < m.coeffs.size() ? plus.coeffs(k) : plus.bias) += h;
            (k < m.coeffs.size() ? minus.coeffs(k) : minus.bias) -= h;
            const double fd = (objective(plus, d.X, d.y) - objective(minus, d.X, d.y)) / (2.0 * h);
            worst_rel = std::max(worst_rel, std::abs(fd - g(k)) / std::max(1.0, std::abs(g(k))));
        }
    }
    double worst_krr = 0.0;
    for (int t = 0; t < 5; ++t) {
        const LabeledDataset d = gen_toy(200, derive_seed({1017, static_cast<std::uint64_t>(t)}), 2);
        const KernelSpec spec(t % 2 ? KernelFamily::Laplace : KernelFamily::Gaussian, median_heuristic(d.X).sigma);
        const FitResult r = fit_krr(d.X, d.y, spec, 0.01 * (t + 1));
        worst_krr = std::max(worst_krr, objective_gradient(r.model, d.X, d.y).cwiseAbs().maxCoeff());
    }
    return {worst_rel <= 1e-5 && worst_krr <= 1e-8,
            "KLR max relative FD error = " + fmt("%.3g", worst_rel) + ", KRR max |grad| = " + fmt("%.3g", worst_krr)};
}

struct SweepRun {
    std::vector<std::pair<std::string, SweepResult>> results;
    std::string rows_csv;
};

SweepRun run_erm_sweeps() {
    SweepRun run;
    for (const auto& [name, cfg] : preset_configs("erm_sweeps", true)) {
        SweepResult r = run_sweep(cfg);
        run.rows_csv += "# " + name + "\n" + format_rows_csv(r.rows);
        run.results.emplace_back(name, std::move(r));
    }
    return run;
}

Outcome checks_outcome(const TrendReport& report, const std::string& check) {
    Outcome o;
    int seen = 0;
    for (const auto& c : report.checks) {
        if (c.check != check) continue;
        ++seen;
        o.pass = o.pass && c.pass;
        o.detail += c.series + " " + fmt("%.4g", c.value) + (c.detail.empty() ? "" : " (" + c.detail + ")") +
                    (c.pass ? " ok" : " FAIL") + "; ";
    }
    if (seen == 0) return {false, "no " + check + " checks produced"};
    return o;
}

Outcome erm_trends(const SweepRun& run, char part) {
    const std::map<char, std::pair<std::string, std::string>> which = {
        {'a', {"n_sweep", "spearman_n"}},
        {'b', {"lambda_sweep", "interior_argmin"}},
        {'c', {"klr_collapse", "large_lambda_collapse"}}};
    const auto& [sweep, check] = which.at(part);
    for (const auto& [name, result] : run.results) {
        if (name != sweep) continue;
        int failed_cells = 0;
        for (const auto& row : result.rows) failed_cells += row.ok ? 0 : 1;
        Outcome o = checks_outcome(assert_trends(result), check);
        if (failed_cells > 0) {
            o.pass = false;
            o.detail += std::to_string(failed_cells) + " failed rows";
        }
        return o;
    }
    return {false, "sweep " + sweep + " missing"};
}

Outcome recalibration_trend() {
    const auto configs = preset_configs("recalibration", true);
    const SweepResult r = run_sweep(configs.front().second);
    std::vector<double> ns, klr;
    std::map<long long, double> uncal;
    for (const auto& a : r.aggregates) {
        if (a.split != Split::Test || !a.mean[0]) continue;
        if (a.model == SweepModel::Klr) {
            ns.push_back(static_cast<double>(a.n));
            klr.push_back(*a.mean[0]);
        } else if (a.model == SweepModel::Uncalibrated) {
            uncal[a.n] = *a.mean[0];
        }
    }
    if (ns.size() != 3 || !uncal.count(4000)) return {false, "incomplete sweep"};
    const double rho = spearman(ns, klr);
    const bool below = klr.back() < uncal[4000];
    std::string detail = "KLR test smce";
    for (std::size_t i = 0; i < ns.size(); ++i) detail += " n=" + fmt("%g", ns[i]) + ":" + fmt("%.4f", klr[i]);
    detail += "; spearman " + fmt("%.3g", rho) + (rho <= -0.9 ? " ok" : " FAIL") + "; uncalibrated n=4000: " +
              fmt("%.4f", uncal[4000]) + (below ? " ok" : " FAIL (recalibrated is higher)");
    return {rho <= -0.9 && below, detail};
}

Outcome rff_fidelity() {
    Outcome o;
    std::mt19937_64 rng(1010);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (KernelFamily f : {KernelFamily::Gaussian, KernelFamily::Laplace}) {
        const KernelSpec spec(f, 1.0);
        const RffMap map = make_rff_map(spec, 2, 2000, derive_seed({1010, static_cast<std::uint64_t>(f)}));
        double err = 0.0;
        for (int t = 0; t < 100; ++t) {
            Vector x(2), xp(2);
            x << u(rng), u(rng);
            xp << u(rng), u(rng);
            err += std::abs(rff_features(map, x).dot(rff_features(map, xp)) - kernel_eval(spec, x, xp));
        }
        err /= 100.0;
        o.pass = o.pass && err <= 0.05;
        o.detail += std::string(to_string(f)) + " mean error " + fmt("%.4f", err) + "; ";
    }
    return o;
}

Outcome perfect_calibration() {
    const auto p = PredictionSet::probabilities({0, 1, 1, 0, 1, 0, 0}, {0, 1, 1, 0, 1, 0, 0});
    const MetricReport r = evaluate_metrics(p);
    const auto g = PredictionSet::logits({-40, 40, 40, -40}, {0, 1, 1, 0});
    const double d = dual_smooth_ce(g).value;
    const bool zero = r.smce == 0.0 && *r.pgap_sq == 0.0 && r.binned_ece == 0.0 && r.mmce == 0.0 &&
                      witness_oracle(p, 1.0, 1.0, 1e-3) == 0.0;
    return {zero, "smce=" + fmt("%g", r.smce) + " pgap_sq=" + fmt("%g", *r.pgap_sq) + " ece=" + fmt("%g", r.binned_ece) +
                      " mmce=" + fmt("%g", r.mmce) + " (dual on saturated logits: " + fmt("%.3g", d) + ")"};
}

}  // namespace

int main() {
    int failures = 0;
    const auto report = [&](int id, const std::string& name, const std::function<Outcome()>& body) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = body();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!o.pass) ++failures;
        std::printf("[%s] criterion %d: %s | %s | %.1fs\n", o.pass ? "PASS" : "FAIL", id, name.c_str(),
                    o.detail.c_str(), secs);
        std::fflush(stdout);
        return o;
    };

    report(1, "oracle equivalence (200 sets, n<=12, tol 2e-4)", [] {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o = oracle_equivalence();
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs >= 30.0) o = {false, o.detail + ", over the 30 s budget"};
        return o;
    });
    report(2, "smce^2 <= pgap_sq <= 2 smce", primal_sandwich);
    report(3, "2 dual^2 <= pgap_logistic <= 4 dual", dual_sandwich);
    report(4, "smce(sigmoid g) <= dual_smce(g)", primal_dual_ordering);
    report(5, "KRR training smce <= sqrt(lambda + err_n), 1-D Laplace", [] {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o = closed_regime_bound();
        if (std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= 60.0)
            o = {false, o.detail + "over the 60 s budget"};
        return o;
    });
    report(6, "KRR and KLR Hilbert norm budgets", norm_budgets);
    report(7, "KLR gradient vs finite differences, KRR stationarity", gradients);

    SweepRun erm;
    bool erm_ok = true;
    try {
        erm = run_erm_sweeps();
    } catch (const std::exception& e) {
        erm_ok = false;
        std::printf("erm sweep failed: %s\n", e.what());
    }
    const auto erm_part = [&](char part) {
        return [&, part] { return erm_ok ? erm_trends(erm, part) : Outcome{false, "sweep did not run"}; };
    };
    report(8, "(a) sample-size sweep Spearman <= -0.6, KRR both kernels", erm_part('a'));
    report(8, "(b) lambda sweep at n=3000 has an interior argmin", erm_part('b'));
    report(8, "(c) KLR at lambda=1e2 within 0.05 of the constant predictor", erm_part('c'));
    report(9, "recalibration: smce falls in n_re and beats the uncalibrated scores", recalibration_trend);
    report(10, "RFF fidelity, D=2000, 100 pairs", rff_fidelity);
    report(11, "determinism: repeated erm sweep gives byte-identical rows", [&] {
        if (!erm_ok) return Outcome{false, "first sweep did not run"};
        const SweepRun again = run_erm_sweeps();
        return Outcome{again.rows_csv == erm.rows_csv,
                       std::to_string(erm.rows_csv.size()) + " bytes compared"};
    });
    report(12, "perfect calibration gives exact zeros", perfect_calibration);

    std::printf("%s: %d failing line(s)\n", failures == 0 ? "ALL PASS" : "SOME FAIL", failures);
    return failures == 0 ? 0 : 1;
}
