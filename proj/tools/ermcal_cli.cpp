#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "ermcal/data.hpp"
#include "ermcal/errors.hpp"
#include "ermcal/harness.hpp"
#include "ermcal/models.hpp"
#include "ermcal/plot.hpp"
#include "ermcal/text_io.hpp"

using namespace ermcal;

namespace {

constexpr const char* kWorkersEnv = "ERMCAL_WORKERS";

void print_value(const std::string& key, double v) { std::cout << key << ": " << format_double(v) << "\n"; }

int default_workers() {
    if (const char* env = std::getenv(kWorkersEnv)) {
        const long long w = parse_int(env);
        if (w < 1) throw InputError(std::string(kWorkersEnv) + " must be a positive integer");
        return static_cast<int>(w);
    }
    return 1;
}

std::string join_path(const std::string& dir, const std::string& file) {
    return (std::filesystem::path(dir) / file).string();
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

void print_report(const MetricReport& r) {
    std::cout << metric_csv_header() << "\n" << metric_csv_row(r) << "\n";
}

void print_witness(const std::string& name, const SmoothCe& s) {
    std::cout << "# " << name << " witness (value,weight,count,h)\n";
    const auto& w = s.witness;
    for (std::size_t j = 0; j < w.values.size(); ++j)
        std::cout << format_double(w.values[j]) << "," << format_double(w.weights[j]) << ","
                  << format_double(w.counts[j]) << "," << format_double(w.witness[j]) << "\n";
}

// Subcommand options.
struct GenerateOpts {
    bool toy1d = false, toy2d = false, miscalibrated = false;
    long long n = 0;
    std::uint64_t seed = 0;
    std::string distortion = "temperature:0.5";
    std::string out;
};

struct TrainOpts {
    std::string data, out, model = "krr", kernel = "gaussian", schedule;
    std::optional<double> lambda, sigma;
    long long rff = 0;
    std::uint64_t seed = 0;
    KlrOptions klr;
};

struct EvaluateOpts {
    std::string model, data, predictions, out;
    bool witness = false, dual = false;
};

struct RecalibrateOpts {
    std::string train, test, out, model = "klr", kernel = "laplace", space;
    double lambda = 0.01;
    std::optional<double> sigma;
    KlrOptions klr;
};

struct SweepOpts {
    std::string config, preset, out_dir = ".";
    bool desk = false, print_config = false;
    std::optional<int> workers;
    std::optional<std::uint64_t> master_seed;
};

struct PlotOpts {
    std::string agg, out_dir = ".", split = "test", axis = "auto";
};

int cmd_generate(const GenerateOpts& o) {
    if (o.n < 1) throw InputError("--n must be a positive integer");
    if (static_cast<int>(o.toy1d) + static_cast<int>(o.toy2d) + static_cast<int>(o.miscalibrated) != 1)
        throw InputError("choose exactly one of --toy1d, --toy2d, --miscalibrated");
    if (o.miscalibrated) {
        const RecalibrationSet set = gen_miscalibrated_scores(o.n, parse_distortion(o.distortion), o.seed);
        write_score_file(o.out, set);
    } else {
        write_dataset(o.out, gen_toy(o.n, o.seed, o.toy1d ? 1 : 2));
    }
    std::cout << "rows: " << o.n << "\npath: " << o.out << "\n";
    return 0;
}

FitResult fit(LossFamily loss, const Matrix& X, std::span<const int> y, const KernelSpec& spec, double lambda,
              long long rff, std::uint64_t seed, const KlrOptions& klr) {
    if (rff > 0) {
        const RffMap map = make_rff_map(spec, X.cols(), rff, seed);
        return loss == LossFamily::Squared ? fit_krr(X, y, map, lambda) : fit_klr(X, y, map, lambda, klr);
    }
    return loss == LossFamily::Squared ? fit_krr(X, y, spec, lambda) : fit_klr(X, y, spec, lambda, klr);
}

int cmd_train(const TrainOpts& o) {
    const LabeledDataset d = read_dataset(o.data);
    const LossFamily loss = parse_loss_family(o.model);
    const KernelFamily family = parse_kernel_family(o.kernel);
    double lambda = 0.0;
    if (o.lambda && !o.schedule.empty()) throw InputError("give either --lambda or --schedule, not both");
    if (o.lambda) {
        lambda = *o.lambda;
    } else if (!o.schedule.empty()) {
        PowerLawSchedule s;
        if (o.schedule == "gaussian_half") s = PowerLawSchedule::gaussian_half();
        else if (o.schedule == "laplace_half") s = PowerLawSchedule::laplace_half();
        else throw InputError("--schedule must be gaussian_half or laplace_half");
        lambda = s.lambda_for(family, static_cast<long long>(d.size()));
    } else {
        throw InputError("one of --lambda or --schedule is required");
    }
    if (!(lambda > 0.0)) throw InputError("--lambda must be positive");
    double sigma = 1.0;
    if (o.sigma) sigma = *o.sigma;
    else if (d.size() >= 2) sigma = median_heuristic(d.X).sigma;

    const FitResult r = fit(loss, d.X, d.y, KernelSpec(family, sigma), lambda, o.rff, o.seed, o.klr);
    write_file(o.out, serialize_model(r.model));
    std::cout << "model: " << to_string(loss) << "\nkernel: " << to_string(family) << "\n";
    print_value("sigma", sigma);
    print_value("lambda", lambda);
    print_value("objective", r.model.train_objective);
    print_value("hilbert_norm", r.model.hilbert_norm());
    std::cout << "err_n: " << (r.report.err_n ? format_double(*r.report.err_n) : std::string("not estimated")) << "\n";
    if (loss == LossFamily::Squared) {
        print_value("smce_bound", smce_bound(r.model, r.report));
        print_value("rcond", r.report.rcond);
    }
    std::cout << "iterations: " << r.report.iterations << "\n";
    print_value("final_grad_norm", r.report.final_grad_norm);
    std::cout << "converged: " << (r.report.converged ? "true" : "false") << "\npath: " << o.out << "\n";
    return 0;
}

int cmd_evaluate(const EvaluateOpts& o) {
    std::optional<PredictionSet> preds;
    if (!o.predictions.empty()) {
        if (!o.model.empty() || !o.data.empty()) throw InputError("--predictions excludes --model and --data");
        preds = read_prediction_file(o.predictions);
    } else {
        if (o.model.empty() || o.data.empty()) throw InputError("give --model and --data, or --predictions");
        const KernelModel m = deserialize_model(read_file(o.model));
        const LabeledDataset d = read_dataset(o.data);
        if (d.X.cols() != m.input_dim()) throw InputError("dataset dimension does not match the model");
        preds = to_prediction_set(m, predict(m, d.X), d.y);
    }
    if (o.dual && preds->space() != Space::Logit)
        throw InputError("dual metrics need logit-space predictions; the input is probability-space");
    const MetricReport r = evaluate_metrics(*preds);
    print_report(r);
    if (!o.out.empty()) write_file(o.out, metric_csv_header() + "\n" + metric_csv_row(r) + "\n");
    if (o.witness) {
        print_witness("smooth_ce", smooth_ce(preds->to_probability()));
        if (preds->space() == Space::Logit) print_witness("dual_smooth_ce", dual_smooth_ce(*preds));
    }
    return 0;
}

int cmd_recalibrate(const RecalibrateOpts& o) {
    RecalibrationSet train = build_recalibration_set(o.train);
    RecalibrationSet test = build_recalibration_set(o.test);
    if (!o.space.empty()) train.space = test.space = parse_space(o.space);
    if (!test.space) throw InputError("test score file has no '# space=' line; pass --space");
    const LossFamily loss = parse_loss_family(o.model);
    const KernelFamily family = parse_kernel_family(o.kernel);
    if (!(o.lambda > 0.0)) throw InputError("--lambda must be positive");

    const Matrix Xtr = train.as_inputs(), Xte = test.as_inputs();
    const double sigma = o.sigma ? *o.sigma : (Xtr.rows() >= 2 ? median_heuristic(Xtr).sigma : 1.0);
    const FitResult r = fit(loss, Xtr, train.labels, KernelSpec(family, sigma), o.lambda, 0, 0, o.klr);

    const Predictions out = predict(r.model, Xte);
    const PredictionSet before = to_prediction_set(test);
    const PredictionSet after = to_prediction_set(r.model, out, test.labels);

    RecalibrationSet written;
    written.space = after.space();
    written.labels = test.labels;
    written.source_model_id = o.test;
    written.scores.assign(after.values().begin(), after.values().end());
    write_score_file(o.out, written);

    print_value("sigma", sigma);
    print_value("lambda", o.lambda);
    print_value("smce_before", smooth_ce(before.to_probability()).value);
    print_value("smce_after", smooth_ce(after.to_probability()).value);
    std::cout << "iterations: " << r.report.iterations << "\npath: " << o.out << "\n";
    return 0;
}

void write_sweep(const SweepResult& result, const std::string& dir, const std::string& prefix) {
    write_file(join_path(dir, prefix + "sweep_rows.csv"), format_rows_csv(result.rows));
    write_file(join_path(dir, prefix + "sweep_agg.csv"), format_aggregate_csv(result.aggregates));
    std::string text, csv;
    try {
        const TrendReport t = assert_trends(result);
        text = t.text();
        csv = t.csv();
    } catch (const InputError& e) {
        text = std::string("no trend checks: ") + e.what() + "\n";
        csv = TrendReport{}.csv();
    }
    write_file(join_path(dir, prefix + "trend_report.txt"), text);
    write_file(join_path(dir, prefix + "trend_report.csv"), csv);
    std::cout << text;
}

int cmd_sweep(const SweepOpts& o) {
    if (o.config.empty() == o.preset.empty()) throw InputError("give exactly one of --config or --preset");
    std::vector<std::pair<std::string, SweepConfig>> configs;
    if (!o.config.empty()) configs.emplace_back("", load_sweep_config(o.config));
    else configs = preset_configs(o.preset, o.desk);

    const int workers = o.workers ? *o.workers : default_workers();
    for (auto& [name, cfg] : configs) {
        cfg.workers = workers;
        if (o.master_seed) cfg.master_seed = *o.master_seed;
    }
    if (o.print_config) {
        for (const auto& [name, cfg] : configs)
            std::cout << (name.empty() ? "" : "# " + name + "\n") << format_sweep_config(cfg);
        return 0;
    }
    ensure_dir(o.out_dir);
    for (const auto& [name, cfg] : configs) {
        if (!name.empty()) std::cout << "== " << name << "\n";
        const SweepResult result = run_sweep(cfg);
        write_sweep(result, o.out_dir, name.empty() ? "" : name + "_");
    }
    return 0;
}

int cmd_plot(const PlotOpts& o) {
    const auto agg = parse_aggregate_csv(read_file(o.agg));
    Split split;
    if (o.split == "test") split = Split::Test;
    else if (o.split == "train") split = Split::Train;
    else throw InputError("--split must be train or test");
    SweepAxis axis;
    if (o.axis == "auto") axis = infer_axis(agg);
    else if (o.axis == "n") axis = SweepAxis::SampleSize;
    else if (o.axis == "lambda") axis = SweepAxis::Lambda;
    else throw InputError("--axis must be auto, n or lambda");
    ensure_dir(o.out_dir);
    for (const auto& [metric, svg] : render_metric_plots(agg, axis, split)) {
        const std::string path = join_path(o.out_dir, metric + ".svg");
        write_file(path, svg);
        std::cout << "path: " << path << "\n";
    }
    return 0;
}

void add_klr_flags(CLI::App* cmd, KlrOptions& klr) {
    cmd->add_option("--max-iter", klr.max_iter, "KLR gradient descent iterations")->check(CLI::PositiveNumber);
    cmd->add_option("--step", klr.step, "KLR initial step size")->check(CLI::PositiveNumber);
    cmd->add_option("--tol", klr.tolerance, "KLR tolerance on objective decrease")->check(CLI::NonNegativeNumber);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Calibration metrics and regularized kernel ERM experiments"};
    app.require_subcommand(1, 1);

    GenerateOpts gen;
    auto* g = app.add_subcommand("generate", "Write a synthetic dataset or score file");
    g->add_flag("--toy1d", gen.toy1d, "1-D Gaussian mixture");
    g->add_flag("--toy2d", gen.toy2d, "2-D Gaussian mixture");
    g->add_flag("--miscalibrated", gen.miscalibrated, "distorted Bayes logits as a score file");
    g->add_option("--n", gen.n, "number of rows")->required();
    g->add_option("--seed", gen.seed, "random seed");
    g->add_option("--distortion", gen.distortion, "temperature:<t> or affine:<a>:<c>");
    g->add_option("--out", gen.out, "output CSV")->required();

    TrainOpts tr;
    auto* t = app.add_subcommand("train", "Fit a KRR or KLR model");
    t->add_option("--data", tr.data, "dataset CSV")->required();
    t->add_option("--model", tr.model, "krr or klr");
    t->add_option("--kernel", tr.kernel, "gaussian or laplace");
    t->add_option("--lambda", tr.lambda, "regularization strength");
    t->add_option("--schedule", tr.schedule, "gaussian_half or laplace_half power-law lambda");
    t->add_option("--sigma", tr.sigma, "bandwidth (default: median heuristic)")->check(CLI::PositiveNumber);
    t->add_option("--rff", tr.rff, "random features (0 = exact kernel)")->check(CLI::NonNegativeNumber);
    t->add_option("--seed", tr.seed, "random feature seed");
    t->add_option("--out", tr.out, "model file")->required();
    add_klr_flags(t, tr.klr);
    tr.klr.estimate_err_n = true;
    bool no_err_n = false;
    t->add_flag("--no-err-n", no_err_n, "skip the KLR reference run");

    EvaluateOpts ev;
    auto* e = app.add_subcommand("evaluate", "Compute the calibration metric panel");
    e->add_option("--model", ev.model, "model file");
    e->add_option("--data", ev.data, "dataset CSV");
    e->add_option("--predictions", ev.predictions, "prediction file with '# space=' header");
    e->add_option("--out", ev.out, "write the metric row here");
    e->add_flag("--witness", ev.witness, "dump the Lipschitz witness vectors");
    e->add_flag("--dual", ev.dual, "require dual metrics (logit-space input)");

    RecalibrateOpts rc;
    auto* r = app.add_subcommand("recalibrate", "Fit a 1-D recalibrator on scores");
    r->add_option("--train", rc.train, "training score file")->required();
    r->add_option("--test", rc.test, "test score file")->required();
    r->add_option("--out", rc.out, "recalibrated test scores")->required();
    r->add_option("--model", rc.model, "krr or klr");
    r->add_option("--kernel", rc.kernel, "gaussian or laplace");
    r->add_option("--lambda", rc.lambda, "regularization strength");
    r->add_option("--sigma", rc.sigma, "bandwidth (default: median heuristic)")->check(CLI::PositiveNumber);
    r->add_option("--space", rc.space, "override the score space: probability or logit");
    add_klr_flags(r, rc.klr);
    rc.klr.estimate_err_n = false;

    SweepOpts sw;
    auto* s = app.add_subcommand("sweep", "Run a seeded sweep and trend checks");
    s->add_option("--config", sw.config, "key=value sweep config");
    s->add_option("--preset", sw.preset, "erm_sweeps or recalibration");
    s->add_flag("--desk", sw.desk, "reduced grids and seeds for presets");
    s->add_option("--out-dir", sw.out_dir, "output directory");
    s->add_option("--workers", sw.workers, std::string("worker threads (default: ") + kWorkersEnv + " or 1)")
        ->check(CLI::PositiveNumber);
    s->add_option("--master-seed", sw.master_seed, "override the master seed");
    s->add_flag("--print-config", sw.print_config, "print the resolved configs and exit");

    PlotOpts pl;
    auto* p = app.add_subcommand("plot", "Render SVG charts from sweep_agg.csv");
    p->add_option("--agg", pl.agg, "aggregate CSV")->required();
    p->add_option("--out-dir", pl.out_dir, "output directory");
    p->add_option("--split", pl.split, "train or test");
    p->add_option("--axis", pl.axis, "auto, n or lambda");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*g) return cmd_generate(gen);
        if (*t) {
            if (no_err_n) tr.klr.estimate_err_n = false;
            return cmd_train(tr);
        }
        if (*e) return cmd_evaluate(ev);
        if (*r) return cmd_recalibrate(rc);
        if (*s) return cmd_sweep(sw);
        if (*p) return cmd_plot(pl);
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return err.exit_code();
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 1;
}
