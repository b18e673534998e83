#include "ermcal/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>
#include <tuple>

#include "ermcal/errors.hpp"
#include "ermcal/models.hpp"
#include "ermcal/text_io.hpp"

namespace ermcal {

std::string_view to_string(SweepModel m) {
    switch (m) {
        case SweepModel::Krr: return "krr";
        case SweepModel::Klr: return "klr";
        case SweepModel::Constant: return "constant";
        case SweepModel::Uncalibrated: return "uncalibrated";
    }
    return "krr";
}

SweepModel parse_sweep_model(std::string_view s) {
    if (s == "krr") return SweepModel::Krr;
    if (s == "klr") return SweepModel::Klr;
    if (s == "constant") return SweepModel::Constant;
    if (s == "uncalibrated") return SweepModel::Uncalibrated;
    throw InputError("unknown sweep model '" + std::string(s) + "'");
}

double PowerLawSchedule::lambda_for(KernelFamily f, long long n) const {
    const double p = f == KernelFamily::Gaussian ? gaussian_exponent : laplace_exponent;
    return std::pow(static_cast<double>(n), -p);
}

namespace {

bool is_baseline(SweepModel m) { return m == SweepModel::Constant || m == SweepModel::Uncalibrated; }
bool is_score_source(DataSource s) {
    return s == DataSource::RecalibrationFile || s == DataSource::SyntheticMiscalibrated;
}

std::string_view to_string(DataSource s) {
    switch (s) {
        case DataSource::Toy1D: return "toy1d";
        case DataSource::Toy2D: return "toy2d";
        case DataSource::RecalibrationFile: return "recal_file";
        case DataSource::SyntheticMiscalibrated: return "miscalibrated";
    }
    return "toy1d";
}

}  // namespace

void SweepConfig::validate() const {
    if (n_grid.empty()) throw InputError("n_grid must be nonempty");
    if (!std::is_sorted(n_grid.begin(), n_grid.end())) throw InputError("n_grid must be sorted");
    for (long long n : n_grid)
        if (n < 1) throw InputError("n_grid entries must be positive");
    if (lambda_grid.empty()) throw InputError("lambda_grid must be nonempty");
    if (!std::is_sorted(lambda_grid.begin(), lambda_grid.end())) throw InputError("lambda_grid must be sorted");
    for (double l : lambda_grid)
        if (!(l > 0.0)) throw InputError("lambda_grid entries must be positive");
    if (krr_fixed_lambda && !(*krr_fixed_lambda > 0.0)) throw InputError("krr_lambda must be positive");
    if (!(klr_lambda > 0.0)) throw InputError("klr_lambda must be positive");
    if (seeds < 1) throw InputError("seeds must be at least 1");
    if (workers < 1) throw InputError("workers must be at least 1");
    if (models.empty()) throw InputError("models must be nonempty");
    if (kernels.empty()) throw InputError("kernels must be nonempty");
    if (test_size < 1) throw InputError("test_size must be positive");
    if (rff_features < 1 || exact_kernel_max_n < 1) throw InputError("RFF settings must be positive");
    if (source == DataSource::RecalibrationFile && (recal_train_path.empty() || recal_test_path.empty()))
        throw InputError("recal_file source needs recal_train and recal_test");
    for (SweepModel m : models)
        if (m == SweepModel::Uncalibrated && !is_score_source(source))
            throw InputError("the uncalibrated baseline needs a score-file or miscalibrated source");
}

std::vector<double> log_spaced(double lo, double hi, int points) {
    if (points < 1 || !(lo > 0.0) || !(hi >= lo)) throw InputError("invalid log-spaced range");
    std::vector<double> out(static_cast<std::size_t>(points));
    if (points == 1) return {lo};
    const double a = std::log10(lo), b = std::log10(hi);
    for (int k = 0; k < points; ++k) out[static_cast<std::size_t>(k)] = std::pow(10.0, a + (b - a) * k / (points - 1));
    out.front() = lo;
    out.back() = hi;
    return out;
}

std::vector<long long> log_spaced_ints(long long lo, long long hi, int points) {
    std::vector<long long> out;
    for (double v : log_spaced(static_cast<double>(lo), static_cast<double>(hi), points)) {
        const long long r = std::llround(v);
        if (out.empty() || out.back() != r) out.push_back(r);
    }
    return out;
}

namespace {

std::vector<std::string> list_values(const std::string& v) {
    std::vector<std::string> out;
    for (const auto& part : split(v, ',')) {
        std::string t = trim(part);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
    return out;
}

}  // namespace

SweepConfig parse_sweep_config(const std::string& text) {
    SweepConfig cfg;
    const auto lines = split(text, '\n');
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const std::string line = trim(lines[ln]);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("expected key=value", ln + 1);
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "axis") {
                if (val == "sample_size") cfg.axis = SweepAxis::SampleSize;
                else if (val == "lambda") cfg.axis = SweepAxis::Lambda;
                else throw InputError("axis must be sample_size or lambda");
            } else if (key == "n_grid") {
                cfg.n_grid.clear();
                for (const auto& s : list_values(val)) cfg.n_grid.push_back(parse_int(s));
            } else if (key == "n_range") {
                const auto p = split(val, ':');
                if (p.size() != 3) throw InputError("n_range must be lo:hi:points");
                cfg.n_grid = log_spaced_ints(parse_int(p[0]), parse_int(p[1]), static_cast<int>(parse_int(p[2])));
            } else if (key == "lambda_grid") {
                cfg.lambda_grid.clear();
                for (const auto& s : list_values(val)) cfg.lambda_grid.push_back(parse_double(s));
            } else if (key == "lambda_range") {
                const auto p = split(val, ':');
                if (p.size() != 3) throw InputError("lambda_range must be lo:hi:points");
                cfg.lambda_grid = log_spaced(parse_double(p[0]), parse_double(p[1]), static_cast<int>(parse_int(p[2])));
            } else if (key == "krr_lambda") {
                if (val == "schedule") cfg.krr_fixed_lambda.reset();
                else cfg.krr_fixed_lambda = parse_double(val);
            } else if (key == "schedule") {
                if (val == "gaussian_half") cfg.schedule = PowerLawSchedule::gaussian_half();
                else if (val == "laplace_half") cfg.schedule = PowerLawSchedule::laplace_half();
                else throw InputError("schedule must be gaussian_half or laplace_half");
            } else if (key == "gaussian_exponent") {
                cfg.schedule.gaussian_exponent = parse_double(val);
            } else if (key == "laplace_exponent") {
                cfg.schedule.laplace_exponent = parse_double(val);
            } else if (key == "klr_lambda") {
                cfg.klr_lambda = parse_double(val);
            } else if (key == "kernels") {
                cfg.kernels.clear();
                for (const auto& s : list_values(val)) cfg.kernels.push_back(parse_kernel_family(s));
            } else if (key == "models") {
                cfg.models.clear();
                for (const auto& s : list_values(val)) cfg.models.push_back(parse_sweep_model(s));
            } else if (key == "seeds") {
                cfg.seeds = static_cast<int>(parse_int(val));
            } else if (key == "master_seed") {
                cfg.master_seed = static_cast<std::uint64_t>(parse_int(val));
            } else if (key == "data") {
                if (val == "toy1d") cfg.source = DataSource::Toy1D;
                else if (val == "toy2d") cfg.source = DataSource::Toy2D;
                else if (val == "recal_file") cfg.source = DataSource::RecalibrationFile;
                else if (val == "miscalibrated") cfg.source = DataSource::SyntheticMiscalibrated;
                else throw InputError("data must be toy1d, toy2d, recal_file or miscalibrated");
            } else if (key == "recal_train") {
                cfg.recal_train_path = val;
            } else if (key == "recal_test") {
                cfg.recal_test_path = val;
            } else if (key == "distortion") {
                cfg.distortion = parse_distortion(val);
            } else if (key == "test_size") {
                cfg.test_size = parse_int(val);
            } else if (key == "workers") {
                cfg.workers = static_cast<int>(parse_int(val));
            } else if (key == "exact_kernel_max_n") {
                cfg.exact_kernel_max_n = parse_int(val);
            } else if (key == "rff_features") {
                cfg.rff_features = parse_int(val);
            } else if (key == "klr_max_iter") {
                cfg.klr_max_iter = static_cast<int>(parse_int(val));
            } else if (key == "klr_step") {
                cfg.klr_step = parse_double(val);
            } else if (key == "klr_tolerance") {
                cfg.klr_tolerance = parse_double(val);
            } else {
                throw InputError("unknown config key '" + key + "'");
            }
        } catch (const ParseError&) {
            throw;
        } catch (const InputError& e) {
            throw InputError("config key '" + key + "' (line " + std::to_string(ln + 1) + "): " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

SweepConfig load_sweep_config(const std::string& path) { return parse_sweep_config(read_file(path)); }

std::string format_sweep_config(const SweepConfig& c) {
    std::ostringstream o;
    o << "axis=" << (c.axis == SweepAxis::SampleSize ? "sample_size" : "lambda") << "\n";
    o << "n_grid=";
    for (std::size_t i = 0; i < c.n_grid.size(); ++i) o << (i ? "," : "") << c.n_grid[i];
    o << "\nlambda_grid=" << join_doubles(c.lambda_grid) << "\n";
    o << "krr_lambda=" << (c.krr_fixed_lambda ? format_double(*c.krr_fixed_lambda) : "schedule") << "\n";
    o << "gaussian_exponent=" << format_double(c.schedule.gaussian_exponent) << "\n";
    o << "laplace_exponent=" << format_double(c.schedule.laplace_exponent) << "\n";
    o << "klr_lambda=" << format_double(c.klr_lambda) << "\n";
    o << "kernels=";
    for (std::size_t i = 0; i < c.kernels.size(); ++i) o << (i ? "," : "") << to_string(c.kernels[i]);
    o << "\nmodels=";
    for (std::size_t i = 0; i < c.models.size(); ++i) o << (i ? "," : "") << to_string(c.models[i]);
    o << "\nseeds=" << c.seeds << "\nmaster_seed=" << c.master_seed << "\n";
    o << "data=" << to_string(c.source) << "\n";
    if (!c.recal_train_path.empty()) o << "recal_train=" << c.recal_train_path << "\n";
    if (!c.recal_test_path.empty()) o << "recal_test=" << c.recal_test_path << "\n";
    o << "distortion=" << c.distortion.describe() << "\n";
    o << "test_size=" << c.test_size << "\nworkers=" << c.workers << "\n";
    o << "exact_kernel_max_n=" << c.exact_kernel_max_n << "\nrff_features=" << c.rff_features << "\n";
    o << "klr_max_iter=" << c.klr_max_iter << "\nklr_step=" << format_double(c.klr_step) << "\n";
    o << "klr_tolerance=" << format_double(c.klr_tolerance) << "\n";
    return o.str();
}

namespace {

struct Cell {
    SweepModel model;
    std::optional<KernelFamily> kernel;
    long long n;
    std::size_t lambda_index;
    double lambda;
    int rep;

    std::string kernel_name() const { return kernel ? std::string(to_string(*kernel)) : "none"; }
    auto key() const { return std::make_tuple(static_cast<int>(model), kernel_name(), n, lambda_index, rep); }
};

std::vector<Cell> enumerate_cells(const SweepConfig& cfg) {
    std::vector<Cell> cells;
    const bool lambda_axis = cfg.axis == SweepAxis::Lambda;
    const std::vector<long long> ns = lambda_axis ? std::vector<long long>{cfg.n_grid.front()} : cfg.n_grid;
    for (SweepModel model : cfg.models) {
        std::vector<std::optional<KernelFamily>> kernels;
        if (is_baseline(model)) kernels.push_back(std::nullopt);
        else kernels.assign(cfg.kernels.begin(), cfg.kernels.end());
        for (const auto& kernel : kernels) {
            for (long long n : ns) {
                const std::size_t lambdas = lambda_axis && !is_baseline(model) ? cfg.lambda_grid.size() : 1;
                for (std::size_t li = 0; li < lambdas; ++li) {
                    double lambda = 0.0;
                    if (lambda_axis && !is_baseline(model)) lambda = cfg.lambda_grid[li];
                    else if (model == SweepModel::Krr)
                        lambda = cfg.krr_fixed_lambda ? *cfg.krr_fixed_lambda : cfg.schedule.lambda_for(*kernel, n);
                    else if (model == SweepModel::Klr) lambda = cfg.klr_lambda;
                    for (int rep = 0; rep < cfg.seeds; ++rep) cells.push_back({model, kernel, n, li, lambda, rep});
                }
            }
        }
    }
    std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) { return a.key() < b.key(); });
    return cells;
}

struct CellData {
    LabeledDataset train, test;
    std::optional<Space> score_space;  // for score sources
};

struct SharedInputs {
    std::optional<RecalibrationSet> recal_train, recal_test;
};

LabeledDataset from_scores(const RecalibrationSet& s) {
    LabeledDataset d;
    d.X = s.as_inputs();
    d.y = s.labels;
    d.provenance = Provenance::RecalibrationDerived;
    return d;
}

CellData make_cell_data(const SweepConfig& cfg, const Cell& cell, std::uint64_t seed, const SharedInputs& shared) {
    CellData d;
    switch (cfg.source) {
        case DataSource::Toy1D:
        case DataSource::Toy2D: {
            const int dim = cfg.source == DataSource::Toy1D ? 1 : 2;
            d.train = gen_toy(cell.n, derive_seed({seed, 1}), dim);
            d.test = gen_toy(cfg.test_size, derive_seed({seed, 2}), dim);
            break;
        }
        case DataSource::SyntheticMiscalibrated:
            d.train = from_scores(gen_miscalibrated_scores(cell.n, cfg.distortion, derive_seed({seed, 1})));
            d.test = from_scores(gen_miscalibrated_scores(cfg.test_size, cfg.distortion, derive_seed({seed, 2})));
            d.score_space = Space::Logit;
            break;
        case DataSource::RecalibrationFile: {
            const LabeledDataset pool = from_scores(*shared.recal_train);
            d.train = stratified_subsample(pool, cell.n, derive_seed({seed, 1}));
            d.test = from_scores(*shared.recal_test);
            d.score_space = shared.recal_train->space.value_or(Space::Logit);
            break;
        }
    }
    return d;
}

PredictionSet scores_as_predictions(const LabeledDataset& d, Space space) {
    std::vector<double> v(d.X.col(0).data(), d.X.col(0).data() + d.X.rows());
    return PredictionSet(std::move(v), d.y, space);
}

std::pair<PredictionSet, PredictionSet> fit_and_predict(const SweepConfig& cfg, const Cell& cell,
                                                        const CellData& d, std::uint64_t seed) {
    if (cell.model == SweepModel::Uncalibrated) {
        const Space space = d.score_space.value_or(Space::Logit);
        return {scores_as_predictions(d.train, space), scores_as_predictions(d.test, space)};
    }
    if (cell.model == SweepModel::Constant) {
        const double rate = std::accumulate(d.train.y.begin(), d.train.y.end(), 0.0) / static_cast<double>(d.train.size());
        return {PredictionSet(std::vector<double>(d.train.size(), rate), d.train.y, Space::Probability),
                PredictionSet(std::vector<double>(d.test.size(), rate), d.test.y, Space::Probability)};
    }
    const double sigma = d.train.size() >= 2 ? median_heuristic(d.train.X).sigma : 1.0;
    const KernelSpec spec(*cell.kernel, sigma);
    const bool use_rff = cell.n > cfg.exact_kernel_max_n;
    FitResult fit;
    if (cell.model == SweepModel::Krr) {
        fit = use_rff ? fit_krr(d.train.X, d.train.y,
                                make_rff_map(spec, d.train.X.cols(), cfg.rff_features, derive_seed({seed, 3})),
                                cell.lambda)
                      : fit_krr(d.train.X, d.train.y, spec, cell.lambda);
    } else {
        KlrOptions opts;
        opts.max_iter = cfg.klr_max_iter;
        opts.step = cfg.klr_step;
        opts.tolerance = cfg.klr_tolerance;
        opts.estimate_err_n = false;
        fit = use_rff ? fit_klr(d.train.X, d.train.y,
                                make_rff_map(spec, d.train.X.cols(), cfg.rff_features, derive_seed({seed, 3})),
                                cell.lambda, opts)
                      : fit_klr(d.train.X, d.train.y, spec, cell.lambda, opts);
    }
    return {to_prediction_set(fit.model, predict(fit.model, d.train.X), d.train.y),
            to_prediction_set(fit.model, predict(fit.model, d.test.X), d.test.y)};
}

std::array<SweepRow, 2> run_cell(const SweepConfig& cfg, const Cell& cell, const SharedInputs& shared) {
    std::array<SweepRow, 2> rows;
    for (int s = 0; s < 2; ++s) {
        SweepRow& r = rows[static_cast<std::size_t>(s)];
        r.seed = cell.rep;
        r.n = cell.n;
        r.lambda = cell.lambda;
        r.kernel = cell.kernel_name();
        r.model = cell.model;
        r.split = s == 0 ? Split::Train : Split::Test;
    }
    const std::uint64_t seed = derive_seed({cfg.master_seed, static_cast<std::uint64_t>(cell.n),
                                            static_cast<std::uint64_t>(cell.lambda_index),
                                            cell.kernel ? static_cast<std::uint64_t>(*cell.kernel) + 1 : 0,
                                            static_cast<std::uint64_t>(cell.rep)});
    try {
        const CellData data = make_cell_data(cfg, cell, seed, shared);
        const auto [train, test] = fit_and_predict(cfg, cell, data, seed);
        rows[0].metrics = evaluate_metrics(train);
        rows[1].metrics = evaluate_metrics(test);
    } catch (const std::exception& e) {
        for (auto& r : rows) {
            r.ok = false;
            r.error = e.what();
            r.metrics = MetricReport{};
        }
    }
    return rows;
}

}  // namespace

SweepResult run_sweep(const SweepConfig& config) {
    config.validate();
    SharedInputs shared;
    if (config.source == DataSource::RecalibrationFile) {
        shared.recal_train = build_recalibration_set(config.recal_train_path);
        shared.recal_test = build_recalibration_set(config.recal_test_path);
    }
    const std::vector<Cell> cells = enumerate_cells(config);
    std::vector<std::array<SweepRow, 2>> slots(cells.size());

    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) slots[i] = run_cell(config, cells[i], shared);
    };
    const int threads = std::min<int>(config.workers, static_cast<int>(std::max<std::size_t>(cells.size(), 1)));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    }

    SweepResult result;
    result.axis = config.axis;
    for (auto& pair : slots)
        for (auto& row : pair) result.rows.push_back(std::move(row));
    result.aggregates = aggregate(result.rows);
    return result;
}

const std::vector<std::string>& aggregate_metric_names() {
    static const std::vector<std::string> names = {"smce",       "dual_smce", "pgap_sq", "pgap_logistic",
                                                   "binned_ece", "mmce",      "accuracy"};
    return names;
}

namespace {

std::vector<std::optional<double>> metric_values(const MetricReport& r) {
    return {r.smce, r.dual_smce, r.pgap_sq, r.pgap_logistic, r.binned_ece, r.mmce, r.accuracy};
}

auto agg_key(long long n, double lambda, const std::string& kernel, SweepModel model, Split split) {
    return std::make_tuple(static_cast<int>(model), kernel, n, lambda, static_cast<int>(split));
}

}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<SweepRow>& rows) {
    if (rows.empty()) throw InputError("aggregate: no rows");
    using Key = decltype(agg_key(0, 0.0, std::string(), SweepModel::Krr, Split::Train));
    std::map<Key, std::vector<const SweepRow*>> groups;
    for (const SweepRow& r : rows) groups[agg_key(r.n, r.lambda, r.kernel, r.model, r.split)].push_back(&r);

    const std::size_t metrics = aggregate_metric_names().size();
    std::vector<AggregateRow> out;
    for (const auto& [key, members] : groups) {
        AggregateRow a;
        a.n = members.front()->n;
        a.lambda = members.front()->lambda;
        a.kernel = members.front()->kernel;
        a.model = members.front()->model;
        a.split = members.front()->split;
        std::vector<std::vector<double>> samples(metrics);
        for (const SweepRow* r : members) {
            if (!r->ok) {
                ++a.failed;
                continue;
            }
            ++a.count;
            const auto vals = metric_values(r->metrics);
            for (std::size_t k = 0; k < metrics; ++k)
                if (vals[k]) samples[k].push_back(*vals[k]);
        }
        a.single_seed = a.count == 1;
        a.mean.resize(metrics);
        a.stddev.resize(metrics);
        for (std::size_t k = 0; k < metrics; ++k) {
            const auto& s = samples[k];
            if (s.empty()) continue;
            double sum = 0.0;
            for (double v : s) sum += v;
            const double mean = sum / static_cast<double>(s.size());
            double sq = 0.0;
            for (double v : s) sq += (v - mean) * (v - mean);
            a.mean[k] = mean;
            a.stddev[k] = s.size() > 1 ? std::sqrt(sq / static_cast<double>(s.size() - 1)) : 0.0;
        }
        out.push_back(std::move(a));
    }
    return out;
}

namespace {

std::string sanitize(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return s;
}

std::string split_name(Split s) { return s == Split::Train ? "train" : "test"; }
Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw InputError("split must be train or test");
}

std::string opt_str(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }
std::optional<double> opt_parse(const std::string& s) {
    if (trim(s).empty()) return std::nullopt;
    return parse_double(s);
}

}  // namespace

std::string rows_csv_header() {
    return "seed,n,lambda,kernel,model,split,status," + metric_csv_header() + ",error";
}

std::string format_rows_csv(const std::vector<SweepRow>& rows) {
    std::string out = rows_csv_header() + "\n";
    for (const SweepRow& r : rows) {
        out += std::to_string(r.seed) + "," + std::to_string(r.n) + "," + format_double(r.lambda) + "," + r.kernel +
               "," + std::string(to_string(r.model)) + "," + split_name(r.split) + "," + (r.ok ? "ok" : "failed") +
               ",";
        out += r.ok ? metric_csv_row(r.metrics) : std::string(",,,,,,,,");
        out += "," + sanitize(r.error) + "\n";
    }
    return out;
}

std::vector<SweepRow> parse_rows_csv(const std::string& text) {
    std::vector<SweepRow> rows;
    const auto lines = split(text, '\n');
    bool header = false;
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const std::string line = trim(lines[ln]);
        if (line.empty()) continue;
        if (!header) {
            if (line != rows_csv_header()) throw ParseError("unexpected rows header", ln + 1);
            header = true;
            continue;
        }
        const auto f = split(line, ',');
        if (f.size() != 17) throw ParseError("expected 17 fields", ln + 1);
        try {
            SweepRow r;
            r.seed = static_cast<int>(parse_int(f[0]));
            r.n = parse_int(f[1]);
            r.lambda = parse_double(f[2]);
            r.kernel = f[3];
            r.model = parse_sweep_model(f[4]);
            r.split = parse_split(f[5]);
            r.ok = f[6] == "ok";
            r.error = f[16];
            if (r.ok) {
                std::string metric_part;
                for (std::size_t k = 7; k < 16; ++k) metric_part += (k > 7 ? "," : "") + f[k];
                r.metrics = parse_metric_csv_row(metric_part);
                if (!satisfies_sandwich(r.metrics))
                    throw InputError("row violates the calibration metric sandwich bounds");
            }
            rows.push_back(std::move(r));
        } catch (const ParseError&) {
            throw;
        } catch (const InputError& e) {
            throw ParseError(e.what(), ln + 1);
        }
    }
    return rows;
}

std::string format_aggregate_csv(const std::vector<AggregateRow>& agg) {
    std::string out = "n,lambda,kernel,model,split,seeds,failed,single_seed";
    for (const auto& m : aggregate_metric_names()) out += "," + m + "_mean," + m + "_std";
    out += "\n";
    for (const AggregateRow& a : agg) {
        out += std::to_string(a.n) + "," + format_double(a.lambda) + "," + a.kernel + "," +
               std::string(to_string(a.model)) + "," + split_name(a.split) + "," + std::to_string(a.count) + "," +
               std::to_string(a.failed) + "," + (a.single_seed ? "1" : "0");
        for (std::size_t k = 0; k < a.mean.size(); ++k) out += "," + opt_str(a.mean[k]) + "," + opt_str(a.stddev[k]);
        out += "\n";
    }
    return out;
}

std::vector<AggregateRow> parse_aggregate_csv(const std::string& text) {
    std::vector<AggregateRow> out;
    const auto lines = split(text, '\n');
    const std::size_t metrics = aggregate_metric_names().size();
    bool header = false;
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const std::string line = trim(lines[ln]);
        if (line.empty()) continue;
        if (!header) {
            if (line.rfind("n,lambda,kernel,model,split", 0) != 0) throw ParseError("unexpected aggregate header", ln + 1);
            header = true;
            continue;
        }
        const auto f = split(line, ',');
        if (f.size() != 8 + 2 * metrics) throw ParseError("wrong aggregate field count", ln + 1);
        try {
            AggregateRow a;
            a.n = parse_int(f[0]);
            a.lambda = parse_double(f[1]);
            a.kernel = f[2];
            a.model = parse_sweep_model(f[3]);
            a.split = parse_split(f[4]);
            a.count = static_cast<int>(parse_int(f[5]));
            a.failed = static_cast<int>(parse_int(f[6]));
            a.single_seed = f[7] == "1";
            for (std::size_t k = 0; k < metrics; ++k) {
                a.mean.push_back(opt_parse(f[8 + 2 * k]));
                a.stddev.push_back(opt_parse(f[9 + 2 * k]));
            }
            out.push_back(std::move(a));
        } catch (const InputError& e) {
            throw ParseError(e.what(), ln + 1);
        }
    }
    return out;
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw InputError("spearman: need two equal-length samples");
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return std::nan("");
    return cov / std::sqrt(va * vb);
}

bool TrendReport::all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const TrendCheck& c) { return c.pass; });
}

std::string TrendReport::text() const {
    std::ostringstream o;
    if (checks.empty()) o << "no trend checks (grid too small)\n";
    for (const auto& c : checks)
        o << (c.pass ? "PASS " : "FAIL ") << c.check << " [" << c.series << "] value=" << format_double(c.value)
          << " threshold=" << format_double(c.threshold) << (c.detail.empty() ? "" : " " + c.detail) << "\n";
    return o.str();
}

std::string TrendReport::csv() const {
    std::string out = "check,series,value,threshold,pass\n";
    for (const auto& c : checks)
        out += c.check + "," + c.series + "," + format_double(c.value) + "," + format_double(c.threshold) + "," +
               (c.pass ? "1" : "0") + "\n";
    return out;
}

TrendReport assert_trends(const SweepResult& result) {
    // Test-split mean smooth CE keyed by series, then by grid coordinate.
    std::map<std::string, std::map<double, double>> series;
    std::map<long long, double> constant_by_n;
    std::map<double, long long> n_of_lambda;
    for (const AggregateRow& a : result.aggregates) {
        if (a.split != Split::Test || !a.mean[0]) continue;
        if (a.model == SweepModel::Constant) {
            constant_by_n[a.n] = *a.mean[0];
            continue;
        }
        if (is_baseline(a.model)) continue;
        const double x = result.axis == SweepAxis::SampleSize ? static_cast<double>(a.n) : a.lambda;
        series[std::string(to_string(a.model)) + "/" + a.kernel][x] = *a.mean[0];
        if (result.axis == SweepAxis::Lambda) n_of_lambda[a.lambda] = a.n;
    }
    std::size_t widest = 0;
    for (const auto& [name, pts] : series) widest = std::max(widest, pts.size());

    TrendReport report;
    for (const auto& [name, pts] : series) {
        if (pts.size() >= 4) {
            std::vector<double> xs, ys;
            for (const auto& [x, y] : pts) {
                xs.push_back(x);
                ys.push_back(y);
            }
            if (result.axis == SweepAxis::SampleSize) {
                const double rho = spearman(xs, ys);
                report.checks.push_back({"spearman_n", name, rho, kSpearmanThreshold, rho <= kSpearmanThreshold, ""});
            } else {
                const auto best = static_cast<std::size_t>(std::min_element(ys.begin(), ys.end()) - ys.begin());
                const bool interior = best > 0 && best + 1 < ys.size();
                report.checks.push_back({"interior_argmin", name, xs[best], 0.0, interior,
                                         "argmin_index=" + std::to_string(best) + "/" + std::to_string(ys.size() - 1)});
            }
        }
        if (result.axis == SweepAxis::Lambda && name.rfind("klr/", 0) == 0) {
            for (const auto& [x, y] : pts) {
                if (std::abs(x - kCollapseLambda) > 1e-9 * kCollapseLambda) continue;
                const auto c = constant_by_n.find(n_of_lambda[x]);
                if (c == constant_by_n.end()) continue;
                const double diff = std::abs(y - c->second);
                report.checks.push_back({"large_lambda_collapse", name, diff, kCollapseTolerance,
                                         diff <= kCollapseTolerance,
                                         "klr=" + format_double(y) + " constant=" + format_double(c->second)});
            }
        }
    }
    // A single-lambda collapse run is still a valid check; anything else
    // needs a grid wide enough to rank.
    if (widest < 4 && report.checks.empty()) throw InputError("assert_trends: need at least 4 grid points");
    return report;
}

std::vector<std::pair<std::string, SweepConfig>> preset_configs(const std::string& name, bool desk) {
    std::vector<std::pair<std::string, SweepConfig>> out;
    if (name == "erm_sweeps") {
        SweepConfig n_sweep;
        n_sweep.axis = SweepAxis::SampleSize;
        n_sweep.source = DataSource::Toy1D;
        n_sweep.n_grid = log_spaced_ints(100, desk ? 3000 : 10000, 10);
        n_sweep.seeds = desk ? 5 : 10;
        n_sweep.models = desk ? std::vector<SweepModel>{SweepModel::Krr}
                              : std::vector<SweepModel>{SweepModel::Krr, SweepModel::Klr};
        out.emplace_back("n_sweep", n_sweep);

        SweepConfig l_sweep = n_sweep;
        l_sweep.axis = SweepAxis::Lambda;
        l_sweep.n_grid = {desk ? 3000 : 10000};
        l_sweep.lambda_grid = log_spaced(1e-4, 1e2, 10);
        l_sweep.models = desk ? std::vector<SweepModel>{SweepModel::Krr}
                              : std::vector<SweepModel>{SweepModel::Krr, SweepModel::Klr, SweepModel::Constant};
        out.emplace_back("lambda_sweep", l_sweep);

        if (desk) {
            // The KLR collapse check at lambda = 1e2 alone, against the base-rate predictor.
            SweepConfig collapse = l_sweep;
            collapse.lambda_grid = {kCollapseLambda};
            collapse.kernels = {KernelFamily::Gaussian};
            collapse.models = {SweepModel::Klr, SweepModel::Constant};
            out.emplace_back("klr_collapse", collapse);
        }
    } else if (name == "recalibration") {
        SweepConfig c;
        c.axis = SweepAxis::SampleSize;
        c.source = DataSource::SyntheticMiscalibrated;
        c.distortion = Distortion::make_temperature(0.5);
        c.n_grid = desk ? std::vector<long long>{250, 1000, 4000} : log_spaced_ints(100, 4000, 6);
        c.seeds = desk ? 5 : 10;
        c.kernels = {KernelFamily::Laplace};
        c.models = {SweepModel::Klr, SweepModel::Uncalibrated};
        c.klr_lambda = 0.01;
        out.emplace_back("recalibration", c);
    } else {
        throw InputError("unknown preset '" + name + "' (expected erm_sweeps or recalibration)");
    }
    return out;
}

}  // namespace ermcal
