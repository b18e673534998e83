#include "ermcal/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ermcal/errors.hpp"
#include "ermcal/text_io.hpp"

namespace ermcal {

Matrix RecalibrationSet::as_inputs() const {
    Matrix X(static_cast<Eigen::Index>(scores.size()), 1);
    for (std::size_t i = 0; i < scores.size(); ++i) X(static_cast<Eigen::Index>(i), 0) = scores[i];
    return X;
}

std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
    // splitmix64 finalizer folded over the parts
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (std::uint64_t p : parts) {
        std::uint64_t z = h ^ (p + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        h = z ^ (z >> 31);
    }
    return h;
}

LabeledDataset gen_toy(long long n, std::uint64_t seed, int dim) {
    if (n <= 0) throw InputError("gen_toy: n must be positive");
    if (dim != 1 && dim != 2) throw InputError("gen_toy: dimension must be 1 or 2");
    LabeledDataset d;
    d.X.resize(n, dim);
    d.y.resize(static_cast<std::size_t>(n));
    d.provenance = Provenance::SyntheticGaussian;
    d.seed = seed;
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (long long i = 0; i < n; ++i) {
        const int label = coin(rng) ? 1 : 0;
        const double mean = label == 1 ? -1.0 : 1.0;
        const double x0 = mean + noise(rng);
        const double x1 = mean + noise(rng);
        d.y[static_cast<std::size_t>(i)] = label;
        d.X(i, 0) = x0;
        if (dim == 2) d.X(i, 1) = x1;
    }
    return d;
}

double bayes_logit(const Eigen::Ref<const Vector>& x) {
    if (x.size() != 1 && x.size() != 2) throw InputError("bayes_probability: dimension must be 1 or 2");
    return -2.0 * x.sum();
}

double bayes_probability(const Eigen::Ref<const Vector>& x) { return sigmoid(bayes_logit(x)); }

LabeledDataset stratified_subsample(const LabeledDataset& data, long long m, std::uint64_t seed) {
    const auto n = static_cast<long long>(data.size());
    if (m < 1 || m > n) throw InputError("stratified_subsample: need 1 <= m <= n");

    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.y[i]].push_back(i);

    long long quota[2];
    double frac[2];
    for (int c = 0; c < 2; ++c) {
        const double exact = static_cast<double>(m) * static_cast<double>(by_class[c].size()) / static_cast<double>(n);
        quota[c] = static_cast<long long>(std::floor(exact));
        frac[c] = exact - static_cast<double>(quota[c]);
    }
    while (quota[0] + quota[1] < m) {
        const int c = frac[1] > frac[0] ? 1 : 0;
        ++quota[c];
        frac[c] = -1.0;
    }
    if (m >= 2) {
        for (int c = 0; c < 2; ++c) {
            if (quota[c] == 0 && !by_class[c].empty()) {
                ++quota[c];
                --quota[1 - c];
            }
        }
    }

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> chosen;
    chosen.reserve(static_cast<std::size_t>(m));
    for (int c = 0; c < 2; ++c) {
        std::vector<std::size_t> pool = by_class[c];
        // Partial Fisher-Yates: the first quota entries are a uniform sample.
        for (long long k = 0; k < quota[c]; ++k) {
            std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), pool.size() - 1);
            std::swap(pool[static_cast<std::size_t>(k)], pool[pick(rng)]);
            chosen.push_back(pool[static_cast<std::size_t>(k)]);
        }
    }
    std::sort(chosen.begin(), chosen.end());

    LabeledDataset out;
    out.X.resize(m, data.X.cols());
    out.y.resize(static_cast<std::size_t>(m));
    out.provenance = data.provenance;
    out.seed = seed;
    for (std::size_t k = 0; k < chosen.size(); ++k) {
        out.X.row(static_cast<Eigen::Index>(k)) = data.X.row(static_cast<Eigen::Index>(chosen[k]));
        out.y[k] = data.y[chosen[k]];
    }
    return out;
}

double Distortion::apply(double logit) const {
    return kind == Kind::Temperature ? logit / temperature : scale * logit + offset;
}

std::string Distortion::describe() const {
    if (kind == Kind::Temperature) return "temperature:" + format_double(temperature);
    return "affine:" + format_double(scale) + ":" + format_double(offset);
}

Distortion parse_distortion(const std::string& text) {
    const auto parts = split(text, ':');
    if (parts[0] == "temperature" && parts.size() == 2) return Distortion::make_temperature(parse_double(parts[1]));
    if (parts[0] == "affine" && parts.size() == 3)
        return Distortion::make_affine(parse_double(parts[1]), parse_double(parts[2]));
    throw InputError("distortion must be temperature:<t> or affine:<a>:<c>, got '" + text + "'");
}

RecalibrationSet gen_miscalibrated_scores(long long n, const Distortion& distortion, std::uint64_t seed) {
    if (distortion.kind == Distortion::Kind::Temperature &&
        (!(distortion.temperature > 0.0) || !std::isfinite(distortion.temperature)))
        throw InputError("temperature must be positive");
    if (distortion.kind == Distortion::Kind::Affine &&
        (!std::isfinite(distortion.scale) || !std::isfinite(distortion.offset) || distortion.scale == 0.0))
        throw InputError("affine distortion needs finite parameters and a nonzero scale");
    const LabeledDataset toy = gen_toy(n, seed, 2);
    RecalibrationSet set;
    set.space = Space::Logit;
    set.source_model_id = "bayes-toy2d/" + distortion.describe();
    set.labels = toy.y;
    set.scores.resize(toy.size());
    for (std::size_t i = 0; i < toy.size(); ++i)
        set.scores[i] = distortion.apply(bayes_logit(toy.X.row(static_cast<Eigen::Index>(i)).transpose()));
    return set;
}

RecalibrationSet parse_score_csv(const std::string& text, const std::string& source_id) {
    RecalibrationSet set;
    set.source_model_id = source_id;
    bool header_seen = false;
    const auto lines = split(text, '\n');
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const std::string line = trim(lines[ln]);
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string body = trim(std::string_view(line).substr(1));
            if (body.rfind("space=", 0) == 0) set.space = parse_space(trim(body.substr(6)));
            continue;
        }
        if (!header_seen) {
            const auto cols = split(line, ',');
            if (cols.size() != 2 || (trim(cols[0]) != "score" && trim(cols[0]) != "value") || trim(cols[1]) != "label")
                throw ParseError("expected header 'score,label'", ln + 1);
            header_seen = true;
            continue;
        }
        const auto f = split(line, ',');
        if (f.size() != 2) throw ParseError("expected 2 fields", ln + 1);
        double score = 0.0;
        long long label = 0;
        try {
            score = parse_double(f[0]);
            label = parse_int(f[1]);
        } catch (const InputError& e) {
            throw ParseError(e.what(), ln + 1);
        }
        if (!std::isfinite(score)) throw ParseError("non-finite score", ln + 1);
        if (label != 0 && label != 1) throw InputError("label must be 0 or 1 (line " + std::to_string(ln + 1) + ")");
        set.scores.push_back(score);
        set.labels.push_back(static_cast<int>(label));
    }
    if (set.scores.empty()) throw InputError("score file '" + source_id + "' has no rows");
    return set;
}

RecalibrationSet build_recalibration_set(const std::string& path) {
    RecalibrationSet set = parse_score_csv(read_file(path), path);
    set.source_model_id = path;
    return set;
}

std::string format_score_csv(const RecalibrationSet& set, const std::string& value_column) {
    std::string out;
    if (set.space) out += "# space=" + std::string(to_string(*set.space)) + "\n";
    out += value_column + ",label\n";
    for (std::size_t i = 0; i < set.scores.size(); ++i)
        out += format_double(set.scores[i]) + "," + std::to_string(set.labels[i]) + "\n";
    return out;
}

void write_score_file(const std::string& path, const RecalibrationSet& set) { write_file(path, format_score_csv(set)); }

PredictionSet to_prediction_set(const RecalibrationSet& set) {
    if (!set.space) throw InputError("prediction file must declare '# space=probability' or '# space=logit'");
    return PredictionSet(set.scores, set.labels, *set.space);
}

PredictionSet read_prediction_file(const std::string& path) { return to_prediction_set(build_recalibration_set(path)); }

std::string format_dataset_csv(const LabeledDataset& data) {
    std::string out;
    for (Eigen::Index c = 0; c < data.X.cols(); ++c) out += "x" + std::to_string(c + 1) + ",";
    out += "y\n";
    for (Eigen::Index i = 0; i < data.X.rows(); ++i) {
        for (Eigen::Index c = 0; c < data.X.cols(); ++c) out += format_double(data.X(i, c)) + ",";
        out += std::to_string(data.y[static_cast<std::size_t>(i)]) + "\n";
    }
    return out;
}

LabeledDataset parse_dataset_csv(const std::string& text) {
    const auto lines = split(text, '\n');
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::size_t dim = 0;
    bool header_seen = false;
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const std::string line = trim(lines[ln]);
        if (line.empty() || line[0] == '#') continue;
        const auto f = split(line, ',');
        if (!header_seen) {
            if (f.size() < 2 || trim(f.back()) != "y") throw ParseError("expected header 'x1,...,xd,y'", ln + 1);
            dim = f.size() - 1;
            header_seen = true;
            continue;
        }
        if (f.size() != dim + 1) throw ParseError("expected " + std::to_string(dim + 1) + " fields", ln + 1);
        std::vector<double> row(dim);
        long long label = 0;
        try {
            for (std::size_t c = 0; c < dim; ++c) row[c] = parse_double(f[c]);
            label = parse_int(f[dim]);
        } catch (const InputError& e) {
            throw ParseError(e.what(), ln + 1);
        }
        if (label != 0 && label != 1) throw InputError("label must be 0 or 1 (line " + std::to_string(ln + 1) + ")");
        rows.push_back(std::move(row));
        labels.push_back(static_cast<int>(label));
    }
    if (rows.empty()) throw InputError("dataset has no rows");
    LabeledDataset d;
    d.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < dim; ++c) d.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
    d.y = std::move(labels);
    d.provenance = Provenance::ScoreFile;
    return d;
}

LabeledDataset read_dataset(const std::string& path) { return parse_dataset_csv(read_file(path)); }

void write_dataset(const std::string& path, const LabeledDataset& data) { write_file(path, format_dataset_csv(data)); }

}  // namespace ermcal
