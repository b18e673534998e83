#include "ermcal/models.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "ermcal/errors.hpp"
#include "ermcal/text_io.hpp"

namespace ermcal {

std::string_view to_string(LossFamily f) { return f == LossFamily::Squared ? "krr" : "klr"; }

LossFamily parse_loss_family(std::string_view s) {
    if (s == "krr" || s == "squared") return LossFamily::Squared;
    if (s == "klr" || s == "logistic") return LossFamily::Logistic;
    throw InputError("unknown model '" + std::string(s) + "' (expected krr or klr)");
}

Matrix KernelModel::basis(const Matrix& X) const {
    if (X.cols() != input_dim()) throw InputError("model input dimension mismatch");
    if (uses_rff()) return rff_transform(*rff, X);
    return cross_kernel(kernel, X, support);
}

Vector KernelModel::decision(const Matrix& X) const {
    Vector out = basis(X) * coeffs;
    out.array() += bias;
    return out;
}

double KernelModel::recompute_norm_sq() const {
    if (uses_rff()) return coeffs.squaredNorm();
    return coeffs.dot(gram_matrix(kernel, support) * coeffs);
}

namespace {

void check_training_data(const Matrix& X, std::span<const int> y, double lambda) {
    if (X.rows() < 1) throw InputError("training data is empty");
    if (static_cast<std::size_t>(X.rows()) != y.size()) throw InputError("X and y differ in length");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InputError("lambda must be positive");
    for (int v : y)
        if (v != 0 && v != 1) throw InputError("labels must be 0 or 1");
    if (!X.allFinite()) throw InputError("training inputs must be finite");
}

Vector labels_vector(std::span<const int> y) {
    Vector v(static_cast<Eigen::Index>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i) v(static_cast<Eigen::Index>(i)) = y[i];
    return v;
}

double mean_loss(LossFamily loss, const Vector& out, const Vector& y) {
    double acc = 0.0;
    if (loss == LossFamily::Squared) {
        acc = (out - y).squaredNorm();
    } else {
        for (Eigen::Index i = 0; i < out.size(); ++i) acc += softplus(out(i)) - out(i) * y(i);
    }
    return acc / static_cast<double>(out.size());
}

// Gram matrix of the model's own basis (K for exact, I for features).
Vector metric_apply(const KernelModel& m, const Vector& v) {
    if (m.uses_rff()) return v;
    return gram_matrix(m.kernel, m.support) * v;
}

}  // namespace

double objective(const KernelModel& model, const Matrix& X, std::span<const int> y) {
    if (static_cast<std::size_t>(X.rows()) != y.size()) throw InputError("X and y differ in length");
    return mean_loss(model.loss, model.decision(X), labels_vector(y)) + model.lambda * model.recompute_norm_sq();
}

Vector objective_gradient(const KernelModel& model, const Matrix& X, std::span<const int> y) {
    if (static_cast<std::size_t>(X.rows()) != y.size()) throw InputError("X and y differ in length");
    const Matrix B = model.basis(X);
    Vector out = B * model.coeffs;
    out.array() += model.bias;
    const Vector yv = labels_vector(y);
    Vector resid(out.size());
    if (model.loss == LossFamily::Squared) {
        resid = 2.0 * (out - yv);
    } else {
        for (Eigen::Index i = 0; i < out.size(); ++i) resid(i) = sigmoid(out(i)) - yv(i);
    }
    const double inv_n = 1.0 / static_cast<double>(out.size());
    Vector grad(model.coeffs.size() + 1);
    grad.head(model.coeffs.size()) = inv_n * (B.transpose() * resid) + 2.0 * model.lambda * metric_apply(model, model.coeffs);
    grad(model.coeffs.size()) = inv_n * resid.sum();
    return grad;
}

FitResult fit_krr(const Matrix& X, std::span<const int> y, const KernelSpec& spec, double lambda) {
    check_training_data(X, y, lambda);
    const Eigen::Index n = X.rows();
    const Vector yv = labels_vector(y);
    const Matrix K = gram_matrix(spec, X);

    Matrix A = K;
    A.diagonal().array() += static_cast<double>(n) * lambda + 1e-10;
    const Eigen::LLT<Matrix> llt(A);
    const double rcond = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
    if (llt.info() != Eigen::Success || !(rcond > std::numeric_limits<double>::epsilon())) {
        std::ostringstream msg;
        msg << "KRR system is singular after jitter (reciprocal condition estimate " << rcond << ")";
        throw NumericalError(msg.str());
    }
    const Vector ones = Vector::Ones(n);
    const Vector a_y = llt.solve(yv);
    const Vector a_1 = llt.solve(ones);
    const double b = a_y.sum() / a_1.sum();

    FitResult r;
    KernelModel& m = r.model;
    m.loss = LossFamily::Squared;
    m.lambda = lambda;
    m.kernel = spec;
    m.support = X;
    m.bias = b;
    m.coeffs = a_y - b * a_1;
    if (!m.coeffs.allFinite() || !std::isfinite(b)) throw NumericalError("KRR solve produced non-finite values");
    const Vector Ka = K * m.coeffs;
    m.hilbert_norm_sq = std::max(m.coeffs.dot(Ka), 0.0);
    Vector fitted = Ka;
    fitted.array() += b;
    m.train_objective = mean_loss(m.loss, fitted, yv) + lambda * m.hilbert_norm_sq;

    r.report.iterations = 0;
    r.report.converged = true;
    r.report.err_n = 0.0;
    r.report.rcond = rcond;
    const Vector resid = 2.0 * (fitted - yv) / static_cast<double>(n);
    Vector grad(n + 1);
    grad.head(n) = K * resid + 2.0 * lambda * Ka;
    grad(n) = resid.sum();
    r.report.final_grad_norm = grad.norm();
    return r;
}

FitResult fit_krr(const Matrix& X, std::span<const int> y, const RffMap& map, double lambda) {
    check_training_data(X, y, lambda);
    const double n = static_cast<double>(X.rows());
    const Vector yv = labels_vector(y);
    const Matrix Z = rff_transform(map, X);
    const Eigen::RowVectorXd z_mean = Z.colwise().mean();
    const Matrix Zc = Z.rowwise() - z_mean;
    const double y_mean = yv.mean();

    Matrix A = Zc.transpose() * Zc / n;
    A.diagonal().array() += lambda + 1e-10;
    const Eigen::LLT<Matrix> llt(A);
    const double rcond = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
    if (llt.info() != Eigen::Success || !(rcond > std::numeric_limits<double>::epsilon())) {
        std::ostringstream msg;
        msg << "feature ridge system is singular (reciprocal condition estimate " << rcond << ")";
        throw NumericalError(msg.str());
    }
    FitResult r;
    KernelModel& m = r.model;
    m.loss = LossFamily::Squared;
    m.lambda = lambda;
    m.kernel = KernelSpec(map.family, map.bandwidth);
    m.rff = map;
    m.coeffs = llt.solve(Zc.transpose() * (yv.array() - y_mean).matrix() / n);
    m.bias = y_mean - z_mean.dot(m.coeffs);
    m.hilbert_norm_sq = m.coeffs.squaredNorm();
    Vector fitted = Z * m.coeffs;
    fitted.array() += m.bias;
    m.train_objective = mean_loss(m.loss, fitted, yv) + lambda * m.hilbert_norm_sq;
    r.report.converged = true;
    r.report.err_n = 0.0;
    r.report.rcond = rcond;
    r.report.final_grad_norm = objective_gradient(m, X, y).norm();
    return r;
}

namespace {

// Gradient descent on the logistic objective for f = A c + b with penalty
// lambda c' M c. For the exact form A = M = K; for features A = Z, M = I.
struct LogisticProblem {
    const Matrix& A;
    const Matrix* M;  // null means identity
    const Vector& y;
    double lambda;

    Vector apply_metric(const Vector& v) const { return M ? Vector(*M * v) : v; }
    Vector apply_design_t(const Vector& v) const { return A.transpose() * v; }
    Vector apply_design(const Vector& v) const { return A * v; }
};

struct DescentState {
    Vector coeffs, decision, metric_coeffs;  // c, A c + b, M c
    double bias = 0.0;
    double objective = 0.0;
};

struct DescentOutcome {
    DescentState state;
    int iterations = 0;
    double grad_norm = 0.0;
    bool converged = false;
};

double logistic_objective(const LogisticProblem& p, const Vector& decision, const Vector& coeffs,
                          const Vector& metric_coeffs) {
    return mean_loss(LossFamily::Logistic, decision, p.y) + p.lambda * std::max(coeffs.dot(metric_coeffs), 0.0);
}

DescentOutcome gradient_descent(const LogisticProblem& p, int max_iter, double step, double tol,
                                int patience, int decay_every) {
    const Eigen::Index n = p.y.size();
    const Eigen::Index k = p.A.cols();
    const double inv_n = 1.0 / static_cast<double>(n);

    DescentOutcome out;
    DescentState& s = out.state;
    s.coeffs = Vector::Zero(k);
    s.decision = Vector::Zero(n);
    s.metric_coeffs = Vector::Zero(k);
    s.objective = logistic_objective(p, s.decision, s.coeffs, s.metric_coeffs);

    int rejected = 0;
    Vector resid(n);
    for (int it = 0; it < max_iter; ++it) {
        if (decay_every > 0 && it > 0 && it % decay_every == 0) step *= 0.5;
        for (Eigen::Index i = 0; i < n; ++i) resid(i) = sigmoid(s.decision(i)) - p.y(i);
        const Vector grad_c = inv_n * p.apply_design_t(resid) + 2.0 * p.lambda * s.metric_coeffs;
        const double grad_b = inv_n * resid.sum();
        out.grad_norm = std::sqrt(grad_c.squaredNorm() + grad_b * grad_b);
        const Vector design_grad = p.apply_design(grad_c);
        const Vector metric_grad = p.M ? (p.M == &p.A ? design_grad : p.apply_metric(grad_c)) : grad_c;

        for (;;) {
            Vector coeffs = s.coeffs - step * grad_c;
            Vector metric_coeffs = s.metric_coeffs - step * metric_grad;
            Vector decision = s.decision - step * design_grad;
            decision.array() -= step * grad_b;
            const double obj = logistic_objective(p, decision, coeffs, metric_coeffs);
            if (std::isfinite(obj) && obj <= s.objective) {
                const double decrease = s.objective - obj;
                s.coeffs = std::move(coeffs);
                s.metric_coeffs = std::move(metric_coeffs);
                s.decision = std::move(decision);
                s.bias -= step * grad_b;
                s.objective = obj;
                rejected = 0;
                out.iterations = it + 1;
                if (decrease < tol) {
                    out.converged = true;
                    return out;
                }
                break;
            }
            if (++rejected >= patience)
                throw OptimizerError("KLR gradient descent diverged: objective increased for " +
                                     std::to_string(patience) + " consecutive steps; try a smaller step size");
            step *= 0.5;
        }
    }
    return out;
}

FitResult finish_klr(KernelModel model, const LogisticProblem& p, const KlrOptions& opts) {
    if (opts.max_iter < 1 || !(opts.step > 0.0) || opts.tolerance < 0.0 || opts.divergence_patience < 1)
        throw InputError("invalid KLR optimizer settings");
    const DescentOutcome run =
        gradient_descent(p, opts.max_iter, opts.step, opts.tolerance, opts.divergence_patience, 0);
    FitResult r;
    model.coeffs = run.state.coeffs;
    model.bias = run.state.bias;
    model.hilbert_norm_sq = std::max(run.state.coeffs.dot(run.state.metric_coeffs), 0.0);
    model.train_objective = run.state.objective;
    r.model = std::move(model);
    r.report.iterations = run.iterations;
    r.report.final_grad_norm = run.grad_norm;
    r.report.converged = run.converged;
    if (opts.estimate_err_n) {
        const DescentOutcome ref =
            gradient_descent(p, 10 * opts.max_iter, opts.step, 0.0, opts.divergence_patience, 2000);
        const double best = std::min(ref.state.objective, run.state.objective);
        r.report.err_n = std::max(run.state.objective - best, 0.0);
    }
    return r;
}

}  // namespace

FitResult fit_klr(const Matrix& X, std::span<const int> y, const KernelSpec& spec, double lambda,
                  const KlrOptions& opts) {
    check_training_data(X, y, lambda);
    const Vector yv = labels_vector(y);
    const Matrix K = gram_matrix(spec, X);
    KernelModel m;
    m.loss = LossFamily::Logistic;
    m.lambda = lambda;
    m.kernel = spec;
    m.support = X;
    return finish_klr(std::move(m), LogisticProblem{K, &K, yv, lambda}, opts);
}

FitResult fit_klr(const Matrix& X, std::span<const int> y, const RffMap& map, double lambda,
                  const KlrOptions& opts) {
    check_training_data(X, y, lambda);
    const Vector yv = labels_vector(y);
    const Matrix Z = rff_transform(map, X);
    KernelModel m;
    m.loss = LossFamily::Logistic;
    m.lambda = lambda;
    m.kernel = KernelSpec(map.family, map.bandwidth);
    m.rff = map;
    return finish_klr(std::move(m), LogisticProblem{Z, nullptr, yv, lambda}, opts);
}

Predictions predict(const KernelModel& model, const Matrix& X) {
    Predictions p;
    p.raw = model.decision(X);
    p.probability.resize(p.raw.size());
    for (Eigen::Index i = 0; i < p.raw.size(); ++i) {
        p.probability(i) = model.loss == LossFamily::Squared
                               ? std::clamp(p.raw(i), kProbabilityClip, 1.0 - kProbabilityClip)
                               : sigmoid(p.raw(i));
    }
    return p;
}

PredictionSet to_prediction_set(const KernelModel& model, const Predictions& preds, std::span<const int> y) {
    const Vector& src = model.loss == LossFamily::Squared ? preds.probability : preds.raw;
    std::vector<double> v(src.data(), src.data() + src.size());
    return PredictionSet(std::move(v), std::vector<int>(y.begin(), y.end()),
                         model.loss == LossFamily::Squared ? Space::Probability : Space::Logit);
}

double smce_bound(const KernelModel& model, const TrainReport& report) {
    if (model.loss != LossFamily::Squared) throw InputError("smce_bound applies to squared-loss models");
    return std::sqrt(model.lambda + report.err_n.value_or(0.0));
}

// Format (one token per line after the header):
//   # ermcal-model v1
//   key=value ...
//   coefficients / support / frequencies / phases sections
std::string serialize_model(const KernelModel& m) {
    std::ostringstream out;
    out << "# ermcal-model v1\n";
    out << "loss=" << to_string(m.loss) << "\n";
    out << "representation=" << (m.uses_rff() ? "rff" : "exact") << "\n";
    out << "kernel=" << to_string(m.kernel.family) << "\n";
    out << "bandwidth=" << format_double(m.kernel.bandwidth) << "\n";
    out << "lambda=" << format_double(m.lambda) << "\n";
    out << "bias=" << format_double(m.bias) << "\n";
    out << "hilbert_norm_sq=" << format_double(m.hilbert_norm_sq) << "\n";
    out << "train_objective=" << format_double(m.train_objective) << "\n";
    out << "input_dim=" << m.input_dim() << "\n";
    out << "coefficients=" << m.coeffs.size() << "\n";
    if (m.uses_rff()) out << "rff_seed=" << m.rff->seed << "\n";
    out << "[coefficients]\n";
    for (Eigen::Index i = 0; i < m.coeffs.size(); ++i) out << format_double(m.coeffs(i)) << "\n";
    const auto write_rows = [&](const Matrix& M) {
        for (Eigen::Index i = 0; i < M.rows(); ++i) {
            for (Eigen::Index c = 0; c < M.cols(); ++c) out << (c ? "," : "") << format_double(M(i, c));
            out << "\n";
        }
    };
    if (m.uses_rff()) {
        out << "[frequencies]\n";
        write_rows(m.rff->frequencies);
        out << "[phases]\n";
        for (Eigen::Index i = 0; i < m.rff->phases.size(); ++i) out << format_double(m.rff->phases(i)) << "\n";
    } else {
        out << "[support]\n";
        write_rows(m.support);
    }
    return out.str();
}

KernelModel deserialize_model(std::string_view text) {
    std::vector<std::string> lines;
    for (auto& l : split(text, '\n')) {
        std::string t = trim(l);
        if (!t.empty()) lines.push_back(std::move(t));
    }
    if (lines.empty() || lines[0] != "# ermcal-model v1") throw ParseError("not an ermcal model file", 1);

    std::size_t i = 1;
    std::string loss, repr, kernel;
    double bandwidth = 1.0, lambda = 1.0, bias = 0.0, norm = 0.0, obj = 0.0;
    long long dim = 0, count = 0;
    unsigned long long seed = 0;
    for (; i < lines.size() && lines[i][0] != '['; ++i) {
        const auto eq = lines[i].find('=');
        if (eq == std::string::npos) throw ParseError("expected key=value", i + 1);
        const std::string key = lines[i].substr(0, eq), val = lines[i].substr(eq + 1);
        try {
            if (key == "loss") loss = val;
            else if (key == "representation") repr = val;
            else if (key == "kernel") kernel = val;
            else if (key == "bandwidth") bandwidth = parse_double(val);
            else if (key == "lambda") lambda = parse_double(val);
            else if (key == "bias") bias = parse_double(val);
            else if (key == "hilbert_norm_sq") norm = parse_double(val);
            else if (key == "train_objective") obj = parse_double(val);
            else if (key == "input_dim") dim = parse_int(val);
            else if (key == "coefficients") count = parse_int(val);
            else if (key == "rff_seed") seed = static_cast<unsigned long long>(parse_int(val));
            else throw ParseError("unknown model key '" + key + "'", i + 1);
        } catch (const ParseError&) {
            throw;
        } catch (const InputError& e) {
            throw ParseError(e.what(), i + 1);
        }
    }
    if (dim < 1 || count < 1) throw ParseError("model header lacks dimensions", i + 1);

    KernelModel m;
    m.loss = parse_loss_family(loss);
    m.kernel = KernelSpec(parse_kernel_family(kernel), bandwidth);
    m.lambda = lambda;
    m.bias = bias;
    m.hilbert_norm_sq = norm;
    m.train_objective = obj;

    const auto expect_section = [&](const char* name) {
        if (i >= lines.size() || lines[i] != name) throw ParseError(std::string("expected section ") + name, i + 1);
        ++i;
    };
    const auto read_rows = [&](Eigen::Index rows, Eigen::Index cols) {
        Matrix M(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r, ++i) {
            if (i >= lines.size()) throw ParseError("truncated model file", i + 1);
            const auto f = split(lines[i], ',');
            if (static_cast<Eigen::Index>(f.size()) != cols) throw ParseError("wrong field count", i + 1);
            for (Eigen::Index c = 0; c < cols; ++c) {
                try {
                    M(r, c) = parse_double(f[static_cast<std::size_t>(c)]);
                } catch (const InputError& e) {
                    throw ParseError(e.what(), i + 1);
                }
            }
        }
        return M;
    };

    expect_section("[coefficients]");
    m.coeffs = read_rows(count, 1).col(0);
    if (repr == "rff") {
        RffMap map;
        map.family = m.kernel.family;
        map.bandwidth = bandwidth;
        map.seed = seed;
        expect_section("[frequencies]");
        map.frequencies = read_rows(count, dim);
        expect_section("[phases]");
        map.phases = read_rows(count, 1).col(0);
        m.rff = std::move(map);
    } else if (repr == "exact") {
        expect_section("[support]");
        m.support = read_rows(count, dim);
    } else {
        throw ParseError("unknown representation '" + repr + "'", 1);
    }
    if (i != lines.size()) throw ParseError("trailing content in model file", i + 1);
    return m;
}

}  // namespace ermcal
