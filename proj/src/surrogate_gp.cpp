#include "calival/surrogate_gp.hpp"

#include "calival/detail/box_lbfgs.hpp"
#include "calival/errors.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

namespace calival {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(v[i - 1], v[pick(rng)]);
    }
}

// Per-dimension squared distances between training rows.
std::vector<MatrixXd> pairwise_sq(const MatrixXd& x) {
    const Eigen::Index n = x.rows();
    std::vector<MatrixXd> out(x.cols(), MatrixXd(n, n));
    for (Eigen::Index d = 0; d < x.cols(); ++d) {
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index i = 0; i < n; ++i) {
                const double diff = x(i, d) - x(j, d);
                out[d](i, j) = diff * diff;
            }
    }
    return out;
}

MatrixXd correlation_from(const std::vector<MatrixXd>& sq, const VectorXd& ell) {
    MatrixXd s = MatrixXd::Zero(sq.front().rows(), sq.front().cols());
    for (std::size_t d = 0; d < sq.size(); ++d) s += sq[d] / (ell[d] * ell[d]);
    return (-0.5 * s.array()).exp().matrix();
}

// Negative log marginal likelihood in log-hyperparameter space.
class Objective {
public:
    Objective(const MatrixXd& x, const VectorXd& y, const VectorXd& noise)
        : sq_(pairwise_sq(x)), y_(y), noise_(noise), n_(static_cast<double>(y.size())) {}

    bool profiled() const { return noise_.size() == 0; }
    Eigen::Index dim() const { return static_cast<Eigen::Index>(sq_.size()); }

    double operator()(const VectorXd& p, VectorXd& grad) const {
        const Eigen::Index d = dim();
        const VectorXd ell = p.head(d).array().exp();
        const double g = std::exp(p[d]);
        const MatrixXd r = correlation_from(sq_, ell);
        MatrixXd c = r;
        c.diagonal().array() += g;

        grad.setZero(p.size());
        if (profiled()) {
            Eigen::LLT<MatrixXd> llt(c);
            if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
            const VectorXd alpha = llt.solve(y_);
            const double s2 = std::max(y_.dot(alpha) / n_, 1e-300);
            const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
            const MatrixXd cinv = llt.solve(MatrixXd::Identity(c.rows(), c.cols()));
            const MatrixXd w = alpha * alpha.transpose() / s2 - cinv;
            const MatrixXd wr = w.cwiseProduct(r);
            for (Eigen::Index k = 0; k < d; ++k)
                grad[k] = -0.5 * wr.cwiseProduct(sq_[k]).sum() / (ell[k] * ell[k]);
            grad[d] = -0.5 * g * w.trace();
            return 0.5 * n_ * std::log(s2) + 0.5 * log_det + 0.5 * n_ * (1.0 + kLog2Pi);
        }

        const double s2 = std::exp(p[d + 1]);
        MatrixXd k = s2 * c;
        k.diagonal() += noise_;
        Eigen::LLT<MatrixXd> llt(k);
        if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
        const VectorXd alpha = llt.solve(y_);
        const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        const MatrixXd kinv = llt.solve(MatrixXd::Identity(k.rows(), k.cols()));
        const MatrixXd w = alpha * alpha.transpose() - kinv;
        const MatrixXd wr = w.cwiseProduct(r);
        for (Eigen::Index j = 0; j < d; ++j)
            grad[j] = -0.5 * s2 * wr.cwiseProduct(sq_[j]).sum() / (ell[j] * ell[j]);
        grad[d] = -0.5 * s2 * g * w.trace();
        grad[d + 1] = -0.5 * s2 * w.cwiseProduct(c).sum();
        return 0.5 * y_.dot(alpha) + 0.5 * log_det + 0.5 * n_ * kLog2Pi;
    }

private:
    std::vector<MatrixXd> sq_;
    VectorXd y_;
    VectorXd noise_;
    double n_;
};

void check_training(const MatrixXd& inputs, const VectorXd& outputs, const GpFitOptions& options) {
    if (inputs.rows() < 2) throw InputError("GP needs at least two training points");
    if (inputs.cols() < 1) throw InputError("GP needs at least one input dimension");
    if (outputs.size() != inputs.rows()) throw InputError("GP outputs do not match the number of inputs");
    if (!inputs.allFinite() || !outputs.allFinite()) throw InputError("GP training data has non-finite values");
    if (options.noise_variance) {
        const VectorXd& nv = *options.noise_variance;
        if (nv.size() != inputs.rows()) throw InputError("GP noise variance does not match the training size");
        if (!nv.allFinite() || (nv.array() < 0.0).any()) throw InputError("GP noise variance must be finite and >= 0");
    }
    if (!(options.min_length_scale > 0.0 && options.min_length_scale < options.max_length_scale))
        throw InputError("GP length-scale bounds are invalid");
    if (!(options.min_nugget > 0.0 && options.min_nugget <= options.max_nugget))
        throw InputError("GP nugget bounds are invalid");
    std::set<std::vector<double>> seen;
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
        std::vector<double> row(inputs.cols());
        for (Eigen::Index j = 0; j < inputs.cols(); ++j) row[j] = inputs(i, j);
        if (!seen.insert(row).second)
            throw InputError(fmt::format("GP training input row {} duplicates an earlier row", i));
    }
}

std::string hex(double v) { return fmt::format("{:a}", v); }

double read_double(std::istream& in) {
    std::string tok;
    if (!(in >> tok)) throw InputError("GP file ended early");
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size()) throw InputError("GP file has a malformed number '" + tok + "'");
    return v;
}

void expect(std::istream& in, const std::string& key) {
    std::string tok;
    if (!(in >> tok) || tok != key) throw InputError("GP file: expected '" + key + "', found '" + tok + "'");
}

long long read_int(std::istream& in) {
    long long v = 0;
    if (!(in >> v)) throw InputError("GP file: expected an integer");
    return v;
}

void write_vector(std::ostream& out, const VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) out << (i ? " " : "") << hex(v[i]);
    out << '\n';
}

VectorXd read_vector(std::istream& in, Eigen::Index n) {
    VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = read_double(in);
    return v;
}

} // namespace

void Bounds::validate() const {
    if (lower.size() == 0 || lower.size() != upper.size()) throw InputError("bounds need matching non-empty limits");
    if (!lower.allFinite() || !upper.allFinite()) throw InputError("bounds must be finite");
    if ((lower.array() >= upper.array()).any()) throw InputError("bounds need lower < upper in every dimension");
}

TrainingDesign build_training_design(const Bounds& bounds, std::size_t n, std::uint64_t seed) {
    bounds.validate();
    if (n < 2) throw InputError("training design needs at least two points");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    TrainingDesign out;
    out.bounds = bounds;
    out.seed = seed;
    out.samples.resize(static_cast<Eigen::Index>(n), bounds.lower.size());
    std::vector<std::size_t> strata(n);
    for (Eigen::Index d = 0; d < bounds.lower.size(); ++d) {
        std::iota(strata.begin(), strata.end(), std::size_t{0});
        shuffle(strata, rng);
        const double w = bounds.upper[d] - bounds.lower[d];
        for (std::size_t i = 0; i < n; ++i)
            out.samples(static_cast<Eigen::Index>(i), d) =
                bounds.lower[d] + (static_cast<double>(strata[i]) + unit(rng)) / static_cast<double>(n) * w;
    }
    return out;
}

// ---------------------------------------------------------------------------

GpModel GpModel::fit(const MatrixXd& inputs, const VectorXd& outputs, const GpFitOptions& options) {
    check_training(inputs, outputs, options);
    if (options.restarts < 1) throw InputError("GP fit needs at least one restart");

    const Eigen::Index n = inputs.rows();
    const Eigen::Index d = inputs.cols();
    GpModel m;
    m.input_mean_ = inputs.colwise().mean().transpose();
    m.input_scale_ = ((inputs.rowwise() - m.input_mean_.transpose()).array().square().colwise().sum() /
                      static_cast<double>(n))
                         .sqrt()
                         .transpose();
    for (Eigen::Index j = 0; j < d; ++j)
        if (!(m.input_scale_[j] > 0.0)) m.input_scale_[j] = 1.0;
    m.train_ = (inputs.rowwise() - m.input_mean_.transpose()).array().rowwise() /
               m.input_scale_.transpose().array();
    m.output_offset_ = options.center_outputs ? outputs.mean() : 0.0;
    const VectorXd centered = outputs.array() - m.output_offset_;
    if (options.noise_variance) m.noise_ = *options.noise_variance;

    const double y_scale = centered.squaredNorm() / static_cast<double>(n);
    if (m.profiled() && y_scale <= 1e-24 * std::max(1.0, m.output_offset_ * m.output_offset_)) {
        // Constant response: nothing to learn, predictions are exact.
        m.hyper_.length_scales = VectorXd::Ones(d);
        m.hyper_.nugget = options.min_nugget;
        m.hyper_.signal_variance = 0.0;
        m.factorize(options, centered);
        return m;
    }

    const Objective objective(m.train_, centered, m.noise_);
    const Eigen::Index np = d + 1 + (m.profiled() ? 0 : 1);
    VectorXd lo(np), hi(np);
    lo.head(d).setConstant(std::log(options.min_length_scale));
    hi.head(d).setConstant(std::log(options.max_length_scale));
    lo[d] = std::log(options.min_nugget);
    hi[d] = std::log(options.max_nugget);
    double s2_ref = 1.0;
    if (!m.profiled()) {
        s2_ref = std::max({y_scale, m.noise_.mean(), 1e-12});
        lo[d + 1] = std::log(1e-8 * s2_ref);
        hi[d + 1] = std::log(1e3 * s2_ref);
    }

    std::mt19937_64 rng(options.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto log_uniform = [&](double a, double b) { return a + unit(rng) * (b - a); };
    detail::BoxMinimum best;
    for (int r = 0; r < options.restarts; ++r) {
        VectorXd p0(np);
        for (Eigen::Index j = 0; j < d; ++j)
            p0[j] = log_uniform(std::max(lo[j], std::log(0.3)), std::min(hi[j], std::log(30.0)));
        p0[d] = log_uniform(lo[d], hi[d]);
        if (!m.profiled()) p0[d + 1] = log_uniform(std::log(0.1 * s2_ref), std::log(10.0 * s2_ref));
        auto res = detail::minimize_in_box(objective, p0, lo, hi, options.max_iterations);
        spdlog::debug("GP restart {}: -logL {:.6g} after {} iterations", r, res.value, res.iterations);
        if (std::isfinite(res.value) && res.value < best.value) best = std::move(res);
    }
    if (!std::isfinite(best.value))
        throw NumericalError("GP hyperparameter optimization failed from every restart");

    m.hyper_.length_scales = best.x.head(d).array().exp();
    m.hyper_.nugget = std::exp(best.x[d]);
    if (m.profiled()) {
        MatrixXd c = correlation_from(pairwise_sq(m.train_), m.hyper_.length_scales);
        c.diagonal().array() += m.hyper_.nugget;
        Eigen::LLT<MatrixXd> llt(c);
        m.hyper_.signal_variance = centered.dot(llt.solve(centered)) / static_cast<double>(n);
    } else {
        m.hyper_.signal_variance = std::exp(best.x[d + 1]);
    }
    m.factorize(options, centered);
    return m;
}

GpModel GpModel::with_hyperparameters(const MatrixXd& inputs, const VectorXd& outputs,
                                      const GpHyperparameters& hyper, const GpFitOptions& options) {
    check_training(inputs, outputs, options);
    if (hyper.length_scales.size() != inputs.cols() || (hyper.length_scales.array() <= 0.0).any())
        throw InputError("length scales must be positive, one per input dimension");
    if (!(hyper.signal_variance >= 0.0) || !(hyper.nugget > 0.0))
        throw InputError("signal variance must be >= 0 and nugget > 0");
    GpModel m;
    const Eigen::Index n = inputs.rows();
    m.input_mean_ = inputs.colwise().mean().transpose();
    m.input_scale_ = ((inputs.rowwise() - m.input_mean_.transpose()).array().square().colwise().sum() /
                      static_cast<double>(n))
                         .sqrt()
                         .transpose();
    for (Eigen::Index j = 0; j < inputs.cols(); ++j)
        if (!(m.input_scale_[j] > 0.0)) m.input_scale_[j] = 1.0;
    m.train_ = (inputs.rowwise() - m.input_mean_.transpose()).array().rowwise() /
               m.input_scale_.transpose().array();
    m.output_offset_ = options.center_outputs ? outputs.mean() : 0.0;
    if (options.noise_variance) m.noise_ = *options.noise_variance;
    m.hyper_ = hyper;
    m.factorize(options, outputs.array() - m.output_offset_);
    return m;
}

void GpModel::factorize(const GpFitOptions& options, const VectorXd& centered) {
    const MatrixXd r = correlation_from(pairwise_sq(train_), hyper_.length_scales);
    const double s2 = hyper_.signal_variance;
    const auto n = static_cast<double>(train_.rows());
    for (;;) {
        MatrixXd a = r;
        a.diagonal().array() += hyper_.nugget;
        if (!profiled()) {
            a *= s2;
            a.diagonal() += noise_;
        }
        Eigen::LLT<MatrixXd> llt(a);
        if (llt.info() == Eigen::Success && (llt.matrixLLT().diagonal().array() > 0.0).all()) {
            chol_ = llt.matrixL();
            alpha_ = llt.solve(centered);
            const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
            if (profiled()) {
                const double s2_eff = std::max(s2, 1e-300);
                log_marginal_ = -0.5 * (n * std::log(s2_eff) + log_det + centered.dot(alpha_) / s2_eff + n * kLog2Pi);
            } else {
                log_marginal_ = -0.5 * (centered.dot(alpha_) + log_det + n * kLog2Pi);
            }
            return;
        }
        if (hyper_.nugget >= options.max_nugget)
            throw NumericalError(fmt::format("GP covariance is not positive definite even with nugget {:.3g}",
                                             hyper_.nugget));
        const double next = std::min(hyper_.nugget * 10.0, options.max_nugget);
        spdlog::warn("GP Cholesky failed; raising nugget from {:.3g} to {:.3g}", hyper_.nugget, next);
        hyper_.nugget = next;
        ++nugget_escalations_;
    }
}

MatrixXd GpModel::correlation_factor(const MatrixXd& raw, Eigen::Index first) const {
    const Eigen::Index count = raw.cols();
    if (first < 0 || first + count > train_.cols()) throw InputError("correlation factor columns out of range");
    const Eigen::Index m = raw.rows();
    const Eigen::Index n = train_.rows();
    MatrixXd s = MatrixXd::Zero(m, n);
    for (Eigen::Index c = 0; c < count; ++c) {
        const Eigen::Index d = first + c;
        const double inv_ell = 1.0 / hyper_.length_scales[d];
        for (Eigen::Index i = 0; i < m; ++i) {
            const double u = (raw(i, c) - input_mean_[d]) / input_scale_[d];
            s.row(i).array() += ((train_.col(d).array() - u) * inv_ell).square().transpose();
        }
    }
    return (-0.5 * s.array()).exp().matrix();
}

GpPrediction GpModel::predict_from_correlation(const MatrixXd& correlation) const {
    if (correlation.cols() != train_.rows()) throw InputError("correlation matrix does not match training size");
    const double s2 = hyper_.signal_variance;
    const double mean_scale = profiled() ? 1.0 : s2;
    const double var_scale = profiled() ? s2 : s2 * s2;
    GpPrediction p;
    p.mean = (mean_scale * (correlation * alpha_)).array() + output_offset_;
    const MatrixXd v = chol_.triangularView<Eigen::Lower>().solve(correlation.transpose());
    p.variance = (s2 - var_scale * v.colwise().squaredNorm().array()).cwiseMax(0.0).transpose();
    return p;
}

GpPrediction GpModel::predict(const MatrixXd& points) const {
    if (points.cols() != train_.cols()) throw InputError("prediction points have the wrong dimension");
    if (!points.allFinite()) throw InputError("prediction points must be finite");
    return predict_from_correlation(correlation_factor(points, 0));
}

GpPrediction GpModel::predict(const VectorXd& point) const { return predict(MatrixXd(point.transpose())); }

MatrixXd GpModel::prior_covariance(const MatrixXd& points) const {
    if (points.cols() != train_.cols()) throw InputError("points have the wrong dimension");
    const MatrixXd u = (points.rowwise() - input_mean_.transpose()).array().rowwise() /
                       input_scale_.transpose().array();
    return hyper_.signal_variance * correlation_from(pairwise_sq(u), hyper_.length_scales);
}

void GpModel::save(std::ostream& out) const {
    out << "gp 1\n";
    out << "size " << train_.rows() << ' ' << train_.cols() << '\n';
    out << "offset " << hex(output_offset_) << '\n';
    out << "signal_variance " << hex(hyper_.signal_variance) << '\n';
    out << "nugget " << hex(hyper_.nugget) << '\n';
    out << "log_marginal " << hex(log_marginal_) << '\n';
    out << "escalations " << nugget_escalations_ << '\n';
    out << "length_scales ";
    write_vector(out, hyper_.length_scales);
    out << "input_mean ";
    write_vector(out, input_mean_);
    out << "input_scale ";
    write_vector(out, input_scale_);
    out << "noise " << noise_.size() << ' ';
    write_vector(out, noise_);
    out << "train\n";
    for (Eigen::Index i = 0; i < train_.rows(); ++i) write_vector(out, train_.row(i).transpose());
    out << "chol\n";
    for (Eigen::Index i = 0; i < chol_.rows(); ++i) write_vector(out, chol_.row(i).head(i + 1).transpose());
    out << "alpha ";
    write_vector(out, alpha_);
}

GpModel GpModel::load(std::istream& in) {
    expect(in, "gp");
    if (read_int(in) != 1) throw InputError("unsupported GP format version");
    expect(in, "size");
    const long long n = read_int(in);
    const long long d = read_int(in);
    if (n < 2 || d < 1) throw InputError("GP file has an invalid size");
    GpModel m;
    expect(in, "offset");
    m.output_offset_ = read_double(in);
    expect(in, "signal_variance");
    m.hyper_.signal_variance = read_double(in);
    expect(in, "nugget");
    m.hyper_.nugget = read_double(in);
    expect(in, "log_marginal");
    m.log_marginal_ = read_double(in);
    expect(in, "escalations");
    m.nugget_escalations_ = static_cast<int>(read_int(in));
    expect(in, "length_scales");
    m.hyper_.length_scales = read_vector(in, d);
    expect(in, "input_mean");
    m.input_mean_ = read_vector(in, d);
    expect(in, "input_scale");
    m.input_scale_ = read_vector(in, d);
    expect(in, "noise");
    const long long nn = read_int(in);
    if (nn != 0 && nn != n) throw InputError("GP file noise length does not match its size");
    m.noise_ = read_vector(in, nn);
    expect(in, "train");
    m.train_.resize(n, d);
    for (long long i = 0; i < n; ++i) m.train_.row(i) = read_vector(in, d).transpose();
    expect(in, "chol");
    m.chol_ = MatrixXd::Zero(n, n);
    for (long long i = 0; i < n; ++i) m.chol_.row(i).head(i + 1) = read_vector(in, i + 1).transpose();
    expect(in, "alpha");
    m.alpha_ = read_vector(in, n);
    return m;
}

GpQuality validate_gp(const GpModel& model, const MatrixXd& holdout_inputs, const VectorXd& holdout_outputs) {
    if (holdout_inputs.rows() != holdout_outputs.size() || holdout_inputs.rows() == 0)
        throw InputError("holdout set must be non-empty with one output per input");
    const GpPrediction p = model.predict(holdout_inputs);
    const VectorXd err = p.mean - holdout_outputs;
    GpQuality q;
    q.n = static_cast<std::size_t>(err.size());
    q.rmse = std::sqrt(err.squaredNorm() / static_cast<double>(err.size()));
    q.max_abs_error = err.cwiseAbs().maxCoeff();
    std::size_t inside = 0;
    for (Eigen::Index i = 0; i < err.size(); ++i)
        if (std::abs(err[i]) <= 1.96 * std::sqrt(p.variance[i])) ++inside;
    q.coverage_fraction = static_cast<double>(inside) / static_cast<double>(err.size());
    return q;
}

// ---------------------------------------------------------------------------

namespace {

class BoundSurrogate final : public BoundResponse {
public:
    BoundSurrogate(const GpSurrogate& s, const MatrixXd& designs) : s_(s), rows_(designs.rows()) {
        for (const auto& m : s.models()) design_factor_.push_back(m.correlation_factor(designs, 0));
    }

    ResponseBatch evaluate(const VectorXd& theta) const override {
        if (static_cast<std::size_t>(theta.size()) != s_.param_dim())
            throw InputError("parameter vector has the wrong dimension");
        if (!theta.allFinite()) throw InputError("parameter vector must be finite");
        const auto nq = static_cast<Eigen::Index>(s_.qoi_dim());
        ResponseBatch out{MatrixXd(rows_, nq), MatrixXd(rows_, nq)};
        const MatrixXd t = theta.transpose();
        const auto dx = static_cast<Eigen::Index>(s_.design_dim());
        for (Eigen::Index k = 0; k < nq; ++k) {
            const GpModel& m = s_.models()[k];
            const MatrixXd f = m.correlation_factor(t, dx);
            const MatrixXd corr = design_factor_[k].array().rowwise() * f.row(0).array();
            const GpPrediction p = m.predict_from_correlation(corr);
            out.mean.col(k) = p.mean;
            out.variance.col(k) = p.variance;
        }
        return out;
    }

private:
    const GpSurrogate& s_;
    Eigen::Index rows_;
    std::vector<MatrixXd> design_factor_;
};

void write_names(std::ostream& out, const char* key, const std::vector<std::string>& names) {
    out << key << ' ' << names.size();
    for (const auto& n : names) out << ' ' << n;
    out << '\n';
}

std::vector<std::string> read_names(std::istream& in, const std::string& key) {
    expect(in, key);
    const long long n = read_int(in);
    if (n < 0) throw InputError("negative name count");
    std::vector<std::string> out(static_cast<std::size_t>(n));
    for (auto& s : out)
        if (!(in >> s)) throw InputError("surrogate file ended inside '" + key + "'");
    return out;
}

} // namespace

GpSurrogate::GpSurrogate(std::vector<std::string> design_names, std::vector<std::string> param_names,
                         std::vector<std::string> qoi_names, std::vector<GpModel> models)
    : design_names_(std::move(design_names)),
      param_names_(std::move(param_names)),
      qoi_names_(std::move(qoi_names)),
      models_(std::move(models)) {
    if (models_.size() != qoi_names_.size()) throw InputError("one GP is needed per QoI");
    for (const auto& m : models_)
        if (m.input_dim() != design_names_.size() + param_names_.size())
            throw InputError("GP input dimension does not match design + parameter names");
    for (const auto* names : {&design_names_, &param_names_, &qoi_names_})
        for (const auto& s : *names)
            if (s.empty() || s.find_first_of(" \t\n,") != std::string::npos)
                throw InputError("surrogate names must be non-empty and free of whitespace/commas: '" + s + "'");
}

GpSurrogate GpSurrogate::fit(const TrainingDesign& design, const MatrixXd& outputs,
                             std::vector<std::string> design_names, std::vector<std::string> param_names,
                             std::vector<std::string> qoi_names, const GpFitOptions& options) {
    if (outputs.rows() != design.samples.rows()) throw InputError("training outputs do not match the design size");
    if (static_cast<std::size_t>(outputs.cols()) != qoi_names.size())
        throw InputError("training outputs do not match the QoI names");
    std::vector<GpModel> models;
    for (Eigen::Index k = 0; k < outputs.cols(); ++k) {
        GpFitOptions o = options;
        o.seed = options.seed + static_cast<std::uint64_t>(k);
        models.push_back(GpModel::fit(design.samples, outputs.col(k), o));
        const auto& h = models.back().hyperparameters();
        spdlog::info("GP {}: s2={:.4g} nugget={:.3g} logL={:.6g}", qoi_names[k], h.signal_variance, h.nugget,
                     models.back().log_marginal_likelihood());
    }
    return GpSurrogate(std::move(design_names), std::move(param_names), std::move(qoi_names), std::move(models));
}

ResponseBatch GpSurrogate::predict(const MatrixXd& joint_points) const {
    const auto nq = static_cast<Eigen::Index>(qoi_dim());
    ResponseBatch out{MatrixXd(joint_points.rows(), nq), MatrixXd(joint_points.rows(), nq)};
    for (Eigen::Index k = 0; k < nq; ++k) {
        const GpPrediction p = models_[k].predict(joint_points);
        out.mean.col(k) = p.mean;
        out.variance.col(k) = p.variance;
    }
    return out;
}

ResponseBatch GpSurrogate::at_designs(const MatrixXd& designs, const VectorXd& theta) const {
    if (static_cast<std::size_t>(designs.cols()) != design_dim()) throw InputError("design matrix has the wrong width");
    if (!designs.allFinite()) throw InputError("design values must be finite");
    return BoundSurrogate(*this, designs).evaluate(theta);
}

ResponseBatch GpSurrogate::at_params(const VectorXd& design, const MatrixXd& thetas) const {
    if (static_cast<std::size_t>(design.size()) != design_dim()) throw InputError("design point has the wrong dimension");
    if (static_cast<std::size_t>(thetas.cols()) != param_dim()) throw InputError("parameter matrix has the wrong width");
    if (!design.allFinite() || !thetas.allFinite()) throw InputError("inputs must be finite");
    const auto nq = static_cast<Eigen::Index>(qoi_dim());
    ResponseBatch out{MatrixXd(thetas.rows(), nq), MatrixXd(thetas.rows(), nq)};
    const MatrixXd x = design.transpose();
    for (Eigen::Index k = 0; k < nq; ++k) {
        const MatrixXd fx = models_[k].correlation_factor(x, 0);
        const MatrixXd ft = models_[k].correlation_factor(thetas, static_cast<Eigen::Index>(design_dim()));
        const MatrixXd corr = ft.array().rowwise() * fx.row(0).array();
        const GpPrediction p = models_[k].predict_from_correlation(corr);
        out.mean.col(k) = p.mean;
        out.variance.col(k) = p.variance;
    }
    return out;
}

std::unique_ptr<BoundResponse> GpSurrogate::bind(const MatrixXd& designs) const {
    if (static_cast<std::size_t>(designs.cols()) != design_dim()) throw InputError("design matrix has the wrong width");
    if (!designs.allFinite()) throw InputError("design values must be finite");
    return std::make_unique<BoundSurrogate>(*this, designs);
}

void GpSurrogate::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    out << "calival-surrogate\nformat_version 1\n";
    write_names(out, "design_names", design_names_);
    write_names(out, "param_names", param_names_);
    write_names(out, "qoi_names", qoi_names_);
    for (std::size_t k = 0; k < models_.size(); ++k) {
        out << "model " << qoi_names_[k] << '\n';
        models_[k].save(out);
    }
    if (!out) throw InputError("failed writing '" + path.string() + "'");
}

GpSurrogate GpSurrogate::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    expect(in, "calival-surrogate");
    expect(in, "format_version");
    const long long version = read_int(in);
    if (version != 1) throw InputError(fmt::format("unsupported surrogate format_version {}", version));
    auto dn = read_names(in, "design_names");
    auto pn = read_names(in, "param_names");
    auto qn = read_names(in, "qoi_names");
    std::vector<GpModel> models;
    for (const auto& q : qn) {
        expect(in, "model");
        expect(in, q);
        models.push_back(GpModel::load(in));
    }
    return GpSurrogate(std::move(dn), std::move(pn), std::move(qn), std::move(models));
}

} // namespace calival
