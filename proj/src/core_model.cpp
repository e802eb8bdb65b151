#include "calival/core_model.hpp"

#include "calival/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace calival {

namespace {

bool all_finite(const VectorXd& v) { return v.allFinite(); }

void require(bool ok, const std::string& msg) {
    if (!ok) throw InputError(msg);
}

} // namespace

std::string to_string(Domain d) {
    switch (d) {
    case Domain::IUQ: return "IUQ";
    case Domain::VAL: return "VAL";
    case Domain::PRED: return "PRED";
    }
    return "IUQ";
}

Domain domain_from_string(const std::string& s) {
    if (s == "IUQ") return Domain::IUQ;
    if (s == "VAL") return Domain::VAL;
    if (s == "PRED") return Domain::PRED;
    throw InputError("unknown domain tag '" + s + "'");
}

void DesignPoint::validate() const {
    require(values.size() >= 1, "design point must have at least one dimension");
    require(all_finite(values), "design point has non-finite values");
    require(names.size() == dim(), "design point names do not match its dimension");
}

void ParamVector::validate() const {
    require(values.size() >= 1, "parameter vector must have at least one dimension");
    require(all_finite(values), "parameter vector has non-finite values");
}

void QoIVector::validate() const {
    require(values.size() >= 1, "QoI vector must have at least one dimension");
    require(all_finite(values), "QoI vector has non-finite values");
    require(names.size() == dim(), "QoI names do not match its dimension");
}

// ---------------------------------------------------------------------------

PriorSpec::PriorSpec(std::vector<ParameterPrior> params) : params_(std::move(params)) {
    require(!params_.empty(), "prior needs at least one parameter");
    for (const auto& p : params_) {
        require(std::isfinite(p.lower) && std::isfinite(p.upper) && std::isfinite(p.nominal),
                "prior bounds for '" + p.name + "' must be finite");
        require(p.lower < p.upper, "prior for '" + p.name + "' needs lower < upper");
        require(p.nominal >= p.lower && p.nominal <= p.upper,
                "nominal value of '" + p.name + "' lies outside its prior range");
    }
}

std::vector<std::string> PriorSpec::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.name);
    return out;
}

VectorXd PriorSpec::lower() const {
    VectorXd v(dim());
    for (std::size_t i = 0; i < dim(); ++i) v[i] = params_[i].lower;
    return v;
}

VectorXd PriorSpec::upper() const {
    VectorXd v(dim());
    for (std::size_t i = 0; i < dim(); ++i) v[i] = params_[i].upper;
    return v;
}

VectorXd PriorSpec::nominal() const {
    VectorXd v(dim());
    for (std::size_t i = 0; i < dim(); ++i) v[i] = params_[i].nominal;
    return v;
}

VectorXd PriorSpec::width() const { return upper() - lower(); }

bool PriorSpec::contains(const VectorXd& theta) const {
    if (static_cast<std::size_t>(theta.size()) != dim()) return false;
    for (std::size_t i = 0; i < dim(); ++i) {
        if (!(theta[i] >= params_[i].lower && theta[i] <= params_[i].upper)) return false;
    }
    return true;
}

double PriorSpec::log_density() const { return -width().array().log().sum(); }

MatrixXd PriorSpec::sample(std::size_t n, std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    MatrixXd out(n, dim());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < dim(); ++c)
            out(r, c) = params_[c].lower + unit(rng) * (params_[c].upper - params_[c].lower);
    return out;
}

// ---------------------------------------------------------------------------

Dataset::Dataset(std::vector<std::string> design_names, std::vector<std::string> qoi_names,
                 std::vector<Observation> observations)
    : design_names_(std::move(design_names)),
      qoi_names_(std::move(qoi_names)),
      observations_(std::move(observations)) {
    validate();
}

void Dataset::validate() const {
    require(!design_names_.empty(), "dataset needs at least one design variable");
    require(!qoi_names_.empty(), "dataset needs at least one QoI");
    std::set<std::string> ids;
    for (const auto& o : observations_) {
        require(o.design.names == design_names_,
                "observation '" + o.test_id + "' has inconsistent design names");
        require(o.measured.names == qoi_names_,
                "observation '" + o.test_id + "' has inconsistent QoI names");
        o.design.validate();
        o.measured.validate();
        require(o.measurement_variance.size() == o.measured.values.size(),
                "observation '" + o.test_id + "' variance dimension mismatch");
        require(all_finite(o.measurement_variance) && (o.measurement_variance.array() >= 0.0).all(),
                "observation '" + o.test_id + "' has negative or non-finite variance");
        require(ids.insert(o.test_id).second, "duplicate test_id '" + o.test_id + "'");
    }
}

MatrixXd Dataset::design_matrix() const {
    MatrixXd m(size(), design_names_.size());
    for (std::size_t i = 0; i < size(); ++i) m.row(i) = observations_[i].design.values.transpose();
    return m;
}

MatrixXd Dataset::measured_matrix() const {
    MatrixXd m(size(), qoi_names_.size());
    for (std::size_t i = 0; i < size(); ++i) m.row(i) = observations_[i].measured.values.transpose();
    return m;
}

MatrixXd Dataset::variance_matrix() const {
    MatrixXd m(size(), qoi_names_.size());
    for (std::size_t i = 0; i < size(); ++i) m.row(i) = observations_[i].measurement_variance.transpose();
    return m;
}

const Observation* Dataset::find(const std::string& test_id) const {
    for (const auto& o : observations_)
        if (o.test_id == test_id) return &o;
    return nullptr;
}

Dataset Dataset::with_domain(Domain d) const {
    std::vector<Observation> obs = observations_;
    for (auto& o : obs) o.domain = d;
    return Dataset(design_names_, qoi_names_, std::move(obs));
}

// ---------------------------------------------------------------------------

UncertaintyBudget UncertaintyBudget::diagonal(const VectorXd& exp_var, const VectorXd& bias_var,
                                              const VectorXd& code_var) {
    return {exp_var.asDiagonal(), bias_var.asDiagonal(), code_var.asDiagonal()};
}

MatrixXd UncertaintyBudget::total() const { return exp + bias + code; }

void UncertaintyBudget::validate() const {
    const auto check = [](const MatrixXd& m, const char* name) {
        if (m.rows() != m.cols()) throw InputError(std::string(name) + " covariance is not square");
        if (!m.allFinite()) throw InputError(std::string(name) + " covariance is not finite");
        if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + m.cwiseAbs().maxCoeff()))
            throw InputError(std::string(name) + " covariance is not symmetric");
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(m, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -1e-12 * (1.0 + m.cwiseAbs().maxCoeff()))
            throw InputError(std::string(name) + " covariance is not positive semidefinite");
    };
    check(exp, "experimental");
    check(bias, "bias");
    check(code, "code");
    if (exp.rows() != bias.rows() || exp.rows() != code.rows())
        throw InputError("budget components have different dimensions");
}

// ---------------------------------------------------------------------------

QoIVector ComputerModel::evaluate(const DesignPoint& x, const ParamVector& theta) const {
    if (x.dim() != design_dim())
        throw InputError("design dimension " + std::to_string(x.dim()) + " does not match model (" +
                         std::to_string(design_dim()) + ")");
    if (theta.dim() != param_dim())
        throw InputError("parameter dimension " + std::to_string(theta.dim()) +
                         " does not match model (" + std::to_string(param_dim()) + ")");
    if (!all_finite(x.values) || !all_finite(theta.values))
        throw InputError("model inputs must be finite");
    QoIVector out{evaluate_raw(x.values, theta.values), qoi_names()};
    if (!all_finite(out.values)) throw NumericalError("model produced non-finite output");
    return out;
}

std::vector<std::string> BenchmarkModel::design_names() const {
    return {"pressure", "flow", "power", "inlet_temperature"};
}

std::vector<std::string> BenchmarkModel::qoi_names() const {
    return {"VoidF1", "VoidF2", "VoidF3", "VoidF4"};
}

double BenchmarkModel::saturation_temperature(double pressure_mpa) {
    return 260.0 + 26.0 * (pressure_mpa - 6.0);
}

VectorXd BenchmarkModel::injected_bias(const VectorXd& x) {
    const double q = x[2] / kPowerRef;
    VectorXd b(4);
    for (int k = 0; k < 4; ++k) b[k] = 1.5 * kAxial[k] * (q - 1.0);
    return b;
}

VectorXd BenchmarkModel::ground_truth_theta() {
    VectorXd t(5);
    t << 1.2, 0.9, 1.1, 0.8, 1.05;
    return t;
}

VectorXd BenchmarkModel::evaluate_raw(const VectorXd& x, const VectorXd& theta) const {
    const double q = x[2] / kPowerRef;
    const double c = (saturation_temperature(x[0]) - x[3]) / kSubcoolingRef;
    const double g = x[1] / kFlowRef;
    VectorXd out(4);
    for (int k = 0; k < 4; ++k) {
        const double z = kAxial[k];
        const double num = theta[1] * q * z - theta[0] * 0.15 * c;
        const double den = theta[2] * 0.6 * q * z + theta[3] * 0.5 + theta[4] * 0.4 * g;
        double ratio;
        if (den > 0.0)
            ratio = num / den;
        else  // degenerate drag terms: saturate by the sign of the drive
            ratio = num > 0.0 ? 1.0 : 0.0;
        out[k] = 100.0 * std::clamp(ratio, 0.0, 1.0);
    }
    return out;
}

// ---------------------------------------------------------------------------

std::unique_ptr<BoundResponse> ResponseEvaluator::bind(const MatrixXd& designs) const {
    class Generic final : public BoundResponse {
    public:
        Generic(const ResponseEvaluator& e, MatrixXd d) : eval_(e), designs_(std::move(d)) {}
        ResponseBatch evaluate(const VectorXd& theta) const override {
            return eval_.at_designs(designs_, theta);
        }

    private:
        const ResponseEvaluator& eval_;
        MatrixXd designs_;
    };
    return std::make_unique<Generic>(*this, designs);
}

ExactEvaluator::ExactEvaluator(std::shared_ptr<const ComputerModel> model)
    : model_(std::move(model)), design_names_(model_->design_names()) {}

ResponseBatch ExactEvaluator::at_designs(const MatrixXd& designs, const VectorXd& theta) const {
    ResponseBatch out{MatrixXd(designs.rows(), qoi_dim()), MatrixXd::Zero(designs.rows(), qoi_dim())};
    const ParamVector p{theta};
    for (Eigen::Index i = 0; i < designs.rows(); ++i)
        out.mean.row(i) = model_->evaluate({designs.row(i).transpose(), design_names_}, p).values.transpose();
    return out;
}

ResponseBatch ExactEvaluator::at_params(const VectorXd& design, const MatrixXd& thetas) const {
    ResponseBatch out{MatrixXd(thetas.rows(), qoi_dim()), MatrixXd::Zero(thetas.rows(), qoi_dim())};
    const DesignPoint x{design, design_names_};
    for (Eigen::Index i = 0; i < thetas.rows(); ++i)
        out.mean.row(i) = model_->evaluate(x, {thetas.row(i).transpose()}).values.transpose();
    return out;
}

// ---------------------------------------------------------------------------

CorrectionFamily correction_family_from_string(const std::string& s) {
    if (s == "standard") return CorrectionFamily::Standard;
    if (s == "high_burnup") return CorrectionFamily::HighBurnup;
    throw InputError("unknown correction family '" + s + "'");
}

std::string to_string(CorrectionFamily f) {
    return f == CorrectionFamily::Standard ? "standard" : "high_burnup";
}

double correct_void_fraction(double alpha_measured, CorrectionFamily family) {
    if (!(alpha_measured >= 0.0 && alpha_measured <= 100.0))
        throw InputError("void fraction must lie in [0, 100] %");
    if (alpha_measured < 20.0 || alpha_measured > 90.0) return alpha_measured;
    const double base = family == CorrectionFamily::Standard ? 1.231 : 1.167;
    return alpha_measured / (base - 0.001 * alpha_measured);
}

Dataset correct_dataset(const Dataset& data, CorrectionFamily family,
                        const std::vector<std::string>& exempt) {
    std::vector<Observation> obs = data.observations();
    const auto& names = data.qoi_names();
    for (auto& o : obs) {
        for (std::size_t k = 0; k < names.size(); ++k) {
            if (std::find(exempt.begin(), exempt.end(), names[k]) != exempt.end()) continue;
            o.measured.values[k] = correct_void_fraction(o.measured.values[k], family);
        }
    }
    return Dataset(data.design_names(), data.qoi_names(), std::move(obs));
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, std::uint64_t seed) {
    if (data.size() < 2) throw InputError("split needs at least two observations");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    // Fisher-Yates with an explicit draw so the permutation does not depend
    // on the standard library's shuffle implementation.
    for (std::size_t i = order.size() - 1; i > 0; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i);
        std::swap(order[i], order[pick(rng)]);
    }
    const std::size_t n_val = (data.size() + 1) / 2;
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
    std::vector<std::size_t> pred_idx(order.begin() + n_val, order.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(pred_idx.begin(), pred_idx.end());

    std::vector<Observation> val, pred;
    for (auto i : val_idx) {
        val.push_back(data[i]);
        val.back().domain = Domain::VAL;
    }
    for (auto i : pred_idx) {
        pred.push_back(data[i]);
        pred.back().domain = Domain::PRED;
    }
    return {Dataset(data.design_names(), data.qoi_names(), std::move(val)),
            Dataset(data.design_names(), data.qoi_names(), std::move(pred))};
}

Dataset generate_benchmark_data(const GeneratorSettings& s, std::uint64_t seed) {
    const BenchmarkModel model;
    const auto dnames = model.design_names();
    require(s.ranges.size() == dnames.size(), "generator needs one range per design variable");
    for (std::size_t i = 0; i < dnames.size(); ++i) {
        require(s.ranges[i].name == dnames[i],
                "generator range " + std::to_string(i) + " must be '" + dnames[i] + "'");
        require(std::isfinite(s.ranges[i].lower) && std::isfinite(s.ranges[i].upper) &&
                    s.ranges[i].lower <= s.ranges[i].upper,
                "invalid generator range for '" + dnames[i] + "'");
    }
    require(s.theta_true.size() == static_cast<Eigen::Index>(model.param_dim()),
            "theta_true must have 5 entries");
    require(s.noise_std >= 0.0 && std::isfinite(s.noise_std), "noise_std must be >= 0");
    require(s.n_tests >= 1, "generator needs at least one test");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    const auto qnames = model.qoi_names();
    std::vector<Observation> obs;
    obs.reserve(s.n_tests);
    const int width = static_cast<int>(std::to_string(s.n_tests).size());
    for (std::size_t t = 0; t < s.n_tests; ++t) {
        VectorXd x(dnames.size());
        for (std::size_t i = 0; i < dnames.size(); ++i)
            x[i] = s.ranges[i].lower + unit(rng) * (s.ranges[i].upper - s.ranges[i].lower);
        VectorXd y = model.evaluate({x, dnames}, {s.theta_true}).values;
        if (s.inject_bias) y += BenchmarkModel::injected_bias(x);
        for (Eigen::Index k = 0; k < y.size(); ++k) {
            const double e = noise(rng);
            if (s.noise_std > 0.0) y[k] += s.noise_std * e;
        }
        y = y.cwiseMax(0.0).cwiseMin(100.0);
        std::string id = std::to_string(t + 1);
        id = s.id_prefix + std::string(width - static_cast<int>(id.size()), '0') + id;
        obs.push_back({{x, dnames},
                       {y, qnames},
                       VectorXd::Constant(y.size(), s.noise_std * s.noise_std),
                       s.domain,
                       id});
    }
    return Dataset(dnames, qnames, std::move(obs));
}

} // namespace calival
