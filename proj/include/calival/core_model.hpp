#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace calival {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Which part of the workflow an observation belongs to.
enum class Domain { IUQ, VAL, PRED };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

struct DesignPoint {
    VectorXd values;
    std::vector<std::string> names;

    std::size_t dim() const { return static_cast<std::size_t>(values.size()); }
    void validate() const;
};

struct ParamVector {
    VectorXd values;

    std::size_t dim() const { return static_cast<std::size_t>(values.size()); }
    void validate() const;
};

struct QoIVector {
    VectorXd values;
    std::vector<std::string> names;

    std::size_t dim() const { return static_cast<std::size_t>(values.size()); }
    void validate() const;
};

struct ParameterPrior {
    std::string name;
    double lower = 0.0;
    double upper = 1.0;
    double nominal = 0.5;
};

/// Independent uniform priors on a box. The nominal vector is the
/// pre-calibration best guess and doubles as the bias reference point.
class PriorSpec {
public:
    PriorSpec() = default;
    explicit PriorSpec(std::vector<ParameterPrior> params);

    std::size_t dim() const { return params_.size(); }
    const std::vector<ParameterPrior>& parameters() const { return params_; }
    std::vector<std::string> names() const;

    VectorXd lower() const;
    VectorXd upper() const;
    VectorXd nominal() const;
    VectorXd width() const;

    bool contains(const VectorXd& theta) const;
    // Log density of the uniform box prior at an interior point.
    double log_density() const;
    // n x dim matrix of independent uniform draws.
    MatrixXd sample(std::size_t n, std::mt19937_64& rng) const;

private:
    std::vector<ParameterPrior> params_;
};

struct Observation {
    DesignPoint design;
    QoIVector measured;
    VectorXd measurement_variance;  // diagonal of the experimental covariance
    Domain domain = Domain::IUQ;
    std::string test_id;
};

class Dataset {
public:
    Dataset() = default;
    Dataset(std::vector<std::string> design_names, std::vector<std::string> qoi_names,
            std::vector<Observation> observations);

    const std::vector<std::string>& design_names() const { return design_names_; }
    const std::vector<std::string>& qoi_names() const { return qoi_names_; }
    const std::vector<Observation>& observations() const { return observations_; }
    std::size_t size() const { return observations_.size(); }
    bool empty() const { return observations_.empty(); }
    const Observation& operator[](std::size_t i) const { return observations_[i]; }

    // Row-stacked design values, measured QoIs and measurement variances.
    MatrixXd design_matrix() const;
    MatrixXd measured_matrix() const;
    MatrixXd variance_matrix() const;

    const Observation* find(const std::string& test_id) const;
    Dataset with_domain(Domain d) const;

    void validate() const;

private:
    std::vector<std::string> design_names_;
    std::vector<std::string> qoi_names_;
    std::vector<Observation> observations_;
};

/// Three-part covariance budget: experimental, model-bias and code
/// (surrogate interpolation) uncertainty.
struct UncertaintyBudget {
    MatrixXd exp;
    MatrixXd bias;
    MatrixXd code;

    static UncertaintyBudget diagonal(const VectorXd& exp_var, const VectorXd& bias_var,
                                      const VectorXd& code_var);
    MatrixXd total() const;
    void validate() const;
};

/// A deterministic computer model y = f(x, theta).
class ComputerModel {
public:
    virtual ~ComputerModel() = default;

    virtual std::vector<std::string> design_names() const = 0;
    virtual std::vector<std::string> qoi_names() const = 0;
    virtual std::size_t param_dim() const = 0;

    std::size_t design_dim() const { return design_names().size(); }
    std::size_t qoi_dim() const { return qoi_names().size(); }

    QoIVector evaluate(const DesignPoint& x, const ParamVector& theta) const;

protected:
    virtual VectorXd evaluate_raw(const VectorXd& x, const VectorXd& theta) const = 0;
};

/// Closed-form stand-in for a two-phase bundle thermal-hydraulics code.
/// Design: pressure [MPa], mass flow [kg/s], power [MW], inlet temperature
/// [degC]. Outputs: four axial void fractions [%] at z = 0.25, 0.5, 0.75, 1.
class BenchmarkModel final : public ComputerModel {
public:
    static constexpr double kPowerRef = 6.5;
    static constexpr double kSubcoolingRef = 12.0;
    static constexpr double kFlowRef = 15.0;
    static constexpr std::size_t kParamDim = 5;
    static constexpr double kAxial[4] = {0.25, 0.50, 0.75, 1.00};

    std::vector<std::string> design_names() const override;
    std::vector<std::string> qoi_names() const override;
    std::size_t param_dim() const override { return kParamDim; }

    static double saturation_temperature(double pressure_mpa);
    // Injected model discrepancy used by the synthetic data generator.
    static VectorXd injected_bias(const VectorXd& x);
    static VectorXd ground_truth_theta();

    VectorXd evaluate_values(const VectorXd& x, const VectorXd& theta) const {
        return evaluate_raw(x, theta);
    }

protected:
    VectorXd evaluate_raw(const VectorXd& x, const VectorXd& theta) const override;
};

// ---------------------------------------------------------------------------
// Response evaluation with optional code uncertainty. The exact model reports
// zero variance; a surrogate reports its predictive variance.

struct ResponseBatch {
    MatrixXd mean;      // rows = points, cols = QoIs
    MatrixXd variance;  // same shape, code variance
};

/// Evaluator pre-bound to a fixed set of design points, evaluated
/// repeatedly for varying theta (the MCMC inner loop).
class BoundResponse {
public:
    virtual ~BoundResponse() = default;
    virtual ResponseBatch evaluate(const VectorXd& theta) const = 0;
};

class ResponseEvaluator {
public:
    virtual ~ResponseEvaluator() = default;

    virtual std::size_t design_dim() const = 0;
    virtual std::size_t param_dim() const = 0;
    virtual std::size_t qoi_dim() const = 0;

    // Each row of `designs` evaluated at one theta.
    virtual ResponseBatch at_designs(const MatrixXd& designs, const VectorXd& theta) const = 0;
    // One design evaluated at each row of `thetas`.
    virtual ResponseBatch at_params(const VectorXd& design, const MatrixXd& thetas) const = 0;

    virtual std::unique_ptr<BoundResponse> bind(const MatrixXd& designs) const;
};

/// Direct model evaluation; code variance is identically zero.
class ExactEvaluator final : public ResponseEvaluator {
public:
    explicit ExactEvaluator(std::shared_ptr<const ComputerModel> model);

    std::size_t design_dim() const override { return model_->design_dim(); }
    std::size_t param_dim() const override { return model_->param_dim(); }
    std::size_t qoi_dim() const override { return model_->qoi_dim(); }

    ResponseBatch at_designs(const MatrixXd& designs, const VectorXd& theta) const override;
    ResponseBatch at_params(const VectorXd& design, const MatrixXd& thetas) const override;

private:
    std::shared_ptr<const ComputerModel> model_;
    std::vector<std::string> design_names_;
};

// ---------------------------------------------------------------------------
// Benchmark data utilities.

enum class CorrectionFamily { Standard, HighBurnup };

CorrectionFamily correction_family_from_string(const std::string& s);
std::string to_string(CorrectionFamily f);

/// Densitometer void-fraction correction. Applied only on [20, 90] %;
/// values outside that range pass through unchanged.
double correct_void_fraction(double alpha_measured, CorrectionFamily family);

/// Applies the correction to every QoI except those named in `exempt`.
Dataset correct_dataset(const Dataset& data, CorrectionFamily family,
                        const std::vector<std::string>& exempt);

/// Seeded random half-split. Validation receives ceil(n/2) observations.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, std::uint64_t seed);

struct DesignRange {
    std::string name;
    double lower = 0.0;
    double upper = 1.0;
};

struct GeneratorSettings {
    VectorXd theta_true;
    double noise_std = 1.5;
    bool inject_bias = true;
    std::size_t n_tests = 86;
    std::vector<DesignRange> ranges;
    std::string id_prefix = "T";
    Domain domain = Domain::IUQ;
};

/// Synthetic experiments: benchmark truth at theta_true, plus optional
/// injected discrepancy and Gaussian measurement noise.
Dataset generate_benchmark_data(const GeneratorSettings& settings, std::uint64_t seed);

} // namespace calival
