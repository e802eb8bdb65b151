#pragma once

#include "calival/core_model.hpp"
#include "calival/surrogate_gp.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace calival {

// How the discrepancy enters the likelihood.
//   Disabled     delta = 0, Sigma_bias = 0.
//   Conditional  delta(x) = bias-GP mean, Sigma_bias = diag of its predictive variance.
//   Marginal     delta = 0, residuals of each QoI across tests share the bias-GP
//                prior covariance K_b, added to Sigma_exp + Sigma_code.
enum class BiasTreatment { Disabled, Conditional, Marginal };

std::string to_string(BiasTreatment t);
BiasTreatment bias_treatment_from_string(const std::string& s);

class BiasModel {
public:
    BiasModel() = default;
    static BiasModel disabled();
    BiasModel(BiasTreatment treatment, VectorXd theta_ref, std::vector<std::string> qoi_names,
              std::vector<GpModel> models);

    BiasTreatment treatment() const { return treatment_; }
    bool enabled() const { return treatment_ != BiasTreatment::Disabled; }
    const VectorXd& theta_ref() const { return theta_ref_; }
    const std::vector<GpModel>& models() const { return models_; }
    const std::vector<std::string>& qoi_names() const { return qoi_names_; }

    // Bias mean and variance at design rows (zero when disabled).
    ResponseBatch at(const MatrixXd& designs, std::size_t qoi_dim) const;
    // Prior covariance of delta_k across design rows.
    MatrixXd covariance(const MatrixXd& designs, std::size_t qoi) const;

    void save(const std::filesystem::path& path) const;
    static BiasModel load(const std::filesystem::path& path);

private:
    BiasTreatment treatment_ = BiasTreatment::Disabled;
    VectorXd theta_ref_;
    std::vector<std::string> qoi_names_;
    std::vector<GpModel> models_;
};

struct BiasFitOptions {
    BiasTreatment treatment = BiasTreatment::Marginal;
    GpFitOptions gp;
};

/// Fits one GP over x per QoI to the residuals y_E(x) - y_M(x, theta_ref),
/// with the known experimental (+ code) variance on the diagonal.
BiasModel estimate_bias(const Dataset& iuq, const ResponseEvaluator& model, const VectorXd& theta_ref,
                        const BiasFitOptions& options);

/// Log of N(residual; 0, budget.total()) after validating the budget.
double log_likelihood_term(const VectorXd& residual, const UncertaintyBudget& budget);

/// Log-likelihood of the IUQ data as a function of theta. Designs are bound
/// once so repeated evaluation only pays for the parameter-dependent part.
class IuqLikelihood {
public:
    IuqLikelihood(const Dataset& iuq, const ResponseEvaluator& model, const BiasModel& bias);

    double operator()(const VectorXd& theta) const;

private:
    double diagonal(const ResponseBatch& r) const;
    double marginal(const ResponseBatch& r) const;

    const Dataset* data_;
    std::unique_ptr<BoundResponse> bound_;
    BiasTreatment treatment_;
    MatrixXd measured_;
    MatrixXd exp_var_;
    MatrixXd delta_;
    MatrixXd bias_var_;
    std::vector<MatrixXd> bias_cov_;
};

double log_likelihood(const VectorXd& theta, const Dataset& iuq, const ResponseEvaluator& model,
                      const BiasModel& bias);

// ---------------------------------------------------------------------------

struct McmcConfig {
    std::size_t n_samples = 100000;  // post-burn-in iterations
    std::size_t burn_in = 20000;
    std::size_t thinning = 10;
    std::uint64_t seed = 0;
    std::optional<VectorXd> initial;  // defaults to the prior nominal
    double target_acceptance = 0.30;
    std::size_t adapt_window = 100;
};

struct McmcChain {
    MatrixXd samples;  // kept (post-burn-in, thinned) draws
    VectorXd log_posterior;
    std::vector<long long> steps;  // 1-based iteration index, burn-in included
    double acceptance_rate = 0.0;  // post-burn-in
    std::size_t burn_in = 0;
    std::size_t thinning = 1;
    std::uint64_t seed = 0;
    VectorXd proposal_scale;  // frozen after burn-in
};

using LogDensity = std::function<double(const VectorXd&)>;

/// Adaptive random-walk Metropolis with diagonal Gaussian proposals on the
/// prior box. Proposals outside the box are rejected without evaluating
/// `log_post`. Scales adapt between windows during burn-in only.
McmcChain run_mcmc(const PriorSpec& prior, const LogDensity& log_post, const McmcConfig& config);

struct PosteriorMoments {
    VectorXd mean;
    VectorXd std;
};

PosteriorMoments posterior_moments(const McmcChain& chain);

struct ChainDiagnostics {
    double acceptance_rate = 0.0;
    double effective_sample_size = 0.0;  // min over parameters
    double split_rhat = 1.0;             // max over parameters
    VectorXd ess;
    VectorXd rhat;
    bool degenerate = false;  // some parameter never moved
    std::size_t segments = 0;
};

/// Geyer initial-positive-sequence ESS summed over segments, and split-R-hat
/// with every chain cut into two halves.
ChainDiagnostics chain_diagnostics(const std::vector<McmcChain>& chains);
ChainDiagnostics chain_diagnostics(const McmcChain& chain);
// Single-series ESS, exposed for testing.
double effective_sample_size(const VectorXd& series);

void write_chain_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                     const McmcChain& chain);
void write_diagnostics_report(const std::filesystem::path& path, const std::vector<std::string>& names,
                              const ChainDiagnostics& diag, const PosteriorMoments& moments);

} // namespace calival
