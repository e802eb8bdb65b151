#pragma once

#include "calival/copula_resampler.hpp"
#include "calival/core_model.hpp"
#include "calival/inverse_uq.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace calival {

enum class Hypothesis { H0Posterior, H1Prior };
enum class EnsembleSource { CopulaFromChain, PriorDirect };

struct HypothesisEnsemble {
    Hypothesis label = Hypothesis::H0Posterior;
    MatrixXd samples;  // n x d_theta
    EnsembleSource source = EnsembleSource::CopulaFromChain;

    void validate(const PriorSpec& prior) const;
};

HypothesisEnsemble prior_ensemble(const PriorSpec& prior, std::size_t n, std::uint64_t seed);
HypothesisEnsemble posterior_ensemble(const CopulaModel& copula, std::size_t n, std::uint64_t seed);

/// Multivariate normal density N(residual; 0, covariance).
double gaussian_density(const VectorXd& residual, const MatrixXd& covariance);

struct BfPolicy {
    bool joint_qoi = false;            // one density over all QoIs instead of per QoI
    const BiasModel* bias = nullptr;   // when set, its variance at x joins Sigma
};

struct BfEntry {
    std::string test_id;
    std::string qoi;  // "joint" in joint mode
    double bf = 1.0;
    double log_numerator = 0.0;    // log of the H0 Monte Carlo mean density
    double log_denominator = 0.0;  // log of the H1 Monte Carlo mean density
    double mc_se = 0.0;            // delta-method standard error of bf
    bool infinite = false;         // denominator estimate underflowed to zero
};

struct BayesFactorReport {
    std::string dataset;
    std::string bias_mode;
    std::vector<std::string> qoi_names;  // {"joint"} in joint mode
    std::vector<BfEntry> entries;        // test-major, QoI-minor
    std::size_t n0 = 0;
    std::size_t n1 = 0;
    bool joint_qoi = false;
    bool bias_variance_included = false;
};

/// B = mean_j N(y_E; y_M(x, theta0_j), Sigma) / mean_j N(y_E; y_M(x, theta1_j), Sigma)
/// with Sigma = Sigma_exp + Sigma_code (+ Sigma_bias under the policy flag).
BayesFactorReport estimate_bayes_factor(const Dataset& val, const HypothesisEnsemble& h0,
                                        const HypothesisEnsemble& h1, const ResponseEvaluator& model,
                                        const BfPolicy& policy = {});

enum class BfAggregation { Arithmetic, Geometric };
std::string to_string(BfAggregation a);
BfAggregation bf_aggregation_from_string(const std::string& s);

struct AggregatedBf {
    std::string dataset;
    std::string bias_mode;
    std::string qoi;
    double bf = 1.0;
    std::size_t n_tests = 0;
    BfAggregation aggregation = BfAggregation::Arithmetic;
};

std::vector<AggregatedBf> aggregate_bf(const BayesFactorReport& report,
                                       BfAggregation mode = BfAggregation::Arithmetic);

void write_bf_report_csv(const std::filesystem::path& path, const std::vector<BayesFactorReport>& reports);
void write_bf_aggregate_csv(const std::filesystem::path& path, const std::vector<AggregatedBf>& rows);
std::vector<AggregatedBf> read_bf_aggregate_csv(const std::filesystem::path& path);

} // namespace calival
