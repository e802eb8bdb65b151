#pragma once

#include "calival/core_model.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace calival {

struct BmaWeights {
    double posterior = 0.5;  // B / (B + 1)
    double prior = 0.5;      // 1 / (B + 1)
};

/// Weights from a Bayes factor. B = +inf maps to (1, 0).
BmaWeights bma_weights(double bayes_factor);

struct MomentPair {
    double mean = 0.0;
    double std = 0.0;
};

enum class MixtureStdMode { Mixture, WeightedStd };
std::string to_string(MixtureStdMode m);
MixtureStdMode mixture_std_mode_from_string(const std::string& s);

/// Two-component mixture: mean w0*m0 + w1*m1; variance
/// w0*s0^2 + w1*s1^2 + w0*w1*(m0 - m1)^2, or w0*s0 + w1*s1 as the std in
/// weighted-std mode.
MomentPair mix_moments(const MomentPair& posterior, const MomentPair& prior, const BmaWeights& w,
                       MixtureStdMode mode = MixtureStdMode::Mixture);

/// Per-QoI mean and sample std of y_M(x, theta) over an ensemble.
std::vector<MomentPair> ensemble_moments(const ResponseEvaluator& model, const VectorXd& x, const MatrixXd& thetas);

std::vector<MomentPair> bma_predict(const VectorXd& x, const MatrixXd& prior_samples, const MatrixXd& posterior_samples,
                                    const std::vector<BmaWeights>& weights, const ResponseEvaluator& model,
                                    MixtureStdMode mode = MixtureStdMode::Mixture);

struct PredictionRow {
    std::string model;  // A..E
    std::string test_id;
    std::string qoi;
    double mean = 0.0;
    double std = 0.0;
    std::size_t n = 0;
};

struct PredictionSummary {
    std::string dataset;
    std::vector<std::string> qoi_names;
    std::vector<PredictionRow> rows;
    std::map<std::string, BmaWeights> weights_d;  // keyed by QoI
    std::map<std::string, BmaWeights> weights_e;
    MixtureStdMode mode = MixtureStdMode::Mixture;

    const PredictionRow& find(const std::string& model, const std::string& test_id, const std::string& qoi) const;
};

/// Models: A prior, B posterior without bias, C posterior with bias,
/// D = BMA(A, B) with the no-bias Bayes factors, E = BMA(A, C) with the
/// with-bias Bayes factors. Bayes factors are keyed by QoI name. A null
/// posterior drops the corresponding pair of models.
PredictionSummary model_ensemble_predict(const Dataset& pred, const MatrixXd& prior_samples,
                                         const MatrixXd* posterior_with_bias, const MatrixXd* posterior_no_bias,
                                         const std::map<std::string, double>& bf_no_bias,
                                         const std::map<std::string, double>& bf_with_bias,
                                         const ResponseEvaluator& model,
                                         MixtureStdMode mode = MixtureStdMode::Mixture);

struct ErrorRow {
    std::string model;
    std::string qoi;
    double mean_abs_error = 0.0;
    std::size_t n_tests = 0;
};

std::vector<ErrorRow> error_report(const PredictionSummary& summary, const Dataset& withheld);

void write_prediction_csv(const std::filesystem::path& path, const PredictionSummary& summary);
PredictionSummary read_prediction_csv(const std::filesystem::path& path);
void write_error_csv(const std::filesystem::path& path, const std::string& dataset, const std::vector<ErrorRow>& rows);
// Per-test absolute error and std series, one row per (qoi, test, model).
void write_plot_data_csv(const std::filesystem::path& path, const PredictionSummary& summary, const Dataset& withheld);

} // namespace calival
