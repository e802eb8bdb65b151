#pragma once

#include "calival/core_model.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace calival {

struct Bounds {
    VectorXd lower;
    VectorXd upper;

    std::size_t dim() const { return static_cast<std::size_t>(lower.size()); }
    void validate() const;
};

struct TrainingDesign {
    MatrixXd samples;  // n x d, inside the bounds
    Bounds bounds;
    std::string scheme = "latin_hypercube";
    std::uint64_t seed = 0;
};

/// Latin hypercube sample: one point per stratum in every dimension,
/// jittered uniformly inside the stratum.
TrainingDesign build_training_design(const Bounds& bounds, std::size_t n, std::uint64_t seed);

struct GpHyperparameters {
    double signal_variance = 1.0;
    VectorXd length_scales;  // standardized input units
    double nugget = 1e-8;    // relative to the signal variance
};

struct GpFitOptions {
    int restarts = 8;
    int max_iterations = 200;
    std::uint64_t seed = 0;
    double min_length_scale = 1e-2;
    double max_length_scale = 1e2;
    double min_nugget = 1e-10;
    double max_nugget = 1e-2;
    bool center_outputs = true;
    // Known per-point noise variance added to the kernel diagonal (bias
    // modelling of noisy residuals). When absent the signal variance is
    // profiled out of the likelihood.
    std::optional<VectorXd> noise_variance;
};

struct GpPrediction {
    VectorXd mean;
    VectorXd variance;
};

/// Zero-mean (after centering) Gaussian process with an anisotropic
/// squared-exponential kernel:
///   k(u, v) = s2 * exp(-0.5 * sum_d ((u_d - v_d) / l_d)^2)
/// on standardized inputs, plus s2 * nugget on the diagonal.
class GpModel {
public:
    static GpModel fit(const MatrixXd& inputs, const VectorXd& outputs, const GpFitOptions& options = {});
    // Assemble from fixed hyperparameters (no optimization).
    static GpModel with_hyperparameters(const MatrixXd& inputs, const VectorXd& outputs,
                                        const GpHyperparameters& hyper, const GpFitOptions& options = {});

    std::size_t input_dim() const { return static_cast<std::size_t>(input_mean_.size()); }
    std::size_t training_size() const { return static_cast<std::size_t>(train_.rows()); }
    const GpHyperparameters& hyperparameters() const { return hyper_; }
    double log_marginal_likelihood() const { return log_marginal_; }
    int nugget_escalations() const { return nugget_escalations_; }
    double output_offset() const { return output_offset_; }
    const MatrixXd& standardized_inputs() const { return train_; }

    /// Predictive mean and latent variance (nugget and noise excluded).
    GpPrediction predict(const MatrixXd& points) const;
    GpPrediction predict(const VectorXd& point) const;

    /// Kernel correlation restricted to input columns [first, first+count):
    /// exp(-0.5 * sum over those dims). `raw` holds only those columns in
    /// original units. The full correlation is the elementwise product of
    /// the factors over a partition of the dimensions.
    MatrixXd correlation_factor(const MatrixXd& raw, Eigen::Index first) const;
    /// Prediction from a precomputed m x n correlation matrix to the
    /// training inputs.
    GpPrediction predict_from_correlation(const MatrixXd& correlation) const;

    /// Prior covariance s2 * R(points, points) (no nugget).
    MatrixXd prior_covariance(const MatrixXd& points) const;

    void save(std::ostream& out) const;
    static GpModel load(std::istream& in);

private:
    void factorize(const GpFitOptions& options, const VectorXd& centered);
    bool profiled() const { return noise_.size() == 0; }

    MatrixXd train_;          // standardized training inputs
    VectorXd input_mean_;
    VectorXd input_scale_;
    double output_offset_ = 0.0;
    GpHyperparameters hyper_;
    VectorXd noise_;          // known noise on the diagonal, may be empty
    MatrixXd chol_;           // lower factor of R + g I, or of K with known noise
    VectorXd alpha_;          // that matrix applied inversely to (y - offset)
    double log_marginal_ = 0.0;
    int nugget_escalations_ = 0;
};

struct GpQuality {
    double rmse = 0.0;
    double coverage_fraction = 0.0;
    double max_abs_error = 0.0;
    std::size_t n = 0;
};

/// Holdout check: RMSE and fraction of truths inside mean +- 1.96 sd.
GpQuality validate_gp(const GpModel& model, const MatrixXd& holdout_inputs, const VectorXd& holdout_outputs);

/// One independent GP per QoI over the joint (design, parameter) space.
/// Input columns are the design variables followed by the parameters.
class GpSurrogate final : public ResponseEvaluator {
public:
    GpSurrogate() = default;
    GpSurrogate(std::vector<std::string> design_names, std::vector<std::string> param_names,
                std::vector<std::string> qoi_names, std::vector<GpModel> models);

    static GpSurrogate fit(const TrainingDesign& design, const MatrixXd& outputs,
                           std::vector<std::string> design_names, std::vector<std::string> param_names,
                           std::vector<std::string> qoi_names, const GpFitOptions& options);

    std::size_t design_dim() const override { return design_names_.size(); }
    std::size_t param_dim() const override { return param_names_.size(); }
    std::size_t qoi_dim() const override { return qoi_names_.size(); }

    const std::vector<std::string>& design_names() const { return design_names_; }
    const std::vector<std::string>& param_names() const { return param_names_; }
    const std::vector<std::string>& qoi_names() const { return qoi_names_; }
    const std::vector<GpModel>& models() const { return models_; }

    ResponseBatch at_designs(const MatrixXd& designs, const VectorXd& theta) const override;
    ResponseBatch at_params(const VectorXd& design, const MatrixXd& thetas) const override;
    std::unique_ptr<BoundResponse> bind(const MatrixXd& designs) const override;

    // Joint-space prediction for rows of [design, theta].
    ResponseBatch predict(const MatrixXd& joint_points) const;

    void save(const std::filesystem::path& path) const;
    static GpSurrogate load(const std::filesystem::path& path);

private:
    std::vector<std::string> design_names_;
    std::vector<std::string> param_names_;
    std::vector<std::string> qoi_names_;
    std::vector<GpModel> models_;
};

} // namespace calival
