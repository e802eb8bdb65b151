#pragma once

#include <Eigen/Dense>

namespace calival {

// Log of the multivariate normal density N(residual; 0, covariance).
// Throws NumericalError when the covariance is not positive definite.
double log_gaussian_density(const Eigen::VectorXd& residual, const Eigen::MatrixXd& covariance);

// Scalar fast path: log N(r; 0, var).
double log_gaussian_density(double residual, double variance);

double standard_normal_cdf(double z);
double standard_normal_quantile(double p);

} // namespace calival
