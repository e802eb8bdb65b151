#include "calival/gaussian.hpp"

#include "calival/errors.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <numbers>

namespace calival {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2*pi)
}

double log_gaussian_density(const Eigen::VectorXd& residual, const Eigen::MatrixXd& covariance) {
    if (covariance.rows() != residual.size() || covariance.cols() != residual.size())
        throw InputError("covariance shape does not match residual");
    Eigen::LLT<Eigen::MatrixXd> llt(covariance);
    if (llt.info() != Eigen::Success) throw NumericalError("covariance is not positive definite");
    const Eigen::MatrixXd& l = llt.matrixLLT();
    if ((l.diagonal().array() <= 0.0).any()) throw NumericalError("covariance is singular");
    const Eigen::VectorXd w = llt.matrixL().solve(residual);
    const double log_det = 2.0 * l.diagonal().array().log().sum();
    return -0.5 * (static_cast<double>(residual.size()) * kLog2Pi + log_det + w.squaredNorm());
}

double log_gaussian_density(double residual, double variance) {
    if (!(variance > 0.0)) throw NumericalError("variance must be positive");
    return -0.5 * (kLog2Pi + std::log(variance) + residual * residual / variance);
}

double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double standard_normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw InputError("normal quantile needs p in (0, 1)");
    static const boost::math::normal_distribution<double> unit(0.0, 1.0);
    return boost::math::quantile(unit, p);
}

} // namespace calival
