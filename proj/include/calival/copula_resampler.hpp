#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace calival {

/// Gaussian copula with empirical marginals.
struct CopulaModel {
    Eigen::MatrixXd correlation;  // normal-score space, unit diagonal
    std::vector<std::vector<double>> marginals;  // sorted ascending
    std::vector<bool> point_mass;  // constant source column
    std::size_t source_count = 0;
    double shrinkage = 0.0;  // lambda applied toward the identity, 0 if none

    std::size_t dim() const { return marginals.size(); }
};

/// Normal scores from average ranks r / (m + 1); needs m >= 50 rows.
CopulaModel fit_copula(const Eigen::MatrixXd& samples);

/// n draws; each marginal is the source inverse ECDF with linear
/// interpolation between order statistics.
Eigen::MatrixXd sample_copula(const CopulaModel& model, std::size_t n, std::uint64_t seed);

// Average ranks (1-based, ties share their mean rank).
Eigen::VectorXd average_ranks(const Eigen::VectorXd& v);
Eigen::MatrixXd spearman_matrix(const Eigen::MatrixXd& samples);
// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b);

void write_copula_samples_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                              const Eigen::MatrixXd& samples);

} // namespace calival
