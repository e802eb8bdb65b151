#include "calival/copula_resampler.hpp"

#include "calival/dataset_io.hpp"
#include "calival/errors.hpp"
#include "calival/gaussian.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace calival {

using Eigen::MatrixXd;
using Eigen::VectorXd;

VectorXd average_ranks(const VectorXd& v) {
    const auto n = static_cast<std::size_t>(v.size());
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    VectorXd r(v.size());
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

MatrixXd spearman_matrix(const MatrixXd& samples) {
    MatrixXd ranks(samples.rows(), samples.cols());
    for (Eigen::Index j = 0; j < samples.cols(); ++j) ranks.col(j) = average_ranks(samples.col(j));
    const MatrixXd c = ranks.rowwise() - ranks.colwise().mean();
    MatrixXd cov = c.transpose() * c;
    const VectorXd sd = cov.diagonal().cwiseSqrt();
    for (Eigen::Index i = 0; i < cov.rows(); ++i)
        for (Eigen::Index j = 0; j < cov.cols(); ++j)
            cov(i, j) = (sd[i] > 0 && sd[j] > 0) ? cov(i, j) / (sd[i] * sd[j]) : (i == j ? 1.0 : 0.0);
    return cov;
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw InputError("KS statistic needs two non-empty samples");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    const auto na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

CopulaModel fit_copula(const MatrixXd& samples) {
    const Eigen::Index m = samples.rows();
    const Eigen::Index d = samples.cols();
    if (d < 1) throw InputError("copula needs at least one column");
    if (m < 50) throw InputError(fmt::format("copula fit needs at least 50 samples, got {}", m));
    if (!samples.allFinite()) throw InputError("copula samples must be finite");

    CopulaModel model;
    model.source_count = static_cast<std::size_t>(m);
    model.point_mass.assign(static_cast<std::size_t>(d), false);
    MatrixXd scores = MatrixXd::Zero(m, d);
    std::size_t constant = 0;
    for (Eigen::Index j = 0; j < d; ++j) {
        std::vector<double> col(samples.col(j).data(), samples.col(j).data() + m);
        std::sort(col.begin(), col.end());
        if (col.front() == col.back()) {
            model.point_mass[j] = true;
            ++constant;
            spdlog::info("copula column {} is constant ({}); treated as a point mass", j, col.front());
        } else {
            const VectorXd r = average_ranks(samples.col(j));
            for (Eigen::Index i = 0; i < m; ++i)
                scores(i, j) = standard_normal_quantile(r[i] / static_cast<double>(m + 1));
        }
        model.marginals.push_back(std::move(col));
    }
    if (constant == static_cast<std::size_t>(d)) throw InputError("every copula column is constant");

    const MatrixXd c = scores.rowwise() - scores.colwise().mean();
    MatrixXd corr = c.transpose() * c;
    const VectorXd sd = corr.diagonal().cwiseSqrt();
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) {
            if (model.point_mass[i] || model.point_mass[j])
                corr(i, j) = i == j ? 1.0 : 0.0;
            else
                corr(i, j) = i == j ? 1.0 : corr(i, j) / (sd[i] * sd[j]);
        }

    const MatrixXd identity = MatrixXd::Identity(d, d);
    MatrixXd reg = corr;
    for (int k = 1;; ++k) {
        Eigen::LLT<MatrixXd> llt(reg);
        if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().minCoeff() > 1e-10) break;
        if (k > 100) throw NumericalError("copula correlation could not be made positive definite");
        model.shrinkage = 0.01 * k;
        reg = (1.0 - model.shrinkage) * corr + model.shrinkage * identity;
    }
    if (model.shrinkage > 0.0)
        spdlog::warn("copula correlation regularized with shrinkage {:.2f} toward the identity", model.shrinkage);
    model.correlation = reg;
    return model;
}

MatrixXd sample_copula(const CopulaModel& model, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw InputError("copula sampling needs n >= 1");
    const auto d = static_cast<Eigen::Index>(model.dim());
    const MatrixXd l = model.correlation.llt().matrixL();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    MatrixXd out(static_cast<Eigen::Index>(n), d);
    VectorXd e(d);
    for (std::size_t r = 0; r < n; ++r) {
        for (Eigen::Index j = 0; j < d; ++j) e[j] = normal(rng);
        const VectorXd z = l * e;
        for (Eigen::Index j = 0; j < d; ++j) {
            const auto& xs = model.marginals[j];
            if (model.point_mass[j]) {
                out(static_cast<Eigen::Index>(r), j) = xs.front();
                continue;
            }
            const double u = standard_normal_cdf(z[j]);
            const double m = static_cast<double>(xs.size());
            const double h = std::clamp(u * (m + 1.0) - 1.0, 0.0, m - 1.0);
            const auto lo = static_cast<std::size_t>(std::floor(h));
            const std::size_t hi = std::min(lo + 1, xs.size() - 1);
            const double frac = h - static_cast<double>(lo);
            out(static_cast<Eigen::Index>(r), j) = xs[lo] + frac * (xs[hi] - xs[lo]);
        }
    }
    return out;
}

void write_copula_samples_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                              const MatrixXd& samples) {
    std::vector<long long> steps(static_cast<std::size_t>(samples.rows()));
    std::iota(steps.begin(), steps.end(), 1LL);
    write_samples_csv(path, names, samples, steps, nullptr);
}

} // namespace calival
