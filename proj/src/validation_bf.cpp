#include "calival/validation_bf.hpp"

#include "calival/dataset_io.hpp"
#include "calival/errors.hpp"
#include "calival/gaussian.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>

namespace calival {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

struct MeanDensity {
    double log_mean = -std::numeric_limits<double>::infinity();
    double rel_se = 0.0;  // standard error of the mean relative to the mean
};

// Monte Carlo mean of exp(l_j), kept in log space.
MeanDensity log_mean_exp(const VectorXd& l) {
    MeanDensity out;
    const double mx = l.maxCoeff();
    if (mx == -std::numeric_limits<double>::infinity()) return out;
    const VectorXd w = (l.array() - mx).exp();
    const double mean = w.mean();
    out.log_mean = mx + std::log(mean);
    const auto n = static_cast<double>(l.size());
    if (l.size() > 1) {
        const double var = (w.array() - mean).square().sum() / (n - 1.0);
        out.rel_se = std::sqrt(var / n) / mean;
    }
    return out;
}

} // namespace

void HypothesisEnsemble::validate(const PriorSpec& prior) const {
    if (samples.rows() < 1) throw InputError("hypothesis ensemble is empty");
    if (static_cast<std::size_t>(samples.cols()) != prior.dim()) throw InputError("ensemble dimension does not match the prior");
    for (Eigen::Index i = 0; i < samples.rows(); ++i)
        if (!prior.contains(samples.row(i).transpose()))
            throw InputError(fmt::format("ensemble sample {} lies outside the prior box", i));
}

HypothesisEnsemble prior_ensemble(const PriorSpec& prior, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw InputError("ensemble size must be >= 1");
    std::mt19937_64 rng(seed);
    return {Hypothesis::H1Prior, prior.sample(n, rng), EnsembleSource::PriorDirect};
}

HypothesisEnsemble posterior_ensemble(const CopulaModel& copula, std::size_t n, std::uint64_t seed) {
    return {Hypothesis::H0Posterior, sample_copula(copula, n, seed), EnsembleSource::CopulaFromChain};
}

double gaussian_density(const VectorXd& residual, const MatrixXd& covariance) {
    return std::exp(log_gaussian_density(residual, covariance));
}

BayesFactorReport estimate_bayes_factor(const Dataset& val, const HypothesisEnsemble& h0,
                                        const HypothesisEnsemble& h1, const ResponseEvaluator& model,
                                        const BfPolicy& policy) {
    if (val.empty()) throw InputError("validation dataset is empty");
    if (h0.samples.rows() < 1 || h1.samples.rows() < 1) throw InputError("hypothesis ensembles must be non-empty");
    if (static_cast<std::size_t>(h0.samples.cols()) != model.param_dim() ||
        static_cast<std::size_t>(h1.samples.cols()) != model.param_dim())
        throw InputError("ensemble dimension does not match the model");
    if (val.qoi_names().size() != model.qoi_dim()) throw InputError("validation QoIs do not match the model");

    const auto nq = static_cast<Eigen::Index>(model.qoi_dim());
    BayesFactorReport report;
    report.n0 = static_cast<std::size_t>(h0.samples.rows());
    report.n1 = static_cast<std::size_t>(h1.samples.rows());
    report.joint_qoi = policy.joint_qoi;
    report.bias_variance_included = policy.bias && policy.bias->enabled();
    report.qoi_names = policy.joint_qoi ? std::vector<std::string>{"joint"} : val.qoi_names();

    const MatrixXd x = val.design_matrix();
    const MatrixXd bias_var = report.bias_variance_included ? policy.bias->at(x, model.qoi_dim()).variance
                                                            : MatrixXd::Zero(x.rows(), nq);

    // log N(y; mean_j, var_j + base) per sample; one column per QoI, or the
    // row sum in joint mode (diagonal Sigma).
    const auto log_densities = [&](const ResponseBatch& r, const VectorXd& y, const VectorXd& base,
                                   const std::string& test_id) {
        MatrixXd l(r.mean.rows(), nq);
        for (Eigen::Index k = 0; k < nq; ++k) {
            for (Eigen::Index j = 0; j < r.mean.rows(); ++j) {
                const double var = base[k] + r.variance(j, k);
                if (!(var > 0.0))
                    throw NumericalError(fmt::format("validation covariance for test {} QoI {} is singular",
                                                     test_id, val.qoi_names()[k]));
                const double e = y[k] - r.mean(j, k);
                l(j, k) = -0.5 * (kLog2Pi + std::log(var) + e * e / var);
            }
        }
        if (!l.allFinite()) throw NumericalError("non-finite model output during Bayes factor integration");
        return l;
    };

    for (std::size_t i = 0; i < val.size(); ++i) {
        const Observation& o = val[i];
        const auto ii = static_cast<Eigen::Index>(i);
        const VectorXd base = o.measurement_variance + bias_var.row(ii).transpose();
        const MatrixXd l0 = log_densities(model.at_params(o.design.values, h0.samples), o.measured.values, base, o.test_id);
        const MatrixXd l1 = log_densities(model.at_params(o.design.values, h1.samples), o.measured.values, base, o.test_id);

        const auto make_entry = [&](const VectorXd& a, const VectorXd& b, const std::string& qoi) {
            BfEntry e;
            e.test_id = o.test_id;
            e.qoi = qoi;
            const MeanDensity num = log_mean_exp(a);
            const MeanDensity den = log_mean_exp(b);
            e.log_numerator = num.log_mean;
            e.log_denominator = den.log_mean;
            if (den.log_mean == -std::numeric_limits<double>::infinity()) {
                if (num.log_mean == -std::numeric_limits<double>::infinity())
                    throw NumericalError(fmt::format("both Bayes factor integrals vanish for test {} {}", o.test_id, qoi));
                e.infinite = true;
                e.bf = std::numeric_limits<double>::infinity();
                e.mc_se = std::numeric_limits<double>::infinity();
                spdlog::warn("Bayes factor for test {} {} has a zero denominator estimate; reported as +inf",
                             o.test_id, qoi);
            } else {
                e.bf = std::exp(num.log_mean - den.log_mean);
                e.mc_se = e.bf * std::hypot(num.rel_se, den.rel_se);
                e.infinite = std::isinf(e.bf);
            }
            return e;
        };
        if (policy.joint_qoi) {
            report.entries.push_back(make_entry(l0.rowwise().sum(), l1.rowwise().sum(), "joint"));
        } else {
            for (Eigen::Index k = 0; k < nq; ++k)
                report.entries.push_back(make_entry(l0.col(k), l1.col(k), val.qoi_names()[k]));
        }
    }
    return report;
}

std::string to_string(BfAggregation a) { return a == BfAggregation::Arithmetic ? "arithmetic" : "geometric"; }

BfAggregation bf_aggregation_from_string(const std::string& s) {
    if (s == "arithmetic") return BfAggregation::Arithmetic;
    if (s == "geometric") return BfAggregation::Geometric;
    throw InputError("unknown BF aggregation '" + s + "' (arithmetic, geometric)");
}

std::vector<AggregatedBf> aggregate_bf(const BayesFactorReport& report, BfAggregation mode) {
    if (report.entries.empty()) throw InputError("Bayes factor report is empty");
    std::vector<AggregatedBf> out;
    for (const auto& q : report.qoi_names) {
        AggregatedBf a{report.dataset, report.bias_mode, q, 0.0, 0, mode};
        double acc = 0.0;
        bool inf = false;
        for (const auto& e : report.entries) {
            if (e.qoi != q) continue;
            ++a.n_tests;
            if (e.infinite) inf = true;
            acc += mode == BfAggregation::Arithmetic ? e.bf : std::log(e.bf);
        }
        if (a.n_tests == 0) throw InputError("no Bayes factor entries for QoI " + q);
        if (inf)
            a.bf = std::numeric_limits<double>::infinity();
        else
            a.bf = mode == BfAggregation::Arithmetic ? acc / static_cast<double>(a.n_tests)
                                                     : std::exp(acc / static_cast<double>(a.n_tests));
        out.push_back(a);
    }
    return out;
}

void write_bf_report_csv(const std::filesystem::path& path, const std::vector<BayesFactorReport>& reports) {
    CsvTable t;
    t.header = {"dataset", "bias_mode", "test_id", "qoi", "bf", "mc_se", "n0", "n1"};
    for (const auto& r : reports)
        for (const auto& e : r.entries)
            t.rows.push_back({r.dataset, r.bias_mode, e.test_id, e.qoi, format_double(e.bf), format_double(e.mc_se),
                              std::to_string(r.n0), std::to_string(r.n1)});
    write_csv(path, t);
}

void write_bf_aggregate_csv(const std::filesystem::path& path, const std::vector<AggregatedBf>& rows) {
    CsvTable t;
    t.header = {"dataset", "bias_mode", "qoi", "bf", "aggregation", "n_tests"};
    for (const auto& a : rows)
        t.rows.push_back({a.dataset, a.bias_mode, a.qoi, format_double(a.bf), to_string(a.aggregation),
                          std::to_string(a.n_tests)});
    write_csv(path, t);
}

std::vector<AggregatedBf> read_bf_aggregate_csv(const std::filesystem::path& path) {
    const CsvTable t = read_csv(path);
    const std::size_t cd = t.column("dataset"), cb = t.column("bias_mode"), cq = t.column("qoi"),
                      cf = t.column("bf"), ca = t.column("aggregation"), cn = t.column("n_tests");
    std::vector<AggregatedBf> out;
    for (const auto& r : t.rows)
        out.push_back({r[cd], r[cb], r[cq], parse_double(r[cf]), static_cast<std::size_t>(std::stoul(r[cn])),
                       bf_aggregation_from_string(r[ca])});
    return out;
}

} // namespace calival
