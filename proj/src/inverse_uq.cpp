#include "calival/inverse_uq.hpp"

#include "calival/dataset_io.hpp"
#include "calival/errors.hpp"
#include "calival/gaussian.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

namespace calival {

std::string to_string(BiasTreatment t) {
    switch (t) {
    case BiasTreatment::Disabled: return "disabled";
    case BiasTreatment::Conditional: return "conditional";
    case BiasTreatment::Marginal: return "marginal";
    }
    return "disabled";
}

BiasTreatment bias_treatment_from_string(const std::string& s) {
    if (s == "disabled") return BiasTreatment::Disabled;
    if (s == "conditional") return BiasTreatment::Conditional;
    if (s == "marginal") return BiasTreatment::Marginal;
    throw InputError("unknown bias treatment '" + s + "' (disabled, conditional, marginal)");
}

BiasModel BiasModel::disabled() { return {}; }

BiasModel::BiasModel(BiasTreatment treatment, VectorXd theta_ref, std::vector<std::string> qoi_names,
                     std::vector<GpModel> models)
    : treatment_(treatment),
      theta_ref_(std::move(theta_ref)),
      qoi_names_(std::move(qoi_names)),
      models_(std::move(models)) {
    if (treatment_ != BiasTreatment::Disabled && models_.size() != qoi_names_.size())
        throw InputError("bias model needs one GP per QoI");
}

ResponseBatch BiasModel::at(const MatrixXd& designs, std::size_t qoi_dim) const {
    const auto nq = static_cast<Eigen::Index>(qoi_dim);
    ResponseBatch out{MatrixXd::Zero(designs.rows(), nq), MatrixXd::Zero(designs.rows(), nq)};
    if (!enabled()) return out;
    if (models_.size() != qoi_dim) throw InputError("bias model QoI count does not match the data");
    for (Eigen::Index k = 0; k < nq; ++k) {
        const GpPrediction p = models_[k].predict(designs);
        out.mean.col(k) = p.mean;
        out.variance.col(k) = p.variance;
    }
    return out;
}

MatrixXd BiasModel::covariance(const MatrixXd& designs, std::size_t qoi) const {
    if (!enabled()) return MatrixXd::Zero(designs.rows(), designs.rows());
    return models_.at(qoi).prior_covariance(designs);
}

void BiasModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    out << "calival-bias\nformat_version 1\ntreatment " << to_string(treatment_) << '\n';
    out << "theta_ref " << theta_ref_.size();
    for (Eigen::Index i = 0; i < theta_ref_.size(); ++i) out << ' ' << fmt::format("{:a}", theta_ref_[i]);
    out << "\nqoi_names " << qoi_names_.size();
    for (const auto& q : qoi_names_) out << ' ' << q;
    out << '\n';
    for (const auto& m : models_) m.save(out);
    if (!out) throw InputError("failed writing '" + path.string() + "'");
}

BiasModel BiasModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    std::string tok, treatment;
    long long version = 0, n = 0;
    in >> tok >> tok >> version;
    if (tok != "format_version" || version != 1) throw InputError("'" + path.string() + "' is not a bias model file");
    in >> tok >> treatment >> tok >> n;
    VectorXd ref(n);
    for (long long i = 0; i < n; ++i) {
        in >> tok;
        ref[i] = std::strtod(tok.c_str(), nullptr);
    }
    in >> tok >> n;
    std::vector<std::string> names(static_cast<std::size_t>(n));
    for (auto& s : names) in >> s;
    if (!in) throw InputError("'" + path.string() + "' is truncated");
    const BiasTreatment t = bias_treatment_from_string(treatment);
    std::vector<GpModel> models;
    if (t != BiasTreatment::Disabled)
        for (std::size_t k = 0; k < names.size(); ++k) models.push_back(GpModel::load(in));
    return BiasModel(t, std::move(ref), std::move(names), std::move(models));
}

BiasModel estimate_bias(const Dataset& iuq, const ResponseEvaluator& model, const VectorXd& theta_ref,
                        const BiasFitOptions& options) {
    if (options.treatment == BiasTreatment::Disabled) return BiasModel::disabled();
    if (iuq.size() < 5) throw InputError(fmt::format("bias estimation needs at least 5 observations, got {}", iuq.size()));
    if (static_cast<std::size_t>(theta_ref.size()) != model.param_dim())
        throw InputError("bias reference point has the wrong dimension");
    const MatrixXd x = iuq.design_matrix();
    const ResponseBatch ym = model.at_designs(x, theta_ref);
    const MatrixXd resid = iuq.measured_matrix() - ym.mean;
    const MatrixXd noise = iuq.variance_matrix() + ym.variance;

    std::vector<GpModel> models;
    for (Eigen::Index k = 0; k < resid.cols(); ++k) {
        GpFitOptions o = options.gp;
        o.seed = options.gp.seed + static_cast<std::uint64_t>(k);
        o.center_outputs = false;
        o.noise_variance = noise.col(k);
        try {
            models.push_back(GpModel::fit(x, resid.col(k), o));
        } catch (const std::exception& e) {
            throw NumericalError(fmt::format("bias GP for {} failed: {}", iuq.qoi_names()[k], e.what()));
        }
        spdlog::info("bias GP {}: s2={:.4g} mean residual {:.4g}", iuq.qoi_names()[k],
                     models.back().hyperparameters().signal_variance, resid.col(k).mean());
    }
    return BiasModel(options.treatment, theta_ref, iuq.qoi_names(), std::move(models));
}

double log_likelihood_term(const VectorXd& residual, const UncertaintyBudget& budget) {
    budget.validate();
    if (budget.exp.rows() != residual.size()) throw InputError("budget dimension does not match residual");
    const MatrixXd total = budget.total();
    Eigen::LLT<MatrixXd> llt(total);
    if (llt.info() != Eigen::Success || (llt.matrixLLT().diagonal().array() <= 0.0).any()) {
        std::string parts;
        for (const auto& [name, m] : {std::pair{"exp", &budget.exp}, {"bias", &budget.bias}, {"code", &budget.code}})
            if (m->diagonal().maxCoeff() <= 0.0) parts += std::string(parts.empty() ? "" : ", ") + name;
        throw NumericalError("total covariance is singular" +
                             (parts.empty() ? std::string() : " (zero components: " + parts + ")"));
    }
    return log_gaussian_density(residual, total);
}

// ---------------------------------------------------------------------------

IuqLikelihood::IuqLikelihood(const Dataset& iuq, const ResponseEvaluator& model, const BiasModel& bias)
    : data_(&iuq), treatment_(bias.treatment()) {
    if (iuq.empty()) throw InputError("IUQ dataset is empty");
    if (iuq.qoi_names().size() != model.qoi_dim() || iuq.design_names().size() != model.design_dim())
        throw InputError("IUQ dataset does not match the model dimensions");
    const MatrixXd x = iuq.design_matrix();
    bound_ = model.bind(x);
    measured_ = iuq.measured_matrix();
    exp_var_ = iuq.variance_matrix();
    if (treatment_ == BiasTreatment::Marginal) {
        delta_ = MatrixXd::Zero(measured_.rows(), measured_.cols());
        bias_var_ = delta_;
        for (std::size_t k = 0; k < model.qoi_dim(); ++k) bias_cov_.push_back(bias.covariance(x, k));
    } else {
        const ResponseBatch b = bias.at(x, model.qoi_dim());
        delta_ = b.mean;
        bias_var_ = b.variance;
    }
}

double IuqLikelihood::operator()(const VectorXd& theta) const {
    const ResponseBatch r = bound_->evaluate(theta);
    if (!r.mean.allFinite() || !r.variance.allFinite())
        throw NumericalError("model output is not finite at the proposed parameters");
    return treatment_ == BiasTreatment::Marginal ? marginal(r) : diagonal(r);
}

double IuqLikelihood::diagonal(const ResponseBatch& r) const {
    constexpr double kLog2Pi = 1.8378770664093454836;
    double sum = 0.0;
    for (Eigen::Index k = 0; k < measured_.cols(); ++k) {
        for (Eigen::Index i = 0; i < measured_.rows(); ++i) {
            const double var = exp_var_(i, k) + bias_var_(i, k) + r.variance(i, k);
            if (!(var > 0.0)) {
                throw NumericalError(fmt::format(
                    "covariance for test {} QoI {} is singular (exp={:.3g}, bias={:.3g}, code={:.3g})",
                    (*data_)[static_cast<std::size_t>(i)].test_id, data_->qoi_names()[k], exp_var_(i, k),
                    bias_var_(i, k), r.variance(i, k)));
            }
            const double e = measured_(i, k) - r.mean(i, k) - delta_(i, k);
            sum += -0.5 * (kLog2Pi + std::log(var) + e * e / var);
        }
    }
    return sum;
}

double IuqLikelihood::marginal(const ResponseBatch& r) const {
    double sum = 0.0;
    for (Eigen::Index k = 0; k < measured_.cols(); ++k) {
        MatrixXd cov = bias_cov_[k];
        cov.diagonal() += exp_var_.col(k) + r.variance.col(k);
        const VectorXd e = measured_.col(k) - r.mean.col(k);
        try {
            sum += log_gaussian_density(e, cov);
        } catch (const NumericalError&) {
            throw NumericalError(fmt::format("covariance across tests for QoI {} is singular (bias + exp + code)",
                                             data_->qoi_names()[k]));
        }
    }
    return sum;
}

double log_likelihood(const VectorXd& theta, const Dataset& iuq, const ResponseEvaluator& model,
                      const BiasModel& bias) {
    return IuqLikelihood(iuq, model, bias)(theta);
}

// ---------------------------------------------------------------------------

McmcChain run_mcmc(const PriorSpec& prior, const LogDensity& log_post, const McmcConfig& config) {
    const auto d = static_cast<Eigen::Index>(prior.dim());
    if (d == 0) throw InputError("prior has no parameters");
    if (config.n_samples == 0) throw InputError("MCMC needs n_samples >= 1");
    if (config.thinning == 0) throw InputError("MCMC thinning must be >= 1");
    if (config.n_samples < config.thinning) throw InputError("MCMC thinning exceeds n_samples; no draws would be kept");
    if (config.adapt_window == 0) throw InputError("MCMC adaptation window must be >= 1");
    if (!(config.target_acceptance > 0.0 && config.target_acceptance < 1.0))
        throw InputError("MCMC target acceptance must be in (0, 1)");

    VectorXd x = config.initial ? *config.initial : prior.nominal();
    if (x.size() != d) throw InputError("MCMC initial point has the wrong dimension");
    if (!prior.contains(x)) throw InputError("MCMC initial point lies outside the prior box");
    double lp = log_post(x);
    if (!std::isfinite(lp)) throw NumericalError("log posterior is not finite at the initial point");

    const VectorXd width = prior.width();
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // step = exp(log_scale) * shape; shape follows the burn-in spread.
    double log_scale = std::log(2.38 / std::sqrt(static_cast<double>(d)));
    VectorXd shape = 0.1 * width / std::exp(log_scale);
    VectorXd step = std::exp(log_scale) * shape;
    VectorXd run_mean = VectorXd::Zero(d), run_m2 = VectorXd::Zero(d);
    std::size_t run_n = 0;

    const std::size_t total = config.burn_in + config.n_samples;
    const std::size_t kept = config.n_samples / config.thinning;
    McmcChain chain;
    chain.samples.resize(static_cast<Eigen::Index>(kept), d);
    chain.log_posterior.resize(static_cast<Eigen::Index>(kept));
    chain.steps.reserve(kept);
    chain.burn_in = config.burn_in;
    chain.thinning = config.thinning;
    chain.seed = config.seed;

    std::size_t window_accepts = 0, post_accepts = 0, kept_i = 0;
    VectorXd y(d);
    for (std::size_t it = 0; it < total; ++it) {
        for (Eigen::Index j = 0; j < d; ++j) y[j] = x[j] + step[j] * normal(rng);
        const double log_u = std::log(unit(rng));
        bool accepted = false;
        if (prior.contains(y)) {
            const double lp_y = log_post(y);
            if (std::isnan(lp_y) || lp_y == std::numeric_limits<double>::infinity())
                throw NumericalError(fmt::format("log posterior is not finite during sampling (iteration {})", it + 1));
            if (log_u < lp_y - lp) {
                x = y;
                lp = lp_y;
                accepted = true;
            }
        }
        if (accepted) ++window_accepts;
        const bool burning = it < config.burn_in;
        if (burning) {
            ++run_n;
            const VectorXd delta = x - run_mean;
            run_mean += delta / static_cast<double>(run_n);
            run_m2 += delta.cwiseProduct(x - run_mean);
        } else {
            if (accepted) ++post_accepts;
            const std::size_t post = it - config.burn_in + 1;
            if (post % config.thinning == 0 && kept_i < kept) {
                chain.samples.row(static_cast<Eigen::Index>(kept_i)) = x.transpose();
                chain.log_posterior[static_cast<Eigen::Index>(kept_i)] = lp;
                chain.steps.push_back(static_cast<long long>(it + 1));
                ++kept_i;
            }
        }

        if ((it + 1) % config.adapt_window == 0) {
            const double rate = static_cast<double>(window_accepts) / static_cast<double>(config.adapt_window);
            if (burning) {
                log_scale += window_accepts == 0 ? -1.0 : rate - config.target_acceptance;
                if (run_n >= 5 * config.adapt_window) {
                    for (Eigen::Index j = 0; j < d; ++j) {
                        const double sd = std::sqrt(run_m2[j] / static_cast<double>(run_n - 1));
                        if (sd > 1e-12 * width[j]) shape[j] = sd;
                    }
                }
                step = std::exp(log_scale) * shape;
                if ((step.array() < 1e-12 * width.array()).any())
                    throw NumericalError(fmt::format("MCMC proposal scale collapsed during burn-in (iteration {})", it + 1));
            } else if (window_accepts == 0) {
                throw NumericalError(fmt::format(
                    "MCMC accepted nothing in the {} iterations before iteration {}; the frozen proposal scale is unusable",
                    config.adapt_window, it + 1));
            }
            window_accepts = 0;
        }
    }
    chain.acceptance_rate = static_cast<double>(post_accepts) / static_cast<double>(config.n_samples);
    chain.proposal_scale = step;
    return chain;
}

PosteriorMoments posterior_moments(const McmcChain& chain) {
    const Eigen::Index m = chain.samples.rows();
    if (m < 100) throw InputError(fmt::format("posterior moments need at least 100 kept samples, got {}", m));
    PosteriorMoments out;
    out.mean = chain.samples.colwise().mean().transpose();
    const MatrixXd c = chain.samples.rowwise() - out.mean.transpose();
    out.std = (c.array().square().colwise().sum() / static_cast<double>(m - 1)).sqrt().transpose();
    return out;
}

double effective_sample_size(const VectorXd& series) {
    const Eigen::Index n = series.size();
    if (n < 4) throw InputError("ESS needs at least 4 samples");
    const VectorXd c = series.array() - series.mean();
    const double var0 = c.squaredNorm() / static_cast<double>(n);
    if (!(var0 > 0.0)) return 1.0;
    const auto rho = [&](Eigen::Index lag) {
        return c.head(n - lag).dot(c.tail(n - lag)) / static_cast<double>(n) / var0;
    };
    // Initial positive sequence: sum pairs Gamma_k = rho_2k + rho_2k+1 while positive.
    double tau = -1.0;
    for (Eigen::Index k = 0; 2 * k + 1 < n; ++k) {
        const double gamma = rho(2 * k) + rho(2 * k + 1);
        if (gamma <= 0.0) break;
        tau += 2.0 * gamma;
    }
    tau = std::max(tau, 1.0 / std::log10(static_cast<double>(n)));
    return static_cast<double>(n) / tau;
}

ChainDiagnostics chain_diagnostics(const std::vector<McmcChain>& chains) {
    if (chains.empty()) throw InputError("diagnostics need at least one chain");
    const Eigen::Index d = chains.front().samples.cols();
    Eigen::Index half = std::numeric_limits<Eigen::Index>::max();
    for (const auto& c : chains) {
        if (c.samples.cols() != d) throw InputError("chains have different dimensions");
        half = std::min(half, c.samples.rows() / 2);
    }
    if (half < 4) throw InputError("chains are too short for diagnostics (need >= 8 kept samples)");

    ChainDiagnostics out;
    out.segments = 2 * chains.size();
    out.ess.resize(d);
    out.rhat.resize(d);
    double acc = 0.0;
    for (const auto& c : chains) acc += c.acceptance_rate;
    out.acceptance_rate = acc / static_cast<double>(chains.size());

    for (Eigen::Index j = 0; j < d; ++j) {
        std::vector<VectorXd> segs;
        for (const auto& c : chains) {
            const Eigen::Index start = c.samples.rows() - 2 * half;
            segs.push_back(c.samples.col(j).segment(start, half));
            segs.push_back(c.samples.col(j).segment(start + half, half));
        }
        const auto m = static_cast<double>(segs.size());
        const auto nh = static_cast<double>(half);
        double grand = 0.0, w = 0.0;
        std::vector<double> means;
        for (const auto& s : segs) {
            const double mu = s.mean();
            means.push_back(mu);
            grand += mu / m;
            w += (s.array() - mu).square().sum() / (nh - 1.0) / m;
        }
        double b = 0.0;
        for (double mu : means) b += (mu - grand) * (mu - grand);
        b *= nh / (m - 1.0);
        if (!(w > 0.0)) {
            out.degenerate = true;
            out.rhat[j] = std::numeric_limits<double>::quiet_NaN();
            out.ess[j] = 1.0;
            continue;
        }
        const double var_plus = (nh - 1.0) / nh * w + b / nh;
        out.rhat[j] = std::max(1.0, std::sqrt(var_plus / w));
        double ess = 0.0;
        for (const auto& c : chains) ess += effective_sample_size(c.samples.col(j).tail(2 * half));
        out.ess[j] = ess;
    }
    out.effective_sample_size = out.ess.minCoeff();
    out.split_rhat = out.degenerate ? std::numeric_limits<double>::quiet_NaN() : out.rhat.maxCoeff();
    return out;
}

ChainDiagnostics chain_diagnostics(const McmcChain& chain) { return chain_diagnostics(std::vector<McmcChain>{chain}); }

void write_chain_csv(const std::filesystem::path& path, const std::vector<std::string>& names, const McmcChain& chain) {
    write_samples_csv(path, names, chain.samples, chain.steps, &chain.log_posterior);
}

void write_diagnostics_report(const std::filesystem::path& path, const std::vector<std::string>& names,
                              const ChainDiagnostics& diag, const PosteriorMoments& moments) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    out << "acceptance_rate = " << format_fixed(diag.acceptance_rate, 4) << '\n';
    out << "segments = " << diag.segments << '\n';
    out << "degenerate = " << (diag.degenerate ? "true" : "false") << '\n';
    out << "min_ess = " << format_fixed(diag.effective_sample_size, 1) << '\n';
    out << "max_split_rhat = " << (diag.degenerate ? "undefined" : format_fixed(diag.split_rhat, 4)) << '\n';
    for (std::size_t j = 0; j < names.size(); ++j) {
        const auto i = static_cast<Eigen::Index>(j);
        out << names[j] << ".mean = " << format_fixed(moments.mean[i], 4) << '\n';
        out << names[j] << ".std = " << format_fixed(moments.std[i], 4) << '\n';
        out << names[j] << ".ess = " << format_fixed(diag.ess[i], 1) << '\n';
        out << names[j] << ".split_rhat = "
            << (std::isnan(diag.rhat[i]) ? std::string("undefined") : format_fixed(diag.rhat[i], 4)) << '\n';
    }
    if (!out) throw InputError("failed writing '" + path.string() + "'");
}

} // namespace calival
