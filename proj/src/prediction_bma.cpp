#include "calival/prediction_bma.hpp"

#include "calival/dataset_io.hpp"
#include "calival/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace calival {

BmaWeights bma_weights(double bayes_factor) {
    if (std::isnan(bayes_factor) || !(bayes_factor > 0.0))
        throw InputError(fmt::format("Bayes factor must be positive, got {}", bayes_factor));
    if (std::isinf(bayes_factor)) return {1.0, 0.0};
    const double prior = 1.0 / (bayes_factor + 1.0);
    return {1.0 - prior, prior};
}

std::string to_string(MixtureStdMode m) { return m == MixtureStdMode::Mixture ? "mixture" : "weighted_std"; }

MixtureStdMode mixture_std_mode_from_string(const std::string& s) {
    if (s == "mixture") return MixtureStdMode::Mixture;
    if (s == "weighted_std") return MixtureStdMode::WeightedStd;
    throw InputError("unknown mixture std mode '" + s + "' (mixture, weighted_std)");
}

MomentPair mix_moments(const MomentPair& posterior, const MomentPair& prior, const BmaWeights& w, MixtureStdMode mode) {
    MomentPair out;
    out.mean = w.posterior * posterior.mean + w.prior * prior.mean;
    if (mode == MixtureStdMode::WeightedStd) {
        out.std = w.posterior * posterior.std + w.prior * prior.std;
    } else {
        const double gap = posterior.mean - prior.mean;
        const double var = w.posterior * posterior.std * posterior.std + w.prior * prior.std * prior.std +
                           w.posterior * w.prior * gap * gap;
        out.std = std::sqrt(var);
    }
    return out;
}

std::vector<MomentPair> ensemble_moments(const ResponseEvaluator& model, const VectorXd& x, const MatrixXd& thetas) {
    if (thetas.rows() < 1) throw InputError("prediction ensemble is empty");
    const ResponseBatch r = model.at_params(x, thetas);
    if (!r.mean.allFinite()) throw NumericalError("non-finite model output in prediction ensemble");
    std::vector<MomentPair> out;
    const auto n = static_cast<double>(thetas.rows());
    for (Eigen::Index k = 0; k < r.mean.cols(); ++k) {
        const double mu = r.mean.col(k).mean();
        const double ss = (r.mean.col(k).array() - mu).square().sum();
        out.push_back({mu, thetas.rows() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0});
    }
    return out;
}

std::vector<MomentPair> bma_predict(const VectorXd& x, const MatrixXd& prior_samples, const MatrixXd& posterior_samples,
                                    const std::vector<BmaWeights>& weights, const ResponseEvaluator& model,
                                    MixtureStdMode mode) {
    if (weights.size() != model.qoi_dim()) throw InputError("one BMA weight pair is needed per QoI");
    const auto post = ensemble_moments(model, x, posterior_samples);
    const auto prior = ensemble_moments(model, x, prior_samples);
    std::vector<MomentPair> out;
    for (std::size_t k = 0; k < weights.size(); ++k) out.push_back(mix_moments(post[k], prior[k], weights[k], mode));
    return out;
}

const PredictionRow& PredictionSummary::find(const std::string& model, const std::string& test_id,
                                             const std::string& qoi) const {
    for (const auto& r : rows)
        if (r.model == model && r.test_id == test_id && r.qoi == qoi) return r;
    throw InputError(fmt::format("no prediction for model {} test {} {}", model, test_id, qoi));
}

PredictionSummary model_ensemble_predict(const Dataset& pred, const MatrixXd& prior_samples,
                                         const MatrixXd* posterior_with_bias, const MatrixXd* posterior_no_bias,
                                         const std::map<std::string, double>& bf_no_bias,
                                         const std::map<std::string, double>& bf_with_bias,
                                         const ResponseEvaluator& model, MixtureStdMode mode) {
    if (pred.empty()) throw InputError("prediction dataset is empty");
    PredictionSummary s;
    s.qoi_names = pred.qoi_names();
    s.mode = mode;
    for (const auto& q : s.qoi_names) {
        if (posterior_no_bias) {
            const auto d = bf_no_bias.find(q);
            if (d == bf_no_bias.end()) throw InputError("missing no-bias Bayes factor for " + q);
            s.weights_d[q] = bma_weights(d->second);
        }
        if (posterior_with_bias) {
            const auto e = bf_with_bias.find(q);
            if (e == bf_with_bias.end()) throw InputError("missing with-bias Bayes factor for " + q);
            s.weights_e[q] = bma_weights(e->second);
        }
    }
    const auto n = [](const MatrixXd& m) { return static_cast<std::size_t>(m.rows()); };
    for (const auto& o : pred.observations()) {
        const auto a = ensemble_moments(model, o.design.values, prior_samples);
        std::vector<MomentPair> b, c;
        if (posterior_no_bias) b = ensemble_moments(model, o.design.values, *posterior_no_bias);
        if (posterior_with_bias) c = ensemble_moments(model, o.design.values, *posterior_with_bias);
        for (std::size_t k = 0; k < s.qoi_names.size(); ++k) {
            const auto& q = s.qoi_names[k];
            s.rows.push_back({"A", o.test_id, q, a[k].mean, a[k].std, n(prior_samples)});
            if (posterior_no_bias)
                s.rows.push_back({"B", o.test_id, q, b[k].mean, b[k].std, n(*posterior_no_bias)});
            if (posterior_with_bias)
                s.rows.push_back({"C", o.test_id, q, c[k].mean, c[k].std, n(*posterior_with_bias)});
            if (posterior_no_bias) {
                const MomentPair d = mix_moments(b[k], a[k], s.weights_d[q], mode);
                s.rows.push_back({"D", o.test_id, q, d.mean, d.std, n(prior_samples) + n(*posterior_no_bias)});
            }
            if (posterior_with_bias) {
                const MomentPair e = mix_moments(c[k], a[k], s.weights_e[q], mode);
                s.rows.push_back({"E", o.test_id, q, e.mean, e.std, n(prior_samples) + n(*posterior_with_bias)});
            }
        }
    }
    return s;
}

std::vector<ErrorRow> error_report(const PredictionSummary& summary, const Dataset& withheld) {
    std::vector<std::string> models;
    for (const auto& r : summary.rows)
        if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    std::vector<ErrorRow> out;
    for (const auto& m : models) {
        for (std::size_t k = 0; k < summary.qoi_names.size(); ++k) {
            const auto& q = summary.qoi_names[k];
            ErrorRow e{m, q, 0.0, 0};
            for (const auto& r : summary.rows) {
                if (r.model != m || r.qoi != q) continue;
                const Observation* o = withheld.find(r.test_id);
                if (!o) throw InputError("no withheld truth for test " + r.test_id);
                const auto& names = withheld.qoi_names();
                const auto it = std::find(names.begin(), names.end(), q);
                if (it == names.end()) throw InputError("withheld data has no QoI " + q);
                e.mean_abs_error += std::abs(r.mean - o->measured.values[it - names.begin()]);
                ++e.n_tests;
            }
            if (e.n_tests == 0) continue;
            e.mean_abs_error /= static_cast<double>(e.n_tests);
            out.push_back(e);
        }
    }
    return out;
}

void write_prediction_csv(const std::filesystem::path& path, const PredictionSummary& summary) {
    CsvTable t;
    t.header = {"dataset", "model", "test_id", "qoi", "mean", "std"};
    for (const auto& r : summary.rows)
        t.rows.push_back({summary.dataset, r.model, r.test_id, r.qoi, format_double(r.mean), format_double(r.std)});
    write_csv(path, t);
}

PredictionSummary read_prediction_csv(const std::filesystem::path& path) {
    const CsvTable t = read_csv(path);
    const std::size_t cd = t.column("dataset"), cm = t.column("model"), ct = t.column("test_id"), cq = t.column("qoi"),
                      cmu = t.column("mean"), cs = t.column("std");
    PredictionSummary s;
    for (const auto& r : t.rows) {
        s.dataset = r[cd];
        if (std::find(s.qoi_names.begin(), s.qoi_names.end(), r[cq]) == s.qoi_names.end()) s.qoi_names.push_back(r[cq]);
        s.rows.push_back({r[cm], r[ct], r[cq], parse_double(r[cmu]), parse_double(r[cs]), 0});
    }
    return s;
}

void write_error_csv(const std::filesystem::path& path, const std::string& dataset, const std::vector<ErrorRow>& rows) {
    CsvTable t;
    t.header = {"dataset", "model", "qoi", "mean_abs_error"};
    for (const auto& e : rows) t.rows.push_back({dataset, e.model, e.qoi, format_double(e.mean_abs_error)});
    write_csv(path, t);
}

void write_plot_data_csv(const std::filesystem::path& path, const PredictionSummary& summary, const Dataset& withheld) {
    CsvTable t;
    t.header = {"dataset", "qoi", "test_id", "model", "abs_error", "std"};
    const auto& names = withheld.qoi_names();
    for (const auto& q : summary.qoi_names) {
        const auto it = std::find(names.begin(), names.end(), q);
        if (it == names.end()) throw InputError("withheld data has no QoI " + q);
        for (const auto& r : summary.rows) {
            if (r.qoi != q) continue;
            const Observation* o = withheld.find(r.test_id);
            if (!o) throw InputError("no withheld truth for test " + r.test_id);
            const double err = std::abs(r.mean - o->measured.values[it - names.begin()]);
            t.rows.push_back({summary.dataset, q, r.test_id, r.model, format_double(err), format_double(r.std)});
        }
    }
    write_csv(path, t);
}

} // namespace calival
