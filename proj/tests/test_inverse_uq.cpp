#include "calival/dataset_io.hpp"
#include "calival/errors.hpp"
#include "calival/gaussian.hpp"
#include "calival/inverse_uq.hpp"

#include "doctest.h"
#include "support.hpp"

#include <cmath>
#include <limits>
#include <numbers>

using namespace calival;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

UncertaintyBudget diag_budget(double e, double b, double c, int d = 1) {
    return UncertaintyBudget::diagonal(VectorXd::Constant(d, e), VectorXd::Constant(d, b), VectorXd::Constant(d, c));
}

// y = t1 + t2 * x observed at evenly spaced x with known noise.
struct LineProblem {
    Dataset data;
    MatrixXd design;  // rows [1, x]
    VectorXd y;
    double noise_var;
};

LineProblem line_problem(std::size_t n, double noise_var, std::uint64_t seed) {
    LineProblem p;
    p.noise_var = noise_var;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, std::sqrt(noise_var));
    std::vector<Observation> obs;
    p.design.resize(static_cast<Eigen::Index>(n), 2);
    p.y.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const double x = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
        const double y = 1.5 - 0.7 * x + nd(rng);
        p.design.row(static_cast<Eigen::Index>(i)) << 1.0, x;
        p.y[static_cast<Eigen::Index>(i)] = y;
        obs.push_back(testing::observation("L" + std::to_string(i), VectorXd::Constant(1, x), {"x"},
                                           VectorXd::Constant(1, y), {"y"}, VectorXd::Constant(1, noise_var)));
    }
    p.data = Dataset({"x"}, {"y"}, obs);
    return p;
}

std::shared_ptr<ExactEvaluator> line_evaluator() {
    struct Line final : ComputerModel {
        std::vector<std::string> design_names() const override { return {"x"}; }
        std::vector<std::string> qoi_names() const override { return {"y"}; }
        std::size_t param_dim() const override { return 2; }
        VectorXd evaluate_raw(const VectorXd& x, const VectorXd& t) const override {
            return VectorXd::Constant(1, t[0] + t[1] * x[0]);
        }
    };
    return testing::exact(std::make_shared<Line>());
}

} // namespace

TEST_CASE("likelihood term closed forms") {
    CHECK(log_likelihood_term(VectorXd::Zero(1), diag_budget(1, 0, 0)) == doctest::Approx(-0.5 * kLog2Pi).epsilon(1e-14));
    CHECK(log_likelihood_term(VectorXd::Zero(1), diag_budget(1, 0, 0)) == doctest::Approx(-0.918939).epsilon(1e-6));
    CHECK(log_likelihood_term(VectorXd::Ones(1), diag_budget(1, 0, 0)) == doctest::Approx(-0.5 * kLog2Pi - 0.5).epsilon(1e-14));
    CHECK(log_likelihood_term(VectorXd::Ones(1), diag_budget(1, 0, 0)) == doctest::Approx(-1.418939).epsilon(1e-6));
    for (int d = 1; d <= 4; ++d) {
        const double a = log_likelihood_term(VectorXd::Zero(d), diag_budget(0.7, 0.1, 0.2, d));
        const double b = log_likelihood_term(VectorXd::Zero(d), diag_budget(1.4, 0.1, 0.2, d));
        const double ab = log_likelihood_term(VectorXd::Zero(d), diag_budget(1.4, 0.0, 0.0, d));
        const double aa = log_likelihood_term(VectorXd::Zero(d), diag_budget(0.7, 0.0, 0.0, d));
        CHECK(aa - ab == doctest::Approx(0.5 * std::log(2.0) * d).epsilon(1e-12));
        CHECK(b < a);
    }
    CHECK_THROWS_AS(log_likelihood_term(VectorXd::Zero(2), diag_budget(0, 0, 0, 2)), NumericalError);
}

TEST_CASE("property: growing any budget component never raises the zero-residual likelihood") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.01, 3.0);
    for (int trial = 0; trial < 300; ++trial) {
        const int d = 1 + static_cast<int>(rng() % 4);
        VectorXd e(d), b(d), c(d);
        for (int i = 0; i < d; ++i) e[i] = u(rng), b[i] = u(rng) - 0.01, c[i] = u(rng) - 0.01;
        const double base = log_likelihood_term(VectorXd::Zero(d), UncertaintyBudget::diagonal(e, b, c));
        const int which = static_cast<int>(rng() % 3);
        const int i = static_cast<int>(rng() % static_cast<unsigned>(d));
        VectorXd e2 = e, b2 = b, c2 = c;
        (which == 0 ? e2 : which == 1 ? b2 : c2)[i] += u(rng);
        CHECK(log_likelihood_term(VectorXd::Zero(d), UncertaintyBudget::diagonal(e2, b2, c2)) <= base);
    }
}

TEST_CASE("scalar and matrix Gaussian densities agree") {
    CHECK(log_gaussian_density(0.3, 2.0) ==
          doctest::Approx(log_gaussian_density(VectorXd::Constant(1, 0.3), MatrixXd::Constant(1, 1, 2.0))));
    CHECK_THROWS_AS(log_gaussian_density(VectorXd::Zero(2), MatrixXd::Zero(2, 2)), NumericalError);
    CHECK(standard_normal_quantile(standard_normal_cdf(0.7)) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("disabled-bias likelihood is the plain Gaussian sum") {
    const auto eval = line_evaluator();
    const LineProblem p = line_problem(12, 0.25, 3);
    const VectorXd t = (VectorXd(2) << 1.2, -0.4).finished();
    double want = 0.0;
    for (Eigen::Index i = 0; i < p.y.size(); ++i) {
        const double r = p.y[i] - p.design.row(i).dot(t);
        want += -0.5 * (kLog2Pi + std::log(0.25) + r * r / 0.25);
    }
    CHECK(log_likelihood(t, p.data, *eval, BiasModel::disabled()) == doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("bias estimation: zero residuals give no bias") {
    const auto eval = line_evaluator();
    std::vector<Observation> obs;
    for (int i = 0; i < 10; ++i) {
        const double x = i / 9.0;
        obs.push_back(testing::observation("Z" + std::to_string(i), VectorXd::Constant(1, x), {"x"},
                                           VectorXd::Constant(1, 1.0 + 2.0 * x), {"y"}, VectorXd::Constant(1, 0.04)));
    }
    const Dataset d({"x"}, {"y"}, obs);
    BiasFitOptions o;
    o.treatment = BiasTreatment::Conditional;
    o.gp.restarts = 3;
    const BiasModel b = estimate_bias(d, *eval, (VectorXd(2) << 1.0, 2.0).finished(), o);
    const ResponseBatch r = b.at(d.design_matrix(), 1);
    CHECK(r.mean.cwiseAbs().maxCoeff() < 1e-3);
    CHECK(r.variance.maxCoeff() < 1e-3);
    CHECK_THROWS_AS(estimate_bias(Dataset({"x"}, {"y"}, {obs[0], obs[1], obs[2], obs[3]}), *eval,
                                  (VectorXd(2) << 1.0, 2.0).finished(), o),
                    InputError);
}

TEST_CASE("bias estimation recovers the injected discrepancy") {
    GeneratorSettings g;
    g.theta_true = BenchmarkModel::ground_truth_theta();
    g.ranges = testing::benchmark_ranges();
    g.n_tests = 40;
    const Dataset d = generate_benchmark_data(g, 8);
    const auto eval = testing::exact(std::make_shared<BenchmarkModel>());
    BiasFitOptions o;
    o.treatment = BiasTreatment::Conditional;
    o.gp.restarts = 3;
    const BiasModel b = estimate_bias(d, *eval, g.theta_true, o);
    const ResponseBatch r = b.at(d.design_matrix(), 4);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const VectorXd truth = BenchmarkModel::injected_bias(d[i].design.values);
        for (int k = 0; k < 4; ++k) CHECK(std::abs(r.mean(static_cast<Eigen::Index>(i), k) - truth[k]) < 3.0 * 1.5);
    }

    const auto dir = testing::scratch_dir("bias_io");
    b.save(dir / "b.gp");
    const BiasModel back = BiasModel::load(dir / "b.gp");
    CHECK(back.treatment() == BiasTreatment::Conditional);
    CHECK(back.at(d.design_matrix(), 4).mean == r.mean);
}

TEST_CASE("marginal likelihood equals the stacked Gaussian over tests") {
    GeneratorSettings g;
    g.theta_true = BenchmarkModel::ground_truth_theta();
    g.ranges = testing::benchmark_ranges();
    g.n_tests = 15;
    const Dataset d = generate_benchmark_data(g, 2);
    const auto eval = testing::exact(std::make_shared<BenchmarkModel>());
    BiasFitOptions o;
    o.gp.restarts = 2;
    const BiasModel b = estimate_bias(d, *eval, VectorXd::Ones(5), o);
    CHECK(b.treatment() == BiasTreatment::Marginal);
    const VectorXd t = (VectorXd(5) << 1.1, 0.95, 1.0, 0.9, 1.0).finished();
    const MatrixXd x = d.design_matrix();
    const MatrixXd resid = d.measured_matrix() - eval->at_designs(x, t).mean;
    double want = 0.0;
    for (int k = 0; k < 4; ++k) {
        MatrixXd cov = b.covariance(x, static_cast<std::size_t>(k));
        cov.diagonal() += d.variance_matrix().col(k);
        const Eigen::LLT<MatrixXd> llt(cov);
        const VectorXd z = llt.matrixL().solve(resid.col(k));
        want += -0.5 * (static_cast<double>(x.rows()) * kLog2Pi + z.squaredNorm()) -
                llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    }
    CHECK(log_likelihood(t, d, *eval, b) == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("MCMC on a flat prior recovers the uniform moments") {
    const PriorSpec p = testing::box_prior(5, 0.0, 5.0, 1.0);
    McmcConfig c;
    c.n_samples = 60000;
    c.burn_in = 5000;
    c.thinning = 5;
    c.seed = 4;
    const McmcChain ch = run_mcmc(p, [](const VectorXd&) { return 0.0; }, c);
    const PosteriorMoments m = posterior_moments(ch);
    const ChainDiagnostics diag = chain_diagnostics(ch);
    for (int j = 0; j < 5; ++j) {
        const double se = m.std[j] / std::sqrt(diag.ess[j]);
        CHECK(std::abs(m.mean[j] - 2.5) < 3.0 * se);
        CHECK(m.std[j] == doctest::Approx(5.0 / std::sqrt(12.0)).epsilon(0.05));
    }
    for (Eigen::Index i = 0; i < ch.samples.rows(); ++i) CHECK(p.contains(ch.samples.row(i).transpose()));
    CHECK(ch.acceptance_rate > 0.0);
    CHECK(ch.acceptance_rate < 1.0);
    CHECK(ch.samples.rows() == 12000);
    CHECK(ch.steps.front() == 5005);
    CHECK(ch.steps[1] - ch.steps[0] == 5);
}

TEST_CASE("MCMC on a truncated normal target") {
    const PriorSpec p = testing::box_prior(1, 0.0, 5.0, 1.0);
    McmcConfig c;
    c.n_samples = 50000;
    c.burn_in = 5000;
    c.thinning = 1;
    c.seed = 9;
    const auto lp = [](const VectorXd& t) { return -0.5 * std::pow((t[0] - 2.0) / 0.5, 2); };
    const McmcChain ch = run_mcmc(p, lp, c);
    const PosteriorMoments m = posterior_moments(ch);
    CHECK(m.mean[0] == doctest::Approx(2.0).epsilon(0.02));
    CHECK(m.std[0] == doctest::Approx(0.5).epsilon(0.05));
    CHECK(ch.acceptance_rate == doctest::Approx(0.30).epsilon(0.35));

    c.seed = 10;
    const McmcChain ch2 = run_mcmc(p, lp, c);
    const ChainDiagnostics d = chain_diagnostics(std::vector<McmcChain>{ch, ch2});
    CHECK(d.split_rhat < 1.05);
    CHECK(d.segments == 4);
    CHECK_FALSE(d.degenerate);

    c.seed = 9;
    const McmcChain again = run_mcmc(p, lp, c);
    CHECK(again.samples == ch.samples);
    CHECK(again.log_posterior == ch.log_posterior);
}

TEST_CASE("MCMC on a conjugate line model") {
    const auto eval = line_evaluator();
    const LineProblem lp = line_problem(30, 0.09, 5);
    const PriorSpec prior = testing::box_prior(2, -10.0, 10.0, 0.0);
    const IuqLikelihood like(lp.data, *eval, BiasModel::disabled());
    McmcConfig c;
    c.n_samples = 50000;
    c.burn_in = 5000;
    c.thinning = 1;
    c.seed = 12;
    const McmcChain ch = run_mcmc(prior, [&](const VectorXd& t) { return like(t); }, c);
    const MatrixXd prec = lp.design.transpose() * lp.design / lp.noise_var;
    const MatrixXd cov = prec.inverse();
    const VectorXd mean = cov * lp.design.transpose() * lp.y / lp.noise_var;
    const VectorXd m = ch.samples.colwise().mean();
    const MatrixXd centered = ch.samples.rowwise() - m.transpose();
    const MatrixXd s = centered.transpose() * centered / static_cast<double>(ch.samples.rows() - 1);
    for (int j = 0; j < 2; ++j) CHECK(std::abs(m[j] - mean[j]) <= 0.02 * std::abs(mean[j]));
    CHECK((s - cov).norm() / cov.norm() < 0.05);
}

TEST_CASE("MCMC error handling") {
    const PriorSpec p = testing::box_prior(2, 0.0, 1.0, 0.5);
    McmcConfig c;
    c.n_samples = 1000;
    c.burn_in = 100;
    c.thinning = 1;
    CHECK_THROWS_AS(run_mcmc(p, [](const VectorXd&) { return std::nan(""); }, c), NumericalError);
    int calls = 0;
    const auto goes_bad = [&](const VectorXd&) { return ++calls > 50 ? std::nan("") : 0.0; };
    CHECK_THROWS_AS(run_mcmc(p, goes_bad, c), NumericalError);
    c.initial = VectorXd::Constant(2, 2.0);
    CHECK_THROWS_AS(run_mcmc(p, [](const VectorXd&) { return 0.0; }, c), InputError);
    c.initial.reset();
    c.thinning = 2000;
    CHECK_THROWS_AS(run_mcmc(p, [](const VectorXd&) { return 0.0; }, c), InputError);
}

TEST_CASE("moments and diagnostics of degenerate chains") {
    McmcChain ch;
    ch.samples = MatrixXd::Constant(200, 3, 0.75);
    ch.log_posterior = VectorXd::Zero(200);
    const PosteriorMoments m = posterior_moments(ch);
    CHECK(m.mean.isApprox(VectorXd::Constant(3, 0.75)));
    CHECK(m.std.isZero());
    const ChainDiagnostics d = chain_diagnostics(ch);
    CHECK(d.degenerate);
    CHECK(std::isnan(d.split_rhat));
    CHECK(d.effective_sample_size == 1.0);
    ch.samples.conservativeResize(50, 3);
    CHECK_THROWS_AS(posterior_moments(ch), InputError);
}

TEST_CASE("ESS of independent draws is close to the chain length") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 5; ++trial) {
        VectorXd s(5000);
        for (auto& v : s) v = nd(rng);
        CHECK(effective_sample_size(s) == doctest::Approx(5000.0).epsilon(0.2));
    }
    VectorXd ar(5000);
    ar[0] = 0.0;
    for (Eigen::Index i = 1; i < ar.size(); ++i) ar[i] = 0.9 * ar[i - 1] + nd(rng);
    // AR(1) with phi = 0.9 has tau = (1 + phi) / (1 - phi) = 19.
    CHECK(effective_sample_size(ar) == doctest::Approx(5000.0 / 19.0).epsilon(0.35));
}

TEST_CASE("chain CSV layout") {
    const PriorSpec p = testing::box_prior(2, 0.0, 1.0, 0.5);
    McmcConfig c;
    c.n_samples = 500;
    c.burn_in = 100;
    c.thinning = 5;
    const McmcChain ch = run_mcmc(p, [](const VectorXd&) { return 0.0; }, c);
    const auto dir = testing::scratch_dir("chain_io");
    write_chain_csv(dir / "c.csv", {"a", "b"}, ch);
    const CsvTable t = read_csv(dir / "c.csv");
    CHECK(t.header == std::vector<std::string>{"step", "a", "b", "log_posterior"});
    CHECK(t.rows.size() == 100);
    std::vector<std::string> names;
    VectorXd lp;
    std::vector<long long> steps;
    const MatrixXd back = read_samples_csv(dir / "c.csv", &names, &lp, &steps);
    CHECK(back == ch.samples);
    CHECK(steps == ch.steps);
    write_diagnostics_report(dir / "d.txt", {"a", "b"}, chain_diagnostics(ch), posterior_moments(ch));
    CHECK(testing::slurp(dir / "d.txt").find("acceptance_rate = ") == 0);
}

TEST_CASE("bias treatment names") {
    for (auto t : {BiasTreatment::Disabled, BiasTreatment::Conditional, BiasTreatment::Marginal})
        CHECK(bias_treatment_from_string(to_string(t)) == t);
    CHECK_THROWS_AS(bias_treatment_from_string("sometimes"), InputError);
}
