#include "calival/errors.hpp"
#include "calival/surrogate_gp.hpp"

#include "doctest.h"
#include "support.hpp"

#include <cmath>
#include <sstream>

using namespace calival;

namespace {

Bounds unit_box(std::size_t d) { return {VectorXd::Zero(d), VectorXd::Ones(d)}; }

double smooth2(double u, double v) { return std::sin(3.0 * u) + 0.5 * std::cos(2.0 * v) + u * v; }

VectorXd eval2(const MatrixXd& x) {
    VectorXd y(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) y[i] = smooth2(x(i, 0), x(i, 1));
    return y;
}

} // namespace

TEST_CASE("latin hypercube stratification") {
    const TrainingDesign d = build_training_design(unit_box(1), 100, 4);
    std::vector<int> count(100, 0);
    for (Eigen::Index i = 0; i < 100; ++i) {
        const double v = d.samples(i, 0);
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
        ++count[std::min(99, static_cast<int>(v * 100.0))];
    }
    for (int c : count) CHECK(c == 1);
    CHECK(build_training_design(unit_box(1), 100, 4).samples == d.samples);
}

TEST_CASE("nine-dimensional design is inside bounds with distinct rows") {
    Bounds b{VectorXd(9), VectorXd(9)};
    b.lower << 6.8, 12, 5, 276, 0.7, 0.7, 0.7, 0.7, 0.7;
    b.upper << 7.2, 18, 7, 282, 1.3, 1.3, 1.3, 1.3, 1.3;
    const TrainingDesign d = build_training_design(b, 200, 8);
    double min_dist = 1e300;
    for (Eigen::Index i = 0; i < 200; ++i) {
        CHECK(((d.samples.row(i).transpose() - b.lower).array() >= 0.0).all());
        CHECK(((b.upper - d.samples.row(i).transpose()).array() >= 0.0).all());
        for (Eigen::Index j = 0; j < i; ++j) min_dist = std::min(min_dist, (d.samples.row(i) - d.samples.row(j)).norm());
    }
    CHECK(min_dist > 0.0);
    CHECK_THROWS_AS(build_training_design(Bounds{VectorXd::Ones(2), VectorXd::Zero(2)}, 10, 1), InputError);
}

TEST_CASE("GP recovers a straight line") {
    MatrixXd x(20, 1);
    VectorXd y(20);
    for (int i = 0; i < 20; ++i) {
        x(i, 0) = i / 19.0;
        y[i] = 3.0 * x(i, 0) + 1.0;
    }
    const GpModel gp = GpModel::fit(x, y);
    for (int i = 0; i < 25; ++i) {
        const double u = 0.02 + 0.96 * i / 24.0;
        const GpPrediction p = gp.predict(VectorXd(VectorXd::Constant(1, u)));
        CHECK(std::abs(p.mean[0] - (3.0 * u + 1.0)) / (3.0 * u + 1.0) < 1e-3);
    }
    CHECK(std::isfinite(gp.log_marginal_likelihood()));
}

TEST_CASE("GP interpolates its training points") {
    const TrainingDesign d = build_training_design(unit_box(2), 30, 2);
    const VectorXd y = eval2(d.samples);
    const GpModel gp = GpModel::fit(d.samples, y);
    const GpPrediction p = gp.predict(d.samples);
    const double s2 = gp.hyperparameters().signal_variance;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        CHECK(std::abs(p.mean[i] - y[i]) <= 1e-6 * std::max(1.0, std::abs(y[i])) + 1e-5);
        CHECK(p.variance[i] <= 10.0 * s2 * gp.hyperparameters().nugget + 1e-12);
    }
    const auto& h = gp.hyperparameters();
    CHECK(std::isfinite(h.signal_variance));
    CHECK(h.length_scales.allFinite());
    CHECK(std::isfinite(h.nugget));
}

TEST_CASE("GP variance grows away from data") {
    MatrixXd x(2, 1);
    x << 0.0, 1.0;
    const VectorXd y = (VectorXd(2) << 0.0, 1.0).finished();
    GpHyperparameters h;
    h.signal_variance = 1.0;
    h.length_scales = VectorXd::Constant(1, 0.3);
    h.nugget = 1e-8;
    const GpModel gp = GpModel::with_hyperparameters(x, y, h);
    CHECK(gp.predict(VectorXd(VectorXd::Constant(1, 0.5))).variance[0] > gp.predict(VectorXd(VectorXd::Constant(1, 0.0))).variance[0]);
    CHECK(gp.predict(VectorXd(VectorXd::Constant(1, 0.0))).variance[0] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("constant outputs give a constant prediction") {
    const TrainingDesign d = build_training_design(unit_box(3), 25, 5);
    const GpModel gp = GpModel::fit(d.samples, VectorXd::Constant(25, 4.25));
    const MatrixXd q = build_training_design(unit_box(3), 40, 6).samples;
    const GpPrediction p = gp.predict(q);
    for (Eigen::Index i = 0; i < 40; ++i) {
        CHECK(p.mean[i] == doctest::Approx(4.25).epsilon(1e-12));
        CHECK(p.variance[i] == doctest::Approx(0.0));
    }
}

TEST_CASE("batch and single predictions agree") {
    const TrainingDesign d = build_training_design(unit_box(2), 30, 3);
    const GpModel gp = GpModel::fit(d.samples, eval2(d.samples));
    const MatrixXd q = build_training_design(unit_box(2), 17, 9).samples;
    const GpPrediction batch = gp.predict(q);
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        const GpPrediction one = gp.predict(VectorXd(q.row(i).transpose()));
        CHECK(one.mean[0] == doctest::Approx(batch.mean[i]).epsilon(1e-12));
        CHECK(one.variance[0] == doctest::Approx(batch.variance[i]).epsilon(1e-10));
    }
}

TEST_CASE("holdout quality") {
    const TrainingDesign d = build_training_design(unit_box(2), 40, 1);
    const VectorXd y = eval2(d.samples);
    const GpModel gp = GpModel::fit(d.samples, y);
    CHECK(validate_gp(gp, d.samples, y).rmse < 1e-5);

    const MatrixXd h = build_training_design(unit_box(2), 50, 77).samples;
    const GpQuality q = validate_gp(gp, h, eval2(h));
    CHECK(q.n == 50);
    CHECK(q.rmse < 0.05);
    CHECK(q.coverage_fraction >= 0.80);
    CHECK(q.coverage_fraction <= 1.0);

    GpHyperparameters wrong = gp.hyperparameters();
    wrong.length_scales = VectorXd::Constant(2, 0.01);
    const GpModel bad = GpModel::with_hyperparameters(d.samples, y, wrong);
    CHECK(validate_gp(bad, h, eval2(h)).rmse > q.rmse);
}

TEST_CASE("property: predictions are invariant to affine input units and output shifts") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int trial = 0; trial < 10; ++trial) {
        const TrainingDesign d = build_training_design(unit_box(2), 20, 100 + trial);
        const VectorXd y = eval2(d.samples);
        GpHyperparameters h;
        h.signal_variance = 1.0;
        h.length_scales = (VectorXd(2) << 0.5 + std::abs(u(rng)), 0.5 + std::abs(u(rng))).finished();
        h.nugget = 1e-8;
        const VectorXd scale = (VectorXd(2) << std::exp(u(rng)), std::exp(u(rng))).finished();
        const VectorXd shift = (VectorXd(2) << 10 * u(rng), 10 * u(rng)).finished();
        const double c = 10 * u(rng);
        const auto to_units = [&](const MatrixXd& m) {
            MatrixXd out = m;
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                out.row(i) = (m.row(i).transpose().cwiseProduct(scale) + shift).transpose();
            return out;
        };
        const GpModel a = GpModel::with_hyperparameters(d.samples, y, h);
        const GpModel b = GpModel::with_hyperparameters(to_units(d.samples), y.array() + c, h);
        const MatrixXd q = build_training_design(unit_box(2), 15, 200 + trial).samples;
        const GpPrediction pa = a.predict(q);
        const GpPrediction pb = b.predict(to_units(q));
        CHECK((pa.mean.array() + c - pb.mean.array()).abs().maxCoeff() < 1e-10 * (1.0 + std::abs(c)) * 10);
        CHECK((pa.variance - pb.variance).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("GP save and load reproduce predictions exactly") {
    const TrainingDesign d = build_training_design(unit_box(2), 25, 8);
    const GpModel gp = GpModel::fit(d.samples, eval2(d.samples));
    std::stringstream ss;
    gp.save(ss);
    const GpModel back = GpModel::load(ss);
    const MatrixXd q = build_training_design(unit_box(2), 10, 9).samples;
    CHECK(gp.predict(q).mean == back.predict(q).mean);
    CHECK(gp.predict(q).variance == back.predict(q).variance);
    std::stringstream garbage("not a model");
    CHECK_THROWS(GpModel::load(garbage));
}

TEST_CASE("duplicate training rows are rejected") {
    MatrixXd x(3, 1);
    x << 0.1, 0.1, 0.5;
    CHECK_THROWS_AS(GpModel::fit(x, VectorXd::Ones(3)), InputError);
}

TEST_CASE("surrogate evaluation paths agree") {
    const BenchmarkModel m;
    Bounds b{VectorXd(9), VectorXd(9)};
    b.lower << 6.8, 12, 5, 276, 0.7, 0.7, 0.7, 0.7, 0.7;
    b.upper << 7.2, 18, 7, 282, 1.3, 1.3, 1.3, 1.3, 1.3;
    const TrainingDesign td = build_training_design(b, 60, 5);
    MatrixXd y(60, 4);
    for (Eigen::Index i = 0; i < 60; ++i)
        y.row(i) = m.evaluate_values(td.samples.row(i).head(4).transpose(), td.samples.row(i).tail(5).transpose()).transpose();
    GpFitOptions o;
    o.restarts = 2;
    o.max_iterations = 60;
    const GpSurrogate s = GpSurrogate::fit(td, y, m.design_names(), testing::benchmark_prior().names(), m.qoi_names(), o);

    const MatrixXd q = build_training_design(b, 12, 6).samples;
    const ResponseBatch joint = s.predict(q);
    const MatrixXd designs = q.leftCols(4);
    const VectorXd theta = q.row(0).tail(5).transpose();
    const ResponseBatch by_design = s.at_designs(designs, theta);
    const ResponseBatch bound = s.bind(designs)->evaluate(theta);
    MatrixXd same_theta = q;
    for (Eigen::Index i = 0; i < q.rows(); ++i) same_theta.row(i).tail(5) = theta.transpose();
    const ResponseBatch ref = s.predict(same_theta);
    CHECK((by_design.mean - ref.mean).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((bound.mean - ref.mean).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((bound.variance - ref.variance).cwiseAbs().maxCoeff() < 1e-9);

    const VectorXd x0 = q.row(0).head(4).transpose();
    const MatrixXd thetas = q.rightCols(5);
    const ResponseBatch by_param = s.at_params(x0, thetas);
    MatrixXd same_x = q;
    for (Eigen::Index i = 0; i < q.rows(); ++i) same_x.row(i).head(4) = x0.transpose();
    const ResponseBatch ref2 = s.predict(same_x);
    CHECK((by_param.mean - ref2.mean).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((by_param.variance - ref2.variance).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((joint.mean.row(0) - ref.mean.row(0)).cwiseAbs().maxCoeff() < 1e-9);

    const auto dir = testing::scratch_dir("surrogate_io");
    s.save(dir / "s.gp");
    const GpSurrogate back = GpSurrogate::load(dir / "s.gp");
    CHECK(back.predict(q).mean == joint.mean);
    CHECK(back.qoi_names() == m.qoi_names());
}
