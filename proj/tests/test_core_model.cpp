#include "calival/core_model.hpp"
#include "calival/dataset_io.hpp"
#include "calival/errors.hpp"

#include "doctest.h"
#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace calival;

namespace {

// Written out independently of the library for comparison.
VectorXd benchmark_oracle(const VectorXd& x, const VectorXd& t) {
    const double q = x[2] / 6.5;
    const double tsat = 260.0 + 26.0 * (x[0] - 6.0);
    const double c = (tsat - x[3]) / 12.0;
    const double g = x[1] / 15.0;
    VectorXd out(4);
    const double z[4] = {0.25, 0.5, 0.75, 1.0};
    for (int k = 0; k < 4; ++k) {
        const double num = t[1] * q * z[k] - t[0] * 0.15 * c;
        const double den = t[2] * 0.6 * q * z[k] + t[3] * 0.5 + t[4] * 0.4 * g;
        out[k] = 100.0 * std::clamp(num / den, 0.0, 1.0);
    }
    return out;
}

Dataset numbered_dataset(std::size_t n) {
    std::vector<Observation> obs;
    for (std::size_t i = 0; i < n; ++i)
        obs.push_back(testing::observation("T" + std::to_string(i), VectorXd::Constant(1, double(i)), {"x"},
                                           VectorXd::Constant(1, 1.0), {"y"}, VectorXd::Constant(1, 1.0)));
    return Dataset({"x"}, {"y"}, obs);
}

} // namespace

TEST_CASE("benchmark matches an independent evaluation of its formula") {
    const BenchmarkModel m;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        VectorXd x(4), t(5);
        x << 6.5 + u(rng), 10 + 10 * u(rng), 4 + 4 * u(rng), 270 + 15 * u(rng);
        for (int j = 0; j < 5; ++j) t[j] = 0.5 + u(rng);
        const VectorXd got = m.evaluate_values(x, t);
        const VectorXd want = benchmark_oracle(x, t);
        for (int k = 0; k < 4; ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-13));
        CHECK((got.array() >= 0.0).all());
        CHECK((got.array() <= 100.0).all());
    }
}

TEST_CASE("benchmark generator reproduces the model when noise and bias are off") {
    GeneratorSettings g;
    g.theta_true = BenchmarkModel::ground_truth_theta();
    g.noise_std = 0.0;
    g.inject_bias = false;
    g.n_tests = 12;
    g.ranges = testing::benchmark_ranges();
    const Dataset d = generate_benchmark_data(g, 5);
    const BenchmarkModel m;
    for (const auto& o : d.observations()) {
        const VectorXd y = m.evaluate_values(o.design.values, g.theta_true);
        CHECK((o.measured.values - y).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK(g.theta_true.isApprox((VectorXd(5) << 1.2, 0.9, 1.1, 0.8, 1.05).finished()));
}

TEST_CASE("injected bias is 1.5 z (q - 1)") {
    VectorXd x(4);
    x << 7.0, 15.0, 7.8, 279.0;
    const VectorXd b = BenchmarkModel::injected_bias(x);
    const double z[4] = {0.25, 0.5, 0.75, 1.0};
    for (int k = 0; k < 4; ++k) CHECK(b[k] == doctest::Approx(1.5 * z[k] * (7.8 / 6.5 - 1.0)));
}

TEST_CASE("zero power gives zero void everywhere") {
    const BenchmarkModel m;
    VectorXd x(4);
    x << 7.0, 15.0, 0.0, 279.0;
    const VectorXd y = m.evaluate_values(x, VectorXd::Ones(5));
    CHECK(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("VoidF4 is monotone in theta_1 with the sign of the subcooling") {
    const BenchmarkModel m;
    for (double t_in : {279.0, 290.0}) {
        VectorXd x(4);
        x << 7.0, 15.0, 6.5, t_in;
        const bool subcooled = BenchmarkModel::saturation_temperature(7.0) > t_in;
        double prev = subcooled ? 101.0 : -1.0;
        for (int i = 0; i <= 100; ++i) {
            VectorXd t = VectorXd::Ones(5);
            t[0] = 0.5 + 0.02 * i;
            const double v = m.evaluate_values(x, t)[3];
            if (subcooled)
                CHECK(v <= prev);
            else
                CHECK(v >= prev);
            prev = v;
        }
    }
}

TEST_CASE("evaluate is pure and validates dimensions") {
    const BenchmarkModel m;
    DesignPoint x{(VectorXd(4) << 7.0, 15.0, 6.0, 279.0).finished(), m.design_names()};
    ParamVector t{VectorXd::Ones(5)};
    const QoIVector a = m.evaluate(x, t);
    const QoIVector b = m.evaluate(x, t);
    CHECK(a.values == b.values);
    CHECK(a.names == m.qoi_names());
    CHECK_THROWS_AS(m.evaluate(x, ParamVector{VectorXd::Ones(4)}), InputError);
    x.values[0] = std::nan("");
    CHECK_THROWS_AS(m.evaluate(x, t), InputError);
}

TEST_CASE("void-fraction correction formulas") {
    CHECK(correct_void_fraction(20.0, CorrectionFamily::Standard) == doctest::Approx(16.5153).epsilon(1e-5));
    CHECK(correct_void_fraction(20.0, CorrectionFamily::Standard) == doctest::Approx(20.0 / 1.211).epsilon(1e-15));
    CHECK(correct_void_fraction(90.0, CorrectionFamily::HighBurnup) == doctest::Approx(83.5655).epsilon(1e-5));
    CHECK(correct_void_fraction(90.0, CorrectionFamily::HighBurnup) == doctest::Approx(90.0 / 1.077).epsilon(1e-15));
    for (auto f : {CorrectionFamily::Standard, CorrectionFamily::HighBurnup}) {
        CHECK(correct_void_fraction(0.0, f) == 0.0);
        CHECK(correct_void_fraction(19.99, f) == 19.99);
        CHECK(correct_void_fraction(95.0, f) == 95.0);
        CHECK_THROWS_AS(correct_void_fraction(-1.0, f), InputError);
        CHECK_THROWS_AS(correct_void_fraction(100.5, f), InputError);
        double prev = 0.0;
        for (int i = 0; i <= 700; ++i) {
            const double a = 20.0 + 0.1 * i;
            const double c = correct_void_fraction(a, f);
            CHECK(c < a);
            CHECK(c > prev);
            prev = c;
        }
    }
    CHECK(correction_family_from_string("high_burnup") == CorrectionFamily::HighBurnup);
    CHECK_THROWS_AS(correction_family_from_string("other"), InputError);
}

TEST_CASE("correct_dataset leaves exempt QoIs alone") {
    GeneratorSettings g;
    g.theta_true = BenchmarkModel::ground_truth_theta();
    g.ranges = testing::benchmark_ranges();
    g.n_tests = 10;
    const Dataset d = generate_benchmark_data(g, 1);
    const Dataset c = correct_dataset(d, CorrectionFamily::Standard, {"VoidF4"});
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(c[i].measured.values[3] == d[i].measured.values[3]);
        for (int k = 0; k < 3; ++k)
            CHECK(c[i].measured.values[k] == correct_void_fraction(d[i].measured.values[k], CorrectionFamily::Standard));
    }
}

TEST_CASE("split sizes and determinism") {
    const auto [v86, p86] = split_dataset(numbered_dataset(86), 7);
    CHECK(v86.size() == 43);
    CHECK(p86.size() == 43);
    const auto [v2, p2] = split_dataset(numbered_dataset(2), 7);
    CHECK(v2.size() == 1);
    CHECK(p2.size() == 1);
    const auto [v5, p5] = split_dataset(numbered_dataset(5), 7);
    CHECK(v5.size() == 3);
    CHECK(p5.size() == 2);
    const auto [va, pa] = split_dataset(numbered_dataset(86), 7);
    for (std::size_t i = 0; i < va.size(); ++i) CHECK(va[i].test_id == v86[i].test_id);
    for (const auto& o : v86.observations()) CHECK(o.domain == Domain::VAL);
    for (const auto& o : p86.observations()) CHECK(o.domain == Domain::PRED);
    CHECK_THROWS_AS(split_dataset(numbered_dataset(1), 7), InputError);
}

TEST_CASE("property: split is a partition for any size and seed") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng() % 60;
        const auto seed = rng();
        const auto [v, p] = split_dataset(numbered_dataset(n), seed);
        std::set<std::string> a, b;
        for (const auto& o : v.observations()) a.insert(o.test_id);
        for (const auto& o : p.observations()) b.insert(o.test_id);
        CHECK(a.size() == (n + 1) / 2);
        CHECK(b.size() == n / 2);
        std::set<std::string> all = a;
        all.insert(b.begin(), b.end());
        CHECK(all.size() == n);
    }
}

TEST_CASE("dataset invariants are enforced") {
    auto obs = numbered_dataset(3).observations();
    obs[2].test_id = "T0";
    CHECK_THROWS_AS(Dataset({"x"}, {"y"}, obs).validate(), InputError);
    obs = numbered_dataset(3).observations();
    obs[1].measurement_variance[0] = -1.0;
    CHECK_THROWS_AS(Dataset({"x"}, {"y"}, obs).validate(), InputError);
}

TEST_CASE("uncertainty budget") {
    const auto b = UncertaintyBudget::diagonal(VectorXd::Constant(2, 1.0), VectorXd::Constant(2, 0.5),
                                               VectorXd::Constant(2, 0.25));
    CHECK(b.total().isApprox(MatrixXd::Identity(2, 2) * 1.75));
    UncertaintyBudget bad = b;
    bad.bias(0, 0) = -1.0;
    CHECK_THROWS_AS(bad.validate(), InputError);
}

TEST_CASE("prior box") {
    const PriorSpec p = testing::box_prior(3, 0.0, 5.0, 1.0);
    CHECK(p.contains(VectorXd::Constant(3, 2.0)));
    CHECK_FALSE(p.contains(VectorXd::Constant(3, 5.5)));
    CHECK(p.log_density() == doctest::Approx(-3.0 * std::log(5.0)));
    std::mt19937_64 rng(1);
    const MatrixXd s = p.sample(1000, rng);
    for (Eigen::Index i = 0; i < s.rows(); ++i) CHECK(p.contains(s.row(i).transpose()));
    CHECK_THROWS_AS(PriorSpec({{"a", 1.0, 0.0, 0.5}}), InputError);
}

TEST_CASE("dataset CSV round trip is exact") {
    GeneratorSettings g;
    g.theta_true = BenchmarkModel::ground_truth_theta();
    g.ranges = testing::benchmark_ranges();
    g.n_tests = 15;
    const Dataset d = generate_benchmark_data(g, 42);
    const auto dir = testing::scratch_dir("dataset_io");
    write_dataset_csv(dir / "d.csv", d);
    const Dataset r = read_dataset_csv(dir / "d.csv");
    REQUIRE(r.size() == d.size());
    CHECK(r.design_names() == d.design_names());
    CHECK(r.qoi_names() == d.qoi_names());
    CHECK(r.measured_matrix() == d.measured_matrix());
    CHECK(r.design_matrix() == d.design_matrix());
    CHECK(r.variance_matrix() == d.variance_matrix());
    const CsvTable t = read_csv(dir / "d.csv");
    CHECK(t.header.front() == "test_id");
    CHECK(t.header.back() == "domain");
    CHECK(t.header[9] == "VoidF1_var");
}

TEST_CASE("generator is deterministic and clamps to the physical range") {
    GeneratorSettings g;
    g.theta_true = BenchmarkModel::ground_truth_theta();
    g.ranges = testing::benchmark_ranges();
    g.noise_std = 30.0;
    g.n_tests = 50;
    const Dataset a = generate_benchmark_data(g, 9);
    const Dataset b = generate_benchmark_data(g, 9);
    CHECK(a.measured_matrix() == b.measured_matrix());
    CHECK((a.measured_matrix().array() >= 0.0).all());
    CHECK((a.measured_matrix().array() <= 100.0).all());
    CHECK(a.variance_matrix().isApprox(MatrixXd::Constant(50, 4, 900.0)));
    g.ranges[0].name = "flow";
    CHECK_THROWS_AS(generate_benchmark_data(g, 9), InputError);
}
