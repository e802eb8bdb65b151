#pragma once

#include "calival/core_model.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace testing {

using calival::MatrixXd;
using calival::VectorXd;

// y_k = sum_j H(k, j) * theta_j + x_0 * slope_k: linear in theta, one design input.
class LinearModel final : public calival::ComputerModel {
public:
    explicit LinearModel(MatrixXd h, VectorXd slope = {}) : h_(std::move(h)), slope_(std::move(slope)) {
        if (slope_.size() == 0) slope_ = VectorXd::Zero(h_.rows());
    }
    std::vector<std::string> design_names() const override { return {"x"}; }
    std::vector<std::string> qoi_names() const override {
        std::vector<std::string> out;
        for (Eigen::Index k = 0; k < h_.rows(); ++k) out.push_back("y" + std::to_string(k + 1));
        return out;
    }
    std::size_t param_dim() const override { return static_cast<std::size_t>(h_.cols()); }

protected:
    VectorXd evaluate_raw(const VectorXd& x, const VectorXd& theta) const override {
        return h_ * theta + slope_ * x[0];
    }

private:
    MatrixXd h_;
    VectorXd slope_;
};

inline std::shared_ptr<calival::ExactEvaluator> exact(std::shared_ptr<const calival::ComputerModel> m) {
    return std::make_shared<calival::ExactEvaluator>(std::move(m));
}

inline calival::Observation observation(const std::string& id, const VectorXd& x, const std::vector<std::string>& xn,
                                        const VectorXd& y, const std::vector<std::string>& yn, const VectorXd& var,
                                        calival::Domain d = calival::Domain::IUQ) {
    calival::Observation o;
    o.test_id = id;
    o.design = {x, xn};
    o.measured = {y, yn};
    o.measurement_variance = var;
    o.domain = d;
    return o;
}

inline calival::PriorSpec box_prior(std::size_t d, double lo, double hi, double nominal) {
    std::vector<calival::ParameterPrior> p;
    for (std::size_t i = 0; i < d; ++i) p.push_back({"t" + std::to_string(i + 1), lo, hi, nominal});
    return calival::PriorSpec(p);
}

inline std::vector<calival::DesignRange> benchmark_ranges() {
    return {{"pressure", 6.8, 7.2}, {"flow", 12.0, 18.0}, {"power", 5.0, 7.0}, {"inlet_temperature", 276.0, 282.0}};
}

inline calival::PriorSpec benchmark_prior() {
    std::vector<calival::ParameterPrior> p;
    for (const char* n : {"P1008", "P1012", "P1022", "P1028", "P1029"}) p.push_back({n, 0.7, 1.3, 1.0});
    return calival::PriorSpec(p);
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("calival_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace testing
