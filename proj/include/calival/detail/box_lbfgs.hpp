#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace calival::detail {

struct BoxMinimum {
    Eigen::VectorXd x;
    double value = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
};

// Limited-memory BFGS with projection onto a box. `f(x, grad)` returns the
// objective and fills the gradient; a non-finite return marks x infeasible
// and makes the line search back off.
template <class Objective>
BoxMinimum minimize_in_box(Objective&& f, Eigen::VectorXd x, const Eigen::VectorXd& lo,
                           const Eigen::VectorXd& hi, int max_iterations, double gtol = 1e-6,
                           int memory = 8) {
    using Eigen::VectorXd;
    const auto project = [&](const VectorXd& v) { return v.cwiseMax(lo).cwiseMin(hi); };
    const auto projected_gradient = [&](const VectorXd& at, const VectorXd& g) {
        VectorXd pg = g;
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            if ((at[i] <= lo[i] && g[i] > 0.0) || (at[i] >= hi[i] && g[i] < 0.0)) pg[i] = 0.0;
        }
        return pg;
    };

    BoxMinimum result;
    x = project(x);
    VectorXd g(x.size());
    double fx = f(x, g);
    result.x = x;
    result.value = fx;
    if (!std::isfinite(fx)) return result;

    std::deque<VectorXd> s_hist, y_hist;
    int stall = 0;
    for (int it = 0; it < max_iterations; ++it) {
        result.iterations = it + 1;
        const VectorXd pg = projected_gradient(x, g);
        if (pg.lpNorm<Eigen::Infinity>() < gtol) {
            result.converged = true;
            break;
        }

        // Two-loop recursion on the free variables.
        VectorXd q = pg;
        std::vector<double> a(s_hist.size());
        for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
            const double rho = 1.0 / y_hist[i].dot(s_hist[i]);
            a[i] = rho * s_hist[i].dot(q);
            q -= a[i] * y_hist[i];
        }
        if (!s_hist.empty()) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double rho = 1.0 / y_hist[i].dot(s_hist[i]);
            const double b = rho * y_hist[i].dot(q);
            q += (a[i] - b) * s_hist[i];
        }
        VectorXd d = -q;
        for (Eigen::Index i = 0; i < d.size(); ++i)
            if (pg[i] == 0.0) d[i] = 0.0;
        if (g.dot(d) >= 0.0) {
            d = -pg;
            s_hist.clear();
            y_hist.clear();
        }

        double t = s_hist.empty() ? std::min(1.0, 1.0 / std::max(d.norm(), 1e-12)) : 1.0;
        VectorXd x_new, g_new(x.size());
        double f_new = std::numeric_limits<double>::infinity();
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            x_new = project(x + t * d);
            f_new = f(x_new, g_new);
            if (std::isfinite(f_new) && f_new <= fx + 1e-4 * g.dot(x_new - x)) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) break;

        const VectorXd s = x_new - x;
        const VectorXd y = g_new - g;
        if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(s);
            y_hist.push_back(y);
            if (static_cast<int>(s_hist.size()) > memory) {
                s_hist.pop_front();
                y_hist.pop_front();
            }
        }
        const double decrease = fx - f_new;
        x = x_new;
        g = g_new;
        fx = f_new;
        stall = decrease < 1e-10 * (1.0 + std::abs(fx)) ? stall + 1 : 0;
        if (stall >= 3) {
            result.converged = true;
            break;
        }
    }
    result.x = x;
    result.value = fx;
    return result;
}

} // namespace calival::detail
