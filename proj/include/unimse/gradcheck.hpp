#pragma once

// Finite-difference verification of reverse-mode gradients.
//
// For each parameter coordinate, the analytic gradient is compared against
// the central difference (f(x+eps) - f(x-eps)) / (2*eps), with f rebuilt from
// scratch on a fresh graph per evaluation. The graph seed is pinned, so any
// stochastic op replays the same draws for both sides of a difference.

#include <algorithm>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "unimse/common.hpp"
#include "unimse/tensor.hpp"

namespace unimse::numcore {

struct GradCheckIssue {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t coords_checked = 0;
    std::size_t failures_total = 0;
    std::vector<GradCheckIssue> failures; // capped sample of the failing coordinates
    std::vector<std::pair<std::string, double>> per_param_max;
    double epsilon = 0.0;
    double tolerance = 0.0;

    bool pass() const { return failures_total == 0; }

    std::string summary() const {
        std::string s = str("grad_check: ", coords_checked, " coordinates, max rel err ", max_rel_err,
                            " (eps ", epsilon, ", tol ", tolerance, ") -> ",
                            pass() ? "PASS" : str("FAIL, ", failures_total, " bad"));
        for (const auto& f : failures)
            s += str("\n  ", f.param, "[", f.index, "]: analytic ", f.analytic, " numeric ", f.numeric,
                     " rel ", f.rel_err);
        return s;
    }
};

// Relative error with a floor so coordinates whose true gradient is ~0 are
// judged on an absolute scale instead of dividing noise by noise. At the
// defaults the implied absolute tolerance is tol * floor = 1e-9, an order of
// magnitude above central-difference roundoff for losses of order ten.
inline double grad_rel_err(double analytic, double numeric, double floor = 1e-5) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

inline GradCheckReport grad_check(const std::vector<std::pair<std::string, Tensor>>& params,
                                  const std::function<Tensor(Graph&)>& build, double eps = 1e-5,
                                  double tol = 1e-4, double floor = 1e-5,
                                  std::uint64_t graph_seed = 0,
                                  std::size_t max_reported_failures = 20) {
    if (eps <= 0.0) fail("grad_check: eps must be positive");
    GradCheckReport report;
    report.epsilon = eps;
    report.tolerance = tol;

    for (auto& [name, t] : params) {
        if (!t.node()->requires_grad) fail("grad_check: parameter ", name, " has requires_grad=false");
        const_cast<Tensor&>(t).zero_grad();
    }
    std::vector<std::vector<double>> analytic;
    {
        Graph g(graph_seed);
        Tensor loss = build(g);
        if (loss.size() != 1) fail("grad_check: build() must return a scalar loss");
        g.backward(loss);
        for (auto& [name, t] : params) {
            (void)name;
            std::vector<double> grads(t.size());
            for (std::size_t i = 0; i < t.size(); ++i) grads[i] = t.grad_at(i);
            analytic.push_back(std::move(grads));
        }
    }

    auto eval = [&]() {
        Graph g(graph_seed);
        return build(g).value();
    };

    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor t = params[p].second;
        double param_max = 0.0;
        auto& v = t.mutable_data();
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double saved = v[i];
            v[i] = saved + eps;
            const double f_plus = eval();
            v[i] = saved - eps;
            const double f_minus = eval();
            v[i] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * eps);
            const double a = analytic[p][i];
            const double rel = grad_rel_err(a, numeric, floor);
            param_max = std::max(param_max, rel);
            report.max_rel_err = std::max(report.max_rel_err, rel);
            ++report.coords_checked;
            if (rel > tol) {
                ++report.failures_total;
                if (report.failures.size() < max_reported_failures)
                    report.failures.push_back({params[p].first, i, a, numeric, rel});
            }
        }
        report.per_param_max.emplace_back(params[p].first, param_max);
    }
    return report;
}

} // namespace unimse::numcore
