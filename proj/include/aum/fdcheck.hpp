#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "aum/array.hpp"

namespace aum {

// Central-difference gradient oracle. Meant to run in 64-bit mode; 32-bit
// finite differences are too noisy to be a useful reference.

struct FdParam {
    std::string name;
    Array<double>* values;
    const Array<double>* analytic_grad;  // reverse-mode result to check
};

struct FdReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool ok(double tol_rel) const { return max_rel_err < tol_rel; }
    std::string describe() const {
        return "max rel err " + std::to_string(max_rel_err) + " at " + worst_param + "[" +
               std::to_string(worst_index) + "] analytic=" + std::to_string(worst_analytic) +
               " numeric=" + std::to_string(worst_numeric);
    }
};

// f re-evaluates the full forward pass from the current parameter values.
inline FdReport finite_difference_check(const std::function<double()>& f,
                                        const std::vector<FdParam>& params,
                                        double eps = 1e-4) {
    FdReport rep;
    for (const FdParam& p : params) {
        Array<double>& a = *p.values;
        for (std::size_t i = 0; i < a.numel(); ++i) {
            double orig = a[i];
            a[i] = orig + eps;
            double fp = f();
            a[i] = orig - eps;
            double fm = f();
            a[i] = orig;
            double numeric = (fp - fm) / (2.0 * eps);
            double analytic = (*p.analytic_grad)[i];
            double rel = std::abs(numeric - analytic) /
                         std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = p.name;
                rep.worst_index = i;
                rep.worst_analytic = analytic;
                rep.worst_numeric = numeric;
            }
        }
    }
    return rep;
}

}  // namespace aum
