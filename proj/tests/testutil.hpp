#pragma once

// Shared test oracles. These stay independent of the implementation paths
// they check: the finite-difference oracle only calls forward functions,
// and the reference rasterizer below (in test_encoder) is a straight-line
// reimplementation, not a call into the library.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "vpit/tensor.hpp"

namespace testutil {

struct FdReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    size_t checked = 0;
};

// Central finite differences with step h against the analytic gradient of
// `f` (a scalar-valued function of the parameter tensors). Relative error
// uses max(|analytic|, |numeric|, floor) as the denominator.
inline FdReport fd_check(const std::function<vpit::Tensor()>& f,
                         std::span<vpit::Tensor> params, double h = 1e-5,
                         double floor = 1e-6) {
    vpit::Tensor loss = f();
    std::vector<vpit::Tensor> pvec(params.begin(), params.end());
    auto analytic = vpit::grad(loss, pvec);

    FdReport rep;
    for (size_t pi = 0; pi < pvec.size(); ++pi) {
        auto& data = pvec[pi].data();
        for (size_t i = 0; i < data.size(); ++i) {
            double orig = data[i];
            data[i] = orig + h;
            double up = f().value();
            data[i] = orig - h;
            double dn = f().value();
            data[i] = orig;
            double numeric = (up - dn) / (2.0 * h);
            double a = analytic[pi][i];
            double abs_err = std::abs(a - numeric);
            double denom = std::max({std::abs(a), std::abs(numeric), floor});
            rep.max_rel_err = std::max(rep.max_rel_err, abs_err / denom);
            rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
            ++rep.checked;
        }
    }
    return rep;
}

}  // namespace testutil
