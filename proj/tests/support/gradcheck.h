#pragma once

// Central finite-difference gradient checker for scalar tape functions.

#include "emo/autograd.h"

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

namespace testsupport {

struct GradCheckResult {
    double worst_relative_error = 0.0;
    std::string worst_name;
};

/// For each input, compares the analytic gradient of f() with central
/// differences, entry by entry. Relative error per input is
/// ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-6). The floor keeps
/// tensors whose exact gradient is zero (attention key biases: softmax ignores a
/// per-row shift) from comparing round-off against round-off.
inline GradCheckResult gradcheck(const std::function<emo::ag::Var()>& f,
                                 std::vector<std::pair<std::string, emo::ag::Var>> inputs, double step = 1e-3) {
    for (auto& [name, v] : inputs) {
        v.set_requires_grad(true);
        v.zero_grad();
    }
    f().backward();
    GradCheckResult res;
    for (auto& [name, v] : inputs) {
        const emo::ag::Mat analytic = v.grad();
        emo::ag::Mat numeric(analytic.rows(), analytic.cols());
        emo::ag::Mat& x = v.mutable_value();
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double orig = x.data()[i];
            x.data()[i] = orig + step;
            const double up = f().item();
            x.data()[i] = orig - step;
            const double down = f().item();
            x.data()[i] = orig;
            numeric.data()[i] = (up - down) / (2.0 * step);
        }
        const double denom = std::max({analytic.norm(), numeric.norm(), 1e-6});
        const double err = (analytic - numeric).norm() / denom;
        if (err >= res.worst_relative_error) {
            res.worst_relative_error = err;
            res.worst_name = name;
        }
    }
    return res;
}

}  // namespace testsupport
