#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "qdyn/data.hpp"
#include "qdyn/tensor.hpp"

namespace qdyn::test {

inline std::vector<double> random_values(const ad::Shape& shape, std::mt19937_64& rng,
                                         double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(static_cast<size_t>(ad::numel(shape)));
    for (auto& x : v) x = dist(rng);
    return v;
}

// Central-difference gradient check for a scalar-valued graph builder.
// The builder receives leaves for the given inputs and returns the scalar
// output. Error metric is |analytic - fd| / max(1, |analytic|, |fd|): an
// absolute comparison for small gradients, relative for large ones.
struct FdCheck {
    double max_err = 0.0;
    int64_t checked = 0;
};

inline FdCheck fd_gradient_check(
    const std::function<ad::Tensor(ad::Tape&, std::vector<ad::Tensor>&)>& build,
    std::vector<std::vector<double>> inputs, const std::vector<ad::Shape>& shapes,
    double step = 1e-5) {
    auto eval = [&](const std::vector<std::vector<double>>& vals) {
        ad::Tape tape;
        std::vector<ad::Tensor> leaves;
        for (size_t i = 0; i < vals.size(); ++i) leaves.push_back(tape.leaf(shapes[i], vals[i]));
        return build(tape, leaves).value();
    };

    ad::Tape tape;
    std::vector<ad::Tensor> leaves;
    for (size_t i = 0; i < inputs.size(); ++i) leaves.push_back(tape.leaf(shapes[i], inputs[i]));
    ad::Tensor out = build(tape, leaves);
    ad::Gradients grads = tape.backward(out);

    FdCheck r;
    for (size_t i = 0; i < inputs.size(); ++i) {
        const ad::Tensor g = grads.grad(leaves[i]);
        for (size_t j = 0; j < inputs[i].size(); ++j) {
            auto plus = inputs;
            auto minus = inputs;
            plus[i][j] += step;
            minus[i][j] -= step;
            const double fd = (eval(plus) - eval(minus)) / (2.0 * step);
            const double a = g.data()[j];
            const double err = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
            r.max_err = std::max(r.max_err, err);
            ++r.checked;
        }
    }
    return r;
}

// Straight-line constant-attitude trajectory: constant v, zero omega.
inline data::Trajectory constant_trajectory(size_t n, double vx = 0.0, double hz = 100.0) {
    data::Trajectory tr;
    tr.id = "const";
    for (size_t i = 0; i < n; ++i) {
        data::State s;
        s.v = {vx, 0.0, 0.0};
        s.p = {vx * static_cast<double>(i) / hz, 0.0, 1.0};
        tr.t.push_back(static_cast<double>(i) / hz);
        tr.states.push_back(s);
        tr.actions.push_back({5.0, 5.0, 5.0, 5.0});
    }
    tr.actions_scaled = true; // values above are already model-scale
    return tr;
}

inline std::mt19937_64 test_rng(uint64_t seed = 42) { return std::mt19937_64(seed); }

} // namespace qdyn::test
