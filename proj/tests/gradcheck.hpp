// Shared finite-difference gradient harness. A check builds
// loss = sum(R . f(inputs)) with a fixed random projection R, then compares
// the tape gradient of every input element against central differences.
#pragma once

#include <functional>
#include <random>
#include <vector>

#include "cast/tensor.hpp"

namespace testutil {

enum class Domain {
    kReal,          // unconstrained gaussian samples
    kPositive,      // |x| + 0.5 (log, sqrt)
    kAwayFromZero,  // sign(x) * (|x| + 0.2), keeps relu/abs off the kink
};

using BuildFn =
    std::function<cast::Tensor(cast::Tape&, const std::vector<cast::Tensor>&)>;

struct GradCheckResult {
    double max_rel_err = 0.0;
    int64_t checked = 0;
};

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max(1.0, std::abs(b));
}

/// One gradient check at a random point. `grad_inputs[i]` marks which inputs
/// are differentiated (others stay constant leaves).
inline GradCheckResult check_gradients(const std::vector<cast::Shape>& shapes,
                                       const std::vector<Domain>& domains, const BuildFn& build,
                                       std::mt19937_64& rng, double eps = 1e-5) {
    using namespace cast;
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<std::vector<double>> values(shapes.size());
    for (size_t i = 0; i < shapes.size(); ++i) {
        values[i].resize(static_cast<size_t>(numel(shapes[i])));
        for (auto& v : values[i]) {
            double x = gauss(rng);
            switch (domains[i]) {
                case Domain::kPositive: x = std::abs(x) + 0.5; break;
                case Domain::kAwayFromZero: x = (x >= 0 ? 1.0 : -1.0) * (std::abs(x) + 0.2); break;
                default: break;
            }
            v = x;
        }
    }

    // forward once to fix the projection R
    std::vector<double> projection;
    {
        Tape t;
        std::vector<Tensor> leaves;
        for (size_t i = 0; i < shapes.size(); ++i) leaves.push_back(t.leaf(shapes[i], values[i], false));
        Tensor out = build(t, leaves);
        projection.resize(static_cast<size_t>(out.numel()));
        for (auto& r : projection) r = gauss(rng);
    }

    auto loss_at = [&](const std::vector<std::vector<double>>& vals) {
        Tape t;
        std::vector<Tensor> leaves;
        for (size_t i = 0; i < shapes.size(); ++i) leaves.push_back(t.leaf(shapes[i], vals[i], false));
        Tensor out = build(t, leaves);
        double acc = 0.0;
        const auto& ov = out.data();
        for (size_t i = 0; i < ov.size(); ++i) acc += ov[i] * projection[i];
        return acc;
    };

    // tape gradients
    std::vector<std::vector<double>> tape_grads(shapes.size());
    {
        Tape t;
        std::vector<Tensor> leaves;
        for (size_t i = 0; i < shapes.size(); ++i) leaves.push_back(t.leaf(shapes[i], values[i], true));
        Tensor out = build(t, leaves);
        Tensor proj = t.leaf(out.shape(), projection, false);
        Tensor loss = sum_all(mul(out, proj));
        t.backward(loss);
        for (size_t i = 0; i < shapes.size(); ++i) tape_grads[i] = leaves[i].grad();
    }

    GradCheckResult res;
    for (size_t i = 0; i < shapes.size(); ++i) {
        for (size_t j = 0; j < values[i].size(); ++j) {
            auto bumped = values;
            bumped[i][j] = values[i][j] + eps;
            double up = loss_at(bumped);
            bumped[i][j] = values[i][j] - eps;
            double down = loss_at(bumped);
            double fd = (up - down) / (2.0 * eps);
            res.max_rel_err = std::max(res.max_rel_err, rel_err(tape_grads[i][j], fd));
            res.checked += 1;
        }
    }
    return res;
}

}  // namespace testutil
