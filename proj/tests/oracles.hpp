#ifndef KT_TESTS_ORACLES_HPP
#define KT_TESTS_ORACLES_HPP

// Test-only reference computations. Nothing here calls into the
// implementation paths it is used to check, except to evaluate a forward
// loss value for finite differences.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "kt/rng.hpp"
#include "kt/tensor.hpp"

namespace kt::oracle {

/// |a - n| / max(|a|, |n|, floor). The floor keeps exact zeros from
/// blowing up the ratio when both sides vanish.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
    return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

/// Central difference of `loss` with respect to entry `index` of `param`.
inline double central_difference(Tensor param, std::size_t index, const std::function<double()>& loss, double h = 1e-5) {
    auto values = param.mutable_values();
    const double saved = values[index];
    values[index] = saved + h;
    const double up = loss();
    values[index] = saved - h;
    const double down = loss();
    values[index] = saved;
    return (up - down) / (2.0 * h);
}

struct GradCheck {
    std::size_t checked = 0;
    double worst = 0.0;
};

/// Builds the graph with `build`, runs backward, then compares every entry
/// of every leaf (or `samples` random entries when nonzero) with central
/// differences.
inline GradCheck check_gradients(const std::vector<Tensor>& leaves, const std::function<Tensor()>& build,
                                 std::size_t samples = 0, std::uint64_t seed = 7, double h = 1e-5) {
    for (auto leaf : leaves) leaf.mutable_grad();
    for (auto leaf : leaves) leaf.zero_grad();
    backward(build());
    std::vector<std::pair<std::size_t, std::size_t>> entries;
    for (std::size_t l = 0; l < leaves.size(); ++l)
        for (std::size_t i = 0; i < leaves[l].size(); ++i) entries.emplace_back(l, i);
    if (samples && samples < entries.size()) {
        Rng rng(seed, 99);
        rng.shuffle(entries);
        entries.resize(samples);
    }
    const auto loss = [&] {
        NoGradGuard guard;
        return build().item();
    };
    GradCheck out;
    for (auto [l, i] : entries) {
        const double analytic = leaves[l].grad()[i];
        const double numeric = central_difference(leaves[l], i, loss, h);
        out.worst = std::max(out.worst, relative_error(analytic, numeric));
        ++out.checked;
    }
    return out;
}

inline Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0, bool grad = true) {
    std::vector<double> v(rows * cols);
    for (double& x : v) x = rng.normal(0.0, scale);
    return Tensor::from(rows, cols, std::move(v), grad);
}

/// Weighted sum of all entries with fixed random weights: a generic scalar
/// head that exercises every output entry with a distinct cotangent.
inline Tensor random_projection(const Tensor& x, std::uint64_t seed) {
    Rng rng(seed, 5);
    Tensor w = random_tensor(rng, x.rows(), x.cols(), 1.0, false);
    return sum(mul(x, w));
}

}  // namespace kt::oracle

#endif  // KT_TESTS_ORACLES_HPP
