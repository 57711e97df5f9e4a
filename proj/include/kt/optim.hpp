#ifndef KT_OPTIM_HPP
#define KT_OPTIM_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kt/error.hpp"
#include "kt/tensor.hpp"

namespace kt {

struct NamedParam {
    std::string name;
    Tensor tensor;
};

/// Ordered collection of learnable leaf tensors. Copies share storage.
class ParamSet {
public:
    void add(std::string name, Tensor t) { params_.push_back({std::move(name), std::move(t)}); }

    std::size_t size() const noexcept { return params_.size(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    const NamedParam& operator[](std::size_t i) const { return params_[i]; }

    const Tensor& get(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name) return p.tensor;
        throw ValidationError("no parameter named '" + name + "'");
    }

    /// Total number of scalar parameters.
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.tensor.size();
        return n;
    }

    void zero_grad() const {
        for (const auto& p : params_) {
            Tensor t = p.tensor;
            t.zero_grad();
        }
    }

    /// Grad views, allocating zero buffers where a parameter had none.
    std::vector<std::span<double>> grads() const {
        std::vector<std::span<double>> out;
        out.reserve(params_.size());
        for (const auto& p : params_) {
            Tensor t = p.tensor;
            out.push_back(t.mutable_grad());
        }
        return out;
    }

    /// Deep copy of every value array, in order.
    std::vector<std::vector<double>> snapshot() const {
        std::vector<std::vector<double>> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
        return out;
    }

    void restore(const std::vector<std::vector<double>>& values) const {
        if (values.size() != params_.size()) throw DimensionError("restore: parameter count mismatch");
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor t = params_[i].tensor;
            if (values[i].size() != t.size()) throw DimensionError("restore: size mismatch for " + params_[i].name);
            std::copy(values[i].begin(), values[i].end(), t.mutable_values().begin());
        }
    }

private:
    std::vector<NamedParam> params_;
};

inline double global_norm(std::span<const std::span<double>> grads) {
    double sq = 0.0;
    for (const auto& g : grads)
        for (double v : g) sq += v * v;
    return std::sqrt(sq);
}

/// Rescales all gradients jointly so their global L2 norm is at most
/// `threshold`. Returns the factor applied (1 when already within bound).
inline double clip_global_norm(std::span<const std::span<double>> grads, double threshold) {
    if (!(threshold > 0.0)) throw ValidationError("clip_global_norm: threshold must be positive");
    const double norm = global_norm(grads);
    if (!(norm > threshold)) return 1.0;
    const double factor = threshold / norm;
    for (const auto& g : grads)
        for (double& v : g) v *= factor;
    return factor;
}

inline double clip_global_norm(const ParamSet& params, double threshold) {
    auto g = params.grads();
    return clip_global_norm(std::span<const std::span<double>>(g), threshold);
}

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t step_count = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    explicit AdamState(const ParamSet& params) {
        for (const auto& p : params) {
            m.emplace_back(p.tensor.size(), 0.0);
            v.emplace_back(p.tensor.size(), 0.0);
        }
    }
};

/// One bias-corrected Adam update over every parameter, then zeroes grads.
inline void adam_step(const ParamSet& params, AdamState& state, double lr) {
    if (state.m.size() != params.size()) throw DimensionError("adam_step: state does not match parameters");
    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor p = params[i].tensor;
        auto values = p.mutable_values();
        auto grad = p.mutable_grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double g = grad[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            values[j] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
            grad[j] = 0.0;
        }
    }
}

}  // namespace kt

#endif  // KT_OPTIM_HPP
