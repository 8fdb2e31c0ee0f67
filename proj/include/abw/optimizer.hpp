#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "abw/common.hpp"
#include "abw/tensor.hpp"

namespace abw {

using GradMap = std::map<int, Tensor>;

// Named parameter tensors with stable integer ids (registration order).
struct ParamStore {
    std::vector<Tensor> tensors;
    std::vector<std::string> names;

    int add(std::string name, Tensor t) {
        tensors.push_back(std::move(t));
        names.push_back(std::move(name));
        return static_cast<int>(tensors.size()) - 1;
    }
    std::size_t size() const { return tensors.size(); }
};

inline double global_grad_norm(const GradMap& grads) {
    double ss = 0.0;
    for (const auto& [id, g] : grads)
        for (double x : g.data) ss += x * x;
    return std::sqrt(ss);
}

// Scales every gradient by max_norm/||g|| when the global L2 norm exceeds
// max_norm; identity otherwise (including the empty map).
inline GradMap clip_global_norm(GradMap grads, double max_norm) {
    require(max_norm > 0.0, "clip_global_norm: max_norm must be positive");
    double norm = global_grad_norm(grads);
    if (norm <= max_norm) return grads;
    double s = max_norm / norm;
    for (auto& [id, g] : grads)
        for (double& x : g.data) x *= s;
    return grads;
}

// Linear warmup from initial_rate to warmup_target over warmup_steps, then
// cosine decay down to alpha * warmup_target at total_decay_steps; constant
// at the floor afterwards.
struct LrSchedule {
    double initial_rate = 2.5e-4;
    double warmup_target = 5.0e-4;
    double alpha = 0.0;
    long total_decay_steps = 0;
    long warmup_steps = 0;

    static LrSchedule cosine(double initial, double target, double alpha_floor, long total_steps,
                             long warmup = -1) {
        LrSchedule s;
        s.initial_rate = initial;
        s.warmup_target = target;
        s.alpha = alpha_floor;
        s.total_decay_steps = total_steps;
        s.warmup_steps = warmup >= 0 ? warmup : total_steps / 20;  // 5% ramp
        return s;
    }

    double rate(long step) const {
        require(step >= 0, "LrSchedule: negative step");
        if (warmup_steps > 0 && step < warmup_steps) {
            double f = static_cast<double>(step) / static_cast<double>(warmup_steps);
            return initial_rate + (warmup_target - initial_rate) * f;
        }
        long decay_span = total_decay_steps - warmup_steps;
        double progress = decay_span > 0
                              ? static_cast<double>(step - warmup_steps) / static_cast<double>(decay_span)
                              : 1.0;
        if (progress > 1.0) progress = 1.0;
        double cosine_part = 0.5 * (1.0 + std::cos(M_PI * progress));
        return warmup_target * (alpha + (1.0 - alpha) * cosine_part);
    }
};

// AdamW: decoupled weight decay applied directly to the parameters, never
// folded into the moment estimates.
struct OptimizerState {
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    long step_count = 0;
    double weight_decay = 1.0e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1.0e-8;

    explicit OptimizerState(const ParamStore& params, double decay = 1.0e-3)
        : weight_decay(decay) {
        for (const auto& t : params.tensors) {
            first_moment.emplace_back(t.shape, 0.0);
            second_moment.emplace_back(t.shape, 0.0);
        }
    }
};

inline void optimizer_step(ParamStore& params, const GradMap& grads, OptimizerState& state,
                           double lr) {
    require(lr > 0.0, "optimizer_step: lr must be positive");
    state.step_count += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (std::size_t id = 0; id < params.size(); ++id) {
        Tensor& p = params.tensors[id];
        if (state.weight_decay != 0.0)
            for (double& x : p.data) x -= lr * state.weight_decay * x;
        auto it = grads.find(static_cast<int>(id));
        if (it == grads.end()) continue;
        const Tensor& g = it->second;
        require(g.same_shape(p), "optimizer_step: gradient shape mismatch for " +
                                     params.names[id]);
        Tensor& m = state.first_moment[id];
        Tensor& v = state.second_moment[id];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

}  // namespace abw
