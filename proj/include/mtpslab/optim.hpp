#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mtpslab/errors.hpp"
#include "mtpslab/tensor.hpp"

namespace mtpslab {

/// Adaptive-moment optimizer state. Moment buffers are laid out parallel to
/// the parameter registry they were initialized from; t counts completed
/// steps. The learning rate is supplied per step by the caller (the schedule
/// lives in the trainer).
template <typename T>
struct AdamState {
  struct Slot {
    std::vector<T> m, v;
  };
  std::vector<Slot> slots;
  int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (applied directly to the weights)

  void init(const std::vector<std::pair<std::string, Tensor<T>>>& params) {
    slots.clear();
    slots.reserve(params.size());
    for (const auto& [name, p] : params) {
      (void)name;
      Slot s;
      s.m.assign(p.data().size(), T(0));
      s.v.assign(p.data().size(), T(0));
      slots.push_back(std::move(s));
    }
    t = 0;
  }
};

/// One bias-corrected update over the registry. Parameters that received no
/// gradient this step are left untouched. Deterministic given identical
/// inputs; NaN gradients abort with the parameter's name.
template <typename T>
void adam_step(AdamState<T>& state,
               std::vector<std::pair<std::string, Tensor<T>>>& params,
               double lr) {
  if (state.slots.size() != params.size()) {
    throw ContractError("adam_step: state initialized for " +
                        std::to_string(state.slots.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& [name, p] = params[pi];
    if (!p.has_grad()) continue;
    auto& g = p.grad();
    auto& slot = state.slots[pi];
    if (slot.m.size() != g.size()) {
      throw ContractError("adam_step: moment shape mismatch for " + name);
    }
    T* w = p.ptr();
    for (size_t i = 0; i < g.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      if (!std::isfinite(gi)) {
        throw NumericError("adam_step: non-finite gradient in parameter " +
                           name);
      }
      const double m = state.beta1 * static_cast<double>(slot.m[i]) +
                       (1.0 - state.beta1) * gi;
      const double v = state.beta2 * static_cast<double>(slot.v[i]) +
                       (1.0 - state.beta2) * gi * gi;
      slot.m[i] = static_cast<T>(m);
      slot.v[i] = static_cast<T>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      const double wi = static_cast<double>(w[i]);
      w[i] = static_cast<T>(wi - lr * (mhat / (std::sqrt(vhat) + state.eps) +
                                       state.weight_decay * wi));
    }
  }
}

}  // namespace mtpslab
