#include <cmath>

#include <fmt/format.h>

#include "compad/training.hpp"

namespace compad {

void optimizer_step(const NamedParams& params, std::span<const Tensor> grads, AdamState& state,
                    double lr, const AdamOptions& o) {
  if (grads.size() != params.size()) {
    throw DimensionError(fmt::format("optimizer_step: {} gradients for {} parameters",
                                     grads.size(), params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].shape() != params[k].second->shape()) {
      throw DimensionError(fmt::format("optimizer_step: gradient {} for parameter '{}' of shape {}",
                                       shape_string(grads[k].shape()), params[k].first,
                                       shape_string(params[k].second->shape())));
    }
    if (!grads[k].all_finite()) {
      throw NumericError(fmt::format("non-finite gradient for parameter '{}'", params[k].first));
    }
  }
  if (state.m.empty()) {
    for (const auto& [name, t] : params) {
      state.m.emplace_back(t->shape());
      state.v.emplace_back(t->shape());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto theta = params[k].second->data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    const auto g = grads[k].data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

}  // namespace compad
