#include "bapm/optim.hpp"

#include <cmath>

namespace bapm {

void Adam::step(ParameterStore& params) { step(params, options_.lr); }

void Adam::step(ParameterStore& params, float lr) {
  ++step_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(options_.beta1), static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(options_.beta2), static_cast<double>(step_));
  for (auto& p : params.entries()) {
    if (p.frozen || !p.value.has_grad()) continue;
    auto& st = state_[p.name];
    const std::size_t n = p.value.numel();
    if (st.m.size() != n) {
      st.m.assign(n, 0.0f);
      st.v.assign(n, 0.0f);
    }
    auto theta = p.value.data();
    auto g = p.value.grad();
    for (std::size_t i = 0; i < n; ++i) {
      st.m[i] = options_.beta1 * st.m[i] + (1.0f - options_.beta1) * g[i];
      st.v[i] = options_.beta2 * st.v[i] + (1.0f - options_.beta2) * g[i] * g[i];
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      theta[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + options_.eps));
    }
  }
}

}  // namespace bapm
