#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "bapm/tensor.hpp"

namespace testing {

inline bapm::Tensor random_tensor(bapm::Shape shape, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  bapm::Tensor t(std::move(shape));
  std::uniform_real_distribution<float> d(lo, hi);
  for (float& v : t.data()) v = d(rng);
  return t;
}

/// Values in [-hi, -lo] ∪ [lo, hi], away from the kink at zero.
inline bapm::Tensor away_from_zero(bapm::Shape shape, std::mt19937_64& rng, float lo = 0.1f, float hi = 1.0f) {
  bapm::Tensor t(std::move(shape));
  std::uniform_real_distribution<float> d(lo, hi);
  std::bernoulli_distribution sign(0.5);
  for (float& v : t.data()) v = sign(rng) ? d(rng) : -d(rng);
  return t;
}

struct GradCheck {
  double worst = 0.0;         ///< largest per-tensor relative error
  std::string worst_name;
  std::size_t checked = 0;    ///< entries compared
};

/// Central differences with h = 1e-2 * max(1, |theta|) against the tape gradient.
/// `loss` must rebuild the graph from the current values of `params`.
/// The error of one tensor is ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// over the sampled entries (all entries when `per_tensor` is 0).
inline GradCheck check_gradients(const std::function<bapm::Tensor()>& loss, std::vector<bapm::Tensor> params,
                                 std::vector<std::string> names = {}, std::size_t per_tensor = 0,
                                 std::uint64_t seed = 1, double step = 1e-2) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.clear_grad();
  }
  bapm::backward(loss());
  GradCheck out;
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t];
    std::vector<std::size_t> idx(p.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (per_tensor && idx.size() > per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(per_tensor);
    }
    std::vector<float> analytic(p.numel(), 0.0f);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i : idx) {
      bapm::NoGradGuard guard;
      const float old = p.data()[i];
      const double h = step * std::max(1.0, std::abs(static_cast<double>(old)));
      const float up = static_cast<float>(old + h), down = static_cast<float>(old - h);
      p.data()[i] = up;
      const double fp = loss().item();
      p.data()[i] = down;
      const double fm = loss().item();
      p.data()[i] = old;
      const double numeric = (fp - fm) / (static_cast<double>(up) - down);
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
      a2 += static_cast<double>(analytic[i]) * analytic[i];
      n2 += numeric * numeric;
      ++out.checked;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    const double rel = std::sqrt(diff2) / denom;
    if (rel > out.worst) {
      out.worst = rel;
      out.worst_name = t < names.size() ? names[t] : std::to_string(t);
    }
  }
  return out;
}

/// Per-tensor directional check for deep float graphs, where single-entry differences drown in noise.
/// Each tensor moves along its own unit analytic gradient g/|g|. The slope comes from central
/// differences at t = step and t/2 combined by Richardson extrapolation.
/// The reported error is |slope - |g|| / (rtol * max(|slope|, |g|) + noise) scaled so that 1e-3 is
/// the pass line. `noise` is the float resolution of the extrapolated slope.
/// A tensor with |g| below `zero_floor` moves along a random direction and its expected slope is 0.
inline GradCheck check_directional(const std::function<bapm::Tensor()>& loss, std::vector<bapm::Tensor> params,
                                   std::vector<std::string> names = {}, double step = 1e-3, double rtol = 1e-3,
                                   double zero_floor = 1e-6, std::uint64_t seed = 1) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.clear_grad();
  }
  const bapm::Tensor l0 = loss();
  const double base = std::abs(l0.item());
  bapm::backward(l0);
  GradCheck out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t];
    const std::size_t n = p.numel();
    std::vector<double> dir(n, 0.0);
    double gnorm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double g = p.has_grad() ? p.grad()[i] : 0.0;
      dir[i] = g;
      gnorm += g * g;
    }
    gnorm = std::sqrt(gnorm);
    const bool zero = gnorm < zero_floor;
    if (zero) {
      gnorm = 0.0;
      for (auto& d : dir) d = normal(rng);
    }
    double dnorm = 0.0;
    for (double d : dir) dnorm += d * d;
    dnorm = std::sqrt(dnorm);
    for (auto& d : dir) d /= dnorm;
    const std::vector<float> old(p.data().begin(), p.data().end());
    auto at = [&](double s) {
      bapm::NoGradGuard guard;
      for (std::size_t i = 0; i < n; ++i) p.data()[i] = static_cast<float>(old[i] + s * dir[i]);
      const double v = loss().item();
      std::copy(old.begin(), old.end(), p.data().begin());
      return v;
    };
    const double coarse = (at(step) - at(-step)) / (2 * step);
    const double fine = (at(step / 2) - at(-step / 2)) / step;
    const double numeric = (4 * fine - coarse) / 3;
    // 8 ulp per loss evaluation, carried through both quotients and the extrapolation weights.
    const double noise = 8 * std::numeric_limits<float>::epsilon() * std::max(base, 1.0) / step * (10.0 / 3.0);
    const double err = 1e-3 * std::abs(numeric - gnorm) / (rtol * std::max(std::abs(numeric), gnorm) + noise);
    out.checked += n;
    if (err > out.worst) {
      out.worst = err;
      out.worst_name = t < names.size() ? names[t] : std::to_string(t);
    }
  }
  return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("bapm_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
