#include "bapm/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bapm/rng.hpp"

namespace bapm {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 rotation_matrix(const std::array<double, 3>& angles) {
  const double cx = std::cos(angles[0]), sx = std::sin(angles[0]);
  const double cy = std::cos(angles[1]), sy = std::sin(angles[1]);
  const double cz = std::cos(angles[2]), sz = std::sin(angles[2]);
  const Mat3 rx{{{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}}};
  const Mat3 ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
  const Mat3 rz{{{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}}};
  auto mul = [](const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
    return c;
  };
  return mul(rz, mul(ry, rx));
}

// Inverse of p -> R S (p - c) + c + t.
struct InverseMap {
  Mat3 rot;
  std::array<double, 3> scale, center, translation;

  InverseMap(const AffineParams& p, const Dims& dims)
      : rot(rotation_matrix(p.rotation)), scale(p.scale), translation(p.translation) {
    for (int a = 0; a < 3; ++a) {
      if (!(scale[a] > 0.0)) throw std::invalid_argument("affine scale must be positive");
      center[a] = (dims[a] - 1) / 2.0;
    }
  }

  std::array<double, 3> operator()(int i, int j, int k) const {
    const std::array<double, 3> v{i - center[0] - translation[0], j - center[1] - translation[1],
                                  k - center[2] - translation[2]};
    std::array<double, 3> q{};
    for (int a = 0; a < 3; ++a) {
      q[a] = (rot[0][a] * v[0] + rot[1][a] * v[1] + rot[2][a] * v[2]) / scale[a] + center[a];
    }
    return q;
  }
};

template <class T>
T fetch(const Image<T>& v, int i, int j, int k, Boundary b) {
  const Dims& d = v.dims();
  if (b == Boundary::Replicate) {
    i = std::clamp(i, 0, d[0] - 1);
    j = std::clamp(j, 0, d[1] - 1);
    k = std::clamp(k, 0, d[2] - 1);
  } else if (!v.grid.contains(i, j, k)) {
    return T{};
  }
  return v.at(i, j, k);
}

inline float lerp(float a, float b, float t) { return a + (b - a) * t; }

float sample_trilinear(const Volume& v, const std::array<double, 3>& p, Boundary b) {
  const Dims& d = v.dims();
  if (b == Boundary::Zero) {
    for (int a = 0; a < 3; ++a)
      if (p[a] <= -1.0 || p[a] >= d[a]) return 0.0f;
  }
  const int x0 = static_cast<int>(std::floor(p[0]));
  const int y0 = static_cast<int>(std::floor(p[1]));
  const int z0 = static_cast<int>(std::floor(p[2]));
  const auto fx = static_cast<float>(p[0] - x0);
  const auto fy = static_cast<float>(p[1] - y0);
  const auto fz = static_cast<float>(p[2] - z0);
  const float c00 = lerp(fetch(v, x0, y0, z0, b), fetch(v, x0 + 1, y0, z0, b), fx);
  const float c10 = lerp(fetch(v, x0, y0 + 1, z0, b), fetch(v, x0 + 1, y0 + 1, z0, b), fx);
  const float c01 = lerp(fetch(v, x0, y0, z0 + 1, b), fetch(v, x0 + 1, y0, z0 + 1, b), fx);
  const float c11 = lerp(fetch(v, x0, y0 + 1, z0 + 1, b), fetch(v, x0 + 1, y0 + 1, z0 + 1, b), fx);
  return lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz);
}

template <class T>
T sample_nearest(const Image<T>& v, const std::array<double, 3>& p, Boundary b) {
  return fetch(v, static_cast<int>(std::floor(p[0] + 0.5)), static_cast<int>(std::floor(p[1] + 0.5)),
               static_cast<int>(std::floor(p[2] + 0.5)), b);
}

template <class T, class Sampler>
Image<T> resample(const Image<T>& src, const AffineParams& params, Sampler sampler) {
  const InverseMap inv(params, src.dims());
  Image<T> out(src.grid);
  const Dims& d = src.dims();
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) out.at(i, j, k) = sampler(inv(i, j, k));
  return out;
}

constexpr double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

Volume apply_affine(const Volume& volume, const AffineParams& params, Interpolation interp, Boundary boundary) {
  if (interp == Interpolation::Nearest) {
    return resample(volume, params, [&](const auto& p) { return sample_nearest(volume, p, boundary); });
  }
  return resample(volume, params, [&](const auto& p) { return sample_trilinear(volume, p, boundary); });
}

LabelVolume apply_affine(const LabelVolume& labels, const AffineParams& params, Interpolation interp) {
  if (interp != Interpolation::Nearest) {
    throw std::invalid_argument("label volumes can only be resampled with nearest interpolation");
  }
  return resample(labels, params, [&](const auto& p) { return sample_nearest(labels, p, Boundary::Zero); });
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[i + radius];
  }
  for (auto& w : k) w /= total;
  return k;
}

Volume gaussian_blur(const Volume& volume, const std::array<double, 3>& sigma) {
  Volume cur = volume;
  const Dims& d = volume.dims();
  for (int axis = 0; axis < 3; ++axis) {
    if (!(sigma[axis] > 0.0)) continue;
    const auto kernel = gaussian_kernel(sigma[axis]);
    const int radius = static_cast<int>(kernel.size() / 2);
    Volume next(cur.grid);
    for (int k = 0; k < d[2]; ++k)
      for (int j = 0; j < d[1]; ++j)
        for (int i = 0; i < d[0]; ++i) {
          double acc = 0.0;
          for (int t = -radius; t <= radius; ++t) {
            std::array<int, 3> q{i, j, k};
            q[axis] = std::clamp(q[axis] + t, 0, d[axis] - 1);
            acc += kernel[t + radius] * cur.at(q[0], q[1], q[2]);
          }
          next.at(i, j, k) = static_cast<float>(acc);
        }
    cur = std::move(next);
  }
  return cur;
}

Volume add_gaussian_noise(const Volume& volume, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("noise sigma must be non-negative");
  Volume out = volume;
  if (sigma == 0.0) return out;
  Rng rng = make_rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& v : out.data) v = static_cast<float>(v + noise(rng));
  return out;
}

std::vector<std::array<int, 3>> bias_monomials(int order) {
  if (order < 0) throw std::invalid_argument("bias field order must be non-negative");
  std::vector<std::array<int, 3>> out;
  for (int deg = 0; deg <= order; ++deg)
    for (int a = deg; a >= 0; --a)
      for (int b = deg - a; b >= 0; --b) out.push_back({a, b, deg - a - b});
  return out;
}

Volume apply_bias_field(const Volume& volume, std::span<const double> coefficients, int order) {
  const auto monomials = bias_monomials(order);
  if (coefficients.size() != monomials.size()) {
    throw std::invalid_argument("bias field of order " + std::to_string(order) + " needs " +
                                std::to_string(monomials.size()) + " coefficients, got " +
                                std::to_string(coefficients.size()));
  }
  const Dims& d = volume.dims();
  auto norm = [](int i, int n) { return n > 1 ? 2.0 * i / (n - 1) - 1.0 : 0.0; };
  Volume out = volume;
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        const double u = norm(i, d[0]), v = norm(j, d[1]), w = norm(k, d[2]);
        double poly = 0.0;
        for (std::size_t m = 0; m < monomials.size(); ++m) {
          if (coefficients[m] == 0.0) continue;
          poly += coefficients[m] * std::pow(u, monomials[m][0]) * std::pow(v, monomials[m][1]) *
                  std::pow(w, monomials[m][2]);
        }
        out.at(i, j, k) = static_cast<float>(volume.at(i, j, k) * std::exp(poly));
      }
  return out;
}

std::size_t dominant_movement(std::size_t movements, std::span<const double> weights) {
  if (weights.empty()) return 0;
  if (weights.size() != movements + 1) {
    throw std::invalid_argument("motion needs one weight for the original plus one per movement");
  }
  return static_cast<std::size_t>(std::max_element(weights.begin(), weights.end()) - weights.begin());
}

Volume apply_motion(const Volume& volume, std::span<const Movement> movements, std::span<const double> weights) {
  std::vector<double> w(weights.begin(), weights.end());
  if (w.empty()) w.assign(movements.size() + 1, 1.0 / static_cast<double>(movements.size() + 1));
  if (w.size() != movements.size() + 1) {
    throw std::invalid_argument("motion needs one weight for the original plus one per movement");
  }
  double total = 0.0;
  for (double x : w) {
    if (x < 0.0) throw std::invalid_argument("motion weights must be non-negative");
    total += x;
  }
  if (!(total > 0.0)) throw std::invalid_argument("motion weights must not all be zero");

  // Running weighted mean keeps constant volumes exactly constant.
  Volume acc = volume;
  double seen = w[0];
  for (std::size_t m = 0; m < movements.size(); ++m) {
    if (w[m + 1] == 0.0) continue;
    AffineParams p;
    p.rotation = movements[m].rotation;
    p.translation = movements[m].translation;
    const Volume copy = apply_affine(volume, p, Interpolation::Trilinear, Boundary::Replicate);
    if (seen == 0.0) {
      acc = copy;
    } else {
      const auto f = static_cast<float>(w[m + 1] / (seen + w[m + 1]));
      for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += (copy.data[i] - acc.data[i]) * f;
    }
    seen += w[m + 1];
  }
  return acc;
}

void AugmentConfig::validate() const {
  for (double p : {affine_prob, blur_prob, noise_prob, bias_prob, motion_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("augment probabilities must lie in [0, 1]");
  }
  for (double v : {rotation_deg, scale_min, scale_max, translation, blur_sigma_max, noise_sigma_max,
                   bias_coeff_max, motion_rotation_deg, motion_translation}) {
    if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("augment ranges must be finite and non-negative");
  }
  if (!(scale_min > 0.0 && scale_min <= scale_max)) throw std::invalid_argument("augment scale range invalid");
  if (bias_order < 0 || bias_order > 6) throw std::invalid_argument("augment bias order must lie in [0, 6]");
  if (motion_max_movements < 1) throw std::invalid_argument("augment motion needs at least one movement");
}

namespace {

AffineParams draw_affine_from(const AugmentConfig& c, Rng& rng) {
  AffineParams p;
  for (auto& r : p.rotation) r = deg2rad(uniform(rng, -c.rotation_deg, c.rotation_deg));
  for (auto& s : p.scale) s = uniform(rng, c.scale_min, c.scale_max);
  for (auto& t : p.translation) t = uniform(rng, -c.translation, c.translation);
  return p;
}

}  // namespace

AffineParams draw_affine(const AugmentConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = make_rng(seed);
  return draw_affine_from(config, rng);
}

AugmentResult sample_and_apply(const Volume& volume, const LabelVolume* labels, const AugmentConfig& config,
                               std::uint64_t seed) {
  config.validate();
  AugmentResult out{volume, labels ? std::optional<LabelVolume>(*labels) : std::nullopt, volume};
  if (!config.enabled) return out;

  // Every parameter is drawn whether or not its transform fires, so toggling
  // one transform never changes the draws of the others.
  Rng rng = make_rng(seed);
  auto coin = [&](double p) { return uniform(rng, 0.0, 1.0) < p; };

  const bool do_affine = coin(config.affine_prob);
  const AffineParams affine = draw_affine_from(config, rng);

  const bool do_blur = coin(config.blur_prob);
  std::array<double, 3> sigma{};
  for (auto& s : sigma) s = uniform(rng, 0.0, config.blur_sigma_max);

  const bool do_noise = coin(config.noise_prob);
  const double noise_fraction = uniform(rng, 0.0, config.noise_sigma_max);
  const std::uint64_t noise_seed = rng();

  const bool do_bias = coin(config.bias_prob);
  std::vector<double> coeffs(bias_monomials(config.bias_order).size());
  for (auto& c : coeffs) c = uniform(rng, -config.bias_coeff_max, config.bias_coeff_max);

  const bool do_motion = coin(config.motion_prob);
  const int n_moves = std::uniform_int_distribution<int>(1, config.motion_max_movements)(rng);
  std::vector<Movement> moves(static_cast<std::size_t>(config.motion_max_movements));
  for (auto& m : moves) {
    for (auto& r : m.rotation) r = deg2rad(uniform(rng, -config.motion_rotation_deg, config.motion_rotation_deg));
    for (auto& t : m.translation) t = uniform(rng, -config.motion_translation, config.motion_translation);
  }
  moves.resize(static_cast<std::size_t>(n_moves));

  if (do_affine) {
    out.image = apply_affine(volume, affine, Interpolation::Trilinear);
    if (out.labels) out.labels = apply_affine(*out.labels, affine, Interpolation::Nearest);
    out.clean = out.image;
  }
  if (do_blur) out.image = gaussian_blur(out.image, sigma);
  if (do_noise) {
    const auto [lo, hi] = std::minmax_element(out.clean.data.begin(), out.clean.data.end());
    out.image = add_gaussian_noise(out.image, noise_fraction * (*hi - *lo), noise_seed);
  }
  if (do_bias) out.image = apply_bias_field(out.image, coeffs, config.bias_order);
  // Uniform weights make the original the dominant copy, so labels and the
  // clean target are not moved by motion.
  if (do_motion) out.image = apply_motion(out.image, moves);
  return out;
}

}  // namespace bapm
