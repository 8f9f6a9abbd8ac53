#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bapm/volume.hpp"

namespace bapm {

enum class Interpolation { Trilinear, Nearest };
/// How samples outside the grid are read: as zero, or from the nearest edge voxel.
enum class Boundary { Zero, Replicate };

/// Rotation (radians, about x then y then z through the volume centre),
/// per-axis scale and translation in voxels. Maps p to R*S*(p - c) + c + t.
struct AffineParams {
  std::array<double, 3> rotation{0.0, 0.0, 0.0};
  std::array<double, 3> scale{1.0, 1.0, 1.0};
  std::array<double, 3> translation{0.0, 0.0, 0.0};
};

/// Resamples by inverse mapping. Label volumes only accept Nearest.
Volume apply_affine(const Volume& volume, const AffineParams& params,
                    Interpolation interp = Interpolation::Trilinear, Boundary boundary = Boundary::Zero);
LabelVolume apply_affine(const LabelVolume& labels, const AffineParams& params,
                         Interpolation interp = Interpolation::Nearest);

/// Separable Gaussian, radius ceil(3 sigma), taps renormalised to sum 1,
/// edge-replicating. A zero sigma leaves that axis untouched.
Volume gaussian_blur(const Volume& volume, const std::array<double, 3>& sigma);
std::vector<double> gaussian_kernel(double sigma);

/// Adds i.i.d. N(0, sigma^2) noise. Not clamped.
Volume add_gaussian_noise(const Volume& volume, double sigma, std::uint64_t seed);

/// Exponents (a, b, c) of every monomial u^a v^b w^c with a + b + c <= order,
/// by total degree then descending a, then descending b.
std::vector<std::array<int, 3>> bias_monomials(int order);
/// Multiplies by exp(P(u, v, w)), coordinates normalised to [-1, 1].
Volume apply_bias_field(const Volume& volume, std::span<const double> coefficients, int order);

struct Movement {
  std::array<double, 3> rotation{0.0, 0.0, 0.0};  ///< radians
  std::array<double, 3> translation{0.0, 0.0, 0.0};
};

/// Weighted average of the original (weights[0]) and one rigid copy per
/// movement (weights[k + 1]). Empty weights means uniform. Copies replicate
/// edges so constant volumes stay constant.
Volume apply_motion(const Volume& volume, std::span<const Movement> movements,
                    std::span<const double> weights = {});
/// Index into [original, movements...] of the largest weight (first on ties).
std::size_t dominant_movement(std::size_t movements, std::span<const double> weights);

struct AugmentConfig {
  bool enabled = true;

  double affine_prob = 0.5;
  double rotation_deg = 10.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double translation = 5.0;

  double blur_prob = 0.5;
  double blur_sigma_max = 2.0;

  double noise_prob = 0.5;
  double noise_sigma_max = 0.05;  ///< fraction of the intensity range

  double bias_prob = 0.5;
  int bias_order = 3;
  double bias_coeff_max = 0.3;

  double motion_prob = 0.5;
  int motion_max_movements = 3;
  double motion_rotation_deg = 5.0;
  double motion_translation = 3.0;

  void validate() const;
};

struct AugmentResult {
  Volume image;                       ///< fully corrupted input
  std::optional<LabelVolume> labels;  ///< spatially transformed labels
  Volume clean;                       ///< spatial transforms only
};

/// Draws on/off and parameters for affine, blur, noise, bias and motion in
/// that order from a generator seeded by `seed`, then applies them.
AugmentResult sample_and_apply(const Volume& volume, const LabelVolume* labels,
                               const AugmentConfig& config, std::uint64_t seed);

/// A random affine drawn from the config ranges, always applied.
AffineParams draw_affine(const AugmentConfig& config, std::uint64_t seed);

}  // namespace bapm
