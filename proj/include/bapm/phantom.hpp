#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "bapm/volume.hpp"

namespace bapm {

struct TissueIntensity {
  double mean = 0.0;
  double std = 0.0;
};

/// Generative parameters of a synthetic head. Semi-axes are fractions of the
/// volume dims; the grey-matter shell is `gm_thickness` (fraction of dims)
/// wide around the white-matter core, shrunk by `atrophy_delta` for class 1.
struct PhantomSpec {
  Dims dims{32, 32, 32};
  std::array<double, 3> head{0.48, 0.48, 0.48};
  std::array<double, 3> white_matter{0.29, 0.29, 0.29};
  double gm_thickness = 0.13;
  std::array<double, 3> ventricles{0.12, 0.07, 0.09};
  int atrophy_class = 0;
  double atrophy_delta = 0.3;

  TissueIntensity csf{0.25, 0.03};
  TissueIntensity gm{0.5, 0.03};
  TissueIntensity wm{0.8, 0.03};
  TissueIntensity background{0.02, 0.01};

  double deformation_amplitude = 1.5;  ///< voxels, summed over all components
  double shape_jitter = 0.04;          ///< relative per-axis semi-axis spread
  double center_jitter = 1.0;          ///< voxels

  double thickness() const { return gm_thickness * (atrophy_class == 1 ? 1.0 - atrophy_delta : 1.0); }
  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;
};

struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> semi_axes{};
  bool contains(const std::array<double, 3>& p) const;
};

/// One low-frequency sinusoidal displacement: amplitude * direction *
/// sin(2*pi * <frequency, p / dims> + phase).
struct DisplacementWave {
  std::array<double, 3> direction{};
  std::array<double, 3> frequency{};
  double amplitude = 0.0;
  double phase = 0.0;
};

/// The geometry actually realised for one sample (after jitter).
struct PhantomGeometry {
  Ellipsoid head, gm_outer, white_matter, ventricles;
  std::vector<DisplacementWave> waves;

  std::array<double, 3> displace(const std::array<double, 3>& p, const Dims& dims) const;
  /// Label of the undeformed point.
  Tissue tissue_at(const std::array<double, 3>& p) const;
};

struct PhantomSample {
  Volume intensity;
  LabelVolume labels;
  int class_label = 0;
  PhantomSpec spec;
  PhantomGeometry geometry;
  std::uint64_t seed = 0;
};

/// Deterministic per (spec, seed).
PhantomSample generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

/// Sample i has class i % 2 and seed `seed ^ i`; 2 * n_per_class samples.
std::vector<PhantomSample> generate_dataset(std::size_t n_per_class, const PhantomSpec& base,
                                            std::uint64_t seed);
/// As generate_dataset for an arbitrary (possibly odd) count.
std::vector<PhantomSample> generate_samples(std::size_t count, const PhantomSpec& base, std::uint64_t seed);

std::size_t count_label(const LabelVolume& labels, Tissue tissue);

}  // namespace bapm
