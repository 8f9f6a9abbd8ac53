#include "bapm/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "bapm/rng.hpp"

namespace bapm {

void PhantomSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] <= 0 || dims[a] % 16 != 0) {
      throw std::invalid_argument("phantom dims must be positive multiples of 16");
    }
    const double gm_outer = white_matter[a] + gm_thickness;
    if (!(ventricles[a] > 0.0 && ventricles[a] < white_matter[a] && white_matter[a] < gm_outer &&
          gm_outer < head[a] && head[a] <= 0.5)) {
      throw std::invalid_argument("phantom ellipsoids must nest: ventricles < white matter < "
                                  "grey matter < head <= 0.5 on axis " + std::to_string(a));
    }
  }
  if (!(csf.mean < gm.mean && gm.mean < wm.mean)) {
    throw std::invalid_argument("phantom intensity means must order CSF < GM < WM");
  }
  if (atrophy_class != 0 && atrophy_class != 1) throw std::invalid_argument("atrophy_class must be 0 or 1");
  if (!(atrophy_delta >= 0.0 && atrophy_delta < 1.0)) {
    throw std::invalid_argument("atrophy_delta must lie in [0, 1)");
  }
  if (deformation_amplitude < 0.0 || deformation_amplitude > 2.0) {
    throw std::invalid_argument("deformation_amplitude must lie in [0, 2] voxels");
  }
  if (shape_jitter < 0.0 || center_jitter < 0.0) throw std::invalid_argument("jitter must be non-negative");
  for (const auto* t : {&csf, &gm, &wm, &background}) {
    if (t->std < 0.0) throw std::invalid_argument("tissue intensity std must be non-negative");
  }
}

bool Ellipsoid::contains(const std::array<double, 3>& p) const {
  double r = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double d = (p[a] - center[a]) / semi_axes[a];
    r += d * d;
  }
  return r <= 1.0;
}

std::array<double, 3> PhantomGeometry::displace(const std::array<double, 3>& p, const Dims& dims) const {
  std::array<double, 3> q = p;
  for (const auto& w : waves) {
    double arg = w.phase;
    for (int a = 0; a < 3; ++a) arg += 2.0 * std::numbers::pi * w.frequency[a] * p[a] / dims[a];
    const double s = w.amplitude * std::sin(arg);
    for (int a = 0; a < 3; ++a) q[a] += s * w.direction[a];
  }
  return q;
}

Tissue PhantomGeometry::tissue_at(const std::array<double, 3>& p) const {
  if (!head.contains(p)) return Tissue::Background;
  if (ventricles.contains(p)) return Tissue::CSF;
  if (white_matter.contains(p)) return Tissue::WM;
  if (gm_outer.contains(p)) return Tissue::GM;
  return Tissue::CSF;
}

PhantomSample generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng = make_rng(seed);

  PhantomGeometry geo;
  std::array<double, 3> center{};
  std::array<double, 3> stretch{};
  for (int a = 0; a < 3; ++a) {
    center[a] = (spec.dims[a] - 1) / 2.0 + uniform(rng, -spec.center_jitter, spec.center_jitter);
    stretch[a] = 1.0 + uniform(rng, -spec.shape_jitter, spec.shape_jitter);
  }
  auto ellipsoid = [&](const std::array<double, 3>& fractions, double extra) {
    Ellipsoid e;
    e.center = center;
    for (int a = 0; a < 3; ++a) e.semi_axes[a] = (fractions[a] + extra) * stretch[a] * spec.dims[a];
    return e;
  };
  geo.head = ellipsoid(spec.head, 0.0);
  geo.white_matter = ellipsoid(spec.white_matter, 0.0);
  geo.gm_outer = ellipsoid(spec.white_matter, spec.thickness());
  geo.ventricles = ellipsoid(spec.ventricles, 0.0);

  for (int k = 0; k < 3; ++k) {
    DisplacementWave w;
    std::array<double, 3> dir{};
    double norm = 0.0;
    while (norm < 1e-6) {
      norm = 0.0;
      for (auto& d : dir) {
        d = uniform(rng, -1.0, 1.0);
        norm += d * d;
      }
      norm = std::sqrt(norm);
    }
    for (int a = 0; a < 3; ++a) w.direction[a] = dir[a] / norm;
    for (auto& f : w.frequency) f = uniform(rng, -1.5, 1.5);
    w.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    w.amplitude = spec.deformation_amplitude / 3.0 * uniform(rng, 0.5, 1.0);
    if (spec.deformation_amplitude > 0.0) geo.waves.push_back(w);
  }

  const Grid grid = Grid::make(spec.dims);
  PhantomSample s;
  s.spec = spec;
  s.seed = seed;
  s.class_label = spec.atrophy_class;
  s.labels = LabelVolume(grid);
  s.intensity = Volume(grid);

  std::normal_distribution<double> unit(0.0, 1.0);
  for (int k = 0; k < spec.dims[2]; ++k)
    for (int j = 0; j < spec.dims[1]; ++j)
      for (int i = 0; i < spec.dims[0]; ++i) {
        const std::array<double, 3> p{static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)};
        const Tissue t = geo.tissue_at(geo.displace(p, spec.dims));
        const TissueIntensity& ti = t == Tissue::WM    ? spec.wm
                                    : t == Tissue::GM  ? spec.gm
                                    : t == Tissue::CSF ? spec.csf
                                                       : spec.background;
        const double v = ti.mean + ti.std * unit(rng);
        const auto idx = grid.index(i, j, k);
        s.labels.data[idx] = static_cast<std::uint8_t>(t);
        s.intensity.data[idx] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  s.geometry = std::move(geo);
  return s;
}

std::vector<PhantomSample> generate_samples(std::size_t count, const PhantomSpec& base, std::uint64_t seed) {
  std::vector<PhantomSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    PhantomSpec spec = base;
    spec.atrophy_class = static_cast<int>(i % 2);
    out.push_back(generate_phantom(spec, seed ^ static_cast<std::uint64_t>(i)));
  }
  return out;
}

std::vector<PhantomSample> generate_dataset(std::size_t n_per_class, const PhantomSpec& base,
                                            std::uint64_t seed) {
  return generate_samples(2 * n_per_class, base, seed);
}

std::size_t count_label(const LabelVolume& labels, Tissue tissue) {
  return static_cast<std::size_t>(
      std::count(labels.data.begin(), labels.data.end(), static_cast<std::uint8_t>(tissue)));
}

}  // namespace bapm
