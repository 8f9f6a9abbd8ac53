#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "bapm/phantom.hpp"
#include "doctest.h"

using namespace bapm;

namespace {

PhantomSpec still_spec() {
  PhantomSpec s;
  s.deformation_amplitude = 0.0;
  s.shape_jitter = 0.0;
  s.center_jitter = 0.0;
  s.csf.std = s.gm.std = s.wm.std = s.background.std = 0.0;
  return s;
}

bool inside(double i, double j, double k, const std::array<double, 3>& frac, double extra, const Dims& d) {
  const double p[3] = {i, j, k};
  double r = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double c = (d[a] - 1) / 2.0;
    const double ax = (frac[a] + extra) * d[a];
    r += (p[a] - c) * (p[a] - c) / (ax * ax);
  }
  return r <= 1.0;
}

}  // namespace

TEST_CASE("still phantom labels equal closed-form ellipsoid membership") {
  for (int cls : {0, 1}) {
    auto spec = still_spec();
    spec.atrophy_class = cls;
    const auto s = generate_phantom(spec, 5);
    const double t = cls == 1 ? spec.gm_thickness * (1 - spec.atrophy_delta) : spec.gm_thickness;
    std::size_t mismatches = 0;
    for (int k = 0; k < 32; ++k)
      for (int j = 0; j < 32; ++j)
        for (int i = 0; i < 32; ++i) {
          int expected = 0;
          if (inside(i, j, k, spec.head, 0, spec.dims)) {
            if (inside(i, j, k, spec.ventricles, 0, spec.dims)) expected = 3;
            else if (inside(i, j, k, spec.white_matter, 0, spec.dims)) expected = 1;
            else if (inside(i, j, k, spec.white_matter, t, spec.dims)) expected = 2;
            else expected = 3;
          }
          mismatches += s.labels.at(i, j, k) != expected;
        }
    CHECK(mismatches == 0);
  }
}

TEST_CASE("still phantom intensity is the tissue mean of its label") {
  const auto spec = still_spec();
  const auto s = generate_phantom(spec, 9);
  const float means[4] = {0.02f, 0.8f, 0.5f, 0.25f};
  for (std::size_t i = 0; i < s.labels.size(); ++i) CHECK_EQ(s.intensity.data[i], means[s.labels.data[i]]);
}

TEST_CASE("phantom is deterministic per seed and varies across seeds") {
  PhantomSpec spec;
  const auto a = generate_phantom(spec, 77);
  const auto b = generate_phantom(spec, 77);
  const auto c = generate_phantom(spec, 78);
  CHECK(std::memcmp(a.intensity.data.data(), b.intensity.data.data(), a.intensity.size() * 4) == 0);
  CHECK(a.labels.data == b.labels.data);
  CHECK(a.labels.data != c.labels.data);
}

TEST_CASE("phantom intensities stay in [0, 1] and every tissue is present") {
  PhantomSpec spec;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = generate_phantom(spec, seed);
    const auto [lo, hi] = std::minmax_element(s.intensity.data.begin(), s.intensity.data.end());
    CHECK(*lo >= 0.0f);
    CHECK(*hi <= 1.0f);
    for (auto t : {Tissue::Background, Tissue::WM, Tissue::GM, Tissue::CSF}) CHECK(count_label(s.labels, t) > 0);
  }
}

TEST_CASE("phantom spec validation") {
  PhantomSpec s;
  s.dims = {24, 32, 32};
  CHECK_THROWS_AS(generate_phantom(s, 0), std::invalid_argument);
  s = PhantomSpec{};
  s.ventricles = {0.3, 0.07, 0.09};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = PhantomSpec{};
  s.gm.mean = 0.9;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = PhantomSpec{};
  s.gm_thickness = 0.3;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("dataset sizes, balance and stable per-index seeds") {
  PhantomSpec spec;
  spec.dims = {16, 16, 16};
  CHECK(generate_dataset(0, spec, 1).empty());
  const auto five = generate_dataset(5, spec, 1);
  REQUIRE(five.size() == 10);
  CHECK(std::count_if(five.begin(), five.end(), [](const auto& s) { return s.class_label == 1; }) == 5);
  const auto three = generate_dataset(3, spec, 1);
  for (std::size_t i = 0; i < three.size(); ++i) {
    CHECK(three[i].seed == (1ull ^ i));
    CHECK(three[i].labels.data == five[i].labels.data);
  }
}

TEST_CASE("atrophied phantoms have less grey matter on average") {
  PhantomSpec spec;
  double gm[2] = {0, 0};
  for (std::uint64_t i = 0; i < 200; ++i) {
    spec.atrophy_class = static_cast<int>(i % 2);
    gm[i % 2] += static_cast<double>(count_label(generate_phantom(spec, 1000 + i).labels, Tissue::GM));
  }
  CHECK(gm[1] / 100 < gm[0] / 100);
}

TEST_CASE("a grey-matter volume threshold separates the classes") {
  PhantomSpec spec;
  const auto set = generate_samples(200, spec, 4242);
  std::vector<std::pair<double, int>> v;
  for (const auto& s : set) v.emplace_back(static_cast<double>(count_label(s.labels, Tissue::GM)), s.class_label);
  std::sort(v.begin(), v.end());
  // Best single threshold: class 1 below, class 0 above.
  std::size_t best = 0;
  for (std::size_t cut = 0; cut <= v.size(); ++cut) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < v.size(); ++i) correct += (i < cut) == (v[i].second == 1);
    best = std::max(best, correct);
  }
  CHECK(static_cast<double>(best) / v.size() >= 0.9);
}

TEST_CASE("white-matter mean intensity concentrates near the tissue mean") {
  PhantomSpec spec;
  const auto set = generate_samples(20, spec, 31);
  for (const auto& s : set) {
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < s.labels.size(); ++i)
      if (s.labels.data[i] == 1) {
        sum += s.intensity.data[i];
        ++n;
      }
    CHECK(std::abs(sum / n - spec.wm.mean) <= 3 * spec.wm.std / std::sqrt(static_cast<double>(n)));
  }
}
