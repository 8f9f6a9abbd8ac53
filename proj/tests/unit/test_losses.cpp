#include <cmath>
#include <random>

#include "bapm/losses.hpp"
#include "bapm/ops.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace bapm;

namespace {

Tensor from(std::initializer_list<float> v, Shape s) {
  Tensor t(std::move(s));
  std::copy(v.begin(), v.end(), t.data().begin());
  return t;
}

Tensor random_onehot(std::size_t n, std::size_t c, std::size_t voxels, std::mt19937_64& rng) {
  Tensor t({static_cast<std::int64_t>(n), static_cast<std::int64_t>(c), static_cast<std::int64_t>(voxels), 1, 1}, 0.0f);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t v = 0; v < voxels; ++v) t.data()[(b * c + rng() % c) * voxels + v] = 1.0f;
  return t;
}

double dice_oracle(const Tensor& p, const Tensor& t, double eps) {
  const auto n = static_cast<std::size_t>(p.shape()[0]), c = static_cast<std::size_t>(p.shape()[1]);
  const std::size_t inner = p.numel() / (n * c);
  double total = 0;
  for (std::size_t k = 0; k < c; ++k) {
    double pt = 0, pp = 0, tt = 0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < inner; ++i) {
        const double a = p.data()[(b * c + k) * inner + i], y = t.data()[(b * c + k) * inner + i];
        pt += a * y;
        pp += a * a;
        tt += y * y;
      }
    total += -(2 * pt + eps) / (pp + tt + eps);
  }
  return total / static_cast<double>(c);
}

}  // namespace

TEST_CASE("l1 loss examples") {
  const auto x = from({0, 1}, {2});
  CHECK(l1_loss(x, x).item() == 0.0f);
  CHECK(l1_loss(x, from({1, 1}, {2})).item() == doctest::Approx(0.5));

  std::mt19937_64 rng(1);
  const auto a = testing::random_tensor({2, 1, 4, 4, 4}, rng);
  const auto b = testing::random_tensor({2, 1, 4, 4, 4}, rng);
  double ref = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) ref += std::abs(static_cast<double>(a.data()[i]) - b.data()[i]);
  ref /= static_cast<double>(a.numel());
  CHECK(std::abs(l1_loss(a, b).item() - ref) <= 1e-6);
}

TEST_CASE("dice loss examples") {
  std::mt19937_64 rng(2);
  const auto t = random_onehot(2, 4, 27, rng);
  CHECK(dice_loss(t, t).item() == doctest::Approx(-1.0).epsilon(1e-6));

  // One voxel, target class 1, prediction split evenly over two classes. With squared sums the
  // class-1 term is -(2 * 0.5) / (1 + 0.25).
  const auto p1 = from({0.5f, 0.5f}, {1, 2, 1, 1, 1});
  const auto t1 = from({0.0f, 1.0f}, {1, 2, 1, 1, 1});
  const double class0 = -(0.0 + 1e-5) / (0.25 + 0.0 + 1e-5);
  const double class1 = -(1.0 + 1e-5) / (1.25 + 1e-5);
  CHECK(dice_loss(p1, t1).item() == doctest::Approx((class0 + class1) / 2).epsilon(1e-6));
  CHECK(class1 == doctest::Approx(-0.8).epsilon(1e-4));

  // Channel 2 is empty in both maps, so its term is exactly -eps/eps = -1.
  const auto p2 = from({1, 0, 0, 0, 1, 0}, {1, 3, 2, 1, 1});
  CHECK(dice_loss(p2, p2).item() == doctest::Approx(-1.0).epsilon(1e-6));

  CHECK_THROWS(dice_loss(p1, p2));
}

TEST_CASE("dice loss matches the per-class oracle and stays in [-1, 0]") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto t = random_onehot(2, 4, 64, rng);
    const auto p = softmax_channels(testing::random_tensor({2, 4, 64, 1, 1}, rng, -3, 3));
    const double d = dice_loss(p, t).item();
    CHECK(std::abs(d - dice_oracle(p, t, 1e-5)) <= 1e-6);
    CHECK(d >= -1.0);
    CHECK(d <= 0.0);
    CHECK(d > -1.0 + 1e-3);
  }
}

TEST_CASE("cross-entropy examples") {
  CHECK(std::abs(cross_entropy(from({0.3f, 0.3f}, {1, 2}), {1}).item() - std::log(2.0)) <= 1e-6);
  CHECK(cross_entropy(from({20, -20}, {1, 2}), {0}).item() == doctest::Approx(0.0).epsilon(1e-7));
  CHECK(std::isfinite(cross_entropy(from({1000, -1000}, {1, 2}), {1}).item()));

  std::mt19937_64 rng(4);
  const auto z = testing::random_tensor({5, 3}, rng, -4, 4);
  const std::vector<int> y{0, 2, 1, 1, 0};
  double ref = 0;
  for (int r = 0; r < 5; ++r) {
    double m = -1e300;
    for (int k = 0; k < 3; ++k) m = std::max(m, static_cast<double>(z.data()[r * 3 + k]));
    double s = 0;
    for (int k = 0; k < 3; ++k) s += std::exp(z.data()[r * 3 + k] - m);
    ref += m + std::log(s) - z.data()[r * 3 + y[r]];
  }
  CHECK(std::abs(cross_entropy(z, y).item() - ref / 5) <= 1e-5);
  CHECK_THROWS(cross_entropy(z, {0, 1}));
  CHECK_THROWS(cross_entropy(z, {0, 3, 1, 1, 0}));
}

TEST_CASE("pretext loss sums its active terms") {
  std::mt19937_64 rng(5);
  PretextOutput out;
  out.reconstruction = testing::random_tensor({1, 1, 4, 4, 4}, rng, 0, 1);
  out.segmentation = softmax_channels(testing::random_tensor({1, 4, 4, 4, 4}, rng));
  const auto rec_target = testing::random_tensor({1, 1, 4, 4, 4}, rng, 0, 1);
  const auto seg_target = random_onehot(1, 4, 64, rng);
  Tensor seg_target5({1, 4, 4, 4, 4});
  std::copy(seg_target.data().begin(), seg_target.data().end(), seg_target5.data().begin());

  const double l_rec = l1_loss(rec_target, out.reconstruction).item();
  const double l_seg = dice_loss(out.segmentation, seg_target5).item();

  const auto both = pretext_loss(out, rec_target, seg_target5, PretextTasks::Both);
  CHECK(both.report.l_rec.value() == l_rec);
  CHECK(both.report.l_seg.value() == l_seg);
  CHECK(std::abs(both.report.l_total - (l_rec + l_seg)) <= 1e-6);
  CHECK(std::abs(both.total.item() - (l_rec + l_seg)) <= 1e-6);

  const auto rec = pretext_loss(out, rec_target, Tensor{}, PretextTasks::RecOnly);
  CHECK_FALSE(rec.report.l_seg.has_value());
  CHECK(rec.total.item() == static_cast<float>(l_rec));

  const auto seg = pretext_loss(out, Tensor{}, seg_target5, PretextTasks::SegOnly);
  CHECK_FALSE(seg.report.l_rec.has_value());
  CHECK(seg.total.item() == static_cast<float>(l_seg));

  // The sum itself: 0.2 + (-0.9).
  LossReport r;
  r.l_rec = 0.2;
  r.l_seg = -0.9;
  CHECK(r.l_rec.value() + r.l_seg.value() == doctest::Approx(-0.7));
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(6);
  const auto target = testing::random_tensor({1, 1, 3, 3, 3}, rng);
  // Keep every residual away from the L1 kink.
  auto pred = target.clone();
  for (float& v : pred.data()) v += (rng() % 2 ? 0.3f : -0.3f);
  CHECK(testing::check_gradients([&] { return l1_loss(target, pred); }, {pred}).worst < 1e-3);

  const auto onehot = random_onehot(2, 4, 8, rng);
  auto logits = testing::random_tensor({2, 4, 8, 1, 1}, rng);
  CHECK(testing::check_gradients([&] { return dice_loss(softmax_channels(logits), onehot); }, {logits}).worst < 1e-3);
  auto probs = softmax_channels(testing::random_tensor({2, 4, 8, 1, 1}, rng));
  CHECK(testing::check_gradients([&] { return dice_loss(probs, onehot); }, {probs}).worst < 1e-3);

  auto z = testing::random_tensor({4, 2}, rng, -2, 2);
  CHECK(testing::check_gradients([&] { return cross_entropy(z, {0, 1, 1, 0}); }, {z}).worst < 1e-3);
}
