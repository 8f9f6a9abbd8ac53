#include "bapm/losses.hpp"

#include <cmath>
#include <string>

#include "bapm/ops.hpp"

namespace bapm {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.defined() || !b.defined() || a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor l1_loss(const Tensor& target, const Tensor& prediction) {
  require_same(target, prediction, "l1_loss");
  const bool tracked = detail::needs_record({&target, &prediction});
  Tensor out = detail::make_result({1}, tracked);
  const auto x = target.data();
  const auto y = prediction.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(static_cast<double>(x[i]) - y[i]);
  const double n = static_cast<double>(x.size());
  out.data()[0] = static_cast<float>(acc / n);
  if (tracked) {
    Tape::current().record({target, prediction}, out,
                           [target, prediction, n](std::span<const float> gout, std::span<std::vector<float>*> gin) {
                             const auto x = target.data();
                             const auto y = prediction.data();
                             const float scale = static_cast<float>(gout[0] / n);
                             for (std::size_t i = 0; i < x.size(); ++i) {
                               const float d = y[i] - x[i];
                               const float s = d > 0.0f ? scale : (d < 0.0f ? -scale : 0.0f);
                               if (gin[0]) (*gin[0])[i] -= s;
                               if (gin[1]) (*gin[1])[i] += s;
                             }
                           });
  }
  return out;
}

Tensor dice_loss(const Tensor& prediction, const Tensor& target, float eps) {
  require_same(prediction, target, "dice_loss");
  if (prediction.rank() < 2) throw ShapeError("dice_loss: expected N×C×..., got " + shape_str(prediction.shape()));
  const auto shape = prediction.shape();
  const std::int64_t n = shape[0], c = shape[1];
  const std::int64_t inner = prediction.numel() / (n * c);
  const auto p = prediction.data();
  const auto t = target.data();

  // Per-class overlap and squared sums over batch and space.
  std::vector<double> inter(c, 0.0), sq(c, 0.0);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t k = 0; k < c; ++k) {
      const std::size_t base = static_cast<std::size_t>((b * c + k) * inner);
      for (std::int64_t i = 0; i < inner; ++i) {
        const double pv = p[base + i], tv = t[base + i];
        inter[k] += pv * tv;
        sq[k] += pv * pv + tv * tv;
      }
    }
  double loss = 0.0;
  for (std::int64_t k = 0; k < c; ++k) loss -= (2.0 * inter[k] + eps) / (sq[k] + eps);
  loss /= static_cast<double>(c);

  const bool tracked = detail::needs_record({&prediction, &target});
  Tensor out = detail::make_result({1}, tracked);
  out.data()[0] = static_cast<float>(loss);
  if (tracked) {
    Tape::current().record(
        {prediction, target}, out,
        [prediction, target, inter, sq, n, c, inner, eps](std::span<const float> gout,
                                                           std::span<std::vector<float>*> gin) {
          const auto p = prediction.data();
          const auto t = target.data();
          for (std::int64_t k = 0; k < c; ++k) {
            const double num = 2.0 * inter[k] + eps;
            const double den = sq[k] + eps;
            // d/dp of -(num/den)/C = -(2t·den - num·2p) / (den²·C)
            const double scale = gout[0] / (static_cast<double>(c) * den * den);
            for (std::int64_t b = 0; b < n; ++b) {
              const std::size_t base = static_cast<std::size_t>((b * c + k) * inner);
              for (std::int64_t i = 0; i < inner; ++i) {
                const double pv = p[base + i], tv = t[base + i];
                if (gin[0]) (*gin[0])[base + i] += static_cast<float>(-(2.0 * tv * den - num * 2.0 * pv) * scale);
                if (gin[1]) (*gin[1])[base + i] += static_cast<float>(-(2.0 * pv * den - num * 2.0 * tv) * scale);
              }
            }
          }
        });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be N×K, got " + shape_str(logits.shape()));
  const std::int64_t n = logits.shape()[0], k = logits.shape()[1];
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  for (int y : labels)
    if (y < 0 || y >= k) throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " out of range");

  const auto z = logits.data();
  std::vector<double> softmax(static_cast<std::size_t>(n * k));
  double loss = 0.0;
  for (std::int64_t r = 0; r < n; ++r) {
    const float* row = z.data() + r * k;
    double m = row[0];
    for (std::int64_t j = 1; j < k; ++j) m = std::max(m, static_cast<double>(row[j]));
    double s = 0.0;
    for (std::int64_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
    const double lse = m + std::log(s);
    loss += lse - row[labels[r]];
    for (std::int64_t j = 0; j < k; ++j) softmax[r * k + j] = std::exp(row[j] - lse);
  }
  loss /= static_cast<double>(n);

  const bool tracked = detail::needs_record({&logits});
  Tensor out = detail::make_result({1}, tracked);
  out.data()[0] = static_cast<float>(loss);
  if (tracked) {
    Tape::current().record({logits}, out,
                           [softmax, labels, n, k](std::span<const float> gout, std::span<std::vector<float>*> gin) {
                             const double scale = gout[0] / static_cast<double>(n);
                             for (std::int64_t r = 0; r < n; ++r)
                               for (std::int64_t j = 0; j < k; ++j) {
                                 const double d = softmax[r * k + j] - (j == labels[r] ? 1.0 : 0.0);
                                 (*gin[0])[r * k + j] += static_cast<float>(d * scale);
                               }
                           });
  }
  return out;
}

PretextLoss pretext_loss(const PretextOutput& out, const Tensor& rec_target, const Tensor& seg_target,
                         PretextTasks tasks) {
  PretextLoss result;
  Tensor rec, seg;
  if (tasks != PretextTasks::SegOnly) {
    rec = l1_loss(rec_target, out.reconstruction);
    result.report.l_rec = rec.item();
  }
  if (tasks != PretextTasks::RecOnly) {
    seg = dice_loss(out.segmentation, seg_target);
    result.report.l_seg = seg.item();
  }
  if (rec.defined() && seg.defined()) {
    result.total = add(rec, seg);
  } else {
    result.total = rec.defined() ? rec : seg;
  }
  result.report.l_total = result.report.l_rec.value_or(0.0) + result.report.l_seg.value_or(0.0);
  return result;
}

}  // namespace bapm
