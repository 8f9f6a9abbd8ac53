#include "bapm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace bapm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double ratio(double num, double den, bool& degenerate) {
  if (den == 0.0) {
    degenerate = true;
    return 0.0;
  }
  return num / den;
}

void require_same_dims(const Grid& a, const Grid& b, const char* what) {
  if (a.dims != b.dims) throw MetricError(std::string(what) + ": volume dims differ");
}

// One pass of the lower-envelope distance transform along a line of n samples.
void edt_1d(const double* f, double* d, int n, double spacing, std::vector<int>& v, std::vector<double>& z) {
  const double s2 = spacing * spacing;
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      k = 0;
      continue;
    }
    // z[0] is -inf, so k never drops below 0
    double s = 0.0;
    while (true) {
      const int p = v[k];
      s = ((f[q] + s2 * q * q) - (f[p] + s2 * p * p)) / (2.0 * s2 * (q - p));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d, d + n, kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = spacing * (q - v[j]);
    d[q] = f[v[j]] + dq * dq;
  }
}

double directed_percentile(std::vector<double> dist, double percentile) {
  if (dist.empty()) return 0.0;
  if (percentile >= 100.0) return *std::max_element(dist.begin(), dist.end());
  // nearest-rank
  const std::size_t rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * dist.size()));
  const std::size_t idx = rank == 0 ? 0 : rank - 1;
  std::nth_element(dist.begin(), dist.begin() + idx, dist.end());
  return dist[idx];
}

// Entropy in nats of a normalised histogram.
double entropy(const std::vector<double>& counts, double total) {
  double h = 0.0;
  for (double c : counts)
    if (c > 0.0) {
      const double p = c / total;
      h -= p * std::log(p);
    }
  return h;
}

std::vector<int> bin_indices(const Volume& v, int bins) {
  const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
  const double range = static_cast<double>(*hi) - *lo;
  std::vector<int> out(v.size(), 0);
  if (range <= 0.0) return out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const int b = static_cast<int>((v.data[i] - *lo) / range * bins);
    out[i] = std::clamp(b, 0, bins - 1);
  }
  return out;
}

// Separable normalised Gaussian filter restricted to the fully covered ("valid") region.
std::vector<double> gaussian_valid(const std::vector<double>& in, const Dims& dims, const std::vector<double>& w,
                                   Dims& out_dims) {
  const int r = static_cast<int>(w.size()) / 2;
  std::vector<double> cur = in;
  Dims cd = dims;
  for (int axis = 0; axis < 3; ++axis) {
    Dims nd = cd;
    nd[axis] = cd[axis] - 2 * r;
    std::vector<double> next(static_cast<std::size_t>(nd[0]) * nd[1] * nd[2], 0.0);
    const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? cd[0] : static_cast<std::size_t>(cd[0]) * cd[1]);
    for (int k = 0; k < nd[2]; ++k)
      for (int j = 0; j < nd[1]; ++j)
        for (int i = 0; i < nd[0]; ++i) {
          const std::size_t src = static_cast<std::size_t>(i) + cd[0] * (static_cast<std::size_t>(j) + static_cast<std::size_t>(cd[1]) * k);
          double acc = 0.0;
          for (std::size_t t = 0; t < w.size(); ++t) acc += w[t] * cur[src + t * stride];
          next[static_cast<std::size_t>(i) + nd[0] * (static_cast<std::size_t>(j) + static_cast<std::size_t>(nd[1]) * k)] = acc;
        }
    cur = std::move(next);
    cd = nd;
  }
  out_dims = cd;
  return cur;
}

}  // namespace

ClassificationMetrics classification_metrics(const std::vector<BinaryPrediction>& preds, double threshold) {
  if (preds.empty()) throw MetricError("classification_metrics: no predictions");
  double tp = 0, tn = 0, fp = 0, fn = 0;
  for (const auto& p : preds) {
    if (!std::isfinite(p.score)) throw MetricError("classification_metrics: non-finite score");
    const bool positive = p.score >= threshold;
    if (p.label == 1) {
      (positive ? tp : fn) += 1;
    } else {
      (positive ? fp : tn) += 1;
    }
  }
  ClassificationMetrics m;
  const double sen = ratio(tp, tp + fn, m.degenerate);
  const double spe = ratio(tn, tn + fp, m.degenerate);
  const double prec = ratio(tp, tp + fp, m.degenerate);
  const double f1 = ratio(2.0 * prec * sen, prec + sen, m.degenerate);
  m.acc = 100.0 * (tp + tn) / static_cast<double>(preds.size());
  m.sen = 100.0 * sen;
  m.spe = 100.0 * spe;
  m.f1 = 100.0 * f1;
  return m;
}

double auc(const std::vector<BinaryPrediction>& preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return preds[a].score < preds[b].score; });
  double n_pos = 0, n_neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && preds[order[j]].score == preds[order[i]].score) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) {
      if (preds[order[t]].label == 1) {
        n_pos += 1;
        rank_sum += avg_rank;
      } else {
        n_neg += 1;
      }
    }
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) throw MetricError("auc: needs at least one positive and one negative");
  const double u = rank_sum - n_pos * (n_pos + 1) / 2.0;
  return u / (n_pos * n_neg);
}

double mean_absolute_error(const Volume& x, const Volume& x_hat) {
  require_same_dims(x.grid, x_hat.grid, "mae");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(static_cast<double>(x.data[i]) - x_hat.data[i]);
  return acc / static_cast<double>(x.size());
}

double normalized_mutual_information(const Volume& x, const Volume& x_hat, int bins) {
  require_same_dims(x.grid, x_hat.grid, "nmi");
  if (bins < 2) throw MetricError("nmi: bins must be at least 2");
  const auto bx = bin_indices(x, bins);
  const auto by = bin_indices(x_hat, bins);
  std::vector<double> hx(bins, 0.0), hy(bins, 0.0), hxy(static_cast<std::size_t>(bins) * bins, 0.0);
  for (std::size_t i = 0; i < bx.size(); ++i) {
    hx[bx[i]] += 1;
    hy[by[i]] += 1;
    hxy[static_cast<std::size_t>(bx[i]) * bins + by[i]] += 1;
  }
  const double n = static_cast<double>(bx.size());
  const double ex = entropy(hx, n), ey = entropy(hy, n), exy = entropy(hxy, n);
  if (ex + ey == 0.0) return 1.0;
  return 2.0 * (ex + ey - exy) / (ex + ey);
}

double ssim(const Volume& x, const Volume& x_hat, const ReconstructionOptions& options) {
  require_same_dims(x.grid, x_hat.grid, "ssim");
  const auto [lo, hi] = std::minmax_element(x.data.begin(), x.data.end());
  const double range = static_cast<double>(*hi) - *lo;
  if (range <= 0.0) {
    if (x.data == x_hat.data) return 1.0;
    throw MetricError("ssim: reference volume is constant");
  }
  int window = options.ssim_window;
  for (int d : x.grid.dims) window = std::min(window, d % 2 == 1 ? d : d - 1);
  if (window < 1) throw MetricError("ssim: empty volume");
  const int r = window / 2;
  std::vector<double> w(window);
  for (int t = 0; t < window; ++t) w[t] = std::exp(-0.5 * (t - r) * (t - r) / (options.ssim_sigma * options.ssim_sigma));
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= wsum;

  const std::size_t n = x.size();
  std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = x.data[i];
    b[i] = x_hat.data[i];
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  Dims od{};
  const auto ma = gaussian_valid(a, x.grid.dims, w, od);
  const auto mb = gaussian_valid(b, x.grid.dims, w, od);
  const auto maa = gaussian_valid(aa, x.grid.dims, w, od);
  const auto mbb = gaussian_valid(bb, x.grid.dims, w, od);
  const auto mab = gaussian_valid(ab, x.grid.dims, w, od);
  const double c1 = std::pow(options.k1 * range, 2), c2 = std::pow(options.k2 * range, 2);
  double acc = 0.0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    const double va = maa[i] - ma[i] * ma[i];
    const double vb = mbb[i] - mb[i] * mb[i];
    const double cov = mab[i] - ma[i] * mb[i];
    acc += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) / ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
  }
  return acc / static_cast<double>(ma.size());
}

ReconstructionMetrics reconstruction_metrics(const Volume& x, const Volume& x_hat, const ReconstructionOptions& options) {
  return {mean_absolute_error(x, x_hat), normalized_mutual_information(x, x_hat, options.bins), ssim(x, x_hat, options)};
}

std::vector<std::size_t> surface_voxels(const LabelVolume& labels, int cls) {
  const Grid& g = labels.grid;
  std::vector<std::size_t> out;
  static constexpr int kOffsets[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        if (labels.at(i, j, k) != cls) continue;
        for (const auto& o : kOffsets) {
          const int a = i + o[0], b = j + o[1], c = k + o[2];
          if (!g.contains(a, b, c) || labels.at(a, b, c) != cls) {
            out.push_back(g.index(i, j, k));
            break;
          }
        }
      }
  return out;
}

std::vector<double> squared_distance_transform(const std::vector<bool>& mask, const Grid& grid) {
  const Dims& d = grid.dims;
  if (mask.size() != grid.size()) throw MetricError("distance transform: mask size does not match grid");
  std::vector<double> f(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) f[i] = mask[i] ? 0.0 : kInf;
  const int longest = std::max({d[0], d[1], d[2]});
  std::vector<double> line(longest), out(longest), z(longest + 1);
  std::vector<int> v(longest);
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? d[0] : static_cast<std::size_t>(d[0]) * d[1]);
    const int n = d[axis];
    const int o1 = axis == 0 ? 1 : 0, o2 = axis == 2 ? 1 : 2;
    for (int b = 0; b < d[o2]; ++b)
      for (int a = 0; a < d[o1]; ++a) {
        int idx[3] = {0, 0, 0};
        idx[o1] = a;
        idx[o2] = b;
        const std::size_t base = grid.index(idx[0], idx[1], idx[2]);
        for (int t = 0; t < n; ++t) line[t] = f[base + t * stride];
        edt_1d(line.data(), out.data(), n, grid.spacing[axis], v, z);
        for (int t = 0; t < n; ++t) f[base + t * stride] = out[t];
      }
  }
  return f;
}

SegmentationMetrics segmentation_metrics(const LabelVolume& pred, const LabelVolume& truth, double hd_percentile) {
  require_same_dims(pred.grid, truth.grid, "segmentation_metrics");
  if (!(hd_percentile > 0.0 && hd_percentile <= 100.0)) throw MetricError("segmentation_metrics: percentile must be in (0, 100]");
  validate_labels(pred);
  validate_labels(truth);
  SegmentationMetrics m;
  for (int c = 0; c < kTissueClasses; ++c) {
    auto& out = m.per_class[c];
    double np = 0, nt = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred.data[i] == c, t = truth.data[i] == c;
      np += p;
      nt += t;
      both += p && t;
    }
    if (np == 0 && nt == 0) {
      out = {1.0, 0.0, 0.0, true};
      continue;
    }
    out.dice = 2.0 * both / (np + nt);
    if (np == 0 || nt == 0) {
      out.asd = out.hd = kNaN;
      out.distances_defined = false;
      continue;
    }
    const auto sp = surface_voxels(pred, c);
    const auto st = surface_voxels(truth, c);
    std::vector<bool> mp(pred.size(), false), mt(pred.size(), false);
    for (auto i : sp) mp[i] = true;
    for (auto i : st) mt[i] = true;
    const auto dp = squared_distance_transform(mp, truth.grid);
    const auto dt = squared_distance_transform(mt, truth.grid);
    std::vector<double> from_pred, from_truth;
    from_pred.reserve(sp.size());
    from_truth.reserve(st.size());
    double total = 0.0;
    for (auto i : sp) {
      from_pred.push_back(std::sqrt(dt[i]));
      total += from_pred.back();
    }
    for (auto i : st) {
      from_truth.push_back(std::sqrt(dp[i]));
      total += from_truth.back();
    }
    out.asd = total / static_cast<double>(sp.size() + st.size());
    out.hd = std::max(directed_percentile(from_pred, hd_percentile), directed_percentile(from_truth, hd_percentile));
  }
  double dice = 0, asd = 0, hd = 0;
  int defined = 0;
  for (int c = 1; c < kTissueClasses; ++c) {
    dice += m.per_class[c].dice;
    if (m.per_class[c].distances_defined) {
      asd += m.per_class[c].asd;
      hd += m.per_class[c].hd;
      ++defined;
    }
  }
  m.dice = dice / (kTissueClasses - 1);
  m.asd = defined ? asd / defined : kNaN;
  m.hd = defined ? hd / defined : kNaN;
  return m;
}

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw MetricError("summarize: no values");
  Summary s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

}  // namespace bapm
