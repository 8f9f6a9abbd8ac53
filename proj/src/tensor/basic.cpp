#include <algorithm>
#include <cmath>

#include "bapm/ops.hpp"

namespace bapm {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Number of elements per (n, c) slice of an N×C×... tensor.
std::size_t slice_size(const Tensor& t) {
  std::size_t s = 1;
  for (std::size_t i = 2; i < t.rank(); ++i) s *= static_cast<std::size_t>(t.dim(i));
  return s;
}

void require_batched(const Tensor& t, const char* op, std::size_t min_rank = 2) {
  if (t.rank() < min_rank) {
    throw ShapeError(std::string(op) + ": expected N x C x ... tensor, got " +
                     shape_str(t.shape()));
  }
}

}  // namespace

Tensor instance_norm(const Tensor& input, float eps) {
  require_batched(input, "instance_norm");
  const std::size_t slices = static_cast<std::size_t>(input.dim(0) * input.dim(1));
  const std::size_t m = slice_size(input);
  if (m == 0) throw ShapeError("instance_norm: empty spatial extent");
  const bool tracked = detail::needs_record({&input});
  Tensor out = detail::make_result(input.shape(), tracked);
  std::vector<float> inv_std(slices);

  const float* x = input.data().data();
  float* y = out.data().data();
  for (std::size_t s = 0; s < slices; ++s) {
    const float* xs = x + s * m;
    double mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += xs[i];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double d = xs[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(m);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[s] = static_cast<float>(is);
    for (std::size_t i = 0; i < m; ++i) y[s * m + i] = static_cast<float>((xs[i] - mean) * is);
  }

  if (tracked) {
    auto y_impl = out.impl_ptr();
    Tape::current().record(
        {input}, out,
        [y_impl, inv_std = std::move(inv_std), slices, m](std::span<const float> gout,
                                                          std::span<std::vector<float>*> gin) {
          const auto& xhat = y_impl->data;
          auto& gx = *gin[0];
          for (std::size_t s = 0; s < slices; ++s) {
            double mg = 0.0, mgx = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
              mg += gout[s * m + i];
              mgx += static_cast<double>(gout[s * m + i]) * xhat[s * m + i];
            }
            mg /= static_cast<double>(m);
            mgx /= static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i) {
              const double v = gout[s * m + i] - mg - xhat[s * m + i] * mgx;
              gx[s * m + i] += static_cast<float>(inv_std[s] * v);
            }
          }
        });
  }
  return out;
}

Tensor prelu(const Tensor& input, const Tensor& slope) {
  require_batched(input, "prelu");
  const auto channels = input.dim(1);
  if (slope.rank() != 1 || slope.dim(0) != channels) {
    throw ShapeError("prelu: slope " + shape_str(slope.shape()) + " does not match " +
                     std::to_string(channels) + " channels");
  }
  const std::size_t n = static_cast<std::size_t>(input.dim(0));
  const std::size_t m = slice_size(input);
  const bool tracked = detail::needs_record({&input, &slope});
  Tensor out = detail::make_result(input.shape(), tracked);
  const float* x = input.data().data();
  const float* a = slope.data().data();
  float* y = out.data().data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < static_cast<std::size_t>(channels); ++c) {
      const std::size_t base = (s * channels + c) * m;
      for (std::size_t i = 0; i < m; ++i) {
        const float v = x[base + i];
        y[base + i] = v > 0.0f ? v : a[c] * v;
      }
    }

  if (tracked) {
    auto x_impl = input.impl_ptr();
    auto a_impl = slope.impl_ptr();
    Tape::current().record(
        {input, slope}, out,
        [x_impl, a_impl, n, channels, m](std::span<const float> gout,
                                         std::span<std::vector<float>*> gin) {
          const float* x = x_impl->data.data();
          const float* a = a_impl->data.data();
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t c = 0; c < static_cast<std::size_t>(channels); ++c) {
              const std::size_t base = (s * channels + c) * m;
              double ga = 0.0;
              for (std::size_t i = 0; i < m; ++i) {
                const float v = x[base + i];
                const float g = gout[base + i];
                if (v > 0.0f) {
                  if (gin[0]) (*gin[0])[base + i] += g;
                } else {
                  if (gin[0]) (*gin[0])[base + i] += a[c] * g;
                  ga += static_cast<double>(g) * v;
                }
              }
              if (gin[1]) (*gin[1])[c] += static_cast<float>(ga);
            }
        });
  }
  return out;
}

Tensor softmax_channels(const Tensor& input) {
  require_batched(input, "softmax_channels");
  const std::size_t n = static_cast<std::size_t>(input.dim(0));
  const std::size_t c = static_cast<std::size_t>(input.dim(1));
  if (c == 0) throw ShapeError("softmax_channels: no channels");
  const std::size_t m = slice_size(input);
  const bool tracked = detail::needs_record({&input});
  Tensor out = detail::make_result(input.shape(), tracked);
  const float* x = input.data().data();
  float* y = out.data().data();
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t base = s * c * m;
    for (std::size_t i = 0; i < m; ++i) {
      float mx = x[base + i];
      for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, x[base + k * m + i]);
      double total = 0.0;
      for (std::size_t k = 0; k < c; ++k) total += std::exp(static_cast<double>(x[base + k * m + i] - mx));
      for (std::size_t k = 0; k < c; ++k) {
        y[base + k * m + i] =
            static_cast<float>(std::exp(static_cast<double>(x[base + k * m + i] - mx)) / total);
      }
    }
  }

  if (tracked) {
    auto y_impl = out.impl_ptr();
    Tape::current().record(
        {input}, out,
        [y_impl, n, c, m](std::span<const float> gout, std::span<std::vector<float>*> gin) {
          const auto& probs = y_impl->data;
          auto& gx = *gin[0];
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t base = s * c * m;
            for (std::size_t i = 0; i < m; ++i) {
              double dot = 0.0;
              for (std::size_t k = 0; k < c; ++k)
                dot += static_cast<double>(gout[base + k * m + i]) * probs[base + k * m + i];
              for (std::size_t k = 0; k < c; ++k) {
                const std::size_t idx = base + k * m + i;
                gx[idx] += static_cast<float>(probs[idx] * (gout[idx] - dot));
              }
            }
          }
        });
  }
  return out;
}

Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2) {
    throw ShapeError("fully_connected: expected N x F input and K x F weight, got " +
                     shape_str(input.shape()) + " and " + shape_str(weight.shape()));
  }
  const auto n = static_cast<std::size_t>(input.dim(0));
  const auto f = static_cast<std::size_t>(input.dim(1));
  const auto k = static_cast<std::size_t>(weight.dim(0));
  if (static_cast<std::size_t>(weight.dim(1)) != f) {
    throw ShapeError("fully_connected: input features " + std::to_string(f) +
                     " do not match weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || static_cast<std::size_t>(bias.dim(0)) != k)) {
    throw ShapeError("fully_connected: bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(k) + " outputs");
  }
  const bool tracked = detail::needs_record({&input, &weight, &bias});
  Tensor out = detail::make_result({static_cast<std::int64_t>(n), static_cast<std::int64_t>(k)},
                                   tracked);
  const float* x = input.data().data();
  const float* w = weight.data().data();
  float* y = out.data().data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t j = 0; j < k; ++j) {
      double acc = bias.defined() ? bias.data()[j] : 0.0;
      for (std::size_t i = 0; i < f; ++i) acc += static_cast<double>(w[j * f + i]) * x[s * f + i];
      y[s * k + j] = static_cast<float>(acc);
    }

  if (tracked) {
    auto x_impl = input.impl_ptr();
    auto w_impl = weight.impl_ptr();
    Tape::current().record(
        {input, weight, bias}, out,
        [x_impl, w_impl, n, f, k](std::span<const float> gout, std::span<std::vector<float>*> gin) {
          const float* x = x_impl->data.data();
          const float* w = w_impl->data.data();
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t j = 0; j < k; ++j) {
              const float g = gout[s * k + j];
              if (gin[0])
                for (std::size_t i = 0; i < f; ++i) (*gin[0])[s * f + i] += g * w[j * f + i];
              if (gin[1])
                for (std::size_t i = 0; i < f; ++i) (*gin[1])[j * f + i] += g * x[s * f + i];
              if (gin[2]) (*gin[2])[j] += g;
            }
        });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& input) {
  require_batched(input, "global_avg_pool", 3);
  const std::size_t n = static_cast<std::size_t>(input.dim(0));
  const std::size_t c = static_cast<std::size_t>(input.dim(1));
  const std::size_t m = slice_size(input);
  const bool tracked = detail::needs_record({&input});
  Tensor out = detail::make_result({input.dim(0), input.dim(1)}, tracked);
  const float* x = input.data().data();
  for (std::size_t s = 0; s < n * c; ++s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += x[s * m + i];
    out.data()[s] = static_cast<float>(acc / static_cast<double>(m));
  }
  if (tracked) {
    Tape::current().record({input}, out,
                           [n, c, m](std::span<const float> gout, std::span<std::vector<float>*> gin) {
                             const float scale = 1.0f / static_cast<float>(m);
                             for (std::size_t s = 0; s < n * c; ++s)
                               for (std::size_t i = 0; i < m; ++i)
                                 (*gin[0])[s * m + i] += gout[s] * scale;
                           });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool tracked = detail::needs_record({&a, &b});
  Tensor out = detail::make_result(a.shape(), tracked);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (tracked) {
    Tape::current().record({a, b}, out,
                           [](std::span<const float> gout, std::span<std::vector<float>*> gin) {
                             for (auto* g : gin) {
                               if (!g) continue;
                               for (std::size_t i = 0; i < gout.size(); ++i) (*g)[i] += gout[i];
                             }
                           });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const bool tracked = detail::needs_record({&a, &b});
  Tensor out = detail::make_result(a.shape(), tracked);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (tracked) {
    auto a_impl = a.impl_ptr();
    auto b_impl = b.impl_ptr();
    Tape::current().record({a, b}, out,
                           [a_impl, b_impl](std::span<const float> gout,
                                            std::span<std::vector<float>*> gin) {
                             for (std::size_t i = 0; i < gout.size(); ++i) {
                               if (gin[0]) (*gin[0])[i] += gout[i] * b_impl->data[i];
                               if (gin[1]) (*gin[1])[i] += gout[i] * a_impl->data[i];
                             }
                           });
  }
  return out;
}

Tensor sum(const Tensor& input) {
  const bool tracked = detail::needs_record({&input});
  Tensor out = detail::make_result({1}, tracked);
  double acc = 0.0;
  for (float v : input.data()) acc += v;
  out.data()[0] = static_cast<float>(acc);
  if (tracked) {
    Tape::current().record({input}, out,
                           [](std::span<const float> gout, std::span<std::vector<float>*> gin) {
                             for (auto& g : *gin[0]) g += gout[0];
                           });
  }
  return out;
}

Tensor split_channels(const Tensor& input, std::int64_t begin, std::int64_t count) {
  require_batched(input, "split_channels");
  const auto channels = input.dim(1);
  if (begin < 0 || count <= 0 || begin + count > channels) {
    throw ShapeError("split_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + std::to_string(channels) +
                     " channels");
  }
  Shape shape = input.shape();
  shape[1] = count;
  const bool tracked = detail::needs_record({&input});
  Tensor out = detail::make_result(shape, tracked);
  const std::size_t n = static_cast<std::size_t>(input.dim(0));
  const std::size_t m = slice_size(input);
  for (std::size_t s = 0; s < n; ++s) {
    const float* src = input.data().data() + (s * channels + begin) * m;
    std::copy(src, src + count * m, out.data().data() + s * count * m);
  }
  if (tracked) {
    Tape::current().record({input}, out,
                           [n, m, channels, begin, count](std::span<const float> gout,
                                                         std::span<std::vector<float>*> gin) {
                             for (std::size_t s = 0; s < n; ++s)
                               for (std::size_t i = 0; i < static_cast<std::size_t>(count) * m; ++i)
                                 (*gin[0])[(s * channels + begin) * m + i] += gout[s * count * m + i];
                           });
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_batched(a, "concat_channels");
  require_batched(b, "concat_channels");
  Shape sa = a.shape(), sb = b.shape();
  sa[1] = sb[1] = 0;
  if (sa != sb) {
    throw ShapeError("concat_channels: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  Shape shape = a.shape();
  shape[1] = a.dim(1) + b.dim(1);
  const bool tracked = detail::needs_record({&a, &b});
  Tensor out = detail::make_result(shape, tracked);
  const std::size_t n = static_cast<std::size_t>(a.dim(0));
  const std::size_t m = slice_size(a);
  const std::size_t ca = static_cast<std::size_t>(a.dim(1)) * m;
  const std::size_t cb = static_cast<std::size_t>(b.dim(1)) * m;
  for (std::size_t s = 0; s < n; ++s) {
    float* dst = out.data().data() + s * (ca + cb);
    std::copy_n(a.data().data() + s * ca, ca, dst);
    std::copy_n(b.data().data() + s * cb, cb, dst + ca);
  }
  if (tracked) {
    Tape::current().record({a, b}, out,
                           [n, ca, cb](std::span<const float> gout, std::span<std::vector<float>*> gin) {
                             for (std::size_t s = 0; s < n; ++s) {
                               const float* g = gout.data() + s * (ca + cb);
                               if (gin[0])
                                 for (std::size_t i = 0; i < ca; ++i) (*gin[0])[s * ca + i] += g[i];
                               if (gin[1])
                                 for (std::size_t i = 0; i < cb; ++i) (*gin[1])[s * cb + i] += g[ca + i];
                             }
                           });
  }
  return out;
}

}  // namespace bapm
