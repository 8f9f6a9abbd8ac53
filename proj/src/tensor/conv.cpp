#include <Eigen/Core>

#include "bapm/ops.hpp"
#include "bapm/parallel.hpp"

namespace bapm {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

// Sliding-window geometry of a forward convolution: `image` is the padded
// side, `cols` the strided side.
struct Geometry {
  int channels = 0;
  Triple image{};
  Triple cols{};
  int kernel = 3;
  Triple stride{};
  Triple padding{};

  std::size_t image_size() const {
    return static_cast<std::size_t>(image[0]) * image[1] * image[2];
  }
  std::size_t col_size() const { return static_cast<std::size_t>(cols[0]) * cols[1] * cols[2]; }
  std::size_t rows() const {
    return static_cast<std::size_t>(channels) * kernel * kernel * kernel;
  }
  bool pointwise() const {
    return kernel == 1 && stride == Triple{1, 1, 1} && padding == Triple{0, 0, 0};
  }
};

void im2col(const float* img, const Geometry& g, float* col) {
  const int k = g.kernel;
  const std::size_t ncols = g.col_size();
  std::size_t row = 0;
  for (int c = 0; c < g.channels; ++c) {
    const float* plane = img + static_cast<std::size_t>(c) * g.image_size();
    for (int kd = 0; kd < k; ++kd)
      for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw, ++row) {
          float* dst = col + row * ncols;
          for (int od = 0; od < g.cols[0]; ++od) {
            const int id = od * g.stride[0] - g.padding[0] + kd;
            for (int oh = 0; oh < g.cols[1]; ++oh) {
              const int ih = oh * g.stride[1] - g.padding[1] + kh;
              float* out = dst + (static_cast<std::size_t>(od) * g.cols[1] + oh) * g.cols[2];
              if (id < 0 || id >= g.image[0] || ih < 0 || ih >= g.image[1]) {
                std::fill(out, out + g.cols[2], 0.0f);
                continue;
              }
              const float* src = plane + (static_cast<std::size_t>(id) * g.image[1] + ih) * g.image[2];
              for (int ow = 0; ow < g.cols[2]; ++ow) {
                const int iw = ow * g.stride[2] - g.padding[2] + kw;
                out[ow] = (iw >= 0 && iw < g.image[2]) ? src[iw] : 0.0f;
              }
            }
          }
        }
  }
}

// Adds col entries back into the image (adjoint of im2col).
void col2im(const float* col, const Geometry& g, float* img) {
  const int k = g.kernel;
  const std::size_t ncols = g.col_size();
  std::size_t row = 0;
  for (int c = 0; c < g.channels; ++c) {
    float* plane = img + static_cast<std::size_t>(c) * g.image_size();
    for (int kd = 0; kd < k; ++kd)
      for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw, ++row) {
          const float* src = col + row * ncols;
          for (int od = 0; od < g.cols[0]; ++od) {
            const int id = od * g.stride[0] - g.padding[0] + kd;
            if (id < 0 || id >= g.image[0]) continue;
            for (int oh = 0; oh < g.cols[1]; ++oh) {
              const int ih = oh * g.stride[1] - g.padding[1] + kh;
              if (ih < 0 || ih >= g.image[1]) continue;
              const float* in = src + (static_cast<std::size_t>(od) * g.cols[1] + oh) * g.cols[2];
              float* dst = plane + (static_cast<std::size_t>(id) * g.image[1] + ih) * g.image[2];
              for (int ow = 0; ow < g.cols[2]; ++ow) {
                const int iw = ow * g.stride[2] - g.padding[2] + kw;
                if (iw >= 0 && iw < g.image[2]) dst[iw] += in[ow];
              }
            }
          }
        }
  }
}

int check_kernel(const Tensor& weight, const char* op) {
  if (weight.rank() != 5) {
    throw ShapeError(std::string(op) + ": weight must be rank 5, got " + shape_str(weight.shape()));
  }
  const auto k = weight.dim(2);
  if (weight.dim(3) != k || weight.dim(4) != k || k % 2 == 0) {
    throw ShapeError(std::string(op) + ": kernel must be cubic and odd, got " +
                     shape_str(weight.shape()));
  }
  return static_cast<int>(k);
}

void check_bias(const Tensor& bias, std::int64_t channels, const char* op) {
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != channels)) {
    throw ShapeError(std::string(op) + ": bias shape " + shape_str(bias.shape()) +
                     " does not match " + std::to_string(channels) + " output channels");
  }
}

Triple spatial(const Tensor& t) {
  return {static_cast<int>(t.dim(2)), static_cast<int>(t.dim(3)), static_cast<int>(t.dim(4))};
}

void add_bias(float* out, const float* bias, std::size_t channels, std::size_t plane) {
  for (std::size_t c = 0; c < channels; ++c) {
    float* p = out + c * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] += bias[c];
  }
}

void accumulate_bias_grad(std::span<const float> gout, std::size_t n, std::size_t channels,
                          std::size_t plane, std::vector<float>& gb) {
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < channels; ++c) {
      const float* p = gout.data() + (s * channels + c) * plane;
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      gb[c] += static_cast<float>(acc);
    }
}

// Adds per-sample partial weight gradients in sample order so the result
// does not depend on how samples were scheduled.
void reduce_partials(const std::vector<std::vector<float>>& partials, std::vector<float>& out) {
  for (const auto& p : partials)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i];
}

}  // namespace

int conv_output_size(int in, int kernel, int stride, int padding) {
  const int span = in + 2 * padding - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

int conv_transpose_output_size(int in, int kernel, int stride, int padding, int output_padding) {
  return (in - 1) * stride - 2 * padding + kernel + output_padding;
}

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const Conv3dOptions& options) {
  if (input.rank() != 5) {
    throw ShapeError("conv3d: input must be N x C x D x H x W, got " + shape_str(input.shape()));
  }
  const int k = check_kernel(weight, "conv3d");
  if (weight.dim(1) != input.dim(1)) {
    throw ShapeError("conv3d: input has " + std::to_string(input.dim(1)) +
                     " channels but weight " + shape_str(weight.shape()) + " expects " +
                     std::to_string(weight.dim(1)));
  }
  const auto cout = weight.dim(0);
  check_bias(bias, cout, "conv3d");
  for (int a = 0; a < 3; ++a) {
    if (options.stride[a] < 1) throw ShapeError("conv3d: stride must be positive");
  }

  Geometry g;
  g.channels = static_cast<int>(input.dim(1));
  g.image = spatial(input);
  g.kernel = k;
  g.stride = options.stride;
  g.padding = options.padding;
  for (int a = 0; a < 3; ++a) {
    if (g.image[a] + 2 * g.padding[a] < k) {
      throw ShapeError("conv3d: padded input " + shape_str(input.shape()) +
                       " smaller than kernel " + std::to_string(k));
    }
    g.cols[a] = conv_output_size(g.image[a], k, g.stride[a], g.padding[a]);
  }

  const auto n = static_cast<std::size_t>(input.dim(0));
  const bool tracked = detail::needs_record({&input, &weight, &bias});
  Tensor out = detail::make_result({input.dim(0), cout, g.cols[0], g.cols[1], g.cols[2]}, tracked);

  const std::size_t rows = g.rows();
  const std::size_t ncols = g.col_size();
  const std::size_t in_stride = static_cast<std::size_t>(g.channels) * g.image_size();
  const std::size_t out_stride = static_cast<std::size_t>(cout) * ncols;
  const float* x = input.data().data();
  const float* w = weight.data().data();
  float* y = out.data().data();
  const float* b = bias.defined() ? bias.data().data() : nullptr;

  parallel_for(n, [&](std::size_t s) {
    std::vector<float> col;
    const float* colp = x + s * in_stride;
    if (!g.pointwise()) {
      col.resize(rows * ncols);
      im2col(x + s * in_stride, g, col.data());
      colp = col.data();
    }
    MapR(y + s * out_stride, cout, ncols).noalias() =
        CMapR(w, cout, rows) * CMapR(colp, rows, ncols);
    if (b) add_bias(y + s * out_stride, b, cout, ncols);
  });

  if (tracked) {
    auto in_impl = input.impl_ptr();
    auto w_impl = weight.impl_ptr();
    Tape::current().record(
        {input, weight, bias}, out,
        [in_impl, w_impl, g, n, cout](std::span<const float> gout,
                                       std::span<std::vector<float>*> gin) {
          const std::size_t rows = g.rows();
          const std::size_t ncols = g.col_size();
          const std::size_t in_stride = static_cast<std::size_t>(g.channels) * g.image_size();
          const std::size_t out_stride = static_cast<std::size_t>(cout) * ncols;
          const float* x = in_impl->data.data();
          const float* w = w_impl->data.data();
          const bool want_w = gin[1] != nullptr;
          std::vector<std::vector<float>> partial(want_w ? n : 0);

          parallel_for(n, [&](std::size_t s) {
            const float* go = gout.data() + s * out_stride;
            if (want_w) {
              std::vector<float> col;
              const float* colp = x + s * in_stride;
              if (!g.pointwise()) {
                col.resize(rows * ncols);
                im2col(x + s * in_stride, g, col.data());
                colp = col.data();
              }
              partial[s].assign(static_cast<std::size_t>(cout) * rows, 0.0f);
              MapR(partial[s].data(), cout, rows).noalias() =
                  CMapR(go, cout, ncols) * CMapR(colp, rows, ncols).transpose();
            }
            if (gin[0]) {
              float* gx = gin[0]->data() + s * in_stride;
              if (g.pointwise()) {
                MapR(gx, rows, ncols).noalias() +=
                    CMapR(w, cout, rows).transpose() * CMapR(go, cout, ncols);
              } else {
                std::vector<float> dcol(rows * ncols);
                MapR(dcol.data(), rows, ncols).noalias() =
                    CMapR(w, cout, rows).transpose() * CMapR(go, cout, ncols);
                col2im(dcol.data(), g, gx);
              }
            }
          });
          if (want_w) reduce_partials(partial, *gin[1]);
          if (gin[2]) accumulate_bias_grad(gout, n, cout, ncols, *gin[2]);
        });
  }
  return out;
}

Tensor conv_transpose3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        const ConvTranspose3dOptions& options) {
  if (input.rank() != 5) {
    throw ShapeError("conv_transpose3d: input must be N x C x D x H x W, got " +
                     shape_str(input.shape()));
  }
  const int k = check_kernel(weight, "conv_transpose3d");
  if (weight.dim(0) != input.dim(1)) {
    throw ShapeError("conv_transpose3d: input has " + std::to_string(input.dim(1)) +
                     " channels but weight " + shape_str(weight.shape()) + " expects " +
                     std::to_string(weight.dim(0)));
  }
  const auto cin = weight.dim(0);
  const auto cout = weight.dim(1);
  check_bias(bias, cout, "conv_transpose3d");

  // The op is the input-gradient of a forward conv from the (larger) output
  // grid back to the input grid.
  Geometry g;
  g.channels = static_cast<int>(cout);
  g.cols = spatial(input);
  g.kernel = k;
  g.stride = options.stride;
  g.padding = options.padding;
  for (int a = 0; a < 3; ++a) {
    if (options.stride[a] < 1 || options.output_padding[a] < 0 ||
        options.output_padding[a] >= options.stride[a]) {
      throw ShapeError("conv_transpose3d: output_padding must lie in [0, stride)");
    }
    g.image[a] = conv_transpose_output_size(g.cols[a], k, g.stride[a], g.padding[a],
                                            options.output_padding[a]);
    if (g.image[a] <= 0) {
      throw ShapeError("conv_transpose3d: computed output size " + std::to_string(g.image[a]) +
                       " on axis " + std::to_string(a) + " for input " +
                       shape_str(input.shape()));
    }
  }

  const auto n = static_cast<std::size_t>(input.dim(0));
  const bool tracked = detail::needs_record({&input, &weight, &bias});
  Tensor out =
      detail::make_result({input.dim(0), cout, g.image[0], g.image[1], g.image[2]}, tracked);

  const std::size_t rows = g.rows();  // cout * k^3
  const std::size_t ncols = g.col_size();
  const std::size_t in_stride = static_cast<std::size_t>(cin) * ncols;
  const std::size_t out_stride = static_cast<std::size_t>(cout) * g.image_size();
  const float* x = input.data().data();
  const float* w = weight.data().data();
  float* y = out.data().data();
  const float* b = bias.defined() ? bias.data().data() : nullptr;

  parallel_for(n, [&](std::size_t s) {
    std::vector<float> col(rows * ncols);
    MapR(col.data(), rows, ncols).noalias() =
        CMapR(w, cin, rows).transpose() * CMapR(x + s * in_stride, cin, ncols);
    col2im(col.data(), g, y + s * out_stride);
    if (b) add_bias(y + s * out_stride, b, cout, g.image_size());
  });

  if (tracked) {
    auto in_impl = input.impl_ptr();
    auto w_impl = weight.impl_ptr();
    Tape::current().record(
        {input, weight, bias}, out,
        [in_impl, w_impl, g, n, cin, cout](std::span<const float> gout,
                                            std::span<std::vector<float>*> gin) {
          const std::size_t rows = g.rows();
          const std::size_t ncols = g.col_size();
          const std::size_t in_stride = static_cast<std::size_t>(cin) * ncols;
          const std::size_t out_stride = static_cast<std::size_t>(cout) * g.image_size();
          const float* x = in_impl->data.data();
          const float* w = w_impl->data.data();
          const bool want_w = gin[1] != nullptr;
          std::vector<std::vector<float>> partial(want_w ? n : 0);

          parallel_for(n, [&](std::size_t s) {
            std::vector<float> col(rows * ncols);
            im2col(gout.data() + s * out_stride, g, col.data());
            if (gin[0]) {
              MapR(gin[0]->data() + s * in_stride, cin, ncols).noalias() +=
                  CMapR(w, cin, rows) * CMapR(col.data(), rows, ncols);
            }
            if (want_w) {
              partial[s].assign(static_cast<std::size_t>(cin) * rows, 0.0f);
              MapR(partial[s].data(), cin, rows).noalias() =
                  CMapR(x + s * in_stride, cin, ncols) * CMapR(col.data(), rows, ncols).transpose();
            }
          });
          if (want_w) reduce_partials(partial, *gin[1]);
          if (gin[2]) accumulate_bias_grad(gout, n, cout, g.image_size(), *gin[2]);
        });
  }
  return out;
}

}  // namespace bapm
