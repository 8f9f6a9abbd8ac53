#pragma once

#include <array>

#include "bapm/tensor.hpp"

namespace bapm {

using Triple = std::array<int, 3>;

struct Conv3dOptions {
  Triple stride{1, 1, 1};
  Triple padding{1, 1, 1};
};

struct ConvTranspose3dOptions {
  Triple stride{2, 2, 2};
  Triple padding{1, 1, 1};
  Triple output_padding{1, 1, 1};
};

/// input N×Cin×D×H×W, weight Cout×Cin×k×k×k (k odd), bias Cout or undefined.
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const Conv3dOptions& options = {});

/// input N×Cin×D×H×W, weight Cin×Cout×k×k×k, bias Cout or undefined.
/// The adjoint of conv3d with the same weight, stride and padding.
Tensor conv_transpose3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        const ConvTranspose3dOptions& options = {});

int conv_output_size(int in, int kernel, int stride, int padding);
int conv_transpose_output_size(int in, int kernel, int stride, int padding, int output_padding);

/// Per (n, c) standardisation over the spatial axes, no affine.
Tensor instance_norm(const Tensor& input, float eps = 1e-5f);

/// Per-channel leaky slope; input N×C×..., slope C.
Tensor prelu(const Tensor& input, const Tensor& slope);

/// Softmax across axis 1 at every spatial position.
Tensor softmax_channels(const Tensor& input);

/// input N×F, weight K×F, bias K.
Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// N×C×... to N×C.
Tensor global_avg_pool(const Tensor& input);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& input);

/// Channels [begin, begin+count) of an N×C×... tensor.
Tensor split_channels(const Tensor& input, std::int64_t begin, std::int64_t count);
Tensor concat_channels(const Tensor& a, const Tensor& b);

}  // namespace bapm
