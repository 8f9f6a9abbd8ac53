#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "bapm/tensor.hpp"

namespace bapm {

using Dims = std::array<int, 3>;
using Affine = std::array<std::array<double, 4>, 4>;

inline Affine identity_affine() {
  return {{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}}};
}

/// Tissue classes carried by label volumes.
enum class Tissue : std::uint8_t { Background = 0, WM = 1, GM = 2, CSF = 3 };
inline constexpr int kTissueClasses = 4;

/// Sampling grid: voxel counts, mm spacing and voxel-to-world affine.
/// Voxel (i, j, k) lives at index i + nx * (j + ny * k).
struct Grid {
  Dims dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  Affine affine = identity_affine();

  std::size_t size() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
  }
  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
  }
  /// Grid with the given dims, the given spacing and a diagonal affine.
  static Grid make(Dims dims, std::array<double, 3> spacing = {1.0, 1.0, 1.0});
  void validate() const;
};

template <class T>
struct Image {
  Grid grid;
  std::vector<T> data;

  Image() = default;
  explicit Image(Grid g, T fill = T{}) : grid(g), data(g.size(), fill) {}

  const Dims& dims() const { return grid.dims; }
  std::size_t size() const { return data.size(); }
  T& at(int i, int j, int k) { return data[grid.index(i, j, k)]; }
  const T& at(int i, int j, int k) const { return data[grid.index(i, j, k)]; }
};

/// Intensity field.
using Volume = Image<float>;
/// Tissue label field with values in {0, 1, 2, 3}.
using LabelVolume = Image<std::uint8_t>;

void validate_labels(const LabelVolume& labels);

/// 1×1×nz×ny×nx tensor sharing the voxel order of the volume.
Tensor to_tensor(const Volume& volume);
/// Stacks equal-grid volumes into an N×1×D×H×W batch.
Tensor to_batch(const std::vector<const Volume*>& volumes);
/// One-hot N×4×D×H×W target from label volumes.
Tensor one_hot_batch(const std::vector<const LabelVolume*>& labels);
/// Channel `channel` of sample `n` of an N×C×D×H×W tensor as a volume on `grid`.
Volume from_tensor(const Tensor& t, const Grid& grid, std::size_t n = 0, std::size_t channel = 0);

}  // namespace bapm
