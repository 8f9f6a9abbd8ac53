#include "bapm/volume.hpp"

#include <algorithm>
#include <string>

namespace bapm {

Grid Grid::make(Dims dims, std::array<double, 3> spacing) {
  Grid g;
  g.dims = dims;
  g.spacing = spacing;
  for (int a = 0; a < 3; ++a) g.affine[a][a] = spacing[a];
  g.validate();
  return g;
}

void Grid::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] <= 0) throw std::invalid_argument("volume dims must be positive");
    if (!(spacing[a] > 0.0)) throw std::invalid_argument("volume spacing must be positive");
  }
}

void validate_labels(const LabelVolume& labels) {
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    if (labels.data[i] >= kTissueClasses) {
      throw std::invalid_argument("label value " + std::to_string(labels.data[i]) +
                                  " at voxel " + std::to_string(i) + " outside {0,1,2,3}");
    }
  }
}

Tensor to_tensor(const Volume& volume) { return to_batch({&volume}); }

Tensor to_batch(const std::vector<const Volume*>& volumes) {
  if (volumes.empty()) throw ShapeError("to_batch: no volumes");
  const Dims d = volumes.front()->dims();
  const std::size_t m = volumes.front()->size();
  Tensor t({static_cast<std::int64_t>(volumes.size()), 1, d[2], d[1], d[0]});
  for (std::size_t n = 0; n < volumes.size(); ++n) {
    if (volumes[n]->dims() != d) throw ShapeError("to_batch: volumes differ in dims");
    std::copy(volumes[n]->data.begin(), volumes[n]->data.end(), t.data().begin() + n * m);
  }
  return t;
}

Tensor one_hot_batch(const std::vector<const LabelVolume*>& labels) {
  if (labels.empty()) throw ShapeError("one_hot_batch: no volumes");
  const Dims d = labels.front()->dims();
  const std::size_t m = labels.front()->size();
  Tensor t({static_cast<std::int64_t>(labels.size()), kTissueClasses, d[2], d[1], d[0]});
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n]->dims() != d) throw ShapeError("one_hot_batch: volumes differ in dims");
    for (std::size_t i = 0; i < m; ++i) {
      const auto c = labels[n]->data[i];
      if (c >= kTissueClasses) throw std::invalid_argument("one_hot_batch: label outside {0,1,2,3}");
      t.data()[(n * kTissueClasses + c) * m + i] = 1.0f;
    }
  }
  return t;
}

Volume from_tensor(const Tensor& t, const Grid& grid, std::size_t n, std::size_t channel) {
  if (t.rank() != 5 || t.dim(2) != grid.dims[2] || t.dim(3) != grid.dims[1] ||
      t.dim(4) != grid.dims[0]) {
    throw ShapeError("from_tensor: tensor " + shape_str(t.shape()) + " does not match grid");
  }
  Volume v(grid);
  const std::size_t m = grid.size();
  const auto base = (n * static_cast<std::size_t>(t.dim(1)) + channel) * m;
  std::copy_n(t.data().begin() + base, m, v.data.begin());
  return v;
}

}  // namespace bapm
