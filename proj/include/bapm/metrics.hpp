#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "bapm/volume.hpp"

namespace bapm {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BinaryPrediction {
  double score = 0.0;  ///< positive-class probability
  int label = 0;       ///< 1 = class of interest
};

/// Percentages. `degenerate` is set when a ratio had a zero denominator and was reported as 0.
struct ClassificationMetrics {
  double acc = 0.0;
  double sen = 0.0;
  double spe = 0.0;
  double f1 = 0.0;
  bool degenerate = false;
};

ClassificationMetrics classification_metrics(const std::vector<BinaryPrediction>& preds, double threshold = 0.5);

/// Probability that a random positive outscores a random negative (ties count half).
/// Throws MetricError without both classes.
double auc(const std::vector<BinaryPrediction>& preds);

struct ReconstructionOptions {
  int bins = 32;
  int ssim_window = 7;
  double ssim_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

struct ReconstructionMetrics {
  double mae = 0.0;
  double nmi = 0.0;
  double ssim = 0.0;
};

ReconstructionMetrics reconstruction_metrics(const Volume& x, const Volume& x_hat, const ReconstructionOptions& options = {});
double mean_absolute_error(const Volume& x, const Volume& x_hat);
double normalized_mutual_information(const Volume& x, const Volume& x_hat, int bins = 32);
double ssim(const Volume& x, const Volume& x_hat, const ReconstructionOptions& options = {});

/// Foreground voxels of `cls` with at least one face neighbour outside the class
/// (voxels beyond the volume count as outside). Linear indices in grid order.
std::vector<std::size_t> surface_voxels(const LabelVolume& labels, int cls);

struct ClassSegmentation {
  double dice = 0.0;
  double asd = 0.0;  ///< mm
  double hd = 0.0;   ///< mm
  /// False when the class is present in exactly one volume; asd/hd are NaN then.
  bool distances_defined = true;
};

struct SegmentationMetrics {
  std::array<ClassSegmentation, kTissueClasses> per_class{};
  /// Means over WM, GM and CSF; distance means skip undefined classes.
  double dice = 0.0;
  double asd = 0.0;
  double hd = 0.0;
};

/// Spacing is taken from the truth grid. `hd_percentile` 100 gives the exact Hausdorff distance.
SegmentationMetrics segmentation_metrics(const LabelVolume& pred, const LabelVolume& truth, double hd_percentile = 100.0);

/// Squared Euclidean distance (mm²) from every voxel to the nearest voxel with mask set.
/// Infinity everywhere if the mask is empty.
std::vector<double> squared_distance_transform(const std::vector<bool>& mask, const Grid& grid);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  ///< sample standard deviation; 0 for a single value
};
Summary summarize(const std::vector<double>& values);

}  // namespace bapm
