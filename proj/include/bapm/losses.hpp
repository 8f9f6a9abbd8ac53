#pragma once

#include <optional>
#include <vector>

#include "bapm/model.hpp"
#include "bapm/tensor.hpp"

namespace bapm {

inline constexpr float kDiceSmooth = 1e-5f;

/// Mean absolute difference over all elements.
Tensor l1_loss(const Tensor& target, const Tensor& prediction);

/// Negative soft Dice averaged over every channel (background included).
/// prediction and target are N×C×D×H×W; sums run over batch and space.
Tensor dice_loss(const Tensor& prediction, const Tensor& target, float eps = kDiceSmooth);

/// Mean negative log-softmax of the true class. logits N×K.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

struct LossReport {
  int epoch = 0;
  int step = 0;
  std::optional<double> l_rec;
  std::optional<double> l_seg;
  double l_total = 0.0;
};

struct PretextLoss {
  Tensor total;
  LossReport report;
};

/// Unweighted sum of the active terms. Targets for inactive heads may be undefined.
PretextLoss pretext_loss(const PretextOutput& out, const Tensor& rec_target, const Tensor& seg_target,
                         PretextTasks tasks);

}  // namespace bapm
