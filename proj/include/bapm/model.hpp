#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>

#include "bapm/parameters.hpp"
#include "bapm/volume.hpp"

namespace bapm {

enum class Head { Reconstruction, Segmentation };

/// Which pretext decoders are trained: both (BAPM), reconstruction only
/// (BAPM-R) or segmentation only (BAPM-S).
enum class PretextTasks { Both, RecOnly, SegOnly };

std::string to_string(PretextTasks tasks);
PretextTasks parse_tasks(const std::string& text);

inline constexpr std::array<int, 8> kEncoderChannels{64, 128, 256, 512, 512, 512, 1024, 1024};
inline constexpr std::array<int, 3> kDecoderChannels{256, 128, 64};
inline constexpr int kPredictorChannels = 256;

struct ModelConfig {
  double width_factor = 0.125;
  int num_classes = 2;
  Dims input_dims{32, 32, 32};
  /// Instance-normalise the segmentation logits before the softmax.
  bool seg_head_norm = true;
  /// Multiplier on the Kaiming bound for convolutions followed by instance
  /// normalisation (their scale only sets the effective step size).
  double norm_init_scale = 0.02;
  /// Multiplier on the Kaiming bound for un-normalised output layers, so the
  /// untrained heads start close to zero instead of unit-scale noise.
  double output_init_scale = 0.01;

  std::array<int, 8> encoder_channels() const;
  /// Three hidden widths then the head width (1 or 4).
  std::array<int, 4> decoder_channels(Head head) const;
  int predictor_channels() const;
  /// Throws std::invalid_argument naming the violated field.
  void validate() const;
};

int scaled_channels(int base, double width_factor);

/// Parameters of encoder + requested decoders, initialised from `seed`.
ParameterStore build_pretext(const ModelConfig& config, PretextTasks tasks, std::uint64_t seed);
/// Parameters of encoder + two-branch predictor.
ParameterStore build_downstream(const ModelConfig& config, std::uint64_t seed);

/// Eight conv blocks; blocks 1-4 stride 2, residual sums after blocks 6 and 8.
Tensor encoder_forward(const ParameterStore& params, const Tensor& input);

struct FeaturePair {
  Tensor rec;
  Tensor seg;
};
/// First half of the channels feeds reconstruction, second half segmentation.
FeaturePair split_features(const Tensor& encoder_out);

/// Reconstruction returns the linear 1-channel volume, segmentation the
/// 4-channel softmax probabilities.
Tensor decoder_forward(const ParameterStore& params, const Tensor& features, Head head,
                      bool seg_head_norm = true);

/// One predictor branch ("predictor.branch_rec" / "predictor.branch_seg").
Tensor predictor_branch_forward(const ParameterStore& params, const std::string& prefix, const Tensor& features);
/// Sum of both branches, global average pool, fully connected logits.
Tensor predictor_forward(const ParameterStore& params, const FeaturePair& pair);

struct PretextOutput {
  Tensor reconstruction;  ///< undefined for SegOnly
  Tensor segmentation;    ///< undefined for RecOnly
};
PretextOutput pretext_forward(const ParameterStore& params, const Tensor& input, PretextTasks tasks,
                              bool seg_head_norm = true);
Tensor downstream_forward(const ParameterStore& params, const Tensor& input);

/// Symmetric zero padding up to the next multiple; `before` voxels on the low side.
struct PadRecord {
  Dims original{};
  Dims before{};
  Dims padded{};
};
std::pair<Volume, PadRecord> pad_to_multiple(const Volume& volume, int multiple = 16);
Volume crop(const Volume& volume, const PadRecord& record);
LabelVolume crop(const LabelVolume& labels, const PadRecord& record);

}  // namespace bapm
