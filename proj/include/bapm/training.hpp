#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bapm/augment.hpp"
#include "bapm/checkpoint.hpp"
#include "bapm/losses.hpp"
#include "bapm/metrics.hpp"
#include "bapm/model.hpp"
#include "bapm/phantom.hpp"

namespace bapm {

struct DataSample {
  std::string id;
  Volume image;
  LabelVolume labels;  ///< empty grid when unlabeled
  int class_label = 0;
};
using Dataset = std::vector<DataSample>;

Dataset to_dataset(const std::vector<PhantomSample>& phantoms);

struct PretextConfig {
  int epochs = 30;
  int batch_size = 4;
  double lr = 1e-4;
  double fraction = 1.0;
  PretextTasks tasks = PretextTasks::Both;
};

struct FinetuneConfig {
  int epochs = 90;
  int batch_size = 2;
  double lr = 1e-4;
  std::vector<int> decay_epochs{30, 60};
  double decay_factor = 0.1;
  /// Load and freeze the encoder from a pretext checkpoint; false trains everything from scratch.
  bool pretrained = true;
  /// Add one random-affine copy of every sample per epoch.
  bool duplicate_affine = true;
};

struct EvalConfig {
  double train_fraction = 0.8;
  int repeats = 5;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  AugmentConfig augment;
  PretextConfig pretext;
  FinetuneConfig finetune;
  EvalConfig eval;
  /// Progress lines (one per epoch / split); silent when empty.
  std::function<void(const std::string&)> log;

  void validate() const;
};

std::map<std::string, std::string> model_metadata(const ModelConfig& model, PretextTasks tasks);
/// Inverse of model_metadata; missing keys keep the defaults.
ModelConfig model_config_from_metadata(const std::map<std::string, std::string>& metadata);
PretextTasks tasks_from_metadata(const std::map<std::string, std::string>& metadata);

struct PretextResult {
  ParameterStore params;
  std::vector<LossReport> trace;
  std::size_t samples_used = 0;
};

/// Uses the first `fraction` of the seed-shuffled dataset; fresh augmentation per sample per epoch.
PretextResult pretrain(const Dataset& dataset, const RunConfig& config);

struct CeReport {
  int epoch = 0;
  int step = 0;
  double l_ce = 0.0;
};

struct FinetuneResult {
  ParameterStore params;
  std::vector<CeReport> trace;
};

/// `encoder` is required when config.finetune.pretrained is set.
FinetuneResult finetune(const Dataset& dataset, const Checkpoint* encoder, const RunConfig& config);

/// Learning rate in effect during `epoch` (0-based).
double finetune_lr(const FinetuneConfig& config, int epoch);

/// Positive-class probabilities of the downstream model.
std::vector<BinaryPrediction> predict(const ParameterStore& params, const Dataset& dataset);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
/// Per-class shuffle; round(train_fraction · n_c) of each class go to train, at least one on each side.
Split stratified_split(const Dataset& dataset, double train_fraction, std::uint64_t seed);

struct ReportRow {
  std::string task;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;
};

/// Classification metric names in report order.
inline const std::vector<std::string> kClassificationMetrics{"AUC", "ACC", "SEN", "SPE", "F1"};

struct SplitEvaluation {
  /// metric name -> one value per repeat (percent)
  std::map<std::string, std::vector<double>> values;
  std::vector<ReportRow> rows(const std::string& task) const;
};

SplitEvaluation repeated_split_eval(const Dataset& dataset, const Checkpoint* encoder, const RunConfig& config);

struct PretextEvaluation {
  std::vector<double> soft_dice;
  std::vector<double> ssim;
  std::vector<double> mae;
  std::vector<double> nmi;
};
/// Clean-input evaluation of the pretext heads on every sample.
PretextEvaluation evaluate_pretext(const ParameterStore& params, const Dataset& dataset, PretextTasks tasks,
                                   const ModelConfig& model);

/// Mean over classes of the smoothed soft Dice of one probability map.
double soft_dice(const Tensor& probs, const Tensor& onehot);

struct AblationConfig {
  std::vector<double> fractions{0.2, 0.6, 1.0};
  bool run_variants = true;
  bool run_sweep = true;
};

/// Variant matrix (BAPM, BAPM-R, BAPM-S, BAPM-B) on the target task and the pretext
/// fraction sweep scored on `holdout`.
std::vector<ReportRow> run_ablation(const Dataset& source, const Dataset& holdout, const Dataset& target,
                                    const RunConfig& config, const AblationConfig& ablation);

void write_pretext_trace(const std::vector<LossReport>& trace, const std::filesystem::path& path);
void write_finetune_trace(const std::vector<CeReport>& trace, const std::filesystem::path& path);
void write_report(const std::vector<ReportRow>& rows, const std::filesystem::path& path);

/// Volume-level inference with symmetric padding to a multiple of 16.
Volume reconstruct_volume(const ParameterStore& params, const Volume& image);
struct SegmentationOutput {
  LabelVolume labels;
  std::vector<Volume> probabilities;  ///< one per tissue class
};
SegmentationOutput segment_volume(const ParameterStore& params, const Volume& image, bool seg_head_norm);

}  // namespace bapm
