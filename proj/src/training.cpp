#include "bapm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "bapm/ops.hpp"
#include "bapm/optim.hpp"
#include "bapm/parallel.hpp"
#include "bapm/rng.hpp"

namespace bapm {

namespace {

// Independent random streams derived from the run seed.
enum Stream : std::uint64_t { kSubset = 1, kInit, kShuffle, kAugment, kSplit, kAffine, kFinetuneInit };

std::uint64_t stream_seed(std::uint64_t seed, Stream s, std::uint64_t a = 0, std::uint64_t b = 0) {
  return derive_seed(derive_seed(seed, s, a), b);
}

void emit(const RunConfig& config, const std::string& line) {
  if (config.log) config.log(line);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

bool has_labels(const DataSample& s) { return s.labels.size() > 0; }

// N×C×... batch assembled from per-sample 1×C×... tensors (no gradient).
Tensor stack(const std::vector<Tensor>& items) {
  Shape shape = items.front().shape();
  shape[0] = static_cast<std::int64_t>(items.size());
  Tensor out(shape);
  std::size_t offset = 0;
  for (const auto& t : items) {
    std::copy(t.data().begin(), t.data().end(), out.data().begin() + offset);
    offset += t.numel();
  }
  return out;
}

double positive_probability(const Tensor& logits, std::size_t row) {
  const auto k = logits.shape()[1];
  const float* z = logits.data().data() + row * k;
  double m = z[0];
  for (std::int64_t j = 1; j < k; ++j) m = std::max(m, static_cast<double>(z[j]));
  double s = 0.0;
  for (std::int64_t j = 0; j < k; ++j) s += std::exp(z[j] - m);
  return std::exp(z[1] - m) / s;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

Dataset to_dataset(const std::vector<PhantomSample>& phantoms) {
  Dataset out;
  out.reserve(phantoms.size());
  for (std::size_t i = 0; i < phantoms.size(); ++i) {
    const auto& p = phantoms[i];
    out.push_back({"phantom_" + std::to_string(i), p.intensity, p.labels, p.class_label});
  }
  return out;
}

void RunConfig::validate() const {
  model.validate();
  augment.validate();
  if (pretext.epochs < 0) throw std::invalid_argument("train.pretext.epochs must be non-negative");
  if (pretext.batch_size < 1) throw std::invalid_argument("train.pretext.batch_size must be at least 1");
  if (!(pretext.lr > 0.0)) throw std::invalid_argument("train.pretext.lr must be positive");
  if (!(pretext.fraction > 0.0 && pretext.fraction <= 1.0))
    throw std::invalid_argument("train.pretext.fraction must lie in (0, 1]");
  if (finetune.epochs < 0) throw std::invalid_argument("train.finetune.epochs must be non-negative");
  if (finetune.batch_size < 1) throw std::invalid_argument("train.finetune.batch_size must be at least 1");
  if (!(finetune.lr > 0.0)) throw std::invalid_argument("train.finetune.lr must be positive");
  if (!(finetune.decay_factor > 0.0)) throw std::invalid_argument("train.finetune.decay_factor must be positive");
  for (int e : finetune.decay_epochs)
    if (e < 0) throw std::invalid_argument("train.finetune.decay_epochs must be non-negative");
  if (!(eval.train_fraction > 0.0 && eval.train_fraction < 1.0))
    throw std::invalid_argument("eval.train_fraction must lie in (0, 1)");
  if (eval.repeats < 1) throw std::invalid_argument("eval.repeats must be at least 1");
}

std::map<std::string, std::string> model_metadata(const ModelConfig& model, PretextTasks tasks) {
  return {{"model.width_factor", fmt(model.width_factor)},
          {"model.num_classes", std::to_string(model.num_classes)},
          {"model.input_size", join_ints({model.input_dims[0], model.input_dims[1], model.input_dims[2]})},
          {"model.seg_head_norm", model.seg_head_norm ? "true" : "false"},
          {"model.norm_init_scale", fmt(model.norm_init_scale)},
          {"model.output_init_scale", fmt(model.output_init_scale)},
          {"model.tasks", to_string(tasks)}};
}

ModelConfig model_config_from_metadata(const std::map<std::string, std::string>& metadata) {
  ModelConfig m;
  auto get = [&](const char* key) -> const std::string* {
    auto it = metadata.find(key);
    return it == metadata.end() ? nullptr : &it->second;
  };
  if (auto v = get("model.width_factor")) m.width_factor = std::stod(*v);
  if (auto v = get("model.num_classes")) m.num_classes = std::stoi(*v);
  if (auto v = get("model.input_size")) {
    std::istringstream in(*v);
    std::string part;
    for (int a = 0; a < 3 && std::getline(in, part, ','); ++a) m.input_dims[a] = std::stoi(part);
  }
  if (auto v = get("model.seg_head_norm")) m.seg_head_norm = *v == "true";
  if (auto v = get("model.norm_init_scale")) m.norm_init_scale = std::stod(*v);
  if (auto v = get("model.output_init_scale")) m.output_init_scale = std::stod(*v);
  return m;
}

PretextTasks tasks_from_metadata(const std::map<std::string, std::string>& metadata) {
  auto it = metadata.find("model.tasks");
  return it == metadata.end() ? PretextTasks::Both : parse_tasks(it->second);
}

PretextResult pretrain(const Dataset& dataset, const RunConfig& config) {
  config.validate();
  const auto& pc = config.pretext;
  const std::size_t used = static_cast<std::size_t>(std::lround(pc.fraction * static_cast<double>(dataset.size())));
  if (used < static_cast<std::size_t>(pc.batch_size))
    throw std::invalid_argument("pretrain: " + std::to_string(used) + " samples is less than one batch of " +
                                std::to_string(pc.batch_size));
  const bool need_labels = pc.tasks != PretextTasks::RecOnly;
  if (need_labels)
    for (const auto& s : dataset)
      if (!has_labels(s)) throw std::invalid_argument("pretrain: sample '" + s.id + "' has no label map");

  auto order = shuffled(dataset.size(), stream_seed(config.seed, kSubset));
  order.resize(used);

  PretextResult result;
  result.samples_used = used;
  result.params = build_pretext(config.model, pc.tasks, stream_seed(config.seed, kInit));
  Adam opt(AdamOptions{static_cast<float>(pc.lr)});

  int global_step = 0;
  for (int epoch = 0; epoch < pc.epochs; ++epoch) {
    const auto perm = shuffled(used, stream_seed(config.seed, kShuffle, epoch));
    double epoch_total = 0.0;
    int steps = 0;
    for (std::size_t begin = 0; begin < used; begin += pc.batch_size) {
      const std::size_t count = std::min<std::size_t>(pc.batch_size, used - begin);
      std::vector<AugmentResult> batch(count);
      parallel_for(count, [&](std::size_t b) {
        const std::size_t idx = order[perm[begin + b]];
        const auto& s = dataset[idx];
        if (config.augment.enabled) {
          batch[b] = sample_and_apply(s.image, need_labels ? &s.labels : nullptr, config.augment,
                                      stream_seed(config.seed, kAugment, epoch, idx));
        } else {
          batch[b].image = s.image;
          batch[b].clean = s.image;
          if (need_labels) batch[b].labels = s.labels;
        }
      });
      std::vector<const Volume*> images, clean;
      std::vector<const LabelVolume*> labels;
      for (const auto& r : batch) {
        images.push_back(&r.image);
        clean.push_back(&r.clean);
        if (need_labels) labels.push_back(&*r.labels);
      }
      const Tensor x = to_batch(images);
      const Tensor rec_target = pc.tasks != PretextTasks::SegOnly ? to_batch(clean) : Tensor();
      const Tensor seg_target = need_labels ? one_hot_batch(labels) : Tensor();
      const auto out = pretext_forward(result.params, x, pc.tasks, config.model.seg_head_norm);
      auto loss = pretext_loss(out, rec_target, seg_target, pc.tasks);
      backward(loss.total);
      opt.step(result.params);
      result.params.zero_grad();
      loss.report.epoch = epoch + 1;
      loss.report.step = ++global_step;
      result.trace.push_back(loss.report);
      epoch_total += loss.report.l_total;
      ++steps;
    }
    emit(config, "pretext epoch " + std::to_string(epoch + 1) + "/" + std::to_string(pc.epochs) +
                     " mean l_total " + fmt(epoch_total / steps));
  }
  return result;
}

double finetune_lr(const FinetuneConfig& config, int epoch) {
  double lr = config.lr;
  for (int e : config.decay_epochs)
    if (epoch >= e) lr *= config.decay_factor;
  return lr;
}

FinetuneResult finetune(const Dataset& dataset, const Checkpoint* encoder, const RunConfig& config) {
  config.validate();
  const auto& fc = config.finetune;
  if (dataset.empty()) throw std::invalid_argument("finetune: empty dataset");
  for (const auto& s : dataset)
    if (s.class_label < 0 || s.class_label >= config.model.num_classes)
      throw std::invalid_argument("finetune: sample '" + s.id + "' has class " + std::to_string(s.class_label) +
                                  " outside [0, model.num_classes)");

  FinetuneResult result;
  result.params = build_downstream(config.model, stream_seed(config.seed, kFinetuneInit));
  const bool frozen = fc.pretrained;
  if (frozen) {
    if (!encoder) throw std::invalid_argument("finetune: a pretrained encoder checkpoint is required");
    load_into(result.params, *encoder, "encoder.");
    result.params.set_frozen("encoder.", true);
  }

  // With a frozen encoder, the clean-copy features never change.
  std::vector<Tensor> clean_features(dataset.size());
  auto features_of = [&](const Volume& v) {
    NoGradGuard guard;
    return encoder_forward(result.params, to_tensor(v));
  };
  if (frozen) parallel_for(dataset.size(), [&](std::size_t i) { clean_features[i] = features_of(dataset[i].image); });

  Adam opt(AdamOptions{static_cast<float>(fc.lr)});
  const std::size_t copies = fc.duplicate_affine ? 2 : 1;
  const std::size_t total = dataset.size() * copies;
  int global_step = 0;
  for (int epoch = 0; epoch < fc.epochs; ++epoch) {
    const float lr = static_cast<float>(finetune_lr(fc, epoch));
    const auto perm = shuffled(total, stream_seed(config.seed, kShuffle, epoch));
    double epoch_total = 0.0;
    int steps = 0;
    for (std::size_t begin = 0; begin < total; begin += fc.batch_size) {
      const std::size_t count = std::min<std::size_t>(fc.batch_size, total - begin);
      std::vector<Volume> images(count);
      std::vector<Tensor> feats(count);
      std::vector<int> labels(count);
      parallel_for(count, [&](std::size_t b) {
        const std::size_t item = perm[begin + b];
        const std::size_t idx = item % dataset.size();
        const bool augmented = item >= dataset.size();
        const auto& s = dataset[idx];
        labels[b] = s.class_label;
        if (augmented) {
          const auto params = draw_affine(config.augment, stream_seed(config.seed, kAffine, epoch, idx));
          images[b] = apply_affine(s.image, params, Interpolation::Trilinear, Boundary::Zero);
          if (frozen) feats[b] = features_of(images[b]);
        } else if (frozen) {
          feats[b] = clean_features[idx];
        } else {
          images[b] = s.image;
        }
      });
      Tensor logits;
      if (frozen) {
        logits = predictor_forward(result.params, split_features(stack(feats)));
      } else {
        std::vector<const Volume*> ptrs;
        for (const auto& v : images) ptrs.push_back(&v);
        logits = downstream_forward(result.params, to_batch(ptrs));
      }
      const Tensor loss = cross_entropy(logits, labels);
      backward(loss);
      opt.step(result.params, lr);
      result.params.zero_grad();
      result.trace.push_back({epoch + 1, ++global_step, loss.item()});
      epoch_total += loss.item();
      ++steps;
    }
    emit(config, "finetune epoch " + std::to_string(epoch + 1) + "/" + std::to_string(fc.epochs) + " mean l_ce " +
                     fmt(epoch_total / steps));
  }
  return result;
}

std::vector<BinaryPrediction> predict(const ParameterStore& params, const Dataset& dataset) {
  std::vector<BinaryPrediction> out(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    NoGradGuard guard;
    const Tensor logits = downstream_forward(params, to_tensor(dataset[i].image));
    out[i] = {positive_probability(logits, 0), dataset[i].class_label};
  });
  return out;
}

Split stratified_split(const Dataset& dataset, double train_fraction, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[dataset[i].class_label].push_back(i);
  Split split;
  for (auto& [cls, members] : by_class) {
    const std::size_t n = members.size();
    if (n < 2) throw std::invalid_argument("stratified_split: class " + std::to_string(cls) + " has fewer than 2 samples");
    const auto perm = shuffled(n, derive_seed(seed, static_cast<std::uint64_t>(cls)));
    std::size_t n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    for (std::size_t t = 0; t < n; ++t) (t < n_train ? split.train : split.test).push_back(members[perm[t]]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

std::vector<ReportRow> SplitEvaluation::rows(const std::string& task) const {
  std::vector<ReportRow> out;
  for (const auto& name : kClassificationMetrics) {
    auto it = values.find(name);
    if (it == values.end()) continue;
    const auto s = summarize(it->second);
    out.push_back({task, name, s.mean, s.std});
  }
  return out;
}

SplitEvaluation repeated_split_eval(const Dataset& dataset, const Checkpoint* encoder, const RunConfig& config) {
  config.validate();
  SplitEvaluation eval;
  for (int r = 0; r < config.eval.repeats; ++r) {
    const Split split = stratified_split(dataset, config.eval.train_fraction, stream_seed(config.seed, kSplit, r));
    Dataset train, test;
    for (auto i : split.train) train.push_back(dataset[i]);
    for (auto i : split.test) test.push_back(dataset[i]);
    RunConfig run = config;
    run.seed = derive_seed(config.seed, kSplit, 1000 + r);
    const auto model = finetune(train, encoder, run);
    const auto preds = predict(model.params, test);
    const auto m = classification_metrics(preds);
    double area = std::numeric_limits<double>::quiet_NaN();
    try {
      area = 100.0 * auc(preds);
    } catch (const MetricError&) {
    }
    eval.values["AUC"].push_back(area);
    eval.values["ACC"].push_back(m.acc);
    eval.values["SEN"].push_back(m.sen);
    eval.values["SPE"].push_back(m.spe);
    eval.values["F1"].push_back(m.f1);
    emit(config, "split " + std::to_string(r + 1) + "/" + std::to_string(config.eval.repeats) + " ACC " + fmt(m.acc) +
                     " AUC " + fmt(area));
  }
  return eval;
}

double soft_dice(const Tensor& probs, const Tensor& onehot) { return -dice_loss(probs, onehot).item(); }

PretextEvaluation evaluate_pretext(const ParameterStore& params, const Dataset& dataset, PretextTasks tasks,
                                   const ModelConfig& model) {
  const std::size_t n = dataset.size();
  PretextEvaluation out;
  const bool rec = tasks != PretextTasks::SegOnly, seg = tasks != PretextTasks::RecOnly;
  if (seg) out.soft_dice.assign(n, 0.0);
  if (rec) out.ssim.assign(n, 0.0), out.mae.assign(n, 0.0), out.nmi.assign(n, 0.0);
  parallel_for(n, [&](std::size_t i) {
    NoGradGuard guard;
    const auto& s = dataset[i];
    const auto y = pretext_forward(params, to_tensor(s.image), tasks, model.seg_head_norm);
    if (seg) out.soft_dice[i] = soft_dice(y.segmentation, one_hot_batch({&s.labels}));
    if (rec) {
      const auto m = reconstruction_metrics(s.image, from_tensor(y.reconstruction, s.image.grid));
      out.ssim[i] = m.ssim;
      out.mae[i] = m.mae;
      out.nmi[i] = m.nmi;
    }
  });
  return out;
}

std::vector<ReportRow> run_ablation(const Dataset& source, const Dataset& holdout, const Dataset& target,
                                    const RunConfig& config, const AblationConfig& ablation) {
  std::vector<ReportRow> rows;
  std::map<std::pair<int, double>, Checkpoint> pretext_cache;
  std::map<std::pair<int, double>, ParameterStore> param_cache;
  auto pretext_run = [&](PretextTasks tasks, double fraction) -> const ParameterStore& {
    const auto key = std::make_pair(static_cast<int>(tasks), fraction);
    auto it = param_cache.find(key);
    if (it != param_cache.end()) return it->second;
    RunConfig run = config;
    run.pretext.tasks = tasks;
    run.pretext.fraction = fraction;
    emit(config, "pretext " + to_string(tasks) + " fraction " + fmt(fraction));
    return param_cache.emplace(key, pretrain(source, run).params).first->second;
  };

  if (ablation.run_variants) {
    const std::pair<const char*, PretextTasks> variants[] = {
        {"BAPM", PretextTasks::Both}, {"BAPM-R", PretextTasks::RecOnly}, {"BAPM-S", PretextTasks::SegOnly}};
    for (const auto& [name, tasks] : variants) {
      const Checkpoint ckpt = snapshot(pretext_run(tasks, 1.0));
      RunConfig run = config;
      run.finetune.pretrained = true;
      emit(config, std::string("variant ") + name);
      for (auto& r : repeated_split_eval(target, &ckpt, run).rows(name)) rows.push_back(r);
    }
    RunConfig scratch = config;
    scratch.finetune.pretrained = false;
    emit(config, "variant BAPM-B");
    for (auto& r : repeated_split_eval(target, nullptr, scratch).rows("BAPM-B")) rows.push_back(r);
  }
  if (ablation.run_sweep) {
    for (double f : ablation.fractions) {
      const auto& params = pretext_run(PretextTasks::Both, f);
      const auto ev = evaluate_pretext(params, holdout, PretextTasks::Both, config.model);
      const std::string task = "fraction=" + fmt(f);
      const auto d = summarize(ev.soft_dice);
      const auto s = summarize(ev.ssim);
      rows.push_back({task, "soft_dice", d.mean, d.std});
      rows.push_back({task, "SSIM", s.mean, s.std});
    }
  }
  return rows;
}

void write_pretext_trace(const std::vector<LossReport>& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "stage,epoch,step,l_rec,l_seg,l_total\n";
  for (const auto& r : trace)
    out << "pretext," << r.epoch << ',' << r.step << ',' << (r.l_rec ? fmt(*r.l_rec) : "NA") << ','
        << (r.l_seg ? fmt(*r.l_seg) : "NA") << ',' << fmt(r.l_total) << '\n';
}

void write_finetune_trace(const std::vector<CeReport>& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "stage,epoch,step,l_ce\n";
  for (const auto& r : trace) out << "finetune," << r.epoch << ',' << r.step << ',' << fmt(r.l_ce) << '\n';
}

void write_report(const std::vector<ReportRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "task,metric,mean,std\n";
  for (const auto& r : rows) out << r.task << ',' << r.metric << ',' << fmt(r.mean) << ',' << fmt(r.std) << '\n';
}

Volume reconstruct_volume(const ParameterStore& params, const Volume& image) {
  if (!params.contains("decoder_rec.block1.deconv.weight"))
    throw std::invalid_argument("checkpoint has no reconstruction decoder");
  const auto [padded, record] = pad_to_multiple(image, 16);
  NoGradGuard guard;
  const auto pair = split_features(encoder_forward(params, to_tensor(padded)));
  const Tensor rec = decoder_forward(params, pair.rec, Head::Reconstruction);
  return crop(from_tensor(rec, padded.grid), record);
}

SegmentationOutput segment_volume(const ParameterStore& params, const Volume& image, bool seg_head_norm) {
  if (!params.contains("decoder_seg.block1.deconv.weight"))
    throw std::invalid_argument("checkpoint has no segmentation decoder");
  const auto [padded, record] = pad_to_multiple(image, 16);
  NoGradGuard guard;
  const auto pair = split_features(encoder_forward(params, to_tensor(padded)));
  const Tensor probs = decoder_forward(params, pair.seg, Head::Segmentation, seg_head_norm);
  SegmentationOutput out;
  for (int c = 0; c < kTissueClasses; ++c) out.probabilities.push_back(crop(from_tensor(probs, padded.grid, 0, c), record));
  out.labels = LabelVolume(out.probabilities[0].grid, 0);
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    int best = 0;
    for (int c = 1; c < kTissueClasses; ++c)
      if (out.probabilities[c].data[i] > out.probabilities[best].data[i]) best = c;
    out.labels.data[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace bapm
