#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "bapm/checkpoint.hpp"
#include "bapm/config.hpp"
#include "bapm/dataset.hpp"
#include "bapm/metrics.hpp"
#include "bapm/nifti.hpp"
#include "bapm/rng.hpp"
#include "bapm/training.hpp"

namespace fs = std::filesystem;
using namespace bapm;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string seed;
  bool quiet = false;
};

std::string key_listing() {
  std::string out = "Configuration keys (set in --config or with --set key=value):\n";
  Settings defaults;
  for (const auto& k : config_keys()) out += "  " + k.key + " = " + k.get(defaults) + "\n      " + k.help + "\n";
  return out;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value run-config file");
  cmd->add_option("--set", c.overrides, "override one key (key=value); repeatable");
  cmd->add_option("--seed", c.seed, "run seed; overrides the file");
  cmd->add_flag("--quiet", c.quiet, "suppress progress output");
  cmd->footer(key_listing());
}

Settings resolve(const Common& c) {
  Settings s;
  if (!c.config_path.empty()) load_config_file(s, c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(kv, "--set expects key=value");
    apply_setting(s, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!c.seed.empty()) apply_setting(s, "seed", c.seed);
  s.validate();
  if (!c.quiet) {
    s.run.log = [](const std::string& line) { std::cerr << line << '\n'; };
    std::cerr << "# resolved configuration\n" << render_config(s);
  }
  return s;
}

std::map<std::string, std::string> metadata(const Settings& s, PretextTasks tasks, const std::string& stage) {
  auto m = model_metadata(s.run.model, tasks);
  m["stage"] = stage;
  m["seed"] = std::to_string(s.run.seed);
  return m;
}

struct LoadedModel {
  ParameterStore params;
  ModelConfig config;
};

LoadedModel load_pretext_model(const fs::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  LoadedModel m;
  m.config = model_config_from_metadata(ckpt.metadata);
  m.params = build_pretext(m.config, tasks_from_metadata(ckpt.metadata), 0);
  load_into(m.params, ckpt, "");
  return m;
}

std::string stem(const std::string& path) { return fs::path(path).stem().string(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Brain-anatomy prior modelling: pretext training, transfer and evaluation on 3D volumes"};
  app.require_subcommand(1);
  Common common;

  // phantom-gen
  auto* gen = app.add_subcommand("phantom-gen", "write synthetic head phantoms with tissue labels");
  int gen_count = 0;
  std::string gen_out;
  gen->add_option("--count", gen_count, "number of phantoms (classes alternate 0,1)")->required()->check(CLI::NonNegativeNumber);
  gen->add_option("--out", gen_out, "output directory")->required();
  add_common(gen, common);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "train the encoder with reconstruction and segmentation heads");
  std::string pre_data, pre_out, pre_trace;
  pre->add_option("--data", pre_data, "dataset directory with manifest.csv")->required();
  pre->add_option("--out", pre_out, "checkpoint path")->required();
  pre->add_option("--trace", pre_trace, "loss trace CSV (default: <out>.trace.csv)");
  add_common(pre, common);

  // finetune
  auto* fin = app.add_subcommand("finetune", "train the classifier on top of a frozen pretrained encoder");
  std::string fin_data, fin_ckpt, fin_out, fin_trace;
  fin->add_option("--data", fin_data, "labelled dataset directory")->required();
  fin->add_option("--ckpt", fin_ckpt, "pretext checkpoint providing the encoder");
  fin->add_option("--out", fin_out, "checkpoint path")->required();
  fin->add_option("--trace", fin_trace, "loss trace CSV (default: <out>.trace.csv)");
  add_common(fin, common);

  // reconstruct
  auto* rec = app.add_subcommand("reconstruct", "run the reconstruction head on a volume");
  std::string rec_ckpt, rec_in, rec_out;
  rec->add_option("--ckpt", rec_ckpt, "pretext checkpoint")->required();
  rec->add_option("--in", rec_in, "input NIfTI")->required();
  rec->add_option("--out", rec_out, "output NIfTI")->required();
  add_common(rec, common);

  // segment
  auto* seg = app.add_subcommand("segment", "predict a tissue label map");
  std::string seg_ckpt, seg_in, seg_out, seg_probs;
  seg->add_option("--ckpt", seg_ckpt, "pretext checkpoint")->required();
  seg->add_option("--in", seg_in, "input NIfTI")->required();
  seg->add_option("--out", seg_out, "output label NIfTI")->required();
  seg->add_option("--probs", seg_probs, "also write <prefix>_class{0..3}.nii probability maps");
  add_common(seg, common);

  // evaluate
  auto* eva = app.add_subcommand("evaluate", "score volume pairs or a classification task");
  std::string eva_task, eva_out = "metrics.csv", eva_data, eva_ckpt;
  std::vector<std::string> eva_pred, eva_truth;
  eva->add_option("--task", eva_task, "segmentation, reconstruction or classification")
      ->required()
      ->check(CLI::IsMember({"segmentation", "reconstruction", "classification"}));
  eva->add_option("--pred", eva_pred, "predicted volumes (pairs with --truth)");
  eva->add_option("--truth", eva_truth, "reference volumes");
  eva->add_option("--data", eva_data, "classification dataset directory");
  eva->add_option("--ckpt", eva_ckpt, "pretext checkpoint for the frozen encoder");
  eva->add_option("--out", eva_out, "metrics CSV");
  add_common(eva, common);

  // ablate
  auto* abl = app.add_subcommand("ablate", "variant matrix and pretext-fraction sweep");
  std::string abl_source, abl_holdout, abl_target, abl_out = "ablation.csv";
  bool abl_no_variants = false, abl_no_sweep = false;
  abl->add_option("--source", abl_source, "pretext dataset (default: generated phantoms)");
  abl->add_option("--holdout", abl_holdout, "held-out pretext dataset (default: generated)");
  abl->add_option("--target", abl_target, "classification dataset (default: generated)");
  abl->add_option("--out", abl_out, "report CSV");
  abl->add_flag("--no-variants", abl_no_variants, "skip the variant matrix");
  abl->add_flag("--no-sweep", abl_no_sweep, "skip the fraction sweep");
  add_common(abl, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    const Settings s = resolve(common);

    if (gen->parsed()) {
      write_phantom_dataset(generate_samples(static_cast<std::size_t>(gen_count), s.phantom, s.run.seed), gen_out);
    } else if (pre->parsed()) {
      const auto data = load_dataset(pre_data);
      const auto result = pretrain(data, s.run);
      save_checkpoint(result.params, metadata(s, s.run.pretext.tasks, "pretext"), pre_out);
      write_pretext_trace(result.trace, pre_trace.empty() ? pre_out + ".trace.csv" : pre_trace);
    } else if (fin->parsed()) {
      const auto data = load_dataset(fin_data);
      std::optional<Checkpoint> enc;
      if (s.run.finetune.pretrained) {
        if (fin_ckpt.empty()) throw ConfigError("train.finetune.pretrained", "true requires --ckpt");
        enc = load_checkpoint(fin_ckpt, "encoder.");
        const auto cfg = model_config_from_metadata(enc->metadata);
        if (cfg.width_factor != s.run.model.width_factor)
          throw ConfigError("model.width_factor", "does not match the checkpoint");
      }
      const auto result = finetune(data, enc ? &*enc : nullptr, s.run);
      save_checkpoint(result.params, metadata(s, s.run.pretext.tasks, "finetune"), fin_out);
      write_finetune_trace(result.trace, fin_trace.empty() ? fin_out + ".trace.csv" : fin_trace);
    } else if (rec->parsed()) {
      const auto m = load_pretext_model(rec_ckpt);
      write_nifti(reconstruct_volume(m.params, read_nifti(rec_in)), rec_out);
    } else if (seg->parsed()) {
      const auto m = load_pretext_model(seg_ckpt);
      const auto out = segment_volume(m.params, read_nifti(seg_in), m.config.seg_head_norm);
      write_nifti(out.labels, seg_out);
      if (!seg_probs.empty())
        for (int c = 0; c < kTissueClasses; ++c)
          write_nifti(out.probabilities[c], seg_probs + "_class" + std::to_string(c) + ".nii");
    } else if (eva->parsed()) {
      std::vector<ReportRow> rows;
      if (eva_task == "classification") {
        if (eva_data.empty()) throw CLI::RequiredError("--data");
        const auto data = load_dataset(eva_data);
        std::optional<Checkpoint> enc;
        if (s.run.finetune.pretrained) {
          if (eva_ckpt.empty()) throw ConfigError("train.finetune.pretrained", "true requires --ckpt");
          enc = load_checkpoint(eva_ckpt, "encoder.");
        }
        const auto ev = repeated_split_eval(data, enc ? &*enc : nullptr, s.run);
        for (const auto& name : kClassificationMetrics) {
          const auto& v = ev.values.at(name);
          for (std::size_t r = 0; r < v.size(); ++r) rows.push_back({"split" + std::to_string(r + 1), name, v[r], 0.0});
        }
        for (auto& r : ev.rows("summary")) rows.push_back(r);
      } else {
        if (eva_pred.empty() || eva_pred.size() != eva_truth.size())
          throw CLI::ValidationError("--pred/--truth", "need the same non-zero number of files");
        for (std::size_t i = 0; i < eva_pred.size(); ++i) {
          const std::string task = stem(eva_pred[i]);
          if (eva_task == "segmentation") {
            const auto m = segmentation_metrics(read_nifti_labels(eva_pred[i]), read_nifti_labels(eva_truth[i]), s.hd_percentile);
            static const char* names[] = {"background", "WM", "GM", "CSF"};
            for (int c = 1; c < kTissueClasses; ++c) {
              rows.push_back({task, std::string("Dice_") + names[c], m.per_class[c].dice, 0.0});
              rows.push_back({task, std::string("ASD_") + names[c], m.per_class[c].asd, 0.0});
              rows.push_back({task, std::string("HD_") + names[c], m.per_class[c].hd, 0.0});
            }
            rows.push_back({task, "Dice", m.dice, 0.0});
            rows.push_back({task, "ASD", m.asd, 0.0});
            rows.push_back({task, "HD", m.hd, 0.0});
          } else {
            const auto m = reconstruction_metrics(read_nifti(eva_truth[i]), read_nifti(eva_pred[i]), s.recon);
            rows.push_back({task, "MAE", m.mae, 0.0});
            rows.push_back({task, "NMI", m.nmi, 0.0});
            rows.push_back({task, "SSIM", m.ssim, 0.0});
          }
        }
      }
      write_report(rows, eva_out);
    } else if (abl->parsed()) {
      Dataset source, holdout, target;
      if (!abl_source.empty()) {
        source = load_dataset(abl_source);
      } else {
        auto all = generate_samples(s.ablate.source_count + s.ablate.holdout_count, s.phantom, s.run.seed);
        source = to_dataset({all.begin(), all.begin() + s.ablate.source_count});
        holdout = to_dataset({all.begin() + s.ablate.source_count, all.end()});
      }
      if (!abl_holdout.empty()) holdout = load_dataset(abl_holdout);
      if (holdout.empty()) throw CLI::RequiredError("--holdout");
      target = abl_target.empty()
                   ? to_dataset(generate_samples(s.ablate.target_count, s.phantom, derive_seed(s.run.seed, 0x7a)))
                   : load_dataset(abl_target);
      AblationConfig ac;
      ac.fractions = s.ablate.fractions;
      ac.run_variants = !abl_no_variants;
      ac.run_sweep = !abl_no_sweep;
      write_report(run_ablation(source, holdout, target, s.run, ac), abl_out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
