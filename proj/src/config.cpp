#include "bapm/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace bapm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double to_double(const std::string& v) {
  std::size_t pos = 0;
  const double d = std::stod(v, &pos);
  if (pos != v.size() || !std::isfinite(d)) throw std::invalid_argument("not a finite number");
  return d;
}

long long to_int(const std::string& v) {
  std::size_t pos = 0;
  const long long i = std::stoll(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("not an integer");
  return i;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("expected true or false");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream in(v);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(trim(part));
  return out;
}

Dims to_dims(const std::string& v) {
  const auto parts = split_list(v);
  if (parts.size() == 1) {
    const int n = static_cast<int>(to_int(parts[0]));
    return {n, n, n};
  }
  if (parts.size() != 3) throw std::invalid_argument("expected N or X,Y,Z");
  return {static_cast<int>(to_int(parts[0])), static_cast<int>(to_int(parts[1])), static_cast<int>(to_int(parts[2]))};
}

std::string from_dims(const Dims& d) {
  if (d[0] == d[1] && d[1] == d[2]) return std::to_string(d[0]);
  return std::to_string(d[0]) + "," + std::to_string(d[1]) + "," + std::to_string(d[2]);
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

using S = Settings;

// Builders for the common value kinds.
template <class Access>
ConfigKey real_key(std::string key, std::string help, Access access) {
  return {std::move(key), std::move(help),
          [access](S& s, const std::string& v) { access(s) = to_double(v); },
          [access](const S& s) { return fmt(access(const_cast<S&>(s))); }};
}

template <class Access>
ConfigKey int_key(std::string key, std::string help, Access access) {
  return {std::move(key), std::move(help),
          [access](S& s, const std::string& v) { access(s) = static_cast<std::decay_t<decltype(access(s))>>(to_int(v)); },
          [access](const S& s) { return std::to_string(access(const_cast<S&>(s))); }};
}

template <class Access>
ConfigKey bool_key(std::string key, std::string help, Access access) {
  return {std::move(key), std::move(help), [access](S& s, const std::string& v) { access(s) = to_bool(v); },
          [access](const S& s) { return from_bool(access(const_cast<S&>(s))); }};
}

std::vector<ConfigKey> make_keys() {
  std::vector<ConfigKey> k;
  k.push_back({"seed", "run seed (unsigned 64-bit)",
               [](S& s, const std::string& v) {
                 std::size_t pos = 0;
                 s.run.seed = std::stoull(v, &pos);
                 if (pos != v.size() || v.empty() || v[0] == '-') throw std::invalid_argument("not an unsigned integer");
               },
               [](const S& s) { return std::to_string(s.run.seed); }});

  k.push_back(real_key("model.width_factor", "channel multiplier on the full-size architecture",
                       [](S& s) -> double& { return s.run.model.width_factor; }));
  k.push_back(int_key("model.num_classes", "downstream classes", [](S& s) -> int& { return s.run.model.num_classes; }));
  k.push_back({"model.input_size", "network input size, N or X,Y,Z (multiples of 16)",
               [](S& s, const std::string& v) { s.run.model.input_dims = to_dims(v); },
               [](const S& s) { return from_dims(s.run.model.input_dims); }});
  k.push_back(bool_key("model.seg_head_norm", "instance-normalise segmentation logits",
                       [](S& s) -> bool& { return s.run.model.seg_head_norm; }));
  k.push_back(real_key("model.norm_init_scale", "init gain for convolutions followed by instance norm",
                       [](S& s) -> double& { return s.run.model.norm_init_scale; }));
  k.push_back(real_key("model.output_init_scale", "init gain for linear output layers",
                       [](S& s) -> double& { return s.run.model.output_init_scale; }));

  k.push_back(bool_key("augment.enabled", "master switch for pretext augmentation",
                       [](S& s) -> bool& { return s.run.augment.enabled; }));
  k.push_back(real_key("augment.affine.prob", "probability of a random affine",
                       [](S& s) -> double& { return s.run.augment.affine_prob; }));
  k.push_back(real_key("augment.affine.rotation_deg", "max rotation per axis (degrees)",
                       [](S& s) -> double& { return s.run.augment.rotation_deg; }));
  k.push_back(real_key("augment.affine.scale_min", "min scale factor", [](S& s) -> double& { return s.run.augment.scale_min; }));
  k.push_back(real_key("augment.affine.scale_max", "max scale factor", [](S& s) -> double& { return s.run.augment.scale_max; }));
  k.push_back(real_key("augment.affine.translation", "max translation per axis (voxels)",
                       [](S& s) -> double& { return s.run.augment.translation; }));
  k.push_back(real_key("augment.blur.prob", "probability of Gaussian blur", [](S& s) -> double& { return s.run.augment.blur_prob; }));
  k.push_back(real_key("augment.blur.sigma_max", "max blur sigma (voxels)",
                       [](S& s) -> double& { return s.run.augment.blur_sigma_max; }));
  k.push_back(real_key("augment.noise.prob", "probability of additive noise",
                       [](S& s) -> double& { return s.run.augment.noise_prob; }));
  k.push_back(real_key("augment.noise.sigma_max", "max noise sigma as a fraction of the intensity range",
                       [](S& s) -> double& { return s.run.augment.noise_sigma_max; }));
  k.push_back(real_key("augment.bias.prob", "probability of a bias field", [](S& s) -> double& { return s.run.augment.bias_prob; }));
  k.push_back(int_key("augment.bias.order", "bias polynomial order", [](S& s) -> int& { return s.run.augment.bias_order; }));
  k.push_back(real_key("augment.bias.coeff_max", "max absolute bias coefficient",
                       [](S& s) -> double& { return s.run.augment.bias_coeff_max; }));
  k.push_back(real_key("augment.motion.prob", "probability of a motion artifact",
                       [](S& s) -> double& { return s.run.augment.motion_prob; }));
  k.push_back(int_key("augment.motion.max_movements", "max movements per artifact",
                      [](S& s) -> int& { return s.run.augment.motion_max_movements; }));
  k.push_back(real_key("augment.motion.rotation_deg", "max movement rotation (degrees)",
                       [](S& s) -> double& { return s.run.augment.motion_rotation_deg; }));
  k.push_back(real_key("augment.motion.translation", "max movement translation (voxels)",
                       [](S& s) -> double& { return s.run.augment.motion_translation; }));

  k.push_back(int_key("train.pretext.epochs", "pretext epochs", [](S& s) -> int& { return s.run.pretext.epochs; }));
  k.push_back(int_key("train.pretext.batch_size", "pretext batch size", [](S& s) -> int& { return s.run.pretext.batch_size; }));
  k.push_back(real_key("train.pretext.lr", "pretext Adam learning rate", [](S& s) -> double& { return s.run.pretext.lr; }));
  k.push_back(real_key("train.pretext.fraction", "fraction of the shuffled source set used",
                       [](S& s) -> double& { return s.run.pretext.fraction; }));
  k.push_back({"train.pretext.tasks", "both, rec_only or seg_only",
               [](S& s, const std::string& v) { s.run.pretext.tasks = parse_tasks(v); },
               [](const S& s) { return to_string(s.run.pretext.tasks); }});
  k.push_back(int_key("train.finetune.epochs", "fine-tune epochs", [](S& s) -> int& { return s.run.finetune.epochs; }));
  k.push_back(int_key("train.finetune.batch_size", "fine-tune batch size",
                      [](S& s) -> int& { return s.run.finetune.batch_size; }));
  k.push_back(real_key("train.finetune.lr", "fine-tune start learning rate", [](S& s) -> double& { return s.run.finetune.lr; }));
  k.push_back({"train.finetune.decay_epochs", "comma-separated epochs where the rate is multiplied by decay_factor",
               [](S& s, const std::string& v) {
                 s.run.finetune.decay_epochs.clear();
                 if (v.empty()) return;
                 for (const auto& p : split_list(v)) s.run.finetune.decay_epochs.push_back(static_cast<int>(to_int(p)));
               },
               [](const S& s) { return join(s.run.finetune.decay_epochs); }});
  k.push_back(real_key("train.finetune.decay_factor", "learning-rate decay multiplier",
                       [](S& s) -> double& { return s.run.finetune.decay_factor; }));
  k.push_back(bool_key("train.finetune.pretrained", "freeze a pretrained encoder (false trains from scratch)",
                       [](S& s) -> bool& { return s.run.finetune.pretrained; }));
  k.push_back(bool_key("train.finetune.duplicate_affine", "add one random-affine copy per sample per epoch",
                       [](S& s) -> bool& { return s.run.finetune.duplicate_affine; }));
  k.push_back(real_key("eval.train_fraction", "per-class training share of each split",
                       [](S& s) -> double& { return s.run.eval.train_fraction; }));
  k.push_back(int_key("eval.repeats", "independent splits", [](S& s) -> int& { return s.run.eval.repeats; }));

  k.push_back({"phantom.size", "phantom volume size, N or X,Y,Z",
               [](S& s, const std::string& v) { s.phantom.dims = to_dims(v); },
               [](const S& s) { return from_dims(s.phantom.dims); }});
  k.push_back(real_key("phantom.gm_thickness", "grey-matter shell thickness (fraction of size)",
                       [](S& s) -> double& { return s.phantom.gm_thickness; }));
  k.push_back(real_key("phantom.atrophy_delta", "relative shell thinning of class 1",
                       [](S& s) -> double& { return s.phantom.atrophy_delta; }));
  k.push_back(real_key("phantom.deformation_amplitude", "smooth deformation amplitude (voxels)",
                       [](S& s) -> double& { return s.phantom.deformation_amplitude; }));
  k.push_back(real_key("phantom.shape_jitter", "relative semi-axis jitter", [](S& s) -> double& { return s.phantom.shape_jitter; }));
  k.push_back(real_key("phantom.center_jitter", "centre jitter (voxels)", [](S& s) -> double& { return s.phantom.center_jitter; }));
  k.push_back(int_key("metrics.bins", "histogram bins for NMI", [](S& s) -> int& { return s.recon.bins; }));
  k.push_back(int_key("metrics.ssim_window", "SSIM window size", [](S& s) -> int& { return s.recon.ssim_window; }));
  k.push_back(real_key("metrics.hd_percentile", "Hausdorff percentile (100 = exact maximum)",
                       [](S& s) -> double& { return s.hd_percentile; }));

  k.push_back(int_key("ablate.source_count", "generated pretext phantoms", [](S& s) -> int& { return s.ablate.source_count; }));
  k.push_back(int_key("ablate.holdout_count", "generated held-out pretext phantoms",
                      [](S& s) -> int& { return s.ablate.holdout_count; }));
  k.push_back(int_key("ablate.target_count", "generated classification phantoms",
                      [](S& s) -> int& { return s.ablate.target_count; }));
  k.push_back({"ablate.fractions", "comma-separated pretext fractions for the sweep",
               [](S& s, const std::string& v) {
                 s.ablate.fractions.clear();
                 for (const auto& p : split_list(v)) s.ablate.fractions.push_back(to_double(p));
               },
               [](const S& s) { return join(s.ablate.fractions); }});
  return k;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = make_keys();
  return keys;
}

void apply_setting(Settings& settings, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys()) {
    if (k.key != key) continue;
    try {
      k.set(settings, trim(value));
    } catch (const std::exception& e) {
      throw ConfigError(key, "invalid value '" + value + "' (" + e.what() + ")");
    }
    return;
  }
  throw ConfigError(key, "unknown configuration key");
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("", "line " + std::to_string(number) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("", "line " + std::to_string(number) + ": empty key");
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

void load_config_file(Settings& settings, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  for (const auto& [key, value] : parse_config_text(buf.str())) apply_setting(settings, key, value);
}

std::string render_config(const Settings& settings) {
  std::string out;
  for (const auto& k : config_keys()) out += k.key + " = " + k.get(settings) + "\n";
  return out;
}

void Settings::validate() const {
  auto guard = [](const char* prefix, const auto& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      std::string msg = e.what();
      // module messages start with the offending key when they know it
      const auto colon = msg.find(' ');
      const std::string first = msg.substr(0, colon);
      throw ConfigError(first.find('.') != std::string::npos ? first : prefix, msg);
    }
  };
  guard("train", [&] { run.validate(); });
  guard("phantom", [&] { phantom.validate(); });
  guard("metrics", [&] {
    if (recon.bins < 2) throw std::invalid_argument("metrics.bins must be at least 2");
    if (recon.ssim_window < 1 || recon.ssim_window % 2 == 0)
      throw std::invalid_argument("metrics.ssim_window must be a positive odd number");
    if (!(hd_percentile > 0.0 && hd_percentile <= 100.0))
      throw std::invalid_argument("metrics.hd_percentile must lie in (0, 100]");
  });
  guard("ablate", [&] {
    if (ablate.source_count < 1 || ablate.holdout_count < 1 || ablate.target_count < 4)
      throw std::invalid_argument("ablate.target_count must be at least 4 and the other counts positive");
    for (double f : ablate.fractions)
      if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument("ablate.fractions must lie in (0, 1]");
  });
}

}  // namespace bapm
