#include "bapm/model.hpp"

#include <cmath>
#include <stdexcept>

#include "bapm/ops.hpp"
#include "bapm/rng.hpp"

namespace bapm {

namespace {

constexpr float kPreluInit = 0.25f;
constexpr int kKernel = 3;
constexpr int kDepthMultiple = 16;

// Kaiming-uniform bound for a leaky slope of 0.25.
double kaiming_bound(double fan_in) {
  const double a = kPreluInit;
  return std::sqrt(6.0 / ((1.0 + a * a) * fan_in));
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> dist(static_cast<float>(-bound), static_cast<float>(bound));
  for (float& v : t.data()) v = dist(rng);
  return t;
}

class Builder {
 public:
  Builder(ParameterStore& store, const ModelConfig& config, Rng& rng)
      : store_(store), config_(config), rng_(rng) {}

  void conv(const std::string& prefix, int cin, int cout, int k, bool normalized) {
    const double fan_in = static_cast<double>(cin) * k * k * k;
    const double gain = normalized ? config_.norm_init_scale : 1.0;
    store_.add(prefix + ".weight", uniform_tensor({cout, cin, k, k, k}, gain * kaiming_bound(fan_in), rng_));
    store_.add(prefix + ".bias", Tensor({cout}, 0.0f));
  }

  // Stride-2 transposed convolution: each output sees about (k/2)^3 taps per input channel.
  void deconv(const std::string& prefix, int cin, int cout, double gain) {
    const double taps = std::pow(kKernel / 2.0, 3);
    store_.add(prefix + ".weight",
               uniform_tensor({cin, cout, kKernel, kKernel, kKernel}, gain * kaiming_bound(cin * taps), rng_));
    store_.add(prefix + ".bias", Tensor({cout}, 0.0f));
  }

  void prelu(const std::string& prefix, int channels) {
    store_.add(prefix + ".slope", Tensor({channels}, kPreluInit));
  }

  void fc(const std::string& prefix, int in, int out) {
    store_.add(prefix + ".weight", uniform_tensor({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng_));
    store_.add(prefix + ".bias", Tensor({out}, 0.0f));
  }

 private:
  ParameterStore& store_;
  const ModelConfig& config_;
  Rng& rng_;
};

std::string block(const std::string& module, int i) { return module + ".block" + std::to_string(i); }

const char* decoder_module(Head head) {
  return head == Head::Reconstruction ? "decoder_rec" : "decoder_seg";
}

void add_encoder(Builder& b, const ModelConfig& config) {
  const auto ch = config.encoder_channels();
  int cin = 1;
  for (int i = 0; i < 8; ++i) {
    b.conv(block("encoder", i + 1) + ".conv", cin, ch[i], kKernel, true);
    b.prelu(block("encoder", i + 1) + ".prelu", ch[i]);
    cin = ch[i];
  }
  b.conv("encoder.skip.conv", ch[5], ch[7], 1, false);
}

void add_decoder(Builder& b, const ModelConfig& config, Head head) {
  const auto ch = config.decoder_channels(head);
  const std::string module = decoder_module(head);
  int cin = config.encoder_channels()[7] / 2;
  for (int i = 0; i < 4; ++i) {
    const bool last = i == 3;
    double gain = config.norm_init_scale;
    if (last) gain = head == Head::Segmentation && config.seg_head_norm ? config.norm_init_scale : config.output_init_scale;
    b.deconv(block(module, i + 1) + ".deconv", cin, ch[i], gain);
    if (!last) b.prelu(block(module, i + 1) + ".prelu", ch[i]);
    cin = ch[i];
  }
}

// Spatial size after `halvings` stride-2 convolutions (kernel 3, padding 1).
Dims halved(Dims d, int halvings) {
  for (int h = 0; h < halvings; ++h)
    for (int& n : d) n = (n + 1) / 2;
  return d;
}

bool is_single_voxel(const Dims& d) { return d[0] * d[1] * d[2] == 1; }

void add_branch(Builder& b, const ModelConfig& config, const std::string& prefix, int cin, int c) {
  // The predictor maps shrink to one voxel at small inputs, where instance norm is skipped and the
  // convolution needs the plain init gain.
  const Dims features = halved(config.input_dims, 4);
  b.conv(prefix + ".block_a.conv", cin, c, kKernel, !is_single_voxel(halved(features, 1)));
  b.prelu(prefix + ".block_a.prelu", c);
  b.conv(prefix + ".block_b.conv", c, c, kKernel, !is_single_voxel(halved(features, 2)));
  b.prelu(prefix + ".block_b.prelu", c);
  b.conv(prefix + ".skip.conv", c, c, 1, false);
}

bool single_voxel(const Tensor& t) { return t.shape()[2] * t.shape()[3] * t.shape()[4] == 1; }

// Instance statistics of a single voxel are degenerate; such maps skip the norm.
Tensor maybe_norm(const Tensor& t) { return single_voxel(t) ? t : instance_norm(t); }

Tensor conv_block(const ParameterStore& p, const std::string& prefix, const Tensor& x, int stride) {
  Conv3dOptions opt;
  opt.stride = {stride, stride, stride};
  Tensor y = conv3d(x, p.get(prefix + ".conv.weight"), p.get(prefix + ".conv.bias"), opt);
  return prelu(maybe_norm(y), p.get(prefix + ".prelu.slope"));
}

Tensor projection(const ParameterStore& p, const std::string& prefix, const Tensor& x, int stride) {
  Conv3dOptions opt;
  opt.stride = {stride, stride, stride};
  opt.padding = {0, 0, 0};
  return conv3d(x, p.get(prefix + ".conv.weight"), p.get(prefix + ".conv.bias"), opt);
}

}  // namespace

std::string to_string(PretextTasks tasks) {
  switch (tasks) {
    case PretextTasks::Both: return "both";
    case PretextTasks::RecOnly: return "rec_only";
    case PretextTasks::SegOnly: return "seg_only";
  }
  return "both";
}

PretextTasks parse_tasks(const std::string& text) {
  if (text == "both") return PretextTasks::Both;
  if (text == "rec_only") return PretextTasks::RecOnly;
  if (text == "seg_only") return PretextTasks::SegOnly;
  throw std::invalid_argument("pretext tasks must be both, rec_only or seg_only (got '" + text + "')");
}

int scaled_channels(int base, double width_factor) {
  return std::max(1, static_cast<int>(std::lround(base * width_factor)));
}

std::array<int, 8> ModelConfig::encoder_channels() const {
  std::array<int, 8> out{};
  for (int i = 0; i < 8; ++i) out[i] = scaled_channels(kEncoderChannels[i], width_factor);
  return out;
}

std::array<int, 4> ModelConfig::decoder_channels(Head head) const {
  return {scaled_channels(kDecoderChannels[0], width_factor), scaled_channels(kDecoderChannels[1], width_factor),
          scaled_channels(kDecoderChannels[2], width_factor), head == Head::Reconstruction ? 1 : kTissueClasses};
}

int ModelConfig::predictor_channels() const { return scaled_channels(kPredictorChannels, width_factor); }

void ModelConfig::validate() const {
  if (!(width_factor > 0.0) || !std::isfinite(width_factor))
    throw std::invalid_argument("model.width_factor must be positive");
  if (num_classes < 2) throw std::invalid_argument("model.num_classes must be at least 2");
  for (int d : input_dims)
    if (d <= 0 || d % kDepthMultiple != 0)
      throw std::invalid_argument("model.input_size: every dimension must be a positive multiple of 16");
  if (encoder_channels()[7] % 2 != 0)
    throw std::invalid_argument("model.width_factor: encoder output channels must be even");
  if (!(norm_init_scale > 0.0)) throw std::invalid_argument("model.norm_init_scale must be positive");
  if (!(output_init_scale > 0.0)) throw std::invalid_argument("model.output_init_scale must be positive");
}

ParameterStore build_pretext(const ModelConfig& config, PretextTasks tasks, std::uint64_t seed) {
  config.validate();
  ParameterStore store;
  Rng rng = make_rng(seed);
  Builder b(store, config, rng);
  add_encoder(b, config);
  if (tasks != PretextTasks::SegOnly) add_decoder(b, config, Head::Reconstruction);
  if (tasks != PretextTasks::RecOnly) add_decoder(b, config, Head::Segmentation);
  return store;
}

ParameterStore build_downstream(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ParameterStore store;
  Rng rng = make_rng(seed);
  Builder b(store, config, rng);
  add_encoder(b, config);
  const int half = config.encoder_channels()[7] / 2;
  const int c = config.predictor_channels();
  add_branch(b, config, "predictor.branch_rec", half, c);
  add_branch(b, config, "predictor.branch_seg", half, c);
  b.fc("predictor.fc", c, config.num_classes);
  return store;
}

Tensor encoder_forward(const ParameterStore& params, const Tensor& input) {
  if (input.rank() != 5 || input.shape()[1] != 1)
    throw ShapeError("encoder expects N×1×D×H×W input, got " + shape_str(input.shape()));
  for (int a = 2; a < 5; ++a)
    if (input.shape()[a] % kDepthMultiple != 0)
      throw ShapeError("encoder input spatial size " + shape_str(input.shape()) +
                       " must be divisible by 16; pad the volume first");
  Tensor x = input;
  for (int i = 1; i <= 4; ++i) x = conv_block(params, block("encoder", i), x, 2);
  const Tensor x4 = x;
  const Tensor x6 = add(conv_block(params, block("encoder", 6), conv_block(params, block("encoder", 5), x4, 1), 1), x4);
  const Tensor x7 = conv_block(params, block("encoder", 7), x6, 1);
  return add(conv_block(params, block("encoder", 8), x7, 1), projection(params, "encoder.skip", x6, 1));
}

FeaturePair split_features(const Tensor& encoder_out) {
  const auto c = encoder_out.shape()[1];
  if (c % 2 != 0) throw ShapeError("encoder output must have an even channel count, got " + std::to_string(c));
  return {split_channels(encoder_out, 0, c / 2), split_channels(encoder_out, c / 2, c / 2)};
}

Tensor decoder_forward(const ParameterStore& params, const Tensor& features, Head head, bool seg_head_norm) {
  const std::string module = decoder_module(head);
  Tensor x = features;
  for (int i = 1; i <= 3; ++i) {
    const std::string pre = block(module, i);
    x = conv_transpose3d(x, params.get(pre + ".deconv.weight"), params.get(pre + ".deconv.bias"));
    x = prelu(maybe_norm(x), params.get(pre + ".prelu.slope"));
  }
  const std::string pre = block(module, 4);
  x = conv_transpose3d(x, params.get(pre + ".deconv.weight"), params.get(pre + ".deconv.bias"));
  if (head == Head::Reconstruction) return x;
  return softmax_channels(seg_head_norm ? maybe_norm(x) : x);
}

Tensor predictor_branch_forward(const ParameterStore& params, const std::string& prefix, const Tensor& features) {
  const Tensor a = conv_block(params, prefix + ".block_a", features, 2);
  const Tensor b = conv_block(params, prefix + ".block_b", a, 2);
  return add(b, projection(params, prefix + ".skip", a, 2));
}

Tensor predictor_forward(const ParameterStore& params, const FeaturePair& pair) {
  const Tensor r = predictor_branch_forward(params, "predictor.branch_rec", pair.rec);
  const Tensor s = predictor_branch_forward(params, "predictor.branch_seg", pair.seg);
  return fully_connected(global_avg_pool(add(r, s)), params.get("predictor.fc.weight"), params.get("predictor.fc.bias"));
}

PretextOutput pretext_forward(const ParameterStore& params, const Tensor& input, PretextTasks tasks,
                              bool seg_head_norm) {
  const FeaturePair pair = split_features(encoder_forward(params, input));
  PretextOutput out;
  if (tasks != PretextTasks::SegOnly) out.reconstruction = decoder_forward(params, pair.rec, Head::Reconstruction);
  if (tasks != PretextTasks::RecOnly)
    out.segmentation = decoder_forward(params, pair.seg, Head::Segmentation, seg_head_norm);
  return out;
}

Tensor downstream_forward(const ParameterStore& params, const Tensor& input) {
  return predictor_forward(params, split_features(encoder_forward(params, input)));
}

namespace {

Grid padded_grid(const Grid& g, const Dims& dims, const Dims& before, int sign) {
  Grid out = g;
  out.dims = dims;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.affine[r][3] -= sign * g.affine[r][c] * before[c];
  return out;
}

template <class T>
Image<T> copy_window(const Image<T>& in, const Grid& grid, const Dims& offset) {
  // offset maps output voxel v to input voxel v + offset
  Image<T> out(grid);
  for (int k = 0; k < grid.dims[2]; ++k)
    for (int j = 0; j < grid.dims[1]; ++j)
      for (int i = 0; i < grid.dims[0]; ++i) {
        const int si = i + offset[0], sj = j + offset[1], sk = k + offset[2];
        if (in.grid.contains(si, sj, sk)) out.at(i, j, k) = in.at(si, sj, sk);
      }
  return out;
}

template <class T>
Image<T> crop_impl(const Image<T>& in, const PadRecord& r) {
  if (in.grid.dims != r.padded)
    throw std::invalid_argument("crop: volume dims do not match the padded dims of the record");
  return copy_window(in, padded_grid(in.grid, r.original, r.before, -1), r.before);
}

}  // namespace

std::pair<Volume, PadRecord> pad_to_multiple(const Volume& volume, int multiple) {
  if (multiple <= 0) throw std::invalid_argument("pad multiple must be positive");
  PadRecord r;
  r.original = volume.grid.dims;
  for (int a = 0; a < 3; ++a) {
    const int n = r.original[a];
    r.padded[a] = (n + multiple - 1) / multiple * multiple;
    r.before[a] = (r.padded[a] - n) / 2;
  }
  const Grid g = padded_grid(volume.grid, r.padded, r.before, 1);
  return {copy_window(volume, g, {-r.before[0], -r.before[1], -r.before[2]}), r};
}

Volume crop(const Volume& volume, const PadRecord& record) { return crop_impl(volume, record); }
LabelVolume crop(const LabelVolume& labels, const PadRecord& record) { return crop_impl(labels, record); }

}  // namespace bapm
