#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "bapm/parameters.hpp"

namespace bapm {

struct AdamOptions {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// Bias-corrected Adam. Frozen parameters and parameters without a gradient
/// are skipped entirely.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  void step(ParameterStore& params);
  void step(ParameterStore& params, float lr);

  long step_count() const { return step_; }
  const AdamOptions& options() const { return options_; }

 private:
  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };
  AdamOptions options_;
  long step_ = 0;
  std::unordered_map<std::string, Moments> state_;
};

}  // namespace bapm
