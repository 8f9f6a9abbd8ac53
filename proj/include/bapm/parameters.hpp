#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bapm/tensor.hpp"

namespace bapm {

struct Parameter {
  std::string name;
  Tensor value;
  bool frozen = false;
};

/// Insertion-ordered set of named trainable tensors. Names are dotted paths;
/// a prefix such as "encoder." selects a sub-module.
class ParameterStore {
 public:
  Tensor add(std::string name, Tensor value);

  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);
  Parameter& entry(std::string_view name);

  std::vector<std::string> names(std::string_view prefix = {}) const;
  std::size_t size() const { return params_.size(); }
  std::size_t element_count(std::string_view prefix = {}) const;

  /// Frozen parameters are excluded from gradient recording and updates.
  void set_frozen(std::string_view prefix, bool frozen);
  void zero_grad();

  /// FNV-1a over names, shapes and raw value bytes of the selected entries.
  std::uint64_t hash(std::string_view prefix = {}) const;

  std::vector<Parameter>& entries() { return params_; }
  const std::vector<Parameter>& entries() const { return params_; }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline bool has_prefix(std::string_view name, std::string_view prefix) {
  return name.substr(0, prefix.size()) == prefix;
}

}  // namespace bapm
