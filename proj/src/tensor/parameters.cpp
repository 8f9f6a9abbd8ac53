#include "bapm/parameters.hpp"

#include <cstring>

namespace bapm {

Tensor ParameterStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  value.set_requires_grad(true);
  index_.emplace(name, params_.size());
  params_.push_back(Parameter{std::move(name), std::move(value), false});
  return params_.back().value;
}

bool ParameterStore::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

Parameter& ParameterStore::entry(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return params_[it->second];
}

const Tensor& ParameterStore::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return params_[it->second].value;
}

Tensor& ParameterStore::get(std::string_view name) { return entry(name).value; }

std::vector<std::string> ParameterStore::names(std::string_view prefix) const {
  std::vector<std::string> out;
  for (const auto& p : params_)
    if (has_prefix(p.name, prefix)) out.push_back(p.name);
  return out;
}

std::size_t ParameterStore::element_count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (has_prefix(p.name, prefix)) n += p.value.numel();
  return n;
}

void ParameterStore::set_frozen(std::string_view prefix, bool frozen) {
  for (auto& p : params_) {
    if (!has_prefix(p.name, prefix)) continue;
    p.frozen = frozen;
    p.value.set_requires_grad(!frozen);
    if (frozen) p.value.clear_grad();
  }
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.value.clear_grad();
}

std::uint64_t ParameterStore::hash(std::string_view prefix) const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* bytes, std::size_t len) {
    const auto* b = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& p : params_) {
    if (!has_prefix(p.name, prefix)) continue;
    mix(p.name.data(), p.name.size());
    for (auto d : p.value.shape()) mix(&d, sizeof d);
    mix(p.value.data().data(), p.value.numel() * sizeof(float));
  }
  return h;
}

}  // namespace bapm
