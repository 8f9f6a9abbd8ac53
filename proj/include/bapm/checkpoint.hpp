#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bapm/parameters.hpp"

namespace bapm {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[9] = "BAPMCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named float32 tensors plus string metadata. Entry order is preserved on
/// disk; metadata is written sorted by key, so equal states give equal bytes.
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> entries;
  std::map<std::string, std::string> metadata;

  const Tensor* find(std::string_view name) const;
};

Checkpoint snapshot(const ParameterStore& params, std::map<std::string, std::string> metadata = {});

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
void save_checkpoint(const ParameterStore& params, const std::map<std::string, std::string>& metadata,
                     const std::filesystem::path& path);

/// Loads every entry whose name starts with `prefix` (all when empty).
/// Metadata is always loaded.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::string_view prefix = {});

/// Copies every `prefix` parameter of `params` from the checkpoint. Throws
/// when a selected parameter is missing or has a different shape. Returns the
/// number of tensors copied.
std::size_t load_into(ParameterStore& params, const Checkpoint& checkpoint, std::string_view prefix);

}  // namespace bapm
