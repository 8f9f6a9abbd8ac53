#pragma once

#include <filesystem>
#include <vector>

#include "bapm/phantom.hpp"
#include "bapm/training.hpp"

namespace bapm {

inline constexpr const char* kManifestName = "manifest.csv";

/// Writes `<id>_img.nii`, `<id>_lab.nii` per sample and `manifest.csv` (`id,class,seed`).
/// Ids are `phantom_0000`, `phantom_0001`, ...
void write_phantom_dataset(const std::vector<PhantomSample>& samples, const std::filesystem::path& dir);

/// Reads a directory written by write_phantom_dataset (or laid out the same way).
/// Label files are optional; a missing one leaves the sample unlabeled.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace bapm
