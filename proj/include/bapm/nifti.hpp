#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "bapm/volume.hpp"

namespace bapm {

/// Failure reading or writing a NIfTI-1 file. `field()` names the header
/// field (or "payload"/"path") that caused it.
class NiftiError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, UnsupportedDatatype, UnsupportedFeature, BadHeader, Truncated, BadLabels };

  NiftiError(Kind kind, std::string field, const std::string& message)
      : std::runtime_error(message), kind_(kind), field_(std::move(field)) {}

  Kind kind() const { return kind_; }
  const std::string& field() const { return field_; }

 private:
  Kind kind_;
  std::string field_;
};

enum class NiftiDatatype : short { UInt8 = 2, Int16 = 4, Float32 = 16 };

/// Single-file, uncompressed NIfTI-1 ("n+1") with uint8, int16 or float32
/// voxels; anything else is rejected. Voxels are converted to float.
Volume read_nifti(const std::filesystem::path& path);
/// As read_nifti, additionally requiring every voxel to be a tissue label.
LabelVolume read_nifti_labels(const std::filesystem::path& path);

/// Writes float32 (intensities) or uint8 (labels), vox_offset 352, sform
/// from the grid affine.
void write_nifti(const Volume& volume, const std::filesystem::path& path);
void write_nifti(const LabelVolume& labels, const std::filesystem::path& path);

}  // namespace bapm
