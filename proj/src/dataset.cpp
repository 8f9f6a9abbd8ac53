#include "bapm/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "bapm/nifti.hpp"

namespace bapm {

void write_phantom_dataset(const std::vector<PhantomSample>& samples, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / kManifestName);
  if (!manifest) throw std::runtime_error("cannot write " + (dir / kManifestName).string());
  manifest << "id,class,seed\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "phantom_%04zu", i);
    write_nifti(samples[i].intensity, dir / (std::string(id) + "_img.nii"));
    write_nifti(samples[i].labels, dir / (std::string(id) + "_lab.nii"));
    manifest << id << ',' << samples[i].class_label << ',' << samples[i].seed << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / kManifestName);
  if (!manifest) throw std::runtime_error("cannot read " + (dir / kManifestName).string());
  std::string line;
  std::getline(manifest, line);
  if (line.rfind("id,class", 0) != 0) throw std::runtime_error("manifest header must start with 'id,class'");
  Dataset out;
  int row = 1;
  while (std::getline(manifest, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream in(line);
    std::string id, cls;
    if (!std::getline(in, id, ',') || !std::getline(in, cls, ','))
      throw std::runtime_error("manifest row " + std::to_string(row) + " is malformed");
    DataSample s;
    s.id = id;
    try {
      s.class_label = std::stoi(cls);
    } catch (const std::exception&) {
      throw std::runtime_error("manifest row " + std::to_string(row) + ": bad class '" + cls + "'");
    }
    s.image = read_nifti(dir / (id + "_img.nii"));
    const auto lab = dir / (id + "_lab.nii");
    if (std::filesystem::exists(lab)) s.labels = read_nifti_labels(lab);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace bapm
