#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ufcmil/bag.hpp"

namespace ufcmil {

inline constexpr char kFeatureMagic[4] = {'U', 'F', 'C', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::uint32_t kManifestVersion = 1;

/// Writes an n×d matrix as a UFCF feature file.
void write_feature_file(const std::filesystem::path& path, const Tensor& features);

/// Reads a UFCF feature file. Throws DataError on bad magic, unsupported
/// version, truncation, trailing bytes or non-finite values.
Tensor read_feature_file(const std::filesystem::path& path);

void write_label_file(const std::filesystem::path& path,
                      const std::vector<std::uint8_t>& labels);
std::vector<std::uint8_t> read_label_file(const std::filesystem::path& path,
                                          std::size_t expected);

struct ManifestLevel {
  std::string path;         // relative to the manifest directory
  std::string labels_path;  // empty when instance labels are absent
  std::size_t grid_w = 0;
  std::size_t grid_h = 0;
  double mpp = 0.0;
};

struct ManifestEntry {
  std::string sample_id;
  int label = 0;
  std::string split;  // train | val | test
  std::vector<ManifestLevel> levels;
};

struct DatasetManifest {
  std::uint32_t version = kManifestVersion;
  std::size_t feature_dim = 0;
  std::size_t levels = 0;
  std::size_t branching = kQuadBranching;
  std::vector<ManifestEntry> entries;
};

DatasetManifest read_manifest(const std::filesystem::path& manifest_path);
void write_manifest(const DatasetManifest& manifest,
                    const std::filesystem::path& manifest_path);

/// Loads and validates one bag; feature headers must match the entry's grid
/// and the manifest's feature dimension.
MultiResBag load_bag(const DatasetManifest& manifest, const ManifestEntry& entry,
                     const std::filesystem::path& root);

/// Writes a bag's feature and label files under `root/<sample_id>/` and
/// returns the manifest entry describing them.
ManifestEntry save_bag(const MultiResBag& bag, const std::filesystem::path& root);

struct Dataset {
  DatasetManifest manifest;
  std::vector<MultiResBag> bags;

  /// Bags whose split tag equals `split` (all bags when `split` is empty).
  std::vector<MultiResBag> split(const std::string& name) const;
};

/// Reads `dir/manifest.json` and every bag it references.
Dataset load_dataset(const std::filesystem::path& dir);

/// Writes bags plus `dir/manifest.json`.
void save_dataset(const std::vector<MultiResBag>& bags, const std::filesystem::path& dir);

}  // namespace ufcmil
