#include "ufcmil/bagio.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace ufcmil {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

std::vector<char> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const fs::path& path, const std::vector<char>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

constexpr std::size_t kHeaderBytes = 16;

}  // namespace

void write_feature_file(const fs::path& path, const Tensor& features) {
  if (features.rank() != 2) throw ShapeError("feature matrix must be rank 2");
  std::vector<char> bytes(kFeatureMagic, kFeatureMagic + 4);
  bytes.reserve(kHeaderBytes + 4 * features.numel());
  put_u32(bytes, kFeatureVersion);
  put_u32(bytes, static_cast<std::uint32_t>(features.rows()));
  put_u32(bytes, static_cast<std::uint32_t>(features.cols()));
  for (float v : features.data()) put_u32(bytes, std::bit_cast<std::uint32_t>(v));
  write_all(path, bytes);
}

Tensor read_feature_file(const fs::path& path) {
  const auto bytes = read_all(path);
  const std::string name = path.string();
  if (bytes.size() < kHeaderBytes)
    throw DataError(name + ": truncated header (" + std::to_string(bytes.size()) +
                    " of 16 bytes)");
  if (std::memcmp(bytes.data(), kFeatureMagic, 4) != 0)
    throw DataError(name + ": bad magic, expected UFCF");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kFeatureVersion)
    throw DataError(name + ": unsupported feature file version " + std::to_string(version));
  const std::size_t n = get_u32(bytes.data() + 8);
  const std::size_t d = get_u32(bytes.data() + 12);
  if (n == 0 || d == 0) throw DataError(name + ": empty feature matrix");
  const std::size_t expected = kHeaderBytes + 4 * n * d;
  if (bytes.size() < expected)
    throw DataError(name + ": truncated, expected " + std::to_string(expected) +
                    " bytes for n=" + std::to_string(n) + " d=" + std::to_string(d) +
                    ", found " + std::to_string(bytes.size()));
  if (bytes.size() > expected)
    throw DataError(name + ": " + std::to_string(bytes.size() - expected) +
                    " trailing bytes after n=" + std::to_string(n) +
                    " d=" + std::to_string(d) + " payload");
  Tensor t({n, d});
  for (std::size_t i = 0; i < n * d; ++i)
    t[i] = std::bit_cast<float>(get_u32(bytes.data() + kHeaderBytes + 4 * i));
  if (!t.all_finite()) throw DataError(name + ": non-finite feature value");
  return t;
}

void write_label_file(const fs::path& path, const std::vector<std::uint8_t>& labels) {
  write_all(path, std::vector<char>(labels.begin(), labels.end()));
}

std::vector<std::uint8_t> read_label_file(const fs::path& path, std::size_t expected) {
  const auto bytes = read_all(path);
  if (bytes.size() != expected)
    throw DataError(path.string() + ": expected " + std::to_string(expected) +
                    " label bytes, found " + std::to_string(bytes.size()));
  std::vector<std::uint8_t> out(bytes.begin(), bytes.end());
  for (auto v : out)
    if (v > 1) throw DataError(path.string() + ": instance labels must be 0 or 1");
  return out;
}

DatasetManifest read_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path.string());
  json j;
  try {
    in >> j;
    DatasetManifest m;
    m.version = j.at("version").get<std::uint32_t>();
    if (m.version != kManifestVersion)
      throw DataError("unsupported manifest version " + std::to_string(m.version));
    m.feature_dim = j.at("feature_dim").get<std::size_t>();
    m.levels = j.at("levels").get<std::size_t>();
    m.branching = j.at("branching").get<std::size_t>();
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.sample_id = je.at("sample_id").get<std::string>();
      e.label = je.at("label").get<int>();
      e.split = je.value("split", "train");
      for (const auto& jl : je.at("levels")) {
        ManifestLevel l;
        l.path = jl.at("path").get<std::string>();
        l.labels_path = jl.value("labels", "");
        l.grid_w = jl.at("grid_w").get<std::size_t>();
        l.grid_h = jl.at("grid_h").get<std::size_t>();
        l.mpp = jl.value("mpp", 0.0);
        e.levels.push_back(std::move(l));
      }
      if (e.levels.size() != m.levels)
        throw DataError("manifest entry '" + e.sample_id + "' lists " +
                        std::to_string(e.levels.size()) + " levels, expected " +
                        std::to_string(m.levels));
      m.entries.push_back(std::move(e));
    }
    return m;
  } catch (const json::exception& ex) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + ex.what());
  }
}

void write_manifest(const DatasetManifest& m, const fs::path& manifest_path) {
  json j;
  j["version"] = m.version;
  j["feature_dim"] = m.feature_dim;
  j["levels"] = m.levels;
  j["branching"] = m.branching;
  j["entries"] = json::array();
  for (const auto& e : m.entries) {
    json je;
    je["sample_id"] = e.sample_id;
    je["label"] = e.label;
    je["split"] = e.split;
    je["levels"] = json::array();
    for (const auto& l : e.levels) {
      json jl{{"path", l.path}, {"grid_w", l.grid_w}, {"grid_h", l.grid_h}, {"mpp", l.mpp}};
      if (!l.labels_path.empty()) jl["labels"] = l.labels_path;
      je["levels"].push_back(std::move(jl));
    }
    j["entries"].push_back(std::move(je));
  }
  const std::string text = j.dump(1) + "\n";
  write_all(manifest_path, std::vector<char>(text.begin(), text.end()));
}

MultiResBag load_bag(const DatasetManifest& manifest, const ManifestEntry& entry,
                     const fs::path& root) {
  MultiResBag bag;
  bag.sample_id = entry.sample_id;
  bag.label = entry.label;
  bag.split = entry.split;
  bag.branching = manifest.branching;
  for (std::size_t r = 0; r < entry.levels.size(); ++r) {
    const auto& ml = entry.levels[r];
    ResolutionLevel lv;
    lv.mpp = ml.mpp;
    lv.grid_w = ml.grid_w;
    lv.grid_h = ml.grid_h;
    lv.depth = r;
    const fs::path fpath = root / ml.path;
    lv.features = read_feature_file(fpath);
    if (lv.features.rows() != lv.num_patches() || lv.features.cols() != manifest.feature_dim)
      throw DataError(fpath.string() + ": header (n=" + std::to_string(lv.features.rows()) +
                      ", d=" + std::to_string(lv.features.cols()) +
                      ") does not match manifest (n=" + std::to_string(lv.num_patches()) +
                      ", d=" + std::to_string(manifest.feature_dim) + ")");
    if (!ml.labels_path.empty())
      lv.instance_labels = read_label_file(root / ml.labels_path, lv.num_patches());
    bag.levels.push_back(std::move(lv));
  }
  bag.validate();
  return bag;
}

ManifestEntry save_bag(const MultiResBag& bag, const fs::path& root) {
  bag.validate();
  ManifestEntry e;
  e.sample_id = bag.sample_id;
  e.label = bag.label;
  e.split = bag.split;
  for (std::size_t r = 0; r < bag.levels.size(); ++r) {
    const auto& lv = bag.levels[r];
    ManifestLevel ml;
    const std::string tag = std::to_string(r + 1);
    ml.path = bag.sample_id + "/features_r" + tag + ".ufcf";
    ml.grid_w = lv.grid_w;
    ml.grid_h = lv.grid_h;
    ml.mpp = lv.mpp;
    write_feature_file(root / ml.path, lv.features);
    if (!lv.instance_labels.empty()) {
      ml.labels_path = bag.sample_id + "/labels_r" + tag + ".u8";
      write_label_file(root / ml.labels_path, lv.instance_labels);
    }
    e.levels.push_back(std::move(ml));
  }
  return e;
}

std::vector<MultiResBag> Dataset::split(const std::string& name) const {
  std::vector<MultiResBag> out;
  for (const auto& b : bags)
    if (name.empty() || b.split == name) out.push_back(b);
  return out;
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.manifest = read_manifest(dir / "manifest.json");
  for (const auto& e : ds.manifest.entries)
    ds.bags.push_back(load_bag(ds.manifest, e, dir));
  return ds;
}

void save_dataset(const std::vector<MultiResBag>& bags, const fs::path& dir) {
  if (bags.empty()) throw DataError("save_dataset: no bags");
  DatasetManifest m;
  m.feature_dim = bags.front().dim();
  m.levels = bags.front().num_levels();
  m.branching = bags.front().branching;
  for (const auto& b : bags) {
    if (b.dim() != m.feature_dim || b.num_levels() != m.levels)
      throw DataError("save_dataset: bag '" + b.sample_id + "' differs in shape");
    m.entries.push_back(save_bag(b, dir));
  }
  write_manifest(m, dir / "manifest.json");
}

}  // namespace ufcmil
