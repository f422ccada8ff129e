#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nvs/binary_io.hpp"
#include "nvs/error.hpp"
#include "nvs/parallel.hpp"
#include "nvs/render.hpp"
#include "nvs/rng.hpp"
#include "nvs/shapes.hpp"
#include "nvs/viewsphere.hpp"
#include "nvs/voxelgrid.hpp"

namespace nvs {

enum class Split { kTrain, kTest };

inline std::string_view split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw ParseError("unknown split '" + std::string(s) + "'");
}

struct DatasetConfig {
  std::map<std::string, int> per_class;  // class name -> sample count
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  int resolution = 16;

  static DatasetConfig uniform(int per_class_count) {
    DatasetConfig c;
    for (auto cls : kAllShapeClasses) c.per_class[std::string(class_name(cls))] = per_class_count;
    return c;
  }
};

inline nlohmann::json to_json(const DatasetConfig& c) {
  return {{"per_class", c.per_class},
          {"train_fraction", c.train_fraction},
          {"seed", c.seed},
          {"resolution", c.resolution}};
}

inline DatasetConfig dataset_config_from_json(const nlohmann::json& j,
                                              DatasetConfig c = DatasetConfig::uniform(40)) {
  if (j.contains("per_class")) c.per_class = j.at("per_class").get<std::map<std::string, int>>();
  if (j.contains("samples_per_class")) {
    const int n = j.at("samples_per_class").get<int>();
    for (auto& [_, v] : c.per_class) v = n;
  }
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  c.seed = j.value("seed", c.seed);
  c.resolution = j.value("resolution", c.resolution);
  return c;
}

struct ManifestEntry {
  std::string sample_id;
  std::string cls;
  std::uint64_t seed = 0;
  Split split = Split::kTrain;
  std::string grid_path;  // relative to the manifest's directory

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
  std::uint64_t dataset_seed = 0;
  int resolution = 16;
  std::vector<ManifestEntry> samples;

  std::size_t count(Split s) const {
    std::size_t n = 0;
    for (const auto& e : samples) n += e.split == s;
    return n;
  }

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

inline nlohmann::json to_json(const Manifest& m) {
  auto samples = nlohmann::json::array();
  for (const auto& e : m.samples) {
    samples.push_back({{"sample_id", e.sample_id},
                       {"class", e.cls},
                       {"seed", e.seed},
                       {"split", std::string(split_name(e.split))},
                       {"grid_path", e.grid_path}});
  }
  return {{"dataset_seed", m.dataset_seed}, {"resolution", m.resolution}, {"samples", samples}};
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    m.dataset_seed = j.at("dataset_seed").get<std::uint64_t>();
    m.resolution = j.at("resolution").get<int>();
    for (const auto& e : j.at("samples")) {
      m.samples.push_back({e.at("sample_id").get<std::string>(), e.at("class").get<std::string>(),
                           e.at("seed").get<std::uint64_t>(),
                           parse_split(e.at("split").get<std::string>()),
                           e.at("grid_path").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  const auto text = io::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest " + path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

inline std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

// Sample seeds and the split depend only on the dataset seed, so the manifest
// is reproducible and every grid can be regenerated from it.
inline Manifest plan_dataset(const DatasetConfig& cfg) {
  check_resolution(cfg.resolution);
  if (!(cfg.train_fraction >= 0.0 && cfg.train_fraction <= 1.0)) {
    throw InvalidArgument("train fraction must lie in [0, 1]");
  }
  Manifest m;
  m.dataset_seed = cfg.seed;
  m.resolution = cfg.resolution;
  int total = 0;
  for (auto cls : kAllShapeClasses) {
    const std::string name(class_name(cls));
    auto it = cfg.per_class.find(name);
    if (it == cfg.per_class.end()) continue;
    const int n = it->second;
    if (n < 0) throw InvalidArgument("negative sample count for class " + name);
    total += n;
    const auto class_hash = hash_name(name);
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng split_rng(derive_seed(cfg.seed, {class_hash, 0x5b117ULL}));
    shuffle(order, split_rng);
    const auto n_train = static_cast<int>(std::lround(cfg.train_fraction * n));
    std::vector<Split> split(static_cast<std::size_t>(n), Split::kTest);
    for (int i = 0; i < n_train; ++i) split[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = Split::kTrain;
    for (int i = 0; i < n; ++i) {
      char id[64];
      std::snprintf(id, sizeof(id), "%s_%04d", name.c_str(), i);
      ManifestEntry e;
      e.sample_id = id;
      e.cls = name;
      e.seed = derive_seed(cfg.seed, {class_hash, static_cast<std::uint64_t>(i)});
      e.split = split[static_cast<std::size_t>(i)];
      e.grid_path = "grids/" + e.sample_id + ".vxg";
      m.samples.push_back(std::move(e));
    }
  }
  for (const auto& [name, _] : cfg.per_class) parse_class(name);
  if (total == 0) throw InvalidArgument("dataset requests zero samples");
  return m;
}

inline BinaryGrid regenerate(const ManifestEntry& e, int resolution) {
  return generate_shape(parse_class(e.cls), e.seed, resolution);
}

// Writes grids/<id>.vxg for every sample, then manifest.json.
inline Manifest build_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir) {
  Manifest m = plan_dataset(cfg);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "grids", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "grids").string() + ": " + ec.message());
  std::vector<std::string> encoded(m.samples.size());
  parallel_for(m.samples.size(),
               [&](std::size_t i) { encoded[i] = vxg::encode(regenerate(m.samples[i], m.resolution)); });
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    io::write_file(out_dir / m.samples[i].grid_path, encoded[i]);
  }
  io::write_file(out_dir / "manifest.json", dump_json(to_json(m)));
  return m;
}

struct Sample {
  std::string sample_id;
  std::string cls;
  Split split = Split::kTrain;
  BinaryGrid truth;
  std::vector<Image> views;  // one per viewpoint, ordered by id
};

// Loads grids for one split (or all when `split` is empty) and renders views.
inline std::vector<Sample> load_samples(const Manifest& m, const std::filesystem::path& root,
                                        std::optional<Split> split, const ViewSphere& sphere,
                                        int image_size) {
  std::vector<Sample> out;
  for (const auto& e : m.samples) {
    if (split && e.split != *split) continue;
    Sample s;
    s.sample_id = e.sample_id;
    s.cls = e.cls;
    s.split = e.split;
    s.truth = vxg::decode_binary(io::read_file(root / e.grid_path));
    if (s.truth.resolution() != m.resolution) {
      throw DimensionError("grid " + e.grid_path + " has resolution " +
                           std::to_string(s.truth.resolution()) + ", manifest says " +
                           std::to_string(m.resolution));
    }
    out.push_back(std::move(s));
  }
  parallel_for(out.size(), [&](std::size_t i) { out[i].views = render_all(out[i].truth, sphere, image_size); });
  return out;
}

}  // namespace nvs
