#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "ssn/nifti.hpp"
#include "ssn/rng.hpp"
#include "ssn/tensor.hpp"
#include "ssn/volume.hpp"

namespace ssn {

struct ManifestEntry {
  std::string path;
  std::size_t label = 0;
  std::string subject;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::size_t num_classes = 0;

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (const auto& e : entries) ++counts.at(e.label);
    return counts;
  }
};

inline void validate_manifest(const DatasetManifest& m) {
  std::unordered_set<std::string> paths, subjects;
  for (const auto& e : m.entries) {
    if (e.label >= m.num_classes)
      throw FormatError("manifest label " + std::to_string(e.label) +
                        " out of range for " + std::to_string(m.num_classes) +
                        " classes (" + e.path + ")");
    if (!paths.insert(e.path).second)
      throw FormatError("duplicate path in manifest: " + e.path);
    if (!subjects.insert(e.subject).second)
      throw FormatError("duplicate subject id in manifest: " + e.subject);
  }
}

/// CSV with header "path,label,subject_id"; labels are class indices.
inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw FormatError("manifest is empty: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,label,subject_id")
    throw FormatError("manifest header must be \"path,label,subject_id\", got \"" +
                      line + "\"");
  DatasetManifest m;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos ||
        line.find(',', c2 + 1) != std::string::npos)
      throw FormatError("manifest line " + std::to_string(lineno) +
                        " needs exactly 3 fields: " + path);
    ManifestEntry e;
    e.path = line.substr(0, c1);
    const std::string label_s = line.substr(c1 + 1, c2 - c1 - 1);
    e.subject = line.substr(c2 + 1);
    try {
      std::size_t pos = 0;
      const long v = std::stol(label_s, &pos);
      if (pos != label_s.size() || v < 0) throw std::invalid_argument("label");
      e.label = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw FormatError("manifest line " + std::to_string(lineno) +
                        " has a non-integer label \"" + label_s + "\"");
    }
    if (e.path.empty() || e.subject.empty())
      throw FormatError("manifest line " + std::to_string(lineno) +
                        " has an empty path or subject id");
    m.num_classes = std::max(m.num_classes, e.label + 1);
    m.entries.push_back(std::move(e));
  }
  validate_manifest(m);
  return m;
}

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open manifest for writing: " + path);
  out << "path,label,subject_id\n";
  for (const auto& e : m.entries) {
    if (e.path.find(',') != std::string::npos ||
        e.subject.find(',') != std::string::npos)
      throw FormatError("manifest fields must not contain commas: " + e.path);
    out << e.path << "," << e.label << "," << e.subject << "\n";
  }
  if (!out) throw FormatError("manifest write failed: " + path);
}

struct SplitSpec {
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

/// k independent stratified random splits. Per class, the train share is
/// round(train_ratio * class_size), clamped so both sides stay non-empty.
inline std::vector<SplitSpec> make_splits(const DatasetManifest& manifest,
                                          std::size_t k = 3,
                                          double train_ratio = 0.7,
                                          std::uint64_t seed = 0) {
  if (k < 1) throw ConfigError("need at least one fold");
  if (!(train_ratio > 0.0 && train_ratio < 1.0))
    throw ConfigError("train ratio must lie in (0,1)");
  validate_manifest(manifest);

  std::vector<std::vector<std::string>> by_class(manifest.num_classes);
  for (const auto& e : manifest.entries) by_class[e.label].push_back(e.subject);
  for (std::size_t c = 0; c < by_class.size(); ++c)
    if (by_class[c].size() < 2)
      throw DataError("class " + std::to_string(c) +
                      " has fewer than 2 subjects; cannot split");

  std::vector<SplitSpec> splits;
  splits.reserve(k);
  for (std::size_t f = 0; f < k; ++f) {
    SplitSpec spec;
    spec.fold = f;
    spec.seed = seed;
    Rng rng = make_rng(derive_seed(seed, f, 1));
    for (auto ids : by_class) {
      std::shuffle(ids.begin(), ids.end(), rng);
      const auto n = static_cast<double>(ids.size());
      auto train_n = static_cast<std::size_t>(std::llround(train_ratio * n));
      train_n = std::clamp<std::size_t>(train_n, 1, ids.size() - 1);
      spec.train_ids.insert(spec.train_ids.end(), ids.begin(),
                            ids.begin() + static_cast<std::ptrdiff_t>(train_n));
      spec.test_ids.insert(spec.test_ids.end(),
                           ids.begin() + static_cast<std::ptrdiff_t>(train_n),
                           ids.end());
    }
    splits.push_back(std::move(spec));
  }
  return splits;
}

/// Resolves a split's subject ids back to manifest entries.
inline std::pair<std::vector<ManifestEntry>, std::vector<ManifestEntry>>
split_entries(const DatasetManifest& manifest, const SplitSpec& spec) {
  std::unordered_map<std::string, const ManifestEntry*> by_subject;
  for (const auto& e : manifest.entries) by_subject[e.subject] = &e;
  auto resolve = [&](const std::vector<std::string>& ids) {
    std::vector<ManifestEntry> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
      auto it = by_subject.find(id);
      if (it == by_subject.end())
        throw DataError("split references unknown subject id: " + id);
      out.push_back(*it->second);
    }
    return out;
  };
  return {resolve(spec.train_ids), resolve(spec.test_ids)};
}

inline nlohmann::ordered_json splits_to_json(const std::vector<SplitSpec>& splits) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& s : splits)
    arr.push_back({{"fold", s.fold},
                   {"seed", s.seed},
                   {"train", s.train_ids},
                   {"test", s.test_ids}});
  return arr;
}

inline std::vector<SplitSpec> splits_from_json(const nlohmann::ordered_json& arr) {
  if (!arr.is_array()) throw FormatError("split file must be a JSON array");
  std::vector<SplitSpec> splits;
  for (const auto& s : arr) {
    SplitSpec spec;
    spec.fold = s.at("fold").get<std::size_t>();
    spec.seed = s.at("seed").get<std::uint64_t>();
    spec.train_ids = s.at("train").get<std::vector<std::string>>();
    spec.test_ids = s.at("test").get<std::vector<std::string>>();
    splits.push_back(std::move(spec));
  }
  return splits;
}

inline std::vector<SplitSpec> read_splits(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open split file: " + path);
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("split file is not valid JSON: " + std::string(e.what()));
  }
  return splits_from_json(j);
}

inline void write_splits(const std::vector<SplitSpec>& splits,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open split file for writing: " + path);
  out << splits_to_json(splits).dump(2) << "\n";
  if (!out) throw FormatError("split file write failed: " + path);
}

/// Seeded synthetic classification volumes: class c gets c+1 soft bright
/// spheres with class-scaled amplitude over Gaussian background noise, so
/// classes are separable by simple intensity statistics. Writes one .nii per
/// sample plus manifest.csv into out_dir.
inline DatasetManifest generate_synthetic(std::size_t classes,
                                          std::size_t per_class,
                                          std::size_t extent,
                                          std::uint64_t seed,
                                          const std::string& out_dir) {
  if (classes < 1 || per_class < 1)
    throw ConfigError("synthetic generator needs at least one class and sample");
  if (extent < 16) throw ConfigError("synthetic extent must be >= 16");
  std::filesystem::create_directories(out_dir);

  DatasetManifest manifest;
  manifest.num_classes = classes;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      Rng rng = make_rng(derive_seed(seed, c, i, 2));
      Volume vol(extent, extent, extent, {2.0, 2.0, 2.0});
      std::normal_distribution<double> noise(0.0, 0.05);
      for (auto& v : vol.data) v = static_cast<float>(noise(rng));

      const double e = static_cast<double>(extent);
      std::uniform_real_distribution<double> upos(0.35 * e, 0.65 * e);
      std::uniform_real_distribution<double> urad(e / 8.5, e / 7.8);
      std::uniform_real_distribution<double> ujit(0.98, 1.02);
      const double amp = (0.7 + 0.6 * static_cast<double>(c)) * ujit(rng);
      for (std::size_t s = 0; s <= c; ++s) {
        const double cz = upos(rng), cy = upos(rng), cx = upos(rng);
        const double sigma = urad(rng);
        for (std::size_t z = 0; z < extent; ++z)
          for (std::size_t y = 0; y < extent; ++y)
            for (std::size_t x = 0; x < extent; ++x) {
              const double dz = static_cast<double>(z) - cz;
              const double dy = static_cast<double>(y) - cy;
              const double dx = static_cast<double>(x) - cx;
              const double r2 = dz * dz + dy * dy + dx * dx;
              vol.at(z, y, x) += static_cast<float>(
                  amp * std::exp(-r2 / (2.0 * sigma * sigma)));
            }
      }

      std::ostringstream name;
      name << "class" << c << "_" << std::setw(3) << std::setfill('0') << i
           << ".nii";
      const std::string file =
          (std::filesystem::path(out_dir) / name.str()).string();
      write_nifti(vol, file);
      std::ostringstream subject;
      subject << "s" << c << "_" << std::setw(3) << std::setfill('0') << i;
      manifest.entries.push_back({file, c, subject.str()});
    }
  }
  write_manifest(manifest,
                 (std::filesystem::path(out_dir) / "manifest.csv").string());
  return manifest;
}

}  // namespace ssn
