#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "ssn/model.hpp"
#include "ssn/tensor.hpp"

namespace ssn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'S', 'S', 'N', 'C',
                                             'K', 'P', 'T', '1'};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct CheckpointMeta {
  bool present = false;
  std::string arch;
  std::string stem;
  std::size_t num_classes = 0;
  std::size_t in_channels = 0;
  double dropout_p = 0.0;
};

/// In-memory image of a checkpoint file: ordered tensor entries plus the
/// "__meta__" header record describing the architecture they belong to.
struct Checkpoint {
  CheckpointMeta meta;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(std::string_view name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

struct SurgeryReport {
  std::vector<std::string> loaded;   // model tensors overwritten
  std::vector<std::string> skipped;  // model tensors left at initialization
  std::vector<std::string> missing;  // checkpoint entries no model tensor used
};

namespace detail {

template <typename T>
std::vector<NamedTensor<T>> all_named_tensors(const Model<T>& model) {
  auto tensors = model.named_parameters();
  auto buffers = model.named_buffers();
  tensors.insert(tensors.end(), buffers.begin(), buffers.end());
  return tensors;
}

}  // namespace detail

/// Writes parameters then buffers, in registry order, as little-endian f32.
template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path);

  const auto tensors = detail::all_named_tensors(model);
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  header["__meta__"] = {{"format", 1},
                        {"arch", arch_name(model.kind())},
                        {"stem", stem_kind_name(model.stem_kind())},
                        {"num_classes", model.config().num_classes},
                        {"in_channels", model.config().in_channels},
                        {"dropout_p", model.config().dropout_p}};
  std::uint64_t offset = 0;
  for (const auto& nt : tensors) {
    const std::uint64_t length = nt.tensor.numel() * sizeof(float);
    header[nt.name] = {{"dtype", "f32"},
                       {"shape", nt.tensor.shape()},
                       {"offset", offset},
                       {"length", length}};
    offset += length;
  }
  const std::string hjson = header.dump();

  out.write(kCheckpointMagic, 8);
  const std::uint64_t hlen = hjson.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(hjson.data(), static_cast<std::streamsize>(hjson.size()));
  std::vector<float> f32buf;
  for (const auto& nt : tensors) {
    const auto vals = nt.tensor.values();
    f32buf.assign(vals.begin(), vals.end());
    out.write(reinterpret_cast<const char*>(f32buf.data()),
              static_cast<std::streamsize>(f32buf.size() * sizeof(float)));
  }
  if (!out) throw FormatError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (bytes.size() < 16)
    throw FormatError("checkpoint too short for magic and header length: " + path);
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw FormatError("bad checkpoint magic in " + path);
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, bytes.data() + 8, 8);
  if (16 + hlen > bytes.size())
    throw FormatError("checkpoint header extends past end of file: " + path);

  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(
        std::string_view(bytes.data() + 16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint header is not valid JSON: " +
                      std::string(e.what()));
  }
  if (!header.is_object())
    throw FormatError("checkpoint header must be a JSON object");

  const char* data = bytes.data() + 16 + hlen;
  const std::uint64_t data_size = bytes.size() - 16 - hlen;

  Checkpoint ckpt;
  std::uint64_t expected_offset = 0;
  for (auto it = header.begin(); it != header.end(); ++it) {
    if (it.key() == "__meta__") {
      const auto& m = it.value();
      ckpt.meta.present = true;
      ckpt.meta.arch = m.value("arch", "");
      ckpt.meta.stem = m.value("stem", "");
      ckpt.meta.num_classes = m.value("num_classes", std::size_t(0));
      ckpt.meta.in_channels = m.value("in_channels", std::size_t(0));
      ckpt.meta.dropout_p = m.value("dropout_p", 0.0);
      continue;
    }
    const auto& e = it.value();
    if (!e.is_object() || !e.contains("dtype") || !e.contains("shape") ||
        !e.contains("offset") || !e.contains("length"))
      throw FormatError("checkpoint entry '" + it.key() +
                        "' is missing dtype/shape/offset/length");
    if (e["dtype"] != "f32")
      throw FormatError("checkpoint entry '" + it.key() +
                        "' has unsupported dtype " + e["dtype"].dump());
    CheckpointEntry entry;
    entry.name = it.key();
    entry.shape = e["shape"].get<Shape>();
    const std::uint64_t offset = e["offset"].get<std::uint64_t>();
    const std::uint64_t length = e["length"].get<std::uint64_t>();
    if (length != shape_numel(entry.shape) * sizeof(float))
      throw FormatError("checkpoint entry '" + entry.name +
                        "' length disagrees with its shape");
    if (offset != expected_offset)
      throw FormatError("checkpoint entry '" + entry.name +
                        "' breaks the contiguous data layout");
    if (offset + length > data_size)
      throw FormatError("checkpoint entry '" + entry.name +
                        "' extends past end of data section");
    entry.data.resize(length / sizeof(float));
    std::memcpy(entry.data.data(), data + offset, length);
    expected_offset = offset + length;
    ckpt.entries.push_back(std::move(entry));
  }
  if (expected_offset != data_size)
    throw FormatError("checkpoint data section has " +
                      std::to_string(data_size - expected_offset) +
                      " trailing bytes");
  return ckpt;
}

/// Full restore: every model parameter and buffer must be present with a
/// matching shape.
template <typename T>
void load_into(Model<T>& model, const Checkpoint& ckpt) {
  for (auto& nt : detail::all_named_tensors(model)) {
    const CheckpointEntry* e = ckpt.find(nt.name);
    if (!e) throw FormatError("checkpoint is missing tensor '" + nt.name + "'");
    if (e->shape != nt.tensor.shape())
      throw FormatError("checkpoint tensor '" + nt.name + "' has shape " +
                        shape_str(e->shape) + ", model expects " +
                        shape_str(nt.tensor.shape()));
    auto dst = nt.tensor.values();
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] = static_cast<T>(e->data[i]);
  }
}

/// Partial restore for transfer learning: copies every model tensor whose
/// name does not fall under `skip_prefixes`, leaving the skipped ones at
/// their fresh initialization. Unused checkpoint entries land in `missing`.
template <typename T>
SurgeryReport transfer_load(Model<T>& model, const Checkpoint& ckpt,
                            const std::vector<std::string>& skip_prefixes = {
                                "stem", "fc"}) {
  SurgeryReport report;
  std::unordered_map<std::string, bool> used;
  for (const auto& e : ckpt.entries) used.emplace(e.name, false);

  for (auto& nt : detail::all_named_tensors(model)) {
    bool skip = false;
    for (const auto& p : skip_prefixes)
      if (nt.name.starts_with(p)) {
        skip = true;
        break;
      }
    if (skip) {
      report.skipped.push_back(nt.name);
      continue;
    }
    const CheckpointEntry* e = ckpt.find(nt.name);
    if (!e)
      throw SurgeryError("transfer checkpoint is missing tensor '" + nt.name +
                         "'");
    if (e->shape != nt.tensor.shape())
      throw SurgeryError("transfer shape mismatch for '" + nt.name +
                         "': checkpoint " + shape_str(e->shape) + ", model " +
                         shape_str(nt.tensor.shape()));
    auto dst = nt.tensor.values();
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] = static_cast<T>(e->data[i]);
    used[e->name] = true;
    report.loaded.push_back(nt.name);
  }
  for (const auto& e : ckpt.entries)
    if (!used[e.name]) report.missing.push_back(e.name);
  return report;
}

}  // namespace ssn
