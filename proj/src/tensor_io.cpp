/* Copyright 2026 The htsr-decay Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "htsr/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include <json.hpp>

#include "htsr/error.hpp"

namespace htsr {

using json = nlohmann::json;

namespace {

constexpr std::array<std::string_view, 8> kKindNames = {
    "att.q", "att.k", "att.v", "att.o", "mlp.gate", "mlp.up", "mlp.down",
    "other"};

constexpr std::string_view kLayersPrefix = "layers.";
constexpr std::size_t kHeaderSize = 12;

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFFu));
  }
}

std::uint32_t get_u32(std::span<const std::byte> in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(in[i]) << (8 * i);
  }
  return v;
}

std::uint64_t json_u64(const json& j, std::string_view field,
                       const std::string& name) {
  auto it = j.find(field);
  if (it == j.end() || !it->is_number_unsigned()) {
    throw FormatError(ErrorCode::kCorruptManifest,
                      "entry '" + name + "' lacks unsigned field '" +
                          std::string(field) + "'");
  }
  return it->get<std::uint64_t>();
}

ManifestEntry parse_entry(const std::string& name, const json& j) {
  if (!j.is_object()) {
    throw FormatError(ErrorCode::kCorruptManifest,
                      "entry '" + name + "' is not an object");
  }
  ManifestEntry e;
  auto dtype = j.find("dtype");
  if (dtype == j.end() || !dtype->is_string()) {
    throw FormatError(ErrorCode::kCorruptManifest,
                      "entry '" + name + "' lacks dtype");
  }
  e.dtype = dtype->get<std::string>();
  if (e.dtype != "f32") {
    throw FormatError(ErrorCode::kUnsupportedDtype,
                      "entry '" + name + "' has dtype '" + e.dtype + "'");
  }
  auto shape = j.find("shape");
  if (shape == j.end() || !shape->is_array() || shape->size() != 2 ||
      !(*shape)[0].is_number_unsigned() || !(*shape)[1].is_number_unsigned()) {
    throw FormatError(ErrorCode::kCorruptManifest,
                      "entry '" + name + "' needs a two-element shape");
  }
  e.rows = (*shape)[0].get<std::size_t>();
  e.cols = (*shape)[1].get<std::size_t>();
  e.offset = json_u64(j, "offset", name);
  e.length = json_u64(j, "length", name);
  if (e.rows == 0 || e.cols == 0) {
    throw FormatError(ErrorCode::kShapeMismatch,
                      "entry '" + name + "' has an empty shape");
  }
  if (e.length != static_cast<std::uint64_t>(e.rows) * e.cols * 4) {
    throw FormatError(ErrorCode::kShapeMismatch,
                      "entry '" + name + "' length does not match its shape");
  }
  return e;
}

}  // namespace

std::string_view kind_name(ModuleKind kind) {
  return kKindNames[static_cast<std::size_t>(kind)];
}

std::optional<ModuleKind> kind_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == name) return static_cast<ModuleKind>(i);
  }
  return std::nullopt;
}

ModuleId parse_module_name(std::string_view raw_name) {
  ModuleId other{0, ModuleKind::kOther, std::string(raw_name)};
  if (!raw_name.starts_with(kLayersPrefix)) return other;
  std::string_view rest = raw_name.substr(kLayersPrefix.size());
  auto dot = rest.find('.');
  if (dot == std::string_view::npos || dot == 0) return other;
  std::string_view digits = rest.substr(0, dot);
  if (digits.size() > 1 && digits.front() == '0') return other;
  std::size_t layer = 0;
  auto [ptr, ec] =
      std::from_chars(digits.data(), digits.data() + digits.size(), layer);
  if (ec != std::errc{} || ptr != digits.data() + digits.size()) return other;
  auto kind = kind_from_name(rest.substr(dot + 1));
  if (!kind || *kind == ModuleKind::kOther) return other;
  return ModuleId{layer, *kind, std::string(raw_name)};
}

std::string format_module_name(const ModuleId& id) {
  if (!id.is_projection()) return id.raw_name;
  return std::string(kLayersPrefix) + std::to_string(id.layer_index) + "." +
         std::string(kind_name(id.kind));
}

ModuleId projection_id(std::size_t layer, ModuleKind kind) {
  ModuleId id{layer, kind, {}};
  id.raw_name = format_module_name(id);
  return id;
}

void WeightMatrix::validate() const {
  if (rows == 0 || cols == 0 || rows * cols != values.size()) {
    throw FormatError(ErrorCode::kShapeMismatch,
                      "'" + id.raw_name + "' has shape " +
                          std::to_string(rows) + "x" + std::to_string(cols) +
                          " but " + std::to_string(values.size()) + " values");
  }
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw FormatError(ErrorCode::kNonFinite, "'" + id.raw_name + "'");
    }
  }
}

RowMajorMatrix WeightMatrix::to_matrix() const {
  RowMajorMatrix m(rows, cols);
  for (std::size_t i = 0; i < values.size(); ++i) {
    m.data()[i] = static_cast<double>(values[i]);
  }
  return m;
}

WeightMatrix WeightMatrix::from_matrix(
    ModuleId id, const Eigen::Ref<const RowMajorMatrix>& m) {
  WeightMatrix w;
  w.id = std::move(id);
  w.rows = static_cast<std::size_t>(m.rows());
  w.cols = static_cast<std::size_t>(m.cols());
  w.values.resize(w.rows * w.cols);
  for (std::size_t r = 0; r < w.rows; ++r) {
    for (std::size_t c = 0; c < w.cols; ++c) {
      w.values[r * w.cols + c] = static_cast<float>(m(r, c));
    }
  }
  return w;
}

const WeightMatrix* Checkpoint::find(std::string_view raw_name) const {
  for (const auto& e : entries) {
    if (e.id.raw_name == raw_name) return &e;
  }
  return nullptr;
}

std::vector<std::byte> encode_checkpoint(std::span<const WeightMatrix> entries,
                                         const Metadata& metadata) {
  std::set<std::string_view> names;
  for (const auto& e : entries) {
    if (e.id.raw_name == kMetadataKey) {
      throw FormatError(ErrorCode::kInvalidArgument,
                        "tensor name '" + e.id.raw_name + "' is reserved");
    }
    if (!names.insert(e.id.raw_name).second) {
      throw FormatError(ErrorCode::kDuplicateName, "'" + e.id.raw_name + "'");
    }
    e.validate();
  }

  json manifest = json::object();
  json meta = json::object();
  for (const auto& [k, v] : metadata) meta[k] = v;
  meta[std::string(kVersionKey)] = std::string(kCheckpointVersion);
  manifest[std::string(kMetadataKey)] = std::move(meta);

  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    const std::uint64_t length = e.values.size() * sizeof(float);
    manifest[e.id.raw_name] = {{"dtype", "f32"},
                               {"shape", {e.rows, e.cols}},
                               {"offset", offset},
                               {"length", length}};
    offset += length;
  }
  const std::string text = manifest.dump();
  if (text.size() > UINT32_MAX) {
    throw FormatError(ErrorCode::kInvalidArgument, "manifest too large");
  }

  std::vector<std::byte> out;
  out.reserve(kHeaderSize + text.size() + offset);
  for (char c : kCheckpointMagic) out.push_back(static_cast<std::byte>(c));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  for (char c : text) out.push_back(static_cast<std::byte>(c));
  for (const auto& e : entries) {
    for (float v : e.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::byte> bytes) {
  if (bytes.size() < kHeaderSize) {
    throw FormatError(ErrorCode::kTruncatedPayload, "file shorter than header");
  }
  for (std::size_t i = 0; i < kCheckpointMagic.size(); ++i) {
    if (static_cast<char>(bytes[i]) != kCheckpointMagic[i]) {
      throw FormatError(ErrorCode::kBadMagic, "expected HTSRCKPT");
    }
  }
  const std::uint32_t manifest_len = get_u32(bytes.subspan(8, 4));
  if (bytes.size() - kHeaderSize < manifest_len) {
    throw FormatError(ErrorCode::kTruncatedPayload,
                      "manifest extends past end of file");
  }
  const auto* text = reinterpret_cast<const char*>(bytes.data() + kHeaderSize);
  json manifest = json::parse(text, text + manifest_len, nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object()) {
    throw FormatError(ErrorCode::kCorruptManifest, "manifest is not a JSON object");
  }
  const auto payload = bytes.subspan(kHeaderSize + manifest_len);

  Checkpoint ckpt;
  std::vector<std::pair<std::string, ManifestEntry>> regions;
  for (auto it = manifest.begin(); it != manifest.end(); ++it) {
    if (it.key() == kMetadataKey) {
      if (!it->is_object()) {
        throw FormatError(ErrorCode::kCorruptManifest, "metadata is not an object");
      }
      for (auto m = it->begin(); m != it->end(); ++m) {
        if (!m->is_string()) {
          throw FormatError(ErrorCode::kCorruptManifest,
                            "metadata value for '" + m.key() + "' is not text");
        }
        ckpt.metadata[m.key()] = m->get<std::string>();
      }
      continue;
    }
    regions.emplace_back(it.key(), parse_entry(it.key(), *it));
  }

  auto version = ckpt.metadata.find(std::string(kVersionKey));
  if (version != ckpt.metadata.end()) {
    if (version->second != kCheckpointVersion) {
      throw FormatError(ErrorCode::kUnsupportedVersion,
                        "format_version " + version->second);
    }
    ckpt.metadata.erase(version);
  }

  std::sort(regions.begin(), regions.end(), [](const auto& a, const auto& b) {
    return a.second.offset < b.second.offset;
  });
  std::uint64_t prev_end = 0;
  std::string prev_name;
  for (const auto& [name, e] : regions) {
    if (e.offset > payload.size() || payload.size() - e.offset < e.length) {
      throw FormatError(ErrorCode::kTruncatedPayload,
                        "entry '" + name + "' extends past end of payload");
    }
    if (!prev_name.empty() && e.offset < prev_end) {
      throw FormatError(ErrorCode::kOverlappingRegions,
                        "'" + prev_name + "' and '" + name + "'");
    }
    prev_end = e.offset + e.length;
    prev_name = name;
  }

  ckpt.entries.reserve(regions.size());
  for (const auto& [name, e] : regions) {
    WeightMatrix w;
    w.id = parse_module_name(name);
    w.rows = e.rows;
    w.cols = e.cols;
    w.values.resize(e.rows * e.cols);
    const auto region = payload.subspan(e.offset, e.length);
    for (std::size_t i = 0; i < w.values.size(); ++i) {
      w.values[i] = std::bit_cast<float>(get_u32(region.subspan(4 * i, 4)));
    }
    w.validate();
    ckpt.entries.push_back(std::move(w));
  }
  return ckpt;
}

void write_checkpoint(std::span<const WeightMatrix> entries,
                      const Metadata& metadata,
                      const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(entries, metadata);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw FormatError(ErrorCode::kIo, "cannot open " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw FormatError(ErrorCode::kIo, "write failed: " + path.string());
  }
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError(ErrorCode::kIo, "cannot open " + path.string());
  }
  std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  return decode_checkpoint(std::as_bytes(std::span<const char>(raw)));
}

}  // namespace htsr
