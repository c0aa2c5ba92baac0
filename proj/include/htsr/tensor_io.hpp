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

#ifndef HTSR_TENSOR_IO_HPP_
#define HTSR_TENSOR_IO_HPP_

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace htsr {

// Transformer projection kinds plus a catch-all for everything else
// (embeddings, norms, output head).
enum class ModuleKind : std::uint8_t {
  kAttQ,
  kAttK,
  kAttV,
  kAttO,
  kMlpGate,
  kMlpUp,
  kMlpDown,
  kOther,
};

inline constexpr std::array<ModuleKind, 7> kProjectionKinds = {
    ModuleKind::kAttQ,    ModuleKind::kAttK,  ModuleKind::kAttV,
    ModuleKind::kAttO,    ModuleKind::kMlpGate, ModuleKind::kMlpUp,
    ModuleKind::kMlpDown,
};

// "att.q", ..., "mlp.down", "other".
std::string_view kind_name(ModuleKind kind);
std::optional<ModuleKind> kind_from_name(std::string_view name);

struct ModuleId {
  std::size_t layer_index = 0;
  ModuleKind kind = ModuleKind::kOther;
  std::string raw_name;

  bool is_projection() const { return kind != ModuleKind::kOther; }

  auto operator<=>(const ModuleId&) const = default;
};

// Total: "layers.{i}.{kind}" yields (i, kind); anything else yields
// (0, kOther) with the raw name preserved. Layer indices with leading zeros
// are not canonical and fall into the catch-all.
ModuleId parse_module_name(std::string_view raw_name);

// Canonical name; for kOther this is the stored raw name.
std::string format_module_name(const ModuleId& id);

ModuleId projection_id(std::size_t layer, ModuleKind kind);

using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Named dense f32 matrix, row-major.
struct WeightMatrix {
  ModuleId id;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  // Throws FormatError on a shape/value-count mismatch or non-finite entries.
  void validate() const;

  RowMajorMatrix to_matrix() const;
  static WeightMatrix from_matrix(ModuleId id,
                                  const Eigen::Ref<const RowMajorMatrix>& m);

  bool operator==(const WeightMatrix&) const = default;
};

using Metadata = std::map<std::string, std::string>;

struct ManifestEntry {
  std::string dtype;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

struct Checkpoint {
  std::vector<WeightMatrix> entries;  // in payload order
  Metadata metadata;

  const WeightMatrix* find(std::string_view raw_name) const;
};

inline constexpr std::string_view kCheckpointMagic = "HTSRCKPT";
inline constexpr std::string_view kCheckpointVersion = "1";
// Manifest key reserved for free-form metadata; not a tensor name.
inline constexpr std::string_view kMetadataKey = "__metadata__";
inline constexpr std::string_view kVersionKey = "format_version";

// Serialized container: magic, u32 LE manifest length, JSON manifest, then
// the little-endian f32 payload. Offsets are relative to payload start.
std::vector<std::byte> encode_checkpoint(std::span<const WeightMatrix> entries,
                                         const Metadata& metadata);
Checkpoint decode_checkpoint(std::span<const std::byte> bytes);

void write_checkpoint(std::span<const WeightMatrix> entries,
                      const Metadata& metadata,
                      const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace htsr

#endif  // HTSR_TENSOR_IO_HPP_
