// SPDX-License-Identifier: Apache-2.0
#pragma once

// On-disk format: a directory holding manifest.json and payload.bin. The
// payload is every parameter as little-endian IEEE-754 binary32, row-major,
// concatenated in manifest order; the manifest lists name, shape, byte
// offset and byte count per tensor.

#include <filesystem>
#include <map>
#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "dwf/common.hpp"
#include "dwf/moe.hpp"

namespace dwf {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json spec_to_json(const ModelSpec& spec);
/// One entry of a spec's "layers" array; `where` prefixes error messages.
LayerSpec layer_from_json(const nlohmann::json& j, const std::string& where);
/// Throws std::invalid_argument naming the offending key.
ModelSpec spec_from_json(const nlohmann::json& j);

/// Free-form provenance stored alongside the tensors (seed lineage,
/// training settings).
using CheckpointMetadata = nlohmann::json;

void save_checkpoint(const Model& model, const std::filesystem::path& dir, const CheckpointMetadata& meta = {});
void save_checkpoint(const MixtureOfExperts& moe, const std::filesystem::path& dir,
                     const CheckpointMetadata& meta = {});

struct LoadedCheckpoint {
  std::variant<Model, MixtureOfExperts> object;
  CheckpointMetadata metadata;

  bool is_moe() const { return object.index() == 1; }
  Classifier& classifier();
  const Classifier& classifier() const;
};

/// Throws DataError naming the manifest field on a version mismatch, a
/// payload whose length disagrees with the manifest, offsets that do not
/// tile the payload, or tensor names/shapes that do not match the spec.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);
Model load_model(const std::filesystem::path& dir);
MixtureOfExperts load_moe(const std::filesystem::path& dir);

}  // namespace dwf
