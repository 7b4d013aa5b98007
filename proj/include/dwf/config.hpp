// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment configuration: one JSON document with sections model, data,
// attack, training and eval. Missing keys take the defaults below; unknown
// keys are rejected.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwf/attacks.hpp"
#include "dwf/data.hpp"
#include "dwf/train.hpp"

namespace dwf {

struct DataConfig {
  /// "synth:<kind>" with optional ":key=value,..." (n, test, classes, side,
  /// seed), or a directory with the CIFAR-10 binary batches.
  std::string source = "synth:gaussian-blobs";
  std::size_t train_size = 1000;
  std::size_t test_size = 500;
  std::size_t classes = 2;
  std::size_t side = 16;
  std::uint64_t synth_seed = 1;
  /// CIFAR-10 only: keep these classes (relabelled in order) and at most
  /// this many images per class; empty/0 keeps everything.
  std::vector<int> cifar_classes;
  std::size_t train_per_class = 0;
  std::size_t test_per_class = 0;
};

struct EvalConfig {
  std::size_t batch_size = 250;
  std::string model_id;
};

struct ExperimentConfig {
  /// "resnet-desk", "resnet-compact" or "custom" (uses model.layers).
  std::string model_preset = "resnet-desk";
  std::vector<LayerSpec> layers;
  /// "default" (CIFAR constants for CIFAR data, empirical otherwise),
  /// "cifar", "empirical", or explicit statistics.
  std::string normalization = "default";
  std::vector<double> mean;
  std::vector<double> std;
  std::size_t benign_experts = 1;
  std::size_t fgsm_experts = 2;
  std::size_t pgd_experts = 2;
  DataConfig data;
  AttackConfig attack;
  std::uint64_t seed = 0;
  TrainingConfig expert_training;
  TrainingConfig moe_training;
  EvalConfig eval;
};

/// The full default document; every accepted key appears in it.
nlohmann::json default_config_document();

/// Reads a JSON file. Throws std::invalid_argument if it cannot be read or
/// parsed.
nlohmann::json read_config_file(const std::filesystem::path& path);

/// Applies "section.key=value" (value parsed as JSON, otherwise taken as a
/// string). Throws std::invalid_argument on an unknown key.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Defaults merged with doc, validated. Throws std::invalid_argument naming
/// the offending key.
ExperimentConfig parse_config(const nlohmann::json& doc);

/// Resolved document for cfg (inverse of parse_config).
nlohmann::json config_to_json(const ExperimentConfig& cfg);

struct ExperimentData {
  Dataset train;
  Dataset test;
};

/// Throws DataError when the source cannot be read.
ExperimentData load_experiment_data(const DataConfig& cfg);

/// Expert architecture for the configured preset, sized to the data.
ModelSpec resolve_model_spec(const ExperimentConfig& cfg, const Dataset& train);

/// conv(8) + relu + residual(16, /2) + global avgpool + dense(K).
ModelSpec compact_backbone_spec(std::array<std::size_t, 3> input_shape, std::size_t num_classes,
                                std::vector<double> mean, std::vector<double> std);

}  // namespace dwf
