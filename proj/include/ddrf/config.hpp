// Training configuration, read from plain-text "key = value" files.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ddrf/dynamic_conv.hpp"
#include "ddrf/losses.hpp"
#include "ddrf/network.hpp"

namespace ddrf {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  int batchsize = 16;
  double lr = 0.001;
  int epochs = 89;
  int basis_count = 12;  // 3, 6, 9 or 12: first basis_count/3 variants of each family
  int candidates = 4;
  LayerKind branch_kind = LayerKind::dynamic_conv;
  bool eq8_literal = false;
  int scale = 1;
  std::uint64_t seed = 0;
  int crop_size = 32;

  // Switches beyond the core table.
  // Adam by default: plain SGD at lr 0.001 barely moves the loss in 89 epochs.
  OptimizerKind optimizer = OptimizerKind::adam;
  double momentum = 0.9;  // sgd only
  bool eq6_literal = true;
  bool condition_branches = true;
  bool condition_fusion = true;
  bool low_light = false;
  double w_similarity = 1.0;
  double w_negative = 1.0;
  double w_positive = 1.0;
  int checkpoint_every = 10;
  int projector_samples = 4096;

  NetworkConfig network() const;
  LossWeights loss_weights() const { return {w_negative, w_similarity, w_positive}; }
  int variants_per_family() const { return basis_count / 3; }
};

/// Sets one key; throws ValidationError for unknown keys or bad values.
void apply_setting(TrainConfig& config, const std::string& key, const std::string& value);
/// Applies every "key = value" line of `path` (blank lines and # comments skipped).
void apply_config_file(TrainConfig& config, const std::filesystem::path& path);
void validate(const TrainConfig& config);
/// Round-trippable "key = value" text.
std::string to_text(const TrainConfig& config);

const char* to_string(OptimizerKind kind);

}  // namespace ddrf
