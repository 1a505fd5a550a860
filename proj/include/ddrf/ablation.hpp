// Paired training experiments that differ in one switch.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ddrf/config.hpp"
#include "ddrf/training.hpp"

namespace ddrf {

struct AblationVariant {
  std::string name;
  TrainConfig config;
};

std::vector<std::string> ablation_names();

/// The two variants of `name` derived from `base`. Throws ValidationError
/// listing the valid names for an unknown name.
std::vector<AblationVariant> ablation_variants(const std::string& name, const TrainConfig& base);

struct VariantResult {
  std::string name;
  RestorationEval eval;
};

/// Trains every variant of `name` on the dataset in `train_dir` (same seed),
/// evaluates on `eval_dir` (or the training set when empty) and writes
/// `out_dir/<name>.csv` with rows metric,variant,value. Per-variant training
/// outputs go to out_dir/<variant>/.
std::vector<VariantResult> run_ablation(const std::string& name, const std::filesystem::path& train_dir,
                                        const std::filesystem::path& eval_dir, const TrainConfig& base,
                                        const std::filesystem::path& out_dir, const EpochCallback& on_epoch = {});

}  // namespace ddrf
