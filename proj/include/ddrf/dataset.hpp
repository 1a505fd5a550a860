// Training-pair synthesis and the on-disk dataset format.
//
// A dataset directory holds
//   manifest.txt  plain text: seed, crop size, bank seed and, per sample, the
//                 source pair, crop offset, both degradation specs and the
//                 noise seeds (doubles printed round-trippably);
//   data.bin      per sample: clean_v, clean_i, degraded_v, degraded_i as
//                 little-endian float64 rasters.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ddrf/config.hpp"
#include "ddrf/image.hpp"
#include "ddrf/kernels.hpp"

namespace ddrf {

struct SourcePair {
  std::string name;
  Image visible;
  Image infrared;
};

/// Pairs `<name>_v.png` / `<name>_i.png` in `dir`, sorted by name. Throws
/// ValidationError naming any unpaired file or mismatched shapes.
std::vector<SourcePair> load_source_pairs(const std::filesystem::path& dir);

/// Procedural co-registered visible/infrared scene (shapes, texture, warm
/// objects), deterministic in `seed`.
SourcePair make_scene_pair(std::size_t height, std::size_t width, std::uint64_t seed);
void write_source_pair(const std::filesystem::path& dir, const SourcePair& pair);

struct SamplePair {
  std::string source;
  std::size_t top = 0, left = 0;
  Image clean_v, clean_i;
  Image degraded_v, degraded_i;
  DegradationSpec spec_v, spec_i;
  std::uint64_t noise_seed_v = 0, noise_seed_i = 0;
};

struct Dataset {
  std::uint64_t seed = 0;
  std::uint64_t bank_seed = 0;
  int crop_size = 32;
  int scale = 1;
  std::vector<SamplePair> samples;
};

/// `count` random crops of random source pairs, each modality degraded with
/// a fresh spec. Sample k depends only on (seed, k).
Dataset synth_dataset(std::span<const SourcePair> sources, std::size_t count, const TrainConfig& config,
                      std::uint64_t seed);

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);

/// Re-runs degradation of the stored clean crops from the stored specs.
std::pair<Image, Image> regenerate_degraded(const SamplePair& sample, const KernelBank& bank);

/// FNV-1a over manifest.txt followed by data.bin, as 16 hex digits.
std::string dataset_hash(const std::filesystem::path& dir);

}  // namespace ddrf
