// Training loop, restoration evaluation and their file outputs.

#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <vector>

#include "ddrf/config.hpp"
#include "ddrf/dataset.hpp"
#include "ddrf/losses.hpp"
#include "ddrf/metrics.hpp"
#include "ddrf/network.hpp"

namespace ddrf {

/// Non-finite loss during training.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOutputs {
  DdrfNetwork network;
  std::vector<LossReport> epochs;  // epoch-averaged losses
};

/// SGD with momentum (m = momentum*m + g; x -= lr*m) or bias-corrected Adam
/// (beta 0.9/0.999, eps 1e-8), chosen by config.optimizer.
class Optimizer {
 public:
  Optimizer(const TrainConfig& config, const std::vector<ParamTensor*>& params);
  void step(const std::vector<ParamTensor*>& params, const std::vector<std::vector<double>>& grads);

 private:
  TrainConfig config_;
  std::vector<std::vector<double>> first_, second_;
  int steps_ = 0;
};

using EpochCallback = std::function<void(int epoch, const LossReport& report)>;

/// Trains a fresh network on `dataset`. When `out_dir` is non-empty it receives
///   loss.csv                   epoch,similarity,negative,positive,total
///   checkpoint.ckpt            final parameters
///   checkpoint-epochNNN.ckpt   every checkpoint_every epochs
///   config.txt                 the effective configuration
TrainOutputs train(const Dataset& dataset, const TrainConfig& config, const std::filesystem::path& out_dir = {},
                   const EpochCallback& on_epoch = {});

/// Network input for a degraded crop: upsampled back to crop size when s = 2.
ad::DiffArray network_input(const Image& degraded, int scale);

struct RestorationEval {
  std::vector<double> restored_psnr;  // per sample, mean of the visible and infrared PSNRs
  std::vector<double> degraded_psnr;
  double median_restored = 0;
  double median_degraded = 0;
  MetricReport fused;  // evaluate_pair(clean_v, clean_i, fused), averaged over samples
};

RestorationEval evaluate_restoration(const DdrfNetwork& network, const Dataset& dataset);

/// Centered moving average; windows shrink at the ends.
std::vector<double> smooth(const std::vector<double>& values, std::size_t window);
double median(std::vector<double> values);

/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace ddrf
