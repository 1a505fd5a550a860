#include "ddrf/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ddrf/errors.hpp"

namespace ddrf {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<double> smooth(const std::vector<double>& values, std::size_t window) {
  std::vector<double> out(values.size());
  const std::size_t half = window / 2;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(values.size(), i + half + 1);
    out[i] = std::accumulate(values.begin() + static_cast<std::ptrdiff_t>(lo),
                             values.begin() + static_cast<std::ptrdiff_t>(hi), 0.0) /
             static_cast<double>(hi - lo);
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

ad::DiffArray network_input(const Image& degraded, int scale) {
  return to_array(scale == 2 ? upsample_bilinear(degraded, 2) : degraded);
}

namespace {

void write_loss_csv(const fs::path& path, const std::vector<LossReport>& epochs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,similarity,negative,positive,total\n";
  for (std::size_t e = 0; e < epochs.size(); ++e) {
    const LossReport& r = epochs[e];
    out << e + 1 << ',' << format_double(r.similarity) << ',' << format_double(r.negative) << ','
        << format_double(r.positive) << ',' << format_double(r.total) << '\n';
  }
}

}  // namespace

Optimizer::Optimizer(const TrainConfig& config, const std::vector<ParamTensor*>& params) : config_(config) {
  for (const ParamTensor* p : params) {
    first_.emplace_back(p->value.size(), 0.0);
    if (config.optimizer == OptimizerKind::adam) second_.emplace_back(p->value.size(), 0.0);
  }
}

void Optimizer::step(const std::vector<ParamTensor*>& params, const std::vector<std::vector<double>>& grads) {
  ++steps_;
  const double lr = config_.lr;
  for (std::size_t k = 0; k < params.size(); ++k) {
    ParamTensor& p = *params[k];
    std::vector<double> value(p.value.values().begin(), p.value.values().end());
    std::vector<double>& m = first_[k];
    const std::vector<double>& g = grads[k];
    if (config_.optimizer == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < value.size(); ++i) {
        m[i] = config_.momentum * m[i] + g[i];
        value[i] -= lr * m[i];
      }
    } else {
      constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
      std::vector<double>& v = second_[k];
      const double c1 = 1.0 - std::pow(beta1, steps_);
      const double c2 = 1.0 - std::pow(beta2, steps_);
      for (std::size_t i = 0; i < value.size(); ++i) {
        m[i] = beta1 * m[i] + (1 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i];
        value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    }
    p.value = ad::DiffArray(p.value.shape(), std::move(value));
  }
}

TrainOutputs train(const Dataset& dataset, const TrainConfig& config, const fs::path& out_dir,
                   const EpochCallback& on_epoch) {
  validate(config);
  if (dataset.samples.empty()) throw ValidationError("dataset has no samples");
  if (dataset.scale != config.scale) {
    throw ValidationError("dataset scale " + std::to_string(dataset.scale) + " differs from config scale " +
                          std::to_string(config.scale));
  }
  const KernelBank bank = build_kernel_bank(dataset.bank_seed);
  DdrfNetwork network(config.network(),
                      fit_projector(bank, static_cast<std::size_t>(config.projector_samples),
                                    derive_seed(config.seed, 0x70726f6a)));
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream(out_dir / "config.txt", std::ios::binary | std::ios::trunc) << to_text(config);
  }

  std::vector<ParamTensor*> params;
  network.for_each_param([&](ParamTensor& p) { params.push_back(&p); });
  Optimizer optimizer(config, params);
  const LossWeights weights = config.loss_weights();
  const SpecSampling sampling{config.scale, config.variants_per_family(), config.low_light};
  const auto batch = static_cast<std::size_t>(config.batchsize);
  const std::size_t n = dataset.samples.size();

  std::vector<LossReport> epochs;
  double last_finite = std::nan("");
  std::size_t batch_index = 0;
  std::vector<std::size_t> order(n);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, 0x73687566, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i - 1)))]);
    }

    LossReport epoch_sum;
    for (std::size_t start = 0; start < n; start += batch, ++batch_index) {
      const std::size_t stop = std::min(n, start + batch);
      std::vector<std::vector<double>> grads(params.size());
      for (std::size_t k = 0; k < params.size(); ++k) grads[k].assign(params[k]->value.size(), 0.0);

      for (std::size_t pos = start; pos < stop; ++pos) {
        const std::size_t idx = order[pos];
        const SamplePair& s = dataset.samples[idx];
        ad::Tape tape;
        ParamBinding bind(tape);
        const NetworkOutputs out = network.forward(network_input(s.degraded_v, config.scale),
                                                   network_input(s.degraded_i, config.scale),
                                                   s.spec_v.kernel.realized, s.spec_i.kernel.realized, bind);

        // Negatives: fresh degradations of both clean sources and of the
        // current fused output.
        Rng neg_rng(derive_seed(config.seed, 0x6e6567 + static_cast<std::uint64_t>(epoch), idx));
        const Image fused_now = to_image(ad::detach(out.fused));
        const std::pair<const Image*, int> negative_sources[3] = {
            {&s.clean_v, 1}, {&s.clean_i, 2}, {&fused_now, 3}};
        std::vector<ad::DiffArray> negatives;
        for (const auto& [image, model] : negative_sources) {
          const DegradationSpec spec = sample_degradation_spec(bank, neg_rng, model, sampling);
          negatives.push_back(network_input(degrade(*image, spec, neg_rng), config.scale));
        }

        const ad::DiffArray clean_v = to_array(s.clean_v), clean_i = to_array(s.clean_i);
        const SimilarityTerm terms[3] = {
            {out.restored_v, {clean_v}}, {out.restored_i, {clean_i}}, {out.fused, {clean_v, clean_i}}};
        LossParts parts;
        parts.similarity = loss_similarity(terms);
        parts.negatives = negative_terms(out.fused, negatives, config.eq8_literal);
        parts.positive = loss_positive(out.fused, to_array(fuse_manual(s.clean_v, s.clean_i)));
        auto [total, report] = loss_total(parts, weights);

        if (!std::isfinite(report.total)) {
          std::ostringstream msg;
          msg << "non-finite loss at batch " << batch_index << " (epoch " << epoch << ", sample " << idx
              << "); last finite loss " << format_double(last_finite);
          throw TrainingError(msg.str());
        }
        last_finite = report.total;

        const ad::Gradients g = tape.backward(total);
        for (std::size_t k = 0; k < params.size(); ++k) {
          const ad::DiffArray leaf = bind.bound(*params[k]);
          if (!g.reached(leaf)) continue;
          const std::vector<double> gk = g.wrt(leaf);
          for (std::size_t i = 0; i < gk.size(); ++i) grads[k][i] += gk[i];
        }
        epoch_sum.similarity += report.similarity;
        epoch_sum.negative += report.negative;
        epoch_sum.positive += report.positive;
        epoch_sum.total += report.total;
      }

      const double inv = 1.0 / static_cast<double>(stop - start);
      for (auto& gk : grads) {
        for (double& v : gk) v *= inv;
      }
      optimizer.step(params, grads);
    }

    const double inv = 1.0 / static_cast<double>(n);
    LossReport avg{epoch_sum.similarity * inv, epoch_sum.negative * inv, epoch_sum.positive * inv,
                   epoch_sum.total * inv, weights};
    epochs.push_back(avg);
    if (on_epoch) on_epoch(epoch, avg);

    if (!out_dir.empty()) {
      write_loss_csv(out_dir / "loss.csv", epochs);
      if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
        char name[40];
        std::snprintf(name, sizeof name, "checkpoint-epoch%03d.ckpt", epoch);
        save_checkpoint(out_dir / name, network);
      }
    }
  }
  if (!out_dir.empty()) {
    write_loss_csv(out_dir / "loss.csv", epochs);
    save_checkpoint(out_dir / "checkpoint.ckpt", network);
  }
  return {std::move(network), std::move(epochs)};
}

RestorationEval evaluate_restoration(const DdrfNetwork& network, const Dataset& dataset) {
  RestorationEval eval;
  const std::size_t n = dataset.samples.size();
  eval.restored_psnr.resize(n);
  eval.degraded_psnr.resize(n);
  std::vector<MetricReport> reports(n);
  for (std::size_t k = 0; k < n; ++k) {
    const SamplePair& s = dataset.samples[k];
    const Image in_v = to_image(network_input(s.degraded_v, dataset.scale));
    const Image in_i = to_image(network_input(s.degraded_i, dataset.scale));
    const FusionImages out = network.infer(in_v, in_i, s.spec_v.kernel.realized, s.spec_i.kernel.realized);
    eval.restored_psnr[k] = 0.5 * (psnr(out.restored_v, s.clean_v) + psnr(out.restored_i, s.clean_i));
    eval.degraded_psnr[k] = 0.5 * (psnr(in_v, s.clean_v) + psnr(in_i, s.clean_i));
    reports[k] = evaluate_pair(s.clean_v, s.clean_i, out.fused);
  }
  eval.median_restored = median(eval.restored_psnr);
  eval.median_degraded = median(eval.degraded_psnr);
  for (const MetricReport& r : reports) {
    eval.fused.en += r.en / static_cast<double>(n);
    eval.fused.ag += r.ag / static_cast<double>(n);
    eval.fused.ssim += r.ssim / static_cast<double>(n);
    eval.fused.vif += r.vif / static_cast<double>(n);
    eval.fused.psnr += r.psnr / static_cast<double>(n);
    eval.fused.vif_truncated = eval.fused.vif_truncated || r.vif_truncated;
  }
  eval.fused.mean = report_mean(eval.fused);
  return eval;
}

}  // namespace ddrf
