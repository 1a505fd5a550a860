// ddrf command-line front end.

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "ddrf/ablation.hpp"
#include "ddrf/config.hpp"
#include "ddrf/dataset.hpp"
#include "ddrf/errors.hpp"
#include "ddrf/kernels.hpp"
#include "ddrf/metrics.hpp"
#include "ddrf/network.hpp"
#include "ddrf/training.hpp"

namespace fs = std::filesystem;
using namespace ddrf;

namespace {

struct GlobalOptions {
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string config_file;
  std::vector<std::string> settings;
};

TrainConfig load_config(const GlobalOptions& g) {
  TrainConfig config;
  if (!g.config_file.empty()) apply_config_file(config, g.config_file);
  for (const std::string& kv : g.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    apply_setting(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed_set) config.seed = g.seed;
  validate(config);
  return config;
}

// Degradation spec files: "key = value" lines with keys
// a b c motion isotropic anisotropic scale sigma gain.
DegradationSpec read_spec_file(const fs::path& path, const KernelBank& bank) {
  std::ifstream in(path);
  if (!in) throw ValidationError("spec file not found: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::istringstream k(line.substr(0, eq)), v(line.substr(eq + 1));
    std::string key, value;
    k >> key;
    v >> value;
    kv[key] = value;
  }
  const auto get = [&](const std::string& key, const std::string& fallback) {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
  };
  try {
    DegradationSpec spec;
    spec.kernel = synthesize_dynamic_kernel(bank, std::stod(get("a", "1")), std::stod(get("b", "0")),
                                            std::stod(get("c", "0")), std::stoi(get("motion", "1")),
                                            std::stoi(get("isotropic", "1")), std::stoi(get("anisotropic", "1")));
    spec.scale = std::stoi(get("scale", "1"));
    spec.noise_sigma = std::stod(get("sigma", "0"));
    spec.gain = std::stod(get("gain", "1"));
    if (spec.scale != 1 && spec.scale != 2) throw ValidationError("spec scale must be 1 or 2");
    return spec;
  } catch (const std::logic_error&) {
    throw ValidationError("malformed spec file " + path.string());
  }
}

void write_kernel_text(const fs::path& path, const Kernel& k) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (std::size_t r = 0; r < kKernelSize; ++r) {
    for (std::size_t c = 0; c < kKernelSize; ++c) out << (c ? " " : "") << format_double(k.at(r, c));
    out << '\n';
  }
}

int run_kernels_export(const GlobalOptions& g, const fs::path& out_dir) {
  const TrainConfig config = load_config(g);
  const KernelBank bank = build_kernel_bank(config.seed);
  fs::create_directories(out_dir);
  const char* families[3] = {"motion", "isotropic", "anisotropic"};
  for (int f = 0; f < 3; ++f) {
    for (int j = 1; j <= kVariantsPerFamily; ++j) {
      const Kernel& k = bank.kernel(static_cast<KernelFamily>(f), j);
      const std::string stem = std::string(families[f]) + "-" + std::to_string(j);
      write_kernel_text(out_dir / (stem + ".txt"), k);
      Image img(kKernelSize, kKernelSize);
      const double peak = k.max();
      for (std::size_t i = 0; i < kKernelArea; ++i) img.pixels[i] = peak > 0 ? k.values[i] / peak : 0.0;
      write_png(out_dir / (stem + ".png"), img);
    }
  }
  std::cout << "wrote " << kBankSize << " kernels to " << out_dir.string() << '\n';
  return 0;
}

int run_make_scenes(const GlobalOptions& g, const fs::path& out_dir, int count, int size) {
  const TrainConfig config = load_config(g);
  if (count < 1 || size < 16) throw ValidationError("make-scenes needs count >= 1 and size >= 16");
  for (int k = 0; k < count; ++k) {
    SourcePair pair = make_scene_pair(static_cast<std::size_t>(size), static_cast<std::size_t>(size),
                                      derive_seed(config.seed, 0x7363656e, static_cast<std::uint64_t>(k)));
    char name[32];
    std::snprintf(name, sizeof name, "scene%03d", k);
    pair.name = name;
    write_source_pair(out_dir, pair);
  }
  std::cout << "wrote " << count << " source pairs to " << out_dir.string() << '\n';
  return 0;
}

int run_synth(const GlobalOptions& g, const fs::path& sources, int count, const fs::path& out_dir) {
  const TrainConfig config = load_config(g);
  if (count < 1) throw ValidationError("count must be positive");
  const auto pairs = load_source_pairs(sources);
  const Dataset ds = synth_dataset(pairs, static_cast<std::size_t>(count), config, config.seed);
  write_dataset(out_dir, ds);
  std::cout << "wrote " << count << " samples to " << out_dir.string() << " (hash " << dataset_hash(out_dir)
            << ")\n";
  return 0;
}

int run_train(const GlobalOptions& g, const fs::path& dataset_dir, const fs::path& out_dir, bool quiet) {
  const TrainConfig config = load_config(g);
  const Dataset ds = read_dataset(dataset_dir);
  train(ds, config, out_dir, [&](int epoch, const LossReport& r) {
    if (!quiet) std::cerr << "epoch " << epoch << " total " << r.total << '\n';
  });
  std::cout << "checkpoint " << (out_dir / "checkpoint.ckpt").string() << '\n';
  return 0;
}

int run_fuse(const fs::path& checkpoint, const fs::path& visible, const fs::path& infrared,
             const std::string& spec_v_path, const std::string& spec_i_path, const fs::path& out_dir) {
  const DdrfNetwork network = load_checkpoint(checkpoint);
  const KernelBank bank = build_kernel_bank(network.config().seed);
  Image x_v = read_png(visible), x_i = read_png(infrared);
  require_same_shape(x_v, x_i, "fuse inputs");
  DegradationSpec spec_v, spec_i;
  spec_v.kernel.realized = spec_i.kernel.realized = bank.mean_kernel();
  if (!spec_v_path.empty()) spec_v = read_spec_file(spec_v_path, bank);
  if (!spec_i_path.empty()) spec_i = read_spec_file(spec_i_path, bank);
  if (spec_v.scale != spec_i.scale) throw ValidationError("visible and infrared specs use different scales");
  if (spec_v.scale == 2) {
    x_v = upsample_bilinear(x_v, 2);
    x_i = upsample_bilinear(x_i, 2);
  }
  const FusionImages out = network.infer(x_v, x_i, spec_v.kernel.realized, spec_i.kernel.realized);
  fs::create_directories(out_dir);
  write_png(out_dir / "restored_v.png", out.restored_v);
  write_png(out_dir / "restored_i.png", out.restored_i);
  write_png(out_dir / "fused.png", out.fused);
  std::cout << "wrote restored_v.png restored_i.png fused.png to " << out_dir.string() << '\n';
  return 0;
}

int run_eval(const fs::path& checkpoint, const fs::path& dataset_dir, const fs::path& out_csv) {
  const DdrfNetwork network = load_checkpoint(checkpoint);
  const Dataset ds = read_dataset(dataset_dir);
  std::ofstream out(out_csv, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + out_csv.string());
  out << "sample,en,ag,ssim,vif,psnr,mean,restored-psnr,degraded-psnr\n";
  MetricReport total;
  double restored = 0, degraded = 0;
  const double n = static_cast<double>(ds.samples.size());
  for (std::size_t k = 0; k < ds.samples.size(); ++k) {
    Dataset one{ds.seed, ds.bank_seed, ds.crop_size, ds.scale, {ds.samples[k]}};
    const RestorationEval e = evaluate_restoration(network, one);
    const MetricReport& r = e.fused;
    out << k << ',' << format_double(r.en) << ',' << format_double(r.ag) << ',' << format_double(r.ssim) << ','
        << format_double(r.vif) << ',' << format_double(r.psnr) << ',' << format_double(r.mean) << ','
        << format_double(e.median_restored) << ',' << format_double(e.median_degraded) << '\n';
    total.en += r.en / n;
    total.ag += r.ag / n;
    total.ssim += r.ssim / n;
    total.vif += r.vif / n;
    total.psnr += r.psnr / n;
    restored += e.median_restored / n;
    degraded += e.median_degraded / n;
  }
  total.mean = report_mean(total);
  out << "mean," << format_double(total.en) << ',' << format_double(total.ag) << ',' << format_double(total.ssim)
      << ',' << format_double(total.vif) << ',' << format_double(total.psnr) << ',' << format_double(total.mean)
      << ',' << format_double(restored) << ',' << format_double(degraded) << '\n';
  std::cout << "mean restored PSNR " << restored << " dB, degraded " << degraded << " dB\n";
  return 0;
}

int run_ablate(const GlobalOptions& g, const std::string& name, const fs::path& dataset_dir,
               const std::string& eval_dir, const fs::path& out_dir, bool quiet) {
  const TrainConfig config = load_config(g);
  const auto results = run_ablation(name, dataset_dir, eval_dir, config, out_dir, [&](int epoch, const LossReport& r) {
    if (!quiet) std::cerr << "epoch " << epoch << " total " << r.total << '\n';
  });
  for (const VariantResult& r : results) {
    std::cout << r.name << ": restored PSNR " << r.eval.median_restored << " dB, fused mean " << r.eval.fused.mean
              << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  ddrf::ad::retain_freed_buffers();
  CLI::App app{"Degradation-aware restore-and-fuse network for visible/infrared pairs"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option_function<std::uint64_t>(
         "--seed", [&](std::uint64_t s) { g.seed = s, g.seed_set = true; }, "Random seed")
      ->configurable(false);
  app.add_option("--config", g.config_file, "Config file of key = value lines")->check(CLI::ExistingFile);
  app.add_option("--set", g.settings, "Override one config key (key=value)");
  bool quiet = false;
  app.add_flag("--quiet", quiet, "No per-epoch progress");

  std::function<int()> action;

  auto* kernels = app.add_subcommand("kernels", "Kernel bank utilities");
  kernels->require_subcommand(1);
  kernels->fallthrough();
  auto* kexport = kernels->add_subcommand("export", "Write the basis kernels as text matrices and PNGs");
  std::string kernels_out = "kernels";
  kexport->add_option("--out", kernels_out, "Output directory");
  kexport->callback([&] { action = [&] { return run_kernels_export(g, kernels_out); }; });

  auto* scenes = app.add_subcommand("make-scenes", "Write procedural visible/infrared source pairs");
  std::string scenes_out;
  int scene_count = 2, scene_size = 128;
  scenes->add_option("--out", scenes_out, "Output directory")->required();
  scenes->add_option("--count", scene_count, "Number of pairs");
  scenes->add_option("--size", scene_size, "Side length in pixels");
  scenes->callback([&] { action = [&] { return run_make_scenes(g, scenes_out, scene_count, scene_size); }; });

  auto* synth = app.add_subcommand("synth-dataset", "Crop and degrade source pairs into a training set");
  std::string synth_sources, synth_out;
  int synth_count = 200;
  synth->add_option("--sources", synth_sources, "Directory of <name>_v.png / <name>_i.png pairs")->required();
  synth->add_option("--count", synth_count, "Number of samples");
  synth->add_option("--out", synth_out, "Dataset directory")->required();
  synth->callback([&] { action = [&] { return run_synth(g, synth_sources, synth_count, synth_out); }; });

  auto* trainc = app.add_subcommand("train", "Train a network on a dataset");
  std::string train_dataset, train_out;
  trainc->add_option("--dataset", train_dataset, "Dataset directory")->required();
  trainc->add_option("--out", train_out, "Run directory")->required();
  trainc->callback([&] { action = [&] { return run_train(g, train_dataset, train_out, quiet); }; });

  auto* fuse = app.add_subcommand("fuse", "Restore and fuse one visible/infrared pair");
  std::string fuse_ckpt, fuse_v, fuse_i, fuse_spec_v, fuse_spec_i, fuse_out;
  fuse->add_option("--checkpoint", fuse_ckpt, "Checkpoint file")->required();
  fuse->add_option("--visible", fuse_v, "Visible PNG")->required();
  fuse->add_option("--infrared", fuse_i, "Infrared PNG")->required();
  fuse->add_option("--spec-v", fuse_spec_v, "Visible degradation spec file");
  fuse->add_option("--spec-i", fuse_spec_i, "Infrared degradation spec file");
  fuse->add_option("--out", fuse_out, "Output directory")->required();
  fuse->callback([&] {
    action = [&] { return run_fuse(fuse_ckpt, fuse_v, fuse_i, fuse_spec_v, fuse_spec_i, fuse_out); };
  });

  auto* evalc = app.add_subcommand("eval", "Per-sample metrics of a checkpoint on a dataset");
  std::string eval_ckpt, eval_dataset, eval_out;
  evalc->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  evalc->add_option("--dataset", eval_dataset, "Dataset directory")->required();
  evalc->add_option("--out", eval_out, "CSV file")->required();
  evalc->callback([&] { action = [&] { return run_eval(eval_ckpt, eval_dataset, eval_out); }; });

  auto* ablate = app.add_subcommand("ablate", "Train and compare the two variants of an ablation");
  std::string ablate_name, ablate_dataset, ablate_eval, ablate_out;
  ablate->add_option("name", ablate_name, "static-vs-dynamic, eq8-sign or loss-terms")->required();
  ablate->add_option("--dataset", ablate_dataset, "Training dataset directory")->required();
  ablate->add_option("--eval-dataset", ablate_eval, "Held-out dataset directory");
  ablate->add_option("--out", ablate_out, "Output directory")->required();
  ablate->callback([&] {
    action = [&] { return run_ablate(g, ablate_name, ablate_dataset, ablate_eval, ablate_out, quiet); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    return action ? action() : 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
