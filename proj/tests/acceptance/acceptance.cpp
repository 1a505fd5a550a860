// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Usage: acceptance [work-dir]. DDRF_ACCEPTANCE_ONLY=1,4,8 restricts
// the run to the listed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "ddrf/ablation.hpp"
#include "ddrf/autodiff.hpp"
#include "ddrf/dataset.hpp"
#include "ddrf/dynamic_conv.hpp"
#include "ddrf/kernels.hpp"
#include "ddrf/losses.hpp"
#include "ddrf/metrics.hpp"
#include "ddrf/network.hpp"
#include "ddrf/training.hpp"
#include "support.hpp"

using namespace ddrf;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

fs::path g_work;

// 1. Gradient suite ----------------------------------------------------------------

Outcome gradient_suite() {
  using namespace ad;
  using testsupport::random_array;
  const auto start = Clock::now();
  Rng rng(2024);
  const Shape img{2, 16, 16};
  struct Case {
    std::string name;
    testsupport::Fn fn;
    std::vector<DiffArray> inputs;
    std::size_t max_entries = 0;
  };
  std::vector<Case> cases;
  for (int rep = 0; rep < 2; ++rep) {
    cases.push_back({"conv2d", [](const auto& v) { return conv2d(v[0], v[1], v[2], 1, 1); },
                     {random_array(img, rng), random_array({3, 2, 3, 3}, rng), random_array({3}, rng)}});
    cases.push_back({"conv2d/stride2", [](const auto& v) { return conv2d(v[0], v[1], v[2], 2, 0); },
                     {random_array(img, rng), random_array({2, 2, 3, 3}, rng), random_array({2}, rng)}});
    cases.push_back({"conv2d/single-output", [](const auto& v) { return conv2d(v[0], v[1], v[2], 1, 1); },
                     {random_array(img, rng), random_array({1, 2, 3, 3}, rng), random_array({1}, rng)}});
    cases.push_back({"add", [](const auto& v) { return add(v[0], v[1]); }, {random_array(img, rng), random_array(img, rng)}});
    cases.push_back({"sub", [](const auto& v) { return sub(v[0], v[1]); }, {random_array(img, rng), random_array(img, rng)}});
    cases.push_back({"mul", [](const auto& v) { return mul(v[0], v[1]); }, {random_array(img, rng), random_array(img, rng)}});
    cases.push_back({"div", [](const auto& v) { return div(v[0], v[1]); },
                     {random_array(img, rng), random_array(img, rng, 0.5, 2.0)}});
    cases.push_back({"scale", [](const auto& v) { return scale(v[0], 2.5); }, {random_array(img, rng)}});
    cases.push_back({"add_scalar", [](const auto& v) { return add_scalar(v[0], -0.4); }, {random_array(img, rng)}});
    cases.push_back({"sigmoid", [](const auto& v) { return sigmoid(v[0]); }, {random_array(img, rng, -4, 4)}});
    cases.push_back({"relu", [](const auto& v) { return relu(v[0]); }, {random_array(img, rng)}});
    cases.push_back({"sum", [](const auto& v) { return sum(v[0]); }, {random_array(img, rng)}});
    cases.push_back({"mean", [](const auto& v) { return mean(v[0]); }, {random_array(img, rng)}});
    cases.push_back({"softmax", [](const auto& v) { return softmax(v[0], 0); }, {random_array(img, rng, -2, 2)}});
    cases.push_back({"global_average_pool", [](const auto& v) { return global_average_pool(v[0]); },
                     {random_array(img, rng)}});
    cases.push_back({"upsample_bilinear", [](const auto& v) { return upsample_bilinear(v[0], 2); },
                     {random_array(img, rng)}});
    cases.push_back({"pad_replicate", [](const auto& v) { return pad_replicate(v[0], 5); },
                     {random_array(img, rng)}});
    cases.push_back({"concat_channels", [](const auto& v) { return concat_channels(v); },
                     {random_array(img, rng), random_array({3, 16, 16}, rng)}});
    cases.push_back({"weighted_sum",
                     [](const auto& v) { return weighted_sum(v[0], std::span<const DiffArray>(v).subspan(1)); },
                     {random_array({2}, rng), random_array(img, rng), random_array(img, rng)}});
    cases.push_back({"reshape", [](const auto& v) { return reshape(v[0], {2, 256}); }, {random_array(img, rng)}});
    cases.push_back({"ssim", [](const auto& v) { return ssim(v[0], v[1]); },
                     {random_array({1, 16, 16}, rng, 0, 1), random_array({1, 16, 16}, rng, 0, 1)}});
  }

  // Full forward pipeline: network plus every loss term.
  const KernelBank bank = build_kernel_bank(0);
  const KernelProjector projector = fit_projector(bank, 2000, 3);
  for (int rep = 0; rep < 2; ++rep) {
    NetworkConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(rep);
    cfg.candidates = 2;
    auto net = std::make_shared<DdrfNetwork>(cfg, projector);
    net->for_each_param([&](ParamTensor& p) {
      if (p.name.find("attention.w2") != std::string::npos || p.name.find(".bias") != std::string::npos) {
        p.value = random_array(p.value.shape(), rng, -0.5, 0.5);
      }
    });
    auto params = std::make_shared<std::vector<ParamTensor*>>();
    net->for_each_param([&](ParamTensor& p) { params->push_back(&p); });
    const Kernel kv = sample_dynamic_kernel(bank, rng).realized, ki = sample_dynamic_kernel(bank, rng).realized;
    const Image cv = testsupport::random_image(16, 16, rng), ci = testsupport::random_image(16, 16, rng);
    const DiffArray neg = to_array(testsupport::random_image(16, 16, rng));
    std::vector<DiffArray> inputs{to_array(testsupport::random_image(16, 16, rng)),
                                  to_array(testsupport::random_image(16, 16, rng))};
    for (auto* p : *params) inputs.push_back(p->value);
    cases.push_back({"network+loss",
                     [=](const std::vector<DiffArray>& x) {
                       std::vector<DiffArray> saved;
                       for (std::size_t k = 0; k < params->size(); ++k) {
                         saved.push_back((*params)[k]->value);
                         (*params)[k]->value = x[k + 2];
                       }
                       const NetworkOutputs out = net->forward(x[0], x[1], kv, ki);
                       for (std::size_t k = 0; k < params->size(); ++k) (*params)[k]->value = saved[k];
                       const DiffArray a = to_array(cv), b = to_array(ci);
                       const SimilarityTerm terms[3] = {{out.restored_v, {a}}, {out.restored_i, {b}}, {out.fused, {a, b}}};
                       LossParts parts;
                       parts.similarity = loss_similarity(terms);
                       const DiffArray negs[] = {neg};
                       parts.negatives = negative_terms(out.fused, negs);
                       parts.positive = loss_positive(out.fused, to_array(fuse_manual(cv, ci)));
                       return loss_total(parts).first;
                     },
                     inputs, 4});
  }

  double worst = 0;
  std::string worst_name;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto r = testsupport::check_gradients(cases[i].fn, cases[i].inputs, 500 + i, cases[i].max_entries);
    if (r.worst >= worst) {
      worst = r.worst;
      worst_name = cases[i].name;
    }
  }
  const double elapsed = seconds_since(start);
  return {worst < 1e-4 && cases.size() >= 20 && elapsed < 120,
          std::to_string(cases.size()) + " cases, worst relative error " + fmt(worst, 3) + " (" + worst_name + "), " +
              fmt(elapsed, 3) + " s"};
}

// 2. Kernel algebra ---------------------------------------------------------------

Outcome kernel_algebra() {
  const KernelBank bank = build_kernel_bank(0);
  bool ok = bank.all().size() == 12;
  double worst_mass = 0, min_entry = 0;
  for (const Kernel& k : bank.all()) {
    worst_mass = std::max(worst_mass, std::abs(k.mass() - 1.0));
    min_entry = std::min(min_entry, k.min());
  }
  Rng rng(77);
  double ma = 0, mb = 0, mc = 0;
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) {
    const DynamicKernel dk = sample_dynamic_kernel(bank, rng);
    if (s < 1000) {
      worst_mass = std::max(worst_mass, std::abs(dk.realized.mass() - 1.0));
      min_entry = std::min(min_entry, dk.realized.min());
    }
    ma += dk.a / draws;
    mb += dk.b / draws;
    mc += dk.c / draws;
  }
  for (double m : {ma, mb, mc}) ok = ok && m >= 0.32 && m <= 0.35;
  ok = ok && worst_mass <= 1e-9 && min_entry >= 0.0;
  return {ok, "mass error " + fmt(worst_mass, 3) + ", min entry " + fmt(min_entry, 3) + ", weight means " + fmt(ma) +
                  " " + fmt(mb) + " " + fmt(mc)};
}

// 3. Degradation identity ---------------------------------------------------------

Outcome degradation_identity() {
  Rng rng(5);
  const Image img = testsupport::random_image(48, 40, rng);
  DegradationSpec spec;
  spec.kernel.realized = Kernel::delta();
  Rng noise(1);
  const double delta_err = testsupport::max_abs_diff(degrade(img, spec, noise).pixels, img.pixels);

  const KernelBank bank = build_kernel_bank(0);
  std::vector<Kernel> kernels(bank.all().begin(), bank.all().end());
  for (int s = 0; s < 50; ++s) kernels.push_back(sample_dynamic_kernel(bank, rng).realized);
  double const_err = 0;
  for (double level : {0.0, 0.37, 1.0}) {
    const Image flat(32, 32, level);
    for (const Kernel& k : kernels) {
      spec.kernel.realized = k;
      Rng n(2);
      const_err = std::max(const_err, testsupport::max_abs_diff(degrade(flat, spec, n).pixels, flat.pixels));
    }
  }
  return {delta_err <= 1e-12 && const_err <= 1e-12,
          "delta max-abs " + fmt(delta_err, 3) + ", constant max-abs " + fmt(const_err, 3) + " over " +
              std::to_string(kernels.size()) + " kernels"};
}

// 4. Metric identities ------------------------------------------------------------

Outcome metric_identities() {
  Rng rng(6);
  const Image x = testsupport::random_image(128, 128, rng);
  const double s = ssim_metric(x, x);
  const double p = psnr(x, x);
  const double en0 = entropy(Image(64, 64, 0.42));
  Image uniform(16, 16);
  for (std::size_t i = 0; i < 256; ++i) uniform.pixels[i] = static_cast<double>(i) / 255.0;
  const double en8 = entropy(uniform);
  const double ag0 = average_gradient(Image(64, 64, 0.42));
  const double v = vif(x, x).value;
  Image shifted = x;
  for (double& q : shifted.pixels) q += 16.0 / 255.0;
  const double p16 = psnr(x, shifted);
  const bool ok = std::abs(s - 1) <= 1e-9 && p == 100.0 && en0 == 0.0 && std::abs(en8 - 8) <= 1e-12 &&
                  ag0 == 0.0 && std::abs(v - 1) <= 1e-6 && std::abs(p16 - 24.048) <= 1e-3;
  return {ok, "SSIM " + fmt(s, 17) + ", PSNR " + fmt(p) + ", EN " + fmt(en0) + "/" + fmt(en8, 17) + ", AG " +
                  fmt(ag0) + ", VIF " + fmt(v, 12) + ", PSNR(16 levels) " + fmt(p16, 8)};
}

// 5. Dynamic/static equivalence ---------------------------------------------------

Outcome dynamic_static_equivalence() {
  using testsupport::random_array;
  Rng rng(8);
  double worst = 0;
  for (int rep = 0; rep < 5; ++rep) {
    const ad::DiffArray x = random_array({6, 16, 16}, rng);
    const ad::DiffArray w = random_array({5, 6, 3, 3}, rng), b = random_array({5}, rng);
    const ad::DiffArray expect = static_forward(w, b, x);

    DynamicConv single("single", 6, 5, 3, {1, true}, rng);
    single.candidate_weights[0].value = w;
    single.candidate_biases[0].value = b;
    single.attention_w2.value = random_array(single.attention_w2.value.shape(), rng);
    worst = std::max(worst, testsupport::max_abs_diff(single.forward(x, {}).values(), expect.values()));

    DynamicConv uniform("uniform", 6, 5, 3, {4, false}, rng);
    for (auto& p : uniform.candidate_weights) p.value = w;
    for (auto& p : uniform.candidate_biases) p.value = b;
    const ad::DiffArray mix = uniform.attention(x, {});
    for (double q : mix.values()) worst = std::max(worst, std::abs(q - 0.25));
    worst = std::max(worst, testsupport::max_abs_diff(uniform.forward(x, {}).values(), expect.values()));

    // With the literal 1/N factor, identical candidates N*W reproduce W.
    DynamicConv literal("literal", 6, 5, 3, {4, true}, rng);
    for (auto& p : literal.candidate_weights) p.value = ad::scale(w, 4.0);
    for (auto& p : literal.candidate_biases) p.value = ad::scale(b, 4.0);
    worst = std::max(worst, testsupport::max_abs_diff(literal.forward(x, {}).values(), expect.values()));
  }
  return {worst <= 1e-12, "max-abs difference " + fmt(worst, 3)};
}

// Desk-scale data ---------------------------------------------------------------

struct DeskData {
  fs::path train_dir, eval_dir;
  Dataset train, eval;
};

DeskData make_desk_data(const std::string& name, const TrainConfig& config) {
  std::vector<SourcePair> train_sources, eval_sources;
  for (int k = 0; k < 6; ++k) {
    SourcePair p = make_scene_pair(128, 128, derive_seed(1234, static_cast<std::uint64_t>(k)));
    p.name = "scene" + std::to_string(k);
    (k < 4 ? train_sources : eval_sources).push_back(std::move(p));
  }
  DeskData d;
  d.train_dir = g_work / name / "train";
  d.eval_dir = g_work / name / "held-out";
  d.train = synth_dataset(train_sources, 200, config, 11);
  d.eval = synth_dataset(eval_sources, 32, config, 12);
  write_dataset(d.train_dir, d.train);
  write_dataset(d.eval_dir, d.eval);
  return d;
}

// 6. Desk-scale training ----------------------------------------------------------

Outcome desk_training() {
  const TrainConfig config;  // defaults: batchsize 16, lr 0.001, 89 epochs, 12 basis kernels
  const DeskData data = make_desk_data("desk", config);
  const auto start = Clock::now();
  const TrainOutputs out = train(data.train, config, g_work / "desk" / "run");
  const double elapsed = seconds_since(start);

  std::vector<double> totals;
  for (const auto& r : out.epochs) totals.push_back(r.total);
  const std::vector<double> smoothed = smooth(totals, 5);
  const RestorationEval eval = evaluate_restoration(out.network, data.eval);
  const double gain = eval.median_restored - eval.median_degraded;
  const bool ok = smoothed.back() < totals.front() && gain >= 2.0 && elapsed < 1800;
  return {ok, "loss " + fmt(totals.front()) + " -> " + fmt(smoothed.back()) + " (smoothed), median PSNR " +
                  fmt(eval.median_degraded) + " -> " + fmt(eval.median_restored) + " dB (gain " + fmt(gain, 3) +
                  "), training " + fmt(elapsed, 4) + " s"};
}

// 7. Ablation direction ------------------------------------------------------------

Outcome ablation_direction() {
  TrainConfig config;
  config.low_light = true;
  const DeskData data = make_desk_data("low-light", config);
  const auto results =
      run_ablation("static-vs-dynamic", data.train_dir, data.eval_dir, config, g_work / "low-light" / "ablation");
  const double st = results[0].eval.median_restored, dy = results[1].eval.median_restored;
  return {results[0].name == "static" && results[1].name == "dynamic" && dy >= st,
          "restored PSNR static " + fmt(st) + " dB, dynamic " + fmt(dy) + " dB"};
}

// 8. Throughput -------------------------------------------------------------------

Outcome throughput() {
  const KernelBank bank = build_kernel_bank(0);
  const DdrfNetwork net({}, fit_projector(bank, 4096, 1));
  Rng rng(9);
  const Image v = testsupport::random_image(400, 400, rng), i = testsupport::random_image(400, 400, rng);
  net.infer(testsupport::random_image(32, 32, rng), testsupport::random_image(32, 32, rng), bank.mean_kernel(),
            bank.mean_kernel());
  const auto start = Clock::now();
  const FusionImages out = net.infer(v, i, bank.mean_kernel(), bank.mean_kernel());
  const double elapsed = seconds_since(start);
  return {elapsed < 2.0 && out.fused.height == 400, "400x400 fuse in " + fmt(elapsed, 3) + " s"};
}

// 9. Determinism -----------------------------------------------------------------

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool run_cli(const std::string& args) {
  const std::string cmd = std::string(DDRF_CLI) + " --quiet " + args + " > /dev/null";
  return std::system(cmd.c_str()) == 0;
}

Outcome determinism() {
  std::vector<fs::path> roots;
  for (const char* name : {"a", "b"}) {
    const fs::path root = g_work / "determinism" / name;
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string r = root.string();
    const std::string cfg = " --seed 5 --set epochs=3 --set checkpoint-every=1 ";
    const bool ok = run_cli(cfg + "make-scenes --out " + r + "/scenes --count 3 --size 64") &&
                    run_cli(cfg + "synth-dataset --sources " + r + "/scenes --count 32 --out " + r + "/data") &&
                    run_cli(cfg + "train --dataset " + r + "/data --out " + r + "/run") &&
                    run_cli("fuse --checkpoint " + r + "/run/checkpoint.ckpt --visible " + r +
                            "/scenes/scene000_v.png --infrared " + r + "/scenes/scene000_i.png --out " + r + "/fused") &&
                    run_cli("eval --checkpoint " + r + "/run/checkpoint.ckpt --dataset " + r + "/data --out " + r +
                            "/eval.csv") &&
                    run_cli(cfg + "--set epochs=1 ablate loss-terms --dataset " + r + "/data --out " + r + "/ablation");
    if (!ok) return {false, "pipeline run in " + r + " failed"};
    roots.push_back(root);
  }
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(roots[0])) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), roots[0]);
    if (!fs::exists(roots[1] / rel)) return {false, "missing in second run: " + rel.string()};
    if (read_bytes(entry.path()) != read_bytes(roots[1] / rel)) return {false, "bytes differ: " + rel.string()};
    ++compared;
  }
  std::size_t second = 0;
  for (const auto& entry : fs::recursive_directory_iterator(roots[1])) second += entry.is_regular_file();
  return {second == compared && compared > 0,
          std::to_string(compared) + " files byte-identical (datasets, checkpoints, CSVs, PNGs)"};
}

}  // namespace

int main(int argc, char** argv) {
  ad::retain_freed_buffers();  // as the command-line tool does
  g_work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "ddrf-acceptance";
  fs::create_directories(g_work);

  std::set<int> only;
  if (const char* env = std::getenv("DDRF_ACCEPTANCE_ONLY")) {
    std::istringstream list(env);
    std::string item;
    while (std::getline(list, item, ',')) only.insert(std::stoi(item));
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"kernel algebra", kernel_algebra},
      {"degradation identity", degradation_identity},
      {"metric identities", metric_identities},
      {"dynamic/static equivalence", dynamic_static_equivalence},
      {"desk-scale training", desk_training},
      {"ablation direction", ablation_direction},
      {"throughput", throughput},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << id << " " << criteria[k].first << ": " << (o.pass ? "PASS" : "FAIL") << " - "
              << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
