#include "ddrf/ablation.hpp"

#include <fstream>

#include "ddrf/errors.hpp"

namespace ddrf {

namespace fs = std::filesystem;

std::vector<std::string> ablation_names() { return {"static-vs-dynamic", "eq8-sign", "loss-terms"}; }

std::vector<AblationVariant> ablation_variants(const std::string& name, const TrainConfig& base) {
  if (name == "static-vs-dynamic") {
    TrainConfig st = base, dy = base;
    st.branch_kind = LayerKind::static_conv;
    dy.branch_kind = LayerKind::dynamic_conv;
    return {{"static", st}, {"dynamic", dy}};
  }
  if (name == "eq8-sign") {
    TrainConfig pushed = base, literal = base;
    pushed.eq8_literal = false;
    literal.eq8_literal = true;
    return {{"push-away", pushed}, {"literal", literal}};
  }
  if (name == "loss-terms") {
    TrainConfig sim = base, full = base;
    sim.w_negative = 0;
    sim.w_positive = 0;
    return {{"similarity-only", sim}, {"full", full}};
  }
  std::string valid;
  for (const auto& n : ablation_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ValidationError("unknown ablation '" + name + "' (valid: " + valid + ")");
}

std::vector<VariantResult> run_ablation(const std::string& name, const fs::path& train_dir,
                                        const fs::path& eval_dir, const TrainConfig& base, const fs::path& out_dir,
                                        const EpochCallback& on_epoch) {
  const std::vector<AblationVariant> variants = ablation_variants(name, base);
  const Dataset train_set = read_dataset(train_dir);
  const fs::path eval_path = eval_dir.empty() ? train_dir : eval_dir;
  const Dataset eval_set = eval_dir.empty() ? train_set : read_dataset(eval_dir);
  const std::string train_hash = dataset_hash(train_dir);
  const std::string eval_hash = dataset_hash(eval_path);

  std::vector<VariantResult> results;
  for (const AblationVariant& v : variants) {
    TrainOutputs trained = train(train_set, v.config, out_dir / v.name, on_epoch);
    results.push_back({v.name, evaluate_restoration(trained.network, eval_set)});
  }

  fs::create_directories(out_dir);
  std::ofstream out(out_dir / (name + ".csv"), std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (out_dir / (name + ".csv")).string());
  for (const AblationVariant& v : variants) {
    out << "# variant " << v.name << " train-dataset " << train_hash << " eval-dataset " << eval_hash << '\n';
  }
  out << "metric,variant,value\n";
  const auto row = [&](const char* metric, auto get) {
    for (const VariantResult& r : results) out << metric << ',' << r.name << ',' << format_double(get(r.eval)) << '\n';
  };
  row("en", [](const RestorationEval& e) { return e.fused.en; });
  row("ag", [](const RestorationEval& e) { return e.fused.ag; });
  row("ssim", [](const RestorationEval& e) { return e.fused.ssim; });
  row("vif", [](const RestorationEval& e) { return e.fused.vif; });
  row("psnr", [](const RestorationEval& e) { return e.fused.psnr; });
  row("mean", [](const RestorationEval& e) { return e.fused.mean; });
  row("restored-psnr", [](const RestorationEval& e) { return e.median_restored; });
  row("degraded-psnr", [](const RestorationEval& e) { return e.median_degraded; });
  return results;
}

}  // namespace ddrf
