#include "ddrf/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "ddrf/errors.hpp"

namespace ddrf {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ValidationError("config key '" + key + "': cannot parse '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ValidationError("config key '" + key + "': expected true/false, got '" + value + "'");
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

const char* to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

NetworkConfig TrainConfig::network() const {
  NetworkConfig n;
  n.branch_kind = branch_kind;
  n.candidates = static_cast<std::size_t>(candidates);
  n.eq6_literal = eq6_literal;
  n.condition_branches = condition_branches;
  n.condition_fusion = condition_fusion;
  n.seed = seed;
  return n;
}

void apply_setting(TrainConfig& c, const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "batchsize") c.batchsize = parse_number<int>(key, value);
  else if (key == "lr") c.lr = parse_number<double>(key, value);
  else if (key == "epochs") c.epochs = parse_number<int>(key, value);
  else if (key == "basis-count") c.basis_count = parse_number<int>(key, value);
  else if (key == "candidates") c.candidates = parse_number<int>(key, value);
  else if (key == "branch-kind") c.branch_kind = parse_layer_kind(value);
  else if (key == "eq8-literal") c.eq8_literal = parse_bool(key, value);
  else if (key == "scale") c.scale = parse_number<int>(key, value);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "crop-size") c.crop_size = parse_number<int>(key, value);
  else if (key == "optimizer") {
    if (value == "sgd") c.optimizer = OptimizerKind::sgd;
    else if (value == "adam") c.optimizer = OptimizerKind::adam;
    else throw ValidationError("config key 'optimizer': expected sgd or adam, got '" + value + "'");
  }
  else if (key == "momentum") c.momentum = parse_number<double>(key, value);
  else if (key == "eq6-literal") c.eq6_literal = parse_bool(key, value);
  else if (key == "condition-branches") c.condition_branches = parse_bool(key, value);
  else if (key == "condition-fusion") c.condition_fusion = parse_bool(key, value);
  else if (key == "low-light") c.low_light = parse_bool(key, value);
  else if (key == "w-similarity") c.w_similarity = parse_number<double>(key, value);
  else if (key == "w-negative") c.w_negative = parse_number<double>(key, value);
  else if (key == "w-positive") c.w_positive = parse_number<double>(key, value);
  else if (key == "checkpoint-every") c.checkpoint_every = parse_number<int>(key, value);
  else if (key == "projector-samples") c.projector_samples = parse_number<int>(key, value);
  else throw ValidationError("unknown config key '" + key + "'");
}

void apply_config_file(TrainConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(path.string() + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    apply_setting(config, trim(text.substr(0, eq)), text.substr(eq + 1));
  }
}

void validate(const TrainConfig& c) {
  auto positive = [](bool ok, const char* key) {
    if (!ok) throw ValidationError(std::string("config key '") + key + "' must be positive");
  };
  positive(c.batchsize > 0, "batchsize");
  positive(c.lr > 0, "lr");
  positive(c.epochs > 0, "epochs");
  positive(c.candidates > 0, "candidates");
  positive(c.crop_size > 0, "crop-size");
  positive(c.checkpoint_every > 0, "checkpoint-every");
  if (c.basis_count != 3 && c.basis_count != 6 && c.basis_count != 9 && c.basis_count != 12) {
    throw ValidationError("config key 'basis-count' must be 3, 6, 9 or 12");
  }
  if (c.scale != 1 && c.scale != 2) throw ValidationError("config key 'scale' must be 1 or 2");
  if (c.crop_size < 16) throw ValidationError("config key 'crop-size' must be at least 16");
  if (c.crop_size % c.scale != 0) throw ValidationError("config key 'crop-size' must be divisible by scale");
  if (c.momentum < 0 || c.momentum >= 1) throw ValidationError("config key 'momentum' must be in [0,1)");
  if (c.projector_samples < 1000) throw ValidationError("config key 'projector-samples' must be >= 1000");
  for (double w : {c.w_similarity, c.w_negative, c.w_positive}) {
    if (w < 0) throw ValidationError("loss weights must be nonnegative");
  }
}

std::string to_text(const TrainConfig& c) {
  std::ostringstream out;
  auto flag = [](bool b) { return b ? "true" : "false"; };
  out << "batchsize = " << c.batchsize << '\n'
      << "lr = " << format_double(c.lr) << '\n'
      << "epochs = " << c.epochs << '\n'
      << "basis-count = " << c.basis_count << '\n'
      << "candidates = " << c.candidates << '\n'
      << "branch-kind = " << to_string(c.branch_kind) << '\n'
      << "eq8-literal = " << flag(c.eq8_literal) << '\n'
      << "scale = " << c.scale << '\n'
      << "seed = " << c.seed << '\n'
      << "crop-size = " << c.crop_size << '\n'
      << "optimizer = " << to_string(c.optimizer) << '\n'
      << "momentum = " << format_double(c.momentum) << '\n'
      << "eq6-literal = " << flag(c.eq6_literal) << '\n'
      << "condition-branches = " << flag(c.condition_branches) << '\n'
      << "condition-fusion = " << flag(c.condition_fusion) << '\n'
      << "low-light = " << flag(c.low_light) << '\n'
      << "w-similarity = " << format_double(c.w_similarity) << '\n'
      << "w-negative = " << format_double(c.w_negative) << '\n'
      << "w-positive = " << format_double(c.w_positive) << '\n'
      << "checkpoint-every = " << c.checkpoint_every << '\n'
      << "projector-samples = " << c.projector_samples << '\n';
  return out.str();
}

}  // namespace ddrf
