// Checkpoint layout:
//
//   ddrf-checkpoint <version>\n
//   <key> <value>\n ...            (seed, t, candidates, kernel-size, branch-kind,
//                                   eq6-literal, condition-branches, condition-fusion)
//   arrays <count>\n
//   array <name> <rank> <dim>...\n  (one per array, declaration order)
//   end\n
//   per array: uint64 element count, then that many float64, little-endian.

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "ddrf/errors.hpp"
#include "ddrf/network.hpp"

namespace ddrf {

namespace {

static_assert(sizeof(double) == 8);

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(v >> (8 * b));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw ValidationError("checkpoint: truncated binary section");
  std::uint64_t v = 0;
  for (int b = 7; b >= 0; --b) v = (v << 8) | bytes[b];
  return v;
}

struct NamedArray {
  std::string name;
  ad::DiffArray value;
};

std::vector<NamedArray> collect_arrays(const DdrfNetwork& network) {
  std::vector<NamedArray> arrays;
  network.for_each_param([&](const ParamTensor& p) { arrays.push_back({p.name, p.value}); });
  const auto& proj = network.projector();
  arrays.push_back({"projector.basis", ad::DiffArray({proj.dims(), kKernelArea}, proj.basis())});
  arrays.push_back({"projector.mean", ad::DiffArray({kKernelArea}, proj.mean())});
  return arrays;
}

const std::string& require_field(const std::map<std::string, std::string>& fields, const std::string& key) {
  auto it = fields.find(key);
  if (it == fields.end()) throw ValidationError("checkpoint is missing field '" + key + "'");
  return it->second;
}

bool parse_flag(const std::string& key, const std::string& value) {
  if (value == "1") return true;
  if (value == "0") return false;
  throw ValidationError("checkpoint field '" + key + "' must be 0 or 1, got '" + value + "'");
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw ValidationError("checkpoint field '" + key + "' is not an unsigned integer: '" + value + "'");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DdrfNetwork& network) {
  const auto& cfg = network.config();
  const auto arrays = collect_arrays(network);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out << "ddrf-checkpoint " << kCheckpointVersion << '\n'
      << "seed " << cfg.seed << '\n'
      << "t " << network.projector().dims() << '\n'
      << "candidates " << cfg.candidates << '\n'
      << "kernel-size " << kKernelSize << '\n'
      << "branch-kind " << to_string(cfg.branch_kind) << '\n'
      << "eq6-literal " << (cfg.eq6_literal ? 1 : 0) << '\n'
      << "condition-branches " << (cfg.condition_branches ? 1 : 0) << '\n'
      << "condition-fusion " << (cfg.condition_fusion ? 1 : 0) << '\n'
      << "arrays " << arrays.size() << '\n';
  for (const auto& a : arrays) {
    out << "array " << a.name << ' ' << a.value.rank();
    for (std::size_t d : a.value.shape()) out << ' ' << d;
    out << '\n';
  }
  out << "end\n";
  for (const auto& a : arrays) {
    put_u64(out, a.value.size());
    for (double v : a.value.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

DdrfNetwork load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());

  std::string line;
  if (!std::getline(in, line) || line.rfind("ddrf-checkpoint ", 0) != 0) {
    throw ValidationError("checkpoint " + path.string() + ": bad magic line");
  }
  if (line != "ddrf-checkpoint " + std::to_string(kCheckpointVersion)) {
    throw ValidationError("checkpoint " + path.string() + ": unsupported version '" + line.substr(16) + "'");
  }

  std::map<std::string, std::string> fields;
  struct Declared {
    std::string name;
    ad::Shape shape;
  };
  std::vector<Declared> declared;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream words(line);
    std::string key;
    words >> key;
    if (key == "array") {
      Declared d;
      std::size_t rank = 0;
      words >> d.name >> rank;
      d.shape.resize(rank);
      for (auto& dim : d.shape) words >> dim;
      if (!words) throw ValidationError("checkpoint: malformed array line '" + line + "'");
      declared.push_back(std::move(d));
    } else {
      std::string value;
      words >> value;
      fields[key] = value;
    }
  }
  if (!ended) throw ValidationError("checkpoint is missing field 'end'");

  NetworkConfig cfg;
  cfg.seed = parse_uint("seed", require_field(fields, "seed"));
  const auto t = parse_uint("t", require_field(fields, "t"));
  cfg.candidates = parse_uint("candidates", require_field(fields, "candidates"));
  if (parse_uint("kernel-size", require_field(fields, "kernel-size")) != kKernelSize) {
    throw ValidationError("checkpoint kernel-size differs from " + std::to_string(kKernelSize));
  }
  cfg.branch_kind = parse_layer_kind(require_field(fields, "branch-kind"));
  cfg.eq6_literal = parse_flag("eq6-literal", require_field(fields, "eq6-literal"));
  cfg.condition_branches = parse_flag("condition-branches", require_field(fields, "condition-branches"));
  cfg.condition_fusion = parse_flag("condition-fusion", require_field(fields, "condition-fusion"));
  require_field(fields, "arrays");

  std::map<std::string, ad::DiffArray> loaded;
  for (const auto& d : declared) {
    const std::uint64_t count = get_u64(in);
    if (count != ad::element_count(d.shape)) {
      throw ValidationError("checkpoint array '" + d.name + "' length " + std::to_string(count) +
                            " does not match its shape " + ad::to_string(d.shape));
    }
    std::vector<double> values(count);
    for (double& v : values) v = std::bit_cast<double>(get_u64(in));
    loaded.emplace(d.name, ad::DiffArray(d.shape, std::move(values)));
  }

  auto take = [&](const std::string& name, const ad::Shape& shape) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw ValidationError("checkpoint is missing field '" + name + "'");
    if (it->second.shape() != shape) {
      throw ValidationError("checkpoint array '" + name + "' has shape " + ad::to_string(it->second.shape()) +
                            ", expected " + ad::to_string(shape));
    }
    return it->second;
  };

  const auto basis = take("projector.basis", {t, kKernelArea});
  const auto mean = take("projector.mean", {kKernelArea});
  DdrfNetwork network(cfg, KernelProjector({basis.values().begin(), basis.values().end()},
                                           {mean.values().begin(), mean.values().end()}));
  network.for_each_param([&](ParamTensor& p) { p.value = take(p.name, p.value.shape()); });
  return network;
}

}  // namespace ddrf
