#include "ddrf/dataset.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "ddrf/errors.hpp"

namespace ddrf {

namespace fs = std::filesystem;

// Source pairs ----------------------------------------------------------------

std::vector<SourcePair> load_source_pairs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("source directory not found: " + dir.string());
  std::map<std::string, std::pair<fs::path, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    const std::string stem = entry.path().stem().string();
    if (stem.size() > 2 && stem.ends_with("_v")) {
      found[stem.substr(0, stem.size() - 2)].first = entry.path();
    } else if (stem.size() > 2 && stem.ends_with("_i")) {
      found[stem.substr(0, stem.size() - 2)].second = entry.path();
    } else {
      throw ValidationError("source file without _v/_i suffix: " + entry.path().filename().string());
    }
  }
  std::vector<SourcePair> pairs;
  for (const auto& [name, paths] : found) {
    if (paths.first.empty()) throw ValidationError("unpaired infrared image: " + paths.second.filename().string());
    if (paths.second.empty()) throw ValidationError("unpaired visible image: " + paths.first.filename().string());
    SourcePair pair{name, read_png(paths.first), read_png(paths.second)};
    if (!pair.visible.same_shape(pair.infrared)) {
      throw ValidationError("source pair '" + name + "' is not co-registered (shapes differ)");
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

SourcePair make_scene_pair(std::size_t height, std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  Image vis(height, width), ir(height, width);
  const double h = static_cast<double>(height), w = static_cast<double>(width);

  const double base = rng.uniform(0.25, 0.6), gy = rng.uniform(-0.2, 0.2), gx = rng.uniform(-0.2, 0.2);
  const double ir_base = rng.uniform(0.1, 0.3);
  struct Wave {
    double fy, fx, phase, amp;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 3; ++k) {
    waves.push_back({rng.uniform(0.02, 0.12), rng.uniform(0.02, 0.12), rng.uniform(0, 6.283), rng.uniform(0.02, 0.06)});
  }
  const Wave fine{rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9), rng.uniform(0, 6.283), rng.uniform(0.03, 0.07)};
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      double v = base + gy * (r / h - 0.5) + gx * (c / w - 0.5);
      for (const Wave& wv : waves) v += wv.amp * std::sin(wv.fy * r + wv.fx * c + wv.phase);
      v += fine.amp * std::sin(fine.fy * r + fine.fx * c + fine.phase);
      vis.at(r, c) = v;
      ir.at(r, c) = ir_base + 0.1 * (r / h);
    }
  }

  const int objects = rng.uniform_int(5, 9);
  for (int o = 0; o < objects; ++o) {
    const bool ellipse = rng.uniform() < 0.5;
    const double cy = rng.uniform(0, h), cx = rng.uniform(0, w);
    const double ry = rng.uniform(0.06, 0.25) * h, rx = rng.uniform(0.06, 0.25) * w;
    const double shade = rng.uniform(0.05, 0.95);
    const double temperature = rng.uniform() < 0.4 ? rng.uniform(0.7, 1.0) : rng.uniform(0.15, 0.5);
    const double stripes = rng.uniform() < 0.3 ? rng.uniform(0.8, 1.6) : 0.0;
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        const double dy = (r - cy) / ry, dx = (c - cx) / rx;
        const bool inside = ellipse ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (!inside) continue;
        vis.at(r, c) = shade + (stripes > 0 ? 0.08 * std::sin(stripes * c) : 0.0);
        ir.at(r, c) = temperature;
      }
    }
  }
  // A warm body hidden in the visible band.
  const double by = rng.uniform(0.2, 0.8) * h, bx = rng.uniform(0.2, 0.8) * w, bs = rng.uniform(3, 8);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const double d2 = ((r - by) * (r - by) + (c - bx) * (c - bx)) / (2 * bs * bs);
      ir.at(r, c) += 0.5 * std::exp(-d2);
    }
  }
  // Thermal imagery is softer than the visible band.
  ir = blur(ir, gaussian_kernel(0.8, 0.8, 0.0));
  return {"scene" + std::to_string(seed), clamp01(std::move(vis)), clamp01(std::move(ir))};
}

void write_source_pair(const fs::path& dir, const SourcePair& pair) {
  fs::create_directories(dir);
  write_png(dir / (pair.name + "_v.png"), pair.visible);
  write_png(dir / (pair.name + "_i.png"), pair.infrared);
}

// Synthesis -------------------------------------------------------------------

Dataset synth_dataset(std::span<const SourcePair> sources, std::size_t count, const TrainConfig& config,
                      std::uint64_t seed) {
  validate(config);
  if (sources.size() < 2) throw ValidationError("synth-dataset needs at least 2 source pairs");
  const auto crop_size = static_cast<std::size_t>(config.crop_size);
  for (const auto& s : sources) {
    if (s.visible.height < crop_size || s.visible.width < crop_size) {
      throw ValidationError("source pair '" + s.name + "' (" + std::to_string(s.visible.height) + "x" +
                            std::to_string(s.visible.width) + ") is smaller than crop_size-size " +
                            std::to_string(crop_size));
    }
  }
  if (crop_size < kKernelSize) throw ValidationError("crop_size-size must be at least the kernel size");

  Dataset ds;
  ds.seed = seed;
  ds.bank_seed = seed;
  ds.crop_size = config.crop_size;
  ds.scale = config.scale;
  const KernelBank bank = build_kernel_bank(ds.bank_seed);
  const SpecSampling sampling{config.scale, config.variants_per_family(), config.low_light};

  ds.samples.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    Rng rng(derive_seed(seed, 0x73796e, k));
    SamplePair& s = ds.samples[k];
    const SourcePair& src = sources[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(sources.size()) - 1))];
    s.source = src.name;
    s.top = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(src.visible.height - crop_size)));
    s.left = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(src.visible.width - crop_size)));
    s.clean_v = crop(src.visible, s.top, s.left, crop_size, crop_size);
    s.clean_i = crop(src.infrared, s.top, s.left, crop_size, crop_size);
    s.spec_v = sample_degradation_spec(bank, rng, 1, sampling);
    s.spec_i = sample_degradation_spec(bank, rng, 2, sampling);
    s.noise_seed_v = rng.next();
    s.noise_seed_i = rng.next();
    std::tie(s.degraded_v, s.degraded_i) = regenerate_degraded(s, bank);
  }
  return ds;
}

std::pair<Image, Image> regenerate_degraded(const SamplePair& sample, const KernelBank& bank) {
  (void)bank;
  Rng rng_v(sample.noise_seed_v), rng_i(sample.noise_seed_i);
  return {degrade(sample.clean_v, sample.spec_v, rng_v), degrade(sample.clean_i, sample.spec_i, rng_i)};
}

// Serialization ---------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
T parse_field(const std::map<std::string, std::string>& fields, const std::string& key, std::size_t line) {
  auto it = fields.find(key);
  if (it == fields.end()) {
    throw ValidationError("dataset manifest line " + std::to_string(line) + ": missing '" + key + "'");
  }
  T out{};
  const std::string& v = it->second;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ValidationError("dataset manifest line " + std::to_string(line) + ": bad value for '" + key + "'");
  }
  return out;
}

void write_spec(std::ostream& out, const char* prefix, const DegradationSpec& s, std::uint64_t noise_seed) {
  const DynamicKernel& k = s.kernel;
  out << ' ' << prefix << ".a=" << fmt_double(k.a) << ' ' << prefix << ".b=" << fmt_double(k.b) << ' '
      << prefix << ".c=" << fmt_double(k.c) << ' ' << prefix << ".jm=" << k.j_m << ' ' << prefix
      << ".ji=" << k.j_i << ' ' << prefix << ".ja=" << k.j_a << ' ' << prefix
      << ".sigma=" << fmt_double(s.noise_sigma) << ' ' << prefix << ".scale=" << s.scale << ' ' << prefix
      << ".model=" << s.model_index << ' ' << prefix << ".gain=" << fmt_double(s.gain) << ' ' << prefix
      << ".noise-seed=" << noise_seed;
}

DegradationSpec read_spec(const std::map<std::string, std::string>& f, const std::string& p, const KernelBank& bank,
                          std::size_t line, std::uint64_t& noise_seed) {
  DegradationSpec s;
  s.kernel = synthesize_dynamic_kernel(bank, parse_field<double>(f, p + ".a", line),
                                       parse_field<double>(f, p + ".b", line), parse_field<double>(f, p + ".c", line),
                                       parse_field<int>(f, p + ".jm", line), parse_field<int>(f, p + ".ji", line),
                                       parse_field<int>(f, p + ".ja", line));
  s.noise_sigma = parse_field<double>(f, p + ".sigma", line);
  s.scale = parse_field<int>(f, p + ".scale", line);
  s.model_index = parse_field<int>(f, p + ".model", line);
  s.gain = parse_field<double>(f, p + ".gain", line);
  noise_seed = parse_field<std::uint64_t>(f, p + ".noise-seed", line);
  return s;
}

void write_raster(std::ostream& out, const Image& image) {
  for (double v : image.pixels) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

Image read_raster(std::istream& in, std::size_t h, std::size_t w) {
  Image image(h, w);
  for (double& v : image.pixels) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw ValidationError("dataset data.bin is truncated");
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | bytes[b];
    v = std::bit_cast<double>(bits);
  }
  return image;
}

std::map<std::string, std::string> parse_pairs(std::istringstream& words) {
  std::map<std::string, std::string> fields;
  std::string token;
  while (words >> token) {
    const auto eq = token.find('=');
    if (eq != std::string::npos) fields[token.substr(0, eq)] = token.substr(eq + 1);
  }
  return fields;
}

}  // namespace

void write_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "manifest.txt", std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
    out << "ddrf-dataset 1\n"
        << "seed " << ds.seed << '\n'
        << "bank-seed " << ds.bank_seed << '\n'
        << "crop-size " << ds.crop_size << '\n'
        << "scale " << ds.scale << '\n'
        << "count " << ds.samples.size() << '\n';
    for (std::size_t k = 0; k < ds.samples.size(); ++k) {
      const SamplePair& s = ds.samples[k];
      out << "sample " << k << " source=" << s.source << " top=" << s.top << " left=" << s.left;
      write_spec(out, "v", s.spec_v, s.noise_seed_v);
      write_spec(out, "i", s.spec_i, s.noise_seed_i);
      out << '\n';
    }
  }
  std::ofstream bin(dir / "data.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("cannot write " + (dir / "data.bin").string());
  for (const SamplePair& s : ds.samples) {
    write_raster(bin, s.clean_v);
    write_raster(bin, s.clean_i);
    write_raster(bin, s.degraded_v);
    write_raster(bin, s.degraded_i);
  }
}

Dataset read_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw ValidationError("dataset manifest not found in " + dir.string());
  std::string line;
  if (!std::getline(in, line) || line != "ddrf-dataset 1") {
    throw ValidationError("dataset manifest " + (dir / "manifest.txt").string() + ": bad header");
  }
  Dataset ds;
  std::map<std::string, std::string> header;
  std::size_t count = 0, line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream words(line);
    std::string key;
    words >> key;
    if (key != "sample") {
      std::string value;
      words >> value;
      header[key] = value;
      continue;
    }
    if (ds.samples.empty()) {
      ds.seed = parse_field<std::uint64_t>(header, "seed", line_no);
      ds.bank_seed = parse_field<std::uint64_t>(header, "bank-seed", line_no);
      ds.crop_size = parse_field<int>(header, "crop-size", line_no);
      ds.scale = parse_field<int>(header, "scale", line_no);
      count = parse_field<std::size_t>(header, "count", line_no);
    }
    std::size_t index = 0;
    words >> index;
    auto fields = parse_pairs(words);
    static thread_local std::unique_ptr<KernelBank> bank;
    if (!bank || bank->seed() != ds.bank_seed) bank = std::make_unique<KernelBank>(build_kernel_bank(ds.bank_seed));
    SamplePair s;
    s.source = fields["source"];
    s.top = parse_field<std::size_t>(fields, "top", line_no);
    s.left = parse_field<std::size_t>(fields, "left", line_no);
    s.spec_v = read_spec(fields, "v", *bank, line_no, s.noise_seed_v);
    s.spec_i = read_spec(fields, "i", *bank, line_no, s.noise_seed_i);
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.size() != count) {
    throw ValidationError("dataset manifest lists " + std::to_string(ds.samples.size()) + " samples, header says " +
                          std::to_string(count));
  }

  std::ifstream bin(dir / "data.bin", std::ios::binary);
  if (!bin) throw ValidationError("dataset data.bin not found in " + dir.string());
  const auto crop = static_cast<std::size_t>(ds.crop_size);
  const auto low = (crop + static_cast<std::size_t>(ds.scale) - 1) / static_cast<std::size_t>(ds.scale);
  for (SamplePair& s : ds.samples) {
    s.clean_v = read_raster(bin, crop, crop);
    s.clean_i = read_raster(bin, crop, crop);
    s.degraded_v = read_raster(bin, low, low);
    s.degraded_i = read_raster(bin, low, low);
  }
  return ds;
}

std::string dataset_hash(const fs::path& dir) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char* name : {"manifest.txt", "data.bin"}) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) throw ValidationError("dataset file missing: " + (dir / name).string());
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
      for (std::streamsize i = 0; i < in.gcount(); ++i) {
        h ^= static_cast<unsigned char>(buf[i]);
        h *= 0x100000001b3ULL;
      }
    }
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace ddrf
