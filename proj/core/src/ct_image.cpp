#include "leda/ct_image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace leda {

namespace {

void check_window(WindowSpec w) {
  if (!(w.lo < w.hi))
    throw ConfigError("window lo must be below hi, got [" + std::to_string(w.lo) + ", " +
                      std::to_string(w.hi) + "]");
}

void write_le_floats(std::ofstream& out, const std::vector<float>& v) {
  static_assert(sizeof(float) == 4);
  // little-endian host assumed; payloads are defined little-endian
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
}

}  // namespace

void validate_image(const CtImage& img) {
  if (img.width <= 0 || img.height <= 0)
    throw ConfigError("image '" + img.id + "' has non-positive dimensions");
  if (img.hu.size() != static_cast<std::size_t>(img.width) * img.height)
    throw ConfigError("image '" + img.id + "' pixel buffer size mismatch");
  for (float v : img.hu) {
    if (!std::isfinite(v))
      throw Error("image '" + img.id + "' contains a non-finite pixel");
    if (v < kHuMin || v > kHuMax)
      throw Error("image '" + img.id + "' has pixel " + std::to_string(v) +
                  " HU outside [" + std::to_string(kHuMin) + ", " + std::to_string(kHuMax) + "]");
  }
}

void validate_spec(const PhantomSpec& spec) {
  if (spec.size < 32) throw ConfigError("phantom size must be >= 32");
  if (spec.min_ellipses < 0 || spec.max_ellipses < spec.min_ellipses)
    throw ConfigError("phantom ellipse count range invalid");
  if (!(spec.hu_lo <= spec.hu_hi)) throw ConfigError("phantom HU range invalid");
  for (float v : {spec.hu_lo, spec.hu_hi, spec.background_hu}) {
    if (v < kHuMin || v > kHuMax)
      throw ConfigError("phantom HU value " + std::to_string(v) + " outside CT bounds");
  }
}

std::vector<float> apply_window(const CtImage& img, WindowSpec w) {
  check_window(w);
  const float range = w.hi - w.lo;
  std::vector<float> out(img.hu.size());
  for (std::size_t i = 0; i < img.hu.size(); ++i) {
    const float v = img.hu[i];
    if (!std::isfinite(v))
      throw Error("apply_window: image '" + img.id + "' contains a non-finite pixel");
    out[i] = std::clamp((v - w.lo) / range, 0.0f, 1.0f);
  }
  return out;
}

CtImage invert_window(const std::vector<float>& values, int width, int height,
                      WindowSpec w, std::string id) {
  check_window(w);
  if (values.size() != static_cast<std::size_t>(width) * height)
    throw ConfigError("invert_window: buffer size does not match " + std::to_string(width) +
                      "x" + std::to_string(height));
  CtImage img;
  img.width = width;
  img.height = height;
  img.id = std::move(id);
  img.hu.resize(values.size());
  const float range = w.hi - w.lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = values[i];
    if (!(v >= -1e-6f && v <= 1.0f + 1e-6f))
      throw Error("invert_window: value " + std::to_string(v) + " outside [0,1] in '" +
                  img.id + "'");
    img.hu[i] = w.lo + std::clamp(v, 0.0f, 1.0f) * range;
  }
  return img;
}

CtImage generate_phantom(const PhantomSpec& spec) {
  validate_spec(spec);
  std::mt19937_64 rng(spec.seed);

  CtImage img;
  img.width = spec.size;
  img.height = spec.size;
  img.id = "phantom-" + std::to_string(spec.seed);
  img.hu.assign(static_cast<std::size_t>(spec.size) * spec.size, spec.background_hu);

  std::uniform_int_distribution<int> count_dist(spec.min_ellipses, spec.max_ellipses);
  const int count = count_dist(rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double s = spec.size;
  for (int e = 0; e < count; ++e) {
    const double cx = (0.15 + 0.7 * unit(rng)) * s;
    const double cy = (0.15 + 0.7 * unit(rng)) * s;
    const double a = (0.06 + 0.24 * unit(rng)) * s;
    const double b = (0.06 + 0.24 * unit(rng)) * s;
    const double theta = unit(rng) * M_PI;
    const double hu = spec.hu_lo + (spec.hu_hi - spec.hu_lo) * unit(rng);
    const double soft = 0.5 + 2.0 * unit(rng);  // edge half-width in pixels

    const double ct = std::cos(theta), st = std::sin(theta);
    for (int y = 0; y < spec.size; ++y) {
      for (int x = 0; x < spec.size; ++x) {
        const double dx = x + 0.5 - cx;
        const double dy = y + 0.5 - cy;
        const double u = (dx * ct + dy * st) / a;
        const double v = (-dx * st + dy * ct) / b;
        const double rho = std::sqrt(u * u + v * v);
        // signed distance to the boundary, approximated radially
        const double t = (1.0 - rho) * std::min(a, b);
        const double alpha = std::clamp(0.5 + t / (2.0 * soft), 0.0, 1.0);
        if (alpha > 0.0) {
          float& px = img.at(y, x);
          px = static_cast<float>((1.0 - alpha) * px + alpha * hu);
        }
      }
    }
  }
  return img;
}

CtImage simulate_low_dose(const CtImage& ndct, double photon_count, std::uint64_t seed,
                          WindowSpec w) {
  if (!(photon_count > 0.0))
    throw ConfigError("simulate_low_dose: photon count must be positive");
  check_window(w);
  validate_image(ndct);

  std::mt19937_64 rng(seed);
  std::poisson_distribution<long long> poisson;
  using Param = std::poisson_distribution<long long>::param_type;

  CtImage out;
  out.width = ndct.width;
  out.height = ndct.height;
  out.id = ndct.id;
  out.hu.resize(ndct.hu.size());

  const double range = static_cast<double>(w.hi) - w.lo;
  for (std::size_t i = 0; i < ndct.hu.size(); ++i) {
    const double mu = std::clamp((ndct.hu[i] - w.lo) / range, 0.0, 1.0);
    const double lambda = photon_count * std::exp(-mu);
    long long n = poisson(rng, Param(lambda));
    if (n < 1) n = 1;  // zero counts would map to infinite attenuation
    const double mu_noisy = std::log(photon_count / static_cast<double>(n));
    const double hu = w.lo + mu_noisy * range;
    out.hu[i] = static_cast<float>(std::clamp(hu, static_cast<double>(kHuMin),
                                              static_cast<double>(kHuMax)));
  }
  return out;
}

// --- .cti --------------------------------------------------------------------

void save_cti(const CtImage& img, const std::filesystem::path& sidecar) {
  validate_image(img);
  std::filesystem::path bin = sidecar;
  bin.replace_extension(".bin");

  std::ofstream txt(sidecar);
  if (!txt) throw Error("cannot write " + sidecar.string());
  txt << "CTI1\n";
  txt << "id = " << img.id << "\n";
  txt << "width = " << img.width << "\n";
  txt << "height = " << img.height << "\n";
  txt << "dtype = float32\n";
  txt << "slope = 1\n";
  txt << "intercept = 0\n";
  txt << "payload = " << bin.filename().string() << "\n";
  txt.close();

  std::ofstream payload(bin, std::ios::binary);
  if (!payload) throw Error("cannot write " + bin.string());
  write_le_floats(payload, img.hu);
}

CtImage load_cti(const std::filesystem::path& sidecar) {
  std::ifstream txt(sidecar);
  if (!txt) throw PrerequisiteError("cannot open " + sidecar.string());
  std::string magic;
  std::getline(txt, magic);
  if (trim(magic) != "CTI1")
    throw FormatError(sidecar.string() + ": bad magic '" + trim(magic) + "'");
  std::stringstream rest;
  rest << txt.rdbuf();
  KvMap kv = parse_kv_text(rest.str());

  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(sidecar.string() + ": missing key '" + key + "'");
    return it->second;
  };

  CtImage img;
  std::int64_t tmp = 0;
  if (!parse_int64(need("width"), tmp) || tmp <= 0)
    throw FormatError(sidecar.string() + ": bad width");
  img.width = static_cast<int>(tmp);
  if (!parse_int64(need("height"), tmp) || tmp <= 0)
    throw FormatError(sidecar.string() + ": bad height");
  img.height = static_cast<int>(tmp);
  img.id = need("id");
  if (need("dtype") != "float32")
    throw FormatError(sidecar.string() + ": unsupported dtype '" + need("dtype") + "'");
  double slope = 1.0, intercept = 0.0;
  if (!parse_double(need("slope"), slope) || !parse_double(need("intercept"), intercept))
    throw FormatError(sidecar.string() + ": bad slope/intercept");

  const std::filesystem::path bin = sidecar.parent_path() / need("payload");
  std::ifstream payload(bin, std::ios::binary);
  if (!payload) throw PrerequisiteError("cannot open payload " + bin.string());
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  img.hu.resize(n);
  payload.read(reinterpret_cast<char*>(img.hu.data()),
               static_cast<std::streamsize>(n * sizeof(float)));
  if (static_cast<std::size_t>(payload.gcount()) != n * sizeof(float))
    throw FormatError(bin.string() + ": payload shorter than " + std::to_string(n) + " floats");
  if (slope != 1.0 || intercept != 0.0) {
    for (float& v : img.hu) v = static_cast<float>(slope * v + intercept);
  }
  validate_image(img);
  return img;
}

std::vector<std::filesystem::path> list_cti(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw PrerequisiteError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".cti") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<CtImage> load_images(const std::filesystem::path& root,
                                 const std::string& split, const std::string& kind) {
  std::vector<CtImage> out;
  for (const auto& p : list_cti(root / split / kind)) out.push_back(load_cti(p));
  std::sort(out.begin(), out.end(),
            [](const CtImage& a, const CtImage& b) { return a.id < b.id; });
  return out;
}

std::vector<PairedSample> load_paired_split(const std::filesystem::path& root,
                                            const std::string& split) {
  std::vector<CtImage> ldct = load_images(root, split, "ldct");
  std::vector<CtImage> ndct = load_images(root, split, "ndct");
  if (ldct.size() != ndct.size())
    throw PrerequisiteError("split '" + split + "': " + std::to_string(ldct.size()) +
                            " ldct vs " + std::to_string(ndct.size()) + " ndct images");
  std::vector<PairedSample> out;
  out.reserve(ldct.size());
  for (std::size_t i = 0; i < ldct.size(); ++i) {
    if (ldct[i].id != ndct[i].id)
      throw PrerequisiteError("split '" + split + "': unpaired ids '" + ldct[i].id +
                              "' vs '" + ndct[i].id + "'");
    if (ldct[i].width != ndct[i].width || ldct[i].height != ndct[i].height)
      throw PrerequisiteError("pair '" + ldct[i].id + "': shape mismatch");
    out.push_back({std::move(ldct[i]), std::move(ndct[i])});
  }
  return out;
}

}  // namespace leda
