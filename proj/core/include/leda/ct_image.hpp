#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "leda/util.hpp"

namespace leda {

/// Calibrated HU bounds accepted for image pixels.
inline constexpr float kHuMin = -1024.0f;
inline constexpr float kHuMax = 4000.0f;

/// Affine HU window mapped onto [0,1] with clamping.
struct WindowSpec {
  float lo = 0.0f;
  float hi = 1.0f;
};

/// Window used for training-time normalization.
inline constexpr WindowSpec kTrainingWindow{-1000.0f, 2000.0f};
/// Abdominal window used for metric computation.
inline constexpr WindowSpec kMetricWindow{-160.0f, 240.0f};

/// Single-channel CT slice with HU-valued pixels, row-major.
struct CtImage {
  int width = 0;
  int height = 0;
  std::string id;
  std::vector<float> hu;

  float at(int row, int col) const { return hu[static_cast<std::size_t>(row) * width + col]; }
  float& at(int row, int col) { return hu[static_cast<std::size_t>(row) * width + col]; }
  std::size_t pixel_count() const { return hu.size(); }
};

/// Throws if pixels are non-finite or outside [kHuMin, kHuMax].
void validate_image(const CtImage& img);

struct PairedSample {
  CtImage ldct;
  CtImage ndct;
};

/// Synthetic slice description: background plus soft-edged ellipses.
struct PhantomSpec {
  int size = 64;
  int min_ellipses = 4;
  int max_ellipses = 10;
  float hu_lo = -150.0f;  // per-ellipse HU range
  float hu_hi = 235.0f;
  float background_hu = -50.0f;
  std::uint64_t seed = 0;
};

void validate_spec(const PhantomSpec& spec);

// --- operations --------------------------------------------------------------

/// clamp((hu - lo) / (hi - lo), 0, 1) per pixel.
std::vector<float> apply_window(const CtImage& img, WindowSpec w);

/// Exact inverse of apply_window on the non-clamped range.
/// Values outside [0,1] by more than 1e-6 are rejected.
CtImage invert_window(const std::vector<float>& values, int width, int height,
                      WindowSpec w, std::string id);

/// Deterministic function of the spec (seed included).
CtImage generate_phantom(const PhantomSpec& spec);

/// Image-domain Poisson noise on pseudo-intensities derived from the training
/// window. Deterministic given seed; noise variance shrinks as photon_count
/// grows. Output is clamped to calibrated HU bounds.
CtImage simulate_low_dose(const CtImage& ndct, double photon_count, std::uint64_t seed,
                          WindowSpec w = kTrainingWindow);

// --- .cti file pair ----------------------------------------------------------

/// Writes `<stem>.cti` (text sidecar) plus `<stem>.bin` (LE float32 payload).
void save_cti(const CtImage& img, const std::filesystem::path& sidecar);
CtImage load_cti(const std::filesystem::path& sidecar);

/// Lists `*.cti` in a directory, sorted by filename.
std::vector<std::filesystem::path> list_cti(const std::filesystem::path& dir);

/// Loads `<root>/<split>/{ldct,ndct}` and pairs images by id.
std::vector<PairedSample> load_paired_split(const std::filesystem::path& root,
                                            const std::string& split);
/// Loads all images of `<root>/<split>/<kind>`, sorted by id.
std::vector<CtImage> load_images(const std::filesystem::path& root,
                                 const std::string& split, const std::string& kind);

}  // namespace leda
