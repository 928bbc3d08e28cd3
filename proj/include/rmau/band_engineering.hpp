#pragma once

// Derived input bands appended after the original spectral bands.
//
// Derived band order (channel 15 onward for a 14-band tile):
//   B2_norm B3_norm B4_norm NDVI NDMI NBR GRAY GAUSS MEDIAN GRAD_X GRAD_Y CANNY
// GAUSS, MEDIAN, GRAD_X and GRAD_Y are computed from GRAY; CANNY from GRAY
// after min-max normalization. On 3-band RGB tiles the R, G, B bands stand in
// for B4, B3, B2 and the three spectral indices are dropped.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rmau/core_types.hpp"
#include "rmau/error.hpp"

namespace rmau {

/// Single-band 2-D raster, row-major.
struct Band {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  Band() = default;
  Band(int h, int w, float fill = 0.0f) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
  float at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }

  /// Replicated-edge read.
  float clamped(int r, int c) const {
    return at(std::clamp(r, 0, height - 1), std::clamp(c, 0, width - 1));
  }

  friend bool operator==(const Band&, const Band&) = default;
};

inline Band transpose(const Band& b) {
  Band out(b.width, b.height);
  for (int r = 0; r < b.height; ++r)
    for (int c = 0; c < b.width; ++c) out.at(c, r) = b.at(r, c);
  return out;
}

inline Band extract_band(const Tile& tile, int index) {
  Band out(tile.height, tile.width);
  for (int r = 0; r < tile.height; ++r)
    for (int c = 0; c < tile.width; ++c) out.at(r, c) = tile.at(r, c, index);
  return out;
}

// ---------------------------------------------------------------------------
// Band roles and naming

inline std::vector<std::string> sentinel_band_names() {
  std::vector<std::string> names;
  for (int i = 1; i <= 14; ++i) names.push_back("B" + std::to_string(i));
  return names;
}

inline std::vector<std::string> rgb_band_names() { return {"R", "G", "B"}; }

/// Resolves a Sentinel-2 band role ("B2", "B8", ...) to a channel index,
/// falling back to the RGB stand-ins for B2/B3/B4. Returns -1 if absent.
inline int resolve_band(const Tile& tile, const std::string& role) {
  if (int idx = tile.band_index(role); idx >= 0) return idx;
  if (role == "B4") return tile.band_index("R");
  if (role == "B3") return tile.band_index("G");
  if (role == "B2") return tile.band_index("B");
  return -1;
}

inline int require_band(const Tile& tile, const std::string& role) {
  const int idx = resolve_band(tile, role);
  if (idx < 0) throw Error(Errc::MissingBand, "tile '" + tile.id + "' has no band for role " + role);
  return idx;
}

// ---------------------------------------------------------------------------
// Per-band operations

/// (x - min) / (max - min) over the whole band; a constant band maps to zeros.
inline Band minmax_normalize(const Band& band) {
  Band out(band.height, band.width);
  if (band.values.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(band.values.begin(), band.values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi == lo) return out;
  for (std::size_t i = 0; i < band.values.size(); ++i)
    out.values[i] = static_cast<float>((band.values[i] - lo) / (hi - lo));
  return out;
}

enum class SpectralIndex { NDVI, NDMI, NBR };

/// Normalized difference (B8 - X) / (B8 + X) with X = B4, B11 or B12.
/// A zero denominator yields 0; results are clamped to [-1, 1].
inline Band spectral_index(const Tile& tile, SpectralIndex kind) {
  const int nir = require_band(tile, "B8");
  const char* other_role = kind == SpectralIndex::NDVI ? "B4" : kind == SpectralIndex::NDMI ? "B11" : "B12";
  const int other = require_band(tile, other_role);
  Band out(tile.height, tile.width);
  for (int r = 0; r < tile.height; ++r)
    for (int c = 0; c < tile.width; ++c) {
      const double a = tile.at(r, c, nir);
      const double b = tile.at(r, c, other);
      const double den = a + b;
      out.at(r, c) = den == 0.0 ? 0.0f : static_cast<float>(std::clamp((a - b) / den, -1.0, 1.0));
    }
  return out;
}

/// Mean of B2, B3, B4.
inline Band grayscale(const Tile& tile) {
  const int b2 = require_band(tile, "B2");
  const int b3 = require_band(tile, "B3");
  const int b4 = require_band(tile, "B4");
  Band out(tile.height, tile.width);
  for (int r = 0; r < tile.height; ++r)
    for (int c = 0; c < tile.width; ++c) {
      const double sum = static_cast<double>(tile.at(r, c, b2)) + tile.at(r, c, b3) + tile.at(r, c, b4);
      out.at(r, c) = static_cast<float>(sum / 3.0);
    }
  return out;
}

enum class SmoothKind { gaussian, median };

inline constexpr int kSmoothWindow = 10;
inline constexpr int kSmoothOffsetLo = -5;  // window spans [-5, +4]
inline constexpr double kSmoothSigma = 2.0;

/// Normalized 1-D Gaussian taps for offsets kSmoothOffsetLo .. kSmoothOffsetLo + 9.
inline std::array<double, kSmoothWindow> smoothing_taps() {
  std::array<double, kSmoothWindow> taps{};
  double sum = 0.0;
  for (int i = 0; i < kSmoothWindow; ++i) {
    const double d = kSmoothOffsetLo + i;
    taps[i] = std::exp(-d * d / (2.0 * kSmoothSigma * kSmoothSigma));
    sum += taps[i];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

namespace detail {

// Separable filtering with replicated edges; taps[i] applies at offset lo + i.
template <std::size_t N>
Band separable_filter(const Band& band, const std::array<double, N>& taps, int lo) {
  std::vector<double> tmp(band.values.size());
  for (int r = 0; r < band.height; ++r)
    for (int c = 0; c < band.width; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < N; ++i) acc += taps[i] * band.clamped(r, c + lo + static_cast<int>(i));
      tmp[static_cast<std::size_t>(r) * band.width + c] = acc;
    }
  Band out(band.height, band.width);
  for (int r = 0; r < band.height; ++r)
    for (int c = 0; c < band.width; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        const int rr = std::clamp(r + lo + static_cast<int>(i), 0, band.height - 1);
        acc += taps[i] * tmp[static_cast<std::size_t>(rr) * band.width + c];
      }
      out.at(r, c) = static_cast<float>(acc);
    }
  return out;
}

}  // namespace detail

/// 10x10 Gaussian (sigma 2) or median filter, replicated edges, same shape.
inline Band smooth(const Band& band, SmoothKind kind) {
  if (kind == SmoothKind::gaussian) return detail::separable_filter(band, smoothing_taps(), kSmoothOffsetLo);

  Band out(band.height, band.width);
  std::vector<float> window(kSmoothWindow * kSmoothWindow);
  constexpr std::size_t mid = kSmoothWindow * kSmoothWindow / 2;
  for (int r = 0; r < band.height; ++r)
    for (int c = 0; c < band.width; ++c) {
      std::size_t k = 0;
      for (int dr = 0; dr < kSmoothWindow; ++dr)
        for (int dc = 0; dc < kSmoothWindow; ++dc)
          window[k++] = band.clamped(r + kSmoothOffsetLo + dr, c + kSmoothOffsetLo + dc);
      std::nth_element(window.begin(), window.begin() + mid, window.end());
      const double upper = window[mid];
      const double lower = *std::max_element(window.begin(), window.begin() + mid);
      out.at(r, c) = static_cast<float>((lower + upper) / 2.0);
    }
  return out;
}

/// Central differences with replicated edges: gx along columns, gy along rows.
inline std::pair<Band, Band> gradients(const Band& band) {
  Band gx(band.height, band.width);
  Band gy(band.height, band.width);
  for (int r = 0; r < band.height; ++r)
    for (int c = 0; c < band.width; ++c) {
      gx.at(r, c) = static_cast<float>((static_cast<double>(band.clamped(r, c + 1)) - band.clamped(r, c - 1)) / 2.0);
      gy.at(r, c) = static_cast<float>((static_cast<double>(band.clamped(r + 1, c)) - band.clamped(r - 1, c)) / 2.0);
    }
  return {std::move(gx), std::move(gy)};
}

inline constexpr double kCannySigma = 1.0;
inline constexpr double kCannyLowPercentile = 0.70;
inline constexpr double kCannyHighPercentile = 0.90;

/// Nearest-rank percentile: sorted[floor(p * (n - 1))].
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) return 0.0;
  const auto k = static_cast<std::size_t>(std::floor(p * static_cast<double>(values.size() - 1)));
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
  return values[k];
}

/// Canny edges on a [0,1] band: Gaussian blur (sigma 1, radius 3), Sobel,
/// non-maximum suppression along the quantized gradient direction, and
/// hysteresis between the 70th and 90th magnitude percentiles. Output is 0/1.
/// NMS keeps a pixel strictly above its "before" neighbour and at least equal
/// to its "after" neighbour, so a symmetric ridge yields one pixel.
inline Band canny(const Band& band) {
  const int h = band.height;
  const int w = band.width;
  constexpr int radius = 3;
  std::array<double, 2 * radius + 1> taps{};
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-(i * i) / (2.0 * kCannySigma * kCannySigma));
    sum += taps[i + radius];
  }
  for (auto& t : taps) t /= sum;
  const Band blurred = detail::separable_filter(band, taps, -radius);

  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> mag(n), gxv(n), gyv(n);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      auto v = [&](int dr, int dc) { return static_cast<double>(blurred.clamped(r + dr, c + dc)); };
      const double gx = (v(-1, 1) + 2 * v(0, 1) + v(1, 1)) - (v(-1, -1) + 2 * v(0, -1) + v(1, -1));
      const double gy = (v(1, -1) + 2 * v(1, 0) + v(1, 1)) - (v(-1, -1) + 2 * v(-1, 0) + v(-1, 1));
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      gxv[i] = gx;
      gyv[i] = gy;
      mag[i] = std::hypot(gx, gy);
    }

  auto mag_at = [&](int r, int c) {
    if (r < 0 || r >= h || c < 0 || c >= w) return 0.0;
    return mag[static_cast<std::size_t>(r) * w + c];
  };
  std::vector<double> thin(n, 0.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      if (mag[i] <= 0.0) continue;
      double angle = std::atan2(gyv[i], gxv[i]) * 180.0 / 3.14159265358979323846;
      if (angle < 0) angle += 180.0;
      int dr = 0, dc = 0;
      if (angle < 22.5 || angle >= 157.5) {
        dc = 1;
      } else if (angle < 67.5) {
        dr = 1;
        dc = 1;
      } else if (angle < 112.5) {
        dr = 1;
      } else {
        dr = 1;
        dc = -1;
      }
      if (mag[i] > mag_at(r - dr, c - dc) && mag[i] >= mag_at(r + dr, c + dc)) thin[i] = mag[i];
    }

  const double low = percentile(mag, kCannyLowPercentile);
  const double high = percentile(mag, kCannyHighPercentile);

  Band out(h, w);
  std::deque<std::pair<int, int>> frontier;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double m = thin[static_cast<std::size_t>(r) * w + c];
      if (m > 0.0 && m >= high) {
        out.at(r, c) = 1.0f;
        frontier.emplace_back(r, c);
      }
    }
  while (!frontier.empty()) {
    const auto [r, c] = frontier.front();
    frontier.pop_front();
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        const int rr = r + dr;
        const int cc = c + dc;
        if (rr < 0 || rr >= h || cc < 0 || cc >= w || out.at(rr, cc) != 0.0f) continue;
        const double m = thin[static_cast<std::size_t>(rr) * w + cc];
        if (m > 0.0 && m >= low) {
          out.at(rr, cc) = 1.0f;
          frontier.emplace_back(rr, cc);
        }
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Recipes

enum class DerivedBand { NormB2, NormB3, NormB4, NDVI, NDMI, NBR, Gray, Gaussian, Median, GradX, GradY, Canny };

inline constexpr std::array<DerivedBand, 12> kAllDerivedBands = {
    DerivedBand::NormB2, DerivedBand::NormB3,   DerivedBand::NormB4, DerivedBand::NDVI,
    DerivedBand::NDMI,   DerivedBand::NBR,      DerivedBand::Gray,   DerivedBand::Gaussian,
    DerivedBand::Median, DerivedBand::GradX,    DerivedBand::GradY,  DerivedBand::Canny};

inline bool needs_infrared(DerivedBand b) {
  return b == DerivedBand::NDVI || b == DerivedBand::NDMI || b == DerivedBand::NBR;
}

/// Name of a derived band; normalized bands take the source band's name.
inline std::string derived_band_name(DerivedBand b, bool rgb = false) {
  switch (b) {
    case DerivedBand::NormB2: return rgb ? "B_norm" : "B2_norm";
    case DerivedBand::NormB3: return rgb ? "G_norm" : "B3_norm";
    case DerivedBand::NormB4: return rgb ? "R_norm" : "B4_norm";
    case DerivedBand::NDVI: return "NDVI";
    case DerivedBand::NDMI: return "NDMI";
    case DerivedBand::NBR: return "NBR";
    case DerivedBand::Gray: return "GRAY";
    case DerivedBand::Gaussian: return "GAUSS";
    case DerivedBand::Median: return "MEDIAN";
    case DerivedBand::GradX: return "GRAD_X";
    case DerivedBand::GradY: return "GRAD_Y";
    case DerivedBand::Canny: return "CANNY";
  }
  return "";
}

struct BandRecipe {
  std::string name = "none";
  std::vector<DerivedBand> bands;

  /// Channels produced for a tile with `input_channels` bands.
  int output_channels(int input_channels, bool rgb = false) const {
    int n = input_channels;
    for (auto b : bands)
      if (!(rgb && needs_infrared(b))) ++n;
    return n;
  }

  friend bool operator==(const BandRecipe&, const BandRecipe&) = default;
};

/// Recipes mirroring the input-feature ablation: none, b15-17, b15-21,
/// b15-23 (default), b15-25, b15-26.
inline BandRecipe make_recipe(const std::string& name) {
  std::size_t count = 0;
  if (name == "none") count = 0;
  else if (name == "b15-17") count = 3;
  else if (name == "b15-21") count = 7;
  else if (name == "b15-23") count = 9;
  else if (name == "b15-25") count = 11;
  else if (name == "b15-26") count = 12;
  else throw Error(Errc::BadConfig, "unknown band recipe '" + name + "'");
  BandRecipe recipe;
  recipe.name = name;
  recipe.bands.assign(kAllDerivedBands.begin(), kAllDerivedBands.begin() + static_cast<std::ptrdiff_t>(count));
  return recipe;
}

inline BandRecipe default_recipe() { return make_recipe("b15-23"); }

inline bool is_rgb_tile(const Tile& tile) {
  return tile.channels == 3 && tile.band_index("R") >= 0 && tile.band_index("G") >= 0 && tile.band_index("B") >= 0;
}

/// Band names produced by expand_bands for a base tile of the given kind.
inline std::vector<std::string> expanded_band_names(bool rgb, const BandRecipe& recipe) {
  std::vector<std::string> names = rgb ? rgb_band_names() : sentinel_band_names();
  for (auto b : recipe.bands)
    if (!(rgb && needs_infrared(b))) names.push_back(derived_band_name(b, rgb));
  return names;
}

/// Best-effort band names for a raster known only by its channel count:
/// 14-band Sentinel stacks and RGB tiles, plus every recipe expansion of them.
inline std::vector<std::string> default_band_names(int channels) {
  for (const char* r : {"none", "b15-17", "b15-21", "b15-23", "b15-25", "b15-26"}) {
    const BandRecipe recipe = make_recipe(r);
    if (recipe.output_channels(14) == channels) return expanded_band_names(false, recipe);
    if (recipe.output_channels(3, true) == channels) return expanded_band_names(true, recipe);
  }
  std::vector<std::string> names;
  for (int i = 0; i < channels; ++i) names.push_back("band_" + std::to_string(i + 1));
  return names;
}

/// Appends the recipe's derived bands to a copy of the tile.
inline Tile expand_bands(const Tile& tile, const BandRecipe& recipe) {
  if (recipe.bands.empty()) return tile;
  const bool rgb = is_rgb_tile(tile);

  std::vector<Band> extra;
  std::optional<Band> gray;
  auto gray_band = [&]() -> const Band& {
    if (!gray) gray = grayscale(tile);
    return *gray;
  };
  std::optional<std::pair<Band, Band>> grads;
  for (auto b : recipe.bands) {
    if (rgb && needs_infrared(b)) continue;
    switch (b) {
      case DerivedBand::NormB2: extra.push_back(minmax_normalize(extract_band(tile, require_band(tile, "B2")))); break;
      case DerivedBand::NormB3: extra.push_back(minmax_normalize(extract_band(tile, require_band(tile, "B3")))); break;
      case DerivedBand::NormB4: extra.push_back(minmax_normalize(extract_band(tile, require_band(tile, "B4")))); break;
      case DerivedBand::NDVI: extra.push_back(spectral_index(tile, SpectralIndex::NDVI)); break;
      case DerivedBand::NDMI: extra.push_back(spectral_index(tile, SpectralIndex::NDMI)); break;
      case DerivedBand::NBR: extra.push_back(spectral_index(tile, SpectralIndex::NBR)); break;
      case DerivedBand::Gray: extra.push_back(gray_band()); break;
      case DerivedBand::Gaussian: extra.push_back(smooth(gray_band(), SmoothKind::gaussian)); break;
      case DerivedBand::Median: extra.push_back(smooth(gray_band(), SmoothKind::median)); break;
      case DerivedBand::GradX:
        if (!grads) grads = gradients(gray_band());
        extra.push_back(grads->first);
        break;
      case DerivedBand::GradY:
        if (!grads) grads = gradients(gray_band());
        extra.push_back(grads->second);
        break;
      case DerivedBand::Canny: extra.push_back(canny(minmax_normalize(gray_band()))); break;
    }
  }

  Tile out(tile.id, tile.height, tile.width, tile.channels + static_cast<int>(extra.size()));
  out.band_names = tile.band_names.empty() ? default_band_names(tile.channels) : tile.band_names;
  for (auto b : recipe.bands)
    if (!(rgb && needs_infrared(b))) out.band_names.push_back(derived_band_name(b, rgb));
  for (int r = 0; r < tile.height; ++r)
    for (int c = 0; c < tile.width; ++c) {
      for (int ch = 0; ch < tile.channels; ++ch) out.at(r, c, ch) = tile.at(r, c, ch);
      for (std::size_t e = 0; e < extra.size(); ++e) out.at(r, c, tile.channels + static_cast<int>(e)) = extra[e].at(r, c);
    }
  return out;
}

}  // namespace rmau
