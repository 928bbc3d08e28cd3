#pragma once

// Raster and record types shared by every module.
//
// Storage contract: rasters are row-major (row, column, channel), rows grow
// downward from a top-left origin. Tiles hold 32-bit floats, masks one byte
// per pixel.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rmau/error.hpp"

namespace rmau {

struct Tile {
  std::string id;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;
  std::vector<std::string> band_names;

  Tile() = default;
  Tile(std::string tile_id, int h, int w, int c, std::vector<std::string> names = {})
      : id(std::move(tile_id)),
        height(h),
        width(w),
        channels(c),
        data(static_cast<std::size_t>(h) * w * c, 0.0f),
        band_names(std::move(names)) {}

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }

  float& at(int r, int c, int ch) { return data[(static_cast<std::size_t>(r) * width + c) * channels + ch]; }
  float at(int r, int c, int ch) const {
    return data[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }

  /// Index of a named band, or -1.
  int band_index(const std::string& name) const {
    auto it = std::find(band_names.begin(), band_names.end(), name);
    return it == band_names.end() ? -1 : static_cast<int>(it - band_names.begin());
  }

  friend bool operator==(const Tile&, const Tile&) = default;
};

struct MaskImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  MaskImage() = default;
  MaskImage(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
  std::uint8_t at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }

  std::size_t positives() const {
    return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](auto v) { return v != 0; }));
  }

  friend bool operator==(const MaskImage&, const MaskImage&) = default;
};

struct ProbMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  ProbMap() = default;
  ProbMap(int h, int w, float fill = 0.0f) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
  float at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }

  friend bool operator==(const ProbMap&, const ProbMap&) = default;
};

enum class ImageLabel { none, landslide };
enum class Split { train, val, test };

inline std::string to_string(ImageLabel l) { return l == ImageLabel::landslide ? "landslide" : "none"; }

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

inline ImageLabel parse_image_label(const std::string& s) {
  if (s == "landslide" || s == "1") return ImageLabel::landslide;
  if (s == "none" || s == "0") return ImageLabel::none;
  throw Error(Errc::BadConfig, "image_label '" + s + "' is not one of landslide|none");
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error(Errc::BadConfig, "split '" + s + "' is not one of train|val|test");
}

/// One manifest row. Segmentation samples carry a mask, detection samples an
/// image label; at least one must be present.
struct SampleRecord {
  std::string tile_path;
  std::optional<std::string> mask_path;
  std::optional<ImageLabel> image_label;
  Split split = Split::train;

  bool valid() const { return !tile_path.empty() && (mask_path.has_value() || image_label.has_value()); }

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline void validate_tile(const Tile& tile) {
  const std::size_t expected = tile.pixels() * static_cast<std::size_t>(tile.channels);
  if (tile.height <= 0 || tile.width <= 0 || tile.channels <= 0 || tile.data.size() != expected)
    throw Error(Errc::ShapeMismatch, "tile.data has " + std::to_string(tile.data.size()) + " values, expected " +
                                         std::to_string(expected));
  if (!tile.band_names.empty()) {
    if (tile.band_names.size() != static_cast<std::size_t>(tile.channels))
      throw Error(Errc::ShapeMismatch, "tile.band_names length differs from tile.channels");
    std::set<std::string> unique(tile.band_names.begin(), tile.band_names.end());
    if (unique.size() != tile.band_names.size()) throw Error(Errc::ShapeMismatch, "tile.band_names not unique");
  }
  for (std::size_t i = 0; i < tile.data.size(); ++i)
    if (!std::isfinite(tile.data[i]))
      throw Error(Errc::NonFiniteData, "tile.data[" + std::to_string(i) + "] is not finite");
}

inline void validate_mask(const MaskImage& mask) {
  if (mask.values.size() != static_cast<std::size_t>(mask.height) * mask.width)
    throw Error(Errc::ShapeMismatch, "mask.values length differs from height*width");
  for (std::size_t i = 0; i < mask.values.size(); ++i)
    if (mask.values[i] > 1)
      throw Error(Errc::NonBinaryMask,
                  "mask.values[" + std::to_string(i) + "] = " + std::to_string(mask.values[i]));
}

/// Throws on the first violated invariant of a (tile, mask) pair.
inline void validate_pair(const Tile& tile, const MaskImage& mask) {
  if (tile.height != mask.height || tile.width != mask.width)
    throw Error(Errc::ShapeMismatch, "mask.height/width " + std::to_string(mask.height) + "x" +
                                         std::to_string(mask.width) + " vs tile " + std::to_string(tile.height) +
                                         "x" + std::to_string(tile.width));
  validate_tile(tile);
  validate_mask(mask);
}

}  // namespace rmau
