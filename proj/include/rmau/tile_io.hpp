#pragma once

// Tile/mask files, CSV manifests, deterministic splits and synthetic fixtures.
//
// Raster file layout (all integers little-endian u32):
//   "RST1" | version=1 | height | width | channels | dtype | raw row-major data
// dtype 0 = float32 raster (IEEE-754, little-endian), dtype 1 = uint8 mask
// (channels = 1). No padding, no trailer.
//
// Manifest CSV: header `tile_path,mask_path,image_label,split`, one record per
// line, empty cell = absent. Paths are relative to the manifest's directory.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rmau/band_engineering.hpp"
#include "rmau/core_types.hpp"
#include "rmau/error.hpp"
#include "rmau/rng.hpp"

namespace rmau {

namespace fs = std::filesystem;

inline constexpr std::array<char, 4> kTileMagic = {'R', 'S', 'T', '1'};
inline constexpr std::uint32_t kTileVersion = 1;
inline constexpr std::uint32_t kDtypeFloat32 = 0;
inline constexpr std::uint32_t kDtypeMask = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::IoFailure, "short write to " + path.string());
}

struct RasterHeader {
  std::uint32_t height, width, channels, dtype;
};

inline std::string encode_header(const RasterHeader& h) {
  std::string out(kTileMagic.begin(), kTileMagic.end());
  put_u32(out, kTileVersion);
  put_u32(out, h.height);
  put_u32(out, h.width);
  put_u32(out, h.channels);
  put_u32(out, h.dtype);
  return out;
}

inline constexpr std::size_t kHeaderBytes = 24;

inline RasterHeader decode_header(const std::string& bytes, const fs::path& path) {
  if (bytes.size() < 4 || !std::equal(kTileMagic.begin(), kTileMagic.end(), bytes.begin()))
    throw Error(Errc::BadMagic, path.string());
  if (bytes.size() < kHeaderBytes) throw Error(Errc::TruncatedFile, path.string() + " (header)");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t version = get_u32(p + 4);
  if (version != kTileVersion)
    throw Error(Errc::UnsupportedVersion, path.string() + " has version " + std::to_string(version));
  return {get_u32(p + 8), get_u32(p + 12), get_u32(p + 16), get_u32(p + 20)};
}

}  // namespace detail

inline std::string encode_tile(const Tile& tile) {
  std::string out = detail::encode_header({static_cast<std::uint32_t>(tile.height),
                                           static_cast<std::uint32_t>(tile.width),
                                           static_cast<std::uint32_t>(tile.channels), kDtypeFloat32});
  out.reserve(out.size() + tile.data.size() * 4);
  for (float v : tile.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline void save_tile(const Tile& tile, const fs::path& path) {
  validate_tile(tile);
  detail::write_file(path, encode_tile(tile));
}

/// Loads a float raster. The id is the file stem; band names are inferred
/// from the channel count (see default_band_names).
inline Tile load_tile(const fs::path& path) {
  const std::string bytes = detail::read_file(path);
  const auto h = detail::decode_header(bytes, path);
  if (h.dtype != kDtypeFloat32)
    throw Error(Errc::UnsupportedVersion, path.string() + " dtype " + std::to_string(h.dtype) + " is not a tile");
  const std::size_t count = static_cast<std::size_t>(h.height) * h.width * h.channels;
  if (bytes.size() < detail::kHeaderBytes + count * 4)
    throw Error(Errc::TruncatedFile, path.string() + " holds " + std::to_string(bytes.size()) + " bytes");
  Tile tile(path.stem().string(), static_cast<int>(h.height), static_cast<int>(h.width),
            static_cast<int>(h.channels), default_band_names(static_cast<int>(h.channels)));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + detail::kHeaderBytes;
  for (std::size_t i = 0; i < count; ++i) tile.data[i] = std::bit_cast<float>(detail::get_u32(p + 4 * i));
  return tile;
}

inline std::string encode_mask(const MaskImage& mask) {
  std::string out = detail::encode_header(
      {static_cast<std::uint32_t>(mask.height), static_cast<std::uint32_t>(mask.width), 1, kDtypeMask});
  out.append(reinterpret_cast<const char*>(mask.values.data()), mask.values.size());
  return out;
}

inline void save_mask(const MaskImage& mask, const fs::path& path) {
  validate_mask(mask);
  detail::write_file(path, encode_mask(mask));
}

inline MaskImage load_mask(const fs::path& path) {
  const std::string bytes = detail::read_file(path);
  const auto h = detail::decode_header(bytes, path);
  if (h.dtype != kDtypeMask || h.channels != 1)
    throw Error(Errc::UnsupportedVersion, path.string() + " is not a single-channel mask");
  const std::size_t count = static_cast<std::size_t>(h.height) * h.width;
  if (bytes.size() < detail::kHeaderBytes + count)
    throw Error(Errc::TruncatedFile, path.string() + " holds " + std::to_string(bytes.size()) + " bytes");
  MaskImage mask(static_cast<int>(h.height), static_cast<int>(h.width));
  std::memcpy(mask.values.data(), bytes.data() + detail::kHeaderBytes, count);
  return mask;
}

// ---------------------------------------------------------------------------
// Manifest

struct Manifest {
  std::vector<SampleRecord> records;
  std::string source_name = "unknown";
  fs::path base_dir;  // relative record paths resolve against this

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  Manifest with_split(Split s) const {
    Manifest out{{}, source_name, base_dir};
    for (const auto& r : records)
      if (r.split == s) out.records.push_back(r);
    return out;
  }

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [s](const SampleRecord& r) { return r.split == s; }));
  }
};

inline constexpr const char* kManifestHeader = "tile_path,mask_path,image_label,split";

inline std::string manifest_to_csv(const Manifest& m) {
  std::string out = std::string(kManifestHeader) + "\n";
  for (const auto& r : m.records) {
    out += r.tile_path + "," + r.mask_path.value_or("") + "," +
           (r.image_label ? to_string(*r.image_label) : std::string()) + "," + to_string(r.split) + "\n";
  }
  return out;
}

inline void write_manifest(const Manifest& m, const fs::path& path) { detail::write_file(path, manifest_to_csv(m)); }

inline Manifest parse_manifest(const std::string& text, const fs::path& base_dir, const std::string& source_name) {
  Manifest m{{}, source_name, base_dir};
  std::istringstream in(text);
  std::string line;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kManifestHeader) throw Error(Errc::BadConfig, "manifest header must be '" + std::string(kManifestHeader) + "'");
      header_seen = true;
      continue;
    }
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (cells.size() != 4)
      throw Error(Errc::BadConfig, "manifest line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                                       " cells, expected 4");
    SampleRecord r;
    r.tile_path = cells[0];
    if (!cells[1].empty()) r.mask_path = cells[1];
    if (!cells[2].empty()) r.image_label = parse_image_label(cells[2]);
    r.split = cells[3].empty() ? Split::train : parse_split(cells[3]);
    if (!r.valid())
      throw Error(Errc::BadConfig, "manifest line " + std::to_string(line_no) + " needs a mask_path or image_label");
    m.records.push_back(std::move(r));
  }
  if (!header_seen) throw Error(Errc::EmptyManifest, "manifest has no header");
  return m;
}

inline Manifest read_manifest(const fs::path& path) {
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  return parse_manifest(detail::read_file(path), base, base.filename().string());
}

struct LoadedSample {
  Tile tile;
  MaskImage mask;
  bool has_mask = false;
  ImageLabel label = ImageLabel::none;
};

/// Loads one record. Records without a mask get an all-zero mask and
/// has_mask = false; a missing image label is derived from the mask.
inline LoadedSample load_sample(const Manifest& m, const SampleRecord& r) {
  LoadedSample s;
  s.tile = load_tile(m.resolve(r.tile_path));
  if (r.mask_path) {
    s.mask = load_mask(m.resolve(*r.mask_path));
    s.has_mask = true;
    validate_pair(s.tile, s.mask);
  } else {
    validate_tile(s.tile);
    s.mask = MaskImage(s.tile.height, s.tile.width);
  }
  s.label = r.image_label.value_or(s.mask.positives() > 0 ? ImageLabel::landslide : ImageLabel::none);
  return s;
}

/// Seeded Fisher-Yates over record indices; the first round(ratio * n)
/// shuffled indices form the train part. Both parts keep manifest order.
inline std::pair<Manifest, Manifest> split_dataset(const Manifest& manifest, double ratio, std::uint64_t seed) {
  if (manifest.empty()) throw Error(Errc::EmptyManifest, "cannot split an empty manifest");
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error(Errc::BadConfig, "split ratio must lie in (0, 1)");
  const std::size_t n = manifest.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Xoshiro256 rng(seed);
  fisher_yates(order, rng);
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  std::vector<bool> in_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;

  Manifest train{{}, manifest.source_name, manifest.base_dir};
  Manifest test{{}, manifest.source_name, manifest.base_dir};
  for (std::size_t i = 0; i < n; ++i) {
    SampleRecord r = manifest.records[i];
    r.split = in_train[i] ? Split::train : Split::test;
    (in_train[i] ? train : test).records.push_back(std::move(r));
  }
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Synthetic fixtures

struct SyntheticOptions {
  int size = 128;
  double margin = 0.15;          // spectral offset inside landslide regions
  double noise = 0.02;           // per-pixel Gaussian noise std
  double landslide_prob = 0.6;   // fraction of tiles carrying regions
};

struct SyntheticSample {
  Tile tile;
  MaskImage mask;
};

/// One synthetic tile. Landslide regions are 1-3 rotated ellipses; inside them
/// the red (B4/R) and SWIR (B11, B12) analogues rise by `margin` and the NIR
/// (B8) / green (G) analogue drops by `margin`.
inline SyntheticSample make_synthetic_sample(int index, int channels, std::uint64_t seed, bool landslide,
                                             const SyntheticOptions& opt) {
  Xoshiro256 rng(derive_seed(seed, {static_cast<std::uint64_t>(index)}));
  const int s = opt.size;
  std::vector<std::string> names = channels == 3 ? rgb_band_names() : sentinel_band_names();
  SyntheticSample out{Tile("tile_" + std::to_string(index), s, s, channels, names), MaskImage(s, s)};

  if (landslide) {
    const int regions = 1 + static_cast<int>(rng.below(3));
    for (int k = 0; k < regions; ++k) {
      const double cy = rng.uniform(0.15, 0.85) * s;
      const double cx = rng.uniform(0.15, 0.85) * s;
      const double a = rng.uniform(0.03, 0.09) * s + 1.0;
      const double b = rng.uniform(0.03, 0.09) * s + 1.0;
      const double theta = rng.uniform(0.0, std::numbers::pi);
      const double ct = std::cos(theta), st = std::sin(theta);
      for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c) {
          const double dy = r - cy, dx = c - cx;
          const double u = (dx * ct + dy * st) / a;
          const double v = (-dx * st + dy * ct) / b;
          if (u * u + v * v <= 1.0) out.mask.at(r, c) = 1;
        }
    }
  }

  std::vector<int> raise, lower;
  if (channels == 3) {
    raise = {0};  // R
    lower = {1};  // G
  } else {
    raise = {3, 10, 11};  // B4, B11, B12
    lower = {7};          // B8
  }
  for (int ch = 0; ch < channels; ++ch) {
    const bool nir = channels == 14 && ch == 7;
    const double base = nir ? rng.uniform(0.3, 0.5) : rng.uniform(0.1, 0.3);
    const double fy = rng.uniform(0.5, 2.0) * 2.0 * std::numbers::pi / s;
    const double fx = rng.uniform(0.5, 2.0) * 2.0 * std::numbers::pi / s;
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double delta = std::find(raise.begin(), raise.end(), ch) != raise.end()   ? opt.margin
                         : std::find(lower.begin(), lower.end(), ch) != lower.end() ? -opt.margin
                                                                                    : 0.0;
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < s; ++c) {
        double v = base + 0.03 * std::sin(fy * r + fx * c + phase) + opt.noise * rng.normal();
        if (out.mask.at(r, c)) v += delta;
        out.tile.at(r, c, ch) = static_cast<float>(v);
      }
  }
  return out;
}

/// Writes n tile/mask pairs plus manifest.csv under out_dir (all in the train
/// split). Tile 0 always carries landslides and tile 1 never does, so any
/// set with n >= 2 has both image classes.
inline Manifest generate_synthetic_dataset(int n, int channels, std::uint64_t seed, const fs::path& out_dir,
                                           const SyntheticOptions& opt = {}) {
  if (n < 1) throw Error(Errc::BadConfig, "synthetic dataset needs n >= 1");
  if (channels != 3 && channels != 14) throw Error(Errc::BadConfig, "synthetic channels must be 3 or 14");
  if (opt.size < 2) throw Error(Errc::BadConfig, "synthetic tile size must be >= 2");
  std::error_code ec;
  fs::create_directories(out_dir / "tiles", ec);
  fs::create_directories(out_dir / "masks", ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());

  Xoshiro256 label_rng(derive_seed(seed, {0xFFFFFFFFULL}));
  Manifest m{{}, "synthetic", out_dir};
  for (int i = 0; i < n; ++i) {
    const double draw = label_rng.uniform();
    const bool landslide = i == 0 ? true : i == 1 ? false : draw < opt.landslide_prob;
    auto sample = make_synthetic_sample(i, channels, seed, landslide, opt);
    char name[32];
    std::snprintf(name, sizeof(name), "%04d", i);
    const std::string tile_rel = std::string("tiles/tile_") + name + ".rst";
    const std::string mask_rel = std::string("masks/mask_") + name + ".rst";
    save_tile(sample.tile, out_dir / tile_rel);
    save_mask(sample.mask, out_dir / mask_rel);
    SampleRecord r;
    r.tile_path = tile_rel;
    r.mask_path = mask_rel;
    r.image_label = sample.mask.positives() > 0 ? ImageLabel::landslide : ImageLabel::none;
    r.split = Split::train;
    m.records.push_back(std::move(r));
  }
  write_manifest(m, out_dir / "manifest.csv");
  return m;
}

}  // namespace rmau
