#pragma once

// Online augmentation applied jointly to tiles and masks: quarter-turn
// rotation and footprint cutmix.

#include <cstdint>
#include <span>
#include <vector>

#include "rmau/core_types.hpp"
#include "rmau/error.hpp"
#include "rmau/rng.hpp"

namespace rmau {

struct TileMaskPair {
  Tile tile;
  MaskImage mask;

  friend bool operator==(const TileMaskPair&, const TileMaskPair&) = default;
};

struct AugmentConfig {
  double rotation_prob = 0.5;
  double cutmix_prob = 0.5;
  std::uint64_t rng_seed = 0;
};

/// Clockwise rotation by 90, 180 or 270 degrees about the raster centre.
inline TileMaskPair rotate(const Tile& tile, const MaskImage& mask, int angle) {
  if (tile.height != tile.width) throw Error(Errc::NonSquareTile, "tile '" + tile.id + "' is not square");
  if (mask.height != tile.height || mask.width != tile.width)
    throw Error(Errc::ShapeMismatch, "mask shape differs from tile '" + tile.id + "'");
  if (angle != 90 && angle != 180 && angle != 270)
    throw Error(Errc::BadConfig, "rotation angle must be 90, 180 or 270");
  const int n = tile.height;
  auto source = [&](int r, int c) -> std::pair<int, int> {
    switch (angle) {
      case 90: return {n - 1 - c, r};
      case 180: return {n - 1 - r, n - 1 - c};
      default: return {c, n - 1 - r};
    }
  };
  TileMaskPair out{Tile(tile.id, n, n, tile.channels, tile.band_names), MaskImage(n, n)};
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const auto [sr, sc] = source(r, c);
      for (int ch = 0; ch < tile.channels; ++ch) out.tile.at(r, c, ch) = tile.at(sr, sc, ch);
      out.mask.at(r, c) = mask.at(sr, sc);
    }
  return out;
}

/// Pastes the donor's landslide footprint (every channel) into the target.
inline TileMaskPair cutmix(const TileMaskPair& target, const TileMaskPair& donor) {
  if (target.tile.height != donor.tile.height || target.tile.width != donor.tile.width ||
      target.tile.channels != donor.tile.channels || target.mask.values.size() != donor.mask.values.size() ||
      target.mask.values.size() != target.tile.pixels())
    throw Error(Errc::ShapeMismatch, "cutmix target '" + target.tile.id + "' and donor '" + donor.tile.id + "'");
  TileMaskPair out = target;
  const auto channels = static_cast<std::size_t>(target.tile.channels);
  for (std::size_t p = 0; p < donor.mask.values.size(); ++p) {
    if (!donor.mask.values[p]) continue;
    out.mask.values[p] = 1;
    for (std::size_t ch = 0; ch < channels; ++ch) out.tile.data[p * channels + ch] = donor.tile.data[p * channels + ch];
  }
  return out;
}

/// Augments a batch in place. Sample i draws from the stream
/// derive_seed(cfg.rng_seed, {epoch, sample_ids[i]}): first a rotation
/// (probability rotation_prob, angle uniform over 90/180/270), then a cutmix
/// whose donor is drawn uniformly from the other samples of the original batch
/// that contain landslide pixels. Without an eligible donor cutmix is skipped.
inline void augment_batch(std::vector<TileMaskPair>& batch, const AugmentConfig& cfg, std::uint64_t epoch,
                          std::span<const std::uint64_t> sample_ids) {
  if (sample_ids.size() != batch.size())
    throw Error(Errc::LengthMismatch, "augment_batch needs one sample id per batch entry");
  if (cfg.rotation_prob <= 0.0 && cfg.cutmix_prob <= 0.0) return;
  const std::vector<TileMaskPair> original = batch;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Xoshiro256 rng(derive_seed(cfg.rng_seed, {epoch, sample_ids[i]}));
    if (rng.bernoulli(cfg.rotation_prob)) {
      const int angle = 90 * (1 + static_cast<int>(rng.below(3)));
      batch[i] = rotate(batch[i].tile, batch[i].mask, angle);
    }
    if (rng.bernoulli(cfg.cutmix_prob)) {
      std::vector<std::size_t> donors;
      for (std::size_t j = 0; j < original.size(); ++j)
        if (j != i && original[j].mask.positives() > 0) donors.push_back(j);
      if (!donors.empty()) batch[i] = cutmix(batch[i], original[donors[rng.below(donors.size())]]);
    }
  }
}

/// Convenience overload: sample ids are batch positions, epoch 0.
inline void augment_batch(std::vector<TileMaskPair>& batch, const AugmentConfig& cfg) {
  std::vector<std::uint64_t> ids(batch.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  augment_batch(batch, cfg, 0, ids);
}

}  // namespace rmau
