#pragma once

// Memorisation benchmark shared by the trainer suite and the acceptance run:
// 16 synthetic 14-band tiles, toy network, full-batch Adam.

#include <filesystem>

#include "rmau/trainer.hpp"

namespace rmau::bench {

inline constexpr int kTiles = 16;
inline constexpr int kTileSize = 64;
inline constexpr std::uint64_t kSeed = 7;
inline constexpr int kEpochs = 200;

inline Manifest overfit_data(const std::filesystem::path& dir, double margin = SyntheticOptions{}.margin) {
  SyntheticOptions opt;
  opt.size = kTileSize;
  opt.margin = margin;
  return generate_synthetic_dataset(kTiles, 14, kSeed, dir, opt);
}

inline TrainConfig overfit_config() {
  TrainConfig cfg;
  cfg.epochs = kEpochs;
  cfg.seed = kSeed;
  cfg.batch_size = kTiles;
  cfg.learning_rate = 1e-2;
  cfg.aug.rotation_prob = 0.0;
  cfg.aug.cutmix_prob = 0.0;
  cfg.model.depth = 1;
  cfg.model.base_filters = 4;
  return cfg;
}

}  // namespace rmau::bench
