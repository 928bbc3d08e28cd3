#pragma once

// Training, evaluation and single-tile prediction.
//
// Determinism: model init, per-epoch shuffles and augmentation draws come
// from independent streams derived from TrainConfig::seed, and all arithmetic
// runs on one thread in a fixed order.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rmau/augmentation.hpp"
#include "rmau/band_engineering.hpp"
#include "rmau/config_text.hpp"
#include "rmau/eval_post.hpp"
#include "rmau/losses.hpp"
#include "rmau/rmau_net.hpp"
#include "rmau/rng.hpp"
#include "rmau/tile_io.hpp"

namespace rmau {

namespace fs = std::filesystem;

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double bn_momentum = 0.9;
  std::uint64_t seed = 0;
  double tau = 0.5;
  bool select_on_test = false;
  LossConfig loss;
  AugmentConfig aug;
  ModelConfig model;  // in_channels and input_size are taken from the data

  TaskMode mode() const { return model.mode; }

  void validate() const {
    if (epochs < 1) throw Error(Errc::BadConfig, "epochs must be >= 1");
    if (batch_size < 1) throw Error(Errc::BadConfig, "batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw Error(Errc::BadConfig, "learning_rate must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
      throw Error(Errc::BadConfig, "beta1 and beta2 must lie in [0,1)");
    if (!(adam_eps > 0.0)) throw Error(Errc::BadConfig, "adam_eps must be > 0");
    check_threshold(tau);
    loss.validate();
  }

  static TrainConfig from_text(const std::string& text) {
    TrainConfig cfg;
    const KeyValues kv = parse_key_values(text);
    for (const auto& [key, value] : kv) {
      if (key == "epochs") cfg.epochs = static_cast<int>(parse_int(key, value));
      else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(key, value));
      else if (key == "learning_rate") cfg.learning_rate = parse_double(key, value);
      else if (key == "beta1") cfg.beta1 = parse_double(key, value);
      else if (key == "beta2") cfg.beta2 = parse_double(key, value);
      else if (key == "adam_eps") cfg.adam_eps = parse_double(key, value);
      else if (key == "bn_momentum") cfg.bn_momentum = parse_double(key, value);
      else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
      else if (key == "tau") cfg.tau = parse_double(key, value);
      else if (key == "select_on_test") cfg.select_on_test = parse_bool(key, value);
      else if (key == "mode") cfg.model.mode = parse_task_mode(value);
      else if (key == "recipe") cfg.model.recipe = make_recipe(value).name;
      else if (key == "aug.rotation_prob") cfg.aug.rotation_prob = parse_double(key, value);
      else if (key == "aug.cutmix_prob") cfg.aug.cutmix_prob = parse_double(key, value);
      else if (key.rfind("loss.", 0) == 0 || key.rfind("model.", 0) == 0) continue;
      else throw Error(Errc::BadConfig, "unknown key '" + key + "'");
    }
    cfg.loss.apply(kv);
    cfg.model.apply(kv);
    cfg.validate();
    return cfg;
  }

  std::string to_text() const {
    std::string s;
    s += "epochs=" + std::to_string(epochs) + "\n";
    s += "batch_size=" + std::to_string(batch_size) + "\n";
    s += "learning_rate=" + format_double(learning_rate) + "\n";
    s += "beta1=" + format_double(beta1) + "\n";
    s += "beta2=" + format_double(beta2) + "\n";
    s += "adam_eps=" + format_double(adam_eps) + "\n";
    s += "bn_momentum=" + format_double(bn_momentum) + "\n";
    s += "seed=" + std::to_string(seed) + "\n";
    s += "tau=" + format_double(tau) + "\n";
    s += std::string("select_on_test=") + (select_on_test ? "true" : "false") + "\n";
    s += "aug.rotation_prob=" + format_double(aug.rotation_prob) + "\n";
    s += "aug.cutmix_prob=" + format_double(aug.cutmix_prob) + "\n";
    s += loss.to_text();
    s += model.to_text();
    return s;
  }
};

// ---------------------------------------------------------------------------
// Optimizer

template <class T>
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParamStore<T>& store, const Grads<T>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
      auto& p = store.param(name);
      auto& m = moment(m_, name, p);
      auto& v = moment(v_, name, p);
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = static_cast<T>(b1_ * m[i] + (1.0 - b1_) * gi);
        v[i] = static_cast<T>(b2_ * v[i] + (1.0 - b2_) * gi * gi);
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p[i] = static_cast<T>(p[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  static Tensor<T>& moment(std::map<std::string, Tensor<T>>& slots, const std::string& name, const Tensor<T>& like) {
    auto it = slots.find(name);
    if (it == slots.end()) it = slots.emplace(name, Tensor<T>(like.shape())).first;
    return it->second;
  }

  double lr_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
  std::map<std::string, Tensor<T>> m_, v_;
};

// ---------------------------------------------------------------------------
// Objective

struct BatchTargets {
  std::vector<MaskImage> masks;  // at input resolution
  std::vector<int> labels;
};

struct ObjectiveParts {
  double total = 0.0;
  double segmentation = 0.0;
  double detection = 0.0;
  double l2 = 0.0;
};

/// Training objective for one batch: mean head loss (segmentation), mean
/// detection loss (detection), plus (lambda/2)|theta|^2 over decayed kernels.
/// With `grads` set, runs backward and accumulates every parameter gradient.
template <class T>
ObjectiveParts batch_objective(const RmauNet<T>& net, const ParamStore<T>& store, const Tensor<T>& x,
                               const BatchTargets& targets, const LossConfig& loss, Grads<T>* grads,
                               NetTape<T>* tape_out = nullptr) {
  const ModelConfig& mc = net.config();
  NetTape<T> tape;
  const NetOutput<T> out = net.forward(store, x, true, grads || tape_out ? &tape : nullptr);
  ObjectiveParts parts;
  NetOutputGrad<T> d;
  const bool seg = mc.mode != TaskMode::detection;
  const bool det = mc.mode != TaskMode::segmentation;
  if (seg) {
    const auto res = mc.head_resolutions();
    const double heads = static_cast<double>(res.size());
    for (std::size_t h = 0; h < res.size(); ++h) {
      std::vector<MaskImage> ht;
      for (const auto& m : targets.masks) ht.push_back(resample_mask(m, res[h]));
      Tensor<T> dl;
      parts.segmentation += head_loss_grad(out.head_probs[h], ht, loss, grads ? &dl : nullptr) / heads;
      if (grads) {
        for (auto& v : dl.values()) v = static_cast<T>(v / heads);
        d.head_logits.push_back(std::move(dl));
      }
    }
  }
  if (det) {
    const int n = x.n();
    if (grads) d.detect_logit = Tensor<T>({n});
    for (int b = 0; b < n; ++b) {
      const double z = static_cast<double>(out.detect_logit[b]);
      const int y = targets.labels[static_cast<std::size_t>(b)];
      parts.detection += detection_loss(z, y) / n;
      if (grads) d.detect_logit[b] = static_cast<T>(detection_loss_grad(z, y) / n);
    }
  }
  for (const auto& [name, p] : store.params) {
    if (!nn::is_decayed(name)) continue;
    double sq = 0.0;
    for (T v : p.values()) sq += static_cast<double>(v) * v;
    parts.l2 += 0.5 * loss.lambda_l2 * sq;
  }
  parts.total = parts.segmentation + parts.detection + parts.l2;
  if (grads) {
    net.backward(store, tape, d, *grads);
    if (loss.lambda_l2 > 0.0)
      for (const auto& [name, p] : store.params) {
        if (!nn::is_decayed(name)) continue;
        auto& g = nn::grad_slot(*grads, store, name);
        for (std::size_t i = 0; i < p.size(); ++i) g[i] += static_cast<T>(loss.lambda_l2) * p[i];
      }
  }
  if (tape_out) *tape_out = std::move(tape);
  return parts;
}

// ---------------------------------------------------------------------------
// Data

/// Loads records and applies the band recipe, caching expanded tiles while
/// the cache stays under a byte budget.
class SampleSource {
 public:
  SampleSource(const Manifest& manifest, std::vector<SampleRecord> records, BandRecipe recipe,
               std::size_t cache_bytes = std::size_t{1} << 30)
      : manifest_(manifest), records_(std::move(records)), recipe_(std::move(recipe)), budget_(cache_bytes) {}

  std::size_t size() const { return records_.size(); }
  const SampleRecord& record(std::size_t i) const { return records_[i]; }

  struct Item {
    TileMaskPair raw;
    Tile expanded;
    bool has_mask = false;
    int label = 0;
  };

  Item get(std::size_t i) {
    auto it = cache_.find(i);
    if (it != cache_.end()) return it->second;
    LoadedSample s = load_sample(manifest_, records_[i]);
    Item item;
    item.expanded = expand(s.tile);
    item.raw = {std::move(s.tile), std::move(s.mask)};
    item.has_mask = s.has_mask;
    item.label = s.label == ImageLabel::landslide ? 1 : 0;
    const std::size_t bytes = (item.raw.tile.data.size() + item.expanded.data.size()) * sizeof(float);
    if (used_ + bytes <= budget_) {
      used_ += bytes;
      cache_.emplace(i, item);
    }
    return item;
  }

  Tile expand(const Tile& raw) const { return expand_bands(raw, recipe_); }

 private:
  const Manifest& manifest_;
  std::vector<SampleRecord> records_;
  BandRecipe recipe_;
  std::size_t budget_;
  std::size_t used_ = 0;
  std::map<std::size_t, Item> cache_;
};

inline std::vector<SampleRecord> records_of(const Manifest& m, Split s) {
  std::vector<SampleRecord> out;
  for (const auto& r : m.records)
    if (r.split == s) out.push_back(r);
  return out;
}

/// Per-channel mean and standard deviation over a set of tiles.
inline std::pair<std::vector<double>, std::vector<double>> channel_stats(SampleSource& src) {
  std::vector<double> sum, sq;
  double count = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Tile t = src.get(i).expanded;
    if (sum.empty()) sum.assign(static_cast<std::size_t>(t.channels), 0.0), sq = sum;
    for (std::size_t k = 0; k < t.data.size(); ++k) {
      const double v = t.data[k];
      sum[k % sum.size()] += v;
      sq[k % sum.size()] += v * v;
    }
    count += static_cast<double>(t.pixels());
  }
  std::vector<double> mean(sum.size()), sd(sum.size());
  for (std::size_t c = 0; c < sum.size(); ++c) {
    mean[c] = sum[c] / count;
    const double var = std::max(0.0, sq[c] / count - mean[c] * mean[c]);
    sd[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return {mean, sd};
}

// ---------------------------------------------------------------------------
// Reports

struct RunReport {
  std::vector<double> epoch_losses;
  std::vector<double> val_scores;  // per epoch when a selection split exists
  std::optional<SegMetrics> segmentation;
  std::optional<DetMetrics> detection;
  std::string evaluated_split;
  std::size_t evaluated_images = 0;
  double tau = 0.5;
  double wall_seconds = 0.0;
  std::string config_text;
  std::string checkpoint_path;
  int best_epoch = 0;

  std::string to_text() const {
    std::ostringstream out;
    out.precision(10);
    out << "epochs_run=" << epoch_losses.size() << "\n";
    if (!epoch_losses.empty()) out << "final_train_loss=" << epoch_losses.back() << "\n";
    if (best_epoch > 0) out << "best_epoch=" << best_epoch << "\n";
    if (!evaluated_split.empty()) {
      out << "eval.split=" << evaluated_split << "\n";
      out << "eval.images=" << evaluated_images << "\n";
      out << "eval.tau=" << tau << "\n";
    }
    if (segmentation) {
      out << "segmentation.f1=" << segmentation->f1 * 100.0 << "\n";
      out << "segmentation.precision=" << segmentation->precision * 100.0 << "\n";
      out << "segmentation.recall=" << segmentation->recall * 100.0 << "\n";
      out << "segmentation.miou=" << segmentation->miou * 100.0 << "\n";
    }
    if (detection) {
      out << "detection.f1=" << detection->f1 * 100.0 << "\n";
      out << "detection.accuracy=" << detection->accuracy * 100.0 << "\n";
      out << "detection.precision=" << detection->precision * 100.0 << "\n";
      out << "detection.recall=" << detection->recall * 100.0 << "\n";
    }
    out << "wall_seconds=" << wall_seconds << "\n";
    if (!checkpoint_path.empty()) out << "checkpoint=" << checkpoint_path << "\n";
    if (!config_text.empty()) {
      out << "# config\n";
      out << config_text;
    }
    return out.str();
  }

  std::string loss_curve_csv() const {
    std::ostringstream out;
    out.precision(10);
    out << "epoch,train_loss" << (val_scores.empty() ? "" : ",val_score") << "\n";
    for (std::size_t e = 0; e < epoch_losses.size(); ++e) {
      out << e + 1 << ',' << epoch_losses[e];
      if (e < val_scores.size()) out << ',' << val_scores[e];
      out << "\n";
    }
    return out.str();
  }
};

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOutputs {
  std::vector<ProbMap> probs;  // ensembled, one per image
  std::vector<MaskImage> masks;
  std::vector<bool> has_mask;
  std::vector<double> logits;
  std::vector<int> labels;
};

/// Evaluation-mode inference over records; never touches the state.
template <class T>
EvalOutputs infer_records(const ModelState<T>& state, const Manifest& manifest, std::vector<SampleRecord> records,
                          int batch_size = 16) {
  SampleSource src(manifest, std::move(records), make_recipe(state.config.recipe), 0);
  EvalOutputs out;
  for (std::size_t start = 0; start < src.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(src.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Tile> tiles;
    for (std::size_t i = start; i < end; ++i) {
      auto item = src.get(i);
      tiles.push_back(std::move(item.expanded));
      out.masks.push_back(std::move(item.raw.mask));
      out.has_mask.push_back(item.has_mask);
      out.labels.push_back(item.label);
    }
    const ForwardResult r = forward<T>(tiles, state);
    for (std::size_t b = 0; b < tiles.size(); ++b) {
      out.probs.push_back(ensemble_heads(r, b));
      out.logits.push_back(r.detect_logits[b]);
    }
  }
  return out;
}

/// Metrics for the enabled tasks over pre-computed outputs.
inline void score_outputs(const EvalOutputs& e, TaskMode mode, double tau, RunReport& report) {
  report.tau = tau;
  report.evaluated_images = e.probs.size();
  if (mode != TaskMode::detection) {
    ConfusionCounts acc;
    bool any = false;
    for (std::size_t i = 0; i < e.probs.size(); ++i)
      if (e.has_mask[i]) {
        acc = accumulate_confusion(threshold(e.probs[i], tau), e.masks[i], acc);
        any = true;
      }
    if (any) report.segmentation = metrics(acc);
  }
  if (mode != TaskMode::segmentation) report.detection = detection_metrics(e.logits, e.labels);
}

template <class T>
RunReport evaluate_split(const ModelState<T>& state, const Manifest& manifest, Split split, const TrainConfig& cfg) {
  auto records = records_of(manifest, split);
  if (records.empty())
    throw Error(split == Split::train ? Errc::EmptyTrainSplit : Errc::EmptyTestSplit,
                manifest.source_name + " has no " + to_string(split) + " records");
  RunReport report;
  report.evaluated_split = to_string(split);
  score_outputs(infer_records(state, manifest, std::move(records), cfg.batch_size), state.config.mode, cfg.tau,
                report);
  return report;
}

/// Evaluates on the test split.
template <class T>
RunReport evaluate(const ModelState<T>& state, const Manifest& manifest, const TrainConfig& cfg) {
  if (manifest.count(Split::test) == 0)
    throw Error(Errc::EmptyTestSplit, manifest.source_name + " has no test records");
  return evaluate_split(state, manifest, Split::test, cfg);
}

struct Prediction {
  ProbMap prob;
  MaskImage mask;
  double detect_prob = 0.0;
};

/// Single-tile inference. Raw tiles are band-expanded with the model's recipe;
/// tiles that already match the model's channel count are used as-is.
template <class T>
Prediction predict(const ModelState<T>& state, const Tile& tile, double tau) {
  Tile input = tile.channels == state.config.in_channels ? tile : expand_bands(tile, make_recipe(state.config.recipe));
  if (input.channels != state.config.in_channels)
    throw Error(Errc::ChannelMismatch, "tile '" + tile.id + "' has " + std::to_string(tile.channels) +
                                           " channels, model expects " + std::to_string(state.config.in_channels));
  const std::vector<Tile> one{std::move(input)};
  const ForwardResult r = forward<T>(one, state);
  Prediction p;
  p.prob = ensemble_heads(r, 0);
  p.mask = threshold(p.prob, tau);
  p.detect_prob = nn::sigmoid(r.detect_logits[0]);
  return p;
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  ModelState<float> state;
  RunReport report;
};

struct TrainHooks {
  std::function<void(int epoch, double loss)> on_epoch;
  std::function<void(int step, const ModelState<float>&)> on_step;
};

inline TrainResult train(const Manifest& manifest, const TrainConfig& cfg_in,
                         const std::optional<fs::path>& out_dir = std::nullopt, const TrainHooks& hooks = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig cfg = cfg_in;
  cfg.validate();
  auto train_records = records_of(manifest, Split::train);
  if (train_records.empty()) throw Error(Errc::EmptyTrainSplit, manifest.source_name + " has no train records");

  const BandRecipe recipe = make_recipe(cfg.model.recipe);
  SampleSource src(manifest, train_records, recipe);
  const bool seg = cfg.mode() != TaskMode::detection;

  // Shape the model after the data.
  {
    const auto first = src.get(0);
    cfg.model.in_channels = first.expanded.channels;
    cfg.model.input_size = first.expanded.height;
    if (first.expanded.height != first.expanded.width)
      throw Error(Errc::NonSquareTile, "tile '" + first.expanded.id + "' is not square");
  }
  cfg.model.validate();
  if (seg)
    for (std::size_t i = 0; i < src.size(); ++i)
      if (!src.get(i).has_mask)
        throw Error(Errc::BadConfig, "segmentation training needs a mask for '" + src.record(i).tile_path + "'");

  ModelState<float> state = init_model<float>(cfg.model, derive_seed(cfg.seed, {0}));
  {
    const auto [mean, sd] = channel_stats(src);
    auto& m = state.store.buffer("input.mean");
    auto& s = state.store.buffer("input.std");
    for (std::size_t c = 0; c < mean.size(); ++c) {
      m[c] = static_cast<float>(mean[c]);
      s[c] = static_cast<float>(sd[c]);
    }
  }
  const RmauNet<float> net(cfg.model);
  Adam<float> adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
  AugmentConfig aug = cfg.aug;
  aug.rng_seed = derive_seed(cfg.seed, {2});

  std::optional<Split> select_split;
  if (manifest.count(Split::val) > 0) select_split = Split::val;
  else if (cfg.select_on_test && manifest.count(Split::test) > 0) select_split = Split::test;

  if (out_dir) fs::create_directories(*out_dir);
  RunReport report;
  report.config_text = cfg.to_text();
  ModelState<float> best = state;
  ModelState<float> last_good = state;
  double best_score = -1.0;
  int step = 0;

  auto diverged = [&](const std::string& where) {
    std::string msg = "non-finite loss " + where;
    if (out_dir) {
      save_checkpoint(last_good, *out_dir / "last.ckpt");
      msg += "; last good checkpoint at " + (*out_dir / "last.ckpt").string();
    }
    throw Error(Errc::DivergedLoss, msg);
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(src.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Xoshiro256 shuffle_rng(derive_seed(cfg.seed, {1, static_cast<std::uint64_t>(epoch)}));
    fisher_yates(order, shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<TileMaskPair> batch;
      std::vector<SampleSource::Item> items;
      std::vector<std::uint64_t> ids;
      for (std::size_t k = start; k < end; ++k) {
        items.push_back(src.get(order[k]));
        batch.push_back(items.back().raw);
        ids.push_back(order[k]);
      }
      augment_batch(batch, aug, static_cast<std::uint64_t>(epoch), ids);

      std::vector<Tile> tiles;
      BatchTargets targets;
      for (std::size_t k = 0; k < batch.size(); ++k) {
        const bool changed = !(batch[k] == items[k].raw);
        tiles.push_back(changed ? src.expand(batch[k].tile) : items[k].expanded);
        targets.masks.push_back(batch[k].mask);
        // Augmentation can add landslide pixels; the image label follows the mask.
        targets.labels.push_back(items[k].has_mask ? (batch[k].mask.positives() > 0 ? 1 : 0) : items[k].label);
      }

      Grads<float> grads;
      NetTape<float> tape;
      const ObjectiveParts parts =
          batch_objective(net, state.store, tiles_to_tensor<float>(tiles), targets, cfg.loss, &grads, &tape);
      if (!std::isfinite(parts.total))
        diverged("at epoch " + std::to_string(epoch) + ", batch starting " + std::to_string(start));
      for (const auto& [name, g] : grads)
        if (!g.all_finite()) diverged("gradient for " + name + " at epoch " + std::to_string(epoch));
      adam.step(state.store, grads);
      net.update_running(state.store, tape, cfg.bn_momentum);
      loss_sum += parts.total * static_cast<double>(batch.size());
      ++step;
      if (hooks.on_step) hooks.on_step(step, state);
    }
    const double epoch_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss) || !state.all_finite()) diverged("at end of epoch " + std::to_string(epoch));
    report.epoch_losses.push_back(epoch_loss);
    last_good = state;
    if (out_dir) save_checkpoint(state, *out_dir / "last.ckpt");

    if (select_split) {
      const RunReport v = evaluate_split(state, manifest, *select_split, cfg);
      const double score = v.segmentation ? v.segmentation->f1 : v.detection ? v.detection->f1 : 0.0;
      report.val_scores.push_back(score);
      if (score > best_score) {
        best_score = score;
        best = state;
        report.best_epoch = epoch;
        if (out_dir) save_checkpoint(state, *out_dir / "best.ckpt");
      }
    }
    if (hooks.on_epoch) hooks.on_epoch(epoch, epoch_loss);
  }

  TrainResult result{select_split ? best : state, {}};
  if (manifest.count(Split::test) > 0) {
    const RunReport t = evaluate(result.state, manifest, cfg);
    report.segmentation = t.segmentation;
    report.detection = t.detection;
    report.evaluated_split = t.evaluated_split;
    report.evaluated_images = t.evaluated_images;
    report.tau = t.tau;
  }
  if (out_dir) report.checkpoint_path = (*out_dir / (select_split ? "best.ckpt" : "last.ckpt")).string();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.report = std::move(report);
  return result;
}

// ---------------------------------------------------------------------------
// Overlay

/// RGB raster (row-major, 3 bytes per pixel).
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
};

/// False-colour view of the tile with the predicted mask tinted red and the
/// ground-truth outline drawn in green.
inline RgbImage render_overlay(const Tile& tile, const MaskImage& pred, const MaskImage* gt = nullptr) {
  RgbImage img{tile.height, tile.width, std::vector<std::uint8_t>(tile.pixels() * 3, 0)};
  std::array<int, 3> idx{};
  if (is_rgb_tile(tile)) idx = {tile.band_index("R"), tile.band_index("G"), tile.band_index("B")};
  else {
    const std::array<const char*, 3> roles = {"B4", "B3", "B2"};
    for (std::size_t k = 0; k < 3; ++k) {
      const int i = resolve_band(tile, roles[k]);
      idx[k] = i >= 0 ? i : std::min<int>(static_cast<int>(k), tile.channels - 1);
    }
  }
  for (std::size_t k = 0; k < 3; ++k) {
    const Band b = minmax_normalize(extract_band(tile, idx[k]));
    for (std::size_t p = 0; p < b.values.size(); ++p)
      img.pixels[p * 3 + k] = static_cast<std::uint8_t>(std::lround(std::clamp(b.values[p], 0.0f, 1.0f) * 255.0f));
  }
  for (int r = 0; r < tile.height; ++r)
    for (int c = 0; c < tile.width; ++c) {
      const std::size_t p = static_cast<std::size_t>(r) * tile.width + c;
      if (pred.at(r, c)) {
        img.pixels[p * 3] = static_cast<std::uint8_t>((img.pixels[p * 3] + 255) / 2);
        img.pixels[p * 3 + 1] = static_cast<std::uint8_t>(img.pixels[p * 3 + 1] / 2);
        img.pixels[p * 3 + 2] = static_cast<std::uint8_t>(img.pixels[p * 3 + 2] / 2);
      }
      if (gt && gt->at(r, c)) {
        const bool edge = r == 0 || c == 0 || r == tile.height - 1 || c == tile.width - 1 || !gt->at(r - 1, c) ||
                          !gt->at(r + 1, c) || !gt->at(r, c - 1) || !gt->at(r, c + 1);
        if (edge) {
          img.pixels[p * 3] = 0;
          img.pixels[p * 3 + 1] = 255;
          img.pixels[p * 3 + 2] = 0;
        }
      }
    }
  return img;
}

}  // namespace rmau
