#pragma once

// Residual multi-head-attention U-Net with multi-resolution mask heads and an
// image-level detection branch.
//
// Layout for depth D and base width F (input S x S):
//   enc i   (i < D)  block F*2^i at S/2^i, then 2x2 max-pool
//   mid              block F*2^D at S/2^D
//   dec i   (i < D)  upsample, concat skip i, block 2F*2^i at S/2^i
// A block is Res-Conv (or double conv) optionally followed by tri-axis
// attention. Heads: channel mean + sigmoid of dec 0 (S), of dec 0 upsampled
// (2S) and of the map feeding dec 0 (S/2). Detection: global average pool of
// dec 0, one dense unit.

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rmau/band_engineering.hpp"
#include "rmau/config_text.hpp"
#include "rmau/core_types.hpp"
#include "rmau/error.hpp"
#include "rmau/nn/attention.hpp"
#include "rmau/nn/layers.hpp"
#include "rmau/tile_io.hpp"

namespace rmau {

using nn::Grads;
using nn::ParamStore;
using nn::Tensor;

enum class TaskMode { segmentation, detection, both };
enum class BlockKind { res_conv, double_conv };

inline std::string to_string(TaskMode m) {
  switch (m) {
    case TaskMode::segmentation: return "segmentation";
    case TaskMode::detection: return "detection";
    case TaskMode::both: return "both";
  }
  return "both";
}

inline TaskMode parse_task_mode(const std::string& s) {
  if (s == "segmentation") return TaskMode::segmentation;
  if (s == "detection") return TaskMode::detection;
  if (s == "both") return TaskMode::both;
  throw Error(Errc::BadConfig, "mode '" + s + "' is not one of segmentation|detection|both");
}

inline std::string to_string(BlockKind k) { return k == BlockKind::res_conv ? "res_conv" : "double_conv"; }

inline BlockKind parse_block_kind(const std::string& s) {
  if (s == "res_conv") return BlockKind::res_conv;
  if (s == "double_conv") return BlockKind::double_conv;
  throw Error(Errc::BadConfig, "block '" + s + "' is not one of res_conv|double_conv");
}

struct ModelConfig {
  int in_channels = 23;
  int input_size = 128;
  int base_filters = 32;
  int depth = 4;
  int attention_heads = 4;
  int key_dim = 16;
  bool attention = true;
  BlockKind block = BlockKind::res_conv;
  bool multi_head = true;
  TaskMode mode = TaskMode::both;
  std::string recipe = "b15-23";  // band expansion applied to raw tiles before the network

  /// Head resolutions, descending: {2S, S, S/2} or {S} for a single head.
  std::vector<int> head_resolutions() const {
    if (!multi_head) return {input_size};
    return {2 * input_size, input_size, input_size / 2};
  }

  int level_size(int level) const { return input_size >> level; }
  int enc_filters(int level) const { return base_filters << level; }
  int mid_filters() const { return base_filters << depth; }
  int dec_filters(int level) const { return 2 * (base_filters << level); }

  void validate() const {
    if (in_channels < 1) throw Error(Errc::BadConfig, "model.in_channels must be >= 1");
    if (depth < 1) throw Error(Errc::BadConfig, "model.depth must be >= 1");
    if (base_filters < 1) throw Error(Errc::BadConfig, "model.base_filters must be >= 1");
    if (attention_heads < 1 || key_dim < 1) throw Error(Errc::BadConfig, "attention heads/key_dim must be >= 1");
    if (input_size < 2 || input_size % (1 << depth) != 0)
      throw Error(Errc::BadConfig, "model.input_size must be divisible by 2^depth");
  }

  std::string to_text() const {
    std::string s;
    s += "model.in_channels=" + std::to_string(in_channels) + "\n";
    s += "model.input_size=" + std::to_string(input_size) + "\n";
    s += "model.base_filters=" + std::to_string(base_filters) + "\n";
    s += "model.depth=" + std::to_string(depth) + "\n";
    s += "model.attention_heads=" + std::to_string(attention_heads) + "\n";
    s += "model.key_dim=" + std::to_string(key_dim) + "\n";
    s += std::string("model.attention=") + (attention ? "true" : "false") + "\n";
    s += "model.block=" + to_string(block) + "\n";
    s += std::string("model.heads=") + (multi_head ? "multi" : "single") + "\n";
    s += "model.mode=" + to_string(mode) + "\n";
    s += "model.recipe=" + recipe + "\n";
    return s;
  }

  /// Applies any model.* keys present in kv.
  void apply(const KeyValues& kv) {
    auto get = [&](const char* k) -> const std::string* {
      auto it = kv.find(k);
      return it == kv.end() ? nullptr : &it->second;
    };
    if (auto v = get("model.in_channels")) in_channels = static_cast<int>(parse_int("model.in_channels", *v));
    if (auto v = get("model.input_size")) input_size = static_cast<int>(parse_int("model.input_size", *v));
    if (auto v = get("model.base_filters")) base_filters = static_cast<int>(parse_int("model.base_filters", *v));
    if (auto v = get("model.depth")) depth = static_cast<int>(parse_int("model.depth", *v));
    if (auto v = get("model.attention_heads"))
      attention_heads = static_cast<int>(parse_int("model.attention_heads", *v));
    if (auto v = get("model.key_dim")) key_dim = static_cast<int>(parse_int("model.key_dim", *v));
    if (auto v = get("model.attention")) attention = parse_bool("model.attention", *v);
    if (auto v = get("model.block")) block = parse_block_kind(*v);
    if (auto v = get("model.heads")) {
      if (*v != "multi" && *v != "single") throw Error(Errc::BadConfig, "model.heads must be multi|single");
      multi_head = *v == "multi";
    }
    if (auto v = get("model.mode")) mode = parse_task_mode(*v);
    if (auto v = get("model.recipe")) recipe = make_recipe(*v).name;
  }

  static ModelConfig from_text(const std::string& text) {
    ModelConfig cfg;
    cfg.apply(parse_key_values(text));
    cfg.validate();
    return cfg;
  }

  /// Toy configuration used by desk-scale tests.
  static ModelConfig toy(int in_channels, int input_size) {
    ModelConfig cfg;
    cfg.in_channels = in_channels;
    cfg.input_size = input_size;
    cfg.depth = 1;
    cfg.base_filters = 4;
    return cfg;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// ---------------------------------------------------------------------------
// Blocks

template <class T>
struct ConvUnitCache {
  nn::BatchNormCache<T> bn;
  Tensor<T> pre;  // BN output, the activation input
};

/// Two units of 3x3 conv -> BN -> LeakyReLU.
template <class T>
struct DoubleConv {
  std::string name;
  int in_ch = 0;
  int out_ch = 0;
  bool input_grad = true;

  struct Cache {
    Tensor<T> x;
    ConvUnitCache<T> first;
    Tensor<T> mid;
    ConvUnitCache<T> second;
  };

  nn::Conv2d<T> conv(int i) const {
    return {name + ".conv" + std::to_string(i), 3, i == 1 ? in_ch : out_ch, out_ch, i == 2 || input_grad};
  }
  nn::BatchNorm<T> bn(int i) const { return {name + ".bn" + std::to_string(i), out_ch}; }

  void init(ParamStore<T>& store, Xoshiro256& rng) const {
    for (int i = 1; i <= 2; ++i) {
      conv(i).init(store, rng);
      bn(i).init(store);
    }
  }

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, bool training, Cache* cache) const {
    ConvUnitCache<T> u1, u2;
    Tensor<T> z1 = bn(1).forward(store, conv(1).forward(store, x), training, cache ? &u1.bn : nullptr);
    Tensor<T> a1 = nn::leaky_relu(z1);
    Tensor<T> z2 = bn(2).forward(store, conv(2).forward(store, a1), training, cache ? &u2.bn : nullptr);
    Tensor<T> y = nn::leaky_relu(z2);
    if (cache) {
      u1.pre = std::move(z1);
      u2.pre = std::move(z2);
      *cache = {x, std::move(u1), std::move(a1), std::move(u2)};
    }
    return y;
  }

  Tensor<T> backward(const ParamStore<T>& store, const Cache& cache, const Tensor<T>& dy, Grads<T>& grads) const {
    Tensor<T> d = nn::leaky_relu_backward(cache.second.pre, dy);
    d = bn(2).backward(store, cache.second.bn, d, grads);
    d = conv(2).backward(store, cache.mid, d, grads);
    d = nn::leaky_relu_backward(cache.first.pre, d);
    d = bn(1).backward(store, cache.first.bn, d, grads);
    return conv(1).backward(store, cache.x, d, grads);
  }

  void update_running(ParamStore<T>& store, const Cache& cache, double momentum) const {
    bn(1).update_running(store, cache.first.bn, momentum);
    bn(2).update_running(store, cache.second.bn, momentum);
  }
};

/// Parallel 1x1, 3x3 and 5x5 conv -> BN -> LeakyReLU branches, summed, plus a
/// shortcut (identity when widths match, else a 1x1 projection).
template <class T>
struct ResConv {
  std::string name;
  int in_ch = 0;
  int out_ch = 0;
  bool input_grad = true;

  static constexpr std::array<int, 3> kKernels = {1, 3, 5};

  struct Cache {
    Tensor<T> x;
    std::array<ConvUnitCache<T>, 3> branch;
  };

  nn::Conv2d<T> conv(int i) const {
    const int k = kKernels[static_cast<std::size_t>(i)];
    return {name + ".k" + std::to_string(k) + ".conv", k, in_ch, out_ch, input_grad};
  }
  nn::BatchNorm<T> bn(int i) const {
    return {name + ".k" + std::to_string(kKernels[static_cast<std::size_t>(i)]) + ".bn", out_ch};
  }
  bool has_projection() const { return in_ch != out_ch; }
  nn::Conv2d<T> projection() const { return {name + ".proj", 1, in_ch, out_ch, input_grad}; }

  void init(ParamStore<T>& store, Xoshiro256& rng) const {
    for (int i = 0; i < 3; ++i) {
      conv(i).init(store, rng);
      bn(i).init(store);
    }
    if (has_projection()) projection().init(store, rng);
  }

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, bool training, Cache* cache) const {
    Tensor<T> y = has_projection() ? projection().forward(store, x) : x;
    Cache local;
    for (int i = 0; i < 3; ++i) {
      auto& unit = local.branch[static_cast<std::size_t>(i)];
      Tensor<T> z = bn(i).forward(store, conv(i).forward(store, x), training, cache ? &unit.bn : nullptr);
      y += nn::leaky_relu(z);
      if (cache) unit.pre = std::move(z);
    }
    if (cache) {
      local.x = x;
      *cache = std::move(local);
    }
    return y;
  }

  Tensor<T> backward(const ParamStore<T>& store, const Cache& cache, const Tensor<T>& dy, Grads<T>& grads) const {
    Tensor<T> dx = has_projection() ? projection().backward(store, cache.x, dy, grads) : dy;
    for (int i = 0; i < 3; ++i) {
      const auto& unit = cache.branch[static_cast<std::size_t>(i)];
      Tensor<T> d = nn::leaky_relu_backward(unit.pre, dy);
      d = bn(i).backward(store, unit.bn, d, grads);
      d = conv(i).backward(store, cache.x, d, grads);
      if (input_grad) dx += d;
    }
    if (!input_grad) return {};
    return dx;
  }

  void update_running(ParamStore<T>& store, const Cache& cache, double momentum) const {
    for (int i = 0; i < 3; ++i) bn(i).update_running(store, cache.branch[static_cast<std::size_t>(i)].bn, momentum);
  }
};

/// Convolutional block followed by an optional attention gate.
template <class T>
struct UnetBlock {
  std::string name;
  BlockKind kind = BlockKind::res_conv;
  int in_ch = 0;
  int out_ch = 0;
  int size = 0;
  bool attention = true;
  int heads = 4;
  int key_dim = 16;
  bool input_grad = true;

  struct Cache {
    typename ResConv<T>::Cache res;
    typename DoubleConv<T>::Cache dbl;
    nn::TriAxisCache<T> att;
  };

  ResConv<T> res_conv() const { return {name + ".res", in_ch, out_ch, input_grad}; }
  DoubleConv<T> double_conv() const { return {name + ".dbl", in_ch, out_ch, input_grad}; }
  nn::TriAxisAttention<T> gate() const { return {name + ".att", size, size, out_ch, heads, key_dim}; }

  void init(ParamStore<T>& store, Xoshiro256& rng) const {
    if (kind == BlockKind::res_conv) res_conv().init(store, rng);
    else double_conv().init(store, rng);
    if (attention) gate().init(store, rng);
  }

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, bool training, Cache* cache) const {
    Tensor<T> y = kind == BlockKind::res_conv ? res_conv().forward(store, x, training, cache ? &cache->res : nullptr)
                                              : double_conv().forward(store, x, training, cache ? &cache->dbl : nullptr);
    if (attention) y = gate().forward(store, y, cache ? &cache->att : nullptr);
    return y;
  }

  Tensor<T> backward(const ParamStore<T>& store, const Cache& cache, Tensor<T> dy, Grads<T>& grads) const {
    if (attention) dy = gate().backward(store, cache.att, dy, grads);
    return kind == BlockKind::res_conv ? res_conv().backward(store, cache.res, dy, grads)
                                       : double_conv().backward(store, cache.dbl, dy, grads);
  }

  void update_running(ParamStore<T>& store, const Cache& cache, double momentum) const {
    if (kind == BlockKind::res_conv) res_conv().update_running(store, cache.res, momentum);
    else double_conv().update_running(store, cache.dbl, momentum);
  }
};

// ---------------------------------------------------------------------------
// Network

/// Head outputs, aligned with ModelConfig::head_resolutions(). Maps are
/// (n, r, r); detect_logit is (n).
template <class T>
struct NetOutput {
  std::vector<Tensor<T>> head_logits;
  std::vector<Tensor<T>> head_probs;
  Tensor<T> detect_logit;
};

/// Gradients of the loss with respect to NetOutput's logits. Empty tensors
/// mean "no gradient".
template <class T>
struct NetOutputGrad {
  std::vector<Tensor<T>> head_logits;
  Tensor<T> detect_logit;
};

template <class T>
struct NetTape {
  std::vector<typename UnetBlock<T>::Cache> enc, dec;
  typename UnetBlock<T>::Cache mid;
  std::vector<std::vector<std::uint32_t>> pool_argmax;
  std::vector<std::vector<int>> pool_in_shape;
  std::vector<int> up_channels;
  std::vector<int> final_shape, half_shape;
  Tensor<T> pooled;  // (n, C) detection features
};

template <class T>
class RmauNet {
 public:
  explicit RmauNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (int i = 0; i < cfg_.depth; ++i) {
      const int cin = i == 0 ? cfg_.in_channels : cfg_.enc_filters(i - 1);
      enc_.push_back(block("enc" + std::to_string(i), cin, cfg_.enc_filters(i), cfg_.level_size(i)));
      enc_.back().input_grad = i > 0;
    }
    mid_ = block("mid", cfg_.enc_filters(cfg_.depth - 1), cfg_.mid_filters(), cfg_.level_size(cfg_.depth));
    for (int i = 0; i < cfg_.depth; ++i) {
      const int up = i == cfg_.depth - 1 ? cfg_.mid_filters() : cfg_.dec_filters(i + 1);
      dec_.push_back(block("dec" + std::to_string(i), up + cfg_.enc_filters(i), cfg_.dec_filters(i), cfg_.level_size(i)));
    }
  }

  const ModelConfig& config() const { return cfg_; }
  int final_channels() const { return cfg_.dec_filters(0); }

  void init(ParamStore<T>& store, std::uint64_t seed) const {
    Xoshiro256 rng(seed);
    store.params.clear();
    store.buffers.clear();
    for (const auto& b : enc_) b.init(store, rng);
    mid_.init(store, rng);
    for (const auto& b : dec_) b.init(store, rng);
    Tensor<T> w({final_channels(), 1});
    nn::fill_uniform(w, rng, std::sqrt(6.0 / (final_channels() + 1)));
    store.params["det.w"] = std::move(w);
    store.params["det.b"] = Tensor<T>({1});
    store.buffers["input.mean"] = Tensor<T>({cfg_.in_channels}, T(0));
    store.buffers["input.std"] = Tensor<T>({cfg_.in_channels}, T(1));
  }

  /// Every attention gate of the network, encoder to decoder.
  std::vector<nn::TriAxisAttention<T>> attention_gates() const {
    std::vector<nn::TriAxisAttention<T>> gates;
    if (!cfg_.attention) return gates;
    for (const auto& b : enc_) gates.push_back(b.gate());
    gates.push_back(mid_.gate());
    for (const auto& b : dec_) gates.push_back(b.gate());
    return gates;
  }

  NetOutput<T> forward(const ParamStore<T>& store, const Tensor<T>& x, bool training, NetTape<T>* tape) const {
    if (x.rank() != 4 || x.c() != cfg_.in_channels)
      throw Error(Errc::ChannelMismatch, "input has shape " + x.shape_string() + ", model expects " +
                                             std::to_string(cfg_.in_channels) + " channels");
    if (x.h() != cfg_.input_size || x.w() != cfg_.input_size)
      throw Error(Errc::ShapeMismatch, "input has shape " + x.shape_string() + ", model expects " +
                                           std::to_string(cfg_.input_size) + "x" + std::to_string(cfg_.input_size));
    if (tape) {
      *tape = NetTape<T>{};
      tape->enc.resize(enc_.size());
      tape->dec.resize(dec_.size());
    }
    Tensor<T> cur = normalize_input(store, x);
    std::vector<Tensor<T>> skips;
    for (std::size_t i = 0; i < enc_.size(); ++i) {
      skips.push_back(enc_[i].forward(store, cur, training, tape ? &tape->enc[i] : nullptr));
      std::vector<std::uint32_t> argmax;
      cur = nn::max_pool2(skips.back(), tape ? &argmax : nullptr);
      if (tape) {
        tape->pool_argmax.push_back(std::move(argmax));
        tape->pool_in_shape.push_back(skips.back().shape());
      }
    }
    cur = mid_.forward(store, cur, training, tape ? &tape->mid : nullptr);
    Tensor<T> half;
    if (tape) tape->up_channels.assign(dec_.size(), 0);
    for (int i = cfg_.depth - 1; i >= 0; --i) {
      const auto idx = static_cast<std::size_t>(i);
      if (i == 0) half = cur;
      if (tape) tape->up_channels[idx] = cur.c();
      Tensor<T> cat = nn::concat_channels(nn::upsample2(cur), skips[idx]);
      cur = dec_[idx].forward(store, cat, training, tape ? &tape->dec[idx] : nullptr);
    }
    const Tensor<T>& final_map = cur;

    NetOutput<T> out;
    Tensor<T> logit_s = nn::channel_mean(final_map);
    if (cfg_.multi_head) {
      out.head_logits.push_back(nn::upsample2_map(logit_s));
      out.head_logits.push_back(std::move(logit_s));
      out.head_logits.push_back(nn::channel_mean(half));
    } else {
      out.head_logits.push_back(std::move(logit_s));
    }
    for (const auto& l : out.head_logits) {
      Tensor<T> p(l.shape());
      for (std::size_t k = 0; k < l.size(); ++k) p[k] = nn::sigmoid(l[k]);
      out.head_probs.push_back(std::move(p));
    }

    Tensor<T> pooled = nn::global_avg_pool(final_map);
    const auto& dw = store.param("det.w");
    const T db = store.param("det.b")[0];
    out.detect_logit = Tensor<T>({x.n()});
    for (int b = 0; b < x.n(); ++b) {
      T acc = db;
      for (int ch = 0; ch < pooled.dim(1); ++ch) acc += pooled[static_cast<std::size_t>(b) * pooled.dim(1) + ch] * dw[ch];
      out.detect_logit[b] = acc;
    }
    if (tape) {
      tape->final_shape = final_map.shape();
      tape->half_shape = half.shape();
      tape->pooled = std::move(pooled);
    }
    return out;
  }

  /// Backpropagates logit gradients through a training-mode tape.
  void backward(const ParamStore<T>& store, const NetTape<T>& tape, const NetOutputGrad<T>& d, Grads<T>& grads) const {
    Tensor<T> d_final(tape.final_shape);
    Tensor<T> d_half(tape.half_shape);
    if (!d.head_logits.empty()) {
      if (d.head_logits.size() != cfg_.head_resolutions().size())
        throw Error(Errc::MissingHead, "expected one gradient per head");
      Tensor<T> d_s = cfg_.multi_head ? d.head_logits[1] : d.head_logits[0];
      if (cfg_.multi_head) {
        d_s += nn::upsample2_map_backward(d.head_logits[0]);
        d_half = nn::channel_mean_backward(tape.half_shape, d.head_logits[2]);
      }
      d_final = nn::channel_mean_backward(tape.final_shape, d_s);
    }
    if (!d.detect_logit.empty()) {
      const int n = tape.pooled.dim(0);
      const int c = tape.pooled.dim(1);
      const auto& dw = store.param("det.w");
      auto& gw = nn::grad_slot(grads, store, "det.w");
      auto& gb = nn::grad_slot(grads, store, "det.b");
      Tensor<T> d_pooled({n, c});
      for (int b = 0; b < n; ++b) {
        const T g = d.detect_logit[b];
        gb[0] += g;
        for (int ch = 0; ch < c; ++ch) {
          gw[ch] += g * tape.pooled[static_cast<std::size_t>(b) * c + ch];
          d_pooled[static_cast<std::size_t>(b) * c + ch] = g * dw[ch];
        }
      }
      d_final += nn::global_avg_pool_backward(tape.final_shape, d_pooled);
    }

    std::vector<Tensor<T>> d_skips(enc_.size());
    Tensor<T> cur = std::move(d_final);
    for (int i = 0; i < cfg_.depth; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      Tensor<T> d_cat = dec_[idx].backward(store, tape.dec[idx], std::move(cur), grads);
      auto [d_up, d_skip] = nn::split_channels(d_cat, tape.up_channels[idx]);
      d_skips[idx] = std::move(d_skip);
      cur = nn::upsample2_backward(d_up);
      if (i == 0) cur += d_half;
    }
    cur = mid_.backward(store, tape.mid, std::move(cur), grads);
    for (int i = cfg_.depth - 1; i >= 0; --i) {
      const auto idx = static_cast<std::size_t>(i);
      Tensor<T> d_skip = nn::max_pool2_backward(tape.pool_in_shape[idx], tape.pool_argmax[idx], cur);
      d_skip += d_skips[idx];
      cur = enc_[idx].backward(store, tape.enc[idx], std::move(d_skip), grads);
    }
  }

  /// Folds the tape's batch statistics into the BN running buffers.
  void update_running(ParamStore<T>& store, const NetTape<T>& tape, double momentum) const {
    for (std::size_t i = 0; i < enc_.size(); ++i) enc_[i].update_running(store, tape.enc[i], momentum);
    mid_.update_running(store, tape.mid, momentum);
    for (std::size_t i = 0; i < dec_.size(); ++i) dec_[i].update_running(store, tape.dec[i], momentum);
  }

 private:
  UnetBlock<T> block(std::string name, int cin, int cout, int size) const {
    return {std::move(name), cfg_.block, cin, cout, size, cfg_.attention, cfg_.attention_heads, cfg_.key_dim};
  }

  Tensor<T> normalize_input(const ParamStore<T>& store, const Tensor<T>& x) const {
    auto mit = store.buffers.find("input.mean");
    auto sit = store.buffers.find("input.std");
    if (mit == store.buffers.end() || sit == store.buffers.end()) return x;
    Tensor<T> y(x.shape());
    const int c = x.c();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto ch = static_cast<std::size_t>(i % static_cast<std::size_t>(c));
      y[i] = (x[i] - mit->second[ch]) / sit->second[ch];
    }
    return y;
  }

  ModelConfig cfg_;
  std::vector<UnetBlock<T>> enc_, dec_;
  UnetBlock<T> mid_;
};

// ---------------------------------------------------------------------------
// Model state and checkpoints

inline constexpr const char* kModelVersion = "rmau-net/1";

template <class T>
struct ModelState {
  ModelConfig config;
  ParamStore<T> store;
  std::string version = kModelVersion;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : store.params) n += t.size();
    return n;
  }

  /// (lambda-free) squared L2 norm of the decayed kernels.
  double decayed_norm_sq() const {
    double s = 0.0;
    for (const auto& [name, t] : store.params)
      if (nn::is_decayed(name))
        for (T v : t.values()) s += static_cast<double>(v) * v;
    return s;
  }

  bool all_finite() const {
    for (const auto& [name, t] : store.params)
      if (!t.all_finite()) return false;
    for (const auto& [name, t] : store.buffers)
      if (!t.all_finite()) return false;
    return true;
  }

  template <class U>
  ModelState<U> cast() const {
    ModelState<U> out{config, {}, version};
    for (const auto& [name, t] : store.params) out.store.params[name] = t.template cast<U>();
    for (const auto& [name, t] : store.buffers) out.store.buffers[name] = t.template cast<U>();
    return out;
  }

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

template <class T>
ModelState<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  ModelState<T> state{cfg, {}, kModelVersion};
  RmauNet<T>(cfg).init(state.store, seed);
  return state;
}

// Checkpoint layout (little-endian):
//   "RMCK" | u32 version=1 | u32 n | model version string (n bytes)
//   | u32 n | ModelConfig key=value text (n bytes) | u32 entry count
//   | per entry: u32 kind (0 param, 1 buffer) | u32 n | path (n bytes)
//     | u32 rank | u32 dims[rank] | float32 values
inline constexpr std::array<char, 4> kCheckpointMagic = {'R', 'M', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
std::string encode_checkpoint(const ModelState<T>& state) {
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, kCheckpointVersion);
  auto put_str = [&](const std::string& s) {
    detail::put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
  };
  put_str(state.version);
  put_str(state.config.to_text());
  detail::put_u32(out, static_cast<std::uint32_t>(state.store.params.size() + state.store.buffers.size()));
  auto put_entries = [&](const auto& map, std::uint32_t kind) {
    for (const auto& [name, t] : map) {
      detail::put_u32(out, kind);
      put_str(name);
      detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
      for (int d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
      for (T v : t.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  };
  put_entries(state.store.params, 0);
  put_entries(state.store.buffers, 1);
  return out;
}

template <class T>
ModelState<T> decode_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint") {
  if (bytes.size() < 4 || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin()))
    throw Error(Errc::BadMagic, origin);
  std::size_t pos = 4;
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  auto u32 = [&]() {
    if (pos + 4 > bytes.size()) throw Error(Errc::TruncatedFile, origin);
    const std::uint32_t v = detail::get_u32(p + pos);
    pos += 4;
    return v;
  };
  auto str = [&]() {
    const std::uint32_t n = u32();
    if (pos + n > bytes.size()) throw Error(Errc::TruncatedFile, origin);
    std::string s(bytes.data() + pos, n);
    pos += n;
    return s;
  };
  const std::uint32_t version = u32();
  if (version != kCheckpointVersion)
    throw Error(Errc::UnsupportedVersion, origin + " has checkpoint version " + std::to_string(version));
  ModelState<T> state;
  state.version = str();
  state.config = ModelConfig::from_text(str());
  const std::uint32_t entries = u32();
  for (std::uint32_t e = 0; e < entries; ++e) {
    const std::uint32_t kind = u32();
    const std::string name = str();
    const std::uint32_t rank = u32();
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(u32());
    Tensor<T> t(shape);
    if (pos + t.size() * 4 > bytes.size()) throw Error(Errc::TruncatedFile, origin + " entry " + name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(std::bit_cast<float>(detail::get_u32(p + pos + 4 * i)));
    pos += t.size() * 4;
    (kind == 0 ? state.store.params : state.store.buffers)[name] = std::move(t);
  }
  return state;
}

template <class T>
void save_checkpoint(const ModelState<T>& state, const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(state));
}

template <class T>
ModelState<T> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<T>(detail::read_file(path), path.string());
}

/// FNV-1a over the encoded checkpoint.
template <class T>
std::uint64_t state_checksum(const ModelState<T>& state) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : encode_checkpoint(state)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Tile-level helpers

/// Stacks tiles into an (n, h, w, c) tensor.
template <class T>
Tensor<T> tiles_to_tensor(std::span<const Tile> tiles) {
  if (tiles.empty()) throw Error(Errc::ShapeMismatch, "empty tile batch");
  const Tile& first = tiles.front();
  Tensor<T> x({static_cast<int>(tiles.size()), first.height, first.width, first.channels});
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const Tile& t = tiles[i];
    if (t.height != first.height || t.width != first.width || t.channels != first.channels)
      throw Error(Errc::ShapeMismatch, "tile '" + t.id + "' differs in shape from '" + first.id + "'");
    std::transform(t.data.begin(), t.data.end(), x.data() + i * t.data.size(),
                   [](float v) { return static_cast<T>(v); });
  }
  return x;
}

template <class T>
ProbMap to_prob_map(const Tensor<T>& maps, int index) {
  ProbMap p(maps.dim(1), maps.dim(2));
  const std::size_t per = p.values.size();
  for (std::size_t k = 0; k < per; ++k) p.values[k] = static_cast<float>(maps[static_cast<std::size_t>(index) * per + k]);
  return p;
}

struct ForwardResult {
  std::vector<std::vector<ProbMap>> masks;  // [head][image], heads as in head_resolutions()
  std::vector<double> detect_logits;
};

/// Evaluation-mode forward over a batch of tiles.
template <class T>
ForwardResult forward(std::span<const Tile> tiles, const ModelState<T>& state) {
  if (!tiles.empty() && tiles.front().channels != state.config.in_channels)
    throw Error(Errc::ChannelMismatch, "tile '" + tiles.front().id + "' has " + std::to_string(tiles.front().channels) +
                                           " channels, model expects " + std::to_string(state.config.in_channels));
  const RmauNet<T> net(state.config);
  const NetOutput<T> out = net.forward(state.store, tiles_to_tensor<T>(tiles), false, nullptr);
  ForwardResult r;
  for (const auto& probs : out.head_probs) {
    std::vector<ProbMap> maps;
    for (int b = 0; b < probs.dim(0); ++b) maps.push_back(to_prob_map(probs, b));
    r.masks.push_back(std::move(maps));
  }
  for (std::size_t b = 0; b < out.detect_logit.size(); ++b) r.detect_logits.push_back(static_cast<double>(out.detect_logit[b]));
  return r;
}

/// Averages the 2S, S and S/2 head maps at resolution S: the 2S map is 2x2
/// average-pooled, the S/2 map nearest-replicated.
inline ProbMap ensemble_masks(const ProbMap& high, const ProbMap& base, const ProbMap& low) {
  if (high.values.empty() || base.values.empty() || low.values.empty())
    throw Error(Errc::MissingHead, "ensemble needs all three head maps");
  if (high.height != 2 * base.height || high.width != 2 * base.width || 2 * low.height != base.height ||
      2 * low.width != base.width)
    throw Error(Errc::ShapeMismatch, "head maps must be 2x, 1x and 0.5x the base resolution");
  ProbMap out(base.height, base.width);
  for (int r = 0; r < base.height; ++r)
    for (int c = 0; c < base.width; ++c) {
      const double pooled = (static_cast<double>(high.at(2 * r, 2 * c)) + high.at(2 * r, 2 * c + 1) +
                             high.at(2 * r + 1, 2 * c) + high.at(2 * r + 1, 2 * c + 1)) /
                            4.0;
      out.at(r, c) = static_cast<float>((pooled + base.at(r, c) + low.at(r / 2, c / 2)) / 3.0);
    }
  return out;
}

/// Ensemble over whatever heads a forward produced for one image.
inline ProbMap ensemble_heads(const ForwardResult& r, std::size_t image) {
  if (r.masks.size() == 1) return r.masks[0][image];
  if (r.masks.size() != 3) throw Error(Errc::MissingHead, "expected 1 or 3 head maps");
  return ensemble_masks(r.masks[0][image], r.masks[1][image], r.masks[2][image]);
}

}  // namespace rmau
