#pragma once

// Segmentation and detection objectives. Pixel losses take probabilities and
// binary targets; every loss also has a value-and-gradient form used by the
// trainer. The log-based losses clamp predictions to
// [kPredClamp, 1 - kPredClamp] and pass the clamp straight through in the
// gradient; the overlap losses (IoU, Tversky, Dice) use predictions as given.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rmau/config_text.hpp"
#include "rmau/core_types.hpp"
#include "rmau/error.hpp"
#include "rmau/nn/tensor.hpp"

namespace rmau {

enum class LossKind { cross_entropy, focal, iou, focal_iou, tversky, log_cosh_dice };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::cross_entropy: return "cross_entropy";
    case LossKind::focal: return "focal";
    case LossKind::iou: return "iou";
    case LossKind::focal_iou: return "focal_iou";
    case LossKind::tversky: return "tversky";
    case LossKind::log_cosh_dice: return "log_cosh_dice";
  }
  return "focal_iou";
}

inline LossKind parse_loss_kind(const std::string& s) {
  for (auto k : {LossKind::cross_entropy, LossKind::focal, LossKind::iou, LossKind::focal_iou, LossKind::tversky,
                 LossKind::log_cosh_dice})
    if (to_string(k) == s) return k;
  throw Error(Errc::BadConfig, "loss.kind '" + s + "' is unknown");
}

inline constexpr double kPredClamp = 1e-7;

struct LossConfig {
  LossKind kind = LossKind::focal_iou;
  double alpha = 0.5;
  double lambda_l2 = 1e-4;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double tversky_alpha = 0.3;
  double tversky_beta = 0.7;
  double epsilon = 1e-6;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(Errc::BadConfig, "loss.alpha must lie in [0,1]");
    if (!(lambda_l2 >= 0.0)) throw Error(Errc::BadConfig, "loss.lambda_l2 must be >= 0");
    if (!(epsilon > 0.0)) throw Error(Errc::BadConfig, "loss.epsilon must be > 0");
    if (!(focal_gamma >= 0.0)) throw Error(Errc::BadConfig, "loss.focal_gamma must be >= 0");
  }

  void apply(const KeyValues& kv) {
    for (const auto& [key, value] : kv) {
      if (key == "loss.kind") kind = parse_loss_kind(value);
      else if (key == "loss.alpha") alpha = parse_double(key, value);
      else if (key == "loss.lambda_l2") lambda_l2 = parse_double(key, value);
      else if (key == "loss.focal_gamma") focal_gamma = parse_double(key, value);
      else if (key == "loss.focal_alpha") focal_alpha = parse_double(key, value);
      else if (key == "loss.tversky_alpha") tversky_alpha = parse_double(key, value);
      else if (key == "loss.tversky_beta") tversky_beta = parse_double(key, value);
      else if (key == "loss.epsilon") epsilon = parse_double(key, value);
      else if (key.rfind("loss.", 0) == 0) throw Error(Errc::BadConfig, "unknown key '" + key + "'");
    }
    validate();
  }

  std::string to_text() const {
    std::string s = "loss.kind=" + to_string(kind) + "\n";
    s += "loss.alpha=" + format_double(alpha) + "\n";
    s += "loss.lambda_l2=" + format_double(lambda_l2) + "\n";
    s += "loss.focal_gamma=" + format_double(focal_gamma) + "\n";
    s += "loss.focal_alpha=" + format_double(focal_alpha) + "\n";
    s += "loss.tversky_alpha=" + format_double(tversky_alpha) + "\n";
    s += "loss.tversky_beta=" + format_double(tversky_beta) + "\n";
    s += "loss.epsilon=" + format_double(epsilon) + "\n";
    return s;
  }
};

/// Loss value plus d(value)/d(pred) per pixel.
struct LossGrad {
  double value = 0.0;
  std::vector<double> grad;
};

namespace detail {

inline double clamp_pred(double p) { return std::clamp(p, kPredClamp, 1.0 - kPredClamp); }

template <class T>
void check_lengths(std::span<const T> pred, std::span<const std::uint8_t> target) {
  if (pred.size() != target.size())
    throw Error(Errc::ShapeMismatch, "prediction has " + std::to_string(pred.size()) + " pixels, target has " +
                                         std::to_string(target.size()));
  if (pred.empty()) throw Error(Errc::ShapeMismatch, "empty prediction");
}

template <class T>
LossGrad bce(std::span<const T> pred, std::span<const std::uint8_t> target) {
  check_lengths(pred, target);
  const double n = static_cast<double>(pred.size());
  LossGrad r{0.0, std::vector<double>(pred.size())};
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double p = clamp_pred(static_cast<double>(pred[k]));
    if (target[k]) {
      r.value -= std::log(p);
      r.grad[k] = -1.0 / (p * n);
    } else {
      r.value -= std::log(1.0 - p);
      r.grad[k] = 1.0 / ((1.0 - p) * n);
    }
  }
  r.value /= n;
  return r;
}

template <class T>
LossGrad focal(std::span<const T> pred, std::span<const std::uint8_t> target, const LossConfig& cfg) {
  check_lengths(pred, target);
  const double n = static_cast<double>(pred.size());
  const double g = cfg.focal_gamma;
  const double a = cfg.focal_alpha;
  LossGrad r{0.0, std::vector<double>(pred.size())};
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double p = clamp_pred(static_cast<double>(pred[k]));
    const double pt = target[k] ? p : 1.0 - p;
    const double q = 1.0 - pt;
    const double lp = std::log(pt);
    r.value += -a * std::pow(q, g) * lp;
    // d/dpt of -a q^g log pt
    const double dpt = a * ((g == 0.0 ? 0.0 : g * std::pow(q, g - 1.0) * lp) - std::pow(q, g) / pt);
    r.grad[k] = (target[k] ? dpt : -dpt) / n;
  }
  r.value /= n;
  return r;
}

template <class T>
LossGrad soft_iou(std::span<const T> pred, std::span<const std::uint8_t> target, double eps) {
  check_lengths(pred, target);
  double inter = 0.0, sp = 0.0, sy = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double p = static_cast<double>(pred[k]);
    inter += p * target[k];
    sp += p;
    sy += target[k];
  }
  const double num = inter + eps;
  const double den = sp + sy - inter + eps;
  LossGrad r{1.0 - num / den, std::vector<double>(pred.size())};
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double y = target[k];
    r.grad[k] = -(y * den - num * (1.0 - y)) / (den * den);
  }
  return r;
}

template <class T>
LossGrad tversky(std::span<const T> pred, std::span<const std::uint8_t> target, double a, double b, double eps) {
  check_lengths(pred, target);
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double p = static_cast<double>(pred[k]);
    const double y = target[k];
    tp += p * y;
    fp += p * (1.0 - y);
    fn += (1.0 - p) * y;
  }
  const double num = tp + eps;
  const double den = tp + a * fp + b * fn + eps;
  LossGrad r{1.0 - num / den, std::vector<double>(pred.size())};
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double y = target[k];
    const double dden = y + a * (1.0 - y) - b * y;
    r.grad[k] = -(y * den - num * dden) / (den * den);
  }
  return r;
}

}  // namespace detail

/// Pixel loss of the configured kind (without the L2 term) and its gradient.
template <class T>
LossGrad pixel_loss_grad(std::span<const T> pred, std::span<const std::uint8_t> target, const LossConfig& cfg) {
  switch (cfg.kind) {
    case LossKind::cross_entropy: return detail::bce(pred, target);
    case LossKind::focal: return detail::focal(pred, target, cfg);
    case LossKind::iou: return detail::soft_iou(pred, target, cfg.epsilon);
    case LossKind::focal_iou: {
      LossGrad f = detail::focal(pred, target, cfg);
      const LossGrad i = detail::soft_iou(pred, target, cfg.epsilon);
      f.value = cfg.alpha * f.value + (1.0 - cfg.alpha) * i.value;
      for (std::size_t k = 0; k < f.grad.size(); ++k) f.grad[k] = cfg.alpha * f.grad[k] + (1.0 - cfg.alpha) * i.grad[k];
      return f;
    }
    case LossKind::tversky:
      return detail::tversky(pred, target, cfg.tversky_alpha, cfg.tversky_beta, cfg.epsilon);
    case LossKind::log_cosh_dice: {
      LossGrad d = detail::tversky(pred, target, 0.5, 0.5, cfg.epsilon);
      const double t = std::tanh(d.value);
      for (auto& g : d.grad) g *= t;
      d.value = std::log(std::cosh(d.value));
      return d;
    }
  }
  throw Error(Errc::BadConfig, "unknown loss kind");
}

namespace detail {
inline void check_shapes(const ProbMap& pred, const MaskImage& target) {
  if (pred.height != target.height || pred.width != target.width)
    throw Error(Errc::ShapeMismatch, "prediction is " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                                         ", target is " + std::to_string(target.height) + "x" +
                                         std::to_string(target.width));
}

inline LossGrad map_loss(const ProbMap& pred, const MaskImage& target, const LossConfig& cfg, LossKind kind) {
  check_shapes(pred, target);
  LossConfig c = cfg;
  c.kind = kind;
  return pixel_loss_grad<float>(pred.values, target.values, c);
}
}  // namespace detail

/// Binary cross-entropy plus (lambda/2) * theta_norm_sq.
inline double cross_entropy_l2(const ProbMap& pred, const MaskImage& target, double theta_norm_sq,
                               const LossConfig& cfg) {
  return detail::map_loss(pred, target, cfg, LossKind::cross_entropy).value + 0.5 * cfg.lambda_l2 * theta_norm_sq;
}

inline double focal_loss(const ProbMap& pred, const MaskImage& target, const LossConfig& cfg) {
  return detail::map_loss(pred, target, cfg, LossKind::focal).value;
}

inline double iou_loss(const ProbMap& pred, const MaskImage& target, const LossConfig& cfg) {
  return detail::map_loss(pred, target, cfg, LossKind::iou).value;
}

inline double combined_focal_iou(const ProbMap& pred, const MaskImage& target, const LossConfig& cfg) {
  return detail::map_loss(pred, target, cfg, LossKind::focal_iou).value;
}

inline double tversky_loss(const ProbMap& pred, const MaskImage& target, const LossConfig& cfg) {
  return detail::map_loss(pred, target, cfg, LossKind::tversky).value;
}

/// Soft Dice, 1 - 2(TP + eps) / (sum pred + sum target + 2 eps).
inline double dice_loss(const ProbMap& pred, const MaskImage& target, const LossConfig& cfg) {
  LossConfig c = cfg;
  c.tversky_alpha = c.tversky_beta = 0.5;
  return detail::map_loss(pred, target, c, LossKind::tversky).value;
}

inline double log_cosh_dice_loss(const ProbMap& pred, const MaskImage& target, const LossConfig& cfg) {
  return detail::map_loss(pred, target, cfg, LossKind::log_cosh_dice).value;
}

inline double pixel_loss(const ProbMap& pred, const MaskImage& target, const LossConfig& cfg) {
  return detail::map_loss(pred, target, cfg, cfg.kind).value;
}

/// Resamples a mask to a head resolution: nearest replication upward, 2x2
/// max-pooling (any positive) downward.
inline MaskImage resample_mask(const MaskImage& mask, int size) {
  if (size == mask.height && size == mask.width) return mask;
  MaskImage out(size, size);
  if (size > mask.height) {
    const int f = size / mask.height;
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) out.at(r, c) = mask.at(r / f, c / f);
  } else {
    const int f = mask.height / size;
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) {
        std::uint8_t v = 0;
        for (int dr = 0; dr < f; ++dr)
          for (int dc = 0; dc < f; ++dc) v = std::max(v, mask.at(r * f + dr, c * f + dc));
        out.at(r, c) = v;
      }
  }
  return out;
}

/// Unweighted mean of the per-head losses; the target is resampled to each
/// head's resolution.
inline double multi_head_loss(const std::vector<ProbMap>& heads, const MaskImage& target, const LossConfig& cfg) {
  if (heads.empty()) throw Error(Errc::MissingHead, "no head maps");
  double sum = 0.0;
  for (const auto& h : heads) {
    if (h.values.empty()) throw Error(Errc::MissingHead, "empty head map");
    sum += pixel_loss(h, resample_mask(target, h.height), cfg);
  }
  return sum / static_cast<double>(heads.size());
}

/// Binary cross-entropy on sigmoid(logit), computed stably.
inline double detection_loss(double logit, int label) {
  // -log sigmoid(z) = softplus(-z)
  auto softplus = [](double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); };
  return label ? softplus(-logit) : softplus(logit);
}

inline double detection_loss_grad(double logit, int label) { return nn::sigmoid(logit) - (label ? 1.0 : 0.0); }

/// Batched head loss on an (n, r, r) probability tensor. The batch is scored
/// as one pooled map: pixel-mean losses average over every pixel (the same as
/// per-image means averaged over equal-sized images), overlap losses use
/// batch-pooled sums. Returns the gradient with respect to the head logits.
template <class T>
double head_loss_grad(const nn::Tensor<T>& probs, const std::vector<MaskImage>& targets, const LossConfig& cfg,
                      nn::Tensor<T>* dlogits) {
  const int n = probs.dim(0);
  if (static_cast<int>(targets.size()) != n)
    throw Error(Errc::LengthMismatch, "head batch of " + std::to_string(n) + " vs " + std::to_string(targets.size()) +
                                          " targets");
  const std::size_t per = probs.size() / static_cast<std::size_t>(n);
  std::vector<std::uint8_t> y;
  y.reserve(probs.size());
  for (const auto& t : targets) {
    if (t.values.size() != per) throw Error(Errc::ShapeMismatch, "head target does not match head resolution");
    y.insert(y.end(), t.values.begin(), t.values.end());
  }
  const LossGrad lg = pixel_loss_grad<T>(probs.span(), y, cfg);
  if (dlogits) {
    *dlogits = nn::Tensor<T>(probs.shape());
    for (std::size_t k = 0; k < probs.size(); ++k) {
      const double pk = static_cast<double>(probs[k]);
      (*dlogits)[k] = static_cast<T>(lg.grad[k] * pk * (1.0 - pk));
    }
  }
  return lg.value;
}

}  // namespace rmau
