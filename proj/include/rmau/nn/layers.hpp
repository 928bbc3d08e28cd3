#pragma once

// Primitive layers with explicit backward passes. Layers are stateless
// descriptors: learned values live in a ParamStore, gradients accumulate into
// a Grads map, and whatever backward needs is kept in a caller-owned cache.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rmau/error.hpp"
#include "rmau/nn/tensor.hpp"
#include "rmau/rng.hpp"

namespace rmau::nn {

template <class T>
struct ParamStore {
  std::map<std::string, Tensor<T>> params;   // trainable
  std::map<std::string, Tensor<T>> buffers;  // running statistics, input normalization

  const Tensor<T>& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw Error(Errc::BadConfig, "missing parameter '" + name + "'");
    return it->second;
  }
  Tensor<T>& param(const std::string& name) { return const_cast<Tensor<T>&>(std::as_const(*this).param(name)); }

  const Tensor<T>& buffer(const std::string& name) const {
    auto it = buffers.find(name);
    if (it == buffers.end()) throw Error(Errc::BadConfig, "missing buffer '" + name + "'");
    return it->second;
  }
  Tensor<T>& buffer(const std::string& name) { return const_cast<Tensor<T>&>(std::as_const(*this).buffer(name)); }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;
};

template <class T>
using Grads = std::map<std::string, Tensor<T>>;

/// Gradient slot for `name`, created as zeros shaped like the parameter.
template <class T>
Tensor<T>& grad_slot(Grads<T>& grads, const ParamStore<T>& store, const std::string& name) {
  auto it = grads.find(name);
  if (it != grads.end()) return it->second;
  return grads.emplace(name, Tensor<T>(store.param(name).shape())).first->second;
}

/// Weight decay applies to convolution and dense kernels (names ending in ".w"
/// or attention projections ".wq/.wk/.wv/.wo"), not to biases or BN affine terms.
inline bool is_decayed(const std::string& name) {
  auto ends = [&](const char* s) {
    const std::string suf(s);
    return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
  };
  return ends(".w") || ends(".wq") || ends(".wk") || ends(".wv") || ends(".wo");
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <class T>
void fill_normal(Tensor<T>& t, Xoshiro256& rng, double stddev) {
  for (auto& v : t.values()) v = static_cast<T>(rng.normal() * stddev);
}

template <class T>
void fill_uniform(Tensor<T>& t, Xoshiro256& rng, double limit) {
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-limit, limit));
}

// ---------------------------------------------------------------------------

/// k x k convolution, stride 1, zero "same" padding, with bias.
/// Kernel layout: [k*k*in_ch, out_ch], row index (ky*k + kx)*in_ch + ci.
template <class T>
struct Conv2d {
  std::string name;
  int kernel = 3;
  int in_ch = 0;
  int out_ch = 0;
  bool input_grad = true;  // false: backward skips dL/dx and returns an empty tensor

  std::string w() const { return name + ".w"; }
  std::string b() const { return name + ".b"; }

  void init(ParamStore<T>& store, Xoshiro256& rng) const {
    Tensor<T> weight({kernel * kernel * in_ch, out_ch});
    fill_normal(weight, rng, std::sqrt(2.0 / (kernel * kernel * in_ch)));
    store.params[w()] = std::move(weight);
    store.params[b()] = Tensor<T>({out_ch});
  }

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x) const {
    check_input(x);
    const auto& weight = store.param(w());
    const auto& bias = store.param(b());
    Tensor<T> y({x.n(), x.h(), x.w(), out_ch});
    ConstMatMap<T> wm(weight.data(), kernel * kernel * in_ch, out_ch);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.data(), out_ch);
    const int rows_per_chunk = chunk_rows(x);
    AlignedVector<T> patches;
    for (int b = 0; b < x.n(); ++b)
      for (int r0 = 0; r0 < x.h(); r0 += rows_per_chunk) {
        const int r1 = std::min(x.h(), r0 + rows_per_chunk);
        const int rows = (r1 - r0) * x.w();
        MatMap<T> ym(y.data() + y.offset(b, r0, 0, 0), rows, out_ch);
        if (kernel == 1) {
          ConstMatMap<T> xm(x.data() + x.offset(b, r0, 0, 0), rows, in_ch);
          ym.noalias() = xm * wm;
        } else {
          im2col(x, b, r0, r1, patches);
          ConstMatMap<T> pm(patches.data(), rows, kernel * kernel * in_ch);
          ym.noalias() = pm * wm;
        }
        ym.rowwise() += bv;
      }
    return y;
  }

  /// Returns dL/dx and accumulates dL/dw, dL/db.
  Tensor<T> backward(const ParamStore<T>& store, const Tensor<T>& x, const Tensor<T>& dy, Grads<T>& grads) const {
    const auto& weight = store.param(w());
    auto& gw = grad_slot(grads, store, w());
    auto& gb = grad_slot(grads, store, b());
    Tensor<T> dx = input_grad ? Tensor<T>(x.shape()) : Tensor<T>();
    const int kk = kernel * kernel * in_ch;
    ConstMatMap<T> wm(weight.data(), kk, out_ch);
    MatMap<T> gwm(gw.data(), kk, out_ch);
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gbv(gb.data(), out_ch);
    const int rows_per_chunk = chunk_rows(x);
    AlignedVector<T> patches;
    RowMat<T> dpatches;
    for (int b = 0; b < x.n(); ++b)
      for (int r0 = 0; r0 < x.h(); r0 += rows_per_chunk) {
        const int r1 = std::min(x.h(), r0 + rows_per_chunk);
        const int rows = (r1 - r0) * x.w();
        ConstMatMap<T> dym(dy.data() + dy.offset(b, r0, 0, 0), rows, out_ch);
        gbv += dym.colwise().sum();
        if (kernel == 1) {
          ConstMatMap<T> xm(x.data() + x.offset(b, r0, 0, 0), rows, in_ch);
          gwm.noalias() += xm.transpose() * dym;
          if (!input_grad) continue;
          MatMap<T> dxm(dx.data() + dx.offset(b, r0, 0, 0), rows, in_ch);
          dxm.noalias() = dym * wm.transpose();
        } else {
          im2col(x, b, r0, r1, patches);
          ConstMatMap<T> pm(patches.data(), rows, kk);
          gwm.noalias() += pm.transpose() * dym;
          if (!input_grad) continue;
          dpatches.noalias() = dym * wm.transpose();
          col2im(dpatches, b, r0, r1, dx);
        }
      }
    return dx;
  }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.c() != in_ch)
      throw Error(Errc::ShapeMismatch, name + " expects " + std::to_string(in_ch) + " channels, got " + x.shape_string());
  }

  int chunk_rows(const Tensor<T>& x) const {
    constexpr std::size_t kMaxPatchValues = std::size_t{1} << 21;
    const std::size_t per_row = static_cast<std::size_t>(x.w()) * kernel * kernel * in_ch;
    return static_cast<int>(std::clamp<std::size_t>(kMaxPatchValues / std::max<std::size_t>(per_row, 1), 1,
                                                    static_cast<std::size_t>(x.h())));
  }

  void im2col(const Tensor<T>& x, int b, int r0, int r1, AlignedVector<T>& patches) const {
    const int pad = kernel / 2;
    const int kk = kernel * kernel * in_ch;
    patches.assign(static_cast<std::size_t>(r1 - r0) * x.w() * kk, T(0));
    for (int r = r0; r < r1; ++r)
      for (int c = 0; c < x.w(); ++c) {
        T* row = patches.data() + (static_cast<std::size_t>(r - r0) * x.w() + c) * kk;
        for (int ky = 0; ky < kernel; ++ky) {
          const int yy = r + ky - pad;
          if (yy < 0 || yy >= x.h()) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int xx = c + kx - pad;
            if (xx < 0 || xx >= x.w()) continue;
            const T* src = x.data() + x.offset(b, yy, xx, 0);
            std::copy(src, src + in_ch, row + (ky * kernel + kx) * in_ch);
          }
        }
      }
  }

  void col2im(const RowMat<T>& dpatches, int b, int r0, int r1, Tensor<T>& dx) const {
    const int pad = kernel / 2;
    for (int r = r0; r < r1; ++r)
      for (int c = 0; c < dx.w(); ++c) {
        const T* row = dpatches.data() + (static_cast<std::size_t>(r - r0) * dx.w() + c) * dpatches.cols();
        for (int ky = 0; ky < kernel; ++ky) {
          const int yy = r + ky - pad;
          if (yy < 0 || yy >= dx.h()) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int xx = c + kx - pad;
            if (xx < 0 || xx >= dx.w()) continue;
            T* dst = dx.data() + dx.offset(b, yy, xx, 0);
            const T* src = row + (ky * kernel + kx) * in_ch;
            for (int ci = 0; ci < in_ch; ++ci) dst[ci] += src[ci];
          }
        }
      }
  }
};

// ---------------------------------------------------------------------------

template <class T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
  std::vector<T> mean;
  std::vector<T> var;
};

inline constexpr double kBatchNormEps = 1e-3;

/// Per-channel batch normalization over (batch, height, width). Training mode
/// normalizes with biased batch statistics; evaluation mode with the running
/// buffers.
template <class T>
struct BatchNorm {
  std::string name;
  int channels = 0;

  std::string gamma() const { return name + ".gamma"; }
  std::string beta() const { return name + ".beta"; }
  std::string running_mean() const { return name + ".running_mean"; }
  std::string running_var() const { return name + ".running_var"; }

  void init(ParamStore<T>& store) const {
    store.params[gamma()] = Tensor<T>({channels}, T(1));
    store.params[beta()] = Tensor<T>({channels}, T(0));
    store.buffers[running_mean()] = Tensor<T>({channels}, T(0));
    store.buffers[running_var()] = Tensor<T>({channels}, T(1));
  }

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, bool training, BatchNormCache<T>* cache) const {
    if (x.rank() != 4 || x.c() != channels)
      throw Error(Errc::ShapeMismatch, name + " expects " + std::to_string(channels) + " channels");
    const auto& g = store.param(gamma());
    const auto& bt = store.param(beta());
    const std::size_t m = x.size() / channels;
    std::vector<T> mean(channels, T(0)), var(channels, T(0));
    if (training) {
      for (std::size_t i = 0; i < m; ++i)
        for (int ch = 0; ch < channels; ++ch) mean[ch] += x[i * channels + ch];
      for (auto& v : mean) v /= static_cast<T>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (int ch = 0; ch < channels; ++ch) {
          const T d = x[i * channels + ch] - mean[ch];
          var[ch] += d * d;
        }
      for (auto& v : var) v /= static_cast<T>(m);
    } else {
      mean.assign(store.buffer(running_mean()).values().begin(), store.buffer(running_mean()).values().end());
      var.assign(store.buffer(running_var()).values().begin(), store.buffer(running_var()).values().end());
    }
    std::vector<T> inv_std(channels);
    for (int ch = 0; ch < channels; ++ch) inv_std[ch] = T(1) / std::sqrt(var[ch] + static_cast<T>(kBatchNormEps));

    Tensor<T> y(x.shape());
    Tensor<T> xhat;
    if (cache) xhat = Tensor<T>(x.shape());
    for (std::size_t i = 0; i < m; ++i)
      for (int ch = 0; ch < channels; ++ch) {
        const std::size_t k = i * channels + ch;
        const T xh = (x[k] - mean[ch]) * inv_std[ch];
        if (cache) xhat[k] = xh;
        y[k] = g[ch] * xh + bt[ch];
      }
    if (cache) *cache = {std::move(xhat), std::move(inv_std), std::move(mean), std::move(var)};
    return y;
  }

  /// Backward through training-mode normalization.
  Tensor<T> backward(const ParamStore<T>& store, const BatchNormCache<T>& cache, const Tensor<T>& dy,
                     Grads<T>& grads) const {
    const auto& g = store.param(gamma());
    auto& gg = grad_slot(grads, store, gamma());
    auto& gb = grad_slot(grads, store, beta());
    const std::size_t m = dy.size() / channels;
    std::vector<T> sum_dxhat(channels, T(0)), sum_dxhat_xhat(channels, T(0));
    for (std::size_t i = 0; i < m; ++i)
      for (int ch = 0; ch < channels; ++ch) {
        const std::size_t k = i * channels + ch;
        gg[ch] += dy[k] * cache.xhat[k];
        gb[ch] += dy[k];
        const T dxh = dy[k] * g[ch];
        sum_dxhat[ch] += dxh;
        sum_dxhat_xhat[ch] += dxh * cache.xhat[k];
      }
    Tensor<T> dx(dy.shape());
    const T inv_m = T(1) / static_cast<T>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (int ch = 0; ch < channels; ++ch) {
        const std::size_t k = i * channels + ch;
        const T dxh = dy[k] * g[ch];
        dx[k] = cache.inv_std[ch] * (dxh - inv_m * sum_dxhat[ch] - cache.xhat[k] * inv_m * sum_dxhat_xhat[ch]);
      }
    return dx;
  }

  /// running = momentum * running + (1 - momentum) * batch.
  void update_running(ParamStore<T>& store, const BatchNormCache<T>& cache, double momentum) const {
    auto& rm = store.buffer(running_mean());
    auto& rv = store.buffer(running_var());
    const T mom = static_cast<T>(momentum);
    for (int ch = 0; ch < channels; ++ch) {
      rm[ch] = mom * rm[ch] + (T(1) - mom) * cache.mean[ch];
      rv[ch] = mom * rv[ch] + (T(1) - mom) * cache.var[ch];
    }
  }
};

// ---------------------------------------------------------------------------

inline constexpr double kLeakySlope = 0.3;

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : static_cast<T>(kLeakySlope) * x[i];
  return y;
}

template <class T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? dy[i] : static_cast<T>(kLeakySlope) * dy[i];
  return dx;
}

/// 2x2 max pooling, stride 2. `argmax` receives the flat input index of each
/// selected element.
template <class T>
Tensor<T> max_pool2(const Tensor<T>& x, std::vector<std::uint32_t>* argmax) {
  if (x.h() % 2 || x.w() % 2) throw Error(Errc::ShapeMismatch, "max_pool2 needs even spatial size, got " + x.shape_string());
  Tensor<T> y({x.n(), x.h() / 2, x.w() / 2, x.c()});
  if (argmax) argmax->resize(y.size());
  for (int b = 0; b < x.n(); ++b)
    for (int r = 0; r < y.h(); ++r)
      for (int c = 0; c < y.w(); ++c)
        for (int ch = 0; ch < x.c(); ++ch) {
          std::size_t best = x.offset(b, 2 * r, 2 * c, ch);
          for (int dr = 0; dr < 2; ++dr)
            for (int dc = 0; dc < 2; ++dc) {
              const std::size_t k = x.offset(b, 2 * r + dr, 2 * c + dc, ch);
              if (x[k] > x[best]) best = k;
            }
          const std::size_t o = y.offset(b, r, c, ch);
          y[o] = x[best];
          if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best);
        }
  return y;
}

template <class T>
Tensor<T> max_pool2_backward(const std::vector<int>& in_shape, const std::vector<std::uint32_t>& argmax,
                             const Tensor<T>& dy) {
  Tensor<T> dx(in_shape);
  for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
  return dx;
}

/// Nearest-neighbour 2x upsampling of a rank-4 map.
template <class T>
Tensor<T> upsample2(const Tensor<T>& x) {
  Tensor<T> y({x.n(), 2 * x.h(), 2 * x.w(), x.c()});
  for (int b = 0; b < y.n(); ++b)
    for (int r = 0; r < y.h(); ++r)
      for (int c = 0; c < y.w(); ++c) {
        const T* src = x.data() + x.offset(b, r / 2, c / 2, 0);
        std::copy(src, src + x.c(), y.data() + y.offset(b, r, c, 0));
      }
  return y;
}

template <class T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
  Tensor<T> dx({dy.n(), dy.h() / 2, dy.w() / 2, dy.c()});
  for (int b = 0; b < dy.n(); ++b)
    for (int r = 0; r < dy.h(); ++r)
      for (int c = 0; c < dy.w(); ++c)
        for (int ch = 0; ch < dy.c(); ++ch) dx.at(b, r / 2, c / 2, ch) += dy.at(b, r, c, ch);
  return dx;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    throw Error(Errc::ShapeMismatch, "concat " + a.shape_string() + " with " + b.shape_string());
  Tensor<T> y({a.n(), a.h(), a.w(), a.c() + b.c()});
  const std::size_t pixels = a.size() / a.c();
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(a.data() + p * a.c(), a.c(), y.data() + p * y.c());
    std::copy_n(b.data() + p * b.c(), b.c(), y.data() + p * y.c() + a.c());
  }
  return y;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& dy, int first) {
  Tensor<T> da({dy.n(), dy.h(), dy.w(), first});
  Tensor<T> db({dy.n(), dy.h(), dy.w(), dy.c() - first});
  const std::size_t pixels = dy.size() / dy.c();
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(dy.data() + p * dy.c(), da.c(), da.data() + p * da.c());
    std::copy_n(dy.data() + p * dy.c() + first, db.c(), db.data() + p * db.c());
  }
  return {std::move(da), std::move(db)};
}

/// Mean over channels: (n, h, w, c) -> (n, h, w).
template <class T>
Tensor<T> channel_mean(const Tensor<T>& x) {
  Tensor<T> y({x.n(), x.h(), x.w()});
  const std::size_t pixels = y.size();
  for (std::size_t p = 0; p < pixels; ++p) {
    T acc = 0;
    for (int ch = 0; ch < x.c(); ++ch) acc += x[p * x.c() + ch];
    y[p] = acc / static_cast<T>(x.c());
  }
  return y;
}

template <class T>
Tensor<T> channel_mean_backward(const std::vector<int>& in_shape, const Tensor<T>& dy) {
  Tensor<T> dx(in_shape);
  const int channels = in_shape[3];
  for (std::size_t p = 0; p < dy.size(); ++p)
    for (int ch = 0; ch < channels; ++ch) dx[p * channels + ch] = dy[p] / static_cast<T>(channels);
  return dx;
}

/// Mean over height and width: (n, h, w, c) -> (n, c).
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  Tensor<T> y({x.n(), x.c()});
  const std::size_t per = static_cast<std::size_t>(x.h()) * x.w();
  for (int b = 0; b < x.n(); ++b) {
    for (std::size_t p = 0; p < per; ++p)
      for (int ch = 0; ch < x.c(); ++ch) y[static_cast<std::size_t>(b) * x.c() + ch] += x[(b * per + p) * x.c() + ch];
    for (int ch = 0; ch < x.c(); ++ch) y[static_cast<std::size_t>(b) * x.c() + ch] /= static_cast<T>(per);
  }
  return y;
}

template <class T>
Tensor<T> global_avg_pool_backward(const std::vector<int>& in_shape, const Tensor<T>& dy) {
  Tensor<T> dx(in_shape);
  const int c = in_shape[3];
  const std::size_t per = static_cast<std::size_t>(in_shape[1]) * in_shape[2];
  for (int b = 0; b < in_shape[0]; ++b)
    for (std::size_t p = 0; p < per; ++p)
      for (int ch = 0; ch < c; ++ch)
        dx[(b * per + p) * c + ch] = dy[static_cast<std::size_t>(b) * c + ch] / static_cast<T>(per);
  return dx;
}

/// Nearest 2x upsampling of a rank-3 (n, h, w) map and its adjoint.
template <class T>
Tensor<T> upsample2_map(const Tensor<T>& x) {
  Tensor<T> y({x.dim(0), 2 * x.dim(1), 2 * x.dim(2)});
  for (int b = 0; b < y.dim(0); ++b)
    for (int r = 0; r < y.dim(1); ++r)
      for (int c = 0; c < y.dim(2); ++c)
        y[(static_cast<std::size_t>(b) * y.dim(1) + r) * y.dim(2) + c] =
            x[(static_cast<std::size_t>(b) * x.dim(1) + r / 2) * x.dim(2) + c / 2];
  return y;
}

template <class T>
Tensor<T> upsample2_map_backward(const Tensor<T>& dy) {
  Tensor<T> dx({dy.dim(0), dy.dim(1) / 2, dy.dim(2) / 2});
  for (int b = 0; b < dy.dim(0); ++b)
    for (int r = 0; r < dy.dim(1); ++r)
      for (int c = 0; c < dy.dim(2); ++c)
        dx[(static_cast<std::size_t>(b) * dx.dim(1) + r / 2) * dx.dim(2) + c / 2] +=
            dy[(static_cast<std::size_t>(b) * dy.dim(1) + r) * dy.dim(2) + c];
  return dx;
}

}  // namespace rmau::nn
