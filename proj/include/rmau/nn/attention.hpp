#pragma once

// Tri-axis multi-head attention gate.
//
// A feature map X of shape (H, W, C) is reduced along each axis with max and
// average pooling, giving six 2-D maps:
//   reduce C -> (H tokens x W features)   gate g_c(h, w)
//   reduce H -> (W tokens x C features)   gate g_h(w, c)
//   reduce W -> (H tokens x C features)   gate g_w(h, c)
// Each map goes through its own multi-head self-attention (rows are tokens).
// Per axis the max- and avg-attended maps are averaged and squashed with a
// sigmoid, and the output is X(h,w,c) * g_c(h,w) * g_h(w,c) * g_w(h,c).

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rmau/nn/layers.hpp"

namespace rmau::nn {

template <class T>
struct AttentionCache {
  Tensor<T> x;  // (n, L, D)
  Tensor<T> q, k, v, o;  // (n, L, heads*key_dim)
  Tensor<T> probs;  // (n, heads, L, L)
};

/// Standard multi-head self-attention over a batch of token matrices
/// (n, L, D) -> (n, L, D): softmax(Q K^T / sqrt(d)) V per head, heads
/// concatenated and projected back to D features.
template <class T>
struct MultiHeadAttention {
  std::string name;
  int features = 0;
  int heads = 4;
  int key_dim = 16;

  int inner() const { return heads * key_dim; }

  /// `out_scale` shrinks the output projection's init range.
  void init(ParamStore<T>& store, Xoshiro256& rng, double out_bias = 0.0, double out_scale = 1.0) const {
    const double lim_in = std::sqrt(6.0 / (features + inner()));
    for (const char* p : {".wq", ".wk", ".wv"}) {
      Tensor<T> w({features, inner()});
      fill_uniform(w, rng, lim_in);
      store.params[name + p] = std::move(w);
    }
    for (const char* p : {".bq", ".bk", ".bv"}) store.params[name + p] = Tensor<T>({inner()});
    Tensor<T> wo({inner(), features});
    fill_uniform(wo, rng, lim_in * out_scale);
    store.params[name + ".wo"] = std::move(wo);
    store.params[name + ".bo"] = Tensor<T>({features}, static_cast<T>(out_bias));
  }

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, AttentionCache<T>* cache) const {
    if (x.rank() != 3 || x.dim(2) != features)
      throw Error(Errc::ShapeMismatch, name + " expects " + std::to_string(features) + " features, got " + x.shape_string());
    const int n = x.dim(0);
    const int len = x.dim(1);
    const int hk = inner();
    const T scale = T(1) / std::sqrt(static_cast<T>(key_dim));
    auto bias_row = [&](const char* p) {
      return Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(store.param(name + p).data(),
                                                                    store.param(name + p).size());
    };
    ConstMatMap<T> wq(store.param(name + ".wq").data(), features, hk);
    ConstMatMap<T> wk(store.param(name + ".wk").data(), features, hk);
    ConstMatMap<T> wv(store.param(name + ".wv").data(), features, hk);
    ConstMatMap<T> wo(store.param(name + ".wo").data(), hk, features);

    Tensor<T> q({n, len, hk}), k({n, len, hk}), v({n, len, hk}), o({n, len, hk});
    Tensor<T> probs({n, heads, len, len});
    Tensor<T> y({n, len, features});
    const std::size_t tok = static_cast<std::size_t>(len);
    for (int b = 0; b < n; ++b) {
      ConstMatMap<T> xm(x.data() + b * tok * features, len, features);
      MatMap<T> qm(q.data() + b * tok * hk, len, hk);
      MatMap<T> km(k.data() + b * tok * hk, len, hk);
      MatMap<T> vm(v.data() + b * tok * hk, len, hk);
      MatMap<T> om(o.data() + b * tok * hk, len, hk);
      qm.noalias() = xm * wq;
      qm.rowwise() += bias_row(".bq");
      km.noalias() = xm * wk;
      km.rowwise() += bias_row(".bk");
      vm.noalias() = xm * wv;
      vm.rowwise() += bias_row(".bv");
      for (int h = 0; h < heads; ++h) {
        MatMap<T> pm(probs.data() + (static_cast<std::size_t>(b) * heads + h) * tok * tok, len, len);
        pm.noalias() = qm.middleCols(h * key_dim, key_dim) * km.middleCols(h * key_dim, key_dim).transpose();
        pm *= scale;
        for (int i = 0; i < len; ++i) {
          const T mx = pm.row(i).maxCoeff();
          pm.row(i) = (pm.row(i).array() - mx).exp();
          pm.row(i) /= pm.row(i).sum();
        }
        om.middleCols(h * key_dim, key_dim).noalias() = pm * vm.middleCols(h * key_dim, key_dim);
      }
      MatMap<T> ym(y.data() + b * tok * features, len, features);
      ym.noalias() = om * wo;
      ym.rowwise() += bias_row(".bo");
    }
    if (cache) *cache = {x, std::move(q), std::move(k), std::move(v), std::move(o), std::move(probs)};
    return y;
  }

  Tensor<T> backward(const ParamStore<T>& store, const AttentionCache<T>& cache, const Tensor<T>& dy,
                     Grads<T>& grads) const {
    const int n = cache.x.dim(0);
    const int len = cache.x.dim(1);
    const int hk = inner();
    const T scale = T(1) / std::sqrt(static_cast<T>(key_dim));
    const std::size_t tok = static_cast<std::size_t>(len);
    ConstMatMap<T> wq(store.param(name + ".wq").data(), features, hk);
    ConstMatMap<T> wk(store.param(name + ".wk").data(), features, hk);
    ConstMatMap<T> wv(store.param(name + ".wv").data(), features, hk);
    ConstMatMap<T> wo(store.param(name + ".wo").data(), hk, features);
    auto gmat = [&](const char* p, int r, int c) {
      return MatMap<T>(grad_slot(grads, store, name + p).data(), r, c);
    };
    auto gvec = [&](const char* p) {
      auto& g = grad_slot(grads, store, name + p);
      return Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g.data(), g.size());
    };
    auto gwq = gmat(".wq", features, hk);
    auto gwk = gmat(".wk", features, hk);
    auto gwv = gmat(".wv", features, hk);
    auto gwo = gmat(".wo", hk, features);
    auto gbq = gvec(".bq");
    auto gbk = gvec(".bk");
    auto gbv = gvec(".bv");
    auto gbo = gvec(".bo");

    Tensor<T> dx(cache.x.shape());
    RowMat<T> d_o(len, hk), dq(len, hk), dk(len, hk), dv(len, hk), da(len, len), ds(len, len);
    for (int b = 0; b < n; ++b) {
      ConstMatMap<T> xm(cache.x.data() + b * tok * features, len, features);
      ConstMatMap<T> qm(cache.q.data() + b * tok * hk, len, hk);
      ConstMatMap<T> km(cache.k.data() + b * tok * hk, len, hk);
      ConstMatMap<T> vm(cache.v.data() + b * tok * hk, len, hk);
      ConstMatMap<T> om(cache.o.data() + b * tok * hk, len, hk);
      ConstMatMap<T> dym(dy.data() + b * tok * features, len, features);
      gwo.noalias() += om.transpose() * dym;
      gbo += dym.colwise().sum();
      d_o.noalias() = dym * wo.transpose();
      for (int h = 0; h < heads; ++h) {
        ConstMatMap<T> pm(cache.probs.data() + (static_cast<std::size_t>(b) * heads + h) * tok * tok, len, len);
        const auto doh = d_o.middleCols(h * key_dim, key_dim);
        da.noalias() = doh * vm.middleCols(h * key_dim, key_dim).transpose();
        dv.middleCols(h * key_dim, key_dim).noalias() = pm.transpose() * doh;
        for (int i = 0; i < len; ++i) {
          const T dot = (da.row(i).array() * pm.row(i).array()).sum();
          ds.row(i) = pm.row(i).array() * (da.row(i).array() - dot);
        }
        ds *= scale;
        dq.middleCols(h * key_dim, key_dim).noalias() = ds * km.middleCols(h * key_dim, key_dim);
        dk.middleCols(h * key_dim, key_dim).noalias() = ds.transpose() * qm.middleCols(h * key_dim, key_dim);
      }
      gwq.noalias() += xm.transpose() * dq;
      gwk.noalias() += xm.transpose() * dk;
      gwv.noalias() += xm.transpose() * dv;
      gbq += dq.colwise().sum();
      gbk += dk.colwise().sum();
      gbv += dv.colwise().sum();
      MatMap<T> dxm(dx.data() + b * tok * features, len, features);
      dxm.noalias() = dq * wq.transpose();
      dxm.noalias() += dk * wk.transpose();
      dxm.noalias() += dv * wv.transpose();
    }
    return dx;
  }
};

enum class PoolAxis { channel, height, width };

template <class T>
struct TriAxisCache {
  Tensor<T> x;
  // pooled maps in order: c_max, c_avg, h_max, h_avg, w_max, w_avg
  std::vector<std::uint32_t> argmax_c, argmax_h, argmax_w;
  std::array<AttentionCache<T>, 6> attention;
  Tensor<T> gate_c, gate_h, gate_w;  // (n,H,W), (n,W,C), (n,H,C)
};

/// Gate bias at initialization: sigmoid(3) ~ 0.95, so a fresh block starts
/// close to pass-through.
inline constexpr double kGateBiasInit = 3.0;
// Output projections start at a tenth of the Glorot range so fresh gates are
// nearly uniform across positions.
inline constexpr double kGateProjScale = 0.1;

template <class T>
struct TriAxisAttention {
  std::string name;
  int height = 0;
  int width = 0;
  int channels = 0;
  int heads = 4;
  int key_dim = 16;

  static constexpr std::array<const char*, 6> kMapNames = {"c_max", "c_avg", "h_max", "h_avg", "w_max", "w_avg"};

  MultiHeadAttention<T> attention(int i) const {
    const int features = i < 2 ? width : channels;
    return {name + "." + kMapNames[static_cast<std::size_t>(i)], features, heads, key_dim};
  }

  void init(ParamStore<T>& store, Xoshiro256& rng) const {
    for (int i = 0; i < 6; ++i) attention(i).init(store, rng, kGateBiasInit, kGateProjScale);
  }

  /// Forces every gate to 1 (up to float rounding): zero output projections
  /// and a saturating output bias.
  void make_identity(ParamStore<T>& store) const {
    for (int i = 0; i < 6; ++i) {
      const auto a = attention(i);
      store.param(a.name + ".wo").fill(T(0));
      store.param(a.name + ".bo").fill(T(60));
    }
  }

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, TriAxisCache<T>* cache) const {
    if (x.rank() != 4 || x.h() != height || x.w() != width || x.c() != channels)
      throw Error(Errc::ShapeMismatch, name + " expects [n x " + std::to_string(height) + "x" + std::to_string(width) +
                                           "x" + std::to_string(channels) + "], got " + x.shape_string());
    const int n = x.n();
    Tensor<T> c_max({n, height, width}), c_avg({n, height, width});
    Tensor<T> h_max({n, width, channels}), h_avg({n, width, channels});
    Tensor<T> w_max({n, height, channels}), w_avg({n, height, channels});
    std::vector<std::uint32_t> am_c(c_max.size()), am_h(h_max.size()), am_w(w_max.size());
    auto update = [&](Tensor<T>& mx, Tensor<T>& avg, std::vector<std::uint32_t>& am, std::size_t slot, std::size_t src,
                      bool first) {
      if (first || x[src] > mx[slot]) {
        mx[slot] = x[src];
        am[slot] = static_cast<std::uint32_t>(src);
      }
      avg[slot] += x[src];
    };
    for (int b = 0; b < n; ++b)
      for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c)
          for (int ch = 0; ch < channels; ++ch) {
            const std::size_t src = x.offset(b, r, c, ch);
            update(c_max, c_avg, am_c, (static_cast<std::size_t>(b) * height + r) * width + c, src, ch == 0);
            update(h_max, h_avg, am_h, (static_cast<std::size_t>(b) * width + c) * channels + ch, src, r == 0);
            update(w_max, w_avg, am_w, (static_cast<std::size_t>(b) * height + r) * channels + ch, src, c == 0);
          }
    for (auto& v : c_avg.values()) v /= static_cast<T>(channels);
    for (auto& v : h_avg.values()) v /= static_cast<T>(height);
    for (auto& v : w_avg.values()) v /= static_cast<T>(width);

    std::array<const Tensor<T>*, 6> pooled = {&c_max, &c_avg, &h_max, &h_avg, &w_max, &w_avg};
    std::array<Tensor<T>, 6> attended;
    TriAxisCache<T> local;
    for (int i = 0; i < 6; ++i)
      attended[static_cast<std::size_t>(i)] =
          attention(i).forward(store, *pooled[static_cast<std::size_t>(i)], cache ? &local.attention[static_cast<std::size_t>(i)] : nullptr);

    auto gate = [](const Tensor<T>& a, const Tensor<T>& b) {
      Tensor<T> g(a.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = sigmoid((a[i] + b[i]) / T(2));
      return g;
    };
    Tensor<T> gc = gate(attended[0], attended[1]);
    Tensor<T> gh = gate(attended[2], attended[3]);
    Tensor<T> gw = gate(attended[4], attended[5]);

    Tensor<T> y(x.shape());
    for (int b = 0; b < n; ++b)
      for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c)
          for (int ch = 0; ch < channels; ++ch) {
            const std::size_t k = x.offset(b, r, c, ch);
            y[k] = x[k] * gc[(static_cast<std::size_t>(b) * height + r) * width + c] *
                   gh[(static_cast<std::size_t>(b) * width + c) * channels + ch] *
                   gw[(static_cast<std::size_t>(b) * height + r) * channels + ch];
          }
    if (cache) {
      local.x = x;
      local.argmax_c = std::move(am_c);
      local.argmax_h = std::move(am_h);
      local.argmax_w = std::move(am_w);
      local.gate_c = std::move(gc);
      local.gate_h = std::move(gh);
      local.gate_w = std::move(gw);
      *cache = std::move(local);
    }
    return y;
  }

  Tensor<T> backward(const ParamStore<T>& store, const TriAxisCache<T>& cache, const Tensor<T>& dy,
                     Grads<T>& grads) const {
    const Tensor<T>& x = cache.x;
    const auto& gc = cache.gate_c;
    const auto& gh = cache.gate_h;
    const auto& gw = cache.gate_w;
    const int n = x.n();
    Tensor<T> dx(x.shape());
    Tensor<T> dgc(gc.shape()), dgh(gh.shape()), dgw(gw.shape());
    for (int b = 0; b < n; ++b)
      for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c)
          for (int ch = 0; ch < channels; ++ch) {
            const std::size_t k = x.offset(b, r, c, ch);
            const std::size_t ic = (static_cast<std::size_t>(b) * height + r) * width + c;
            const std::size_t ih = (static_cast<std::size_t>(b) * width + c) * channels + ch;
            const std::size_t iw = (static_cast<std::size_t>(b) * height + r) * channels + ch;
            const T d = dy[k];
            dx[k] = d * gc[ic] * gh[ih] * gw[iw];
            const T dxv = d * x[k];
            dgc[ic] += dxv * gh[ih] * gw[iw];
            dgh[ih] += dxv * gc[ic] * gw[iw];
            dgw[iw] += dxv * gc[ic] * gh[ih];
          }
    // through sigmoid and the max/avg average
    auto pre = [](const Tensor<T>& g, const Tensor<T>& dg) {
      Tensor<T> d(g.shape());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = dg[i] * g[i] * (T(1) - g[i]) / T(2);
      return d;
    };
    const std::array<Tensor<T>, 3> dpre = {pre(gc, dgc), pre(gh, dgh), pre(gw, dgw)};
    for (int i = 0; i < 6; ++i) {
      const auto& dmap = dpre[static_cast<std::size_t>(i / 2)];
      const Tensor<T> dpooled = attention(i).backward(store, cache.attention[static_cast<std::size_t>(i)], dmap, grads);
      const bool is_max = i % 2 == 0;
      const int axis = i / 2;
      if (is_max) {
        const auto& am = axis == 0 ? cache.argmax_c : axis == 1 ? cache.argmax_h : cache.argmax_w;
        for (std::size_t j = 0; j < dpooled.size(); ++j) dx[am[j]] += dpooled[j];
        continue;
      }
      for (int b = 0; b < n; ++b)
        for (int r = 0; r < height; ++r)
          for (int c = 0; c < width; ++c)
            for (int ch = 0; ch < channels; ++ch) {
              const std::size_t k = x.offset(b, r, c, ch);
              if (axis == 0)
                dx[k] += dpooled[(static_cast<std::size_t>(b) * height + r) * width + c] / static_cast<T>(channels);
              else if (axis == 1)
                dx[k] += dpooled[(static_cast<std::size_t>(b) * width + c) * channels + ch] / static_cast<T>(height);
              else
                dx[k] += dpooled[(static_cast<std::size_t>(b) * height + r) * channels + ch] / static_cast<T>(width);
            }
    }
    return dx;
  }
};

}  // namespace rmau::nn
