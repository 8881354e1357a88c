#pragma once

// Straightforward loop implementations used as independent references.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "axial/attention.hpp"
#include "axial/random.hpp"
#include "axial/tensor.hpp"

namespace oracle {

using axial::Rng;
using axial::Shape;
using axial::Tensor;

inline Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

/// Softmax-weighted average over a fiber: out[:, l] = sum_i f[:, i] * w_l(i),
/// w_l = softmax_i(f[:, i] . f[:, l]).
inline std::vector<std::vector<double>> fiber_attention(const std::vector<std::vector<double>>& f) {
  const std::size_t d = f.size(), len = f[0].size();
  std::vector<std::vector<double>> out(d, std::vector<double>(len, 0.0));
  for (std::size_t l = 0; l < len; ++l) {
    std::vector<double> s(len);
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t c = 0; c < d; ++c) s[i] += f[c][i] * f[c][l];
    }
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (auto& v : s) z += (v = std::exp(v - mx));
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t i = 0; i < len; ++i) out[c][l] += f[c][i] * s[i] / z;
    }
  }
  return out;
}

/// Attention along `axis` of a D x S1 x ... tensor via explicit fiber loops.
inline Tensor axis_attention(const Tensor& t, std::size_t axis) {
  const Shape& shape = t.shape();
  const std::size_t d = shape[0], len = shape[axis];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = t.size() / d;
  const std::size_t outer = n / (len * inner);
  Tensor out(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      std::vector<std::vector<double>> f(d, std::vector<double>(len));
      const auto idx = [&](std::size_t c, std::size_t l) { return c * n + (o * len + l) * inner + in; };
      for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t l = 0; l < len; ++l) f[c][l] = t[idx(c, l)];
      }
      const auto g = oracle::fiber_attention(f);
      for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t l = 0; l < len; ++l) out[idx(c, l)] = g[c][l];
      }
    }
  }
  return out;
}

/// Shared-embedding attention over all N spatial positions of h (D x ...).
inline Tensor nonlocal_shared(const Tensor& h) {
  const std::size_t d = h.dim(0), n = h.size() / d;
  std::vector<std::vector<double>> f(d, std::vector<double>(n));
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t i = 0; i < n; ++i) f[c][i] = h[c * n + i];
  }
  const auto g = oracle::fiber_attention(f);
  Tensor out(h.shape());
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t i = 0; i < n; ++i) out[c * n + i] = g[c][i];
  }
  return out;
}

/// Layer norm with statistics over the C channels at each spatial position.
inline Tensor layer_norm_channel(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  const std::size_t c = x.dim(0), n = x.size() / c;
  Tensor out(x.shape());
  for (std::size_t p = 0; p < n; ++p) {
    double mean = 0.0, var = 0.0;
    for (std::size_t k = 0; k < c; ++k) mean += x[k * n + p];
    mean /= static_cast<double>(c);
    for (std::size_t k = 0; k < c; ++k) var += (x[k * n + p] - mean) * (x[k * n + p] - mean);
    var /= static_cast<double>(c);
    for (std::size_t k = 0; k < c; ++k) {
      out[k * n + p] = (x[k * n + p] - mean) / std::sqrt(var + eps) * gain[k] + bias[k];
    }
  }
  return out;
}

/// Layer norm with one mean/variance over the whole C x ... map.
inline Tensor layer_norm_sample(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  const std::size_t c = x.dim(0), n = x.size() / c;
  double mean = 0.0, var = 0.0;
  for (double v : x.data()) mean += v;
  mean /= static_cast<double>(x.size());
  for (double v : x.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / std::sqrt(var + eps) * gain[i / n] + bias[i / n];
  return out;
}

/// h = W (norm x) + P with P[d, z, w, h] = r_z[d, z] + r_h[d, h] + r_w[d, w].
inline Tensor shared_embedding(const Tensor& x, const axial::AxialLayerParams& p) {
  const Tensor xn = p.norm_axes == axial::NormAxes::kChannel ? layer_norm_channel(x, p.norm_gain, p.norm_bias)
                                                             : layer_norm_sample(x, p.norm_gain, p.norm_bias);
  const std::size_t c = x.dim(0), z = x.dim(1), w = x.dim(2), hh = x.dim(3), d = p.embed.w_q.dim(0);
  const std::size_t n = z * w * hh;
  Tensor out({d, z, w, hh});
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t iz = 0; iz < z; ++iz) {
      for (std::size_t iw = 0; iw < w; ++iw) {
        for (std::size_t ih = 0; ih < hh; ++ih) {
          const std::size_t pos = (iz * w + iw) * hh + ih;
          double v = p.pos.r_z[k * z + iz] + p.pos.r_h[k * hh + ih] + p.pos.r_w[k * w + iw];
          for (std::size_t j = 0; j < c; ++j) v += p.embed.w_q[k * c + j] * xn[j * n + pos];
          out[k * n + pos] = v;
        }
      }
    }
  }
  return out;
}

/// Full layer: attention along H, then W, then Z, plus identity when C == D.
inline Tensor axial_layer(const Tensor& x, const axial::AxialLayerParams& p) {
  Tensor t = oracle::shared_embedding(x, p);
  t = oracle::axis_attention(t, 3);
  t = oracle::axis_attention(t, 2);
  t = oracle::axis_attention(t, 1);
  if (x.dim(0) == t.dim(0)) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += x[i];
  }
  return t;
}

inline axial::AxialLayerParams random_layer(std::size_t c, std::size_t d, std::size_t z, std::size_t w,
                                            std::size_t h, Rng& rng, double pos_scale = 1.0) {
  axial::AxialLayerParams p;
  p.embed.w_q = random_tensor({d, c}, rng);
  p.pos.r_z = random_tensor({d, z}, rng, pos_scale);
  p.pos.r_h = random_tensor({d, h}, rng, pos_scale);
  p.pos.r_w = random_tensor({d, w}, rng, pos_scale);
  p.norm_gain = random_tensor({c}, rng, 0.5);
  for (auto& g : p.norm_gain.data()) g += 1.0;
  p.norm_bias = random_tensor({c}, rng, 0.2);
  return p;
}

/// Pairwise AUC with ties counted one half.
inline double auc_pairs(const std::vector<double>& s, const std::vector<double>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] == 1.0 && y[j] == 0.0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
    }
  }
  return wins / pairs;
}

}  // namespace oracle
