#include "axial/attention.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>

#include "fiber_kernel.hpp"

namespace axial {

namespace {

std::atomic<double> kernel_perturbation{0.0};

// Fibers along `axis` of a (D, S_1, ..., S_k) tensor.
struct FiberLayout {
  std::size_t d = 0;
  std::size_t n = 0;      // spatial positions
  std::size_t len = 0;    // fiber length
  std::size_t inner = 0;  // stride between fiber positions
  std::size_t outer = 0;

  FiberLayout(const Shape& shape, std::size_t axis) {
    if (shape.size() < 2) throw ShapeError("attention expects a D x ... tensor of rank >= 2");
    if (axis == 0 || axis >= shape.size()) {
      throw ShapeError("attention axis " + std::to_string(axis) + " invalid for " + shape_to_string(shape));
    }
    d = shape[0];
    n = shape_size(shape) / d;
    len = shape[axis];
    inner = 1;
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    outer = n / (len * inner);
  }

  std::size_t fibers() const { return outer * inner; }
  std::size_t base(std::size_t fiber) const { return (fiber / inner) * len * inner + fiber % inner; }
};

// Fibers are visited in groups of up to kGroup neighbours along the innermost
// stride, so gathers and scatters touch contiguous runs of memory.
constexpr std::size_t kGroup = 8;

struct FiberGroup {
  std::size_t first = 0;  // fiber index
  std::size_t count = 0;
  std::size_t base = 0;
};

template <typename F>
void for_each_group(const FiberLayout& fl, F&& f) {
  for (std::size_t o = 0; o < fl.outer; ++o) {
    for (std::size_t i0 = 0; i0 < fl.inner; i0 += kGroup) {
      const std::size_t first = o * fl.inner + i0;
      f(FiberGroup{first, std::min(kGroup, fl.inner - i0), fl.base(first)});
    }
  }
}

// Pointers to each kernel's D x L buffer for one group.
using GroupBuffers = std::array<double*, kGroup>;

void gather(const double* src, const FiberLayout& fl, const FiberGroup& g, const GroupBuffers& dst) {
  if (g.count == 1) {
    for (std::size_t c = 0; c < fl.d; ++c) {
      const double* s = src + c * fl.n + g.base;
      double* o = dst[0] + c * fl.len;
      if (fl.inner == 1) {
        std::copy_n(s, fl.len, o);
      } else {
        for (std::size_t l = 0; l < fl.len; ++l) o[l] = s[l * fl.inner];
      }
    }
    return;
  }
  for (std::size_t c = 0; c < fl.d; ++c) {
    for (std::size_t l = 0; l < fl.len; ++l) {
      const double* s = src + c * fl.n + g.base + l * fl.inner;
      const std::size_t at = c * fl.len + l;
      for (std::size_t i = 0; i < g.count; ++i) dst[i][at] = s[i];
    }
  }
}

void scatter(const GroupBuffers& src, const FiberLayout& fl, const FiberGroup& g, double* dst) {
  if (g.count == 1) {
    for (std::size_t c = 0; c < fl.d; ++c) {
      const double* s = src[0] + c * fl.len;
      double* o = dst + c * fl.n + g.base;
      if (fl.inner == 1) {
        std::copy_n(s, fl.len, o);
      } else {
        for (std::size_t l = 0; l < fl.len; ++l) o[l * fl.inner] = s[l];
      }
    }
    return;
  }
  for (std::size_t c = 0; c < fl.d; ++c) {
    for (std::size_t l = 0; l < fl.len; ++l) {
      double* o = dst + c * fl.n + g.base + l * fl.inner;
      const std::size_t at = c * fl.len + l;
      for (std::size_t i = 0; i < g.count; ++i) o[i] = src[i][at];
    }
  }
}

template <typename Kernel, typename Member>
GroupBuffers buffers(std::vector<Kernel>& k, Member member) {
  GroupBuffers b{};
  for (std::size_t i = 0; i < k.size(); ++i) b[i] = (k[i].*member).data();
  return b;
}

template <typename Kernel>
std::vector<Kernel> make_kernels(const FiberLayout& fl) {
  return std::vector<Kernel>(std::min(kGroup, fl.inner), Kernel(fl.len, fl.d));
}

// Runs the fused kernel over every fiber. With a cache, the input and the
// transposed weights of each fiber are kept.
Tensor attend(const Tensor& t, std::size_t axis, AxisAttentionCache* cache) {
  const FiberLayout fl(t.shape(), axis);
  Tensor out = Tensor::uninitialized(t.shape());
  const std::size_t ll = fl.len * fl.len;
  if (cache != nullptr) {
    cache->axis = axis;
    cache->shape = t.shape();
    cache->inputs.assign(t.data().begin(), t.data().end());
    cache->weights.resize(fl.fibers() * ll);
  }
  const double delta = kernel_perturbation.load(std::memory_order_relaxed);

  detail::dispatch_kernel(fl.len, fl.d, [&]<typename Kernel>() {
    auto k = make_kernels<Kernel>(fl);
    const GroupBuffers xs = buffers(k, &Kernel::xt), ys = buffers(k, &Kernel::yt);
    for_each_group(fl, [&](const FiberGroup& g) {
      gather(t.data().data(), fl, g, xs);
      for (std::size_t i = 0; i < g.count; ++i) {
        const std::size_t f = g.first + i;
        if (cache != nullptr) {
          k[i].forward(cache->weights.data() + f * ll);
        } else {
          k[i].forward();
        }
        if (delta != 0.0) k[i].yt(0, 0) += delta;
      }
      scatter(ys, fl, g, out.data().data());
    });
  });
  MacCounter::add(static_cast<std::uint64_t>(fl.fibers()) * 2 * ll * fl.d);
  return out;
}

void check_vector(const Tensor& v, std::size_t len, const char* what) {
  if (v.size() != len) {
    throw ShapeError(std::string(what) + " has " + std::to_string(v.size()) + " elements, expected " +
                     std::to_string(len));
  }
}

void check_spatial(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("expected a C x Z x W x H tensor, got " + shape_to_string(x.shape()));
}

}  // namespace

void AxialLayerParams::validate(const Shape& input_shape) const {
  if (input_shape.size() != 4) throw ShapeError("axial layer input must be C x Z x W x H");
  const std::size_t dd = d();
  if (embed.w_q.rank() != 2 || c_in() != input_shape[0]) {
    throw ShapeError("embedding " + shape_to_string(embed.w_q.shape()) + " does not match input " +
                     shape_to_string(input_shape));
  }
  const auto expect = [dd](const Tensor& r, std::size_t len, const char* name) {
    if (r.shape() != Shape{dd, len}) {
      throw ShapeError(std::string(name) + " has shape " + shape_to_string(r.shape()) + ", expected " +
                       shape_to_string({dd, len}));
    }
  };
  expect(pos.r_z, input_shape[1], "r_z");
  expect(pos.r_w, input_shape[2], "r_w");
  expect(pos.r_h, input_shape[3], "r_h");
  check_vector(norm_gain, input_shape[0], "norm gain");
  check_vector(norm_bias, input_shape[0], "norm bias");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, NormAxes axes) {
  LayerNormCache cache;
  return layer_norm_forward(x, gain, bias, axes, cache);
}

Tensor layer_norm_forward(const Tensor& x, const Tensor& gain, const Tensor& bias, NormAxes axes,
                          LayerNormCache& cache) {
  check_spatial(x);
  const std::size_t c = x.dim(0);
  const std::size_t n = x.size() / c;
  check_vector(gain, c, "norm gain");
  check_vector(bias, c, "norm bias");
  if (!x.all_finite()) throw NumericError("layer_norm: non-finite input");

  cache.x_hat = Tensor::uninitialized(x.shape());
  Tensor out = Tensor::uninitialized(x.shape());
  auto xs = x.data();
  auto xh = cache.x_hat.data();
  if (axes == NormAxes::kSample) {
    double mean = 0.0;
    for (double v : xs) mean += v;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double v : xs) var += (v - mean) * (v - mean);
    var /= static_cast<double>(xs.size());
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std.assign(1, inv);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < n; ++p) {
        const std::size_t i = ch * n + p;
        xh[i] = (xs[i] - mean) * inv;
        out[i] = gain[ch] * xh[i] + bias[ch];
      }
    }
  } else {
    cache.inv_std.assign(n, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
      double mean = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) mean += xs[ch * n + p];
      mean /= static_cast<double>(c);
      double var = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) var += (xs[ch * n + p] - mean) * (xs[ch * n + p] - mean);
      var /= static_cast<double>(c);
      const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
      cache.inv_std[p] = inv;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t i = ch * n + p;
        xh[i] = (xs[i] - mean) * inv;
        out[i] = gain[ch] * xh[i] + bias[ch];
      }
    }
  }
  return out;
}

Tensor layer_norm_backward(const Tensor& grad_out, const Tensor& gain, NormAxes axes, const LayerNormCache& cache,
                           Tensor& grad_gain, Tensor& grad_bias) {
  const Tensor& xh = cache.x_hat;
  const std::size_t c = xh.dim(0);
  const std::size_t n = xh.size() / c;
  Tensor dx = Tensor::uninitialized(xh.shape());
  std::vector<double> dxh(xh.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double gg = 0.0, gb = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const std::size_t i = ch * n + p;
      gg += grad_out[i] * xh[i];
      gb += grad_out[i];
      dxh[i] = grad_out[i] * gain[ch];
    }
    grad_gain[ch] += gg;
    grad_bias[ch] += gb;
  }
  if (axes == NormAxes::kSample) {
    const double m = static_cast<double>(xh.size());
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < xh.size(); ++i) {
      s1 += dxh[i];
      s2 += dxh[i] * xh[i];
    }
    s1 /= m;
    s2 /= m;
    const double inv = cache.inv_std[0];
    for (std::size_t i = 0; i < xh.size(); ++i) dx[i] = inv * (dxh[i] - s1 - xh[i] * s2);
  } else {
    const double m = static_cast<double>(c);
    for (std::size_t p = 0; p < n; ++p) {
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        s1 += dxh[ch * n + p];
        s2 += dxh[ch * n + p] * xh[ch * n + p];
      }
      s1 /= m;
      s2 /= m;
      const double inv = cache.inv_std[p];
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t i = ch * n + p;
        dx[i] = inv * (dxh[i] - s1 - xh[i] * s2);
      }
    }
  }
  return dx;
}

Tensor embed(const Tensor& x, const Tensor& w) {
  check_spatial(x);
  if (w.rank() != 2 || w.dim(1) != x.dim(0)) {
    throw ShapeError("embedding " + shape_to_string(w.shape()) + " cannot map input " + shape_to_string(x.shape()));
  }
  const std::size_t c = x.dim(0);
  const Tensor flat = matmul(w, x.reshaped({c, x.size() / c}));
  return flat.reshaped({w.dim(0), x.dim(1), x.dim(2), x.dim(3)});
}

Tensor build_positional_encoding(const PositionalVectors& pos) {
  const std::size_t dd = pos.r_z.dim(0);
  if (pos.r_h.dim(0) != dd || pos.r_w.dim(0) != dd) throw ShapeError("positional vectors disagree on D");
  const std::size_t nz = pos.r_z.dim(1), nw = pos.r_w.dim(1), nh = pos.r_h.dim(1);
  Tensor p = Tensor::uninitialized({dd, nz, nw, nh});
  auto out = p.data();
  std::size_t i = 0;
  for (std::size_t d = 0; d < dd; ++d) {
    for (std::size_t z = 0; z < nz; ++z) {
      for (std::size_t w = 0; w < nw; ++w) {
        const double zw = pos.r_z[d * nz + z] + pos.r_w[d * nw + w];
        for (std::size_t h = 0; h < nh; ++h) out[i++] = zw + pos.r_h[d * nh + h];
      }
    }
  }
  return p;
}

Tensor shared_embedding(const Tensor& x, const AxialLayerParams& params) {
  params.validate(x.shape());
  const Tensor normed = layer_norm(x, params.norm_gain, params.norm_bias, params.norm_axes);
  return embed(normed, params.embed.w_q) + build_positional_encoding(params.pos);
}

Tensor axis_attention(const Tensor& t) { return axis_attention_along(t, t.rank() - 1); }

Tensor axis_attention_along(const Tensor& t, std::size_t axis) {
  if (!t.all_finite()) throw NumericError("axis attention: non-finite input");
  return attend(t, axis, nullptr);
}

Tensor axial_attention_3d(const Tensor& x, const AxialLayerParams& params) {
  Tensor h = shared_embedding(x, params);
  h = attend(h, 3, nullptr);
  h = attend(h, 2, nullptr);
  h = attend(h, 1, nullptr);
  if (params.d() == params.c_in()) h = h + x;
  return h;
}

NonLocalResult nonlocal_attend(const Tensor& h) {
  check_spatial(h);
  const std::size_t dd = h.dim(0);
  const Tensor flat = h.reshaped({dd, h.size() / dd});
  NonLocalResult r;
  r.scores = matmul(transpose(flat), flat);
  r.weights = softmax(r.scores, 1);
  r.output = matmul(flat, transpose(r.weights)).reshaped(h.shape());
  return r;
}

NonLocalResult nonlocal_full_traced(const Tensor& x, const EmbeddingWeights& w, bool shared) {
  check_spatial(x);
  if (shared) return nonlocal_attend(embed(x, w.w_q));
  if (!w.w_k || !w.w_v) throw ParameterError("non-shared non-local attention needs w_k and w_v");
  const std::size_t c = x.dim(0);
  const std::size_t n = x.size() / c;
  const Tensor flat = x.reshaped({c, n});
  const auto project = [&](const Tensor& m) {
    if (m.rank() != 2 || m.dim(1) != c) throw ShapeError("embedding does not match input channels");
    return matmul(m, flat);
  };
  const Tensor q = project(w.w_q), k = project(*w.w_k), v = project(*w.w_v);
  if (q.dim(0) != k.dim(0)) throw ShapeError("query and key embeddings differ in size");
  NonLocalResult r;
  r.scores = matmul(transpose(q), k);
  r.weights = softmax(r.scores, 1);
  r.output = matmul(v, transpose(r.weights)).reshaped({v.dim(0), x.dim(1), x.dim(2), x.dim(3)});
  return r;
}

Tensor nonlocal_full(const Tensor& x, const EmbeddingWeights& w, bool shared) {
  return nonlocal_full_traced(x, w, shared).output;
}

Tensor axis_attention_forward(const Tensor& t, std::size_t axis, AxisAttentionCache& cache) {
  return attend(t, axis, &cache);
}

Tensor axis_attention_backward(const Tensor& grad_out, const AxisAttentionCache& cache) {
  if (grad_out.shape() != cache.shape) {
    throw ShapeError("attention gradient " + shape_to_string(grad_out.shape()) + " does not match " +
                     shape_to_string(cache.shape));
  }
  const FiberLayout fl(cache.shape, cache.axis);
  const std::size_t ll = fl.len * fl.len;
  Tensor dx = Tensor::uninitialized(cache.shape);
  detail::dispatch_kernel(fl.len, fl.d, [&]<typename Kernel>() {
    auto k = make_kernels<Kernel>(fl);
    const GroupBuffers xs = buffers(k, &Kernel::xt), dys = buffers(k, &Kernel::dyt), dxs = buffers(k, &Kernel::dxt);
    for_each_group(fl, [&](const FiberGroup& g) {
      gather(grad_out.data().data(), fl, g, dys);
      gather(cache.inputs.data(), fl, g, xs);
      for (std::size_t i = 0; i < g.count; ++i) {
        const std::size_t f = g.first + i;
        k[i].backward(k[i].xt.data(), cache.weights.data() + f * ll);
      }
      scatter(dxs, fl, g, dx.data().data());
    });
  });
  return dx;
}

AxialLayerGrads AxialLayerGrads::zeros_like(const AxialLayerParams& params) {
  return {Tensor(params.embed.w_q.shape()), Tensor(params.pos.r_z.shape()), Tensor(params.pos.r_h.shape()),
          Tensor(params.pos.r_w.shape()),   Tensor(params.norm_gain.shape()), Tensor(params.norm_bias.shape())};
}

Tensor axial_attention_3d_forward(const Tensor& x, const AxialLayerParams& params, AxialLayerCache& cache) {
  params.validate(x.shape());
  cache.normed = layer_norm_forward(x, params.norm_gain, params.norm_bias, params.norm_axes, cache.norm);
  Tensor h = embed(cache.normed, params.embed.w_q) + build_positional_encoding(params.pos);
  // Height (axis 3), then width (axis 2), then depth (axis 1).
  h = axis_attention_forward(h, 3, cache.stages[0]);
  h = axis_attention_forward(h, 2, cache.stages[1]);
  h = axis_attention_forward(h, 1, cache.stages[2]);
  cache.residual = params.d() == params.c_in();
  if (cache.residual) h = h + x;
  return h;
}

Tensor axial_attention_3d_backward(const Tensor& grad_out, const AxialLayerParams& params,
                                   const AxialLayerCache& cache, AxialLayerGrads& grads) {
  Tensor g = axis_attention_backward(grad_out, cache.stages[2]);
  g = axis_attention_backward(g, cache.stages[1]);
  g = axis_attention_backward(g, cache.stages[0]);

  // g is now dL/dh with h = W y + P.
  const std::size_t dd = g.dim(0), nz = g.dim(1), nw = g.dim(2), nh = g.dim(3);
  std::size_t i = 0;
  for (std::size_t d = 0; d < dd; ++d) {
    for (std::size_t z = 0; z < nz; ++z) {
      for (std::size_t w = 0; w < nw; ++w) {
        double row = 0.0;
        for (std::size_t h = 0; h < nh; ++h) {
          const double v = g[i++];
          row += v;
          grads.r_h[d * nh + h] += v;
        }
        grads.r_z[d * nz + z] += row;
        grads.r_w[d * nw + w] += row;
      }
    }
  }

  const std::size_t c = params.c_in();
  const std::size_t n = nz * nw * nh;
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const RowMatrix>;
  const auto ed = static_cast<Eigen::Index>(dd), ec = static_cast<Eigen::Index>(c), en = static_cast<Eigen::Index>(n);
  const ConstMap gm(g.data().data(), ed, en);
  Eigen::Map<RowMatrix>(grads.w_q.data().data(), ed, ec).noalias() +=
      gm * ConstMap(cache.normed.data().data(), ec, en).transpose();
  Tensor dnormed = Tensor::uninitialized(cache.normed.shape());
  Eigen::Map<RowMatrix>(dnormed.data().data(), ec, en).noalias() =
      ConstMap(params.embed.w_q.data().data(), ed, ec).transpose() * gm;

  Tensor dx = layer_norm_backward(dnormed, params.norm_gain, params.norm_axes, cache.norm, grads.norm_gain,
                                  grads.norm_bias);
  if (cache.residual) dx = dx + grad_out;
  return dx;
}

namespace testing {
void set_kernel_perturbation(double delta) { kernel_perturbation.store(delta, std::memory_order_relaxed); }
}  // namespace testing

}  // namespace axial
