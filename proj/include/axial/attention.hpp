#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "axial/tensor.hpp"

namespace axial {

/// Embedding matrices of shape D x C. In shared mode only `w_q` is used and
/// acts as query, key and value at once.
struct EmbeddingWeights {
  Tensor w_q;
  std::optional<Tensor> w_k;
  std::optional<Tensor> w_v;

  std::size_t d() const { return w_q.dim(0); }
  std::size_t c_in() const { return w_q.dim(1); }
};

/// One learnable D-vector per coordinate along each spatial axis.
struct PositionalVectors {
  Tensor r_z;  // D x Z
  Tensor r_h;  // D x H
  Tensor r_w;  // D x W

  std::size_t d() const { return r_z.dim(0); }
};

/// Which elements share one mean/variance in layer normalization.
enum class NormAxes {
  kChannel,  // the C values at each spatial position
  kSample,   // all C*Z*W*H values of the feature map
};

struct AxialLayerParams {
  EmbeddingWeights embed;
  PositionalVectors pos;
  Tensor norm_gain;  // length C
  Tensor norm_bias;  // length C
  NormAxes norm_axes = NormAxes::kSample;

  std::size_t d() const { return embed.d(); }
  std::size_t c_in() const { return embed.c_in(); }

  /// Throws ShapeError unless the parameters fit an input of shape C x Z x W x H.
  void validate(const Shape& input_shape) const;
};

inline constexpr double kLayerNormEps = 1e-5;

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, NormAxes axes);

/// Per-position linear map across channels (a 1x1x1 convolution).
Tensor embed(const Tensor& x, const Tensor& w);

/// P[d, z, w, h] = r_z[d, z] + r_h[d, h] + r_w[d, w].
Tensor build_positional_encoding(const PositionalVectors& pos);

/// embed(layer_norm(x)) + P.
Tensor shared_embedding(const Tensor& x, const AxialLayerParams& params);

/// Shared-embedding attention along the last axis of a D x ... x L tensor.
///
/// Every fiber f (D x L) taken along the last axis becomes f * softmax(f^T f),
/// with each column of the score matrix normalized so that every output
/// position is a convex combination of the fiber's positions.
Tensor axis_attention(const Tensor& t);

/// Same as `axis_attention` but attends along `axis` (>= 1) in place, without
/// materializing a permuted copy.
Tensor axis_attention_along(const Tensor& t, std::size_t axis);

/// Heightwise, widthwise, then depthwise attention over the shared embedding
/// of `x`, plus the identity shortcut when C == D.
Tensor axial_attention_3d(const Tensor& x, const AxialLayerParams& params);

/// Full attention over all Z*W*H positions of an already embedded D x Z x W x H
/// tensor. Scores and weights are N x N with row = output position.
struct NonLocalResult {
  Tensor output;
  Tensor scores;
  Tensor weights;
};

/// Non-local attention of x, with q = W^q x, k = W^k x, v = W^v x (or all
/// three equal to W^q x in shared mode). Weights of output position j over
/// source i are softmax_i(q_j . k_i). O(N^2) reference implementation built on
/// matmul/softmax.
NonLocalResult nonlocal_full_traced(const Tensor& x, const EmbeddingWeights& w, bool shared);
Tensor nonlocal_full(const Tensor& x, const EmbeddingWeights& w, bool shared);

/// Shared-mode non-local attention applied to an embedded tensor h.
NonLocalResult nonlocal_attend(const Tensor& h);

// ---------------------------------------------------------------------------
// Training support: forward with saved activations and the matching backward.

struct LayerNormCache {
  Tensor x_hat;
  std::vector<double> inv_std;  // one per statistics group
};

Tensor layer_norm_forward(const Tensor& x, const Tensor& gain, const Tensor& bias, NormAxes axes,
                          LayerNormCache& cache);

/// Returns dL/dx and accumulates dL/dgain, dL/dbias.
Tensor layer_norm_backward(const Tensor& grad_out, const Tensor& gain, NormAxes axes, const LayerNormCache& cache,
                           Tensor& grad_gain, Tensor& grad_bias);

struct AxisAttentionCache {
  std::size_t axis = 0;
  Shape shape;
  std::vector<double> inputs;   // the input tensor's values
  std::vector<double> weights;  // per fiber, L x L, column = output position
};

Tensor axis_attention_forward(const Tensor& t, std::size_t axis, AxisAttentionCache& cache);
Tensor axis_attention_backward(const Tensor& grad_out, const AxisAttentionCache& cache);

struct AxialLayerCache {
  LayerNormCache norm;
  Tensor normed;
  std::array<AxisAttentionCache, 3> stages;
  bool residual = false;
};

struct AxialLayerGrads {
  Tensor w_q;
  Tensor r_z;
  Tensor r_h;
  Tensor r_w;
  Tensor norm_gain;
  Tensor norm_bias;

  static AxialLayerGrads zeros_like(const AxialLayerParams& params);
};

Tensor axial_attention_3d_forward(const Tensor& x, const AxialLayerParams& params, AxialLayerCache& cache);

/// Returns dL/dx and accumulates parameter gradients into `grads`.
Tensor axial_attention_3d_backward(const Tensor& grad_out, const AxialLayerParams& params,
                                   const AxialLayerCache& cache, AxialLayerGrads& grads);

namespace testing {
/// Adds `delta` to one output element of every attended fiber. Used to show
/// that the verification suite detects a corrupted kernel; 0 disables it.
void set_kernel_perturbation(double delta);
}  // namespace testing

}  // namespace axial
