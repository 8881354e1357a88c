#pragma once

// Fused per-fiber shared-embedding attention, forward and backward.
//
// A fiber holds L positions of a D-dimensional embedding, stored channel-major
// as xt (D x L). Attention weights are kept transposed: wt (L x L) has column
// i holding output position i's weights over source positions, so every inner
// loop is an axpy over a contiguous row of length L.

#include <bit>
#include <cstddef>
#include <cstdint>

#include <Eigen/Dense>

namespace axial::detail {

/// exp(x) for x <= 0, within a few ulp. Arguments below -708 are clamped, so
/// the smallest result is about 3e-308. Branch-free so loops over it vectorise
/// (given -fno-trapping-math).
inline double exp_nonpositive(double x) {
  constexpr double kLog2e = 1.4426950408889634;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  constexpr double kShift = 6755399441055744.0;  // 1.5 * 2^52
  x = x > -708.0 ? x : -708.0;
  const double t = x * kLog2e + kShift;  // low mantissa bits hold round(x / ln 2)
  const double k = t - kShift;
  const double r = (x - k * kLn2Hi) - k * kLn2Lo;
  double p = 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  const std::uint64_t bits = (std::bit_cast<std::uint64_t>(t) + 1023) << 52;
  return p * std::bit_cast<double>(bits);
}

template <int kL, int kD>
struct FiberKernel {
  using Channels = Eigen::Matrix<double, kD, kL, Eigen::RowMajor>;
  using Square = Eigen::Matrix<double, kL, kL, Eigen::RowMajor>;
  using Row = Eigen::Array<double, 1, kL>;
  using ChannelsView = Eigen::Map<const Channels, Eigen::Unaligned>;
  using SquareMap = Eigen::Map<Square, Eigen::Unaligned>;
  using SquareView = Eigen::Map<const Square, Eigen::Unaligned>;

  Eigen::Index len, d;
  Channels xt, yt, dyt, dxt;
  Square wt, g, w;
  Row stat;

  FiberKernel(std::size_t len_, std::size_t d_)
      : len(static_cast<Eigen::Index>(len_)), d(static_cast<Eigen::Index>(d_)) {
    for (Channels* m : {&xt, &yt, &dyt, &dxt}) m->resize(d, len);
    for (Square* m : {&wt, &g, &w}) m->resize(len, len);
    stat.resize(len);
  }

  // out.row(j) = sum_c a(c, j) * b.row(c), i.e. out = a^T b.
  template <typename A, typename B, typename Out>
  static void mul_tn(const A& a, const B& b, Out& out) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      auto row = out.row(j).array();
      row = a(0, j) * b.row(0).array();
      for (Eigen::Index c = 1; c < a.rows(); ++c) row += a(c, j) * b.row(c).array();
    }
  }

  // out.row(c) (+)= sum_j a(c, j) * m.row(j), i.e. out = a m.
  template <typename A, typename M>
  static void mul_nn(const A& a, const M& m, Channels& out, bool accumulate) {
    for (Eigen::Index c = 0; c < a.rows(); ++c) {
      auto row = out.row(c).array();
      if (!accumulate) row = a(c, 0) * m.row(0).array();
      for (Eigen::Index j = accumulate ? 0 : 1; j < a.cols(); ++j) row += a(c, j) * m.row(j).array();
    }
  }

  /// Reads xt; writes the weights to `wt_out` (len x len) and yt.
  void forward(double* wt_out) {
    SquareMap wm(wt_out, len, len);
    mul_tn(xt, xt, wm);  // scores, symmetric
    stat = wm.row(0).array();
    for (Eigen::Index j = 1; j < len; ++j) stat = stat.max(wm.row(j).array());
    const double* m = stat.data();
    for (Eigen::Index j = 0; j < len; ++j) {
      double* row = wt_out + j * len;
      for (Eigen::Index i = 0; i < len; ++i) row[i] = exp_nonpositive(row[i] - m[i]);
    }
    stat = wm.row(0).array();
    for (Eigen::Index j = 1; j < len; ++j) stat += wm.row(j).array();
    stat = stat.inverse();
    for (Eigen::Index j = 0; j < len; ++j) wm.row(j).array() *= stat;
    mul_nn(xt, wm, yt, false);
  }

  void forward() { forward(wt.data()); }

  /// Reads the forward input `x` (d x len), its weights `wt_in` and dyt;
  /// writes dxt.
  ///
  /// dW[i][j] = dy_i . x_j; dS = softmax backward of dW per output i;
  /// dx_a = sum_b W[b][a] dy_b + sum_b (dS[a][b] + dS[b][a]) x_b.
  void backward(const double* x, const double* wt_in) {
    const ChannelsView xv(x, d, len);
    const SquareView wv(wt_in, len, len);
    mul_tn(xv, dyt, g);  // g = dW^T
    stat = wv.row(0).array() * g.row(0).array();
    for (Eigen::Index j = 1; j < len; ++j) stat += wv.row(j).array() * g.row(j).array();
    for (Eigen::Index j = 0; j < len; ++j) g.row(j).array() = wv.row(j).array() * (g.row(j).array() - stat);
    w = g.transpose();
    g += w;
    w = wv.transpose();
    mul_nn(dyt, w, dxt, false);
    mul_nn(xv, g, dxt, true);
  }

  void backward() { backward(xt.data(), wt.data()); }
};

// Calls `f.template operator()<Kernel>()` with a kernel specialised for
// common fiber shapes and a runtime-sized one otherwise.
template <typename F>
inline void dispatch_kernel(std::size_t len, std::size_t d, F&& f) {
  constexpr int kDyn = Eigen::Dynamic;
  const auto pick_d = [&]<int kL>() {
    switch (d) {
      case 8:
        return f.template operator()<FiberKernel<kL, 8>>();
      case 16:
        return f.template operator()<FiberKernel<kL, 16>>();
      case 32:
        return f.template operator()<FiberKernel<kL, 32>>();
      default:
        return f.template operator()<FiberKernel<kL, kDyn>>();
    }
  };
  switch (len) {
    case 32:
      return pick_d.template operator()<32>();
    case 16:
      return pick_d.template operator()<16>();
    case 8:
      return pick_d.template operator()<8>();
    default:
      return f.template operator()<FiberKernel<kDyn, kDyn>>();
  }
}

}  // namespace axial::detail
