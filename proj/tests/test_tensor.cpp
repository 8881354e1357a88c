#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "axial/tensor.hpp"
#include "oracles.hpp"

using namespace axial;

namespace {

Rng rng_for(std::uint64_t k) { return Rng(derive_seed(99, "test.tensor", k)); }

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.dim(1); ++k) s += a.at({i, k}) * b.at({k, j});
      out.at({i, j}) = s;
    }
  }
  return out;
}

}  // namespace

TEST(Tensor, ShapeInvariants) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  for (double v : t.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  EXPECT_EQ(Tensor::scalar(3.5).size(), 1u);
  EXPECT_THROW(t.at({2, 0, 0}), ShapeError);
  EXPECT_THROW(t.at({0, 0}), ShapeError);
}

TEST(Tensor, ReshapeKeepsData) {
  Rng rng = rng_for(1);
  const Tensor t = oracle::random_tensor({2, 6}, rng);
  const Tensor r = t.reshaped({3, 4});
  EXPECT_EQ(r.values(), t.values());
  EXPECT_THROW(t.reshaped({5}), ShapeError);
}

TEST(Permute, IdentityIsBitwise) {
  Rng rng = rng_for(2);
  const Tensor t = oracle::random_tensor({2, 3, 4}, rng);
  EXPECT_EQ(permute(t, AxisPermutation::identity(3)), t);
}

TEST(Permute, TransposeExample) {
  Tensor t({2, 3});
  t.at({0, 2}) = 7.0;
  const Tensor out = permute(t, AxisPermutation({1, 0}));
  EXPECT_EQ(out.shape(), (Shape{3, 2}));
  EXPECT_EQ(out.at({2, 0}), 7.0);
}

TEST(Permute, RoundTripAndMultiset) {
  Rng rng = rng_for(3);
  const Tensor t = oracle::random_tensor({2, 3, 4, 5}, rng);
  const AxisPermutation p({2, 0, 3, 1});
  const Tensor out = permute(t, p);
  EXPECT_EQ(out.shape(), (Shape{4, 2, 5, 3}));
  EXPECT_EQ(permute(out, p.inverse()), t);
  auto a = t.values(), b = out.values();
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(out.at({k, i, 4, 1}), t.at({i, 1, k, 4}));
  }
}

TEST(Permute, RejectsBadPermutations) {
  EXPECT_THROW(AxisPermutation({0, 0}), InvalidPermutation);
  EXPECT_THROW(AxisPermutation({0, 2}), InvalidPermutation);
  EXPECT_THROW(permute(Tensor({2, 2}), AxisPermutation({0, 1, 2})), InvalidPermutation);
}

TEST(Matmul, Examples) {
  Rng rng = rng_for(4);
  const Tensor m = oracle::random_tensor({3, 3}, rng);
  EXPECT_EQ(matmul(Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}), m), m);
  const Tensor p = matmul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 1}, {5, 6}));
  EXPECT_EQ(p.values(), (std::vector<double>{17, 39}));
  const Tensor z = matmul(Tensor::zeros({2, 3}), oracle::random_tensor({3, 4}, rng));
  EXPECT_EQ(z, Tensor::zeros({2, 4}));
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
}

TEST(Matmul, MatchesLoopsAndIsAssociative) {
  Rng rng = rng_for(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t a = 1 + rng.below(6), b = 1 + rng.below(6), c = 1 + rng.below(6), d = 1 + rng.below(6);
    const Tensor x = oracle::random_tensor({a, b}, rng), y = oracle::random_tensor({b, c}, rng),
                 z = oracle::random_tensor({c, d}, rng);
    EXPECT_LE(max_abs_diff(matmul(x, y), naive_matmul(x, y)), 1e-13);
    EXPECT_LE(max_abs_diff(matmul(matmul(x, y), z), matmul(x, matmul(y, z))), 1e-9);
  }
}

TEST(Matmul, ReportsMacs) {
  MacCounter outer;
  {
    MacCounter inner;
    (void)matmul(Tensor({2, 3}), Tensor({3, 4}));
    EXPECT_EQ(inner.count(), 24u);
  }
  EXPECT_EQ(outer.count(), 0u);
  (void)matmul(Tensor({1, 5}), Tensor({5, 1}));
  EXPECT_EQ(outer.count(), 5u);
}

TEST(Softmax, Examples) {
  const Tensor u = softmax(Tensor({3}, {0, 0, 0}), 0);
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const Tensor s = softmax(Tensor({2}, {1, 2}), 0);
  EXPECT_NEAR(s[0], 0.26894, 1e-5);
  EXPECT_NEAR(s[1], 0.73106, 1e-5);
  const Tensor a = softmax(Tensor({2}, {40.0, 43.5}), 0), b = softmax(Tensor({2}, {0.0, 3.5}), 0);
  EXPECT_LE(max_abs_diff(a, b), 1e-12);
}

TEST(Softmax, RowsSumToOneAndAreShiftInvariant) {
  Rng rng = rng_for(6);
  const Tensor t = oracle::random_tensor({3, 5, 4}, rng, 50.0);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const Tensor s = softmax(t, axis);
    const Tensor shifted = softmax(t + Tensor::scalar(123.0), axis);
    EXPECT_LE(max_abs_diff(s, shifted), 1e-12);
    std::vector<std::size_t> idx(3);
    for (std::size_t flat = 0; flat < s.size(); ++flat) {
      std::size_t rest = flat;
      for (std::size_t k = 3; k-- > 0;) {
        idx[k] = rest % s.dim(k);
        rest /= s.dim(k);
      }
      if (idx[axis] != 0) continue;
      double sum = 0.0;
      for (std::size_t j = 0; j < s.dim(axis); ++j) {
        auto at = idx;
        at[axis] = j;
        sum += s[s.offset(at)];
        EXPECT_GE(s[s.offset(at)], 0.0);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, RejectsNonFinite) {
  EXPECT_THROW(softmax(Tensor({2}, {0.0, INFINITY}), 0), NumericError);
  EXPECT_THROW(softmax(Tensor({2}), 1), ShapeError);
}

TEST(Elementwise, Examples) {
  Rng rng = rng_for(7);
  const Tensor t = oracle::random_tensor({2, 3}, rng);
  EXPECT_EQ(t + Tensor::zeros({2, 3}), t);
  EXPECT_EQ(elementwise(t, 1.0, ElementwiseKind::kMul), t);
  EXPECT_EQ((Tensor({2}, {1, 2}) + Tensor({2}, {3, 4})).values(), (std::vector<double>{4, 6}));
  EXPECT_EQ((Tensor({2}, {5, 2}) - Tensor({2}, {3, 4})).values(), (std::vector<double>{2, -2}));
  EXPECT_EQ((Tensor({2}, {5, 2}) * Tensor::scalar(2.0)).values(), (std::vector<double>{10, 4}));
  EXPECT_EQ((Tensor::scalar(1.0) - Tensor({2}, {5, 2})).values(), (std::vector<double>{-4, -1}));
  EXPECT_THROW(Tensor({2}) + Tensor({3}), ShapeError);
}
