#include <gtest/gtest.h>

#include <functional>

#include "drivefix/ad/tape.hpp"
#include "drivefix/core/rng.hpp"

using namespace drivefix;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

Mat random_mat(int r, int c, RngStream& rng, double scale = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal(0, scale);
  return m;
}

// Central finite differences of a scalar function of one matrix input,
// compared entry-by-entry against the tape gradient.
void check_gradient(std::function<Var(Tape&, Var)> f, const Mat& x0, double step = 1e-6,
                    double rel_tol = 1e-6) {
  Tape tape;
  Mat grad = Mat::Zero(x0.rows(), x0.cols());
  Var x = tape.leaf(x0, &grad);
  Var loss = f(tape, x);
  ASSERT_EQ(loss->val.size(), 1);
  tape.backward(loss);

  for (int i = 0; i < x0.rows(); ++i)
    for (int j = 0; j < x0.cols(); ++j) {
      auto eval = [&](double v) {
        Mat xp = x0;
        xp(i, j) = v;
        Tape t2;
        Var xv = t2.leaf(xp, nullptr);
        return f(t2, xv)->val(0, 0);
      };
      double fd = (eval(x0(i, j) + step) - eval(x0(i, j) - step)) / (2 * step);
      double denom = std::max({std::abs(fd), std::abs(grad(i, j)), 1e-8});
      EXPECT_NEAR(grad(i, j), fd, rel_tol * denom + 1e-9)
          << "entry (" << i << "," << j << ")";
    }
}

}  // namespace

TEST(Tape, ScalarChainHandValues) {
  // loss = mean((2x)^2) for x = [1, 2] -> (4 + 16)/2 = 10; dloss/dx = 4x
  Tape tape;
  Mat g = Mat::Zero(1, 2);
  Mat x0(1, 2);
  x0 << 1, 2;
  Var x = tape.leaf(x0, &g);
  Var y = tape.scale(x, 2.0);
  Var loss = tape.mse_to(y, Mat::Zero(1, 2));
  EXPECT_DOUBLE_EQ(loss->val(0, 0), 10.0);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(g(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(g(0, 1), 8.0);
}

TEST(Tape, MatmulGradient) {
  RngStream rng(1, "mm");
  Mat a0 = random_mat(3, 4, rng);
  Mat b = random_mat(4, 2, rng);
  check_gradient(
      [&](Tape& t, Var a) { return t.mse_to(t.matmul(a, t.constant(b)), Mat::Ones(3, 2)); }, a0);
  // and through the second operand, transposed form
  Mat q = random_mat(3, 4, rng);
  check_gradient(
      [&](Tape& t, Var b2) { return t.mse_to(t.matmul_nt(t.constant(q), b2), Mat::Ones(3, 5)); },
      random_mat(5, 4, rng));
}

TEST(Tape, LayerNormGradient) {
  RngStream rng(2, "ln");
  Mat x0 = random_mat(4, 6, rng);
  Mat gain = random_mat(1, 6, rng, 0.5);
  Mat bias = random_mat(1, 6, rng, 0.5);
  check_gradient(
      [&](Tape& t, Var x) {
        return t.mse_to(t.layernorm(x, t.constant(gain), t.constant(bias)), Mat::Zero(4, 6));
      },
      x0, 1e-6, 1e-5);
  // gain/bias path
  check_gradient(
      [&](Tape& t, Var gv) {
        Var y = t.layernorm(t.constant(x0), gv, t.constant(bias));
        return t.mse_to(y, Mat::Zero(4, 6));
      },
      gain);
}

TEST(Tape, SoftmaxGeluGradient) {
  RngStream rng(3, "sm");
  Mat x0 = random_mat(3, 5, rng);
  check_gradient(
      [&](Tape& t, Var x) { return t.mse_to(t.softmax_rows(x), Mat::Ones(3, 5) / 5.0); }, x0,
      1e-6, 1e-5);
  check_gradient([&](Tape& t, Var x) { return t.mse_to(t.gelu(x), Mat::Zero(3, 5)); }, x0);
}

TEST(Tape, SliceConcatGatherGradient) {
  RngStream rng(4, "sg");
  Mat x0 = random_mat(6, 4, rng);
  check_gradient(
      [&](Tape& t, Var x) {
        Var top = t.slice_rows(x, 0, 3);
        Var bot = t.slice_rows(x, 3, 3);
        Var rejoined = t.concat_rows({bot, top});
        Var perm = t.gather_rows(rejoined, {5, 4, 3, 2, 1, 0});
        Var cols = t.slice_cols(perm, 1, 2);
        return t.mse_to(cols, Mat::Ones(6, 2));
      },
      x0);
}

TEST(Tape, RowvecBroadcastGradient) {
  RngStream rng(5, "rv");
  Mat x0 = random_mat(4, 3, rng);
  Mat b0 = random_mat(1, 3, rng);
  check_gradient(
      [&](Tape& t, Var x) { return t.mse_to(t.add_rowvec(x, t.constant(b0)), Mat::Zero(4, 3)); },
      x0);
  check_gradient(
      [&](Tape& t, Var b) { return t.mse_to(t.add_rowvec(t.constant(x0), b), Mat::Zero(4, 3)); },
      b0);
}

TEST(Tape, AttentionCompositeGradient) {
  // a miniature single-head attention: softmax(q k^T / sqrt(d)) v
  RngStream rng(6, "attn");
  int n = 4, d = 3;
  Mat k = random_mat(n, d, rng), v = random_mat(n, d, rng);
  check_gradient(
      [&](Tape& t, Var q) {
        Var scores = t.scale(t.matmul_nt(q, t.constant(k)), 1.0 / std::sqrt(double(d)));
        Var attn = t.softmax_rows(scores);
        return t.mse_to(t.matmul(attn, t.constant(v)), Mat::Zero(n, d));
      },
      random_mat(n, d, rng), 1e-6, 1e-5);
}

TEST(Tape, AngularAlignmentGradientAndValues) {
  RngStream rng(7, "ang");
  Mat g = random_mat(5, 4, rng);
  // collinear -> 0, antipodal -> 2
  {
    Tape t;
    Var f = t.leaf(g * 3.0, nullptr);
    EXPECT_NEAR(t.angular_alignment(f, g, {})->val(0, 0), 0.0, 1e-7);
    Var fneg = t.leaf(-g, nullptr);
    EXPECT_NEAR(t.angular_alignment(fneg, g, {})->val(0, 0), 2.0, 1e-7);
  }
  check_gradient([&](Tape& t, Var f) { return t.angular_alignment(f, g, {}); },
                 random_mat(5, 4, rng), 1e-6, 1e-5);
  // mask excludes rows from both value and gradient
  std::vector<bool> mask{true, false, true, false, true};
  check_gradient([&](Tape& t, Var f) { return t.angular_alignment(f, g, mask); },
                 random_mat(5, 4, rng), 1e-6, 1e-5);
}

TEST(Tape, ScaleAlignmentGradientAndValues) {
  RngStream rng(8, "sc");
  Mat g = random_mat(5, 4, rng);
  {
    Tape t;
    // same norms -> 0; norm ratio e -> 1
    Var f = t.leaf(-g, nullptr);  // rotation/reflection leaves norms intact
    EXPECT_NEAR(t.scale_alignment(f, g, {})->val(0, 0), 0.0, 1e-9);
    Var fe = t.leaf(g * std::exp(1.0), nullptr);
    EXPECT_NEAR(t.scale_alignment(fe, g, {})->val(0, 0), 1.0, 1e-6);
  }
  check_gradient([&](Tape& t, Var f) { return t.scale_alignment(f, g, {}); },
                 random_mat(5, 4, rng), 1e-6, 1e-5);
}

TEST(Tape, GradAccumulatesAcrossReuse) {
  // x used twice: loss = mean((x + x)^2) -> grad = 8x/n consistency via FD
  RngStream rng(9, "reuse");
  check_gradient([&](Tape& t, Var x) { return t.mse_to(t.add(x, x), Mat::Zero(3, 3)); },
                 random_mat(3, 3, rng));
}
