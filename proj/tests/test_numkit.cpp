#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "synsel/synsel.hpp"

using namespace synsel;
using namespace synsel::numkit;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, RngStream& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (auto& v : m.values()) v = rng.uniform(-scale, scale);
  return m;
}

}  // namespace

TEST(Matmul, IdentityAndZero) {
  const Matrix m{{1.5, -2.0}, {3.0, 0.25}};
  EXPECT_EQ(max_abs_diff(matmul(Matrix::identity(2), m), m), 0.0);
  const Matrix z = matmul(Matrix(2, 2), m);
  for (double v : z.values()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, HandCase) {
  const Matrix out = matmul(Matrix{{1, 2}, {3, 4}}, Matrix{{5}, {6}});
  ASSERT_EQ(out.rows(), 2u);
  ASSERT_EQ(out.cols(), 1u);
  EXPECT_EQ(out(0, 0), 17.0);
  EXPECT_EQ(out(1, 0), 39.0);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), DimensionError);
}

TEST(Matmul, TransposedVariantsAgree) {
  RngStream rng(1, StreamId::DataGen);
  const Matrix a = random_matrix(4, 3, rng), b = random_matrix(4, 5, rng), c = random_matrix(6, 3, rng);
  EXPECT_LT(max_abs_diff(matmul_tn(a, b), matmul(transpose(a), b)), 1e-14);
  EXPECT_LT(max_abs_diff(matmul_nt(a, c), matmul(a, transpose(c))), 1e-14);
}

TEST(Matmul, AssociativityOnRandomChains) {
  RngStream rng(2, StreamId::DataGen);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(8, 8, rng), b = random_matrix(8, 8, rng), c = random_matrix(8, 8, rng);
    const Matrix left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
    double scale = 0.0;
    for (double v : left.values()) scale = std::max(scale, std::abs(v));
    EXPECT_LT(max_abs_diff(left, right) / scale, 1e-9);
  }
}

TEST(Softmax, UniformRow) {
  const Matrix s = softmax_rows(Matrix(1, 4));
  for (double v : s.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const Matrix s = softmax_rows(Matrix{{1000.0, 0.0}});
  EXPECT_TRUE(all_finite(s));
  EXPECT_NEAR(s(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(s(0, 1), 0.0, 1e-15);
}

TEST(Softmax, ClosedForm) {
  const Matrix s = softmax_rows(Matrix{{0.0, std::log(3.0)}});
  EXPECT_NEAR(s(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(s(0, 1), 0.75, 1e-15);
}

TEST(Softmax, RowsSumToOne) {
  RngStream rng(3, StreamId::DataGen);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix m = random_matrix(1 + rng.below(6), 1 + rng.below(9), rng, 50.0);
    const Matrix s = softmax_rows(m);
    for (std::size_t r = 0; r < s.rows(); ++r) {
      double sum = 0.0;
      for (double v : s.row(r)) sum += v;
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Relu, SignCasesAndIdempotence) {
  const Matrix r = relu(Matrix{{-1.0, 0.0, 2.0}});
  EXPECT_EQ(r(0, 0), 0.0);
  EXPECT_EQ(r(0, 1), 0.0);
  EXPECT_EQ(r(0, 2), 2.0);
  const Matrix neg = relu(Matrix(3, 3, -4.0));
  for (double v : neg.values()) EXPECT_EQ(v, 0.0);
  RngStream rng(4, StreamId::DataGen);
  const Matrix m = random_matrix(5, 5, rng);
  EXPECT_EQ(max_abs_diff(relu(relu(m)), relu(m)), 0.0);
}

TEST(GradCheck, SquareIsExact) {
  ParamTensor w("w", Matrix{{3.0}});
  auto f = [&](bool backward) {
    Tape t;
    Var out = ops::sum(ops::square(t.param(w)));
    if (backward) t.backward(out);
    return t.value(out)[0];
  };
  zero_grads({&w});
  f(true);
  EXPECT_DOUBLE_EQ(w.grad[0], 6.0);
  EXPECT_LT(grad_check(f, {&w}, 1e-5), 1e-9);
}

TEST(GradCheck, ConstantFunction) {
  ParamTensor w("w", Matrix{{1.0, 2.0}});
  auto f = [&](bool backward) {
    Tape t;
    Var out = t.constant(Matrix{{4.0}});
    if (backward) t.backward(out);
    return t.value(out)[0];
  };
  const auto r = grad_check_detailed(f, {&w}, 1e-5);
  EXPECT_EQ(r.max_rel_error, 0.0);
  EXPECT_EQ(r.analytic, 0.0);
  EXPECT_EQ(r.numeric, 0.0);
}

TEST(GradCheck, SingleAttentionLayer) {
  RngStream rng(5, StreamId::ControllerInit);
  ParamTensor x("x", random_matrix(4, 8, rng));
  auto wq = ParamTensor::uniform("wq", 8, 4, 0.5, rng);
  auto wk = ParamTensor::uniform("wk", 8, 4, 0.5, rng);
  auto wv = ParamTensor::uniform("wv", 8, 4, 0.5, rng);
  const Matrix proj = random_matrix(4, 4, rng);
  auto f = [&](bool backward) {
    Tape t;
    Var xv = t.param(x);
    auto a = controller::self_attention(ops::matmul(xv, t.param(wq)), ops::matmul(xv, t.param(wk)),
                                        ops::matmul(xv, t.param(wv)), 4);
    Var out = ops::sum(ops::hadamard(a.output, t.constant(proj)));
    if (backward) t.backward(out);
    return t.value(out)[0];
  };
  EXPECT_LT(grad_check(f, {&x, &wq, &wk, &wv}, 1e-5), 1e-5);
}

TEST(GradCheck, TapeOpsAgainstFiniteDifferences) {
  RngStream rng(6, StreamId::ControllerInit);
  ParamTensor a("a", random_matrix(3, 4, rng)), b("b", random_matrix(4, 4, rng));
  ParamTensor g("g", random_matrix(1, 4, rng)), o("o", random_matrix(1, 4, rng));
  const Matrix proj = random_matrix(3, 4, rng);
  auto f = [&](bool backward) {
    using namespace ops;
    Tape t;
    Var h = matmul(t.param(a), t.param(b));
    h = layer_norm_rows(h, t.param(g), t.param(o));
    h = add(tanh(h), sigmoid(scale(h, 0.5)));
    h = hadamard(h, exp(scale(h, 0.1)));
    Var s = add(sum(hadamard(softmax_rows(h), t.constant(proj))), mean(log_softmax_rows(h)));
    s = add(s, sum(mean_rows(relu(h))));
    if (backward) t.backward(s);
    return t.value(s)[0];
  };
  EXPECT_LT(grad_check(f, {&a, &b, &g, &o}, 1e-5), 1e-5);
}

TEST(GradCheck, RejectsBadEpsilon) {
  ParamTensor w("w", Matrix{{1.0}});
  auto f = [&](bool) { return 0.0; };
  EXPECT_THROW(grad_check(f, {&w}, 0.5), ConfigError);
}

TEST(Tape, BackwardNeedsScalar) {
  Tape t;
  Var v = t.constant(Matrix(2, 2));
  EXPECT_THROW(t.backward(v), DimensionError);
}

TEST(Rng, StreamsAreKeyed) {
  RngStream a(11, StreamId::DataGen), b(11, StreamId::DataGen), c(11, StreamId::ActionSample);
  RngStream d(11, StreamId::DataGen, 1);
  bool differs_id = false, differs_sub = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a(), vb = b(), vc = c(), vd = d();
    EXPECT_EQ(va, vb);
    differs_id |= va != vc;
    differs_sub |= va != vd;
  }
  EXPECT_TRUE(differs_id);
  EXPECT_TRUE(differs_sub);
}

TEST(Rng, UniformAndBelowRanges) {
  RngStream rng(12, StreamId::DataGen);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const auto k = rng.below(7);
    ASSERT_LT(k, 7u);
    seen.insert(k);
  }
  EXPECT_EQ(seen.size(), 7u);
}
