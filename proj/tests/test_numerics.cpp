// Matrix kernels, RNG determinism, and the finite-difference oracle itself.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "conceptgcd/gradcheck.hpp"
#include "conceptgcd/heads.hpp"
#include "conceptgcd/matrix.hpp"
#include "conceptgcd/rng.hpp"

using namespace conceptgcd;

namespace {
// Independent reference: the textbook triple loop, one local accumulator.
Matrix matmul_naive(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}
}  // namespace

TEST_CASE("matmul matches the naive triple-loop oracle bitwise") {
  RngState rng(1);
  const Matrix a = gaussian_matrix(5, 4, 1.0, rng);
  const Matrix b = gaussian_matrix(4, 3, 1.0, rng);
  CHECK(matmul(a, b) == matmul_naive(a, b));

  const Matrix big_a = gaussian_matrix(17, 23, 1.0, rng);
  const Matrix big_b = gaussian_matrix(23, 11, 1.0, rng);
  CHECK(matmul(big_a, big_b) == matmul_naive(big_a, big_b));
}

TEST_CASE("matmul hand examples") {
  const Matrix i3 = Matrix::identity(3);
  RngState rng(2);
  const Matrix m = gaussian_matrix(3, 3, 1.0, rng);
  CHECK(matmul(i3, m) == m);

  Matrix row(1, 2);
  row(0, 0) = 1.0;
  row(0, 1) = 2.0;
  Matrix col(2, 1);
  col(0, 0) = 3.0;
  col(1, 0) = 4.0;
  const Matrix dot = matmul(row, col);
  REQUIRE(dot.rows() == 1);
  REQUIRE(dot.cols() == 1);
  CHECK(dot(0, 0) == 11.0);

  CHECK_THROWS_AS(matmul(row, row), DimensionError);
}

TEST_CASE("matmul_nt and matmul_tn agree with transpose composition") {
  // Agreement is to the ulp, not bitwise: the compiler may contract the
  // fused and transposed loops into fma chains differently.
  RngState rng(3);
  const Matrix a = gaussian_matrix(6, 5, 1.0, rng);
  const Matrix b = gaussian_matrix(7, 5, 1.0, rng);
  const Matrix nt = matmul_nt(a, b);
  const Matrix nt_ref = matmul(a, transpose(b));
  REQUIRE(nt.same_shape(nt_ref));
  for (std::size_t i = 0; i < nt.size(); ++i)
    CHECK(nt.data()[i] == Catch::Approx(nt_ref.data()[i]).margin(1e-14));

  const Matrix c = gaussian_matrix(6, 4, 1.0, rng);
  const Matrix tn = matmul_tn(a, c);
  const Matrix tn_ref = matmul(transpose(a), c);
  REQUIRE(tn.same_shape(tn_ref));
  for (std::size_t i = 0; i < tn.size(); ++i)
    CHECK(tn.data()[i] == Catch::Approx(tn_ref.data()[i]).margin(1e-14));

  CHECK_THROWS_AS(matmul_nt(a, c), DimensionError);
  CHECK_THROWS_AS(matmul_tn(a, b), DimensionError);
}

TEST_CASE("elementwise helpers") {
  RngState rng(4);
  const Matrix a = gaussian_matrix(3, 4, 1.0, rng);
  const Matrix b = gaussian_matrix(3, 4, 1.0, rng);
  const Matrix s = add(a, b);
  for (std::size_t i = 0; i < s.size(); ++i)
    CHECK(s.data()[i] == a.data()[i] + b.data()[i]);
  const Matrix d = sub(a, b);
  for (std::size_t i = 0; i < d.size(); ++i)
    CHECK(d.data()[i] == a.data()[i] - b.data()[i]);
  const Matrix h = hadamard(a, b);
  for (std::size_t i = 0; i < h.size(); ++i)
    CHECK(h.data()[i] == a.data()[i] * b.data()[i]);

  Matrix acc = a;
  add_scaled_inplace(acc, b, 2.5);
  for (std::size_t i = 0; i < acc.size(); ++i)
    CHECK(acc.data()[i] == a.data()[i] + 2.5 * b.data()[i]);

  const Matrix means = col_means(a);
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) sum += a(i, j);
    CHECK(means(0, j) == Catch::Approx(sum / 3.0).margin(1e-15));
  }
}

TEST_CASE("relu and its backward") {
  Matrix x(1, 3);
  x(0, 0) = -1.0;
  x(0, 1) = 0.0;
  x(0, 2) = 2.0;
  const Matrix y = relu(x);
  CHECK(y(0, 0) == 0.0);
  CHECK(y(0, 1) == 0.0);
  CHECK(y(0, 2) == 2.0);

  Matrix pre(1, 2);
  pre(0, 0) = -1.0;
  pre(0, 1) = 2.0;
  Matrix up(1, 2);
  up(0, 0) = 5.0;
  up(0, 1) = 7.0;
  const Matrix g = relu_backward(pre, up);
  CHECK(g(0, 0) == 0.0);
  CHECK(g(0, 1) == 7.0);
}

TEST_CASE("softmax_rows hand values and normalization") {
  Matrix x(2, 2);
  x(0, 0) = 0.0;
  x(0, 1) = 0.0;
  x(1, 0) = std::log(3.0);
  x(1, 1) = 0.0;
  const Matrix p = softmax_rows(x, 1.0);
  CHECK(p(0, 0) == Catch::Approx(0.5).margin(1e-15));
  CHECK(p(0, 1) == Catch::Approx(0.5).margin(1e-15));
  CHECK(p(1, 0) == Catch::Approx(0.75).margin(1e-12));
  CHECK(p(1, 1) == Catch::Approx(0.25).margin(1e-12));

  RngState rng(5);
  const Matrix r = gaussian_matrix(4, 7, 3.0, rng);
  const Matrix q = softmax_rows(r, 0.1);
  for (std::size_t i = 0; i < q.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < q.cols(); ++j) {
      CHECK(q(i, j) >= 0.0);
      sum += q(i, j);
    }
    CHECK(sum == Catch::Approx(1.0).margin(1e-12));
  }
  CHECK_THROWS_AS(softmax_rows(r, 0.0), ParameterError);
  CHECK_THROWS_AS(softmax_rows(r, -1.0), ParameterError);
}

TEST_CASE("l2_normalize_rows: 3-4-5 triangle, degenerate flag, unit norms") {
  Matrix x(2, 2);
  x(0, 0) = 3.0;
  x(0, 1) = 4.0;
  x(1, 0) = 0.0;
  x(1, 1) = 0.0;
  const RowNormResult r = l2_normalize_rows(x);
  CHECK(r.normalized(0, 0) == Catch::Approx(0.6).margin(1e-15));
  CHECK(r.normalized(0, 1) == Catch::Approx(0.8).margin(1e-15));
  CHECK(r.norms[0] == 5.0);
  CHECK(r.degenerate[0] == 0);
  CHECK(r.normalized(1, 0) == 0.0);
  CHECK(r.normalized(1, 1) == 0.0);
  CHECK(r.degenerate[1] == 1);
  CHECK(r.degenerate_count == 1);

  RngState rng(6);
  const Matrix m = gaussian_matrix(5, 6, 2.0, rng);
  const RowNormResult rn = l2_normalize_rows(m);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += rn.normalized(i, j) * rn.normalized(i, j);
    CHECK(std::sqrt(s) == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("l2_normalize_rows_backward matches finite differences") {
  RngState rng(7);
  Matrix x = gaussian_matrix(3, 4, 1.0, rng);
  const Matrix w = gaussian_matrix(3, 4, 1.0, rng);
  const GradCheckReport rep = finite_diff_check(
      [&]() {
        const RowNormResult r = l2_normalize_rows(x);
        double loss = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) loss += w.data()[i] * r.normalized.data()[i];
        return LossEval{loss, {l2_normalize_rows_backward(r, w)}};
      },
      {{"x", &x}});
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("row selection, scatter, slicing, argmax") {
  RngState rng(8);
  const Matrix x = gaussian_matrix(5, 3, 1.0, rng);
  const Matrix t = take_rows(x, {4, 1});
  CHECK(t.rows() == 2);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(t(0, j) == x(4, j));
    CHECK(t(1, j) == x(1, j));
  }
  CHECK_THROWS_AS(take_rows(x, {5}), DimensionError);

  Matrix dst(4, 2);
  Matrix src(2, 2, 1.0);
  scatter_add_rows(dst, {3, 0}, src, 2.0);
  CHECK(dst(3, 0) == 2.0);
  CHECK(dst(0, 1) == 2.0);
  CHECK(dst(1, 0) == 0.0);

  const Matrix sl = slice_cols(x, 1, 3);
  CHECK(sl.cols() == 2);
  CHECK(sl(2, 0) == x(2, 1));
  CHECK_THROWS_AS(slice_cols(x, 2, 4), DimensionError);

  Matrix l(2, 3);
  l(0, 0) = 1.0;
  l(0, 1) = 3.0;
  l(0, 2) = 3.0;  // tie: first max wins
  l(1, 0) = -1.0;
  l(1, 1) = -2.0;
  l(1, 2) = -0.5;
  const std::vector<std::int32_t> am = argmax_rows(l);
  CHECK(am[0] == 1);
  CHECK(am[1] == 2);
}

TEST_CASE("finite_diff_check: quadratic sanity and wrong-gradient inversion") {
  Matrix x(1, 1);
  x(0, 0) = 3.0;
  const GradCheckReport good = finite_diff_check(
      [&]() {
        Matrix g(1, 1);
        g(0, 0) = 2.0 * x(0, 0);
        return LossEval{x(0, 0) * x(0, 0), {g}};
      },
      {{"x", &x}});
  CHECK(good.max_rel_err < 1e-9);

  const GradCheckReport bad = finite_diff_check(
      [&]() {
        Matrix g(1, 1);
        g(0, 0) = 4.0 * x(0, 0);  // deliberately doubled
        return LossEval{x(0, 0) * x(0, 0), {g}};
      },
      {{"x", &x}});
  CHECK(bad.max_rel_err == Catch::Approx(1.0).margin(1e-6));
  CHECK(bad.worst_param == "x");
}

TEST_CASE("RngState: determinism, stream separation, draw accounting") {
  RngState a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 64; ++i) {
    const std::uint64_t va = a.next_u64();
    all_equal = all_equal && (va == b.next_u64());
    any_diff = any_diff || (va != c.next_u64());
  }
  CHECK(all_equal);
  CHECK(any_diff);

  CHECK(RngState::derive(7, 101) != RngState::derive(7, 102));
  CHECK(RngState::derive(7, 101) != RngState::derive(8, 101));
  CHECK(RngState::derive(7, 101) == RngState::derive(7, 101));

  // next_gaussian consumes exactly two raw draws.
  RngState g1(9), g2(9);
  g1.next_gaussian();
  g2.next_u64();
  g2.next_u64();
  CHECK(g1.state() == g2.state());

  RngState u(10);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.next_double();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
  for (int i = 0; i < 1000; ++i) CHECK(u.next_below(7) < 7);
  CHECK_THROWS_AS(u.next_below(0), ParameterError);

  std::vector<int> v1{1, 2, 3, 4, 5, 6}, v2{1, 2, 3, 4, 5, 6};
  RngState s1(11), s2(11);
  s1.shuffle(v1);
  s2.shuffle(v2);
  CHECK(v1 == v2);
}

TEST_CASE("gaussian_matrix statistics") {
  RngState rng(12);
  const Matrix m = gaussian_matrix(100, 100, 0.5, rng);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    sum += m.data()[i];
    sq += m.data()[i] * m.data()[i];
  }
  const double mean = sum / static_cast<double>(m.size());
  const double var = sq / static_cast<double>(m.size()) - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::sqrt(var) == Catch::Approx(0.5).epsilon(0.05));
}
