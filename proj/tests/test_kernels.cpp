#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <functional>

#include "mmlnet/core/kernels.hpp"
#include "mmlnet/core/rng.hpp"

using mmlnet::Matrix;
using mmlnet::Rng;
namespace K = mmlnet::kernels;

namespace {

Matrix random_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.normal(0.0, scale);
  return m;
}

Matrix naive_matmul(const Matrix& a, const Matrix& b, K::Transpose t) {
  auto at = [&](int i, int j) { return t == K::Transpose::A ? a(j, i) : a(i, j); };
  auto bt = [&](int i, int j) { return t == K::Transpose::B ? b(j, i) : b(i, j); };
  const int m = t == K::Transpose::A ? a.cols : a.rows;
  const int k = t == K::Transpose::A ? a.rows : a.cols;
  const int n = t == K::Transpose::B ? b.rows : b.cols;
  Matrix c(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += at(i, p) * bt(p, j);
      c(i, j) = acc;
    }
  return c;
}

void check_close(const Matrix& a, const Matrix& b, double tol) {
  REQUIRE(a.same_shape(b));
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(tol));
}

// Central finite differences of a scalar functional against an analytic
// input gradient.
void fd_check(const std::function<double(const Matrix&)>& f, const Matrix& x, const Matrix& dx,
              double tol = 1e-6) {
  const double eps = 1e-6;
  Matrix p = x;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    p.data[i] = x.data[i] + eps;
    const double up = f(p);
    p.data[i] = x.data[i] - eps;
    const double dn = f(p);
    p.data[i] = x.data[i];
    const double fd = (up - dn) / (2.0 * eps);
    const double scale = std::max({std::abs(fd), std::abs(dx.data[i]), 1.0});
    CHECK(std::abs(fd - dx.data[i]) / scale < tol);
  }
}

}  // namespace

TEST_CASE("matmul matches a naive triple loop in all transpose modes") {
  Rng rng(1);
  for (K::Transpose t : {K::Transpose::None, K::Transpose::A, K::Transpose::B}) {
    Matrix a = random_matrix(rng, 7, 5);
    Matrix b;
    switch (t) {
      case K::Transpose::None: b = random_matrix(rng, 5, 9); break;
      case K::Transpose::A:    b = random_matrix(rng, 7, 9); break;
      case K::Transpose::B:    b = random_matrix(rng, 9, 5); break;
    }
    check_close(K::matmul(a, b, t), naive_matmul(a, b, t), 1e-12);
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  Matrix a(3, 4), b(5, 2);
  CHECK_THROWS_AS(K::matmul(a, b), std::invalid_argument);
}

TEST_CASE("omp kernels are bitwise identical to serial for any thread count") {
  Rng rng(2);
  const int saved = omp_get_max_threads();
  for (int threads : {1, 2, 3, 7}) {
    omp_set_num_threads(threads);
    for (int trial = 0; trial < 5; ++trial) {
      const int rows = 1 + rng.below_int(40);
      const int cols = 1 + rng.below_int(40);
      Matrix x = random_matrix(rng, rows, cols);
      Matrix y = random_matrix(rng, rows, cols);
      Matrix bias = random_matrix(rng, 1, cols);
      Matrix w = random_matrix(rng, cols, 1 + rng.below_int(30));

      Matrix s, p;
      K::serial::matmul(x, w, s, K::Transpose::None);
      K::omp::matmul(x, w, p, K::Transpose::None);
      CHECK(s == p);

      K::serial::add_rowvec(x, bias, s);
      K::omp::add_rowvec(x, bias, p);
      CHECK(s == p);

      Matrix sm;
      K::serial::softmax_rows(x, sm);
      K::omp::softmax_rows(x, p);
      CHECK(sm == p);

      K::serial::softmax_rows_backward(sm, y, s);
      K::omp::softmax_rows_backward(sm, y, p);
      CHECK(s == p);

      K::serial::layernorm_rows(x, 1e-5, s);
      K::omp::layernorm_rows(x, 1e-5, p);
      CHECK(s == p);

      K::serial::layernorm_rows_backward(x, y, 1e-5, s);
      K::omp::layernorm_rows_backward(x, y, 1e-5, p);
      CHECK(s == p);

      K::serial::gelu(x, s);
      K::omp::gelu(x, p);
      CHECK(s == p);

      K::serial::gelu_backward(x, y, s);
      K::omp::gelu_backward(x, y, p);
      CHECK(s == p);

      K::serial::l2_normalize_rows(x, 1e-12, s);
      K::omp::l2_normalize_rows(x, 1e-12, p);
      CHECK(s == p);

      K::serial::l2_normalize_rows_backward(x, y, 1e-12, s);
      K::omp::l2_normalize_rows_backward(x, y, 1e-12, p);
      CHECK(s == p);
    }
  }
  omp_set_num_threads(saved);
}

TEST_CASE("softmax rows are nonnegative and sum to one") {
  Rng rng(3);
  Matrix x = random_matrix(rng, 20, 13, 5.0);
  x(0, 0) = 1e4;  // extreme logit gaps underflow to exact zeros, never overflow
  Matrix y = K::softmax_rows(x);
  CHECK(y.all_finite());
  for (int i = 0; i < y.rows; ++i) {
    double sum = 0.0;
    for (int j = 0; j < y.cols; ++j) {
      CHECK(y(i, j) >= 0.0);
      sum += y(i, j);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("layernorm rows have zero mean and unit variance") {
  Rng rng(4);
  Matrix x = random_matrix(rng, 10, 32, 3.0);
  Matrix y = K::layernorm_rows(x);
  for (int i = 0; i < y.rows; ++i) {
    double mean = 0.0, var = 0.0;
    for (int j = 0; j < y.cols; ++j) mean += y(i, j);
    mean /= y.cols;
    for (int j = 0; j < y.cols; ++j) var += (y(i, j) - mean) * (y(i, j) - mean);
    var /= y.cols;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("gelu matches known values and tails") {
  Matrix x = mmlnet::Matrix::row_vector({0.0, 1.0, -1.0, 10.0, -10.0});
  Matrix y = K::gelu(x);
  CHECK(y(0, 0) == 0.0);
  CHECK(y(0, 1) == doctest::Approx(0.8411919906).epsilon(1e-9));
  CHECK(y(0, 2) == doctest::Approx(-0.1588080094).epsilon(1e-9));
  CHECK(y(0, 3) == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(std::abs(y(0, 4)) < 1e-9);
}

TEST_CASE("l2 normalization produces unit rows and keeps zero rows finite") {
  Rng rng(5);
  Matrix x = random_matrix(rng, 6, 8);
  for (int j = 0; j < x.cols; ++j) x(2, j) = 0.0;
  Matrix y = K::l2_normalize_rows(x);
  for (int i = 0; i < y.rows; ++i) {
    double sq = 0.0;
    for (int j = 0; j < y.cols; ++j) sq += y(i, j) * y(i, j);
    if (i == 2) {
      CHECK(sq == 0.0);
    } else {
      CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  CHECK(y.all_finite());
}

TEST_CASE("backward kernels agree with finite differences") {
  Rng rng(6);
  const Matrix x = random_matrix(rng, 4, 6);
  const Matrix dout = random_matrix(rng, 4, 6);
  auto weighted = [&](const Matrix& y) {
    double acc = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) acc += dout.data[i] * y.data[i];
    return acc;
  };

  SUBCASE("softmax") {
    Matrix dx = K::softmax_rows_backward(K::softmax_rows(x), dout);
    fd_check([&](const Matrix& p) { return weighted(K::softmax_rows(p)); }, x, dx);
  }
  SUBCASE("layernorm") {
    Matrix dx = K::layernorm_rows_backward(x, dout);
    fd_check([&](const Matrix& p) { return weighted(K::layernorm_rows(p)); }, x, dx);
  }
  SUBCASE("gelu") {
    Matrix dx = K::gelu_backward(x, dout);
    fd_check([&](const Matrix& p) { return weighted(K::gelu(p)); }, x, dx);
  }
  SUBCASE("l2 normalize") {
    Matrix dx = K::l2_normalize_rows_backward(x, dout);
    fd_check([&](const Matrix& p) { return weighted(K::l2_normalize_rows(p)); }, x, dx);
  }
}
