#include "mmlnet/core/kernels.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mmlnet::kernels {
namespace {

// Per-row bodies shared by serial:: and omp::. Both variants run the exact
// same code per row; the omp variants only change which thread runs which
// row, so outputs are bitwise identical for any thread count.

void matmul_shape(const Matrix& a, const Matrix& b, Transpose t, int& m, int& n, int& k) {
  switch (t) {
    case Transpose::None: m = a.rows; k = a.cols; n = b.cols; break;
    case Transpose::A:    m = a.cols; k = a.rows; n = b.cols; break;
    case Transpose::B:    m = a.rows; k = a.cols; n = b.rows; break;
  }
  const int b_inner = (t == Transpose::B) ? b.cols : b.rows;
  if (k != b_inner) throw std::invalid_argument("matmul: inner dimensions differ");
}

void matmul_row(const Matrix& a, const Matrix& b, Matrix& c, Transpose t, int i) {
  double* ci = c.row(i);
  if (t == Transpose::B) {
    const double* ai = a.row(i);
    for (int j = 0; j < c.cols; ++j) {
      const double* bj = b.row(j);
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += ai[k] * bj[k];
      ci[j] = acc;
    }
    return;
  }
  for (int j = 0; j < c.cols; ++j) ci[j] = 0.0;
  const int inner = (t == Transpose::A) ? a.rows : a.cols;
  for (int k = 0; k < inner; ++k) {
    const double aik = (t == Transpose::A) ? a(k, i) : a(i, k);
    const double* bk = b.row(k);
    for (int j = 0; j < c.cols; ++j) ci[j] += aik * bk[j];
  }
}

void add_row(const Matrix& in, const Matrix& bias, Matrix& out, int i) {
  const double* x = in.row(i);
  double* y = out.row(i);
  for (int j = 0; j < in.cols; ++j) y[j] = x[j] + bias.data[j];
}

void mul_row(const Matrix& in, const Matrix& scale, Matrix& out, int i) {
  const double* x = in.row(i);
  double* y = out.row(i);
  for (int j = 0; j < in.cols; ++j) y[j] = x[j] * scale.data[j];
}

void softmax_row(const Matrix& in, Matrix& out, int i) {
  const double* x = in.row(i);
  double* y = out.row(i);
  double mx = x[0];
  for (int j = 1; j < in.cols; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (int j = 0; j < in.cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const double inv = 1.0 / sum;
  for (int j = 0; j < in.cols; ++j) y[j] *= inv;
}

void softmax_backward_row(const Matrix& out, const Matrix& dout, Matrix& din, int i) {
  const double* y = out.row(i);
  const double* dy = dout.row(i);
  double* dx = din.row(i);
  double dot = 0.0;
  for (int j = 0; j < out.cols; ++j) dot += y[j] * dy[j];
  for (int j = 0; j < out.cols; ++j) dx[j] = y[j] * (dy[j] - dot);
}

void layernorm_row(const Matrix& in, double eps, Matrix& out, int i) {
  const double* x = in.row(i);
  double* y = out.row(i);
  const int n = in.cols;
  double mean = 0.0;
  for (int j = 0; j < n; ++j) mean += x[j];
  mean /= n;
  double var = 0.0;
  for (int j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + eps);
  for (int j = 0; j < n; ++j) y[j] = (x[j] - mean) * inv;
}

void layernorm_backward_row(const Matrix& in, const Matrix& dout, double eps, Matrix& din, int i) {
  const double* x = in.row(i);
  const double* dy = dout.row(i);
  double* dx = din.row(i);
  const int n = in.cols;
  double mean = 0.0;
  for (int j = 0; j < n; ++j) mean += x[j];
  mean /= n;
  double var = 0.0;
  for (int j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + eps);
  double dy_mean = 0.0;
  double dyx_mean = 0.0;
  for (int j = 0; j < n; ++j) {
    const double xh = (x[j] - mean) * inv;
    dy_mean += dy[j];
    dyx_mean += dy[j] * xh;
  }
  dy_mean /= n;
  dyx_mean /= n;
  for (int j = 0; j < n; ++j) {
    const double xh = (x[j] - mean) * inv;
    dx[j] = inv * (dy[j] - dy_mean - xh * dyx_mean);
  }
}

constexpr double kGeluCoef = 0.7978845608028653558798921198687;  // sqrt(2/pi)

double gelu_scalar(double x) {
  const double u = kGeluCoef * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad_scalar(double x) {
  const double u = kGeluCoef * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluCoef * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

void gelu_row(const Matrix& in, Matrix& out, int i) {
  const double* x = in.row(i);
  double* y = out.row(i);
  for (int j = 0; j < in.cols; ++j) y[j] = gelu_scalar(x[j]);
}

void gelu_backward_row(const Matrix& in, const Matrix& dout, Matrix& din, int i) {
  const double* x = in.row(i);
  const double* dy = dout.row(i);
  double* dx = din.row(i);
  for (int j = 0; j < in.cols; ++j) dx[j] = dy[j] * gelu_grad_scalar(x[j]);
}

void l2norm_row(const Matrix& in, double eps, Matrix& out, int i) {
  const double* x = in.row(i);
  double* y = out.row(i);
  double sq = 0.0;
  for (int j = 0; j < in.cols; ++j) sq += x[j] * x[j];
  const double inv = 1.0 / std::max(std::sqrt(sq), eps);
  for (int j = 0; j < in.cols; ++j) y[j] = x[j] * inv;
}

void l2norm_backward_row(const Matrix& in, const Matrix& dout, double eps, Matrix& din, int i) {
  const double* x = in.row(i);
  const double* dy = dout.row(i);
  double* dx = din.row(i);
  double sq = 0.0;
  for (int j = 0; j < in.cols; ++j) sq += x[j] * x[j];
  const double norm = std::sqrt(sq);
  if (norm <= eps) {
    // Below eps the forward map is the constant scale 1/eps.
    const double inv = 1.0 / eps;
    for (int j = 0; j < in.cols; ++j) dx[j] = dy[j] * inv;
    return;
  }
  double dot = 0.0;
  for (int j = 0; j < in.cols; ++j) dot += x[j] * dy[j];
  const double inv = 1.0 / norm;
  const double inv3 = inv * inv * inv;
  for (int j = 0; j < in.cols; ++j) dx[j] = dy[j] * inv - x[j] * dot * inv3;
}

void check_same(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

void check_rowvec(const Matrix& in, const Matrix& v, const char* what) {
  if (v.rows != 1 || v.cols != in.cols) {
    throw std::invalid_argument(std::string(what) + ": expected 1x" + std::to_string(in.cols) +
                                " row vector");
  }
}

}  // namespace

namespace serial {

void matmul(const Matrix& a, const Matrix& b, Matrix& c, Transpose t) {
  int m, n, k;
  matmul_shape(a, b, t, m, n, k);
  c = Matrix(m, n);
  for (int i = 0; i < m; ++i) matmul_row(a, b, c, t, i);
}

void add_rowvec(const Matrix& in, const Matrix& bias, Matrix& out) {
  check_rowvec(in, bias, "add_rowvec");
  out = Matrix(in.rows, in.cols);
  for (int i = 0; i < in.rows; ++i) add_row(in, bias, out, i);
}

void mul_rowvec(const Matrix& in, const Matrix& scale, Matrix& out) {
  check_rowvec(in, scale, "mul_rowvec");
  out = Matrix(in.rows, in.cols);
  for (int i = 0; i < in.rows; ++i) mul_row(in, scale, out, i);
}

void softmax_rows(const Matrix& in, Matrix& out) {
  out = Matrix(in.rows, in.cols);
  for (int i = 0; i < in.rows; ++i) softmax_row(in, out, i);
}

void softmax_rows_backward(const Matrix& out, const Matrix& dout, Matrix& din) {
  check_same(out, dout, "softmax_rows_backward");
  din = Matrix(out.rows, out.cols);
  for (int i = 0; i < out.rows; ++i) softmax_backward_row(out, dout, din, i);
}

void layernorm_rows(const Matrix& in, double eps, Matrix& out) {
  out = Matrix(in.rows, in.cols);
  for (int i = 0; i < in.rows; ++i) layernorm_row(in, eps, out, i);
}

void layernorm_rows_backward(const Matrix& in, const Matrix& dout, double eps, Matrix& din) {
  check_same(in, dout, "layernorm_rows_backward");
  din = Matrix(in.rows, in.cols);
  for (int i = 0; i < in.rows; ++i) layernorm_backward_row(in, dout, eps, din, i);
}

void gelu(const Matrix& in, Matrix& out) {
  out = Matrix(in.rows, in.cols);
  for (int i = 0; i < in.rows; ++i) gelu_row(in, out, i);
}

void gelu_backward(const Matrix& in, const Matrix& dout, Matrix& din) {
  check_same(in, dout, "gelu_backward");
  din = Matrix(in.rows, in.cols);
  for (int i = 0; i < in.rows; ++i) gelu_backward_row(in, dout, din, i);
}

void l2_normalize_rows(const Matrix& in, double eps, Matrix& out) {
  out = Matrix(in.rows, in.cols);
  for (int i = 0; i < in.rows; ++i) l2norm_row(in, eps, out, i);
}

void l2_normalize_rows_backward(const Matrix& in, const Matrix& dout, double eps, Matrix& din) {
  check_same(in, dout, "l2_normalize_rows_backward");
  din = Matrix(in.rows, in.cols);
  for (int i = 0; i < in.rows; ++i) l2norm_backward_row(in, dout, eps, din, i);
}

}  // namespace serial

namespace omp {

void matmul(const Matrix& a, const Matrix& b, Matrix& c, Transpose t) {
  int m, n, k;
  matmul_shape(a, b, t, m, n, k);
  c = Matrix(m, n);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) matmul_row(a, b, c, t, i);
}

void add_rowvec(const Matrix& in, const Matrix& bias, Matrix& out) {
  check_rowvec(in, bias, "add_rowvec");
  out = Matrix(in.rows, in.cols);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < in.rows; ++i) add_row(in, bias, out, i);
}

void mul_rowvec(const Matrix& in, const Matrix& scale, Matrix& out) {
  check_rowvec(in, scale, "mul_rowvec");
  out = Matrix(in.rows, in.cols);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < in.rows; ++i) mul_row(in, scale, out, i);
}

void softmax_rows(const Matrix& in, Matrix& out) {
  out = Matrix(in.rows, in.cols);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < in.rows; ++i) softmax_row(in, out, i);
}

void softmax_rows_backward(const Matrix& out, const Matrix& dout, Matrix& din) {
  check_same(out, dout, "softmax_rows_backward");
  din = Matrix(out.rows, out.cols);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < out.rows; ++i) softmax_backward_row(out, dout, din, i);
}

void layernorm_rows(const Matrix& in, double eps, Matrix& out) {
  out = Matrix(in.rows, in.cols);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < in.rows; ++i) layernorm_row(in, eps, out, i);
}

void layernorm_rows_backward(const Matrix& in, const Matrix& dout, double eps, Matrix& din) {
  check_same(in, dout, "layernorm_rows_backward");
  din = Matrix(in.rows, in.cols);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < in.rows; ++i) layernorm_backward_row(in, dout, eps, din, i);
}

void gelu(const Matrix& in, Matrix& out) {
  out = Matrix(in.rows, in.cols);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < in.rows; ++i) gelu_row(in, out, i);
}

void gelu_backward(const Matrix& in, const Matrix& dout, Matrix& din) {
  check_same(in, dout, "gelu_backward");
  din = Matrix(in.rows, in.cols);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < in.rows; ++i) gelu_backward_row(in, dout, din, i);
}

void l2_normalize_rows(const Matrix& in, double eps, Matrix& out) {
  out = Matrix(in.rows, in.cols);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < in.rows; ++i) l2norm_row(in, eps, out, i);
}

void l2_normalize_rows_backward(const Matrix& in, const Matrix& dout, double eps, Matrix& din) {
  check_same(in, dout, "l2_normalize_rows_backward");
  din = Matrix(in.rows, in.cols);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < in.rows; ++i) l2norm_backward_row(in, dout, eps, din, i);
}

}  // namespace omp

namespace {

bool big_enough(std::size_t work) { return work >= kParallelThreshold; }

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b, Transpose t) {
  int m, n, k;
  matmul_shape(a, b, t, m, n, k);
  Matrix c;
  const std::size_t work =
      static_cast<std::size_t>(m) * static_cast<std::size_t>(n) * static_cast<std::size_t>(k);
  if (big_enough(work)) {
    omp::matmul(a, b, c, t);
  } else {
    serial::matmul(a, b, c, t);
  }
  return c;
}

Matrix add_rowvec(const Matrix& in, const Matrix& bias) {
  Matrix out;
  big_enough(in.size()) ? omp::add_rowvec(in, bias, out) : serial::add_rowvec(in, bias, out);
  return out;
}

Matrix mul_rowvec(const Matrix& in, const Matrix& scale) {
  Matrix out;
  big_enough(in.size()) ? omp::mul_rowvec(in, scale, out) : serial::mul_rowvec(in, scale, out);
  return out;
}

Matrix softmax_rows(const Matrix& in) {
  Matrix out;
  big_enough(in.size()) ? omp::softmax_rows(in, out) : serial::softmax_rows(in, out);
  return out;
}

Matrix softmax_rows_backward(const Matrix& out, const Matrix& dout) {
  Matrix din;
  big_enough(out.size()) ? omp::softmax_rows_backward(out, dout, din)
                         : serial::softmax_rows_backward(out, dout, din);
  return din;
}

Matrix layernorm_rows(const Matrix& in, double eps) {
  Matrix out;
  big_enough(in.size()) ? omp::layernorm_rows(in, eps, out) : serial::layernorm_rows(in, eps, out);
  return out;
}

Matrix layernorm_rows_backward(const Matrix& in, const Matrix& dout, double eps) {
  Matrix din;
  big_enough(in.size()) ? omp::layernorm_rows_backward(in, dout, eps, din)
                        : serial::layernorm_rows_backward(in, dout, eps, din);
  return din;
}

Matrix gelu(const Matrix& in) {
  Matrix out;
  big_enough(in.size()) ? omp::gelu(in, out) : serial::gelu(in, out);
  return out;
}

Matrix gelu_backward(const Matrix& in, const Matrix& dout) {
  Matrix din;
  big_enough(in.size()) ? omp::gelu_backward(in, dout, din)
                        : serial::gelu_backward(in, dout, din);
  return din;
}

Matrix l2_normalize_rows(const Matrix& in, double eps) {
  Matrix out;
  big_enough(in.size()) ? omp::l2_normalize_rows(in, eps, out)
                        : serial::l2_normalize_rows(in, eps, out);
  return out;
}

Matrix l2_normalize_rows_backward(const Matrix& in, const Matrix& dout, double eps) {
  Matrix din;
  big_enough(in.size()) ? omp::l2_normalize_rows_backward(in, dout, eps, din)
                        : serial::l2_normalize_rows_backward(in, dout, eps, din);
  return din;
}

}  // namespace mmlnet::kernels
