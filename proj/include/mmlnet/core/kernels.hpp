#pragma once

#include "mmlnet/core/matrix.hpp"

namespace mmlnet::kernels {

/// Row-parallel kernels. Every function exists twice: `serial::` is the
/// reference implementation, `omp::` parallelizes across output rows only,
/// so per-element accumulation order matches serial and results are bitwise
/// identical for any thread count. The unqualified wrappers dispatch to the
/// OpenMP variant above a size threshold and are what library code calls.

enum class Transpose { None, A, B };

namespace serial {

// c = op_a(a) * op_b(b). Shapes after transposition must agree.
void matmul(const Matrix& a, const Matrix& b, Matrix& c, Transpose t);
// out(r, :) = in(r, :) + bias(0, :)
void add_rowvec(const Matrix& in, const Matrix& bias, Matrix& out);
// out(r, :) = in(r, :) .* scale(0, :)
void mul_rowvec(const Matrix& in, const Matrix& scale, Matrix& out);
void softmax_rows(const Matrix& in, Matrix& out);
// din = (dout - rowsum(dout .* out) .* 1) .* out, the softmax Jacobian action.
void softmax_rows_backward(const Matrix& out, const Matrix& dout, Matrix& din);
void layernorm_rows(const Matrix& in, double eps, Matrix& out);
void layernorm_rows_backward(const Matrix& in, const Matrix& dout, double eps, Matrix& din);
void gelu(const Matrix& in, Matrix& out);
void gelu_backward(const Matrix& in, const Matrix& dout, Matrix& din);
void l2_normalize_rows(const Matrix& in, double eps, Matrix& out);
void l2_normalize_rows_backward(const Matrix& in, const Matrix& dout, double eps, Matrix& din);

}  // namespace serial

namespace omp {

void matmul(const Matrix& a, const Matrix& b, Matrix& c, Transpose t);
void add_rowvec(const Matrix& in, const Matrix& bias, Matrix& out);
void mul_rowvec(const Matrix& in, const Matrix& scale, Matrix& out);
void softmax_rows(const Matrix& in, Matrix& out);
void softmax_rows_backward(const Matrix& out, const Matrix& dout, Matrix& din);
void layernorm_rows(const Matrix& in, double eps, Matrix& out);
void layernorm_rows_backward(const Matrix& in, const Matrix& dout, double eps, Matrix& din);
void gelu(const Matrix& in, Matrix& out);
void gelu_backward(const Matrix& in, const Matrix& dout, Matrix& din);
void l2_normalize_rows(const Matrix& in, double eps, Matrix& out);
void l2_normalize_rows_backward(const Matrix& in, const Matrix& dout, double eps, Matrix& din);

}  // namespace omp

// Work below this many total output elements is not worth a parallel region.
inline constexpr std::size_t kParallelThreshold = 4096;

Matrix matmul(const Matrix& a, const Matrix& b, Transpose t = Transpose::None);
Matrix add_rowvec(const Matrix& in, const Matrix& bias);
Matrix mul_rowvec(const Matrix& in, const Matrix& scale);
Matrix softmax_rows(const Matrix& in);
Matrix softmax_rows_backward(const Matrix& out, const Matrix& dout);
Matrix layernorm_rows(const Matrix& in, double eps = 1e-5);
Matrix layernorm_rows_backward(const Matrix& in, const Matrix& dout, double eps = 1e-5);
Matrix gelu(const Matrix& in);
Matrix gelu_backward(const Matrix& in, const Matrix& dout);
Matrix l2_normalize_rows(const Matrix& in, double eps = 1e-12);
Matrix l2_normalize_rows_backward(const Matrix& in, const Matrix& dout, double eps = 1e-12);

}  // namespace mmlnet::kernels
