#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "mmlnet/core/matrix.hpp"
#include "mmlnet/core/params.hpp"

namespace mmlnet::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid for that tape.
struct Value {
  int node = -1;
  int rows = 0;
  int cols = 0;
};

/// Extension point for fused operations (losses) that live outside the core.
/// backward() must *accumulate* into dinputs, which arrive zero-initialized
/// at the right shapes.
struct CustomOp {
  virtual ~CustomOp() = default;
  virtual Matrix forward(const std::vector<const Matrix*>& inputs) = 0;
  virtual void backward(const std::vector<const Matrix*>& inputs, const Matrix& out,
                        const Matrix& dout, const std::vector<Matrix*>& dinputs) = 0;
};

/// Define-by-run reverse-mode tape over Matrix values. Forward results are
/// computed eagerly at op creation through the kernels layer; backward()
/// replays the tape in reverse. A tape never mutates ParamStore gradients
/// itself: accumulate_param_grads() exports them after backward, in param-id
/// order, so multi-tape accumulation is deterministic.
class Tape {
 public:
  // Leaves.
  Value constant(Matrix m);               // no gradient tracked
  Value input(Matrix m);                  // gradient tracked, read via grad()
  Value param(const Param& p);
  Value embed_rows(const Param& table, std::vector<int> rows);

  // Elementwise / broadcast.
  Value add(Value a, Value b);
  Value add_rowvec(Value x, Value bias);
  Value mul_rowvec(Value x, Value scale);
  Value scale(Value x, double c);
  Value hadamard(Value x, Matrix mask);   // x .* mask, mask is constant
  Value gelu(Value x);

  // Matrix products.
  Value matmul(Value a, Value b);         // a  . b
  Value matmul_nt(Value a, Value b);      // a  . b^T

  // Row-wise normalizers.
  Value softmax_rows(Value x);
  Value layernorm_rows(Value x);
  Value l2_normalize_rows(Value x);

  // Shape plumbing.
  Value concat_rows(const std::vector<Value>& xs);
  Value concat_cols(const std::vector<Value>& xs);
  Value slice_rows(Value x, int r0, int r1);
  Value slice_cols(Value x, int c0, int c1);

  // out = sum_j coeffs(0, j) * xs[j]; coeffs is 1 x k, all xs share a shape.
  Value lincomb(Value coeffs, const std::vector<Value>& xs);

  Value custom(std::shared_ptr<CustomOp> op, const std::vector<Value>& inputs);

  const Matrix& value(Value v) const;
  /// Gradient of the last backward pass; zeros if the node was not reached.
  Matrix grad(Value v) const;

  /// Backward from a 1x1 root with seed 1.
  void backward(Value root);
  /// Backward from explicit output seeds (used when a later tape supplies
  /// gradients for this tape's outputs).
  void backward_from_seeds(const std::vector<std::pair<Value, Matrix>>& seeds);

  /// Adds gradients of Param / EmbedRows leaves into store.grad buffers.
  /// Walks nodes in creation order; embeddings scatter only touched rows.
  void accumulate_param_grads(ParamStore& store) const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op {
    Const, Input, Param, EmbedRows, Add, AddRowvec, MulRowvec, Scale, Hadamard,
    Gelu, MatmulNN, MatmulNT, SoftmaxRows, LayernormRows, L2NormRows,
    ConcatRows, ConcatCols, SliceRows, SliceCols, Lincomb, Custom
  };

  struct Node {
    Op op;
    std::vector<int> inputs;
    Matrix out;
    Matrix grad;                      // empty until reached by backward
    double scalar = 0.0;              // Scale
    int bound0 = 0, bound1 = 0;       // Slice*
    Matrix mask;                      // Hadamard
    const Param* param = nullptr;     // Param / EmbedRows
    std::vector<int> row_ids;         // EmbedRows
    std::shared_ptr<CustomOp> custom_op;
  };

  Value push(Node node);
  Matrix& ensure_grad(int node);
  void backward_sweep();
  void backward_node(int i);

  std::vector<Node> nodes_;
};

}  // namespace mmlnet::ad
