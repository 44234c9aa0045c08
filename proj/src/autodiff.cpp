#include "mmlnet/core/autodiff.hpp"

#include <stdexcept>
#include <string>

#include "mmlnet/core/kernels.hpp"

namespace mmlnet::ad {
namespace {

void add_into(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

Matrix colsum(const Matrix& m) {
  Matrix out(1, m.cols);
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.row(r);
    for (int c = 0; c < m.cols; ++c) out.data[static_cast<std::size_t>(c)] += row[c];
  }
  return out;
}

void check(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(std::string("tape: ") + msg);
}

}  // namespace

Value Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  const Node& n = nodes_.back();
  return Value{static_cast<int>(nodes_.size()) - 1, n.out.rows, n.out.cols};
}

Matrix& Tape::ensure_grad(int node) {
  Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.grad.empty()) n.grad = Matrix(n.out.rows, n.out.cols);
  return n.grad;
}

const Matrix& Tape::value(Value v) const { return nodes_[static_cast<std::size_t>(v.node)].out; }

Matrix Tape::grad(Value v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.node)];
  if (n.grad.empty()) return Matrix(n.out.rows, n.out.cols);
  return n.grad;
}

Value Tape::constant(Matrix m) {
  Node n;
  n.op = Op::Const;
  n.out = std::move(m);
  return push(std::move(n));
}

Value Tape::input(Matrix m) {
  Node n;
  n.op = Op::Input;
  n.out = std::move(m);
  return push(std::move(n));
}

Value Tape::param(const Param& p) {
  Node n;
  n.op = Op::Param;
  n.out = p.value;
  n.param = &p;
  return push(std::move(n));
}

Value Tape::embed_rows(const Param& table, std::vector<int> rows) {
  Node n;
  n.op = Op::EmbedRows;
  n.param = &table;
  n.row_ids = std::move(rows);
  n.out = Matrix(static_cast<int>(n.row_ids.size()), table.value.cols);
  for (std::size_t i = 0; i < n.row_ids.size(); ++i) {
    const int r = n.row_ids[i];
    check(r >= 0 && r < table.value.rows, "embed_rows: row out of range");
    const double* src = table.value.row(r);
    double* dst = n.out.row(static_cast<int>(i));
    for (int c = 0; c < table.value.cols; ++c) dst[c] = src[c];
  }
  return push(std::move(n));
}

Value Tape::add(Value a, Value b) {
  check(a.rows == b.rows && a.cols == b.cols, "add: shape mismatch");
  Node n;
  n.op = Op::Add;
  n.inputs = {a.node, b.node};
  n.out = value(a);
  add_into(n.out, value(b));
  return push(std::move(n));
}

Value Tape::add_rowvec(Value x, Value bias) {
  Node n;
  n.op = Op::AddRowvec;
  n.inputs = {x.node, bias.node};
  n.out = kernels::add_rowvec(value(x), value(bias));
  return push(std::move(n));
}

Value Tape::mul_rowvec(Value x, Value scale) {
  Node n;
  n.op = Op::MulRowvec;
  n.inputs = {x.node, scale.node};
  n.out = kernels::mul_rowvec(value(x), value(scale));
  return push(std::move(n));
}

Value Tape::scale(Value x, double c) {
  Node n;
  n.op = Op::Scale;
  n.inputs = {x.node};
  n.scalar = c;
  n.out = value(x);
  for (double& v : n.out.data) v *= c;
  return push(std::move(n));
}

Value Tape::hadamard(Value x, Matrix mask) {
  check(mask.rows == x.rows && mask.cols == x.cols, "hadamard: shape mismatch");
  Node n;
  n.op = Op::Hadamard;
  n.inputs = {x.node};
  n.mask = std::move(mask);
  n.out = value(x);
  for (std::size_t i = 0; i < n.out.data.size(); ++i) n.out.data[i] *= n.mask.data[i];
  return push(std::move(n));
}

Value Tape::gelu(Value x) {
  Node n;
  n.op = Op::Gelu;
  n.inputs = {x.node};
  n.out = kernels::gelu(value(x));
  return push(std::move(n));
}

Value Tape::matmul(Value a, Value b) {
  Node n;
  n.op = Op::MatmulNN;
  n.inputs = {a.node, b.node};
  n.out = kernels::matmul(value(a), value(b), kernels::Transpose::None);
  return push(std::move(n));
}

Value Tape::matmul_nt(Value a, Value b) {
  Node n;
  n.op = Op::MatmulNT;
  n.inputs = {a.node, b.node};
  n.out = kernels::matmul(value(a), value(b), kernels::Transpose::B);
  return push(std::move(n));
}

Value Tape::softmax_rows(Value x) {
  Node n;
  n.op = Op::SoftmaxRows;
  n.inputs = {x.node};
  n.out = kernels::softmax_rows(value(x));
  return push(std::move(n));
}

Value Tape::layernorm_rows(Value x) {
  Node n;
  n.op = Op::LayernormRows;
  n.inputs = {x.node};
  n.out = kernels::layernorm_rows(value(x));
  return push(std::move(n));
}

Value Tape::l2_normalize_rows(Value x) {
  Node n;
  n.op = Op::L2NormRows;
  n.inputs = {x.node};
  n.out = kernels::l2_normalize_rows(value(x));
  return push(std::move(n));
}

Value Tape::concat_rows(const std::vector<Value>& xs) {
  check(!xs.empty(), "concat_rows: empty input list");
  Node n;
  n.op = Op::ConcatRows;
  int rows = 0;
  const int cols = xs[0].cols;
  for (const Value& v : xs) {
    check(v.cols == cols, "concat_rows: column mismatch");
    n.inputs.push_back(v.node);
    rows += v.rows;
  }
  n.out = Matrix(rows, cols);
  int r = 0;
  for (const Value& v : xs) {
    const Matrix& m = value(v);
    for (int i = 0; i < m.rows; ++i, ++r) {
      const double* src = m.row(i);
      double* dst = n.out.row(r);
      for (int c = 0; c < cols; ++c) dst[c] = src[c];
    }
  }
  return push(std::move(n));
}

Value Tape::concat_cols(const std::vector<Value>& xs) {
  check(!xs.empty(), "concat_cols: empty input list");
  Node n;
  n.op = Op::ConcatCols;
  const int rows = xs[0].rows;
  int cols = 0;
  for (const Value& v : xs) {
    check(v.rows == rows, "concat_cols: row mismatch");
    n.inputs.push_back(v.node);
    cols += v.cols;
  }
  n.out = Matrix(rows, cols);
  int c0 = 0;
  for (const Value& v : xs) {
    const Matrix& m = value(v);
    for (int i = 0; i < rows; ++i) {
      const double* src = m.row(i);
      double* dst = n.out.row(i) + c0;
      for (int c = 0; c < m.cols; ++c) dst[c] = src[c];
    }
    c0 += m.cols;
  }
  return push(std::move(n));
}

Value Tape::slice_rows(Value x, int r0, int r1) {
  check(0 <= r0 && r0 < r1 && r1 <= x.rows, "slice_rows: bad bounds");
  Node n;
  n.op = Op::SliceRows;
  n.inputs = {x.node};
  n.bound0 = r0;
  n.bound1 = r1;
  const Matrix& m = value(x);
  n.out = Matrix(r1 - r0, m.cols);
  for (int i = r0; i < r1; ++i) {
    const double* src = m.row(i);
    double* dst = n.out.row(i - r0);
    for (int c = 0; c < m.cols; ++c) dst[c] = src[c];
  }
  return push(std::move(n));
}

Value Tape::slice_cols(Value x, int c0, int c1) {
  check(0 <= c0 && c0 < c1 && c1 <= x.cols, "slice_cols: bad bounds");
  Node n;
  n.op = Op::SliceCols;
  n.inputs = {x.node};
  n.bound0 = c0;
  n.bound1 = c1;
  const Matrix& m = value(x);
  n.out = Matrix(m.rows, c1 - c0);
  for (int i = 0; i < m.rows; ++i) {
    const double* src = m.row(i) + c0;
    double* dst = n.out.row(i);
    for (int c = 0; c < c1 - c0; ++c) dst[c] = src[c];
  }
  return push(std::move(n));
}

Value Tape::lincomb(Value coeffs, const std::vector<Value>& xs) {
  check(coeffs.rows == 1 && coeffs.cols == static_cast<int>(xs.size()),
        "lincomb: coeffs must be 1 x #inputs");
  check(!xs.empty(), "lincomb: empty input list");
  Node n;
  n.op = Op::Lincomb;
  n.inputs.push_back(coeffs.node);
  for (const Value& v : xs) {
    check(v.rows == xs[0].rows && v.cols == xs[0].cols, "lincomb: input shape mismatch");
    n.inputs.push_back(v.node);
  }
  const Matrix& w = value(coeffs);
  n.out = Matrix(xs[0].rows, xs[0].cols);
  for (std::size_t j = 0; j < xs.size(); ++j) {
    const double wj = w.data[j];
    const Matrix& m = value(xs[j]);
    for (std::size_t i = 0; i < n.out.data.size(); ++i) n.out.data[i] += wj * m.data[i];
  }
  return push(std::move(n));
}

Value Tape::custom(std::shared_ptr<CustomOp> op, const std::vector<Value>& inputs) {
  Node n;
  n.op = Op::Custom;
  n.custom_op = std::move(op);
  std::vector<const Matrix*> in_ptrs;
  for (const Value& v : inputs) {
    n.inputs.push_back(v.node);
    in_ptrs.push_back(&value(v));
  }
  n.out = n.custom_op->forward(in_ptrs);
  return push(std::move(n));
}

void Tape::backward(Value root) {
  check(root.rows == 1 && root.cols == 1, "backward: root must be 1x1");
  backward_from_seeds({{root, Matrix(1, 1, {1.0})}});
}

void Tape::backward_from_seeds(const std::vector<std::pair<Value, Matrix>>& seeds) {
  for (Node& n : nodes_) n.grad = Matrix();
  for (const auto& [v, seed] : seeds) {
    check(seed.rows == v.rows && seed.cols == v.cols, "backward: seed shape mismatch");
    add_into(ensure_grad(v.node), seed);
  }
  backward_sweep();
}

void Tape::backward_sweep() {
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    if (!nodes_[static_cast<std::size_t>(i)].grad.empty()) backward_node(i);
  }
}

void Tape::backward_node(int idx) {
  Node& n = nodes_[static_cast<std::size_t>(idx)];
  const Matrix& g = n.grad;
  switch (n.op) {
    case Op::Const:
    case Op::Input:
    case Op::Param:
    case Op::EmbedRows:
      break;  // leaves: gradients stay on the node
    case Op::Add:
      add_into(ensure_grad(n.inputs[0]), g);
      add_into(ensure_grad(n.inputs[1]), g);
      break;
    case Op::AddRowvec:
      add_into(ensure_grad(n.inputs[0]), g);
      add_into(ensure_grad(n.inputs[1]), colsum(g));
      break;
    case Op::MulRowvec: {
      const Matrix& x = nodes_[static_cast<std::size_t>(n.inputs[0])].out;
      const Matrix& s = nodes_[static_cast<std::size_t>(n.inputs[1])].out;
      add_into(ensure_grad(n.inputs[0]), kernels::mul_rowvec(g, s));
      Matrix gx = g;
      for (int r = 0; r < gx.rows; ++r) {
        double* grow = gx.row(r);
        const double* xrow = x.row(r);
        for (int c = 0; c < gx.cols; ++c) grow[c] *= xrow[c];
      }
      add_into(ensure_grad(n.inputs[1]), colsum(gx));
      break;
    }
    case Op::Scale: {
      Matrix dx = g;
      for (double& v : dx.data) v *= n.scalar;
      add_into(ensure_grad(n.inputs[0]), dx);
      break;
    }
    case Op::Hadamard: {
      Matrix dx = g;
      for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= n.mask.data[i];
      add_into(ensure_grad(n.inputs[0]), dx);
      break;
    }
    case Op::Gelu: {
      const Matrix& x = nodes_[static_cast<std::size_t>(n.inputs[0])].out;
      add_into(ensure_grad(n.inputs[0]), kernels::gelu_backward(x, g));
      break;
    }
    case Op::MatmulNN: {
      const Matrix& a = nodes_[static_cast<std::size_t>(n.inputs[0])].out;
      const Matrix& b = nodes_[static_cast<std::size_t>(n.inputs[1])].out;
      add_into(ensure_grad(n.inputs[0]), kernels::matmul(g, b, kernels::Transpose::B));
      add_into(ensure_grad(n.inputs[1]), kernels::matmul(a, g, kernels::Transpose::A));
      break;
    }
    case Op::MatmulNT: {
      // c = a . b^T  =>  da = g . b,  db = g^T . a
      const Matrix& a = nodes_[static_cast<std::size_t>(n.inputs[0])].out;
      const Matrix& b = nodes_[static_cast<std::size_t>(n.inputs[1])].out;
      add_into(ensure_grad(n.inputs[0]), kernels::matmul(g, b, kernels::Transpose::None));
      add_into(ensure_grad(n.inputs[1]), kernels::matmul(g, a, kernels::Transpose::A));
      break;
    }
    case Op::SoftmaxRows:
      add_into(ensure_grad(n.inputs[0]), kernels::softmax_rows_backward(n.out, g));
      break;
    case Op::LayernormRows: {
      const Matrix& x = nodes_[static_cast<std::size_t>(n.inputs[0])].out;
      add_into(ensure_grad(n.inputs[0]), kernels::layernorm_rows_backward(x, g));
      break;
    }
    case Op::L2NormRows: {
      const Matrix& x = nodes_[static_cast<std::size_t>(n.inputs[0])].out;
      add_into(ensure_grad(n.inputs[0]), kernels::l2_normalize_rows_backward(x, g));
      break;
    }
    case Op::ConcatRows: {
      int r = 0;
      for (int in : n.inputs) {
        Matrix& din = ensure_grad(in);
        for (int i = 0; i < din.rows; ++i, ++r) {
          const double* src = g.row(r);
          double* dst = din.row(i);
          for (int c = 0; c < din.cols; ++c) dst[c] += src[c];
        }
      }
      break;
    }
    case Op::ConcatCols: {
      int c0 = 0;
      for (int in : n.inputs) {
        Matrix& din = ensure_grad(in);
        for (int i = 0; i < din.rows; ++i) {
          const double* src = g.row(i) + c0;
          double* dst = din.row(i);
          for (int c = 0; c < din.cols; ++c) dst[c] += src[c];
        }
        c0 += din.cols;
      }
      break;
    }
    case Op::SliceRows: {
      Matrix& din = ensure_grad(n.inputs[0]);
      for (int i = n.bound0; i < n.bound1; ++i) {
        const double* src = g.row(i - n.bound0);
        double* dst = din.row(i);
        for (int c = 0; c < din.cols; ++c) dst[c] += src[c];
      }
      break;
    }
    case Op::SliceCols: {
      Matrix& din = ensure_grad(n.inputs[0]);
      for (int i = 0; i < din.rows; ++i) {
        const double* src = g.row(i);
        double* dst = din.row(i) + n.bound0;
        for (int c = 0; c < n.bound1 - n.bound0; ++c) dst[c] += src[c];
      }
      break;
    }
    case Op::Lincomb: {
      const Matrix& w = nodes_[static_cast<std::size_t>(n.inputs[0])].out;
      Matrix& dw = ensure_grad(n.inputs[0]);
      for (std::size_t j = 1; j < n.inputs.size(); ++j) {
        const Matrix& xj = nodes_[static_cast<std::size_t>(n.inputs[j])].out;
        double dot = 0.0;
        for (std::size_t i = 0; i < g.data.size(); ++i) dot += g.data[i] * xj.data[i];
        dw.data[j - 1] += dot;
        Matrix dx = g;
        const double wj = w.data[j - 1];
        for (double& v : dx.data) v *= wj;
        add_into(ensure_grad(n.inputs[j]), dx);
      }
      break;
    }
    case Op::Custom: {
      std::vector<const Matrix*> in_ptrs;
      std::vector<Matrix*> din_ptrs;
      for (int in : n.inputs) {
        in_ptrs.push_back(&nodes_[static_cast<std::size_t>(in)].out);
        din_ptrs.push_back(&ensure_grad(in));
      }
      n.custom_op->backward(in_ptrs, n.out, g, din_ptrs);
      break;
    }
  }
}

void Tape::accumulate_param_grads(ParamStore& store) const {
  for (const Node& n : nodes_) {
    if (n.grad.empty()) continue;
    if (n.op == Op::Param) {
      Matrix& dst = store.by_id(n.param->id).grad;
      add_into(dst, n.grad);
    } else if (n.op == Op::EmbedRows) {
      Matrix& dst = store.by_id(n.param->id).grad;
      for (std::size_t i = 0; i < n.row_ids.size(); ++i) {
        double* drow = dst.row(n.row_ids[i]);
        const double* src = n.grad.row(static_cast<int>(i));
        for (int c = 0; c < dst.cols; ++c) drow[c] += src[c];
      }
    }
  }
}

}  // namespace mmlnet::ad
