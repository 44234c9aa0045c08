#include "mmlnet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "mmlnet/core/kernels.hpp"
#include "mmlnet/errors.hpp"

namespace mmlnet::losses {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kWeightFloor = 1e-12;

double dot(const double* a, const double* b, int d) {
  double s = 0.0;
  for (int i = 0; i < d; ++i) s += a[i] * b[i];
  return s;
}

double dot(const Matrix& a, const Matrix& b) {
  if (a.size() != b.size()) throw InternalError("losses: feature width mismatch");
  return dot(a.data.data(), b.data.data(), static_cast<int>(a.size()));
}

double logsumexp(const std::vector<double>& terms) {
  const double mx = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

double logsumexp2(double a, double b) {
  const double mx = std::max(a, b);
  return mx + std::log(std::exp(a - mx) + std::exp(b - mx));
}

double floored_weight(const Matrix& anchor_raw, const Matrix& other_raw, bool positive,
                      bool unit_weights) {
  if (unit_weights) return 1.0;
  return std::max(label_aware_weight(anchor_raw, other_raw, positive), kWeightFloor);
}

Matrix l2_normalized(const Matrix& m) { return kernels::l2_normalize_rows(m); }

const Matrix& branch_raw(const model::ExpertBundle& b, int m) {
  return m == 0 ? b.F_T : m == 1 ? b.F_I : b.f;
}

const Matrix& branch_prob(const model::ExpertBundle& b, int m) {
  return m == 0 ? b.y_h : m == 1 ? b.y_r : b.y_f;
}

}  // namespace

double label_aware_weight(const Matrix& anchor_raw, const Matrix& other_raw, bool positive) {
  const double na = std::sqrt(dot(anchor_raw, anchor_raw));
  const double nb = std::sqrt(dot(other_raw, other_raw));
  if (na == 0.0 || nb == 0.0)
    throw DataError("label_aware_weight: zero-norm feature vector has no direction");
  double c = dot(anchor_raw, other_raw) / (na * nb);
  c = std::clamp(c, -1.0, 1.0);
  return positive ? 1.0 - c : 1.0 + c;
}

std::optional<double> mml_loss(const ContrastiveBatch& batch, const MmlOptions& opts) {
  if (batch.tau <= 0.0) throw ConfigError("mml_loss: tau must be positive");
  if (batch.positives.empty() || batch.negatives.empty()) return std::nullopt;

  std::vector<double> neg_terms;
  neg_terms.reserve(batch.negatives.size());
  for (const ContrastivePair& n : batch.negatives) {
    const double w = floored_weight(batch.anchor_raw, n.raw, false, opts.unit_weights);
    neg_terms.push_back(std::log(w) + dot(batch.anchor_proj, n.proj) / batch.tau);
  }
  const double neg_lse = logsumexp(neg_terms);

  double acc = 0.0;
  for (const ContrastivePair& p : batch.positives) {
    const double w = floored_weight(batch.anchor_raw, p.raw, true, opts.unit_weights);
    const double tp = std::log(w) + dot(batch.anchor_proj, p.proj) / batch.tau;
    const double denom = opts.include_positive_in_denominator ? logsumexp2(neg_lse, tp) : neg_lse;
    acc += denom - tp;
  }
  return acc / static_cast<double>(batch.positives.size());
}

double cross_entropy(const Matrix& probs, const std::vector<int>& labels) {
  if (probs.rows == 0) throw DataError("cross_entropy: empty batch");
  if (static_cast<std::size_t>(probs.rows) != labels.size())
    throw DataError("cross_entropy: " + std::to_string(probs.rows) + " predictions for " +
                    std::to_string(labels.size()) + " labels");
  double acc = 0.0;
  for (int i = 0; i < probs.rows; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= probs.cols)
      throw DataError("cross_entropy: label " + std::to_string(y) + " outside class range");
    acc += -std::log(std::max(probs(i, y), kProbFloor));
  }
  return acc / probs.rows;
}

bool batch_has_contrastive_term(const std::vector<int>& labels) {
  const int n = static_cast<int>(labels.size());
  for (int i = 0; i < n; ++i) {
    int pos = 0, neg = 0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)] ? pos : neg)++;
    }
    if (pos > 0 && neg > 0) return true;
  }
  return false;
}

LossBreakdown total_loss(const std::vector<model::ExpertBundle>& bundles,
                         const std::vector<int>& labels, const Matrix& lambda_o,
                         const TotalLossOptions& opts,
                         const std::vector<std::array<Matrix, 3>>* projections) {
  const int n = static_cast<int>(bundles.size());
  if (n == 0) throw DataError("total_loss: empty batch");
  if (labels.size() != bundles.size()) throw DataError("total_loss: labels/bundle count mismatch");
  if (lambda_o.rows != 1 || lambda_o.cols != 3)
    throw InternalError("total_loss: lambda_o must be 1x3");
  if (projections && projections->size() != bundles.size())
    throw InternalError("total_loss: projections/bundle count mismatch");

  LossBreakdown out;
  for (int m = 0; m < 3; ++m) {
    const auto mi = static_cast<std::size_t>(m);
    double branch = 0.0;
    if (opts.use_lc[mi]) {
      Matrix probs(n, 2);
      for (int i = 0; i < n; ++i) {
        const Matrix& y = branch_prob(bundles[static_cast<std::size_t>(i)], m);
        probs(i, 0) = y(0, 0);
        probs(i, 1) = y(0, 1);
      }
      out.lc[mi] = cross_entropy(probs, labels);
      branch += opts.weights.lambda_c * out.lc[mi];
    }
    if (opts.use_lm[mi]) {
      const auto proj_of = [&](int i) {
        return projections ? (*projections)[static_cast<std::size_t>(i)][mi]
                           : l2_normalized(branch_raw(bundles[static_cast<std::size_t>(i)], m));
      };
      double acc = 0.0;
      int contributing = 0;
      for (int i = 0; i < n; ++i) {
        ContrastiveBatch cb;
        cb.tau = opts.tau;
        cb.anchor_raw = branch_raw(bundles[static_cast<std::size_t>(i)], m);
        cb.anchor_proj = proj_of(i);
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          ContrastivePair pair{branch_raw(bundles[static_cast<std::size_t>(j)], m), proj_of(j)};
          if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)])
            cb.positives.push_back(std::move(pair));
          else
            cb.negatives.push_back(std::move(pair));
        }
        if (auto v = mml_loss(cb, opts.mml)) {
          acc += *v;
          ++contributing;
        }
      }
      if (contributing > 0) {
        out.lm[mi] = acc / contributing;
        branch += opts.weights.lambda_m * *out.lm[mi];
      }
    }
    out.total += lambda_o(0, m) * branch;
  }
  return out;
}

namespace {

/// Mean floored NLL as one fused node; gradient is exact for the computed
/// (floored) function: zero wherever the floor is active.
class CrossEntropyOp final : public ad::CustomOp {
 public:
  explicit CrossEntropyOp(std::vector<int> labels) : labels_(std::move(labels)) {}

  Matrix forward(const std::vector<const Matrix*>& inputs) override {
    return Matrix(1, 1, {cross_entropy(*inputs[0], labels_)});
  }

  void backward(const std::vector<const Matrix*>& inputs, const Matrix&, const Matrix& dout,
                const std::vector<Matrix*>& dinputs) override {
    const Matrix& probs = *inputs[0];
    Matrix& dprobs = *dinputs[0];
    const double g = dout(0, 0) / probs.rows;
    for (int i = 0; i < probs.rows; ++i) {
      const int y = labels_[static_cast<std::size_t>(i)];
      const double p = probs(i, y);
      if (p > kProbFloor) dprobs(i, y) += -g / p;
    }
  }

 private:
  std::vector<int> labels_;
};

/// Batch contrastive loss as one fused node over the projected rows. Pair
/// weights come from the raw features captured at construction, so they are
/// constants of the graph. Gradients accumulate into the pairwise dot matrix
/// S = P P^T and map back through dP = (dS + dS^T) P.
class BatchMmlOp final : public ad::CustomOp {
 public:
  BatchMmlOp(Matrix raw, std::vector<int> labels, double tau, MmlOptions opts)
      : labels_(std::move(labels)), tau_(tau), opts_(opts) {
    if (tau_ <= 0.0) throw ConfigError("mml_loss: tau must be positive");
    const int n = static_cast<int>(labels_.size());
    if (raw.rows != n) throw InternalError("mml_loss_on_tape: raw/label count mismatch");
    log_w_ = Matrix(n, n);
    for (int i = 0; i < n; ++i) {
      Matrix ri(1, raw.cols);
      for (int c = 0; c < raw.cols; ++c) ri(0, c) = raw(i, c);
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        Matrix rj(1, raw.cols);
        for (int c = 0; c < raw.cols; ++c) rj(0, c) = raw(j, c);
        const bool same = labels_[static_cast<std::size_t>(j)] == labels_[static_cast<std::size_t>(i)];
        log_w_(i, j) = std::log(floored_weight(ri, rj, same, opts_.unit_weights));
      }
    }
    for (int i = 0; i < n; ++i) {
      std::vector<int> pos, neg;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        (labels_[static_cast<std::size_t>(j)] == labels_[static_cast<std::size_t>(i)] ? pos : neg)
            .push_back(j);
      }
      if (!pos.empty() && !neg.empty()) {
        anchors_.push_back(i);
        pos_.push_back(std::move(pos));
        neg_.push_back(std::move(neg));
      }
    }
    if (anchors_.empty())
      throw InternalError("mml_loss_on_tape: no anchor has both a positive and a negative");
  }

  Matrix forward(const std::vector<const Matrix*>& inputs) override {
    const Matrix& proj = *inputs[0];
    const Matrix s = kernels::matmul(proj, proj, kernels::Transpose::B);
    double acc = 0.0;
    for (std::size_t a = 0; a < anchors_.size(); ++a) {
      const int i = anchors_[a];
      std::vector<double> neg_terms;
      neg_terms.reserve(neg_[a].size());
      for (int nj : neg_[a]) neg_terms.push_back(log_w_(i, nj) + s(i, nj) / tau_);
      const double neg_lse = logsumexp(neg_terms);
      double anchor = 0.0;
      for (int pj : pos_[a]) {
        const double tp = log_w_(i, pj) + s(i, pj) / tau_;
        const double denom =
            opts_.include_positive_in_denominator ? logsumexp2(neg_lse, tp) : neg_lse;
        anchor += denom - tp;
      }
      acc += anchor / static_cast<double>(pos_[a].size());
    }
    return Matrix(1, 1, {acc / static_cast<double>(anchors_.size())});
  }

  void backward(const std::vector<const Matrix*>& inputs, const Matrix&, const Matrix& dout,
                const std::vector<Matrix*>& dinputs) override {
    const Matrix& proj = *inputs[0];
    const int n = proj.rows;
    const Matrix s = kernels::matmul(proj, proj, kernels::Transpose::B);
    Matrix ds(n, n);
    const double g = dout(0, 0) / static_cast<double>(anchors_.size());
    for (std::size_t a = 0; a < anchors_.size(); ++a) {
      const int i = anchors_[a];
      const double gi = g / static_cast<double>(pos_[a].size());
      std::vector<double> neg_terms;
      neg_terms.reserve(neg_[a].size());
      for (int nj : neg_[a]) neg_terms.push_back(log_w_(i, nj) + s(i, nj) / tau_);
      const double neg_lse = logsumexp(neg_terms);
      for (int pj : pos_[a]) {
        const double tp = log_w_(i, pj) + s(i, pj) / tau_;
        const double denom =
            opts_.include_positive_in_denominator ? logsumexp2(neg_lse, tp) : neg_lse;
        // d(denom - tp)/d tp = -1 + softmax share of the positive's own term.
        const double self_share =
            opts_.include_positive_in_denominator ? std::exp(tp - denom) : 0.0;
        ds(i, pj) += gi * (self_share - 1.0) / tau_;
        for (std::size_t k = 0; k < neg_terms.size(); ++k)
          ds(i, neg_[a][k]) += gi * std::exp(neg_terms[k] - denom) / tau_;
      }
    }
    // dP = (dS + dS^T) P since S is the symmetric-use dot matrix.
    Matrix sym(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) sym(i, j) = ds(i, j) + ds(j, i);
    const Matrix dp = kernels::matmul(sym, proj);
    Matrix& dproj = *dinputs[0];
    for (std::size_t k = 0; k < dp.size(); ++k) dproj.data[k] += dp.data[k];
  }

 private:
  std::vector<int> labels_;
  double tau_;
  MmlOptions opts_;
  Matrix log_w_;
  std::vector<int> anchors_;
  std::vector<std::vector<int>> pos_;
  std::vector<std::vector<int>> neg_;
};

}  // namespace

ad::Value cross_entropy_on_tape(ad::Tape& tape, ad::Value probs, std::vector<int> labels) {
  return tape.custom(std::make_shared<CrossEntropyOp>(std::move(labels)), {probs});
}

ad::Value mml_loss_on_tape(ad::Tape& tape, ad::Value proj, const Matrix& raw,
                           const std::vector<int>& labels, double tau, const MmlOptions& opts) {
  return tape.custom(std::make_shared<BatchMmlOp>(raw, labels, tau, opts), {proj});
}

}  // namespace mmlnet::losses
