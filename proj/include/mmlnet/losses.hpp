#pragma once

#include <array>
#include <optional>
#include <vector>

#include "mmlnet/core/autodiff.hpp"
#include "mmlnet/core/matrix.hpp"
#include "mmlnet/model.hpp"

namespace mmlnet::losses {

/// Pair weight from raw (pre-projection) features: 1 - cos for a positive
/// pair, 1 + cos for a negative pair. Always in [0, 2]. Weights are data, not
/// graph: no gradient ever flows through them.
double label_aware_weight(const Matrix& anchor_raw, const Matrix& other_raw, bool positive);

struct ContrastivePair {
  Matrix raw;   // 1 x d, pre-projection feature (weights only)
  Matrix proj;  // 1 x p, projected feature (similarities)
};

/// One anchor with its in-batch positive and negative sets.
struct ContrastiveBatch {
  Matrix anchor_raw;
  Matrix anchor_proj;
  std::vector<ContrastivePair> positives;
  std::vector<ContrastivePair> negatives;
  double tau = 0.1;
};

struct MmlOptions {
  // Adds each positive's own term to its denominator (off reproduces the
  // negatives-only form).
  bool include_positive_in_denominator = false;
  // Forces all pair weights to 1 (the unweighted contrastive form).
  bool unit_weights = false;
};

/// Weighted contrastive loss for one anchor:
///   (1/|S_p|) sum_p -log[ w_p exp(s_p/tau) / sum_n w_n exp(s_n/tau) ]
/// with s the dot product of projected vectors. Empty positives or negatives
/// mean the anchor has no contrastive term (nullopt), which is not an error.
std::optional<double> mml_loss(const ContrastiveBatch& batch, const MmlOptions& opts = {});

/// Mean over rows of -log(probs(i, labels[i])), probability floored at 1e-12
/// inside the log.
double cross_entropy(const Matrix& probs, const std::vector<int>& labels);

struct LossWeights {
  double lambda_c = 1.0;
  double lambda_m = 0.5;
};

struct TotalLossOptions {
  LossWeights weights;
  double tau = 0.1;
  MmlOptions mml;
  // Per-branch term switches in Branch order (text, image, fused); ablations
  // turn individual terms off.
  std::array<bool, 3> use_lc{true, true, true};
  std::array<bool, 3> use_lm{true, true, true};
};

struct LossBreakdown {
  double total = 0.0;
  std::array<double, 3> lc{};                 // per-branch cross-entropy
  std::array<std::optional<double>, 3> lm{};  // per-branch contrastive term
};

/// Combined objective over one batch of forward bundles:
///   L = sum_M lambda_o[M] * (lambda_c * Lc_M + lambda_m * Lm_M)
/// Lc_M is the cross-entropy of that branch's distribution; Lm_M the batch
/// contrastive loss over that branch's features, every sample in turn the
/// anchor, positives/negatives drawn from the same batch by label. When
/// `projections` is null, similarities fall back to L2-normalized raw
/// features; weights always come from raw features.
LossBreakdown total_loss(const std::vector<model::ExpertBundle>& bundles,
                         const std::vector<int>& labels, const Matrix& lambda_o,
                         const TotalLossOptions& opts,
                         const std::vector<std::array<Matrix, 3>>* projections = nullptr);

/// True when some anchor in this label multiset has both a positive and a
/// negative, i.e. the batch can produce any contrastive term.
bool batch_has_contrastive_term(const std::vector<int>& labels);

// Tape forms used by the trainer. Values match the plain functions exactly.

/// probs: B x C rows on the tape. Returns the 1x1 floored mean NLL.
ad::Value cross_entropy_on_tape(ad::Tape& tape, ad::Value probs, std::vector<int> labels);

/// proj: B x p projected rows on the tape (each batch row in turn the
/// anchor); raw: plain pre-projection features for the pair weights.
/// Requires batch_has_contrastive_term(labels). Returns the 1x1 mean over
/// contributing anchors.
ad::Value mml_loss_on_tape(ad::Tape& tape, ad::Value proj, const Matrix& raw,
                           const std::vector<int>& labels, double tau, const MmlOptions& opts);

}  // namespace mmlnet::losses
