#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mmlnet/config.hpp"
#include "mmlnet/core/autodiff.hpp"
#include "mmlnet/core/matrix.hpp"
#include "mmlnet/core/params.hpp"
#include "mmlnet/datasets.hpp"
#include "mmlnet/encoders.hpp"

namespace mmlnet::model {

/// The three experts, in routing order.
enum class Branch { text = 0, image = 1, fused = 2 };

/// Everything one forward pass produces for one sample, as plain matrices.
/// F_T / F_I are the adapted CLS features, f the attention-pooled fused
/// feature; y_* are class distributions; lambda_o the routing weights.
struct ExpertBundle {
  Matrix F_T;       // 1 x d
  Matrix F_I;       // 1 x d
  Matrix f;         // 1 x d
  Matrix y_h;       // 1 x 2
  Matrix y_r;       // 1 x 2
  Matrix y_f;       // 1 x 2
  Matrix y_o;       // 1 x 2
  Matrix lambda_o;  // 1 x 3
  double p_t = 0.0;
  double p_v = 0.0;
};

/// Tape handles to the same quantities, for building losses on top.
struct ForwardValues {
  ad::Value F_T, F_I, f;
  ad::Value y_h, y_r, y_f;
  ad::Value lambda_o;  // 1 x 3
  ad::Value y_o;       // 1 x 2
  ad::Value pool;      // 1 x 2 (p_t, p_v)
};

/// Residual adapter: F = alpha * A(cls) + (1 - alpha) * cls, where A is a
/// two-layer bottleneck registered under `prefix/`.
ad::Value adapt(ad::Tape& tape, ad::Value cls, double alpha, const ParamStore& store,
                const std::string& prefix);

/// Routing on plain values: lambda_o = softmax(lambda_logits), y_o = sum of
/// lambda_o[m] * y_m. Used directly by evaluation-side code and tests.
std::pair<Matrix, Matrix> route(const Matrix& y_h, const Matrix& y_r, const Matrix& y_f,
                                const Matrix& lambda_logits);

/// Three-expert classifier over (possibly corrupted) text/image pairs.
/// Owns every trainable tensor in one ParamStore; encoder parameters carry
/// the encoder_group flag so the trainer can split learning rates.
class MmlNet {
 public:
  explicit MmlNet(const config::ExperimentConfig& cfg,
                  std::shared_ptr<encoders::EncoderBackend> external = nullptr);

  const config::ExperimentConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  double effective_alpha() const { return alpha_; }

  /// Builds the full forward graph for one sample on the given tape.
  ForwardValues build_forward(ad::Tape& tape, const datasets::Sample& sample,
                              encoders::DropoutSampler* dropout = nullptr) const;

  /// Eval-mode forward on a throwaway tape.
  ExpertBundle forward(const datasets::Sample& sample) const;

  /// Branch projection head for the contrastive loss: two-layer MLP to the
  /// projection width, then L2 normalization.
  ad::Value project(ad::Tape& tape, ad::Value feature, Branch branch) const;

 private:
  ad::Value encode(ad::Tape& tape, const datasets::Sample& sample, encoders::Modality which,
                   encoders::DropoutSampler* dropout) const;

  config::ExperimentConfig cfg_;
  ParamStore store_;
  double alpha_;
  std::unique_ptr<encoders::ToyEncoders> toy_;
  std::unique_ptr<encoders::ExternalEncoders> external_;
};

}  // namespace mmlnet::model
