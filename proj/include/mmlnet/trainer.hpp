#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mmlnet/config.hpp"
#include "mmlnet/corruption.hpp"
#include "mmlnet/datasets.hpp"
#include "mmlnet/losses.hpp"
#include "mmlnet/model.hpp"

namespace mmlnet::trainer {

/// What the ablation toggles do to the objective and the forward graph.
struct EffectiveSetup {
  losses::TotalLossOptions loss;
  double alpha = 0.5;
};

/// Translates config toggles into term switches: drop_Lc_M / drop_Lm_M zero
/// single terms, drop_adapters forces alpha to 0, drop_weighting and
/// vanilla_mcl both reduce the contrastive weights to 1.
EffectiveSetup apply_ablation(const config::ExperimentConfig& cfg);

/// Decoupled-weight-decay Adam with two learning-rate groups: parameters
/// flagged encoder_group step at lr_encoder, everything else at lr_main.
class AdamW {
 public:
  AdamW(double lr_main, double lr_encoder, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  /// One update from the gradients currently held in the store.
  void step(ParamStore& store);

  double lr_for(const Param& p) const { return p.encoder_group ? lr_encoder_ : lr_main_; }
  long long steps() const { return t_; }

 private:
  double lr_main_, lr_encoder_, weight_decay_, beta1_, beta2_, eps_;
  long long t_ = 0;
};

/// Global-norm gradient clipping across every parameter in the store.
/// max_norm <= 0 disables it. Returns the pre-clip norm.
double clip_gradients(ParamStore& store, double max_norm);

/// One line of training history. probe_loss and its breakdown are measured
/// after the epoch's updates, in eval mode, on the fixed probe batch (the
/// first batch of the canonical training order), so they can be recomputed
/// from the epoch's parameters alone.
struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double probe_loss = 0.0;
  std::array<double, 3> lc{};
  std::array<std::optional<double>, 3> lm{};
  std::optional<double> val_acc;
};

std::string history_to_jsonl(const std::vector<EpochRecord>& history);

/// Builds the training graph for one batch and returns the total loss value.
/// In train mode it also leaves parameter gradients in the store (which is
/// zeroed first) and applies dropout; in eval mode it is a pure measurement.
/// `breakdown` (optional) receives the per-branch component values.
double run_batch(const model::MmlNet& net, ParamStore& store,
                 const std::vector<const datasets::Sample*>& batch,
                 const EffectiveSetup& setup, bool train_mode, std::uint64_t seed,
                 const std::string& dropout_tag, losses::LossBreakdown* breakdown = nullptr);

/// Eval-mode forward bundles / contrastive projections for a sample list;
/// used to recompute recorded losses through the plain (non-graph) route.
std::vector<model::ExpertBundle> eval_bundles(const model::MmlNet& net,
                                              const std::vector<datasets::Sample>& samples);
std::vector<std::array<Matrix, 3>> eval_projections(const model::MmlNet& net,
                                                    const std::vector<datasets::Sample>& samples);

/// Output file locations; empty strings skip the corresponding write.
struct TrainPaths {
  std::string final_checkpoint;
  std::string best_checkpoint;
  std::string history;
};

struct TrainOutput {
  std::unique_ptr<model::MmlNet> net;  // final parameters
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 0 = initialization (epochs == 0 or no validation wins)
  std::optional<double> best_val_acc;
};

/// Deterministic training: seeded 10%-style validation split (val_fraction),
/// per-epoch seeded shuffle with the short last batch kept, AdamW with split
/// learning rates, per-epoch history, final + best-validation checkpoints.
/// Masks must cover the dataset and carry exactly config.rates.
TrainOutput train(const config::ExperimentConfig& cfg,
                  const std::vector<datasets::Sample>& dataset,
                  const std::vector<corruption::MaskSpec>& masks, const TrainPaths& paths = {});

}  // namespace mmlnet::trainer
