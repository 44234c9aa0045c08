#include "mmlnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "mmlnet/checkpoint.hpp"
#include "mmlnet/core/rng.hpp"
#include "mmlnet/errors.hpp"
#include "mmlnet/metrics.hpp"

namespace mmlnet::trainer {

namespace {

int branch_of(char letter) { return letter == 'h' ? 0 : letter == 'r' ? 1 : 2; }

Matrix stack_rows(const std::vector<Matrix>& rows) {
  Matrix out(static_cast<int>(rows.size()), rows[0].cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int c = 0; c < out.cols; ++c) out(static_cast<int>(i), c) = rows[i](0, c);
  return out;
}

Matrix take_row(const Matrix& m, int r) {
  Matrix out(1, m.cols);
  for (int c = 0; c < m.cols; ++c) out(0, c) = m(r, c);
  return out;
}

}  // namespace

EffectiveSetup apply_ablation(const config::ExperimentConfig& cfg) {
  config::validate(cfg);  // rejects unknown toggles
  EffectiveSetup setup;
  setup.loss.weights = {cfg.lambda_c, cfg.lambda_m};
  setup.loss.tau = cfg.tau;
  setup.loss.mml.include_positive_in_denominator = cfg.include_positive_in_denominator;
  setup.loss.mml.unit_weights =
      cfg.has_ablation("drop_weighting") || cfg.has_ablation("vanilla_mcl");
  for (char m : {'h', 'r', 'f'}) {
    if (cfg.has_ablation(std::string("drop_Lc_") + m))
      setup.loss.use_lc[static_cast<std::size_t>(branch_of(m))] = false;
    if (cfg.has_ablation(std::string("drop_Lm_") + m))
      setup.loss.use_lm[static_cast<std::size_t>(branch_of(m))] = false;
  }
  setup.alpha = cfg.has_ablation("drop_adapters") ? 0.0 : cfg.adapter_alpha;
  return setup;
}

AdamW::AdamW(double lr_main, double lr_encoder, double weight_decay, double beta1, double beta2,
             double eps)
    : lr_main_(lr_main),
      lr_encoder_(lr_encoder),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {}

void AdamW::step(ParamStore& store) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Param& p : store.all()) {
    const double lr = lr_for(p);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data[i];
      p.m.data[i] = beta1_ * p.m.data[i] + (1.0 - beta1_) * g;
      p.v.data[i] = beta2_ * p.v.data[i] + (1.0 - beta2_) * g * g;
      const double mhat = p.m.data[i] / bc1;
      const double vhat = p.v.data[i] / bc2;
      // Decoupled decay: the regularizer never enters the moments.
      p.value.data[i] -=
          lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p.value.data[i]);
    }
  }
}

double clip_gradients(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (const Param& p : store.all())
    for (double g : p.grad.data) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (Param& p : store.all())
      for (double& g : p.grad.data) g *= scale;
  }
  return norm;
}

double run_batch(const model::MmlNet& net, ParamStore& store,
                 const std::vector<const datasets::Sample*>& batch, const EffectiveSetup& setup,
                 bool train_mode, std::uint64_t seed, const std::string& dropout_tag,
                 losses::LossBreakdown* breakdown) {
  const int b = static_cast<int>(batch.size());
  if (b == 0) throw InternalError("run_batch: empty batch");
  std::vector<int> labels;
  labels.reserve(batch.size());
  for (const datasets::Sample* s : batch) labels.push_back(s->label);

  const bool any_lm = (setup.loss.use_lm[0] || setup.loss.use_lm[1] || setup.loss.use_lm[2]) &&
                      losses::batch_has_contrastive_term(labels);
  const double rate = net.config().dropout;

  // Per-sample graphs: full forward plus (when needed) the three projection
  // heads. Their outputs become inputs of the batch-level loss graph.
  std::deque<ad::Tape> tapes;
  std::vector<model::ForwardValues> fvs;
  std::vector<std::array<ad::Value, 3>> projs;
  std::vector<Matrix> yh, yr, yf;
  std::array<std::vector<Matrix>, 3> proj_rows, raw_rows;
  for (int i = 0; i < b; ++i) {
    ad::Tape& tape = tapes.emplace_back();
    encoders::DropoutSampler sampler{
        Rng::stream(seed, dropout_tag + "/" + std::to_string(i)), rate};
    const bool use_dropout = train_mode && rate > 0.0;
    model::ForwardValues fv = net.build_forward(tape, *batch[static_cast<std::size_t>(i)],
                                                use_dropout ? &sampler : nullptr);
    yh.push_back(tape.value(fv.y_h));
    yr.push_back(tape.value(fv.y_r));
    yf.push_back(tape.value(fv.y_f));
    if (any_lm) {
      const std::array<ad::Value, 3> feats = {fv.F_T, fv.F_I, fv.f};
      std::array<ad::Value, 3> p{};
      for (int m = 0; m < 3; ++m) {
        p[static_cast<std::size_t>(m)] =
            net.project(tape, feats[static_cast<std::size_t>(m)], static_cast<model::Branch>(m));
        proj_rows[static_cast<std::size_t>(m)].push_back(
            tape.value(p[static_cast<std::size_t>(m)]));
        raw_rows[static_cast<std::size_t>(m)].push_back(
            tape.value(feats[static_cast<std::size_t>(m)]));
      }
      projs.push_back(p);
    }
    fvs.push_back(fv);
  }

  // Batch-level loss graph over the stacked per-sample outputs.
  ad::Tape bt;
  const ad::Value in_yh = bt.input(stack_rows(yh));
  const ad::Value in_yr = bt.input(stack_rows(yr));
  const ad::Value in_yf = bt.input(stack_rows(yf));
  const std::array<ad::Value, 3> in_y = {in_yh, in_yr, in_yf};
  std::array<ad::Value, 3> in_proj{};
  if (any_lm)
    for (int m = 0; m < 3; ++m)
      in_proj[static_cast<std::size_t>(m)] =
          bt.input(stack_rows(proj_rows[static_cast<std::size_t>(m)]));

  const ad::Value lambda = bt.softmax_rows(bt.param(store.get("route/lambda_logits")));
  losses::LossBreakdown parts;
  std::array<ad::Value, 3> branch_totals{};
  for (int m = 0; m < 3; ++m) {
    const auto mi = static_cast<std::size_t>(m);
    ad::Value total_m = bt.constant(Matrix(1, 1));
    if (setup.loss.use_lc[mi]) {
      const ad::Value ce = losses::cross_entropy_on_tape(bt, in_y[mi], labels);
      parts.lc[mi] = bt.value(ce)(0, 0);
      total_m = bt.add(total_m, bt.scale(ce, setup.loss.weights.lambda_c));
    }
    if (setup.loss.use_lm[mi] && any_lm) {
      const ad::Value mml =
          losses::mml_loss_on_tape(bt, in_proj[mi], stack_rows(raw_rows[mi]), labels,
                                   setup.loss.tau, setup.loss.mml);
      parts.lm[mi] = bt.value(mml)(0, 0);
      total_m = bt.add(total_m, bt.scale(mml, setup.loss.weights.lambda_m));
    }
    branch_totals[mi] = total_m;
  }
  const ad::Value total =
      bt.lincomb(lambda, {branch_totals[0], branch_totals[1], branch_totals[2]});
  parts.total = bt.value(total)(0, 0);
  if (breakdown) *breakdown = parts;

  if (train_mode) {
    store.zero_grads();
    bt.backward(total);
    bt.accumulate_param_grads(store);  // the routing logits live on this tape
    const Matrix g_yh = bt.grad(in_yh);
    const Matrix g_yr = bt.grad(in_yr);
    const Matrix g_yf = bt.grad(in_yf);
    std::array<Matrix, 3> g_proj;
    if (any_lm)
      for (int m = 0; m < 3; ++m)
        g_proj[static_cast<std::size_t>(m)] = bt.grad(in_proj[static_cast<std::size_t>(m)]);
    for (int i = 0; i < b; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      std::vector<std::pair<ad::Value, Matrix>> seeds = {
          {fvs[ii].y_h, take_row(g_yh, i)},
          {fvs[ii].y_r, take_row(g_yr, i)},
          {fvs[ii].y_f, take_row(g_yf, i)},
      };
      if (any_lm)
        for (int m = 0; m < 3; ++m)
          seeds.emplace_back(projs[ii][static_cast<std::size_t>(m)],
                             take_row(g_proj[static_cast<std::size_t>(m)], i));
      tapes[ii].backward_from_seeds(seeds);
      tapes[ii].accumulate_param_grads(store);
    }
  }
  return parts.total;
}

std::vector<model::ExpertBundle> eval_bundles(const model::MmlNet& net,
                                              const std::vector<datasets::Sample>& samples) {
  std::vector<model::ExpertBundle> out;
  out.reserve(samples.size());
  for (const datasets::Sample& s : samples) out.push_back(net.forward(s));
  return out;
}

std::vector<std::array<Matrix, 3>> eval_projections(const model::MmlNet& net,
                                                    const std::vector<datasets::Sample>& samples) {
  std::vector<std::array<Matrix, 3>> out;
  out.reserve(samples.size());
  for (const datasets::Sample& s : samples) {
    ad::Tape tape;
    model::ForwardValues fv = net.build_forward(tape, s, nullptr);
    const std::array<ad::Value, 3> feats = {fv.F_T, fv.F_I, fv.f};
    std::array<Matrix, 3> p;
    for (int m = 0; m < 3; ++m)
      p[static_cast<std::size_t>(m)] = tape.value(
          net.project(tape, feats[static_cast<std::size_t>(m)], static_cast<model::Branch>(m)));
    out.push_back(std::move(p));
  }
  return out;
}

std::string history_to_jsonl(const std::vector<EpochRecord>& history) {
  std::string out;
  for (const EpochRecord& r : history) {
    nlohmann::json rec = {
        {"epoch", r.epoch},
        {"train_loss", r.train_loss},
        {"probe_loss", r.probe_loss},
        {"lc_text", r.lc[0]},
        {"lc_image", r.lc[1]},
        {"lc_fused", r.lc[2]},
        {"lm_text", r.lm[0] ? nlohmann::json(*r.lm[0]) : nlohmann::json(nullptr)},
        {"lm_image", r.lm[1] ? nlohmann::json(*r.lm[1]) : nlohmann::json(nullptr)},
        {"lm_fused", r.lm[2] ? nlohmann::json(*r.lm[2]) : nlohmann::json(nullptr)},
    };
    if (r.val_acc) rec["val_acc"] = *r.val_acc;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

TrainOutput train(const config::ExperimentConfig& cfg,
                  const std::vector<datasets::Sample>& dataset,
                  const std::vector<corruption::MaskSpec>& masks, const TrainPaths& paths) {
  config::validate(cfg);
  for (const corruption::MaskSpec& m : masks) {
    if (!(m.rates == cfg.rates))
      throw DataError("train: mask for sample " + m.sample_id + " has rates (" +
                      std::to_string(m.rates.text_rate) + "," +
                      std::to_string(m.rates.image_rate) + ") but the config trains at (" +
                      std::to_string(cfg.rates.text_rate) + "," +
                      std::to_string(cfg.rates.image_rate) + ")");
  }
  const std::vector<datasets::Sample> masked =
      corruption::apply_masks(dataset, masks, cfg.patch_size);
  const EffectiveSetup setup = apply_ablation(cfg);

  TrainOutput out;
  out.net = std::make_unique<model::MmlNet>(cfg);
  ParamStore& store = out.net->params();

  // Seeded validation split; both halves kept in dataset order.
  const int n = static_cast<int>(masked.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  {
    Rng rng = Rng::stream(cfg.seed, "val-split");
    rng.shuffle(order);
  }
  const int n_val = static_cast<int>(cfg.val_fraction * n);
  std::vector<int> val_idx(order.begin(), order.begin() + n_val);
  std::vector<int> train_idx(order.begin() + n_val, order.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  if (train_idx.empty()) throw DataError("train: validation split leaves no training samples");

  const auto probe_count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size),
                                                 train_idx.size());
  std::vector<const datasets::Sample*> probe;
  for (std::size_t i = 0; i < probe_count; ++i)
    probe.push_back(&masked[static_cast<std::size_t>(train_idx[i])]);

  AdamW opt(cfg.lr_main, cfg.lr_encoder, cfg.weight_decay);
  double best_val = -1.0;
  std::vector<Matrix> best_values;
  const auto snapshot = [&store]() {
    std::vector<Matrix> vals;
    vals.reserve(static_cast<std::size_t>(store.count()));
    for (const Param& p : store.all()) vals.push_back(p.value);
    return vals;
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> epoch_order = train_idx;
    {
      Rng rng = Rng::stream(cfg.seed, "epoch-shuffle", static_cast<std::uint64_t>(epoch));
      rng.shuffle(epoch_order);
    }
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < epoch_order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(epoch_order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const datasets::Sample*> batch;
      for (std::size_t i = start; i < stop; ++i)
        batch.push_back(&masked[static_cast<std::size_t>(epoch_order[i])]);
      const std::string tag =
          "dropout/" + std::to_string(epoch) + "/" + std::to_string(batches);
      loss_sum += run_batch(*out.net, store, batch, setup, true, cfg.seed, tag);
      if (cfg.grad_clip > 0.0) clip_gradients(store, cfg.grad_clip);
      opt.step(store);
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / batches;
    losses::LossBreakdown probe_parts;
    rec.probe_loss = run_batch(*out.net, store, probe, setup, false, cfg.seed, "", &probe_parts);
    rec.lc = probe_parts.lc;
    rec.lm = probe_parts.lm;

    if (n_val > 0) {
      std::vector<int> preds, labels;
      for (int idx : val_idx) {
        const datasets::Sample& s = masked[static_cast<std::size_t>(idx)];
        const model::ExpertBundle bundle = out.net->forward(s);
        preds.push_back(bundle.y_o(0, 1) > bundle.y_o(0, 0) ? 1 : 0);
        labels.push_back(s.label);
      }
      rec.val_acc = metrics::accuracy(preds, labels);
      if (*rec.val_acc > best_val) {
        best_val = *rec.val_acc;
        out.best_epoch = epoch;
        out.best_val_acc = rec.val_acc;
        best_values = snapshot();
      }
    }
    out.history.push_back(std::move(rec));
  }

  // No validation signal: the final parameters are the best ones.
  if (best_values.empty()) {
    best_values = snapshot();
    out.best_epoch = cfg.epochs == 0 ? 0 : static_cast<int>(out.history.size());
  }

  if (!paths.final_checkpoint.empty()) checkpoint::save(paths.final_checkpoint, cfg, store);
  if (!paths.best_checkpoint.empty()) {
    const std::vector<Matrix> final_values = snapshot();
    int id = 0;
    for (Param& p : store.all()) p.value = best_values[static_cast<std::size_t>(id++)];
    checkpoint::save(paths.best_checkpoint, cfg, store);
    id = 0;
    for (Param& p : store.all()) p.value = final_values[static_cast<std::size_t>(id++)];
  }
  if (!paths.history.empty()) {
    std::ofstream f(paths.history, std::ios::trunc);
    if (!f) throw DataError("train: cannot open " + paths.history + " for writing");
    f << history_to_jsonl(out.history);
    if (!f) throw DataError("train: write to " + paths.history + " failed");
  }
  return out;
}

}  // namespace mmlnet::trainer
