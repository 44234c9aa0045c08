#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "mmlnet/core/rng.hpp"
#include "mmlnet/errors.hpp"
#include "mmlnet/losses.hpp"

using mmlnet::DataError;
using mmlnet::Matrix;
using mmlnet::Rng;
using mmlnet::ad::Tape;
using mmlnet::ad::Value;
using mmlnet::model::ExpertBundle;
namespace losses = mmlnet::losses;

namespace {

// ---- straight-summation oracles, no shared code with the implementation ----

double dot_o(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

double cos_o(const Matrix& a, const Matrix& b) {
  return dot_o(a, b) / (std::sqrt(dot_o(a, a)) * std::sqrt(dot_o(b, b)));
}

double weight_o(const Matrix& anchor_raw, const Matrix& other_raw, bool positive) {
  const double c = cos_o(anchor_raw, other_raw);
  return positive ? 1.0 - c : 1.0 + c;
}

std::optional<double> mml_o(const losses::ContrastiveBatch& b, bool include_positive,
                            bool unit_weights) {
  if (b.positives.empty() || b.negatives.empty()) return std::nullopt;
  double acc = 0.0;
  for (const auto& p : b.positives) {
    const double wp =
        unit_weights ? 1.0 : std::max(weight_o(b.anchor_raw, p.raw, true), 1e-12);
    const double num = wp * std::exp(dot_o(b.anchor_proj, p.proj) / b.tau);
    double den = 0.0;
    for (const auto& n : b.negatives) {
      const double wn =
          unit_weights ? 1.0 : std::max(weight_o(b.anchor_raw, n.raw, false), 1e-12);
      den += wn * std::exp(dot_o(b.anchor_proj, n.proj) / b.tau);
    }
    if (include_positive) den += num;
    acc += -std::log(num / den);
  }
  return acc / static_cast<double>(b.positives.size());
}

double ce_o(const Matrix& probs, const std::vector<int>& labels) {
  double acc = 0.0;
  for (int i = 0; i < probs.rows; ++i)
    acc += -std::log(std::max(probs(i, labels[static_cast<std::size_t>(i)]), 1e-12));
  return acc / probs.rows;
}

// ---- random-instance helpers ----

Matrix random_row(Rng& rng, int d, double scale = 1.0) {
  Matrix m(1, d);
  for (double& v : m.data) v = rng.normal(0.0, scale);
  return m;
}

losses::ContrastiveBatch random_batch(Rng& rng, int d, int n_pos, int n_neg, double tau) {
  losses::ContrastiveBatch b;
  b.anchor_raw = random_row(rng, d);
  b.anchor_proj = random_row(rng, d, 0.5);
  for (int i = 0; i < n_pos; ++i) b.positives.push_back({random_row(rng, d), random_row(rng, d, 0.5)});
  for (int i = 0; i < n_neg; ++i) b.negatives.push_back({random_row(rng, d), random_row(rng, d, 0.5)});
  b.tau = tau;
  return b;
}

Matrix softmax_row_o(const Matrix& logits) {
  Matrix out = logits;
  double mx = *std::max_element(out.data.begin(), out.data.end());
  double s = 0.0;
  for (double& v : out.data) {
    v = std::exp(v - mx);
    s += v;
  }
  for (double& v : out.data) v /= s;
  return out;
}

// Random bundle batch: only the fields total_loss reads are populated.
std::vector<ExpertBundle> random_bundles(Rng& rng, int n, int d) {
  std::vector<ExpertBundle> out(static_cast<std::size_t>(n));
  for (auto& b : out) {
    b.F_T = random_row(rng, d);
    b.F_I = random_row(rng, d);
    b.f = random_row(rng, d);
    b.y_h = softmax_row_o(random_row(rng, 2));
    b.y_r = softmax_row_o(random_row(rng, 2));
    b.y_f = softmax_row_o(random_row(rng, 2));
  }
  return out;
}

Matrix l2norm_row_o(const Matrix& m) {
  Matrix out = m;
  const double n = std::sqrt(dot_o(m, m));
  for (double& v : out.data) v /= n;
  return out;
}

// Oracle for the combined objective, composed from the oracles above.
double total_o(const std::vector<ExpertBundle>& bundles, const std::vector<int>& labels,
               const Matrix& lambda_o, const losses::TotalLossOptions& o) {
  const int n = static_cast<int>(bundles.size());
  double total = 0.0;
  for (int m = 0; m < 3; ++m) {
    const auto raw_of = [&](int i) -> const Matrix& {
      const ExpertBundle& b = bundles[static_cast<std::size_t>(i)];
      return m == 0 ? b.F_T : m == 1 ? b.F_I : b.f;
    };
    const auto prob_of = [&](int i) -> const Matrix& {
      const ExpertBundle& b = bundles[static_cast<std::size_t>(i)];
      return m == 0 ? b.y_h : m == 1 ? b.y_r : b.y_f;
    };
    double branch = 0.0;
    if (o.use_lc[static_cast<std::size_t>(m)]) {
      Matrix probs(n, 2);
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < 2; ++c) probs(i, c) = prob_of(i)(0, c);
      branch += o.weights.lambda_c * ce_o(probs, labels);
    }
    if (o.use_lm[static_cast<std::size_t>(m)]) {
      double acc = 0.0;
      int contributing = 0;
      for (int i = 0; i < n; ++i) {
        losses::ContrastiveBatch cb;
        cb.tau = o.tau;
        cb.anchor_raw = raw_of(i);
        cb.anchor_proj = l2norm_row_o(raw_of(i));
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          losses::ContrastivePair pair{raw_of(j), l2norm_row_o(raw_of(j))};
          if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)])
            cb.positives.push_back(pair);
          else
            cb.negatives.push_back(pair);
        }
        auto v = mml_o(cb, o.mml.include_positive_in_denominator, o.mml.unit_weights);
        if (v) {
          acc += *v;
          ++contributing;
        }
      }
      if (contributing > 0) branch += o.weights.lambda_m * (acc / contributing);
    }
    total += lambda_o(0, m) * branch;
  }
  return total;
}

}  // namespace

TEST_CASE("label_aware_weight matches the cosine rule and rejects zero norms") {
  Matrix a = Matrix::row_vector({1.0, 0.0, 0.0});
  Matrix b = Matrix::row_vector({0.0, 2.0, 0.0});
  CHECK(losses::label_aware_weight(a, a, true) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(losses::label_aware_weight(a, a, false) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(losses::label_aware_weight(a, b, true) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(losses::label_aware_weight(a, b, false) == doctest::Approx(1.0).epsilon(1e-12));

  Rng rng = Rng::stream(7, "weights");
  for (int t = 0; t < 200; ++t) {
    Matrix u = random_row(rng, 6);
    Matrix v = random_row(rng, 6);
    const bool pos = rng.below(2) == 0;
    const double w = losses::label_aware_weight(u, v, pos);
    CHECK(w == doctest::Approx(weight_o(u, v, pos)).epsilon(1e-12));
    CHECK(w >= 0.0);
    CHECK(w <= 2.0);
  }

  Matrix zero(1, 3);
  CHECK_THROWS_AS((void)losses::label_aware_weight(a, zero, true), DataError);
  CHECK_THROWS_AS((void)losses::label_aware_weight(zero, a, false), DataError);
}

TEST_CASE("mml_loss equals the straight-summation oracle on random batches") {
  Rng rng = Rng::stream(11, "mml-oracle");
  for (int t = 0; t < 200; ++t) {
    const int d = 2 + static_cast<int>(rng.below(8));
    const int np = 1 + static_cast<int>(rng.below(6));
    const int nn = 1 + static_cast<int>(rng.below(6));
    const double tau = 0.05 + rng.uniform() * 2.0;
    losses::ContrastiveBatch b = random_batch(rng, d, np, nn, tau);
    for (const bool inc : {false, true}) {
      for (const bool unit : {false, true}) {
        losses::MmlOptions opts{inc, unit};
        auto got = losses::mml_loss(b, opts);
        auto want = mml_o(b, inc, unit);
        REQUIRE(got.has_value());
        CHECK(*got == doctest::Approx(*want).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("mml_loss hand-evaluated cases") {
  // One positive, one negative; all projected similarities zero; raw vectors
  // mutually orthogonal so every weight is exactly 1; tau = 1:
  // -log(1*e^0 / 1*e^0) = 0.
  losses::ContrastiveBatch b;
  b.anchor_raw = Matrix::row_vector({1.0, 0.0, 0.0});
  b.anchor_proj = Matrix::row_vector({1.0, 0.0, 0.0});
  b.positives.push_back({Matrix::row_vector({0.0, 1.0, 0.0}), Matrix::row_vector({0.0, 1.0, 0.0})});
  b.negatives.push_back({Matrix::row_vector({0.0, 0.0, 1.0}), Matrix::row_vector({0.0, 0.0, 1.0})});
  b.tau = 1.0;
  auto v = losses::mml_loss(b);
  REQUIRE(v.has_value());
  CHECK(*v == doctest::Approx(0.0).epsilon(1e-12));

  // Same geometry but the positive projection equals the anchor's: the
  // numerator gains e^1, so the loss is -1 with the negatives-only
  // denominator and log(1 + e^-1) when the positive joins the denominator.
  b.positives[0].proj = Matrix::row_vector({1.0, 0.0, 0.0});
  v = losses::mml_loss(b);
  REQUIRE(v.has_value());
  CHECK(*v == doctest::Approx(-1.0).epsilon(1e-12));
  v = losses::mml_loss(b, {true, false});
  REQUIRE(v.has_value());
  CHECK(*v == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));

  // Identical raw features in a positive pair hit the weight floor instead of
  // producing log(0).
  b.positives[0].raw = b.anchor_raw;
  v = losses::mml_loss(b);
  REQUIRE(v.has_value());
  CHECK(std::isfinite(*v));
}

TEST_CASE("mml_loss degenerate sets are skipped, not errors") {
  Rng rng = Rng::stream(13, "mml-degenerate");
  losses::ContrastiveBatch b = random_batch(rng, 4, 2, 3, 0.5);
  b.positives.clear();
  CHECK_FALSE(losses::mml_loss(b).has_value());
  b = random_batch(rng, 4, 2, 3, 0.5);
  b.negatives.clear();
  CHECK_FALSE(losses::mml_loss(b).has_value());
}

TEST_CASE("mml_loss is invariant under permutations and tau rescaling") {
  Rng rng = Rng::stream(17, "mml-invariance");
  for (int t = 0; t < 50; ++t) {
    losses::ContrastiveBatch b = random_batch(rng, 6, 3, 4, 0.3);
    auto base = losses::mml_loss(b);
    REQUIRE(base.has_value());

    losses::ContrastiveBatch shuffled = b;
    std::swap(shuffled.positives[0], shuffled.positives[2]);
    std::swap(shuffled.negatives[1], shuffled.negatives[3]);
    std::swap(shuffled.negatives[0], shuffled.negatives[2]);
    auto permuted = losses::mml_loss(shuffled);
    CHECK(*permuted == doctest::Approx(*base).epsilon(1e-12));

    // Scaling every pairwise dot product and tau by the same factor leaves
    // the exp arguments unchanged; weights read raw features so they do not
    // move.
    const double c = 3.7;
    losses::ContrastiveBatch scaled = b;
    for (double& x : scaled.anchor_proj.data) x *= c;
    scaled.tau *= c;
    auto rescaled = losses::mml_loss(scaled);
    CHECK(*rescaled == doctest::Approx(*base).epsilon(1e-10));
  }
}

TEST_CASE("cross_entropy oracle equivalence and edge cases") {
  Rng rng = Rng::stream(19, "ce");
  for (int t = 0; t < 200; ++t) {
    const int n = 1 + static_cast<int>(rng.below(50));
    Matrix probs(n, 2);
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
      const double p = rng.uniform();
      probs(i, 0) = p;
      probs(i, 1) = 1.0 - p;
      labels.push_back(static_cast<int>(rng.below(2)));
    }
    const double got = losses::cross_entropy(probs, labels);
    CHECK(got == doctest::Approx(ce_o(probs, labels)).epsilon(1e-10));
    CHECK(got >= 0.0);
  }

  Matrix onehot(2, 2, {1.0, 0.0, 0.0, 1.0});
  CHECK(losses::cross_entropy(onehot, {0, 1}) == doctest::Approx(0.0).epsilon(1e-15));
  Matrix uniform(3, 2, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5});
  CHECK(losses::cross_entropy(uniform, {0, 1, 0}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // A zero probability is floored, not -inf.
  Matrix hard(1, 2, {0.0, 1.0});
  CHECK(losses::cross_entropy(hard, {0}) == doctest::Approx(-std::log(1e-12)).epsilon(1e-12));
  CHECK_THROWS_AS((void)losses::cross_entropy(onehot, {0}), DataError);
  CHECK_THROWS_AS((void)losses::cross_entropy(onehot, {0, 2}), DataError);
}

TEST_CASE("total_loss composes the oracles, honors switches, skips degenerate terms") {
  Rng rng = Rng::stream(23, "total");
  const Matrix lambda_o = softmax_row_o(Matrix::row_vector({0.2, -0.1, 0.4}));
  for (int t = 0; t < 30; ++t) {
    const int n = 4 + 2 * static_cast<int>(rng.below(4));
    auto bundles = random_bundles(rng, n, 6);
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.below(2)));

    losses::TotalLossOptions o;
    o.weights = {0.8, 0.6};
    o.tau = 0.4;
    auto got = losses::total_loss(bundles, labels, lambda_o, o);
    CHECK(got.total == doctest::Approx(total_o(bundles, labels, lambda_o, o)).epsilon(1e-10));

    // Component switches remove exactly their terms.
    losses::TotalLossOptions no_lm = o;
    no_lm.use_lm = {false, false, false};
    auto cls_only = losses::total_loss(bundles, labels, lambda_o, no_lm);
    CHECK(cls_only.total ==
          doctest::Approx(total_o(bundles, labels, lambda_o, no_lm)).epsilon(1e-10));

    // lambda_m = 0 reduces to the classification part.
    losses::TotalLossOptions zero_lm = o;
    zero_lm.weights.lambda_m = 0.0;
    losses::TotalLossOptions zero_cls = no_lm;
    zero_cls.weights.lambda_m = 0.0;
    CHECK(losses::total_loss(bundles, labels, lambda_o, zero_lm).total ==
          doctest::Approx(losses::total_loss(bundles, labels, lambda_o, zero_cls).total)
              .epsilon(1e-12));

    // lambda_c = lambda_m = 0 gives exactly zero.
    losses::TotalLossOptions zeroed = o;
    zeroed.weights = {0.0, 0.0};
    CHECK(losses::total_loss(bundles, labels, lambda_o, zeroed).total == 0.0);

    // Monotone nondecreasing in both weights.
    losses::TotalLossOptions heavier = o;
    heavier.weights = {o.weights.lambda_c + 0.5, o.weights.lambda_m + 0.5};
    CHECK(losses::total_loss(bundles, labels, lambda_o, heavier).total >= got.total - 1e-12);
  }

  // Single-label batch: every contrastive term is skipped.
  auto bundles = random_bundles(rng, 6, 6);
  std::vector<int> ones(6, 1);
  CHECK_FALSE(losses::batch_has_contrastive_term(ones));
  losses::TotalLossOptions o;
  auto breakdown = losses::total_loss(bundles, ones, lambda_o, o);
  for (int m = 0; m < 3; ++m) CHECK_FALSE(breakdown.lm[static_cast<std::size_t>(m)].has_value());
  losses::TotalLossOptions no_lm = o;
  no_lm.use_lm = {false, false, false};
  CHECK(breakdown.total ==
        doctest::Approx(losses::total_loss(bundles, ones, lambda_o, no_lm).total).epsilon(1e-12));

  CHECK(losses::batch_has_contrastive_term({0, 0, 1}));
  CHECK_FALSE(losses::batch_has_contrastive_term({0, 1}));
  CHECK_FALSE(losses::batch_has_contrastive_term({0, 0, 0}));
}

TEST_CASE("tape cross-entropy matches the plain function and finite differences") {
  Rng rng = Rng::stream(29, "ce-tape");
  for (int t = 0; t < 10; ++t) {
    const int n = 3 + static_cast<int>(rng.below(6));
    Matrix logits(n, 2);
    for (double& v : logits.data) v = rng.normal(0.0, 1.0);
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.below(2)));

    Tape tape;
    Value lg = tape.input(logits);
    Value probs = tape.softmax_rows(lg);
    Value loss = losses::cross_entropy_on_tape(tape, probs, labels);
    CHECK(tape.value(loss)(0, 0) ==
          doctest::Approx(losses::cross_entropy(tape.value(probs), labels)).epsilon(1e-12));

    tape.backward(loss);
    Matrix grad = tape.grad(lg);
    const double eps = 1e-6;
    for (std::size_t k = 0; k < logits.size(); ++k) {
      auto eval = [&](double delta) {
        Matrix shifted = logits;
        shifted.data[k] += delta;
        Tape t2;
        Value probs2 = t2.softmax_rows(t2.input(shifted));
        return losses::cross_entropy(t2.value(probs2), labels);
      };
      const double fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
      CHECK(grad.data[k] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("tape contrastive loss matches per-anchor composition and finite differences") {
  Rng rng = Rng::stream(31, "mml-tape");
  for (const bool inc : {false, true}) {
    for (const bool unit : {false, true}) {
      losses::MmlOptions opts{inc, unit};
      for (int t = 0; t < 5; ++t) {
        const int n = 5 + static_cast<int>(rng.below(4));
        const int d = 8;
        Matrix raw(n, d);
        Matrix proj(n, d);
        for (double& v : raw.data) v = rng.normal(0.0, 1.0);
        for (double& v : proj.data) v = rng.normal(0.0, 0.5);
        std::vector<int> labels = {0, 0, 1};  // guarantee a contrastive term
        for (int i = 3; i < n; ++i) labels.push_back(static_cast<int>(rng.below(2)));
        REQUIRE(losses::batch_has_contrastive_term(labels));
        const double tau = 0.5;

        // Plain per-anchor composition.
        double want = 0.0;
        int contributing = 0;
        for (int i = 0; i < n; ++i) {
          losses::ContrastiveBatch cb;
          cb.tau = tau;
          cb.anchor_raw = Matrix(1, d);
          cb.anchor_proj = Matrix(1, d);
          for (int c = 0; c < d; ++c) {
            cb.anchor_raw(0, c) = raw(i, c);
            cb.anchor_proj(0, c) = proj(i, c);
          }
          for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            Matrix rj(1, d), pj(1, d);
            for (int c = 0; c < d; ++c) {
              rj(0, c) = raw(j, c);
              pj(0, c) = proj(j, c);
            }
            if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)])
              cb.positives.push_back({rj, pj});
            else
              cb.negatives.push_back({rj, pj});
          }
          if (auto v = losses::mml_loss(cb, opts)) {
            want += *v;
            ++contributing;
          }
        }
        want /= contributing;

        Tape tape;
        Value pv = tape.input(proj);
        Value loss = losses::mml_loss_on_tape(tape, pv, raw, labels, tau, opts);
        CHECK(tape.value(loss)(0, 0) == doctest::Approx(want).epsilon(1e-10));

        tape.backward(loss);
        Matrix grad = tape.grad(pv);
        const double eps = 1e-5;
        for (std::size_t k = 0; k < proj.size(); ++k) {
          auto eval = [&](double delta) {
            Matrix shifted = proj;
            shifted.data[k] += delta;
            Tape t2;
            Value loss2 = losses::mml_loss_on_tape(t2, t2.input(shifted), raw, labels, tau, opts);
            return t2.value(loss2)(0, 0);
          };
          const double fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
          CHECK(grad.data[k] ==
                doctest::Approx(fd).epsilon(1e-4).scale(std::max(1.0, std::abs(fd))));
        }
      }
    }
  }
}
