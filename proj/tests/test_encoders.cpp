#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "mmlnet/config.hpp"
#include "mmlnet/core/rng.hpp"
#include "mmlnet/encoders.hpp"
#include "mmlnet/errors.hpp"

using mmlnet::ConfigError;
using mmlnet::DataError;
using mmlnet::Matrix;
using mmlnet::ParamStore;
using mmlnet::Rng;
using mmlnet::ad::Tape;
using mmlnet::ad::Value;
namespace enc = mmlnet::encoders;

namespace {

mmlnet::config::ExperimentConfig tiny_config() {
  mmlnet::config::ExperimentConfig cfg;
  cfg.d = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.vocab_size = 64;
  cfg.patch_size = 8;
  cfg.image_side = 16;
  cfg.seed = 5;
  return cfg;
}

Matrix random_image(Rng& rng, int side) {
  Matrix m(side, side);
  for (double& v : m.data) v = rng.uniform();
  return m;
}

// Scalar contraction sum(y .* w) for finite-difference checks.
double contract(const Matrix& y, const Matrix& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data[i] * w.data[i];
  return s;
}

Value contract_on_tape(Tape& tape, Value y, const Matrix& w) {
  Value masked = tape.hadamard(y, w);
  std::vector<Value> rows;
  for (int r = 0; r < y.rows; ++r) rows.push_back(tape.slice_rows(masked, r, r + 1));
  Value flat = rows.size() == 1 ? rows[0] : tape.concat_cols(rows);
  return tape.matmul_nt(flat, tape.constant(Matrix(1, flat.cols, std::vector<double>(
                                                static_cast<std::size_t>(flat.cols), 1.0))));
}

}  // namespace

TEST_CASE("token ids are stable hashes inside the vocabulary") {
  CHECK(enc::token_id("foobar", 64) == 40);  // 0x85944171f73967e8 mod 64
  for (const char* w : {"a", "beta", "gamma", "delta-long-token"}) {
    const int id = enc::token_id(w, 97);
    CHECK(id >= 0);
    CHECK(id < 97);
    CHECK(id == enc::token_id(w, 97));
  }
}

TEST_CASE("position encoding starts at (0, 1) pairs and stays bounded") {
  Matrix pe = enc::position_encoding(6, 8);
  for (int i = 0; i < 8; i += 2) {
    CHECK(pe(0, i) == doctest::Approx(0.0));
    CHECK(pe(0, i + 1) == doctest::Approx(1.0));
  }
  for (double v : pe.data) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("toy encoders produce CLS-prefixed sequences of the configured width") {
  auto cfg = tiny_config();
  ParamStore store;
  enc::ToyEncoders toy(store, cfg);

  enc::TokenSequence text = toy.encode_text({"one", "two", "three"});
  CHECK(text.length() == 4);
  CHECK(text.dim() == 16);
  CHECK(text.features.all_finite());

  // Fully removed text collapses to the CLS feature alone.
  enc::TokenSequence empty = toy.encode_text({});
  CHECK(empty.length() == 1);
  CHECK(empty.dim() == 16);
  CHECK(empty.features.all_finite());

  Rng rng = Rng::stream(3, "image");
  enc::TokenSequence image = toy.encode_image(random_image(rng, 16));
  CHECK(image.length() == 5);  // 4 patches + CLS
  CHECK(image.dim() == 16);
  CHECK(image.features.all_finite());

  // A fully masked image is still a valid input.
  enc::TokenSequence blank = toy.encode_image(Matrix(16, 16));
  CHECK(blank.length() == 5);
  CHECK(blank.features.all_finite());

  CHECK_THROWS_AS((void)toy.encode_image(Matrix(15, 16)), DataError);
}

TEST_CASE("encoders are deterministic and distinguish inputs") {
  auto cfg = tiny_config();
  ParamStore s1, s2;
  enc::ToyEncoders t1(s1, cfg), t2(s2, cfg);

  enc::TokenSequence a = t1.encode_text({"alpha", "beta"});
  enc::TokenSequence b = t2.encode_text({"alpha", "beta"});
  CHECK(a.features == b.features);

  enc::TokenSequence c = t1.encode_text({"alpha", "gamma"});
  CHECK_FALSE(a.features == c.features);

  auto other = cfg;
  other.seed = 6;
  ParamStore s3;
  enc::ToyEncoders t3(s3, other);
  CHECK_FALSE(t3.encode_text({"alpha", "beta"}).features == a.features);
}

TEST_CASE("every encoder parameter carries the encoder-group flag") {
  auto cfg = tiny_config();
  ParamStore store;
  enc::ToyEncoders toy(store, cfg);
  CHECK(store.count() > 0);
  for (const auto& p : store.all()) CHECK(p.encoder_group);
}

TEST_CASE("dropout masks perturb training forwards only") {
  auto cfg = tiny_config();
  ParamStore store;
  enc::ToyEncoders toy(store, cfg);
  const std::vector<std::string> words = {"x", "y", "z"};

  Tape eval_tape;
  Matrix eval_out = eval_tape.value(toy.encode_text(eval_tape, words, nullptr));

  enc::DropoutSampler drop{Rng::stream(9, "drop"), 0.3};
  Tape train_tape;
  Matrix train_out = train_tape.value(toy.encode_text(train_tape, words, &drop));
  CHECK_FALSE(train_out == eval_out);
  CHECK(train_out.all_finite());

  // Rate zero is exactly the eval path.
  enc::DropoutSampler none{Rng::stream(9, "drop"), 0.0};
  Tape none_tape;
  CHECK(none_tape.value(toy.encode_text(none_tape, words, &none)) == eval_out);
}

TEST_CASE("encoder gradients match central finite differences") {
  auto cfg = tiny_config();
  ParamStore store;
  enc::ToyEncoders toy(store, cfg);
  Rng rng = Rng::stream(21, "fd");
  const std::vector<std::string> words = {"alpha", "beta"};
  Matrix image = random_image(rng, 16);

  for (const bool use_text : {true, false}) {
    Matrix w(use_text ? 3 : 5, 16);
    for (double& v : w.data) v = rng.normal(0.0, 1.0);

    auto eval = [&]() {
      Tape tape;
      Value y = use_text ? toy.encode_text(tape, words, nullptr)
                         : toy.encode_image(tape, image, nullptr);
      return contract(tape.value(y), w);
    };

    Tape tape;
    Value y =
        use_text ? toy.encode_text(tape, words, nullptr) : toy.encode_image(tape, image, nullptr);
    Value root = contract_on_tape(tape, y, w);
    tape.backward(root);
    store.zero_grads();
    tape.accumulate_param_grads(store);

    const std::string side = use_text ? "text" : "image";
    const std::vector<std::string> names = {
        side + "/cls",          side + "/l0/wq",     side + "/l0/wo",
        side + "/l0/ffn_w1",    side + "/l0/ln1_g",  side + "/lnf_b",
        use_text ? "text/embed" : "image/patch_w"};
    const double eps = 1e-5;
    for (const std::string& name : names) {
      auto& p = store.get(name);
      for (int probe = 0; probe < 4; ++probe) {
        std::size_t k = rng.below(p.value.size());
        if (name == "text/embed") {
          // Probe rows the words actually hit, else the gradient is zero.
          const int row = enc::token_id(probe % 2 == 0 ? "alpha" : "beta", cfg.vocab_size);
          k = static_cast<std::size_t>(row) * 16 + rng.below(16);
        }
        const double saved = p.value.data[k];
        p.value.data[k] = saved + eps;
        const double up = eval();
        p.value.data[k] = saved - eps;
        const double down = eval();
        p.value.data[k] = saved;
        const double fd = (up - down) / (2.0 * eps);
        CHECK(p.grad.data[k] ==
              doctest::Approx(fd).epsilon(1e-4).scale(std::max(1.0, std::abs(fd))));
      }
    }
  }
}

TEST_CASE("external backends are validated and frozen") {
  struct FixedBackend : enc::EncoderBackend {
    int dim() const override { return 8; }
    Matrix encode_text(const std::vector<std::string>& tokens) override {
      Matrix m(static_cast<int>(tokens.size()) + 1, 8);
      m.fill(0.25);
      return m;
    }
    Matrix encode_image(const Matrix&) override {
      Matrix m(3, 8);
      m.fill(-0.5);
      return m;
    }
  };

  auto backend = std::make_shared<FixedBackend>();
  CHECK_THROWS_AS(enc::ExternalEncoders(backend, 16), ConfigError);
  CHECK_THROWS_AS(enc::ExternalEncoders(nullptr, 8), ConfigError);

  enc::ExternalEncoders ext(backend, 8);
  Tape tape;
  Value t = ext.encode_text(tape, {"a", "b"});
  CHECK(t.rows == 3);
  CHECK(t.cols == 8);
  Value img = ext.encode_image(tape, Matrix(4, 4));
  CHECK(img.rows == 3);
  CHECK(tape.value(img)(0, 0) == doctest::Approx(-0.5));
  // Constant leaves terminate backward cleanly.
  Value root = tape.matmul_nt(tape.slice_rows(t, 0, 1),
                              tape.constant(Matrix(1, 8, std::vector<double>(8, 1.0))));
  tape.backward(root);
  CHECK(tape.value(root)(0, 0) == doctest::Approx(2.0));
}
