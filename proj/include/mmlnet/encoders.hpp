#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mmlnet/config.hpp"
#include "mmlnet/core/autodiff.hpp"
#include "mmlnet/core/matrix.hpp"
#include "mmlnet/core/params.hpp"
#include "mmlnet/core/rng.hpp"

namespace mmlnet::encoders {

enum class Modality { text, image };

/// CLS-prefixed token feature sequence: row 0 is the CLS feature, rows 1..L-1
/// are word or patch features. Width d matches across modalities.
struct TokenSequence {
  Matrix features;
  Modality modality = Modality::text;

  int length() const { return features.rows; }
  int dim() const { return features.cols; }
};

/// Draws inverted-dropout masks in a fixed site order; one sampler per
/// sample per forward pass keeps training deterministic.
struct DropoutSampler {
  Rng rng;
  double rate = 0.0;

  Matrix mask(int rows, int cols) {
    Matrix m(rows, cols);
    const double keep = 1.0 - rate;
    const double scale = 1.0 / keep;
    for (double& v : m.data) v = rng.uniform() < keep ? scale : 0.0;
    return m;
  }
};

/// Frozen feature provider contract for pretrained encoders: maps raw inputs
/// to CLS-prefixed sequences of a declared width. Providers own their
/// weights; nothing here trains through them.
struct EncoderBackend {
  virtual ~EncoderBackend() = default;
  virtual int dim() const = 0;
  virtual Matrix encode_text(const std::vector<std::string>& tokens) = 0;
  virtual Matrix encode_image(const Matrix& image) = 0;
};

/// Stable word bucket in [0, vocab_size).
int token_id(const std::string& word, int vocab_size);

/// Sinusoidal position table, rows 0..len-1.
Matrix position_encoding(int len, int d);

/// Registers q/k/v/output projections (with biases) under `prefix/`.
void register_attention(ParamStore& store, const std::string& prefix, int d, std::uint64_t seed,
                        bool encoder_group);

/// Attention over an LxD sequence with `heads` equal column slices, using the
/// projections registered under `prefix/`.
ad::Value multi_head_attention(ad::Tape& tape, ad::Value x, const ParamStore& store,
                               const std::string& prefix, int heads);

/// Registers the parameters of one pre-norm transformer block under
/// `prefix/` (attention, feed-forward with 2d hidden, two layer norms).
void register_transformer_block(ParamStore& store, const std::string& prefix, int d,
                                std::uint64_t seed, bool encoder_group);

/// Applies the block registered under `prefix/` to an LxD sequence.
ad::Value transformer_block(ad::Tape& tape, ad::Value x, const ParamStore& store,
                            const std::string& prefix, int heads, DropoutSampler* dropout);

/// Affine layer norm using `name_g` / `name_b` parameters.
ad::Value layer_norm_affine(ad::Tape& tape, ad::Value x, const ParamStore& store,
                            const std::string& name);

/// Trainable desk-scale encoders: word-hash embeddings and per-patch linear
/// projections feeding a small pre-norm transformer stack with a final norm.
class ToyEncoders {
 public:
  ToyEncoders(ParamStore& store, const config::ExperimentConfig& cfg);

  /// Tape-building forms used by training; dropout may be null (eval mode).
  ad::Value encode_text(ad::Tape& tape, const std::vector<std::string>& tokens,
                        DropoutSampler* dropout) const;
  ad::Value encode_image(ad::Tape& tape, const Matrix& image, DropoutSampler* dropout) const;

  /// Plain eval-mode forms satisfying the encoder contract directly.
  TokenSequence encode_text(const std::vector<std::string>& tokens) const;
  TokenSequence encode_image(const Matrix& image) const;

 private:
  ad::Value encode_stack(ad::Tape& tape, ad::Value rows, const std::string& side,
                         DropoutSampler* dropout) const;

  ParamStore* store_;
  int d_;
  int layers_;
  int heads_;
  int vocab_size_;
  int patch_size_;
};

/// Adapts a frozen external backend to the same tape-building interface;
/// outputs are constants (no gradient flows into the provider).
class ExternalEncoders {
 public:
  ExternalEncoders(std::shared_ptr<EncoderBackend> backend, int expected_d);

  ad::Value encode_text(ad::Tape& tape, const std::vector<std::string>& tokens) const;
  ad::Value encode_image(ad::Tape& tape, const Matrix& image) const;

 private:
  std::shared_ptr<EncoderBackend> backend_;
};

}  // namespace mmlnet::encoders
