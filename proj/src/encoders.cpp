#include "mmlnet/encoders.hpp"

#include <cmath>
#include <stdexcept>

#include "mmlnet/errors.hpp"

namespace mmlnet::encoders {

namespace {

ad::Value maybe_dropout(ad::Tape& tape, ad::Value x, DropoutSampler* dropout) {
  if (dropout == nullptr || dropout->rate <= 0.0) return x;
  return tape.hadamard(x, dropout->mask(x.rows, x.cols));
}

}  // namespace

ad::Value multi_head_attention(ad::Tape& tape, ad::Value x, const ParamStore& store,
                               const std::string& prefix, int heads) {
  const int d = x.cols;
  const int dh = d / heads;
  ad::Value q = tape.add_rowvec(tape.matmul(x, tape.param(store.get(prefix + "/wq"))),
                                tape.param(store.get(prefix + "/bq")));
  ad::Value k = tape.add_rowvec(tape.matmul(x, tape.param(store.get(prefix + "/wk"))),
                                tape.param(store.get(prefix + "/bk")));
  ad::Value v = tape.add_rowvec(tape.matmul(x, tape.param(store.get(prefix + "/wv"))),
                                tape.param(store.get(prefix + "/bv")));
  std::vector<ad::Value> ctx;
  ctx.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const int c0 = h * dh;
    const int c1 = c0 + dh;
    ad::Value qh = tape.slice_cols(q, c0, c1);
    ad::Value kh = tape.slice_cols(k, c0, c1);
    ad::Value vh = tape.slice_cols(v, c0, c1);
    ad::Value scores = tape.scale(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(double(dh)));
    ctx.push_back(tape.matmul(tape.softmax_rows(scores), vh));
  }
  ad::Value merged = heads == 1 ? ctx[0] : tape.concat_cols(ctx);
  return tape.add_rowvec(tape.matmul(merged, tape.param(store.get(prefix + "/wo"))),
                         tape.param(store.get(prefix + "/bo")));
}

int token_id(const std::string& word, int vocab_size) {
  return static_cast<int>(fnv1a64(word) % static_cast<std::uint64_t>(vocab_size));
}

Matrix position_encoding(int len, int d) {
  Matrix pe(len, d);
  for (int p = 0; p < len; ++p) {
    for (int i = 0; i < d; i += 2) {
      const double angle = p / std::pow(10000.0, double(i) / d);
      pe(p, i) = std::sin(angle);
      if (i + 1 < d) pe(p, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

void register_attention(ParamStore& store, const std::string& prefix, int d, std::uint64_t seed,
                        bool encoder_group) {
  for (const char* w : {"/wq", "/wk", "/wv", "/wo"})
    store.add(prefix + w, d, d, Init::XavierUniform, seed, encoder_group);
  for (const char* b : {"/bq", "/bk", "/bv", "/bo"})
    store.add(prefix + b, 1, d, Init::Zeros, seed, encoder_group);
}

void register_transformer_block(ParamStore& store, const std::string& prefix, int d,
                                std::uint64_t seed, bool encoder_group) {
  const int hidden = 2 * d;
  register_attention(store, prefix, d, seed, encoder_group);
  store.add(prefix + "/ln1_g", 1, d, Init::Ones, seed, encoder_group);
  store.add(prefix + "/ln1_b", 1, d, Init::Zeros, seed, encoder_group);
  store.add(prefix + "/ln2_g", 1, d, Init::Ones, seed, encoder_group);
  store.add(prefix + "/ln2_b", 1, d, Init::Zeros, seed, encoder_group);
  store.add(prefix + "/ffn_w1", d, hidden, Init::XavierUniform, seed, encoder_group);
  store.add(prefix + "/ffn_b1", 1, hidden, Init::Zeros, seed, encoder_group);
  store.add(prefix + "/ffn_w2", hidden, d, Init::XavierUniform, seed, encoder_group);
  store.add(prefix + "/ffn_b2", 1, d, Init::Zeros, seed, encoder_group);
}

ad::Value layer_norm_affine(ad::Tape& tape, ad::Value x, const ParamStore& store,
                            const std::string& name) {
  ad::Value n = tape.layernorm_rows(x);
  n = tape.mul_rowvec(n, tape.param(store.get(name + "_g")));
  return tape.add_rowvec(n, tape.param(store.get(name + "_b")));
}

ad::Value transformer_block(ad::Tape& tape, ad::Value x, const ParamStore& store,
                            const std::string& prefix, int heads, DropoutSampler* dropout) {
  ad::Value attn = multi_head_attention(tape, layer_norm_affine(tape, x, store, prefix + "/ln1"),
                                        store, prefix, heads);
  x = tape.add(x, maybe_dropout(tape, attn, dropout));
  ad::Value h = layer_norm_affine(tape, x, store, prefix + "/ln2");
  h = tape.add_rowvec(tape.matmul(h, tape.param(store.get(prefix + "/ffn_w1"))),
                      tape.param(store.get(prefix + "/ffn_b1")));
  h = tape.gelu(h);
  h = tape.add_rowvec(tape.matmul(h, tape.param(store.get(prefix + "/ffn_w2"))),
                      tape.param(store.get(prefix + "/ffn_b2")));
  return tape.add(x, maybe_dropout(tape, h, dropout));
}

ToyEncoders::ToyEncoders(ParamStore& store, const config::ExperimentConfig& cfg)
    : store_(&store),
      d_(cfg.d),
      layers_(cfg.layers),
      heads_(cfg.heads),
      vocab_size_(cfg.vocab_size),
      patch_size_(cfg.patch_size) {
  if (d_ % heads_ != 0) throw ConfigError("encoders: heads must divide d");
  const std::uint64_t seed = cfg.seed;
  store.add("text/embed", vocab_size_, d_, Init::Normal02, seed, true);
  store.add("text/cls", 1, d_, Init::Normal02, seed, true);
  store.add("image/patch_w", patch_size_ * patch_size_, d_, Init::XavierUniform, seed, true);
  store.add("image/patch_b", 1, d_, Init::Zeros, seed, true);
  store.add("image/cls", 1, d_, Init::Normal02, seed, true);
  for (const char* side : {"text", "image"}) {
    for (int l = 0; l < layers_; ++l)
      register_transformer_block(store, std::string(side) + "/l" + std::to_string(l), d_, seed,
                                 true);
    store.add(std::string(side) + "/lnf_g", 1, d_, Init::Ones, seed, true);
    store.add(std::string(side) + "/lnf_b", 1, d_, Init::Zeros, seed, true);
  }
}

ad::Value ToyEncoders::encode_stack(ad::Tape& tape, ad::Value rows, const std::string& side,
                                    DropoutSampler* dropout) const {
  ad::Value x = tape.add(rows, tape.constant(position_encoding(rows.rows, d_)));
  for (int l = 0; l < layers_; ++l)
    x = transformer_block(tape, x, *store_, side + "/l" + std::to_string(l), heads_, dropout);
  return layer_norm_affine(tape, x, *store_, side + "/lnf");
}

ad::Value ToyEncoders::encode_text(ad::Tape& tape, const std::vector<std::string>& tokens,
                                   DropoutSampler* dropout) const {
  ad::Value cls = tape.param(store_->get("text/cls"));
  ad::Value rows = cls;
  if (!tokens.empty()) {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const std::string& w : tokens) ids.push_back(token_id(w, vocab_size_));
    rows = tape.concat_rows({cls, tape.embed_rows(store_->get("text/embed"), std::move(ids))});
  }
  return encode_stack(tape, rows, "text", dropout);
}

ad::Value ToyEncoders::encode_image(ad::Tape& tape, const Matrix& image,
                                    DropoutSampler* dropout) const {
  if (image.rows % patch_size_ != 0 || image.cols % patch_size_ != 0)
    throw DataError("encoders: image sides must be divisible by the patch size");
  const int pr = image.rows / patch_size_;
  const int pc = image.cols / patch_size_;
  // Patch order matches the corruption module: row-major over the patch grid,
  // row-major pixels inside each patch.
  Matrix patches(pr * pc, patch_size_ * patch_size_);
  for (int p = 0; p < pr * pc; ++p) {
    const int r0 = (p / pc) * patch_size_;
    const int c0 = (p % pc) * patch_size_;
    for (int r = 0; r < patch_size_; ++r)
      for (int c = 0; c < patch_size_; ++c)
        patches(p, r * patch_size_ + c) = image(r0 + r, c0 + c);
  }
  ad::Value proj = tape.add_rowvec(
      tape.matmul(tape.constant(std::move(patches)), tape.param(store_->get("image/patch_w"))),
      tape.param(store_->get("image/patch_b")));
  ad::Value rows = tape.concat_rows({tape.param(store_->get("image/cls")), proj});
  return encode_stack(tape, rows, "image", dropout);
}

TokenSequence ToyEncoders::encode_text(const std::vector<std::string>& tokens) const {
  ad::Tape tape;
  ad::Value v = encode_text(tape, tokens, nullptr);
  return TokenSequence{tape.value(v), Modality::text};
}

TokenSequence ToyEncoders::encode_image(const Matrix& image) const {
  ad::Tape tape;
  ad::Value v = encode_image(tape, image, nullptr);
  return TokenSequence{tape.value(v), Modality::image};
}

ExternalEncoders::ExternalEncoders(std::shared_ptr<EncoderBackend> backend, int expected_d)
    : backend_(std::move(backend)) {
  if (!backend_) throw ConfigError("encoders: external backend requested but none provided");
  if (backend_->dim() != expected_d)
    throw ConfigError("encoders: external backend width " + std::to_string(backend_->dim()) +
                      " does not match configured d " + std::to_string(expected_d));
}

ad::Value ExternalEncoders::encode_text(ad::Tape& tape,
                                        const std::vector<std::string>& tokens) const {
  Matrix seq = backend_->encode_text(tokens);
  if (seq.rows < 1 || seq.cols != backend_->dim())
    throw DataError("encoders: external backend returned a malformed text sequence");
  return tape.constant(std::move(seq));
}

ad::Value ExternalEncoders::encode_image(ad::Tape& tape, const Matrix& image) const {
  Matrix seq = backend_->encode_image(image);
  if (seq.rows < 1 || seq.cols != backend_->dim())
    throw DataError("encoders: external backend returned a malformed image sequence");
  return tape.constant(std::move(seq));
}

}  // namespace mmlnet::encoders
