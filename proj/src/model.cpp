#include "mmlnet/model.hpp"

#include "mmlnet/core/kernels.hpp"
#include "mmlnet/errors.hpp"

namespace mmlnet::model {

namespace {

const char* branch_prefix(Branch b) {
  switch (b) {
    case Branch::text: return "text";
    case Branch::image: return "image";
    case Branch::fused: return "fused";
  }
  throw InternalError("model: unknown branch");
}

ad::Value linear(ad::Tape& tape, ad::Value x, const ParamStore& store, const std::string& w,
                 const std::string& b) {
  return tape.add_rowvec(tape.matmul(x, tape.param(store.get(w))), tape.param(store.get(b)));
}

}  // namespace

ad::Value adapt(ad::Tape& tape, ad::Value cls, double alpha, const ParamStore& store,
                const std::string& prefix) {
  ad::Value a = tape.gelu(linear(tape, cls, store, prefix + "/w1", prefix + "/b1"));
  a = linear(tape, a, store, prefix + "/w2", prefix + "/b2");
  Matrix coeffs = Matrix::row_vector({alpha, 1.0 - alpha});
  return tape.lincomb(tape.constant(std::move(coeffs)), {a, cls});
}

std::pair<Matrix, Matrix> route(const Matrix& y_h, const Matrix& y_r, const Matrix& y_f,
                                const Matrix& lambda_logits) {
  if (lambda_logits.rows != 1 || lambda_logits.cols != 3)
    throw InternalError("route: lambda_logits must be 1x3");
  if (!y_h.same_shape(y_r) || !y_h.same_shape(y_f))
    throw InternalError("route: expert outputs must share a shape");
  Matrix lambda_o = kernels::softmax_rows(lambda_logits);
  Matrix y_o(y_h.rows, y_h.cols);
  for (std::size_t i = 0; i < y_o.size(); ++i)
    y_o.data[i] = lambda_o.data[0] * y_h.data[i] + lambda_o.data[1] * y_r.data[i] +
                  lambda_o.data[2] * y_f.data[i];
  return {std::move(y_o), std::move(lambda_o)};
}

MmlNet::MmlNet(const config::ExperimentConfig& cfg,
               std::shared_ptr<encoders::EncoderBackend> external)
    : cfg_(cfg), alpha_(cfg.has_ablation("drop_adapters") ? 0.0 : cfg.adapter_alpha) {
  config::validate(cfg_);
  if (cfg_.backend == "toy") {
    toy_ = std::make_unique<encoders::ToyEncoders>(store_, cfg_);
  } else {
    external_ = std::make_unique<encoders::ExternalEncoders>(std::move(external), cfg_.d);
  }
  const std::uint64_t seed = cfg_.seed;
  const int d = cfg_.d;
  const int hidden = cfg_.effective_adapter_hidden();
  const int proj = cfg_.effective_proj_dim();
  for (const char* side : {"adapter/text", "adapter/image"}) {
    store_.add(std::string(side) + "/w1", d, hidden, Init::XavierUniform, seed);
    store_.add(std::string(side) + "/b1", 1, hidden, Init::Zeros, seed);
    store_.add(std::string(side) + "/w2", hidden, d, Init::XavierUniform, seed);
    store_.add(std::string(side) + "/b2", 1, d, Init::Zeros, seed);
  }
  for (const char* head : {"head/text", "head/image", "head/fused"}) {
    store_.add(std::string(head) + "/w", d, 2, Init::XavierUniform, seed);
    store_.add(std::string(head) + "/b", 1, 2, Init::Zeros, seed);
  }
  encoders::register_attention(store_, "fusion/attn", d, seed, false);
  store_.add("fusion/ln_g", 1, d, Init::Ones, seed);
  store_.add("fusion/ln_b", 1, d, Init::Zeros, seed);
  store_.add("fusion/pool_w", 2 * d, 2, Init::XavierUniform, seed);
  store_.add("fusion/pool_b", 1, 2, Init::Zeros, seed);
  store_.add("route/lambda_logits", 1, 3, Init::Zeros, seed);
  for (const char* side : {"proj/text", "proj/image", "proj/fused"}) {
    store_.add(std::string(side) + "/w1", d, d, Init::XavierUniform, seed);
    store_.add(std::string(side) + "/b1", 1, d, Init::Zeros, seed);
    store_.add(std::string(side) + "/w2", d, proj, Init::XavierUniform, seed);
    store_.add(std::string(side) + "/b2", 1, proj, Init::Zeros, seed);
  }
}

ad::Value MmlNet::encode(ad::Tape& tape, const datasets::Sample& sample,
                         encoders::Modality which, encoders::DropoutSampler* dropout) const {
  if (toy_) {
    return which == encoders::Modality::text ? toy_->encode_text(tape, sample.tokens, dropout)
                                             : toy_->encode_image(tape, sample.image, dropout);
  }
  return which == encoders::Modality::text ? external_->encode_text(tape, sample.tokens)
                                           : external_->encode_image(tape, sample.image);
}

ForwardValues MmlNet::build_forward(ad::Tape& tape, const datasets::Sample& sample,
                                    encoders::DropoutSampler* dropout) const {
  ad::Value h_seq = encode(tape, sample, encoders::Modality::text, dropout);
  ad::Value r_seq = encode(tape, sample, encoders::Modality::image, dropout);

  ForwardValues out;
  out.F_T = adapt(tape, tape.slice_rows(h_seq, 0, 1), alpha_, store_, "adapter/text");
  out.F_I = adapt(tape, tape.slice_rows(r_seq, 0, 1), alpha_, store_, "adapter/image");
  out.y_h = tape.softmax_rows(linear(tape, out.F_T, store_, "head/text/w", "head/text/b"));
  out.y_r = tape.softmax_rows(linear(tape, out.F_I, store_, "head/image/w", "head/image/b"));

  // Joint self-attention over both token sequences, then attention pooling of
  // the two CLS positions into one fused feature.
  ad::Value joint = tape.concat_rows({h_seq, r_seq});
  ad::Value attn = encoders::multi_head_attention(tape, joint, store_, "fusion/attn", cfg_.heads);
  joint = encoders::layer_norm_affine(tape, tape.add(joint, attn), store_, "fusion/ln");
  ad::Value h_cls = tape.slice_rows(joint, 0, 1);
  ad::Value r_cls = tape.slice_rows(joint, h_seq.rows, h_seq.rows + 1);
  out.pool = tape.softmax_rows(
      linear(tape, tape.concat_cols({h_cls, r_cls}), store_, "fusion/pool_w", "fusion/pool_b"));
  out.f = tape.lincomb(out.pool, {h_cls, r_cls});
  out.y_f = tape.softmax_rows(linear(tape, out.f, store_, "head/fused/w", "head/fused/b"));

  out.lambda_o = tape.softmax_rows(tape.param(store_.get("route/lambda_logits")));
  out.y_o = tape.lincomb(out.lambda_o, {out.y_h, out.y_r, out.y_f});
  return out;
}

ExpertBundle MmlNet::forward(const datasets::Sample& sample) const {
  ad::Tape tape;
  ForwardValues v = build_forward(tape, sample, nullptr);
  ExpertBundle b;
  b.F_T = tape.value(v.F_T);
  b.F_I = tape.value(v.F_I);
  b.f = tape.value(v.f);
  b.y_h = tape.value(v.y_h);
  b.y_r = tape.value(v.y_r);
  b.y_f = tape.value(v.y_f);
  b.y_o = tape.value(v.y_o);
  b.lambda_o = tape.value(v.lambda_o);
  b.p_t = tape.value(v.pool)(0, 0);
  b.p_v = tape.value(v.pool)(0, 1);
  return b;
}

ad::Value MmlNet::project(ad::Tape& tape, ad::Value feature, Branch branch) const {
  const std::string prefix = std::string("proj/") + branch_prefix(branch);
  ad::Value h = tape.gelu(linear(tape, feature, store_, prefix + "/w1", prefix + "/b1"));
  h = linear(tape, h, store_, prefix + "/w2", prefix + "/b2");
  return tape.l2_normalize_rows(h);
}

}  // namespace mmlnet::model
