#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "palign/autodiff.hpp"
#include "palign/config.hpp"
#include "palign/peft.hpp"

namespace palign {

struct EncoderDims {
  int image_size = 16;
  int patch_size = 4;
  int channels = 3;
  int layers = 2;
  int width = 32;
  int heads = 4;
  int embed_dim = 32;
  int text_len = 25;  // prompt sequence length the text tower accepts
  int k = 12;         // class-name token table size

  static EncoderDims from(const Config& c) {
    EncoderDims d;
    d.image_size = c.image_size;
    d.patch_size = c.patch_size;
    d.channels = c.channels;
    d.layers = c.layers;
    d.width = c.width;
    d.heads = c.heads;
    d.embed_dim = c.embed_dim;
    d.text_len = c.m1 + c.m2 + 1;
    d.k = c.k;
    return d;
  }

  int patches_per_side() const { return image_size / patch_size; }
  int patch_count() const { return patches_per_side() * patches_per_side(); }
  int patch_dim() const { return patch_size * patch_size * channels; }
};

// Fixed sinusoidal position table [len, width].
template <typename R>
Tensor<R> sinusoidal_positions(int len, int width) {
  Tensor<R> pe({len, width});
  for (int p = 0; p < len; ++p)
    for (int j = 0; j < width; ++j) {
      double exponent = static_cast<double>(2 * (j / 2)) / static_cast<double>(width);
      double angle = static_cast<double>(p) / std::pow(10000.0, exponent);
      pe.at(p, j) = static_cast<R>((j % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

// Image [H,W,C] row-major (a flat [H*W*C] is accepted) cut into
// non-overlapping patches, each flattened row-major: [patch_count, patch_dim].
template <typename R>
Tensor<R> patchify(const Tensor<R>& image, const EncoderDims& dims) {
  int64_t need = static_cast<int64_t>(dims.image_size) * dims.image_size * dims.channels;
  if (image.numel() != need)
    throw DimensionError("patchify: image has " + std::to_string(image.numel()) + " values, expected " +
                         std::to_string(need));
  int side = dims.patches_per_side();
  int ps = dims.patch_size;
  int ch = dims.channels;
  int w = dims.image_size;
  Tensor<R> out({dims.patch_count(), dims.patch_dim()});
  const R* src = image.data();
  for (int pi = 0; pi < side; ++pi)
    for (int pj = 0; pj < side; ++pj) {
      R* dst = out.data() + static_cast<int64_t>(pi * side + pj) * dims.patch_dim();
      for (int r = 0; r < ps; ++r)
        for (int c = 0; c < ps; ++c)
          for (int d = 0; d < ch; ++d)
            *dst++ = src[((pi * ps + r) * w + (pj * ps + c)) * ch + d];
    }
  return out;
}

template <typename R>
struct TransformerLayer {
  Var<R> wq, bq, wk, bk, wv, bv, wo, bo;  // row convention: y = x W + b
  Var<R> w1, b1, w2, b2;                  // ffn width -> hidden -> width
};

namespace detail {

template <typename R>
TransformerLayer<R> init_layer(int width, int hidden, Rng& rng) {
  auto mat = [&](int in, int out) {
    Tensor<R> t({in, out});
    t.fill_normal(rng, 1.0 / std::sqrt(static_cast<double>(in)));
    return constant(std::move(t));
  };
  TransformerLayer<R> l;
  l.wq = mat(width, width);
  l.bq = constant(Tensor<R>({width}));
  l.wk = mat(width, width);
  l.bk = constant(Tensor<R>({width}));
  l.wv = mat(width, width);
  l.bv = constant(Tensor<R>({width}));
  l.wo = mat(width, width);
  l.bo = constant(Tensor<R>({width}));
  l.w1 = mat(width, hidden);
  l.b1 = constant(Tensor<R>({hidden}));
  l.w2 = mat(hidden, width);
  l.b2 = constant(Tensor<R>({width}));
  return l;
}

template <typename R>
void layer_checksum(const TransformerLayer<R>& l, uint64_t& h) {
  for (const Var<R>* w : {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.w1, &l.b1, &l.w2, &l.b2})
    h = splitmix64(h ^ tensor_checksum((*w)->value));
}

// Pre-norm block. The PEFT hooks cover LoRA on the q/v projections and the
// bottleneck adapter after the feed-forward path.
template <typename R>
Var<R> transformer_block(const Var<R>& x, const TransformerLayer<R>& l, int heads,
                         const PeftModule<R>* peft, int layer_idx) {
  int width = x->value.cols();
  int dh = width / heads;
  auto xn = layernorm_rows(x);

  auto q = add_rowvec(matmul(xn, l.wq), l.bq);
  auto k = add_rowvec(matmul(xn, l.wk), l.bk);
  auto v = add_rowvec(matmul(xn, l.wv), l.bv);
  if (peft && peft->kind == PeftKind::Lora) {
    const auto& ll = peft->lora[static_cast<size_t>(layer_idx)];
    q = add(q, matmul(matmul(xn, transpose(ll.a_q)), transpose(ll.b_q)));
    v = add(v, matmul(matmul(xn, transpose(ll.a_v)), transpose(ll.b_v)));
  }

  std::vector<Var<R>> head_outs;
  head_outs.reserve(static_cast<size_t>(heads));
  R inv_sqrt = static_cast<R>(1.0 / std::sqrt(static_cast<double>(dh)));
  for (int h = 0; h < heads; ++h) {
    auto qh = slice_cols(q, h * dh, (h + 1) * dh);
    auto kh = slice_cols(k, h * dh, (h + 1) * dh);
    auto vh = slice_cols(v, h * dh, (h + 1) * dh);
    auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    head_outs.push_back(matmul(softmax(scores), vh));
  }
  auto att = add_rowvec(matmul(concat_cols(head_outs), l.wo), l.bo);
  auto res = add(x, att);

  auto hn = layernorm_rows(res);
  auto f = add_rowvec(matmul(relu(add_rowvec(matmul(hn, l.w1), l.b1)), l.w2), l.b2);
  if (peft && peft->kind == PeftKind::Adapter) {
    const auto& al = peft->adapters[static_cast<size_t>(layer_idx)];
    f = adapter_apply(f, al.w_up, al.w_dn);
  }
  return add(res, f);
}

}  // namespace detail

// Frozen vision tower. All weights are constants; gradients flow only
// through PEFT parameters threaded into the blocks.
template <typename R>
class VisionEncoder {
 public:
  VisionEncoder(const EncoderDims& dims, uint64_t seed) : dims_(dims) {
    Rng rng(derive_seed(seed, {0x7151u}));
    Tensor<R> wp({dims.patch_dim(), dims.width});
    wp.fill_normal(rng, 1.0 / std::sqrt(static_cast<double>(dims.patch_dim())));
    w_patch_ = constant(std::move(wp));
    b_patch_ = constant(Tensor<R>({dims.width}));
    pos_ = constant(sinusoidal_positions<R>(dims.patch_count(), dims.width));
    for (int l = 0; l < dims.layers; ++l)
      layers_.push_back(detail::init_layer<R>(dims.width, 2 * dims.width, rng));
    Tensor<R> wo({dims.width, dims.embed_dim});
    wo.fill_normal(rng, 1.0 / std::sqrt(static_cast<double>(dims.width)));
    w_out_ = constant(std::move(wo));
  }

  const EncoderDims& dims() const { return dims_; }

  // image -> [embed_dim]; PEFT optional, width-checked.
  Var<R> encode(const Tensor<R>& image, const PeftModule<R>* peft = nullptr) const {
    check_peft(peft);
    auto tokens = constant(patchify(image, dims_));
    auto x = add(add_rowvec(matmul(tokens, w_patch_), b_patch_), pos_);
    return run_tokens(x, peft);
  }

  // Entry point for pre-projected content tokens [patch_count, width].
  Var<R> encode_tokens(const Var<R>& content, const PeftModule<R>* peft = nullptr) const {
    check_peft(peft);
    if (content->value.ndim() != 2 || content->value.cols() != dims_.width)
      throw DimensionError("encode_tokens: want [n," + std::to_string(dims_.width) + "], got " +
                           Tensor<R>::shape_string(content->value.shape()));
    return run_tokens(content, peft);
  }

  uint64_t frozen_checksum() const {
    uint64_t h = 0x452821e638d01377ULL;
    h = splitmix64(h ^ tensor_checksum(w_patch_->value));
    h = splitmix64(h ^ tensor_checksum(b_patch_->value));
    for (const auto& l : layers_) detail::layer_checksum(l, h);
    h = splitmix64(h ^ tensor_checksum(w_out_->value));
    return h;
  }

 private:
  void check_peft(const PeftModule<R>* peft) const {
    if (!peft) return;
    if (peft->width != dims_.width)
      throw ConfigError("peft width " + std::to_string(peft->width) + " does not match encoder width " +
                        std::to_string(dims_.width));
    if (peft->num_layers != dims_.layers)
      throw ConfigError("peft layer count " + std::to_string(peft->num_layers) +
                        " does not match encoder layers " + std::to_string(dims_.layers));
  }

  Var<R> run_tokens(Var<R> x, const PeftModule<R>* peft) const {
    bool prompted = peft && peft->kind == PeftKind::Prompt;
    int n_content = x->value.rows();
    for (int l = 0; l < dims_.layers; ++l) {
      if (prompted) {
        // deep prompting: fresh rows each layer, previous prompt outputs dropped
        auto content = (l == 0) ? x : slice_rows(x, peft->m3, peft->m3 + n_content);
        x = visual_prompt_apply(content, peft->prompts[static_cast<size_t>(l)]);
      }
      x = detail::transformer_block(x, layers_[static_cast<size_t>(l)], dims_.heads, peft, l);
    }
    auto content = prompted ? slice_rows(x, peft->m3, peft->m3 + n_content) : x;
    auto pooled = mean_axis0(content);
    return reshape(matmul(reshape(pooled, {1, dims_.width}), w_out_), {dims_.embed_dim});
  }

  EncoderDims dims_;
  Var<R> w_patch_, b_patch_;
  Var<R> pos_;
  std::vector<TransformerLayer<R>> layers_;
  Var<R> w_out_;
};

// Frozen text tower plus the class-name token table.
template <typename R>
class TextEncoder {
 public:
  TextEncoder(const EncoderDims& dims, uint64_t seed) : dims_(dims) {
    Rng rng(derive_seed(seed, {0x7e87u}));
    Tensor<R> ct({dims.k, dims.width});
    ct.fill_normal(rng, 1.0 / std::sqrt(static_cast<double>(dims.width)));
    class_tokens_ = std::move(ct);
    pos_ = constant(sinusoidal_positions<R>(dims.text_len, dims.width));
    for (int l = 0; l < dims.layers; ++l)
      layers_.push_back(detail::init_layer<R>(dims.width, 2 * dims.width, rng));
    Tensor<R> wo({dims.width, dims.embed_dim});
    wo.fill_normal(rng, 1.0 / std::sqrt(static_cast<double>(dims.width)));
    w_out_ = constant(std::move(wo));
  }

  const EncoderDims& dims() const { return dims_; }

  // token sequence [text_len, width] -> [embed_dim]
  Var<R> encode(const Var<R>& tokens) const {
    if (tokens->value.ndim() != 2 || tokens->value.rows() != dims_.text_len ||
        tokens->value.cols() != dims_.width)
      throw ContractError("text_encode: sequence must be [" + std::to_string(dims_.text_len) + "," +
                          std::to_string(dims_.width) + "], got " +
                          Tensor<R>::shape_string(tokens->value.shape()));
    auto x = add(tokens, pos_);
    for (int l = 0; l < dims_.layers; ++l)
      x = detail::transformer_block<R>(x, layers_[static_cast<size_t>(l)], dims_.heads, nullptr, l);
    auto pooled = mean_axis0(x);
    return reshape(matmul(reshape(pooled, {1, dims_.width}), w_out_), {dims_.embed_dim});
  }

  // frozen per-class token; class ids are zero-based
  Tensor<R> class_token(int cls) const {
    if (cls < 0 || cls >= dims_.k)
      throw ContractError("class id " + std::to_string(cls) + " outside [0," + std::to_string(dims_.k) + ")");
    Tensor<R> row({1, dims_.width});
    for (int j = 0; j < dims_.width; ++j) row.at(0, j) = class_tokens_.at(cls, j);
    return row;
  }

  uint64_t frozen_checksum() const {
    uint64_t h = 0xbe5466cf34e90c6cULL;
    h = splitmix64(h ^ tensor_checksum(class_tokens_));
    for (const auto& l : layers_) detail::layer_checksum(l, h);
    h = splitmix64(h ^ tensor_checksum(w_out_->value));
    return h;
  }

 private:
  EncoderDims dims_;
  Tensor<R> class_tokens_;
  Var<R> pos_;
  std::vector<TransformerLayer<R>> layers_;
  Var<R> w_out_;
};

// Scaled cosine logits of one image embedding against a matrix of prompt
// embeddings: [rows]. Temperature divides the cosine.
template <typename R>
Var<R> similarity_logits(const Var<R>& prompt_embs, const Var<R>& image_emb, R temperature) {
  if (temperature <= R(0)) throw ContractError("similarity temperature must be positive");
  if (prompt_embs->value.ndim() != 2 || image_emb->value.ndim() != 1 ||
      prompt_embs->value.cols() != image_emb->value.dim(0))
    throw DimensionError("similarity_logits: prompt matrix " + Tensor<R>::shape_string(prompt_embs->value.shape()) +
                         " vs embedding " + Tensor<R>::shape_string(image_emb->value.shape()));
  auto pn = normalize_rows(prompt_embs);
  auto in = normalize_rows(reshape(image_emb, {1, image_emb->value.dim(0)}));
  auto cos = reshape(matmul(pn, transpose(in)), {prompt_embs->value.rows()});
  return scale(cos, R(1) / temperature);
}

// Probabilities over all prompt rows (both domains stacked): softmax of the
// scaled cosine logits.
template <typename R>
Var<R> class_probabilities(const Var<R>& prompt_embs, const Var<R>& image_emb, R temperature) {
  return softmax(similarity_logits(prompt_embs, image_emb, temperature));
}

}  // namespace palign
