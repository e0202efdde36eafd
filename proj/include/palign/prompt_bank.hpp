#pragma once

#include <string>
#include <vector>

#include "palign/autodiff.hpp"
#include "palign/config.hpp"
#include "palign/encoders.hpp"
#include "palign/optim.hpp"

namespace palign {

enum class Domain { Source, Target };

// Learnable textual prompts for one source-target pair: per-class context
// rows V, one domain row block per side. Banks never share parameters
// across pairs.
template <typename R>
struct PromptBank {
  int pair_index = 0;
  int k = 0, m1 = 0, m2 = 0, width = 0;
  Var<R> v;        // [k, m1, width]
  Var<R> ds, dt;   // [m2, width]

  static PromptBank init(const Config& cfg, int pair_index, uint64_t seed) {
    PromptBank b;
    b.pair_index = pair_index;
    b.k = cfg.k;
    b.m1 = cfg.m1;
    b.m2 = cfg.m2;
    b.width = cfg.width;
    Rng rng(derive_seed(seed, {0xba7eu, static_cast<uint64_t>(pair_index)}));
    const double init_std = 0.02;
    Tensor<R> v({b.k, b.m1, b.width});
    v.fill_normal(rng, init_std);
    Tensor<R> ds({b.m2, b.width});
    ds.fill_normal(rng, init_std);
    Tensor<R> dt({b.m2, b.width});
    dt.fill_normal(rng, init_std);
    std::string p = "pair" + std::to_string(pair_index);
    b.v = param(std::move(v), p + ".V");
    b.ds = param(std::move(ds), p + ".Ds");
    b.dt = param(std::move(dt), p + ".Dt");
    return b;
  }

  // [m1+m2+1, width]: class context, then domain rows, then the frozen
  // class-name token.
  Var<R> assemble(int cls, Domain dom, const TextEncoder<R>& text) const {
    if (cls < 0 || cls >= k)
      throw ContractError("assemble: class id " + std::to_string(cls) + " outside [0," + std::to_string(k) + ")");
    auto ctx = slice_rows(reshape(v, {k * m1, width}), cls * m1, (cls + 1) * m1);
    auto dom_rows = dom == Domain::Source ? ds : dt;
    auto cls_tok = constant(text.class_token(cls));
    return concat_rows<R>({ctx, dom_rows, cls_tok});
  }

  NamedParams<R> named_params() const {
    std::string p = "pair" + std::to_string(pair_index);
    return {{p + ".V", v}, {p + ".Ds", ds}, {p + ".Dt", dt}};
  }

  int64_t param_count() const {
    return static_cast<int64_t>(k) * m1 * width + 2LL * m2 * width;
  }
};

// Embeddings of every prompt row of one bank: source classes 0..k-1 then
// target classes 0..k-1, shape [2k, embed_dim].
template <typename R>
Var<R> encode_prompt_matrix(const PromptBank<R>& bank, const TextEncoder<R>& text) {
  std::vector<Var<R>> rows;
  rows.reserve(static_cast<size_t>(2 * bank.k));
  for (Domain dom : {Domain::Source, Domain::Target})
    for (int cls = 0; cls < bank.k; ++cls) {
      auto emb = text.encode(bank.assemble(cls, dom, text));
      rows.push_back(reshape(emb, {1, emb->value.dim(0)}));
    }
  return concat_rows(rows);
}

}  // namespace palign
