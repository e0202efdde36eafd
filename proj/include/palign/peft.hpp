#pragma once

#include <string>
#include <vector>

#include "palign/autodiff.hpp"
#include "palign/config.hpp"
#include "palign/optim.hpp"
#include "palign/rng.hpp"

namespace palign {

// Prepend prompt rows to content tokens: [m3+n, d].
template <typename R>
Var<R> visual_prompt_apply(const Var<R>& tokens, const Var<R>& prompts) {
  if (tokens->value.ndim() != 2 || prompts->value.ndim() != 2 || tokens->value.cols() != prompts->value.cols())
    throw DimensionError("visual_prompt_apply: token width " + std::to_string(tokens->value.cols()) +
                         " vs prompt width " + std::to_string(prompts->value.cols()));
  return concat_rows<R>({prompts, tokens});
}

// y = W x + B (A x), column convention: x is [d_in, n], W [d_out, d_in],
// A [r, d_in], B [d_out, r]. The delta B*A never gets materialized.
template <typename R>
Var<R> lora_apply(const Var<R>& x, const Var<R>& w, const Var<R>& a, const Var<R>& b) {
  if (a->value.rows() != b->value.cols())
    throw DimensionError("lora_apply: rank mismatch between A and B");
  return add(matmul(w, x), matmul(b, matmul(a, x)));
}

// h' = layernorm(h + W_dn relu(W_up h)); h holds row vectors [n, d] or a
// single [d]. Exactly one residual plus one layernorm.
template <typename R>
Var<R> adapter_apply(const Var<R>& h, const Var<R>& w_up, const Var<R>& w_dn) {
  bool vec = h->value.ndim() == 1;
  Var<R> rows = vec ? reshape(h, {1, h->value.dim(0)}) : h;
  if (rows->value.cols() != w_up->value.cols())
    throw DimensionError("adapter_apply: width " + std::to_string(rows->value.cols()) + " vs W_up input " +
                         std::to_string(w_up->value.cols()));
  auto f = matmul(relu(matmul(rows, transpose(w_up))), transpose(w_dn));
  auto out = layernorm_rows(add(rows, f));
  return vec ? reshape(out, {h->value.dim(0)}) : out;
}

// One shared visual PEFT instance; exactly one of the three parameter sets
// is populated, chosen by kind.
template <typename R>
struct PeftModule {
  PeftKind kind = PeftKind::Lora;
  int num_layers = 0;
  int width = 0;
  int m3 = 0, r1 = 0, r2 = 0;

  std::vector<Var<R>> prompts;  // per layer [m3, width]

  struct LoraLayer {
    Var<R> a_q, b_q, a_v, b_v;  // a [r1, width], b [width, r1]
  };
  std::vector<LoraLayer> lora;

  struct AdapterLayer {
    Var<R> w_up, w_dn;  // up [r2, width], dn [width, r2]
  };
  std::vector<AdapterLayer> adapters;

  static PeftModule init(const Config& cfg, uint64_t seed) {
    PeftModule m;
    m.kind = cfg.peft_kind;
    m.num_layers = cfg.layers;
    m.width = cfg.width;
    m.m3 = cfg.m3;
    m.r1 = cfg.r1;
    m.r2 = cfg.r2;
    if (m.r2 >= m.width) throw ConfigError("adapter bottleneck r2 must be narrower than width");
    Rng rng(derive_seed(seed, {0x9ef7u}));
    const double init_std = 0.02;
    for (int l = 0; l < m.num_layers; ++l) {
      switch (m.kind) {
        case PeftKind::Prompt: {
          Tensor<R> e({m.m3, m.width});
          e.fill_normal(rng, init_std);
          m.prompts.push_back(param(std::move(e)));
          break;
        }
        case PeftKind::Lora: {
          LoraLayer ll;
          Tensor<R> aq({m.r1, m.width}), av({m.r1, m.width});
          aq.fill_normal(rng, init_std);
          av.fill_normal(rng, init_std);
          // B starts at zero so the adapted encoder equals the baseline
          ll.a_q = param(std::move(aq));
          ll.b_q = param(Tensor<R>({m.width, m.r1}));
          ll.a_v = param(std::move(av));
          ll.b_v = param(Tensor<R>({m.width, m.r1}));
          m.lora.push_back(std::move(ll));
          break;
        }
        case PeftKind::Adapter: {
          AdapterLayer al;
          Tensor<R> up({m.r2, m.width});
          up.fill_normal(rng, init_std);
          al.w_up = param(std::move(up));
          // W_dn starts at zero: the adapter begins as plain layernorm
          al.w_dn = param(Tensor<R>({m.width, m.r2}));
          m.adapters.push_back(std::move(al));
          break;
        }
      }
    }
    return m;
  }

  NamedParams<R> named_params(const std::string& prefix) const {
    NamedParams<R> ps;
    for (int l = 0; l < num_layers; ++l) {
      std::string base = prefix + ".l" + std::to_string(l);
      switch (kind) {
        case PeftKind::Prompt:
          ps.push_back({base + ".E", prompts[static_cast<size_t>(l)]});
          break;
        case PeftKind::Lora: {
          const auto& ll = lora[static_cast<size_t>(l)];
          ps.push_back({base + ".q.A", ll.a_q});
          ps.push_back({base + ".q.B", ll.b_q});
          ps.push_back({base + ".v.A", ll.a_v});
          ps.push_back({base + ".v.B", ll.b_v});
          break;
        }
        case PeftKind::Adapter: {
          const auto& al = adapters[static_cast<size_t>(l)];
          ps.push_back({base + ".up", al.w_up});
          ps.push_back({base + ".dn", al.w_dn});
          break;
        }
      }
    }
    return ps;
  }

  uint64_t checksum() const { return params_checksum(named_params("peft")); }
};

}  // namespace palign
