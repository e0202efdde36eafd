#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "palign/encoders.hpp"
#include "palign/prompt_bank.hpp"

namespace palign {

// Shallow denoising autoencoder over prompt token vectors. One shared
// instance serves every pair's bank. Rows of width d go in; the decoder
// lands back in token space, so e3 must equal d.
template <typename R>
struct Autoencoder {
  int e1 = 0, e2 = 0, e3 = 0, d = 0;
  Var<R> w1, b1;  // [e1, d], [e1]
  Var<R> w2, b2;  // [e2, e1], [e2]
  Var<R> w3, b3;  // [e3, e2], [e3]

  static Autoencoder init(const Config& cfg, uint64_t seed) {
    if (cfg.e3 != cfg.width) throw ConfigError("autoencoder output width e3 must equal token width");
    Autoencoder ae;
    ae.e1 = cfg.e1;
    ae.e2 = cfg.e2;
    ae.e3 = cfg.e3;
    ae.d = cfg.width;
    Rng rng(derive_seed(seed, {0xaeu}));
    auto mat = [&rng](int rows, int cols) {
      Tensor<R> t({rows, cols});
      t.fill_normal(rng, 1.0 / std::sqrt(static_cast<double>(cols)));
      return param(std::move(t));
    };
    ae.w1 = mat(ae.e1, ae.d);
    ae.b1 = param(Tensor<R>({ae.e1}));
    ae.w2 = mat(ae.e2, ae.e1);
    ae.b2 = param(Tensor<R>({ae.e2}));
    ae.w3 = mat(ae.e3, ae.e2);
    ae.b3 = param(Tensor<R>({ae.e3}));
    return ae;
  }

  NamedParams<R> named_params() const {
    return {{"ae.W1", w1}, {"ae.b1", b1}, {"ae.W2", w2}, {"ae.b2", b2}, {"ae.W3", w3}, {"ae.b3", b3}};
  }

  uint64_t checksum() const { return params_checksum(named_params()); }
};

// Rows of p are token vectors: latent = p W1^T + b1, applied per row.
template <typename R>
Var<R> ae_encode(const Autoencoder<R>& ae, const Var<R>& p) {
  if (p->value.ndim() != 2 || p->value.cols() != ae.d)
    throw DimensionError("ae_encode: expected rows of width " + std::to_string(ae.d) + ", got " +
                         Tensor<R>::shape_string(p->value.shape()));
  return add_rowvec(matmul(p, transpose(ae.w1)), ae.b1);
}

template <typename R>
Var<R> ae_decode(const Autoencoder<R>& ae, const Var<R>& latent) {
  if (latent->value.ndim() != 2 || latent->value.cols() != ae.e1)
    throw DimensionError("ae_decode: expected rows of width " + std::to_string(ae.e1) + ", got " +
                         Tensor<R>::shape_string(latent->value.shape()));
  auto hidden = tanh_op(add_rowvec(matmul(latent, transpose(ae.w2)), ae.b2));
  return add_rowvec(matmul(hidden, transpose(ae.w3)), ae.b3);
}

template <typename R>
Var<R> ae_reconstruct(const Autoencoder<R>& ae, const Var<R>& p) {
  return ae_decode(ae, ae_encode(ae, p));
}

// All learnable token rows of one bank stacked: k*m1 context rows in class
// order, then the m2 source-domain rows, then the m2 target-domain rows.
template <typename R>
Var<R> bank_stack(const PromptBank<R>& bank) {
  return concat_rows<R>({reshape(bank.v, {bank.k * bank.m1, bank.width}), bank.ds, bank.dt});
}

// Prompt matrix [2k, embed_dim] built from a (possibly reconstructed) stack
// laid out as bank_stack produces. Source rows come first, then target rows.
template <typename R>
Var<R> encode_prompt_matrix_from_stack(const Var<R>& stack, const PromptBank<R>& bank, const TextEncoder<R>& text) {
  int km1 = bank.k * bank.m1;
  if (stack->value.ndim() != 2 || stack->value.rows() != km1 + 2 * bank.m2 || stack->value.cols() != bank.width)
    throw DimensionError("prompt stack shape " + Tensor<R>::shape_string(stack->value.shape()) + " does not match bank");
  std::vector<Var<R>> rows;
  rows.reserve(static_cast<size_t>(2 * bank.k));
  for (int off : {km1, km1 + bank.m2}) {
    auto domain_rows = slice_rows(stack, off, off + bank.m2);
    for (int cls = 0; cls < bank.k; ++cls) {
      auto seq = concat_rows<R>({slice_rows(stack, cls * bank.m1, (cls + 1) * bank.m1), domain_rows,
                                 constant(text.class_token(cls))});
      auto emb = text.encode(seq);
      rows.push_back(reshape(emb, {1, emb->value.dim(0)}));
    }
  }
  return concat_rows<R>(rows);
}

// One pair's batch for the two-term objective: image embeddings with their
// labels. Source labels index rows 0..k-1 of the prompt matrix, target
// pseudo-labels rows k..2k-1. Unaccepted target samples stay in the batch
// but are excluded from every loss term.
template <typename R>
struct CeBatch {
  std::vector<Var<R>> source_emb;
  std::vector<int> source_label;
  std::vector<Var<R>> target_emb;
  std::vector<int> target_label;
  std::vector<uint8_t> target_accept;
};

// -(1/n_s) sum log P(y_s | x_s) - (1/n_t) sum log P(k + y_t | x_t) with
// probabilities over all 2k prompt rows. Either side may be empty; both
// empty is a contract violation.
template <typename R>
Var<R> feature_adaptation_loss(const CeBatch<R>& batch, const Var<R>& prompt_matrix, R temperature) {
  if (prompt_matrix->value.ndim() != 2 || prompt_matrix->value.rows() % 2 != 0)
    throw DimensionError("feature_adaptation_loss: prompt matrix must have 2k rows");
  int k = prompt_matrix->value.rows() / 2;
  if (batch.source_emb.size() != batch.source_label.size() || batch.target_emb.size() != batch.target_label.size() ||
      batch.target_emb.size() != batch.target_accept.size())
    throw ContractError("feature_adaptation_loss: ragged batch");

  std::vector<Var<R>> source_terms, target_terms;
  for (size_t i = 0; i < batch.source_emb.size(); ++i) {
    int y = batch.source_label[i];
    if (y < 0 || y >= k) throw ContractError("source label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
    source_terms.push_back(cross_entropy_logits(similarity_logits(prompt_matrix, batch.source_emb[i], temperature), y));
  }
  for (size_t i = 0; i < batch.target_emb.size(); ++i) {
    if (!batch.target_accept[i]) continue;
    int y = batch.target_label[i];
    if (y < 0 || y >= k) throw ContractError("target label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
    target_terms.push_back(
        cross_entropy_logits(similarity_logits(prompt_matrix, batch.target_emb[i], temperature), k + y));
  }
  if (source_terms.empty() && target_terms.empty())
    throw ContractError("feature_adaptation_loss: no source samples and no accepted target samples");

  Var<R> loss;
  if (!source_terms.empty()) loss = mean_all(stack_scalars(source_terms));
  if (!target_terms.empty()) {
    auto t = mean_all(stack_scalars(target_terms));
    loss = loss ? add(loss, t) : t;
  }
  return loss;
}

// (1/(N-1)) sum_i ||reconstruct(P_i) - P_i||^2 over the banks' stacks.
template <typename R>
Var<R> reconstruction_loss(const std::vector<PromptBank<R>>& banks, const Autoencoder<R>& ae) {
  if (banks.empty()) throw ContractError("reconstruction_loss: no banks");
  std::vector<Var<R>> errs;
  errs.reserve(banks.size());
  for (const auto& bank : banks) {
    auto stack = bank_stack(bank);
    errs.push_back(sum_all(square(sub(ae_reconstruct(ae, stack), stack))));
  }
  return mean_all(stack_scalars(errs));
}

// Mean absolute pairwise gap between the banks' probabilities for one
// sample's pseudo-label class. Fewer than two banks carry no signal.
template <typename R>
Var<R> consistency_loss(const std::vector<Var<R>>& bank_probs) {
  int n = static_cast<int>(bank_probs.size());
  if (n < 2) return constant(Tensor<R>::scalar(R(0)));
  std::vector<Var<R>> gaps;
  for (int j = 0; j < n; ++j)
    for (int i = j + 1; i < n; ++i) gaps.push_back(abs_op(sub(bank_probs[static_cast<size_t>(i)], bank_probs[static_cast<size_t>(j)])));
  R prefactor = R(2) / (static_cast<R>(n) * static_cast<R>(n - 1));
  return scale(sum_all(stack_scalars(gaps)), prefactor);
}

template <typename R>
struct AlignmentParts {
  Var<R> total, cls, ae, l1;
};

// Combined objective: classification through reconstructed prompts, plus
// reconstruction error, plus the alpha-weighted consistency term. Image
// embeddings arrive precomputed, so nothing upstream of them can receive
// gradient here. Target batches must be aligned across pairs sample for
// sample; the consistency term compares the banks on the same sample.
template <typename R>
AlignmentParts<R> alignment_total_loss(const std::vector<CeBatch<R>>& per_pair,
                                       const std::vector<PromptBank<R>>& banks, const Autoencoder<R>& ae,
                                       const TextEncoder<R>& text, R temperature, R alpha) {
  if (banks.empty() || per_pair.size() != banks.size())
    throw ContractError("alignment_total_loss: need one batch per bank");
  size_t nt = per_pair[0].target_emb.size();
  for (const auto& b : per_pair)
    if (b.target_emb.size() != nt || b.target_label != per_pair[0].target_label ||
        b.target_accept != per_pair[0].target_accept)
      throw ContractError("alignment_total_loss: target batches differ across pairs");

  int k = banks[0].k;
  std::vector<Var<R>> cls_terms, rec_errs;
  std::vector<std::vector<Var<R>>> target_probs(nt);  // per sample, per bank
  for (size_t i = 0; i < banks.size(); ++i) {
    auto stack = bank_stack(banks[i]);
    auto rec = ae_reconstruct(ae, stack);
    rec_errs.push_back(sum_all(square(sub(rec, stack))));
    auto matrix = encode_prompt_matrix_from_stack(rec, banks[i], text);
    // a pair may legitimately have no samples this stage; reconstruction
    // still covers its bank, only the classification term goes missing
    bool has_accepted = false;
    for (uint8_t a : per_pair[i].target_accept) has_accepted = has_accepted || a != 0;
    if (!per_pair[i].source_emb.empty() || has_accepted)
      cls_terms.push_back(feature_adaptation_loss(per_pair[i], matrix, temperature));
    for (size_t s = 0; s < nt; ++s) {
      if (!per_pair[i].target_accept[s]) continue;
      auto probs = class_probabilities(matrix, per_pair[i].target_emb[s], temperature);
      target_probs[s].push_back(pick(probs, k + per_pair[i].target_label[s]));
    }
  }
  if (cls_terms.empty()) throw ContractError("alignment_total_loss: every pair's batch is empty");

  AlignmentParts<R> parts;
  parts.cls = mean_all(stack_scalars(cls_terms));
  parts.ae = mean_all(stack_scalars(rec_errs));
  std::vector<Var<R>> l1_terms;
  for (auto& probs : target_probs)
    if (!probs.empty()) l1_terms.push_back(consistency_loss(probs));
  parts.l1 = l1_terms.empty() ? constant(Tensor<R>::scalar(R(0))) : mean_all(stack_scalars(l1_terms));
  parts.total = add(add(parts.cls, parts.ae), scale(parts.l1, alpha));
  return parts;
}

// One curriculum stage's training pool. Sample payloads are either raw
// images for the vision tower or ready-made embeddings that bypass it.
struct SampleData {
  Tensor<float> payload;
  bool is_embedding = false;
};

struct SourceSample {
  SampleData data;
  int label = 0;
};

struct TargetSample {
  SampleData data;
  int label = 0;  // pseudo-label
  float confidence = 0.0f;
  bool rehearsed = false;
};

struct StagePool {
  std::vector<std::vector<SourceSample>> source;  // per pair
  std::vector<TargetSample> target;               // tau-accepted plus rehearsal
};

struct StageContext {
  int stage = 0;
  std::vector<int> active_classes;
  StagePool pool;
  float alpha = 1.0f;
};

struct MetricsRow {
  int stage = 0;
  int epoch = 0;
  int pair = 0;  // -1 marks a row aggregated over all pairs
  float loss_cls = 0.0f, loss_ae = 0.0f, loss_l1 = 0.0f, total = 0.0f;
};

std::string metrics_csv_header();
std::string metrics_csv_line(const MetricsRow& row);

struct StageResult {
  std::vector<MetricsRow> rows;
  bool skipped = false;
};

// Two-step stage training. Step one adapts every bank plus the shared PEFT
// module under the two-term objective; step two freezes PEFT (embeddings are
// precomputed constants) and trains banks plus the autoencoder under the
// combined objective. Metrics rows use one continuous epoch axis: adaptation
// epochs first, alignment epochs after them with pair = -1.
StageResult run_stage(const StageContext& ctx, std::vector<PromptBank<float>>& banks, PeftModule<float>& peft,
                      Autoencoder<float>& ae, const VisionEncoder<float>& vision, const TextEncoder<float>& text,
                      const Config& cfg, uint64_t stage_seed, std::ostream* metrics);

}  // namespace palign
