#include "palign/alignment.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace palign {

std::string metrics_csv_header() { return "stage,epoch,pair,loss_cls,loss_ae,loss_l1,total"; }

std::string metrics_csv_line(const MetricsRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%d,%d,%.9g,%.9g,%.9g,%.9g", row.stage, row.epoch, row.pair,
                static_cast<double>(row.loss_cls), static_cast<double>(row.loss_ae),
                static_cast<double>(row.loss_l1), static_cast<double>(row.total));
  return buf;
}

namespace {

Var<float> encode_sample(const SampleData& data, const VisionEncoder<float>& vision, const PeftModule<float>* peft) {
  if (data.is_embedding) return constant(data.payload);
  return vision.encode(data.payload, peft);
}

// Contiguous window of size take into a shuffled order, wrapping at the end.
std::vector<size_t> batch_window(const std::vector<size_t>& order, int64_t step, int take) {
  std::vector<size_t> out;
  if (order.empty() || take <= 0) return out;
  size_t n = order.size();
  size_t start = static_cast<size_t>((step * static_cast<int64_t>(take)) % static_cast<int64_t>(n));
  out.reserve(static_cast<size_t>(take));
  for (int i = 0; i < take; ++i) out.push_back(order[(start + static_cast<size_t>(i)) % n]);
  return out;
}

std::vector<size_t> shuffled_indices(size_t n, uint64_t seed) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  Rng rng(seed);
  rng.shuffle(idx);
  return idx;
}

void emit(StageResult& result, std::ostream* metrics, const MetricsRow& row) {
  result.rows.push_back(row);
  if (metrics) *metrics << metrics_csv_line(row) << "\n";
}

}  // namespace

StageResult run_stage(const StageContext& ctx, std::vector<PromptBank<float>>& banks, PeftModule<float>& peft,
                      Autoencoder<float>& ae, const VisionEncoder<float>& vision, const TextEncoder<float>& text,
                      const Config& cfg, uint64_t stage_seed, std::ostream* metrics) {
  StageResult result;
  size_t pairs = banks.size();
  if (ctx.pool.source.size() != pairs) throw ContractError("run_stage: pool has wrong pair count");
  for (const auto& t : ctx.pool.target) {
    float bar = t.rehearsed ? cfg.beta : cfg.tau;
    if (!(t.confidence > bar))
      throw ContractError("run_stage: pooled target sample confidence " + std::to_string(t.confidence) +
                          " fails the " + (t.rehearsed ? std::string("beta") : std::string("tau")) + " bar");
  }

  size_t largest = ctx.pool.target.size();
  bool any_data = !ctx.pool.target.empty();
  for (const auto& s : ctx.pool.source) {
    largest = std::max(largest, s.size());
    any_data = any_data || !s.empty();
  }
  if (!any_data) {
    std::fprintf(stderr, "warning: stage %d pool is empty, skipping\n", ctx.stage);
    result.skipped = true;
    return result;
  }

  int batch = cfg.batch_size;
  int64_t steps_per_epoch = static_cast<int64_t>((largest + static_cast<size_t>(batch) - 1) / static_cast<size_t>(batch));
  float temp = cfg.temperature;

  // Step one: adapt every bank and the shared PEFT module. Pair losses are
  // summed, which leaves each bank's gradient exactly its own pair's term
  // while the shared module accumulates all of them.
  {
    NamedParams<float> trained;
    for (auto& bank : banks)
      for (auto& np : bank.named_params()) trained.push_back(np);
    for (auto& np : peft.named_params("peft")) trained.push_back(np);
    Adam<float> opt(trained, CosineSchedule<float>{cfg.lr_max, cfg.lr_min, cfg.adapt_epochs * steps_per_epoch});

    for (int epoch = 0; epoch < cfg.adapt_epochs; ++epoch) {
      auto target_order =
          shuffled_indices(ctx.pool.target.size(), derive_seed(stage_seed, {0x7a49u, static_cast<uint64_t>(epoch)}));
      std::vector<std::vector<size_t>> source_order(pairs);
      for (size_t p = 0; p < pairs; ++p)
        source_order[p] = shuffled_indices(
            ctx.pool.source[p].size(),
            derive_seed(stage_seed, {0x51e9u, static_cast<uint64_t>(epoch), static_cast<uint64_t>(p)}));

      std::vector<double> pair_loss(pairs, 0.0);
      std::vector<int64_t> pair_steps(pairs, 0);
      for (int64_t step = 0; step < steps_per_epoch; ++step) {
        int take_t = static_cast<int>(std::min<size_t>(static_cast<size_t>(batch), ctx.pool.target.size()));
        auto target_idx = batch_window(target_order, step, take_t);
        std::vector<Var<float>> target_emb;
        std::vector<int> target_label;
        std::vector<uint8_t> target_accept;
        for (size_t ti : target_idx) {
          target_emb.push_back(encode_sample(ctx.pool.target[ti].data, vision, &peft));
          target_label.push_back(ctx.pool.target[ti].label);
          target_accept.push_back(1);
        }

        Var<float> loss;
        for (size_t p = 0; p < pairs; ++p) {
          const auto& pool = ctx.pool.source[p];
          if (pool.empty() && target_emb.empty()) continue;
          CeBatch<float> cb;
          int take_s = static_cast<int>(std::min<size_t>(static_cast<size_t>(batch), pool.size()));
          for (size_t si : batch_window(source_order[p], step, take_s)) {
            cb.source_emb.push_back(encode_sample(pool[si].data, vision, &peft));
            cb.source_label.push_back(pool[si].label);
          }
          cb.target_emb = target_emb;
          cb.target_label = target_label;
          cb.target_accept = target_accept;
          auto term = feature_adaptation_loss(cb, encode_prompt_matrix(banks[p], text), temp);
          pair_loss[p] += term->value[0];
          ++pair_steps[p];
          loss = loss ? add(loss, term) : term;
        }
        if (!loss) continue;
        opt.zero_grad();
        backward(loss);
        opt.step();
      }

      for (size_t p = 0; p < pairs; ++p) {
        if (pair_steps[p] == 0) continue;
        MetricsRow row;
        row.stage = ctx.stage;
        row.epoch = epoch;
        row.pair = static_cast<int>(p);
        row.loss_cls = static_cast<float>(pair_loss[p] / static_cast<double>(pair_steps[p]));
        row.total = row.loss_cls;
        emit(result, metrics, row);
      }
    }
  }

  // Step two: freeze PEFT by encoding every image once up front; the loss
  // graph then starts at constant embeddings and gradients can only reach
  // the banks and the autoencoder.
  {
    std::vector<std::vector<Var<float>>> source_emb(pairs);
    std::vector<Var<float>> target_emb;
    {
      NoGradGuard ng;
      for (size_t p = 0; p < pairs; ++p)
        for (const auto& s : ctx.pool.source[p])
          source_emb[p].push_back(constant(encode_sample(s.data, vision, &peft)->value));
      for (const auto& t : ctx.pool.target) target_emb.push_back(constant(encode_sample(t.data, vision, &peft)->value));
    }

    NamedParams<float> trained;
    for (auto& bank : banks)
      for (auto& np : bank.named_params()) trained.push_back(np);
    for (auto& np : ae.named_params()) trained.push_back(np);
    Adam<float> opt(trained, CosineSchedule<float>{cfg.lr_max, cfg.lr_min, cfg.align_epochs * steps_per_epoch});

    for (int epoch = 0; epoch < cfg.align_epochs; ++epoch) {
      auto target_order =
          shuffled_indices(target_emb.size(), derive_seed(stage_seed, {0xa119u, static_cast<uint64_t>(epoch)}));
      std::vector<std::vector<size_t>> source_order(pairs);
      for (size_t p = 0; p < pairs; ++p)
        source_order[p] = shuffled_indices(
            source_emb[p].size(),
            derive_seed(stage_seed, {0xa15eu, static_cast<uint64_t>(epoch), static_cast<uint64_t>(p)}));

      double sum_cls = 0.0, sum_ae = 0.0, sum_l1 = 0.0, sum_total = 0.0;
      int64_t counted = 0;
      for (int64_t step = 0; step < steps_per_epoch; ++step) {
        int take_t = static_cast<int>(std::min<size_t>(static_cast<size_t>(batch), target_emb.size()));
        auto target_idx = batch_window(target_order, step, take_t);

        std::vector<CeBatch<float>> per_pair(pairs);
        bool any_terms = false;
        for (size_t p = 0; p < pairs; ++p) {
          auto& cb = per_pair[p];
          int take_s = static_cast<int>(std::min<size_t>(static_cast<size_t>(batch), source_emb[p].size()));
          for (size_t si : batch_window(source_order[p], step, take_s)) {
            cb.source_emb.push_back(source_emb[p][si]);
            cb.source_label.push_back(ctx.pool.source[p][si].label);
          }
          for (size_t ti : target_idx) {
            cb.target_emb.push_back(target_emb[ti]);
            cb.target_label.push_back(ctx.pool.target[ti].label);
            cb.target_accept.push_back(1);
          }
          any_terms = any_terms || !cb.source_emb.empty() || !cb.target_emb.empty();
        }
        if (!any_terms) continue;

        auto parts = alignment_total_loss(per_pair, banks, ae, text, temp, ctx.alpha);
        opt.zero_grad();
        backward(parts.total);
        opt.step();
        sum_cls += parts.cls->value[0];
        sum_ae += parts.ae->value[0];
        sum_l1 += parts.l1->value[0];
        sum_total += parts.total->value[0];
        ++counted;
      }

      if (counted == 0) continue;
      MetricsRow row;
      row.stage = ctx.stage;
      row.epoch = cfg.adapt_epochs + epoch;
      row.pair = -1;
      row.loss_cls = static_cast<float>(sum_cls / static_cast<double>(counted));
      row.loss_ae = static_cast<float>(sum_ae / static_cast<double>(counted));
      row.loss_l1 = static_cast<float>(sum_l1 / static_cast<double>(counted));
      row.total = static_cast<float>(sum_total / static_cast<double>(counted));
      emit(result, metrics, row);
    }
  }

  return result;
}

}  // namespace palign
