#include "palign/pseudo_label.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "palign/error.hpp"
#include "palign/optim.hpp"
#include "palign/rng.hpp"

namespace palign {

namespace {

// Source-domain prompt rows only: a throwaway model classifies everything,
// its own data and the target alike, against its source-side class prompts.
Var<float> source_prompt_matrix(const PromptBank<float>& bank, const TextEncoder<float>& text) {
  std::vector<Var<float>> rows;
  rows.reserve(static_cast<size_t>(bank.k));
  for (int cls = 0; cls < bank.k; ++cls) {
    auto emb = text.encode(bank.assemble(cls, Domain::Source, text));
    rows.push_back(reshape(emb, {1, emb->value.dim(0)}));
  }
  return concat_rows(rows);
}

Var<float> embed(const Tensor<float>& payload, bool is_embedding, const VisionEncoder<float>& vision,
                 const PeftModule<float>* peft) {
  if (is_embedding) return constant(payload);
  return vision.encode(payload, peft);
}

// Sum in ascending value order: the result then depends only on the multiset
// of addends, so the reduction is bitwise invariant to model order and to
// symmetric class relabelings. Mathematical ties stay exact ties and resolve
// to the lowest index downstream.
double sorted_sum(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  double s = 0;
  for (double x : v) s += x;
  return s;
}

// Stabilized per-row softmax in double, then a per-class order-insensitive
// mean across rows.
std::vector<double> mean_softmax(const Tensor<float>& logits) {
  int m = static_cast<int>(logits.rows()), k = static_cast<int>(logits.cols());
  std::vector<std::vector<double>> probs(static_cast<size_t>(m), std::vector<double>(static_cast<size_t>(k)));
  std::vector<double> exps(static_cast<size_t>(k));
  for (int i = 0; i < m; ++i) {
    double mx = logits.at(i, 0);
    for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(logits.at(i, j)));
    for (int j = 0; j < k; ++j) exps[static_cast<size_t>(j)] = std::exp(static_cast<double>(logits.at(i, j)) - mx);
    auto terms = exps;
    double sum = sorted_sum(terms);
    for (int j = 0; j < k; ++j) probs[static_cast<size_t>(i)][static_cast<size_t>(j)] = exps[static_cast<size_t>(j)] / sum;
  }
  std::vector<double> mean(static_cast<size_t>(k));
  std::vector<double> column(static_cast<size_t>(m));
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < m; ++i) column[static_cast<size_t>(i)] = probs[static_cast<size_t>(i)][static_cast<size_t>(j)];
    mean[static_cast<size_t>(j)] = sorted_sum(column) / static_cast<double>(m);
  }
  return mean;
}

void check_logits(const Tensor<float>& logits) {
  if (logits.ndim() != 2)
    throw DimensionError("vote: logit stack must be [models, classes], got " +
                         Tensor<float>::shape_string(logits.shape()));
  if (logits.rows() < 1) throw ContractError("vote: need at least one model's logits");
  if (logits.cols() < 1) throw ContractError("vote: need at least one class");
}

}  // namespace

Tensor<float> source_model_logits(const SourceModel& model, const Tensor<float>& payload, bool is_embedding,
                                  const VisionEncoder<float>& vision, const TextEncoder<float>& text,
                                  const Config& cfg) {
  NoGradGuard ng;
  auto emb = embed(payload, is_embedding, vision, &model.peft);
  auto logits = similarity_logits(source_prompt_matrix(model.bank, text), emb, cfg.temperature);
  return logits->value;
}

SourceModel train_source_model(const DomainDataset& source, const Config& cfg,
                               const VisionEncoder<float>& vision, const TextEncoder<float>& text, uint64_t seed) {
  if (!source.labeled())
    throw ContractError("train_source_model: source domain " + std::to_string(source.domain_id) + " has no labels");
  for (int l : source.labels)
    if (l < 0 || l >= cfg.k)
      throw ContractError("train_source_model: label " + std::to_string(l) + " outside [0," + std::to_string(cfg.k) + ")");

  SourceModel model;
  model.domain_id = source.domain_id;
  uint64_t dom = static_cast<uint64_t>(source.domain_id);
  model.bank = PromptBank<float>::init(cfg, source.domain_id, derive_seed(seed, {0x50c1u, dom}));
  model.peft = PeftModule<float>::init(cfg, derive_seed(seed, {0x50c2u, dom}));
  model.epochs = cfg.pretrain_epochs;

  size_t n = static_cast<size_t>(source.size());
  int batch = std::max(1, cfg.batch_size);
  int64_t steps_per_epoch = static_cast<int64_t>((n + static_cast<size_t>(batch) - 1) / static_cast<size_t>(batch));

  if (cfg.pretrain_epochs > 0) {
    // Dt is excluded: the loss graph never reaches the target-side rows, and
    // a throwaway source model has no business training them.
    NamedParams<float> trained;
    for (auto& np : model.bank.named_params())
      if (np.name.find(".Dt") == std::string::npos) trained.push_back(np);
    for (auto& np : model.peft.named_params("peft")) trained.push_back(np);
    Adam<float> opt(trained, CosineSchedule<float>{cfg.lr_max, cfg.lr_min, cfg.pretrain_epochs * steps_per_epoch});

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
      Rng shuffle_rng(derive_seed(seed, {0x50c3u, dom, static_cast<uint64_t>(epoch)}));
      shuffle_rng.shuffle(order);
      for (int64_t step = 0; step < steps_per_epoch; ++step) {
        auto matrix = source_prompt_matrix(model.bank, text);
        Var<float> loss;
        int take = static_cast<int>(std::min<size_t>(static_cast<size_t>(batch), n));
        for (int i = 0; i < take; ++i) {
          size_t idx = order[(static_cast<size_t>(step) * static_cast<size_t>(batch) + static_cast<size_t>(i)) % n];
          auto emb = embed(source.samples[idx], source.is_embedding, vision, &model.peft);
          auto term = cross_entropy_logits(similarity_logits(matrix, emb, cfg.temperature), source.labels[idx]);
          loss = loss ? add(loss, term) : term;
        }
        loss = scale(loss, 1.0f / static_cast<float>(take));
        opt.zero_grad();
        backward(loss);
        opt.step();
      }
    }
  }

  {
    NoGradGuard ng;
    int hits = 0;
    for (int i = 0; i < source.size(); ++i) {
      auto lg = source_model_logits(model, source.samples[static_cast<size_t>(i)], source.is_embedding, vision, text, cfg);
      int best = 0;
      for (int j = 1; j < static_cast<int>(lg.numel()); ++j)
        if (lg[j] > lg[best]) best = j;
      hits += best == source.labels[static_cast<size_t>(i)];
    }
    model.source_accuracy = static_cast<float>(hits) / static_cast<float>(source.size());
  }
  return model;
}

PseudoLabelRecord average_confidence_vote(const Tensor<float>& logits, int sample_id) {
  check_logits(logits);
  auto mean = mean_softmax(logits);
  int label = 0;
  for (int j = 1; j < static_cast<int>(mean.size()); ++j)
    if (mean[static_cast<size_t>(j)] > mean[static_cast<size_t>(label)]) label = j;
  PseudoLabelRecord rec;
  rec.sample_id = sample_id;
  rec.label = label;
  rec.confidence = static_cast<float>(mean[static_cast<size_t>(label)]);
  rec.origin = "ensemble";
  return rec;
}

PseudoLabelRecord majority_vote(const Tensor<float>& logits, int sample_id) {
  check_logits(logits);
  int m = static_cast<int>(logits.rows()), k = static_cast<int>(logits.cols());
  std::vector<int> votes(static_cast<size_t>(k), 0);
  for (int i = 0; i < m; ++i) {
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    ++votes[static_cast<size_t>(best)];
  }
  int top = *std::max_element(votes.begin(), votes.end());
  auto mean = mean_softmax(logits);
  int label = -1;
  for (int j = 0; j < k; ++j) {
    if (votes[static_cast<size_t>(j)] != top) continue;
    if (label < 0 || mean[static_cast<size_t>(j)] > mean[static_cast<size_t>(label)]) label = j;
  }
  PseudoLabelRecord rec;
  rec.sample_id = sample_id;
  rec.label = label;
  rec.confidence = static_cast<float>(mean[static_cast<size_t>(label)]);
  rec.origin = "ensemble";
  return rec;
}

PseudoLabelRecord vote(const Tensor<float>& logits, int sample_id, VoteRule rule) {
  return rule == VoteRule::Avg ? average_confidence_vote(logits, sample_id) : majority_vote(logits, sample_id);
}

std::vector<PseudoLabelRecord> generate_initial_labels(const std::vector<SourceModel>& sources,
                                                       const DomainDataset& target,
                                                       const VisionEncoder<float>& vision,
                                                       const TextEncoder<float>& text, const Config& cfg) {
  if (sources.empty()) throw ContractError("generate_initial_labels: no source models");
  if (target.size() == 0) throw ContractError("generate_initial_labels: target dataset is empty");

  int m = static_cast<int>(sources.size());
  std::vector<PseudoLabelRecord> records;
  records.reserve(static_cast<size_t>(target.size()));
  for (int i = 0; i < target.size(); ++i) {
    Tensor<float> logits({m, cfg.k});
    for (int s = 0; s < m; ++s) {
      auto lg = source_model_logits(sources[static_cast<size_t>(s)], target.samples[static_cast<size_t>(i)],
                                    target.is_embedding, vision, text, cfg);
      for (int j = 0; j < cfg.k; ++j) logits.at(s, j) = lg[j];
    }
    records.push_back(vote(logits, target.sample_ids[static_cast<size_t>(i)], cfg.vote));
  }
  return records;
}

void apply_label_noise(std::vector<PseudoLabelRecord>& records, float fraction, int k, uint64_t seed) {
  if (fraction < 0.0f || fraction > 1.0f)
    throw ContractError("apply_label_noise: fraction " + std::to_string(fraction) + " outside [0,1]");
  long count = std::lround(static_cast<double>(fraction) * static_cast<double>(records.size()));
  if (count == 0) return;
  if (k < 2) throw ContractError("apply_label_noise: need at least two classes to mislabel");

  std::vector<size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  Rng rng(derive_seed(seed, {0x401cu}));
  rng.shuffle(idx);
  for (long i = 0; i < count; ++i) {
    auto& rec = records[idx[static_cast<size_t>(i)]];
    int wrong = rng.uniform_int(0, k - 2);
    if (wrong >= rec.label) ++wrong;
    rec.label = wrong;
  }
}

}  // namespace palign
