#pragma once

#include <vector>

#include "palign/config.hpp"
#include "palign/io.hpp"
#include "palign/peft.hpp"
#include "palign/prompt_bank.hpp"

namespace palign {

// Throwaway per-source classifier: its own prompt bank plus PEFT copy,
// supervised on that source's labels only. Discarded after voting; none of
// its parameters reach later checkpoints.
struct SourceModel {
  int domain_id = 0;
  PromptBank<float> bank;
  PeftModule<float> peft;
  int epochs = 0;
  float source_accuracy = 0.0f;
};

// Class logits for one sample under a source model: cosine similarities of
// the image embedding against the model's source-domain prompt rows, scaled
// by the temperature. Shape [k]. Embedding payloads bypass the vision tower.
Tensor<float> source_model_logits(const SourceModel& model, const Tensor<float>& payload, bool is_embedding,
                                  const VisionEncoder<float>& vision, const TextEncoder<float>& text,
                                  const Config& cfg);

SourceModel train_source_model(const DomainDataset& source, const Config& cfg,
                               const VisionEncoder<float>& vision, const TextEncoder<float>& text, uint64_t seed);

// Both voting rules reduce an ensemble's raw logits, one row per model, to a
// single record. Mean softmax runs in double so the reduction is insensitive
// to which tower produced the logits.
PseudoLabelRecord average_confidence_vote(const Tensor<float>& logits, int sample_id);
PseudoLabelRecord majority_vote(const Tensor<float>& logits, int sample_id);
PseudoLabelRecord vote(const Tensor<float>& logits, int sample_id, VoteRule rule);

std::vector<PseudoLabelRecord> generate_initial_labels(const std::vector<SourceModel>& sources,
                                                       const DomainDataset& target,
                                                       const VisionEncoder<float>& vision,
                                                       const TextEncoder<float>& text, const Config& cfg);

// Flips a seeded fraction of record labels to a uniformly drawn wrong class.
// Confidences and origins stay as voted; exactly round(fraction * n) records
// change.
void apply_label_noise(std::vector<PseudoLabelRecord>& records, float fraction, int k, uint64_t seed);

}  // namespace palign
