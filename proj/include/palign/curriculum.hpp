#pragma once

#include <string>
#include <vector>

#include "palign/config.hpp"
#include "palign/io.hpp"
#include "palign/prompt_bank.hpp"

namespace palign {

struct ClassCentroid {
  int class_id = 0;
  Tensor<float> center;
  int support = 0;  // 0 means the surrogate text embedding stands in
};

// Clusters keep their construction indices; order lists them by descending
// difficulty score, ties resolved toward the lower cluster index.
struct CurriculumSchedule {
  std::vector<std::vector<int>> clusters;
  std::vector<float> scores;
  std::vector<int> order;
};

// Target-side class prompt embeddings psi(t_k) of one bank, encoded with
// gradients off. Index = class id.
std::vector<Tensor<float>> target_class_text_embeddings(const PromptBank<float>& bank, const TextEncoder<float>& text);

// Mean visual embedding per pseudo-labeled class; classes with no records
// fall back to the class's text embedding with support 0. Record sample_ids
// index the embeddings list.
std::vector<ClassCentroid> class_centroids(const std::vector<Tensor<float>>& embeddings,
                                           const std::vector<PseudoLabelRecord>& records,
                                           const std::vector<Tensor<float>>& text_embs);

// Capacity-constrained K-Means over the class centroids: seeded restarts of
// standard init plus Lloyd rounds, then constrained assignment sweeps in
// ascending class order against a per-cluster budget of ceil(K/T).
std::vector<std::vector<int>> balanced_kmeans(const std::vector<ClassCentroid>& centroids, int t, uint64_t seed);

// Mean over the cluster's classes of the mean cosine between each class's
// target embeddings and its text embedding; classes without samples are
// skipped, and a cluster whose classes are all empty scores 0 with a warning.
float cluster_difficulty(const std::vector<int>& cluster, const std::vector<Tensor<float>>& embeddings,
                         const std::vector<PseudoLabelRecord>& records, const std::vector<Tensor<float>>& text_embs);

// Descending-score permutation with ties toward the lower index.
std::vector<int> order_by_score(const std::vector<float>& scores);

CurriculumSchedule build_schedule(const std::vector<ClassCentroid>& centroids,
                                  const std::vector<Tensor<float>>& embeddings,
                                  const std::vector<PseudoLabelRecord>& records,
                                  const std::vector<Tensor<float>>& text_embs, int t, uint64_t seed);

void write_schedule(const std::string& path, const CurriculumSchedule& schedule);
CurriculumSchedule read_schedule(const std::string& path);

}  // namespace palign
