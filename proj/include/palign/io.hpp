#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "palign/config.hpp"
#include "palign/tensor.hpp"

namespace palign {

// One domain's data as loaded from disk. Each sample row is a flattened
// image (image_size^2 * channels values) or a ready-made embedding.
struct DomainDataset {
  int domain_id = 0;
  bool is_embedding = false;
  std::vector<Tensor<float>> samples;
  std::vector<int> sample_ids;  // parallel to samples
  std::vector<int> labels;      // empty for the unlabeled target

  bool labeled() const { return !labels.empty(); }
  int size() const { return static_cast<int>(samples.size()); }
};

struct PseudoLabelRecord {
  int sample_id = 0;
  int label = 0;
  float confidence = 0.0f;
  std::string origin;     // "ensemble" or "refined@stage<j>"
  bool accepted = false;  // confidence > tau; derived, never persisted
};

// Sets accepted = (confidence > tau), strict.
void mark_accepted(std::vector<PseudoLabelRecord>& records, float tau);

// EMB1: magic, u32 rows, u32 cols, rows*cols little-endian f32, row-major.
void write_embeddings(const std::string& path, const Tensor<float>& rows);
Tensor<float> read_embeddings(const std::string& path);

// LBL1: magic, u32 count, count u32 class ids.
void write_labels(const std::string& path, const std::vector<int>& labels);
std::vector<int> read_labels(const std::string& path);

// PLBL1: one JSON object per line with exactly
// {sample_id, label, confidence, origin}. Confidence round-trips bit-exactly.
void write_pseudo_labels(const std::string& path, const std::vector<PseudoLabelRecord>& records);
std::vector<PseudoLabelRecord> read_pseudo_labels(const std::string& path);

inline constexpr uint32_t kCheckpointVersion = 1;

// Named tensors plus the config snapshot that produced them. stage counts
// completed curriculum stages (0 = freshly initialized).
struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  int stage = 0;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  std::string config_snapshot;

  bool has(const std::string& name) const;
  const Tensor<float>& get(const std::string& name) const;  // FormatError if absent
  uint64_t checksum() const;
};

// CKPT: magic, u32 version, u32 stage, u32 entry count, entries
// (u16 name length, name, u8 rank, u32 dims, f32 payload), then the config
// snapshot as UTF-8 to end of file.
void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

// Dataset manifest: a JSON document tying the per-domain files together.
// Paths are stored relative to the manifest's directory.
struct ManifestDomain {
  int domain_id = 0;
  std::string role;  // "source" or "target"
  std::string data;
  std::string labels;  // empty for the target
};

struct DatasetManifest {
  int k = 0;
  int n = 0;
  int image_size = 0;
  int channels = 0;
  std::string carrier;  // "image" or "embedding"
  std::vector<ManifestDomain> domains;
  std::string target_eval_labels;  // held out of the training inputs
};

void write_dataset_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest read_dataset_manifest(const std::string& path);

// Loads every listed domain; sources come back labeled, the target does not.
std::vector<DomainDataset> load_domains(const std::string& manifest_path, const DatasetManifest& m);
std::vector<int> load_target_eval_labels(const std::string& manifest_path, const DatasetManifest& m);

}  // namespace palign
