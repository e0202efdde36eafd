#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "palign/io.hpp"

namespace palign {

struct SynthSpec {
  int domains = 3;  // the first domains-1 are sources, the last is the target
  int classes = 12;
  int per_class = 60;
  float shift = 1.0f;   // global style magnitude; 0 means identical domains
  float noise = 0.05f;  // per-sample pixel noise
  int image_size = 16;
  int channels = 3;
  uint64_t seed = 1;
};

// One domain's global appearance: per-channel affine plus a box-blur mix.
// Every component collapses to the identity at shift 0.
struct DomainStyle {
  std::vector<float> gain;
  std::vector<float> bias;
  float blur = 0.0f;  // in [0,1), fraction of the 3x3 box blur blended in
};

DomainStyle synth_domain_style(const SynthSpec& spec, int domain);

// Low-frequency seeded pattern [image_size^2 * channels]; distinct per class.
Tensor<float> synth_class_prototype(const SynthSpec& spec, int cls);

// All domains come back labeled and class-major; the caller is responsible
// for withholding the target's labels from any training path.
std::vector<DomainDataset> generate_synthetic(const SynthSpec& spec);

// Materializes the datasets under dir: per-source EMB1+LBL1, target EMB1
// without labels, ground truth routed to a separate eval file, and a JSON
// manifest tying them together. Returns the manifest path.
std::string write_synthetic_dataset(const SynthSpec& spec, const std::string& dir);

}  // namespace palign
