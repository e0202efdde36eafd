#pragma once

#include <cstdint>
#include <string>

namespace palign {

enum class PeftKind { Prompt, Lora, Adapter };
enum class VoteRule { Avg, Majority };

std::string to_string(PeftKind k);
std::string to_string(VoteRule v);
PeftKind peft_kind_from_string(const std::string& s);
VoteRule vote_rule_from_string(const std::string& s);

// Every knob of the engine, loadable from a plain key=value file.
// Defaults are the working toy-scale values; validate() enforces ranges.
struct Config {
  // problem shape
  int k = 12;  // classes
  int n = 3;   // domains, n-1 sources plus one target
  int t = 3;   // curriculum clusters / stages

  // thresholds and loss weights
  float tau = 0.6f;          // pseudo-label confidence gate
  float beta = 0.8f;         // rehearsal gate, strict
  float alpha = 1.0f;        // consistency weight
  float temperature = 0.01f; // similarity head

  // textual prompt layout
  int m1 = 12;  // class-context tokens
  int m2 = 12;  // domain tokens

  // visual peft
  PeftKind peft_kind = PeftKind::Lora;
  int m3 = 20;  // visual prompt tokens per layer
  int r1 = 8;   // lora rank
  int r2 = 16;  // adapter bottleneck

  // prompt autoencoder
  int e1 = 9;
  int e2 = 24;
  int e3 = 32;  // must equal width

  // frozen encoders
  int image_size = 16;
  int patch_size = 4;
  int channels = 3;
  int layers = 2;
  int width = 32;
  int heads = 4;
  int embed_dim = 32;

  // pseudo-labeling
  VoteRule vote = VoteRule::Avg;

  // training
  int pretrain_epochs = 4;
  int adapt_epochs = 3;
  int align_epochs = 3;
  int batch_size = 24;
  float lr_max = 0.02f;
  float lr_min = 0.002f;

  uint64_t seed = 1;
  float label_noise = 0.0f;  // fraction of initial pseudo-labels corrupted
  int workers = 1;

  bool operator==(const Config&) const = default;
};

// Parses key=value text ('#' comments, blank lines ok). Unknown or duplicate
// keys and malformed values raise ConfigError naming the key. Missing keys
// keep their defaults. The result is validated.
Config parse_config_text(const std::string& text);

Config load_config_file(const std::string& path);

// Canonical snapshot; parse_config_text(config_snapshot(c)) == c exactly.
std::string config_snapshot(const Config& c);

void validate_config(const Config& c);

}  // namespace palign
