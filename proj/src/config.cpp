#include "palign/config.hpp"

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "palign/error.hpp"

namespace palign {

std::string to_string(PeftKind k) {
  switch (k) {
    case PeftKind::Prompt: return "prompt";
    case PeftKind::Lora: return "lora";
    case PeftKind::Adapter: return "adapter";
  }
  return "?";
}

std::string to_string(VoteRule v) { return v == VoteRule::Avg ? "avg" : "majority"; }

PeftKind peft_kind_from_string(const std::string& s) {
  if (s == "prompt") return PeftKind::Prompt;
  if (s == "lora") return PeftKind::Lora;
  if (s == "adapter") return PeftKind::Adapter;
  throw ConfigError("peft.kind must be prompt, lora or adapter, got '" + s + "'");
}

VoteRule vote_rule_from_string(const std::string& s) {
  if (s == "avg") return VoteRule::Avg;
  if (s == "majority") return VoteRule::Majority;
  throw ConfigError("vote must be avg or majority, got '" + s + "'");
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("key '" + key + "': expected integer, got '" + v + "'");
  return out;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("key '" + key + "': expected unsigned integer, got '" + v + "'");
  return out;
}

float parse_float(const std::string& key, const std::string& v) {
  char* end = nullptr;
  float out = std::strtof(v.c_str(), &end);
  if (end != v.c_str() + v.size() || v.empty())
    throw ConfigError("key '" + key + "': expected number, got '" + v + "'");
  return out;
}

std::string fmt_float(float v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

using Setter = std::function<void(Config&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"k", [](Config& c, const std::string& k, const std::string& v) { c.k = parse_int(k, v); }},
      {"n", [](Config& c, const std::string& k, const std::string& v) { c.n = parse_int(k, v); }},
      {"t", [](Config& c, const std::string& k, const std::string& v) { c.t = parse_int(k, v); }},
      {"tau", [](Config& c, const std::string& k, const std::string& v) { c.tau = parse_float(k, v); }},
      {"beta", [](Config& c, const std::string& k, const std::string& v) { c.beta = parse_float(k, v); }},
      {"alpha", [](Config& c, const std::string& k, const std::string& v) { c.alpha = parse_float(k, v); }},
      {"temperature",
       [](Config& c, const std::string& k, const std::string& v) { c.temperature = parse_float(k, v); }},
      {"m1", [](Config& c, const std::string& k, const std::string& v) { c.m1 = parse_int(k, v); }},
      {"m2", [](Config& c, const std::string& k, const std::string& v) { c.m2 = parse_int(k, v); }},
      {"peft.kind", [](Config& c, const std::string&, const std::string& v) { c.peft_kind = peft_kind_from_string(v); }},
      {"peft.m3", [](Config& c, const std::string& k, const std::string& v) { c.m3 = parse_int(k, v); }},
      {"peft.r1", [](Config& c, const std::string& k, const std::string& v) { c.r1 = parse_int(k, v); }},
      {"peft.r2", [](Config& c, const std::string& k, const std::string& v) { c.r2 = parse_int(k, v); }},
      {"e1", [](Config& c, const std::string& k, const std::string& v) { c.e1 = parse_int(k, v); }},
      {"e2", [](Config& c, const std::string& k, const std::string& v) { c.e2 = parse_int(k, v); }},
      {"e3", [](Config& c, const std::string& k, const std::string& v) { c.e3 = parse_int(k, v); }},
      {"image_size", [](Config& c, const std::string& k, const std::string& v) { c.image_size = parse_int(k, v); }},
      {"patch_size", [](Config& c, const std::string& k, const std::string& v) { c.patch_size = parse_int(k, v); }},
      {"channels", [](Config& c, const std::string& k, const std::string& v) { c.channels = parse_int(k, v); }},
      {"layers", [](Config& c, const std::string& k, const std::string& v) { c.layers = parse_int(k, v); }},
      {"width", [](Config& c, const std::string& k, const std::string& v) { c.width = parse_int(k, v); }},
      {"heads", [](Config& c, const std::string& k, const std::string& v) { c.heads = parse_int(k, v); }},
      {"embed_dim", [](Config& c, const std::string& k, const std::string& v) { c.embed_dim = parse_int(k, v); }},
      {"vote", [](Config& c, const std::string&, const std::string& v) { c.vote = vote_rule_from_string(v); }},
      {"pretrain_epochs",
       [](Config& c, const std::string& k, const std::string& v) { c.pretrain_epochs = parse_int(k, v); }},
      {"adapt_epochs",
       [](Config& c, const std::string& k, const std::string& v) { c.adapt_epochs = parse_int(k, v); }},
      {"align_epochs",
       [](Config& c, const std::string& k, const std::string& v) { c.align_epochs = parse_int(k, v); }},
      {"batch_size", [](Config& c, const std::string& k, const std::string& v) { c.batch_size = parse_int(k, v); }},
      {"lr_max", [](Config& c, const std::string& k, const std::string& v) { c.lr_max = parse_float(k, v); }},
      {"lr_min", [](Config& c, const std::string& k, const std::string& v) { c.lr_min = parse_float(k, v); }},
      {"seed", [](Config& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); }},
      {"label_noise",
       [](Config& c, const std::string& k, const std::string& v) { c.label_noise = parse_float(k, v); }},
      {"workers", [](Config& c, const std::string& k, const std::string& v) { c.workers = parse_int(k, v); }},
  };
  return table;
}

}  // namespace

Config parse_config_text(const std::string& text) {
  Config c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + s + "'");
    std::string key = trim(s.substr(0, eq));
    std::string val = trim(s.substr(eq + 1));
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("duplicate key '" + key + "'");
    it->second(c, key, val);
  }
  validate_config(c);
  return c;
}

Config load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_snapshot(const Config& c) {
  std::ostringstream os;
  os << "k=" << c.k << "\n";
  os << "n=" << c.n << "\n";
  os << "t=" << c.t << "\n";
  os << "tau=" << fmt_float(c.tau) << "\n";
  os << "beta=" << fmt_float(c.beta) << "\n";
  os << "alpha=" << fmt_float(c.alpha) << "\n";
  os << "temperature=" << fmt_float(c.temperature) << "\n";
  os << "m1=" << c.m1 << "\n";
  os << "m2=" << c.m2 << "\n";
  os << "peft.kind=" << to_string(c.peft_kind) << "\n";
  os << "peft.m3=" << c.m3 << "\n";
  os << "peft.r1=" << c.r1 << "\n";
  os << "peft.r2=" << c.r2 << "\n";
  os << "e1=" << c.e1 << "\n";
  os << "e2=" << c.e2 << "\n";
  os << "e3=" << c.e3 << "\n";
  os << "image_size=" << c.image_size << "\n";
  os << "patch_size=" << c.patch_size << "\n";
  os << "channels=" << c.channels << "\n";
  os << "layers=" << c.layers << "\n";
  os << "width=" << c.width << "\n";
  os << "heads=" << c.heads << "\n";
  os << "embed_dim=" << c.embed_dim << "\n";
  os << "vote=" << to_string(c.vote) << "\n";
  os << "pretrain_epochs=" << c.pretrain_epochs << "\n";
  os << "adapt_epochs=" << c.adapt_epochs << "\n";
  os << "align_epochs=" << c.align_epochs << "\n";
  os << "batch_size=" << c.batch_size << "\n";
  os << "lr_max=" << fmt_float(c.lr_max) << "\n";
  os << "lr_min=" << fmt_float(c.lr_min) << "\n";
  os << "seed=" << c.seed << "\n";
  os << "label_noise=" << fmt_float(c.label_noise) << "\n";
  os << "workers=" << c.workers << "\n";
  return os.str();
}

void validate_config(const Config& c) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(c.k >= 2, "k: need at least 2 classes, got " + std::to_string(c.k));
  require(c.n >= 2, "n: need at least 2 domains, got " + std::to_string(c.n));
  require(c.t >= 1 && c.t <= c.k, "t: need 1 <= t <= k, got t=" + std::to_string(c.t));
  require(c.tau > 0.f && c.tau < 1.f, "tau: must lie in (0,1), got " + std::to_string(c.tau));
  require(c.beta > 0.f && c.beta < 1.f, "beta: must lie in (0,1), got " + std::to_string(c.beta));
  require(c.alpha >= 0.f, "alpha: must be non-negative");
  require(c.temperature > 0.f, "temperature: must be positive");
  require(c.m1 >= 1, "m1: must be at least 1");
  require(c.m2 >= 1, "m2: must be at least 1");
  require(c.m3 >= 1, "peft.m3: must be at least 1");
  require(c.r1 >= 1, "peft.r1: must be at least 1");
  require(c.r2 >= 1, "peft.r2: must be at least 1");
  require(c.r2 < c.width, "peft.r2: bottleneck must be narrower than width");
  require(c.e1 >= 1 && c.e2 >= 1 && c.e3 >= 1, "e1/e2/e3: must be at least 1");
  require(c.e3 == c.width, "e3: reconstruction width must equal width (" + std::to_string(c.width) + "), got " +
                               std::to_string(c.e3));
  require(c.image_size >= 1 && c.patch_size >= 1 && c.image_size % c.patch_size == 0,
          "patch_size: must divide image_size");
  require(c.channels >= 1, "channels: must be at least 1");
  require(c.layers >= 1, "layers: must be at least 1");
  require(c.width >= 2 && c.heads >= 1 && c.width % c.heads == 0, "heads: must divide width");
  require(c.embed_dim >= 2, "embed_dim: must be at least 2");
  require(c.pretrain_epochs >= 0 && c.adapt_epochs >= 0 && c.align_epochs >= 0,
          "epochs: must be non-negative");
  require(c.batch_size >= 2, "batch_size: must be at least 2");
  require(c.lr_max > 0.f && c.lr_min > 0.f && c.lr_max >= c.lr_min, "lr_max/lr_min: need lr_max >= lr_min > 0");
  require(c.label_noise >= 0.f && c.label_noise < 1.f, "label_noise: must lie in [0,1)");
  require(c.workers >= 1, "workers: must be at least 1");
}

}  // namespace palign
