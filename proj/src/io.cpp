#include "palign/io.hpp"

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "palign/error.hpp"
#include "palign/rng.hpp"

namespace palign {

namespace {

using nlohmann::json;

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

// Bounds-checked reader over a whole file image; offsets feed error text.
struct Cursor {
  const std::string& path;
  const std::string& bytes;
  size_t off = 0;

  void need(size_t n, const char* what) const {
    if (off + n > bytes.size())
      throw FormatError(path + ": truncated at byte " + std::to_string(off) + ": need " + std::to_string(n) +
                        " more bytes for " + what + ", file has " + std::to_string(bytes.size() - off) + " left");
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<uint8_t>(bytes[off++]);
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(static_cast<uint8_t>(bytes[off]) |
                                       (static_cast<uint8_t>(bytes[off + 1]) << 8));
    off += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(bytes[off + i])) << (8 * i);
    off += 4;
    return v;
  }
  float f32(const char* what) {
    uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string raw(size_t n, const char* what) {
    need(n, what);
    std::string s = bytes.substr(off, n);
    off += n;
    return s;
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void spill(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

void expect_magic(Cursor& c, const char* magic) {
  std::string got = c.raw(4, "magic");
  if (got != magic)
    throw FormatError(c.path + ": bad magic at byte 0: expected \"" + magic + "\", got \"" + got + "\"");
}

// Wraps nlohmann parse errors in our taxonomy with a line reference.
json parse_json(const std::string& text, const std::string& where) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw FormatError(where + ": malformed JSON");
  return j;
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw FormatError(where + ": unknown key \"" + it.key() + "\"");
  }
}

std::string resolve(const std::string& manifest_path, const std::string& rel) {
  namespace fs = std::filesystem;
  fs::path base = fs::path(manifest_path).parent_path();
  return (base / rel).string();
}

}  // namespace

void mark_accepted(std::vector<PseudoLabelRecord>& records, float tau) {
  for (auto& r : records) r.accepted = r.confidence > tau;
}

void write_embeddings(const std::string& path, const Tensor<float>& rows) {
  if (rows.ndim() != 2) throw DimensionError("write_embeddings wants a 2-d tensor");
  std::string out;
  out.reserve(12 + static_cast<size_t>(rows.numel()) * 4);
  out += "EMB1";
  put_u32(out, static_cast<uint32_t>(rows.rows()));
  put_u32(out, static_cast<uint32_t>(rows.cols()));
  for (int64_t i = 0; i < rows.numel(); ++i) put_f32(out, rows[i]);
  spill(path, out);
}

Tensor<float> read_embeddings(const std::string& path) {
  std::string bytes = slurp(path);
  Cursor c{path, bytes};
  expect_magic(c, "EMB1");
  uint32_t n = c.u32("row count");
  uint32_t d = c.u32("column count");
  size_t want = static_cast<size_t>(n) * d * 4;
  if (c.off + want > bytes.size())
    throw FormatError(path + ": truncated payload at byte " + std::to_string(c.off) + ": expected " +
                      std::to_string(want) + " bytes, found " + std::to_string(bytes.size() - c.off));
  Tensor<float> t({static_cast<int>(n), static_cast<int>(d)});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = c.f32("payload");
  if (c.off != bytes.size())
    throw FormatError(path + ": " + std::to_string(bytes.size() - c.off) + " trailing bytes after payload");
  return t;
}

void write_labels(const std::string& path, const std::vector<int>& labels) {
  std::string out;
  out += "LBL1";
  put_u32(out, static_cast<uint32_t>(labels.size()));
  for (int v : labels) {
    if (v < 0) throw ContractError("write_labels: negative class id " + std::to_string(v));
    put_u32(out, static_cast<uint32_t>(v));
  }
  spill(path, out);
}

std::vector<int> read_labels(const std::string& path) {
  std::string bytes = slurp(path);
  Cursor c{path, bytes};
  expect_magic(c, "LBL1");
  uint32_t n = c.u32("label count");
  std::vector<int> out;
  out.reserve(n);
  for (uint32_t i = 0; i < n; ++i) out.push_back(static_cast<int>(c.u32("label")));
  if (c.off != bytes.size())
    throw FormatError(path + ": " + std::to_string(bytes.size() - c.off) + " trailing bytes after labels");
  return out;
}

void write_pseudo_labels(const std::string& path, const std::vector<PseudoLabelRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    json j;
    j["sample_id"] = r.sample_id;
    j["label"] = r.label;
    // double holds the f32 exactly and dumps shortest-roundtrip
    j["confidence"] = static_cast<double>(r.confidence);
    j["origin"] = r.origin;
    out += j.dump();
    out += '\n';
  }
  spill(path, out);
}

std::vector<PseudoLabelRecord> read_pseudo_labels(const std::string& path) {
  std::string bytes = slurp(path);
  std::vector<PseudoLabelRecord> out;
  std::istringstream in(bytes);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::string where = path + " line " + std::to_string(lineno);
    json j = parse_json(line, where);
    if (!j.is_object()) throw FormatError(where + ": record is not an object");
    reject_unknown_keys(j, {"sample_id", "label", "confidence", "origin"}, where);
    PseudoLabelRecord r;
    try {
      r.sample_id = j.at("sample_id").get<int>();
      r.label = j.at("label").get<int>();
      r.confidence = static_cast<float>(j.at("confidence").get<double>());
      r.origin = j.at("origin").get<std::string>();
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

const Tensor<float>& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError("checkpoint has no tensor named \"" + name + "\"");
}

uint64_t Checkpoint::checksum() const {
  uint64_t h = 0x13198a2e03707344ULL;
  h = splitmix64(h ^ version);
  h = splitmix64(h ^ static_cast<uint64_t>(static_cast<uint32_t>(stage)));
  for (const auto& [name, t] : tensors) {
    for (char ch : name) h = splitmix64(h ^ static_cast<uint64_t>(static_cast<unsigned char>(ch)));
    h = splitmix64(h ^ tensor_checksum(t));
  }
  for (char ch : config_snapshot) h = splitmix64(h ^ static_cast<uint64_t>(static_cast<unsigned char>(ch)));
  return h;
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::string out;
  out += "CKPT";
  put_u32(out, ck.version);
  put_u32(out, static_cast<uint32_t>(ck.stage));
  put_u32(out, static_cast<uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    if (name.size() > 0xffff) throw ContractError("checkpoint tensor name too long: " + name.substr(0, 32));
    put_u16(out, static_cast<uint16_t>(name.size()));
    out += name;
    if (t.ndim() > 0xff) throw ContractError("checkpoint tensor rank too large");
    out.push_back(static_cast<char>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) put_u32(out, static_cast<uint32_t>(t.dim(i)));
    for (int64_t i = 0; i < t.numel(); ++i) put_f32(out, t[i]);
  }
  out += ck.config_snapshot;
  spill(path, out);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::string bytes = slurp(path);
  Cursor c{path, bytes};
  expect_magic(c, "CKPT");
  Checkpoint ck;
  ck.version = c.u32("format version");
  if (ck.version != kCheckpointVersion)
    throw FormatError(path + ": checkpoint format version " + std::to_string(ck.version) + ", this build reads " +
                      std::to_string(kCheckpointVersion));
  ck.stage = static_cast<int>(c.u32("stage index"));
  uint32_t count = c.u32("entry count");
  ck.tensors.reserve(count);
  for (uint32_t e = 0; e < count; ++e) {
    uint16_t name_len = c.u16("tensor name length");
    std::string name = c.raw(name_len, "tensor name");
    uint8_t rank = c.u8("tensor rank");
    std::vector<int> shape;
    shape.reserve(rank);
    int64_t numel = 1;
    for (uint8_t i = 0; i < rank; ++i) {
      shape.push_back(static_cast<int>(c.u32("tensor dim")));
      numel *= shape.back();
    }
    size_t want = static_cast<size_t>(numel) * 4;
    if (c.off + want > bytes.size())
      throw FormatError(path + ": truncated payload for tensor \"" + name + "\" at byte " + std::to_string(c.off) +
                        ": expected " + std::to_string(want) + " bytes, found " +
                        std::to_string(bytes.size() - c.off));
    Tensor<float> t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = c.f32("tensor payload");
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  ck.config_snapshot = bytes.substr(c.off);
  return ck;
}

void write_dataset_manifest(const std::string& path, const DatasetManifest& m) {
  json j;
  j["k"] = m.k;
  j["n"] = m.n;
  j["image_size"] = m.image_size;
  j["channels"] = m.channels;
  j["carrier"] = m.carrier;
  j["domains"] = json::array();
  for (const auto& d : m.domains) {
    json e;
    e["domain_id"] = d.domain_id;
    e["role"] = d.role;
    e["data"] = d.data;
    if (!d.labels.empty()) e["labels"] = d.labels;
    j["domains"].push_back(std::move(e));
  }
  j["target_eval_labels"] = m.target_eval_labels;
  spill(path, j.dump(2) + "\n");
}

DatasetManifest read_dataset_manifest(const std::string& path) {
  json j = parse_json(slurp(path), path);
  if (!j.is_object()) throw FormatError(path + ": manifest is not a JSON object");
  reject_unknown_keys(j, {"k", "n", "image_size", "channels", "carrier", "domains", "target_eval_labels"}, path);
  DatasetManifest m;
  try {
    m.k = j.at("k").get<int>();
    m.n = j.at("n").get<int>();
    m.image_size = j.at("image_size").get<int>();
    m.channels = j.at("channels").get<int>();
    m.carrier = j.at("carrier").get<std::string>();
    m.target_eval_labels = j.at("target_eval_labels").get<std::string>();
    for (const auto& e : j.at("domains")) {
      reject_unknown_keys(e, {"domain_id", "role", "data", "labels"}, path);
      ManifestDomain d;
      d.domain_id = e.at("domain_id").get<int>();
      d.role = e.at("role").get<std::string>();
      d.data = e.at("data").get<std::string>();
      if (e.contains("labels")) d.labels = e.at("labels").get<std::string>();
      if (d.role != "source" && d.role != "target")
        throw FormatError(path + ": domain role must be \"source\" or \"target\", got \"" + d.role + "\"");
      m.domains.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  if (m.carrier != "image" && m.carrier != "embedding")
    throw FormatError(path + ": carrier must be \"image\" or \"embedding\", got \"" + m.carrier + "\"");
  return m;
}

std::vector<DomainDataset> load_domains(const std::string& manifest_path, const DatasetManifest& m) {
  std::vector<DomainDataset> out;
  out.reserve(m.domains.size());
  for (const auto& d : m.domains) {
    DomainDataset ds;
    ds.domain_id = d.domain_id;
    ds.is_embedding = m.carrier == "embedding";
    Tensor<float> rows = read_embeddings(resolve(manifest_path, d.data));
    int n = rows.rows(), w = rows.cols();
    ds.samples.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      Tensor<float> s({w});
      for (int jx = 0; jx < w; ++jx) s[jx] = rows.at(i, jx);
      ds.samples.push_back(std::move(s));
      ds.sample_ids.push_back(i);
    }
    if (d.role == "source") {
      if (d.labels.empty()) throw FormatError(manifest_path + ": source domain " + std::to_string(d.domain_id) +
                                              " has no labels file");
      ds.labels = read_labels(resolve(manifest_path, d.labels));
      if (static_cast<int>(ds.labels.size()) != n)
        throw FormatError(manifest_path + ": domain " + std::to_string(d.domain_id) + " has " + std::to_string(n) +
                          " samples but " + std::to_string(ds.labels.size()) + " labels");
    } else if (!d.labels.empty()) {
      throw FormatError(manifest_path + ": target domain must not list training labels");
    }
    out.push_back(std::move(ds));
  }
  return out;
}

std::vector<int> load_target_eval_labels(const std::string& manifest_path, const DatasetManifest& m) {
  if (m.target_eval_labels.empty())
    throw ContractError("dataset manifest carries no held-out target labels");
  return read_labels(resolve(manifest_path, m.target_eval_labels));
}

}  // namespace palign
