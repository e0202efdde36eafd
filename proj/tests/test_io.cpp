#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "palign/error.hpp"
#include "palign/io.hpp"
#include "palign/rng.hpp"
#include "test_support.hpp"

using namespace palign;
using test_support::random_tensor;

namespace {

// fresh scratch directory per test run
struct TempDir {
  std::filesystem::path root;
  TempDir() {
    root = std::filesystem::temp_directory_path() /
           ("palign_io_" + std::to_string(splitmix64(reinterpret_cast<uintptr_t>(this))));
    std::filesystem::create_directories(root);
  }
  ~TempDir() { std::filesystem::remove_all(root); }
  std::string path(const std::string& name) const { return (root / name).string(); }
};

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_all(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("embeddings round-trip bitwise") {
  TempDir dir;
  Rng rng(11);
  auto m = random_tensor<float>({100, 32}, rng);
  write_embeddings(dir.path("a.emb1"), m);
  auto back = read_embeddings(dir.path("a.emb1"));
  REQUIRE(back.shape() == m.shape());
  for (int64_t i = 0; i < m.numel(); ++i) CHECK(back[i] == m[i]);
}

TEST_CASE("empty embedding file is a valid dataset") {
  TempDir dir;
  write_embeddings(dir.path("e.emb1"), Tensor<float>({0, 16}));
  auto back = read_embeddings(dir.path("e.emb1"));
  CHECK(back.rows() == 0);
  CHECK(back.cols() == 16);
}

TEST_CASE("embedding reader rejects bad magic and truncation with locations") {
  TempDir dir;
  Rng rng(3);
  write_embeddings(dir.path("a.emb1"), random_tensor<float>({4, 3}, rng));
  std::string good = read_all(dir.path("a.emb1"));

  write_all(dir.path("bad.emb1"), "XXXX" + good.substr(4));
  CHECK_THROWS_WITH_AS(read_embeddings(dir.path("bad.emb1")), doctest::Contains("bad magic at byte 0"),
                       FormatError);

  // cut the payload short: expected vs actual byte counts must be named
  write_all(dir.path("cut.emb1"), good.substr(0, good.size() - 7));
  try {
    read_embeddings(dir.path("cut.emb1"));
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    std::string msg = e.what();
    CHECK(msg.find("expected 48 bytes") != std::string::npos);
    CHECK(msg.find("found 41") != std::string::npos);
  }

  // header itself cut off
  write_all(dir.path("hdr.emb1"), good.substr(0, 6));
  CHECK_THROWS_WITH_AS(read_embeddings(dir.path("hdr.emb1")), doctest::Contains("truncated at byte 4"),
                       FormatError);

  write_all(dir.path("trail.emb1"), good + "zz");
  CHECK_THROWS_WITH_AS(read_embeddings(dir.path("trail.emb1")), doctest::Contains("trailing"), FormatError);
}

TEST_CASE("labels round-trip and reject truncation") {
  TempDir dir;
  std::vector<int> labels{0, 5, 2, 2, 11};
  write_labels(dir.path("l.lbl1"), labels);
  CHECK(read_labels(dir.path("l.lbl1")) == labels);

  std::string good = read_all(dir.path("l.lbl1"));
  write_all(dir.path("cut.lbl1"), good.substr(0, good.size() - 2));
  CHECK_THROWS_AS(read_labels(dir.path("cut.lbl1")), FormatError);

  write_labels(dir.path("none.lbl1"), {});
  CHECK(read_labels(dir.path("none.lbl1")).empty());
}

TEST_CASE("pseudo-label records round-trip with bit-exact confidence") {
  TempDir dir;
  std::vector<PseudoLabelRecord> recs;
  Rng rng(17);
  for (int i = 0; i < 50; ++i) {
    PseudoLabelRecord r;
    r.sample_id = i;
    r.label = i % 7;
    r.confidence = static_cast<float>(rng.uniform());  // arbitrary mantissas
    r.origin = (i % 2 == 0) ? "ensemble" : "refined@stage" + std::to_string(i % 3);
    recs.push_back(r);
  }
  write_pseudo_labels(dir.path("p.plbl1"), recs);
  auto back = read_pseudo_labels(dir.path("p.plbl1"));
  REQUIRE(back.size() == recs.size());
  for (size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].sample_id == recs[i].sample_id);
    CHECK(back[i].label == recs[i].label);
    CHECK(back[i].confidence == recs[i].confidence);
    CHECK(back[i].origin == recs[i].origin);
    CHECK_FALSE(back[i].accepted);  // never persisted
  }
}

TEST_CASE("pseudo-label reader rejects malformed lines and unknown keys") {
  TempDir dir;
  write_all(dir.path("bad.plbl1"), "{\"sample_id\":1,\"label\":2,\"confidence\":0.5,\"origin\":\"ensemble\"}\nnot json\n");
  CHECK_THROWS_WITH_AS(read_pseudo_labels(dir.path("bad.plbl1")), doctest::Contains("line 2"), FormatError);

  write_all(dir.path("extra.plbl1"),
            "{\"sample_id\":1,\"label\":2,\"confidence\":0.5,\"origin\":\"ensemble\",\"extra\":true}\n");
  CHECK_THROWS_WITH_AS(read_pseudo_labels(dir.path("extra.plbl1")), doctest::Contains("unknown key"), FormatError);

  write_all(dir.path("missing.plbl1"), "{\"sample_id\":1,\"label\":2,\"origin\":\"ensemble\"}\n");
  CHECK_THROWS_AS(read_pseudo_labels(dir.path("missing.plbl1")), FormatError);

  write_all(dir.path("empty.plbl1"), "");
  CHECK(read_pseudo_labels(dir.path("empty.plbl1")).empty());
}

TEST_CASE("acceptance marking is a strict threshold") {
  std::vector<PseudoLabelRecord> recs(3);
  recs[0].confidence = 0.61f;
  recs[1].confidence = 0.6f;
  recs[2].confidence = 0.59f;
  mark_accepted(recs, 0.6f);
  CHECK(recs[0].accepted);
  CHECK_FALSE(recs[1].accepted);  // equality is not enough
  CHECK_FALSE(recs[2].accepted);
}

TEST_CASE("checkpoints round-trip bitwise") {
  TempDir dir;
  Rng rng(5);
  Checkpoint ck;
  ck.stage = 2;
  ck.tensors.emplace_back("pair0.V", random_tensor<float>({3, 4, 5}, rng));
  ck.tensors.emplace_back("ae.b1", random_tensor<float>({9}, rng));
  ck.tensors.emplace_back("scalarish", Tensor<float>({1}, {42.0f}));
  ck.config_snapshot = "k=12\nseed=7\n";
  write_checkpoint(dir.path("c.ckpt"), ck);
  auto back = read_checkpoint(dir.path("c.ckpt"));

  CHECK(back.version == kCheckpointVersion);
  CHECK(back.stage == 2);
  CHECK(back.config_snapshot == ck.config_snapshot);
  REQUIRE(back.tensors.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back.tensors[i].first == ck.tensors[i].first);
    REQUIRE(back.tensors[i].second.shape() == ck.tensors[i].second.shape());
    for (int64_t j = 0; j < ck.tensors[i].second.numel(); ++j)
      CHECK(back.tensors[i].second[j] == ck.tensors[i].second[j]);
  }
  CHECK(back.checksum() == ck.checksum());
}

TEST_CASE("checkpoint reader names missing tensors and rejects version skew") {
  TempDir dir;
  Checkpoint ck;
  ck.tensors.emplace_back("present", Tensor<float>({2}, {1.0f, 2.0f}));
  write_checkpoint(dir.path("c.ckpt"), ck);
  auto back = read_checkpoint(dir.path("c.ckpt"));
  CHECK(back.has("present"));
  CHECK_FALSE(back.has("absent"));
  CHECK_THROWS_WITH_AS(back.get("pair3.Dt"), doctest::Contains("pair3.Dt"), FormatError);

  // bump the stored version field (bytes 4..7)
  std::string bytes = read_all(dir.path("c.ckpt"));
  bytes[4] = 9;
  write_all(dir.path("v9.ckpt"), bytes);
  CHECK_THROWS_WITH_AS(read_checkpoint(dir.path("v9.ckpt")), doctest::Contains("version 9"), FormatError);

  // truncated tensor payload names the tensor
  write_all(dir.path("cut.ckpt"), read_all(dir.path("c.ckpt")).substr(0, 30));
  CHECK_THROWS_WITH_AS(read_checkpoint(dir.path("cut.ckpt")), doctest::Contains("present"), FormatError);
}

TEST_CASE("checkpoint checksum is sensitive to every field") {
  Checkpoint a;
  a.stage = 1;
  a.tensors.emplace_back("w", Tensor<float>({2}, {1.0f, 2.0f}));
  a.config_snapshot = "k=3\n";

  Checkpoint b = a;
  CHECK(a.checksum() == b.checksum());
  b.stage = 2;
  CHECK(a.checksum() != b.checksum());
  b = a;
  b.tensors[0].second[1] = 2.5f;
  CHECK(a.checksum() != b.checksum());
  b = a;
  b.tensors[0].first = "w2";
  CHECK(a.checksum() != b.checksum());
  b = a;
  b.config_snapshot = "k=4\n";
  CHECK(a.checksum() != b.checksum());
}

TEST_CASE("dataset manifest round-trips and loads domains with label routing") {
  TempDir dir;
  Rng rng(23);

  // two labeled sources and one unlabeled target, eval labels held out
  DatasetManifest m;
  m.k = 3;
  m.n = 3;
  m.image_size = 4;
  m.channels = 3;
  m.carrier = "image";
  for (int d = 0; d < 2; ++d) {
    auto data = random_tensor<float>({5, 4 * 4 * 3}, rng);
    write_embeddings(dir.path("src" + std::to_string(d) + ".emb1"), data);
    write_labels(dir.path("src" + std::to_string(d) + ".lbl1"), {0, 1, 2, 0, 1});
    m.domains.push_back({d, "source", "src" + std::to_string(d) + ".emb1", "src" + std::to_string(d) + ".lbl1"});
  }
  write_embeddings(dir.path("tgt.emb1"), random_tensor<float>({4, 4 * 4 * 3}, rng));
  write_labels(dir.path("tgt_eval.lbl1"), {2, 1, 0, 0});
  m.domains.push_back({2, "target", "tgt.emb1", ""});
  m.target_eval_labels = "tgt_eval.lbl1";

  write_dataset_manifest(dir.path("data.json"), m);
  auto back = read_dataset_manifest(dir.path("data.json"));
  CHECK(back.k == 3);
  CHECK(back.carrier == "image");
  REQUIRE(back.domains.size() == 3);
  CHECK(back.domains[2].role == "target");
  CHECK(back.domains[2].labels.empty());

  auto domains = load_domains(dir.path("data.json"), back);
  REQUIRE(domains.size() == 3);
  CHECK(domains[0].labeled());
  CHECK(domains[1].labeled());
  CHECK_FALSE(domains[2].labeled());  // target carries no labels
  CHECK_FALSE(domains[0].is_embedding);
  CHECK(domains[0].size() == 5);
  CHECK(domains[2].size() == 4);
  CHECK(domains[2].sample_ids == std::vector<int>{0, 1, 2, 3});

  auto eval = load_target_eval_labels(dir.path("data.json"), back);
  CHECK(eval == std::vector<int>{2, 1, 0, 0});
}

TEST_CASE("manifest reader rejects label leakage and unknown keys") {
  TempDir dir;
  Rng rng(2);
  write_embeddings(dir.path("t.emb1"), random_tensor<float>({2, 8}, rng));
  write_labels(dir.path("t.lbl1"), {0, 1});

  DatasetManifest m;
  m.k = 2;
  m.n = 2;
  m.image_size = 0;
  m.channels = 0;
  m.carrier = "embedding";
  m.domains.push_back({0, "source", "t.emb1", "t.lbl1"});
  m.domains.push_back({1, "target", "t.emb1", "t.lbl1"});  // leak: target lists labels
  m.target_eval_labels = "t.lbl1";
  write_dataset_manifest(dir.path("leak.json"), m);
  auto parsed = read_dataset_manifest(dir.path("leak.json"));
  CHECK_THROWS_WITH_AS(load_domains(dir.path("leak.json"), parsed), doctest::Contains("must not list"),
                       FormatError);

  write_all(dir.path("junk.json"), "{\"k\":1,\"n\":2,\"image_size\":4,\"channels\":3,\"carrier\":\"image\","
                                   "\"domains\":[],\"target_eval_labels\":\"x\",\"surprise\":1}\n");
  CHECK_THROWS_WITH_AS(read_dataset_manifest(dir.path("junk.json")), doctest::Contains("surprise"), FormatError);

  write_all(dir.path("carrier.json"), "{\"k\":1,\"n\":2,\"image_size\":4,\"channels\":3,\"carrier\":\"paper\","
                                      "\"domains\":[],\"target_eval_labels\":\"x\"}\n");
  CHECK_THROWS_WITH_AS(read_dataset_manifest(dir.path("carrier.json")), doctest::Contains("carrier"), FormatError);
}

TEST_CASE("config text round-trips through its snapshot") {
  Config c;
  c.k = 5;
  c.tau = 0.45f;
  c.vote = VoteRule::Majority;
  c.peft_kind = PeftKind::Adapter;
  c.seed = 99;
  auto back = parse_config_text(config_snapshot(c));
  CHECK(back == c);
}

TEST_CASE("config defaults and validation match the documented ranges") {
  auto c = parse_config_text("");
  CHECK(c.tau == 0.6f);
  CHECK(c.beta == 0.8f);
  CHECK(c.t == 3);
  CHECK(c.m1 == 12);
  CHECK(c.m2 == 12);
  CHECK(c.m3 == 20);
  CHECK(c.r1 == 8);
  CHECK(c.r2 == 16);

  CHECK_THROWS_WITH_AS(parse_config_text("beta=1.5\n"), doctest::Contains("beta"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("no_such_knob=1\n"), doctest::Contains("no_such_knob"), ConfigError);
  CHECK_NOTHROW(parse_config_text("m1=12\nm2=12\n"));
}
