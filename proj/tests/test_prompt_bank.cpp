#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "palign/encoders.hpp"
#include "palign/prompt_bank.hpp"
#include "test_support.hpp"

using namespace palign;
using test_support::check_gradients;
using test_support::micro_config;

TEST_CASE("assembled prompt stacks context, domain, and the class token") {
  auto cfg = micro_config();
  TextEncoder<float> text(EncoderDims::from(cfg), 1);
  auto bank = PromptBank<float>::init(cfg, 0, 1);
  auto dims = EncoderDims::from(cfg);

  for (int cls = 0; cls < cfg.k; ++cls) {
    auto p = bank.assemble(cls, Domain::Source, text);
    REQUIRE(p->value.rows() == dims.text_len);
    REQUIRE(p->value.cols() == cfg.width);
    // context rows come straight out of V[cls]
    for (int i = 0; i < cfg.m1; ++i)
      for (int j = 0; j < cfg.width; ++j)
        CHECK(p->value.at(i, j) == bank.v->value[(static_cast<int64_t>(cls) * cfg.m1 + i) * cfg.width + j]);
    for (int i = 0; i < cfg.m2; ++i)
      for (int j = 0; j < cfg.width; ++j) CHECK(p->value.at(cfg.m1 + i, j) == bank.ds->value.at(i, j));
    auto tok = text.class_token(cls);
    for (int j = 0; j < cfg.width; ++j) CHECK(p->value.at(cfg.m1 + cfg.m2, j) == tok[static_cast<size_t>(j)]);
  }
}

TEST_CASE("source and target prompts differ only in the domain rows") {
  auto cfg = micro_config();
  TextEncoder<float> text(EncoderDims::from(cfg), 1);
  auto bank = PromptBank<float>::init(cfg, 0, 3);
  auto s = bank.assemble(1, Domain::Source, text);
  auto t = bank.assemble(1, Domain::Target, text);
  for (int i = 0; i < cfg.m1; ++i)
    for (int j = 0; j < cfg.width; ++j) CHECK(s->value.at(i, j) == t->value.at(i, j));
  for (int i = 0; i < cfg.m2; ++i)
    for (int j = 0; j < cfg.width; ++j) {
      CHECK(s->value.at(cfg.m1 + i, j) == bank.ds->value.at(i, j));
      CHECK(t->value.at(cfg.m1 + i, j) == bank.dt->value.at(i, j));
    }
  int last = cfg.m1 + cfg.m2;
  for (int j = 0; j < cfg.width; ++j) CHECK(s->value.at(last, j) == t->value.at(last, j));
}

TEST_CASE("class index outside the bank is rejected") {
  auto cfg = micro_config();
  TextEncoder<float> text(EncoderDims::from(cfg), 1);
  auto bank = PromptBank<float>::init(cfg, 0, 1);
  CHECK_THROWS_AS(bank.assemble(cfg.k, Domain::Source, text), ContractError);
  CHECK_THROWS_AS(bank.assemble(-1, Domain::Target, text), ContractError);
}

TEST_CASE("banks of different pairs share no parameters or gradients") {
  auto cfg = micro_config();
  auto b0 = PromptBank<float>::init(cfg, 0, 1);
  auto b1 = PromptBank<float>::init(cfg, 1, 1);

  std::set<const void*> seen;
  for (const auto& np : b0.named_params()) seen.insert(np.var.get());
  for (const auto& np : b1.named_params()) CHECK(seen.count(np.var.get()) == 0);

  // same master seed, distinct pair tags, distinct values
  CHECK(b0.v->value[0] != b1.v->value[0]);

  // touching pair 0's loss leaves pair 1's grads empty
  auto loss = mean_all(square(b0.v));
  backward(loss);
  CHECK(b0.v->grad.numel() > 0);
  CHECK(b1.v->grad.numel() == 0);
}

TEST_CASE("parameter names carry the pair index") {
  auto cfg = micro_config();
  auto bank = PromptBank<float>::init(cfg, 2, 1);
  auto ps = bank.named_params();
  REQUIRE(ps.size() == 3);
  CHECK(ps[0].name == "pair2.V");
  CHECK(ps[1].name == "pair2.Ds");
  CHECK(ps[2].name == "pair2.Dt");
  CHECK(bank.param_count() == static_cast<int64_t>(cfg.k) * cfg.m1 * cfg.width + 2ll * cfg.m2 * cfg.width);
}

TEST_CASE("prompt matrix lists source rows then target rows") {
  auto cfg = micro_config();
  TextEncoder<float> text(EncoderDims::from(cfg), 1);
  auto bank = PromptBank<float>::init(cfg, 0, 5);
  auto mat = encode_prompt_matrix(bank, text);
  REQUIRE(mat->value.rows() == 2 * cfg.k);
  REQUIRE(mat->value.cols() == cfg.embed_dim);

  // row k+c must equal the target-domain encoding of class c
  for (int c = 0; c < cfg.k; ++c) {
    auto s = text.encode(bank.assemble(c, Domain::Source, text));
    auto t = text.encode(bank.assemble(c, Domain::Target, text));
    for (int j = 0; j < cfg.embed_dim; ++j) {
      CHECK(mat->value.at(c, j) == doctest::Approx(s->value[j]).epsilon(1e-6));
      CHECK(mat->value.at(cfg.k + c, j) == doctest::Approx(t->value[j]).epsilon(1e-6));
    }
  }
}

TEST_CASE("equal domain tokens collapse source and target rows") {
  auto cfg = micro_config();
  TextEncoder<float> text(EncoderDims::from(cfg), 1);
  auto bank = PromptBank<float>::init(cfg, 0, 5);
  bank.dt->value = bank.ds->value;
  auto mat = encode_prompt_matrix(bank, text);
  for (int c = 0; c < cfg.k; ++c)
    for (int j = 0; j < cfg.embed_dim; ++j)
      CHECK(mat->value.at(c, j) == mat->value.at(cfg.k + c, j));
}

TEST_CASE("init is reproducible per seed and pair") {
  auto cfg = micro_config();
  auto a = PromptBank<float>::init(cfg, 1, 9);
  auto b = PromptBank<float>::init(cfg, 1, 9);
  auto c = PromptBank<float>::init(cfg, 1, 10);
  CHECK(tensor_checksum(a.v->value) == tensor_checksum(b.v->value));
  CHECK(tensor_checksum(a.ds->value) == tensor_checksum(b.ds->value));
  CHECK(tensor_checksum(a.v->value) != tensor_checksum(c.v->value));
}

TEST_CASE("gradients reach V, Ds, and Dt through the text tower") {
  auto cfg = micro_config();
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    TextEncoder<double> text(EncoderDims::from(cfg), seed);
    auto bank = PromptBank<double>::init(cfg, 0, seed);
    auto build = [&]() {
      auto mat = encode_prompt_matrix(bank, text);
      return mean_all(square(mat));
    };
    auto rep = check_gradients(bank.named_params(), build);
    INFO("seed ", seed, " worst at ", rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
  }
}
