#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "palign/autodiff.hpp"
#include "palign/optim.hpp"
#include "test_support.hpp"

using namespace palign;
using test_support::check_gradients;
using test_support::random_tensor;

namespace {

Tensor<double> away_from(Tensor<double> t, double margin) {
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (std::abs(t[i]) < margin) t[i] = t[i] >= 0 ? margin : -margin;
  }
  return t;
}

}  // namespace

TEST_CASE("matmul identity") {
  auto a = constant(Tensor<float>({2, 2}, {3.f, -1.f, 0.5f, 2.f}));
  auto eye = constant(Tensor<float>({2, 2}, {1.f, 0.f, 0.f, 1.f}));
  auto out = matmul(eye, a);
  for (int i = 0; i < 4; ++i) CHECK(out->value[i] == a->value[i]);
}

TEST_CASE("matmul hand-computed product") {
  // [[1,0],[0,0]] x [[0,1],[1,0]]: row 0 picks row 0 of the right factor.
  auto a = constant(Tensor<float>({2, 2}, {1.f, 0.f, 0.f, 0.f}));
  auto b = constant(Tensor<float>({2, 2}, {0.f, 1.f, 1.f, 0.f}));
  auto out = matmul(a, b);
  CHECK(out->value[0] == 0.f);
  CHECK(out->value[1] == 1.f);
  CHECK(out->value[2] == 0.f);
  CHECK(out->value[3] == 0.f);
}

TEST_CASE("matmul inner dimension mismatch names both shapes") {
  auto a = constant(Tensor<float>({2, 3}));
  auto b = constant(Tensor<float>({2, 2}));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[2,2]") != std::string::npos);
  }
}

TEST_CASE("softmax uniform logits") {
  auto x = constant(Tensor<float>({3}, {0.f, 0.f, 0.f}));
  auto y = softmax(x);
  for (int i = 0; i < 3; ++i) CHECK(y->value[i] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("softmax closed form ln2") {
  auto x = constant(Tensor<double>({2}, {std::log(2.0), 0.0}));
  auto y = softmax(x);
  CHECK(y->value[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(y->value[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax preserves argmax, sums to one, non-negative") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    auto t = random_tensor<float>({7}, rng, 3.0);
    int argmax_in = 0;
    for (int i = 1; i < 7; ++i)
      if (t[i] > t[argmax_in]) argmax_in = i;
    auto y = softmax(constant(t));
    int argmax_out = 0;
    float sum = 0.f;
    for (int i = 0; i < 7; ++i) {
      CHECK(y->value[i] >= 0.f);
      sum += y->value[i];
      if (y->value[i] > y->value[argmax_out]) argmax_out = i;
    }
    CHECK(sum == doctest::Approx(1.f).epsilon(1e-6));
    CHECK(argmax_in == argmax_out);
  }
}

TEST_CASE("softmax axis 0 normalizes columns") {
  auto x = constant(Tensor<float>({2, 2}, {0.f, 5.f, 0.f, -5.f}));
  auto y = softmax(x, 0);
  CHECK(y->value.at(0, 0) == doctest::Approx(0.5f));
  CHECK(y->value.at(1, 0) == doctest::Approx(0.5f));
  CHECK(y->value.at(0, 1) + y->value.at(1, 1) == doctest::Approx(1.f));
  CHECK(y->value.at(0, 1) > 0.99f);
}

TEST_CASE("cosine similarity of a vector with itself") {
  auto v = constant(Tensor<float>({3}, {1.f, -2.f, 0.5f}));
  auto c = cosine_similarity(v, v);
  CHECK(c->value[0] == doctest::Approx(1.f).epsilon(1e-6));
}

TEST_CASE("cosine similarity of zero vector is a numeric error") {
  auto v = constant(Tensor<float>({3}, {0.f, 0.f, 0.f}));
  auto w = constant(Tensor<float>({3}, {1.f, 0.f, 0.f}));
  CHECK_THROWS_AS(cosine_similarity(v, w), NumericError);
  CHECK_THROWS_AS(normalize_rows(v), NumericError);
}

TEST_CASE("relu clamps negatives") {
  auto x = constant(Tensor<float>({3}, {-1.f, 0.f, 2.f}));
  auto y = relu(x);
  CHECK(y->value[0] == 0.f);
  CHECK(y->value[1] == 0.f);
  CHECK(y->value[2] == 2.f);
}

TEST_CASE("layernorm of a constant vector is zero") {
  auto x = constant(Tensor<float>({4}, {3.f, 3.f, 3.f, 3.f}));
  auto y = layernorm_rows(x);
  for (int i = 0; i < 4; ++i) CHECK(y->value[i] == doctest::Approx(0.f));
}

TEST_CASE("backward of x squared") {
  auto x = param(Tensor<double>::scalar(3.0), "x");
  auto y = square(x);
  backward(y);
  CHECK(x->grad[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("gradient of softmax sum is zero") {
  Rng rng(11);
  auto x = param(random_tensor<double>({5}, rng), "x");
  auto loss = sum_all(softmax(x));
  backward(loss);
  for (int i = 0; i < 5; ++i) CHECK(std::abs(x->grad[i]) < 1e-12);
}

TEST_CASE("repeated backward accumulates into leaves until cleared") {
  auto x = param(Tensor<double>::scalar(2.0), "x");
  auto y = square(x);
  backward(y);
  CHECK(x->grad[0] == doctest::Approx(4.0));
  backward(y);
  CHECK(x->grad[0] == doctest::Approx(8.0));
  zero_grad(x);
  backward(y);
  CHECK(x->grad[0] == doctest::Approx(4.0));
}

TEST_CASE("backward requires a scalar loss") {
  auto x = param(Tensor<double>({2}, {1.0, 2.0}), "x");
  auto y = square(x);
  CHECK_THROWS_AS(backward(y), ContractError);
}

TEST_CASE("constants receive no gradient buffers") {
  auto x = param(Tensor<double>::scalar(2.0), "x");
  auto c = constant(Tensor<double>::scalar(5.0));
  auto loss = hadamard(x, c);
  backward(loss);
  CHECK(x->grad[0] == doctest::Approx(5.0));
  CHECK(c->grad.empty());
}

TEST_CASE("three-layer composite matches finite differences over seeds") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    auto w1 = param(random_tensor<double>({4, 5}, rng, 0.5), "w1");
    auto w2 = param(random_tensor<double>({5, 3}, rng, 0.5), "w2");
    auto b = param(random_tensor<double>({3}, rng, 0.5), "b");
    auto x = constant(random_tensor<double>({2, 4}, rng));
    NamedParams<double> ps{{"w1", w1}, {"w2", w2}, {"b", b}};
    auto build = [&]() {
      auto h = tanh_op(matmul(x, w1));
      auto o = add_rowvec(matmul(h, w2), b);
      return mean_all(square(layernorm_rows(o)));
    };
    auto rep = check_gradients(ps, build);
    CHECK_MESSAGE(rep.max_rel_err <= 1e-4, rep.worst);
  }
}

TEST_CASE("every differentiable op matches finite differences") {
  struct OpCase {
    const char* name;
    std::function<double(uint64_t)> run;  // returns max rel err for a seed
  };

  auto simple = [](auto make_loss) {
    return [make_loss](uint64_t seed) {
      Rng rng(seed);
      auto a = param(random_tensor<double>({3, 4}, rng), "a");
      auto b = param(random_tensor<double>({3, 4}, rng), "b");
      NamedParams<double> ps{{"a", a}, {"b", b}};
      auto rep = check_gradients(ps, [&]() { return make_loss(a, b); });
      return rep.max_rel_err;
    };
  };

  std::vector<OpCase> cases;
  cases.push_back({"add", simple([](Var<double> a, Var<double> b) { return mean_all(square(add(a, b))); })});
  cases.push_back({"sub", simple([](Var<double> a, Var<double> b) { return mean_all(square(sub(a, b))); })});
  cases.push_back({"hadamard", simple([](Var<double> a, Var<double> b) { return mean_all(hadamard(a, b)); })});
  cases.push_back({"scale", simple([](Var<double> a, Var<double>) { return mean_all(scale(a, 1.7)); })});
  cases.push_back({"tanh", simple([](Var<double> a, Var<double> b) { return mean_all(hadamard(tanh_op(a), b)); })});
  cases.push_back({"square", simple([](Var<double> a, Var<double>) { return mean_all(square(a)); })});
  cases.push_back({"sum_all", simple([](Var<double> a, Var<double>) { return sum_all(square(a)); })});
  cases.push_back(
      {"mean_axis0", simple([](Var<double> a, Var<double>) { return mean_all(square(mean_axis0(a))); })});
  cases.push_back({"reshape", simple([](Var<double> a, Var<double>) { return mean_all(square(reshape(a, {4, 3}))); })});
  cases.push_back({"transpose",
                   simple([](Var<double> a, Var<double> b) { return mean_all(hadamard(transpose(a), transpose(b))); })});
  cases.push_back({"concat_rows",
                   simple([](Var<double> a, Var<double> b) { return mean_all(square(concat_rows<double>({a, b}))); })});
  cases.push_back({"concat_cols",
                   simple([](Var<double> a, Var<double> b) { return mean_all(square(concat_cols<double>({a, b}))); })});
  cases.push_back(
      {"slice_rows", simple([](Var<double> a, Var<double>) { return mean_all(square(slice_rows(a, 1, 3))); })});
  cases.push_back(
      {"slice_cols", simple([](Var<double> a, Var<double>) { return mean_all(square(slice_cols(a, 1, 3))); })});
  cases.push_back({"softmax", simple([](Var<double> a, Var<double> b) {
                     return mean_all(hadamard(softmax(a), b));
                   })});
  cases.push_back({"layernorm", simple([](Var<double> a, Var<double> b) {
                     return mean_all(hadamard(layernorm_rows(a), b));
                   })});
  cases.push_back({"normalize", simple([](Var<double> a, Var<double> b) {
                     return mean_all(hadamard(normalize_rows(a), b));
                   })});
  cases.push_back({"pick", simple([](Var<double> a, Var<double>) { return pick(a, 5); })});

  cases.push_back({"relu", [](uint64_t seed) {
                     Rng rng(seed);
                     auto a = param(away_from(random_tensor<double>({3, 4}, rng), 0.2), "a");
                     NamedParams<double> ps{{"a", a}};
                     return check_gradients(ps, [&]() { return mean_all(relu(a)); }).max_rel_err;
                   }});
  cases.push_back({"abs", [](uint64_t seed) {
                     Rng rng(seed);
                     auto a = param(away_from(random_tensor<double>({3, 4}, rng), 0.2), "a");
                     NamedParams<double> ps{{"a", a}};
                     return check_gradients(ps, [&]() { return mean_all(abs_op(a)); }).max_rel_err;
                   }});
  cases.push_back({"log", [](uint64_t seed) {
                     Rng rng(seed);
                     auto t = random_tensor<double>({3, 4}, rng);
                     for (int64_t i = 0; i < t.numel(); ++i) t[i] = std::abs(t[i]) + 0.5;
                     auto a = param(t, "a");
                     NamedParams<double> ps{{"a", a}};
                     return check_gradients(ps, [&]() { return mean_all(log_op(a)); }).max_rel_err;
                   }});
  cases.push_back({"matmul", [](uint64_t seed) {
                     Rng rng(seed);
                     auto a = param(random_tensor<double>({3, 4}, rng), "a");
                     auto b = param(random_tensor<double>({4, 2}, rng), "b");
                     NamedParams<double> ps{{"a", a}, {"b", b}};
                     return check_gradients(ps, [&]() { return mean_all(square(matmul(a, b))); }).max_rel_err;
                   }});
  cases.push_back({"add_rowvec", [](uint64_t seed) {
                     Rng rng(seed);
                     auto a = param(random_tensor<double>({3, 4}, rng), "a");
                     auto b = param(random_tensor<double>({4}, rng), "b");
                     NamedParams<double> ps{{"a", a}, {"b", b}};
                     return check_gradients(ps, [&]() { return mean_all(square(add_rowvec(a, b))); }).max_rel_err;
                   }});
  cases.push_back({"stack_scalars", [](uint64_t seed) {
                     Rng rng(seed);
                     auto a = param(random_tensor<double>({3, 4}, rng), "a");
                     NamedParams<double> ps{{"a", a}};
                     auto build = [&]() {
                       std::vector<Var<double>> xs{pick(a, 0), pick(a, 5), square(pick(a, 7))};
                       return mean_all(square(stack_scalars(xs)));
                     };
                     return check_gradients(ps, build).max_rel_err;
                   }});
  cases.push_back({"cosine_similarity", [](uint64_t seed) {
                     Rng rng(seed);
                     auto a = param(random_tensor<double>({5}, rng), "a");
                     auto b = param(random_tensor<double>({5}, rng), "b");
                     NamedParams<double> ps{{"a", a}, {"b", b}};
                     return check_gradients(ps, [&]() { return cosine_similarity(a, b); }).max_rel_err;
                   }});
  cases.push_back({"cross_entropy_logits", [](uint64_t seed) {
                     Rng rng(seed);
                     auto a = param(random_tensor<double>({6}, rng, 2.0), "a");
                     NamedParams<double> ps{{"a", a}};
                     return check_gradients(ps, [&]() { return cross_entropy_logits(a, 2); }).max_rel_err;
                   }});

  for (const auto& c : cases) {
    for (uint64_t seed = 1; seed <= 5; ++seed) {
      double err = c.run(seed);
      CHECK_MESSAGE(err <= 1e-4, c.name << " seed " << seed << " rel err " << err);
    }
  }
}

TEST_CASE("cross entropy on exact probabilities") {
  // softmax of (0,0) is exactly one half per class; loss is ln 2
  auto logits = constant(Tensor<double>({2}, {0.0, 0.0}));
  auto l = cross_entropy_logits(logits, 0);
  CHECK(l->value[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("graph evaluation is deterministic") {
  auto run = []() {
    Rng rng(77);
    auto a = constant(random_tensor<float>({6, 6}, rng));
    auto b = constant(random_tensor<float>({6, 6}, rng));
    auto y = mean_all(square(layernorm_rows(matmul(tanh_op(a), softmax(b)))));
    return y->value[0];
  };
  float v1 = run();
  float v2 = run();
  CHECK(std::memcmp(&v1, &v2, sizeof(float)) == 0);
}

TEST_CASE("no-grad mode builds no graph") {
  auto x = param(Tensor<double>::scalar(3.0), "x");
  NoGradGuard ng;
  auto y = square(x);
  CHECK_FALSE(y->requires_grad);
  CHECK(y->parents.empty());
}

TEST_CASE("adam first step follows the bias-corrected rule") {
  for (double g : {0.3, -2.0, 1e-4}) {
    auto p = param(Tensor<float>::scalar(1.0f), "p");
    CosineSchedule<float> sched{0.1f, 0.001f, 10};
    Adam<float> opt({{"p", p}}, sched);
    p->ensure_grad()[0] = static_cast<float>(g);
    opt.step();
    double expect = 1.0 - 0.1 * g / (std::abs(g) + 1e-8);
    CHECK(p->value[0] == doctest::Approx(expect).epsilon(1e-4));
  }
}

TEST_CASE("cosine schedule endpoints") {
  CosineSchedule<float> s{0.2f, 0.01f, 100};
  CHECK(s.at(0) == doctest::Approx(0.2f));
  CHECK(s.at(100) == doctest::Approx(0.01f));
  CHECK(s.at(50) == doctest::Approx(0.5f * (0.2f + 0.01f)));
  for (int t = 0; t <= 100; t += 7) {
    CHECK(s.at(t) <= 0.2f + 1e-7f);
    CHECK(s.at(t) >= 0.01f - 1e-7f);
  }
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  auto p = param(Tensor<float>({3}, {1.f, 2.f, 3.f}), "p");
  p->ensure_grad();  // allocated, all zero
  Adam<float> opt({{"p", p}}, CosineSchedule<float>{0.1f, 0.01f, 10});
  opt.step();
  CHECK(p->value[0] == 1.f);
  CHECK(p->value[1] == 2.f);
  CHECK(p->value[2] == 3.f);
}

TEST_CASE("optimizer step before backward is a contract error") {
  auto p = param(Tensor<float>({3}), "weights");
  Adam<float> opt({{"weights", p}}, CosineSchedule<float>{0.1f, 0.01f, 10});
  try {
    opt.step();
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("weights") != std::string::npos);
  }
}

TEST_CASE("adam converges on a quadratic") {
  auto p = param(Tensor<float>::scalar(4.0f), "p");
  Adam<float> opt({{"p", p}}, CosineSchedule<float>{0.2f, 0.001f, 200});
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    auto loss = square(p);
    backward(loss);
    opt.step();
  }
  CHECK(std::abs(p->value[0]) < 0.05f);
}
