#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "core/checkpoint.hpp"
#include "core/tensor.hpp"
#include "gradcheck.hpp"

using namespace rlfolio;
using rlfolio::testing::gradcheck;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool rg = true, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), rg);
}

template <typename Fn>
bool throws_mentioning(Fn&& fn, const std::string& a, const std::string& b = "") {
  try {
    fn();
  } catch (const std::exception& e) {
    const std::string m = e.what();
    return m.find(a) != std::string::npos && (b.empty() || m.find(b) != std::string::npos);
  }
  return false;
}

}  // namespace

TEST_CASE("softmax of uniform logits is uniform") {
  Tensor x = Tensor::from({3}, {0.0, 0.0, 0.0});
  Tensor y = softmax(x);
  for (int i = 0; i < 3; ++i) CHECK(y.values()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax rows are nonnegative and sum to one") {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({4, 5, 6}, rng, false, 3.0);
  Tensor y = softmax(x);
  for (int r = 0; r < 20; ++r) {
    double s = 0.0;
    for (int j = 0; j < 6; ++j) {
      const double v = y.values()[r * 6 + j];
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("layer-norm of a constant vector is ~0 with unit gain") {
  Tensor x = Tensor::from({4}, {5.0, 5.0, 5.0, 5.0});
  Tensor gain = Tensor::full({4}, 1.0);
  Tensor bias = Tensor::zeros({4});
  Tensor y = layer_norm(x, gain, bias, 1e-5);
  for (int i = 0; i < 4; ++i) CHECK(std::fabs(y.values()[i]) < 1e-9);
}

TEST_CASE("matmul identity") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor i2 = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor c = matmul(a, i2);
  CHECK(c.values() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("matmul rejects mismatched inner dims naming both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK(throws_mentioning([&]() { matmul(a, b); }, "(2, 3)", "(4, 2)"));
}

TEST_CASE("add rejects incompatible shapes naming both") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 4});
  CHECK(throws_mentioning([&]() { add(a, b); }, "(2, 3)", "(2, 4)"));
}

TEST_CASE("checked mode rejects non-finite inputs") {
  set_finite_check(true);
  Tensor a = Tensor::from({2}, {1.0, std::nan("")});
  Tensor b = Tensor::from({2}, {1.0, 1.0});
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  set_finite_check(false);
  CHECK_NOTHROW(add(a, b));
}

TEST_CASE("backward: d(x*x)/dx = 2x") {
  Graph::current().clear();
  Tensor x = Tensor::scalar(3.0, true);
  Tensor y = mul(x, x);
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  Graph::current().clear();
}

TEST_CASE("backward: sum of softmax has zero gradient") {
  Graph::current().clear();
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({5}, rng, true, 2.0);
  Tensor y = reduce_sum(softmax(x));
  backward(y);
  for (double g : x.grad()) CHECK(std::fabs(g) < 1e-12);
  Graph::current().clear();
}

TEST_CASE("backward rejects non-scalar root") {
  Graph::current().clear();
  Tensor x = Tensor::zeros({2, 2}, true);
  Tensor y = add(x, x);
  CHECK_THROWS_AS(backward(y), std::invalid_argument);
  Graph::current().clear();
}

TEST_CASE("repeated backward without reset accumulates") {
  Graph::current().clear();
  Tensor x = Tensor::scalar(3.0, true);
  Tensor y = mul(x, x);
  backward(y);
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(12.0));
  Graph::current().clear();
}

TEST_CASE("matmul-relu-mean graph matches finite differences") {
  std::mt19937_64 rng(17);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 3}, rng);
  // keep preactivations away from the relu kink
  for (auto& v : a.values()) v += (v >= 0 ? 0.3 : -0.3);
  auto res = gradcheck([&]() { return reduce_mean(relu(matmul(a, b))); }, {a, b});
  CHECK_MESSAGE(res.ok, res.detail);
}

TEST_CASE("shared subexpression accumulates both contributions") {
  std::mt19937_64 rng(23);
  Tensor x = random_tensor({4}, rng);
  // y = sum(x*x + x*x) uses the same subexpression twice
  auto res = gradcheck(
      [&]() {
        Tensor s = mul(x, x);
        return reduce_sum(add(s, s));
      },
      {x});
  CHECK_MESSAGE(res.ok, res.detail);
}

TEST_CASE("primitive gradients match finite differences on randomized shapes") {
  std::mt19937_64 rng(31);

  SUBCASE("add/sub/mul with broadcasting") {
    Tensor a = random_tensor({2, 3, 1, 4}, rng);
    Tensor b = random_tensor({3, 2, 4}, rng);
    auto r1 = gradcheck([&]() { return reduce_sum(add(a, b)); }, {a, b});
    CHECK_MESSAGE(r1.ok, r1.detail);
    auto r2 = gradcheck([&]() { return reduce_sum(mul(a, b)); }, {a, b});
    CHECK_MESSAGE(r2.ok, r2.detail);
    auto r3 = gradcheck([&]() { return reduce_mean(sub(a, b)); }, {a, b});
    CHECK_MESSAGE(r3.ok, r3.detail);
  }

  SUBCASE("batched matmul with broadcast batch dims") {
    Tensor a = random_tensor({2, 3, 4, 5}, rng);
    Tensor b = random_tensor({2, 1, 5, 2}, rng);
    auto r = gradcheck([&]() { return reduce_mean(matmul(a, b)); }, {a, b});
    CHECK_MESSAGE(r.ok, r.detail);
  }

  SUBCASE("reshape, permute, concat, slice, pad") {
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor b = random_tensor({2, 2, 4}, rng);
    auto r = gradcheck(
        [&]() {
          Tensor c = concat({a, b}, 1);                 // (2,5,4)
          Tensor p = permute(c, {2, 0, 1});             // (4,2,5)
          Tensor s = slice(p, 2, 1, 3);                 // (4,2,3)
          Tensor q = pad(s, 0, 1, 2);                   // (7,2,3)
          Tensor f = reshape(q, {7, 6});
          return reduce_mean(mul(f, f));
        },
        {a, b});
    CHECK_MESSAGE(r.ok, r.detail);
  }

  SUBCASE("softmax, tanh, sigmoid, relu, scalar_mul") {
    Tensor a = random_tensor({3, 4}, rng, true, 2.0);
    for (auto& v : a.values()) v += (v >= 0 ? 0.2 : -0.2);
    auto r = gradcheck(
        [&]() {
          Tensor s = softmax(a);
          Tensor t = tanh(scalar_mul(a, 0.7));
          Tensor g = sigmoid(a);
          Tensor rl = relu(a);
          return reduce_sum(add(add(mul(s, t), g), rl));
        },
        {a});
    CHECK_MESSAGE(r.ok, r.detail);
  }

  SUBCASE("layer_norm wrt input, gain and bias") {
    Tensor x = random_tensor({2, 3, 5}, rng, true, 2.0);
    Tensor gain = random_tensor({5}, rng);
    Tensor bias = random_tensor({5}, rng);
    auto r = gradcheck([&]() { return reduce_mean(mul(layer_norm(x, gain, bias), x)); },
                       {x, gain, bias});
    CHECK_MESSAGE(r.ok, r.detail);
  }

  SUBCASE("reductions over an axis and gather") {
    Tensor a = random_tensor({3, 4, 2}, rng);
    auto r = gradcheck(
        [&]() {
          Tensor m = reduce_mean(a, 1);                       // (3,2)
          Tensor s = reduce_sum(a, 0);                        // (4,2)
          Tensor g = gather(a, 1, {3, 0, 0, 2});              // (3,4,2) with repeats
          return add(add(reduce_sum(mul(m, m)), reduce_sum(s)), reduce_mean(g));
        },
        {a});
    CHECK_MESSAGE(r.ok, r.detail);
  }
}

TEST_CASE("reshape round trip is the identity on values") {
  std::mt19937_64 rng(41);
  Tensor a = random_tensor({3, 4, 5}, rng, false);
  Tensor b = reshape(reshape(a, {60}), {3, 4, 5});
  CHECK(b.values() == a.values());
}

TEST_CASE("adam: zero gradient is a fixed point") {
  Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  ParameterSet ps;
  ps.add("p", p);
  AdamOptimizer opt(ps, 0.1);
  const auto before = p.values();
  opt.step();
  CHECK(p.values() == before);
}

TEST_CASE("adam: bias-corrected first step moves by ~lr") {
  Tensor p = Tensor::scalar(1.0, true);
  p.grad()[0] = 1.0;
  ParameterSet ps;
  ps.add("p", p);
  AdamOptimizer opt(ps, 0.1);
  opt.step();
  CHECK(p.values()[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adam: identical gradients move monotonically against them") {
  Tensor p = Tensor::scalar(1.0, true);
  ParameterSet ps;
  ps.add("p", p);
  AdamOptimizer opt(ps, 0.05);
  p.grad()[0] = 2.0;
  opt.step();
  const double after1 = p.values()[0];
  p.grad()[0] = 2.0;
  opt.step();
  const double after2 = p.values()[0];
  CHECK(after1 < 1.0);
  CHECK(after2 < after1);
}

TEST_CASE("adam rejects a parameter without gradients by name") {
  Tensor p = Tensor::zeros({2}, false);
  ParameterSet ps;
  ps.add("frozen_weight", p);
  AdamOptimizer opt(ps, 0.1);
  CHECK(throws_mentioning([&]() { opt.step(); }, "frozen_weight"));
}

TEST_CASE("checkpoint round trip preserves names, shapes and values") {
  std::mt19937_64 rng(53);
  std::vector<NamedTensor> tensors;
  tensors.push_back({"alpha/w", random_tensor({3, 4}, rng, false)});
  tensors.push_back({"alpha/b", random_tensor({4}, rng, false)});
  tensors.push_back({"beta/m", random_tensor({2, 2, 2}, rng, false)});
  const std::string base = "/tmp/rlfolio_ckpt_test";
  save_checkpoint(base, tensors);
  auto entries = load_checkpoint(base);
  REQUIRE(entries.size() == 3);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    CHECK(entries[i].name == tensors[i].name);
    CHECK(entries[i].shape == tensors[i].tensor.shape());
    CHECK(entries[i].values == tensors[i].tensor.values());
  }
  std::remove((base + ".manifest").c_str());
  std::remove((base + ".blob").c_str());
}

TEST_CASE("no-grad scope suppresses recording") {
  Graph::current().clear();
  Tensor x = Tensor::scalar(2.0, true);
  {
    NoGradScope ng;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(Graph::current().num_steps() == 0);
}
