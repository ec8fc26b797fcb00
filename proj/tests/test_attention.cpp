#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "core/attention.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace rlfolio;
using rlfolio::testing::attention_2d_oracle;
using rlfolio::testing::gradcheck;
using rlfolio::testing::relative_logits_oracle;
using rlfolio::testing::skew_lower_oracle;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool rg = true, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), rg);
}

}  // namespace

TEST_CASE("skew hand trace for N=2") {
  // pad -> [[0,a,b],[0,c,d]], reshape -> [[0,a],[b,0],[c,d]], drop -> [[b,0],[c,d]]
  Tensor t = Tensor::from({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});  // [[a,b],[c,d]]
  Tensor s = skew(t);
  CHECK(s.at({0, 0, 0}) == 2.0);  // b
  CHECK(s.at({0, 1, 0}) == 3.0);  // c
  CHECK(s.at({0, 1, 1}) == 4.0);  // d
}

TEST_CASE("skew of a single position is the identity") {
  Tensor t = Tensor::from({1, 1, 1}, {7.5});
  Tensor s = skew(t);
  CHECK(s.at({0, 0, 0}) == 7.5);
}

TEST_CASE("skew lower triangle equals the index-gather oracle exactly") {
  std::mt19937_64 rng(101);
  const std::int64_t b = 3, n = 5;
  Tensor t = random_tensor({b, n, n}, rng, false);
  Tensor s = skew(t);
  auto expected = skew_lower_oracle(t.values(), b, n);
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j <= i; ++j) {
        CHECK(s.at({bi, i, j}) == expected[(bi * n + i) * n + j]);
      }
    }
  }
}

TEST_CASE("skew rejects non-square trailing axes") {
  Tensor t = Tensor::zeros({2, 3, 4});
  CHECK_THROWS_AS(skew(t), std::invalid_argument);
}

TEST_CASE("relative_logits: diagonal uses the distance-0 embedding") {
  std::mt19937_64 rng(103);
  const std::int64_t h = 2, n = 4, dh = 3;
  Tensor q = random_tensor({h, n, dh}, rng, false);
  Tensor e = random_tensor({h, n, dh}, rng, false);
  Tensor p = relative_logits(q, e);
  for (std::int64_t a = 0; a < h; ++a) {
    for (std::int64_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::int64_t c = 0; c < dh; ++c) {
        dot += q.at({a, i, c}) * e.at({a, n - 1, c});
      }
      CHECK(p.at({a, i, i}) == doctest::Approx(dot).epsilon(1e-12));
    }
  }
}

TEST_CASE("relative_logits: zero embeddings annihilate") {
  std::mt19937_64 rng(104);
  Tensor q = random_tensor({2, 5, 4}, rng, false);
  Tensor e = Tensor::zeros({2, 5, 4});
  Tensor p = relative_logits(q, e);
  for (double v : p.values()) CHECK(v == 0.0);
}

TEST_CASE("relative_logits matches the pairwise-dot oracle") {
  std::mt19937_64 rng(105);
  const std::int64_t h = 2, n = 4, dh = 3;
  Tensor q = random_tensor({h, n, dh}, rng, false);
  Tensor e = random_tensor({h, n, dh}, rng, false);
  Tensor p = relative_logits(q, e);
  auto expected = relative_logits_oracle(q.values(), e.values(), h, n, dh);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(p.values()[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("relative_logits rejects head-count mismatch") {
  Tensor q = Tensor::zeros({2, 4, 3});
  Tensor e = Tensor::zeros({3, 4, 3});
  CHECK_THROWS_AS(relative_logits(q, e), std::invalid_argument);
}

TEST_CASE("attention_2d with a single cell reduces to the value projection") {
  std::mt19937_64 rng(107);
  RelAttentionConfig cfg{.model_dim = 6, .heads = 2, .time_len = 1, .height = 1};
  Tensor x = random_tensor({1, 1, 6}, rng, false);
  auto w = AttentionWeights::init(6, rng);
  auto emb = RelEmbeddings::init(cfg, rng);
  Tensor out = attention_2d(x, w, emb, cfg);
  Tensor expected = matmul(reshape(x, {1, 6}), w.wv);
  for (int i = 0; i < 6; ++i) {
    CHECK(out.values()[i] == doctest::Approx(expected.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("attention_2d equals the brute-force oracle on random instances") {
  std::mt19937_64 rng(109);
  for (int rep = 0; rep < 5; ++rep) {
    const std::int64_t l = 1 + static_cast<std::int64_t>(rng() % 5);
    const std::int64_t ht = 1 + static_cast<std::int64_t>(rng() % 4);
    const std::int64_t h = 1 + static_cast<std::int64_t>(rng() % 2);
    const std::int64_t d = h * (2 + static_cast<std::int64_t>(rng() % 3));
    RelAttentionConfig cfg{.model_dim = d, .heads = h, .time_len = l, .height = ht};
    Tensor x = random_tensor({l, ht, d}, rng, false);
    auto w = AttentionWeights::init(d, rng);
    auto emb = RelEmbeddings::init(cfg, rng);
    Tensor out = attention_2d(x, w, emb, cfg);
    auto expected = attention_2d_oracle(x.values(), w.wq.values(), w.wk.values(), w.wv.values(),
                                        emb.time.values(), emb.asset.values(), l, ht, d, h);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < expected.size(); ++i) {
      max_diff = std::max(max_diff, std::fabs(out.values()[i] - expected[i]));
    }
    CHECK(max_diff < 1e-10);
  }
}

TEST_CASE("attention rows sum to one") {
  std::mt19937_64 rng(113);
  RelAttentionConfig cfg{.model_dim = 8, .heads = 2, .time_len = 3, .height = 2};
  Tensor x = random_tensor({3, 2, 8}, rng, false, 2.0);
  auto w = AttentionWeights::init(8, rng);
  auto emb = RelEmbeddings::init(cfg, rng);
  // Rebuild the softmax input through the public pieces: with wv the identity
  // and all-ones value rows, each output element is the row sum of attention.
  Tensor ones = Tensor::full({3, 2, 8}, 1.0);
  AttentionWeights wid{w.wq, w.wk, Tensor::zeros({8, 8})};
  for (int i = 0; i < 8; ++i) wid.wv.values()[i * 8 + i] = 1.0;
  Tensor out = attention_2d(ones, {w.wq, w.wk, wid.wv}, emb, cfg);
  // x == ones makes every value vector all-ones, so outputs are exactly 1.
  for (double v : out.values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  (void)x;
}

TEST_CASE("zeroed embeddings reduce to plain scaled dot-product attention") {
  std::mt19937_64 rng(127);
  RelAttentionConfig cfg{.model_dim = 8, .heads = 2, .time_len = 4, .height = 3};
  Tensor x = random_tensor({4, 3, 8}, rng, false);
  auto w = AttentionWeights::init(8, rng);
  auto emb = RelEmbeddings::zeros(cfg);
  Tensor out = attention_2d(x, w, emb, cfg);
  auto expected = attention_2d_oracle(x.values(), w.wq.values(), w.wk.values(), w.wv.values(),
                                      emb.time.values(), emb.asset.values(), 4, 3, 8, 2);
  // The oracle with zero embeddings *is* plain scaled dot-product attention.
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(out.values()[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("attention_2d gradients match finite differences") {
  std::mt19937_64 rng(131);
  RelAttentionConfig cfg{.model_dim = 6, .heads = 2, .time_len = 3, .height = 2};
  Tensor x = random_tensor({3, 2, 6}, rng, true, 0.5);
  auto w = AttentionWeights::init(6, rng);
  auto emb = RelEmbeddings::init(cfg, rng);
  Tensor probe = random_tensor({3, 2, 6}, rng, false);
  auto res = gradcheck(
      [&]() { return reduce_sum(mul(attention_2d(x, w, emb, cfg), probe)); },
      {x, w.wq, w.wk, w.wv, emb.time, emb.asset});
  CHECK_MESSAGE(res.ok, res.detail);
}

TEST_CASE("attention_2d rejects shape mismatches") {
  std::mt19937_64 rng(137);
  RelAttentionConfig cfg{.model_dim = 8, .heads = 2, .time_len = 3, .height = 2};
  auto w = AttentionWeights::init(8, rng);
  auto emb = RelEmbeddings::init(cfg, rng);
  Tensor bad = Tensor::zeros({3, 3, 8});
  CHECK_THROWS_AS(attention_2d(bad, w, emb, cfg), std::invalid_argument);
  RelAttentionConfig bad_cfg{.model_dim = 7, .heads = 2, .time_len = 3, .height = 2};
  CHECK_THROWS_AS(bad_cfg.validate(), std::invalid_argument);
}
