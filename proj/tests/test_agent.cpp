#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "core/agent.hpp"
#include "gradcheck.hpp"

using namespace rlfolio;
using rlfolio::testing::gradcheck;

namespace {

EncoderConfig tiny_config() {
  return EncoderConfig{.layers = 1, .heads = 2, .model_dim = 8, .ffn_dim = 12,
                       .window_len = 3, .columns = 3};
}

ObservationWindow random_obs(const EncoderConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  ObservationWindow obs;
  obs.window_len = cfg.window_len;
  obs.columns = cfg.columns;
  for (auto& p : obs.planes) {
    p.resize(static_cast<std::size_t>(cfg.window_len * cfg.columns));
    for (auto& v : p) v = dist(rng);
  }
  // cash column carries no signal after differencing
  for (auto& p : obs.planes) {
    for (std::int64_t r = 0; r < cfg.window_len; ++r) p[r * cfg.columns] = 0.0;
  }
  return obs;
}

Transition make_transition(const EncoderConfig& cfg, std::uint64_t seed, double reward,
                           bool terminal = false) {
  Transition t;
  t.s = random_obs(cfg, seed);
  t.s_next = random_obs(cfg, seed + 1000);
  t.a.assign(static_cast<std::size_t>(cfg.columns), 1.0 / static_cast<double>(cfg.columns));
  t.r = reward;
  t.terminal = terminal;
  return t;
}

}  // namespace

TEST_CASE("act returns a simplex vector deterministically") {
  DdpgAgent agent(tiny_config(), 1e-3, 1e-3, 42);
  auto obs = random_obs(tiny_config(), 7);
  auto a1 = agent.act(obs);
  auto a2 = agent.act(obs);
  CHECK(a1 == a2);
  CHECK(is_simplex(a1));
  double sum = 0.0;
  for (double w : a1) {
    CHECK(w >= 0.0);
    CHECK(w <= 1.0);
    sum += w;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("zeroed actor head yields the uniform action") {
  DdpgAgent agent(tiny_config(), 1e-3, 1e-3, 42);
  std::fill(agent.actor().head.w.values().begin(), agent.actor().head.w.values().end(), 0.0);
  std::fill(agent.actor().head.b.values().begin(), agent.actor().head.b.values().end(), 0.0);
  auto a = agent.act(random_obs(tiny_config(), 9));
  for (double w : a) CHECK(w == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("act_explore with zero noise equals act") {
  DdpgAgent agent(tiny_config(), 1e-3, 1e-3, 42);
  OUNoise noise(3, {.theta = 0.13, .mu = 0.0, .sigma = 0.0, .dt = 1.0}, 1);
  auto obs = random_obs(tiny_config(), 11);
  auto greedy = agent.act(obs);
  auto explored = agent.act_explore(obs, noise);
  for (std::size_t i = 0; i < greedy.size(); ++i) {
    CHECK(explored[i] == doctest::Approx(greedy[i]).epsilon(1e-12));
  }
}

TEST_CASE("frozen OU process never changes state") {
  OUNoise noise(4, {.theta = 0.0, .mu = 0.0, .sigma = 0.0, .dt = 1.0}, 5);
  noise.advance();
  noise.advance();
  for (double x : noise.state()) CHECK(x == 0.0);
}

TEST_CASE("OU stationary variance approximates sigma^2 / (2 theta - theta^2)") {
  OUNoise noise(1, {.theta = 0.13, .mu = 0.0, .sigma = 0.2, .dt = 1.0}, 99);
  const int n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = noise.advance()[0];
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  const double expected = 0.04 / (2 * 0.13 - 0.13 * 0.13);
  CHECK(std::fabs(var - expected) / expected < 0.05);
}

TEST_CASE("exploration keeps actions on the simplex") {
  DdpgAgent agent(tiny_config(), 1e-3, 1e-3, 42);
  OUNoise noise(3, {}, 17);
  for (int ep = 0; ep < 3; ++ep) {
    noise.reset();
    for (int i = 0; i < 50; ++i) {
      auto a = agent.act_explore(random_obs(tiny_config(), 100 + i), noise);
      CHECK(is_simplex(a));
    }
  }
}

TEST_CASE("td_target: terminal transitions return the raw reward") {
  DdpgAgent agent(tiny_config(), 1e-3, 1e-3, 42);
  auto t = make_transition(tiny_config(), 21, 0.37, true);
  CHECK(agent.td_target(t, 0.9) == 0.37);
}

TEST_CASE("td_target: gamma = 0 is the myopic limit") {
  DdpgAgent agent(tiny_config(), 1e-3, 1e-3, 42);
  auto t = make_transition(tiny_config(), 23, -0.12);
  CHECK(agent.td_target(t, 0.0) == doctest::Approx(-0.12).epsilon(1e-12));
}

TEST_CASE("td_target bootstraps r + gamma * Q'(s', mu'(s'))") {
  DdpgAgent agent(tiny_config(), 1e-3, 1e-3, 42);
  auto t = make_transition(tiny_config(), 29, 0.1);
  const auto& ta = agent.target_actor();
  const auto& tc = agent.target_critic();
  NoGradScope ng;
  const double q = tc.forward(t.s_next, ta.forward(t.s_next)).item();
  CHECK(agent.td_target(t, 0.9) == doctest::Approx(0.1 + 0.9 * q).epsilon(1e-12));
}

TEST_CASE("targets start as exact copies of the online networks") {
  DdpgAgent agent(tiny_config(), 1e-3, 1e-3, 42);
  auto on = agent.actor_params();
  auto tp = agent.target_actor_params();
  REQUIRE(on.size() == tp.size());
  for (std::size_t i = 0; i < on.size(); ++i) {
    CHECK(on[i].tensor.values() == tp[i].tensor.values());
  }
  auto onc = agent.critic_params();
  auto tpc = agent.target_critic_params();
  for (std::size_t i = 0; i < onc.size(); ++i) {
    CHECK(onc[i].tensor.values() == tpc[i].tensor.values());
  }
}

TEST_CASE("critic_update: zero TD error means zero loss and no motion") {
  DdpgAgent agent(tiny_config(), 1e-3, 1e-3, 42);
  std::vector<Transition> batch{make_transition(tiny_config(), 31, 0.0),
                                make_transition(tiny_config(), 37, 0.0)};
  std::vector<double> targets;
  for (const auto& t : batch) {
    targets.push_back(agent.critic().value(t.s, t.a));
  }
  auto before = agent.critic_params();
  std::vector<std::vector<double>> snapshot;
  for (const auto& nt : before) snapshot.push_back(nt.tensor.values());
  const double loss = agent.critic_update(batch, targets);
  CHECK(loss == doctest::Approx(0.0).epsilon(1e-20));
  auto after = agent.critic_params();
  for (std::size_t i = 0; i < after.size(); ++i) {
    CHECK(after[i].tensor.values() == snapshot[i]);
  }
}

TEST_CASE("critic_update: unit squared error for N=1, G=1, Q=0") {
  DdpgAgent agent(tiny_config(), 1e-3, 1e-3, 42);
  // Zeroing the output layer pins Q to exactly 0.
  std::fill(agent.critic().value2.w.values().begin(), agent.critic().value2.w.values().end(),
            0.0);
  std::fill(agent.critic().value2.b.values().begin(), agent.critic().value2.b.values().end(),
            0.0);
  std::vector<Transition> batch{make_transition(tiny_config(), 41, 0.0)};
  const double loss = agent.critic_update(batch, {1.0});
  CHECK(loss == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("critic_update rejects an empty batch") {
  DdpgAgent agent(tiny_config(), 1e-3, 1e-3, 42);
  CHECK_THROWS_AS(agent.critic_update({}, {}), std::invalid_argument);
}

TEST_CASE("critic loss gradient matches finite differences") {
  DdpgAgent agent(tiny_config(), 1e-3, 1e-3, 43);
  auto t = make_transition(tiny_config(), 47, 0.2);
  const double target = 0.5;
  ParameterSet cps = agent.critic_params();
  std::vector<Tensor> leaves;
  for (const auto& nt : cps) leaves.push_back(nt.tensor);
  auto res = gradcheck(
      [&]() {
        Tensor a = Tensor::from({3}, t.a);
        Tensor err = sub(Tensor::scalar(target), agent.critic().forward(t.s, a));
        return mul(err, err);
      },
      leaves);
  CHECK_MESSAGE(res.ok, res.detail);
}

TEST_CASE("actor objective gradient matches finite differences") {
  DdpgAgent agent(tiny_config(), 1e-3, 1e-3, 44);
  auto t = make_transition(tiny_config(), 53, 0.0);
  ParameterSet aps = agent.actor_params();
  std::vector<Tensor> leaves;
  for (const auto& nt : aps) leaves.push_back(nt.tensor);
  auto res = gradcheck(
      [&]() { return agent.critic().forward(t.s, agent.actor().forward(t.s)); }, leaves);
  CHECK_MESSAGE(res.ok, res.detail);
}

TEST_CASE("actor_update leaves critic parameters bit-identical") {
  DdpgAgent agent(tiny_config(), 1e-3, 1e-3, 45);
  std::vector<Transition> batch{make_transition(tiny_config(), 59, 0.0),
                                make_transition(tiny_config(), 61, 0.0)};
  auto critic_before = agent.critic_params();
  std::vector<std::vector<double>> snapshot;
  for (const auto& nt : critic_before) snapshot.push_back(nt.tensor.values());
  agent.actor_update(batch);
  auto critic_after = agent.critic_params();
  for (std::size_t i = 0; i < critic_after.size(); ++i) {
    CHECK(critic_after[i].tensor.values() == snapshot[i]);
  }
}

TEST_CASE("critic_update leaves actor parameters bit-identical") {
  DdpgAgent agent(tiny_config(), 1e-3, 1e-3, 45);
  std::vector<Transition> batch{make_transition(tiny_config(), 67, 0.1)};
  auto actor_before = agent.actor_params();
  std::vector<std::vector<double>> snapshot;
  for (const auto& nt : actor_before) snapshot.push_back(nt.tensor.values());
  agent.critic_update(batch, {0.3});
  auto actor_after = agent.actor_params();
  for (std::size_t i = 0; i < actor_after.size(); ++i) {
    CHECK(actor_after[i].tensor.values() == snapshot[i]);
  }
}

TEST_CASE("action-blind critic freezes the actor") {
  DdpgAgent agent(tiny_config(), 1e-3, 1e-3, 46);
  // With the action projection zeroed, dQ/da = 0 and the chain rule kills the
  // actor gradient.
  std::fill(agent.critic().action_proj.w.values().begin(),
            agent.critic().action_proj.w.values().end(), 0.0);
  std::vector<Transition> batch{make_transition(tiny_config(), 71, 0.0)};
  auto before = agent.actor_params();
  std::vector<std::vector<double>> snapshot;
  for (const auto& nt : before) snapshot.push_back(nt.tensor.values());
  agent.actor_update(batch);
  auto after = agent.actor_params();
  for (std::size_t i = 0; i < after.size(); ++i) {
    CHECK(after[i].tensor.values() == snapshot[i]);
  }
}

TEST_CASE("soft_update is exact linear interpolation") {
  std::mt19937_64 rng(401);
  auto make_set = [&rng]() {
    ParameterSet ps;
    ps.add("a", Tensor::randn({3, 4}, rng, 1.0, true));
    ps.add("b", Tensor::randn({5}, rng, 1.0, true));
    return ps;
  };
  ParameterSet online = make_set();
  ParameterSet target = make_set();

  SUBCASE("tau = 1 copies exactly") {
    soft_update(online, target, 1.0);
    for (std::size_t i = 0; i < online.size(); ++i) {
      CHECK(target[i].tensor.values() == online[i].tensor.values());
    }
  }
  SUBCASE("tau = 0 leaves the target unchanged") {
    std::vector<std::vector<double>> snapshot;
    for (const auto& nt : target) snapshot.push_back(nt.tensor.values());
    soft_update(online, target, 0.0);
    for (std::size_t i = 0; i < target.size(); ++i) {
      CHECK(target[i].tensor.values() == snapshot[i]);
    }
  }
  SUBCASE("elementwise formula holds to 1e-15") {
    std::vector<std::vector<double>> before;
    for (const auto& nt : target) before.push_back(nt.tensor.values());
    const double tau = 0.15;
    soft_update(online, target, tau);
    for (std::size_t i = 0; i < target.size(); ++i) {
      for (std::size_t j = 0; j < before[i].size(); ++j) {
        const double expected = tau * online[i].tensor.values()[j] + (1 - tau) * before[i][j];
        CHECK(std::fabs(target[i].tensor.values()[j] - expected) <= 1e-15);
      }
    }
  }
}

TEST_CASE("soft_update: scalar worked example with tau = 0.15") {
  ParameterSet online, target;
  online.add("p", Tensor::scalar(1.0, true));
  target.add("p", Tensor::scalar(0.0, true));
  soft_update(online, target, 0.15);
  CHECK(target[0].tensor.values()[0] == doctest::Approx(0.15).epsilon(1e-15));
}

TEST_CASE("soft_update rejects shape mismatch") {
  ParameterSet online, target;
  online.add("p", Tensor::zeros({2}, true));
  target.add("p", Tensor::zeros({3}, true));
  CHECK_THROWS_AS(soft_update(online, target, 0.5), std::invalid_argument);
}

TEST_CASE("checkpoint round trip reproduces actions and optimizer state") {
  DdpgAgent agent(tiny_config(), 1e-3, 1e-3, 48);
  // Take a couple of optimizer steps so the moments are nontrivial.
  std::vector<Transition> batch{make_transition(tiny_config(), 73, 0.1)};
  agent.critic_update(batch, {0.5});
  agent.actor_update(batch);
  agent.soft_update_targets(0.15);

  const std::string base = "/tmp/rlfolio_agent_ckpt";
  agent.save_checkpoint(base);
  DdpgAgent loaded = DdpgAgent::load_checkpoint(base, 1e-3, 1e-3);
  auto obs = random_obs(tiny_config(), 79);
  CHECK(agent.act(obs) == loaded.act(obs));

  // Updates after reload follow the same trajectory (moments restored).
  auto t2 = make_transition(tiny_config(), 83, -0.2);
  const double l1 = agent.critic_update({t2}, {0.1});
  const double l2 = loaded.critic_update({t2}, {0.1});
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-15));
  CHECK(agent.act(obs) == loaded.act(obs));
  std::remove((base + ".manifest").c_str());
  std::remove((base + ".blob").c_str());
}
