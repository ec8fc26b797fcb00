#pragma once

#include <random>
#include <string>
#include <vector>

#include "core/observation.hpp"
#include "core/replay.hpp"
#include "core/transformer.hpp"

namespace rlfolio {

struct OUNoiseParams {
  double theta = 0.13;
  double mu = 0.0;
  double sigma = 0.2;
  double dt = 1.0;
};

/// Ornstein-Uhlenbeck process over the action components. State persists
/// across steps within an episode and resets to mu at episode start.
class OUNoise {
 public:
  OUNoise(std::int64_t dim, OUNoiseParams params, std::uint64_t seed);

  void reset();
  const std::vector<double>& advance();
  const std::vector<double>& state() const { return x_; }
  const OUNoiseParams& params() const { return params_; }

 private:
  OUNoiseParams params_;
  std::vector<double> x_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
};

/// Policy network: encoder trunk plus a per-asset linear head on the most
/// recent time row, softmaxed over the asset logits.
struct Actor {
  EncoderStack trunk;
  Linear head;  // D -> 1

  Actor() = default;
  Actor(const EncoderConfig& cfg, std::mt19937_64& rng);

  Tensor forward(const ObservationWindow& obs) const;  // simplex tensor, shape (columns)
  ActionVector act(const ObservationWindow& obs) const;
  void collect(const std::string& prefix, ParameterSet& out) const;
};

/// Value network: independent trunk; pooled most-recent-row state features
/// concatenated with the projected action, scored by a two-layer head.
struct Critic {
  EncoderStack trunk;
  Linear action_proj;  // columns -> D
  Linear value1;       // 2D -> D
  Linear value2;       // D -> 1

  Critic() = default;
  Critic(const EncoderConfig& cfg, std::mt19937_64& rng);

  Tensor forward(const ObservationWindow& obs, const Tensor& action) const;  // scalar
  double value(const ObservationWindow& obs, const ActionVector& action) const;
  void collect(const std::string& prefix, ParameterSet& out) const;
};

/// target <- tau * online + (1 - tau) * target, elementwise over every
/// parameter. Shape congruence is checked per tensor.
void soft_update(const ParameterSet& online, ParameterSet& target, double tau);

/// DDPG agent: online actor/critic, their target copies, and two Adam
/// optimizers. Updates require exclusive access; acting on a snapshot is
/// concurrent-safe.
class DdpgAgent {
 public:
  DdpgAgent(const EncoderConfig& cfg, double lr_actor, double lr_critic, std::uint64_t seed);

  ActionVector act(const ObservationWindow& obs) const;
  ActionVector act_explore(const ObservationWindow& obs, OUNoise& noise) const;

  /// G = r + (1 - terminal) * gamma * Q'(s', mu'(s')), evaluated without
  /// recording gradients.
  double td_target(const Transition& t, double gamma) const;

  /// Minimizes the mean squared TD error over the batch with one Adam step on
  /// the critic; returns the pre-step loss.
  double critic_update(const std::vector<Transition>& batch, const std::vector<double>& targets);

  /// Ascends J = mean Q(s, mu(s)) with one Adam step on the actor only;
  /// critic parameters are left untouched. Returns the pre-step J.
  double actor_update(const std::vector<Transition>& batch);

  void soft_update_targets(double tau);

  const EncoderConfig& config() const { return cfg_; }
  Actor& actor() { return actor_; }
  const Actor& actor() const { return actor_; }
  Critic& critic() { return critic_; }
  const Actor& target_actor() const { return target_actor_; }
  const Critic& target_critic() const { return target_critic_; }

  ParameterSet actor_params() const;
  ParameterSet critic_params() const;
  ParameterSet target_actor_params() const;
  ParameterSet target_critic_params() const;

  void save_checkpoint(const std::string& base_path) const;
  static DdpgAgent load_checkpoint(const std::string& base_path, double lr_actor,
                                   double lr_critic);

 private:
  EncoderConfig cfg_;
  Actor actor_, target_actor_;
  Critic critic_, target_critic_;
  AdamOptimizer actor_opt_, critic_opt_;
};

/// Greedy policy snapshot: just the actor parameters, detached from the
/// learner so exploration workers never observe a mid-update state.
struct ActorSnapshot {
  EncoderConfig cfg;
  std::vector<std::vector<double>> values;
  std::uint64_t version = 0;
};

ActorSnapshot snapshot_actor(const DdpgAgent& agent, std::uint64_t version);
void load_snapshot(const ActorSnapshot& snap, Actor& into);

}  // namespace rlfolio
