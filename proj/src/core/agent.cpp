#include "core/agent.hpp"

#include <cmath>
#include <stdexcept>

#include "core/checkpoint.hpp"

namespace rlfolio {

OUNoise::OUNoise(std::int64_t dim, OUNoiseParams params, std::uint64_t seed)
    : params_(params), x_(static_cast<std::size_t>(dim), params.mu), rng_(seed) {
  if (dim <= 0) throw std::invalid_argument("ou noise: dimension must be positive");
}

void OUNoise::reset() {
  std::fill(x_.begin(), x_.end(), params_.mu);
  normal_.reset();
}

const std::vector<double>& OUNoise::advance() {
  const double sdt = std::sqrt(params_.dt);
  for (auto& x : x_) {
    x += params_.theta * (params_.mu - x) * params_.dt + params_.sigma * sdt * normal_(rng_);
  }
  return x_;
}

Actor::Actor(const EncoderConfig& cfg, std::mt19937_64& rng)
    : trunk(cfg, rng), head(cfg.model_dim, 1, rng) {}

Tensor Actor::forward(const ObservationWindow& obs) const {
  Tensor enc = trunk.encode(obs);  // (L, H, D)
  Tensor recent = reshape(slice(enc, 0, 0, 1), {trunk.cfg.columns, trunk.cfg.model_dim});
  Tensor logits = reshape(head.forward(recent), {trunk.cfg.columns});
  return softmax(logits);
}

ActionVector Actor::act(const ObservationWindow& obs) const {
  NoGradScope ng;
  return forward(obs).values();
}

void Actor::collect(const std::string& prefix, ParameterSet& out) const {
  trunk.collect(prefix + ".trunk", out);
  head.collect(prefix + ".head", out);
}

Critic::Critic(const EncoderConfig& cfg, std::mt19937_64& rng)
    : trunk(cfg, rng),
      action_proj(cfg.columns, cfg.model_dim, rng),
      value1(2 * cfg.model_dim, cfg.model_dim, rng),
      value2(cfg.model_dim, 1, rng) {}

Tensor Critic::forward(const ObservationWindow& obs, const Tensor& action) const {
  const std::int64_t d = trunk.cfg.model_dim;
  const std::int64_t cols = trunk.cfg.columns;
  if (action.size() != cols) {
    throw std::invalid_argument("critic: action size " + std::to_string(action.size()) +
                                " does not match asset count " + std::to_string(cols));
  }
  Tensor enc = trunk.encode(obs);
  Tensor recent = reshape(slice(enc, 0, 0, 1), {cols, d});
  Tensor pooled = reduce_mean(recent, 0);  // (D)
  Tensor aproj = reshape(action_proj.forward(reshape(action, {1, cols})), {d});
  Tensor joint = reshape(concat({pooled, aproj}, 0), {1, 2 * d});
  Tensor hidden = relu(value1.forward(joint));
  return reshape(value2.forward(hidden), {1});
}

double Critic::value(const ObservationWindow& obs, const ActionVector& action) const {
  NoGradScope ng;
  Tensor a = Tensor::from({static_cast<std::int64_t>(action.size())}, action);
  return forward(obs, a).item();
}

void Critic::collect(const std::string& prefix, ParameterSet& out) const {
  trunk.collect(prefix + ".trunk", out);
  action_proj.collect(prefix + ".action_proj", out);
  value1.collect(prefix + ".value1", out);
  value2.collect(prefix + ".value2", out);
}

void soft_update(const ParameterSet& online, ParameterSet& target, double tau) {
  if (online.size() != target.size()) {
    throw std::invalid_argument("soft_update: parameter count mismatch");
  }
  for (std::size_t i = 0; i < online.size(); ++i) {
    const auto& src = online[i].tensor;
    auto& dst = target[i].tensor;
    if (src.shape() != dst.shape()) {
      throw std::invalid_argument("soft_update: shape mismatch at " + online[i].name + ": " +
                                  shape_str(src.shape()) + " vs " + shape_str(dst.shape()));
    }
    auto& tv = dst.values();
    const auto& sv = src.values();
    for (std::size_t j = 0; j < tv.size(); ++j) {
      tv[j] = tau * sv[j] + (1.0 - tau) * tv[j];
    }
  }
}

DdpgAgent::DdpgAgent(const EncoderConfig& cfg, double lr_actor, double lr_critic,
                     std::uint64_t seed)
    : cfg_(cfg),
      actor_(),
      target_actor_(),
      critic_(),
      target_critic_(),
      actor_opt_(ParameterSet{}, lr_actor),
      critic_opt_(ParameterSet{}, lr_critic) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  actor_ = Actor(cfg_, rng);
  critic_ = Critic(cfg_, rng);
  target_actor_ = Actor(cfg_, rng);
  target_critic_ = Critic(cfg_, rng);
  // Targets start as exact copies of their online counterparts.
  ParameterSet ta = target_actor_params();
  copy_values(actor_params(), ta);
  ParameterSet tc = target_critic_params();
  copy_values(critic_params(), tc);
  actor_opt_ = AdamOptimizer(actor_params(), lr_actor);
  critic_opt_ = AdamOptimizer(critic_params(), lr_critic);
}

ParameterSet DdpgAgent::actor_params() const {
  ParameterSet ps;
  actor_.collect("actor", ps);
  return ps;
}
ParameterSet DdpgAgent::critic_params() const {
  ParameterSet ps;
  critic_.collect("critic", ps);
  return ps;
}
ParameterSet DdpgAgent::target_actor_params() const {
  ParameterSet ps;
  target_actor_.collect("target_actor", ps);
  return ps;
}
ParameterSet DdpgAgent::target_critic_params() const {
  ParameterSet ps;
  target_critic_.collect("target_critic", ps);
  return ps;
}

ActionVector DdpgAgent::act(const ObservationWindow& obs) const { return actor_.act(obs); }

ActionVector DdpgAgent::act_explore(const ObservationWindow& obs, OUNoise& noise) const {
  ActionVector a = actor_.act(obs);
  const auto& x = noise.advance();
  if (x.size() != a.size()) {
    throw std::invalid_argument("act_explore: noise dimension mismatch");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = std::min(1.0, std::max(0.0, a[i] + x[i]));
    sum += a[i];
  }
  if (sum <= 0.0) {
    std::fill(a.begin(), a.end(), 1.0 / static_cast<double>(a.size()));
  } else {
    for (auto& w : a) w /= sum;
  }
  return a;
}

double DdpgAgent::td_target(const Transition& t, double gamma) const {
  if (t.terminal) return t.r;
  NoGradScope ng;
  Tensor next_action = target_actor_.forward(t.s_next);
  const double q = target_critic_.forward(t.s_next, next_action).item();
  return t.r + gamma * q;
}

double DdpgAgent::critic_update(const std::vector<Transition>& batch,
                                const std::vector<double>& targets) {
  if (batch.empty()) throw std::invalid_argument("critic_update: empty batch");
  if (batch.size() != targets.size()) {
    throw std::invalid_argument("critic_update: batch/target size mismatch");
  }
  Graph::current().clear();
  critic_opt_.zero_grad();
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tensor a = Tensor::from({static_cast<std::int64_t>(batch[i].a.size())}, batch[i].a);
    Tensor q = critic_.forward(batch[i].s, a);
    Tensor err = sub(Tensor::scalar(targets[i]), q);
    total = add(total, mul(err, err));
  }
  Tensor loss = scalar_mul(total, 1.0 / static_cast<double>(batch.size()));
  const double loss_value = loss.item();
  backward(loss);
  Graph::current().clear();
  critic_opt_.step();
  return loss_value;
}

double DdpgAgent::actor_update(const std::vector<Transition>& batch) {
  if (batch.empty()) throw std::invalid_argument("actor_update: empty batch");
  Graph::current().clear();
  actor_opt_.zero_grad();
  // Critic grads accumulate along the composite path; they are discarded, the
  // optimizer below only steps actor parameters.
  critic_opt_.zero_grad();
  Tensor total = Tensor::scalar(0.0);
  for (const auto& t : batch) {
    Tensor a = actor_.forward(t.s);
    total = add(total, critic_.forward(t.s, a));
  }
  Tensor objective = scalar_mul(total, 1.0 / static_cast<double>(batch.size()));
  const double j_value = objective.item();
  Tensor loss = scalar_mul(objective, -1.0);  // ascend J
  backward(loss);
  Graph::current().clear();
  actor_opt_.step();
  critic_opt_.zero_grad();
  return j_value;
}

void DdpgAgent::soft_update_targets(double tau) {
  ParameterSet ta = target_actor_params();
  soft_update(actor_params(), ta, tau);
  ParameterSet tc = target_critic_params();
  soft_update(critic_params(), tc, tau);
}

void DdpgAgent::save_checkpoint(const std::string& base_path) const {
  std::vector<NamedTensor> tensors;
  // Model geometry rides along as a meta tensor so evaluation can rebuild the
  // networks from the checkpoint alone.
  tensors.push_back({"meta/config",
                     Tensor::from({8}, {static_cast<double>(cfg_.layers),
                                        static_cast<double>(cfg_.heads),
                                        static_cast<double>(cfg_.model_dim),
                                        static_cast<double>(cfg_.ffn_dim),
                                        static_cast<double>(cfg_.window_len),
                                        static_cast<double>(cfg_.columns), cfg_.gate_bias_init,
                                        cfg_.sinusoidal_time_encoding ? 1.0 : 0.0})});
  for (const auto& group :
       {actor_params(), critic_params(), target_actor_params(), target_critic_params()}) {
    for (const auto& nt : group) tensors.push_back(nt);
  }
  auto dump_moments = [&tensors](const AdamOptimizer& opt, const std::string& prefix) {
    tensors.push_back({prefix + "/step",
                       Tensor::scalar(static_cast<double>(opt.step_count()))});
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
      const auto& shape = opt.params()[i].tensor.shape();
      tensors.push_back({prefix + "/" + opt.params()[i].name + ".m",
                         Tensor::from(shape, opt.first_moment(i))});
      tensors.push_back({prefix + "/" + opt.params()[i].name + ".v",
                         Tensor::from(shape, opt.second_moment(i))});
    }
  };
  dump_moments(actor_opt_, "adam_actor");
  dump_moments(critic_opt_, "adam_critic");
  rlfolio::save_checkpoint(base_path, tensors);
}

DdpgAgent DdpgAgent::load_checkpoint(const std::string& base_path, double lr_actor,
                                     double lr_critic) {
  auto entries = rlfolio::load_checkpoint(base_path);
  const auto& meta = find_entry(entries, "meta/config").values;
  if (meta.size() != 8) throw std::runtime_error("checkpoint: malformed meta/config");
  EncoderConfig cfg;
  cfg.layers = static_cast<std::int64_t>(meta[0]);
  cfg.heads = static_cast<std::int64_t>(meta[1]);
  cfg.model_dim = static_cast<std::int64_t>(meta[2]);
  cfg.ffn_dim = static_cast<std::int64_t>(meta[3]);
  cfg.window_len = static_cast<std::int64_t>(meta[4]);
  cfg.columns = static_cast<std::int64_t>(meta[5]);
  cfg.gate_bias_init = meta[6];
  cfg.sinusoidal_time_encoding = meta[7] != 0.0;

  DdpgAgent agent(cfg, lr_actor, lr_critic, 0);
  auto load_group = [&entries](ParameterSet ps) {
    for (auto& nt : ps) {
      const auto& e = find_entry(entries, nt.name);
      if (e.shape != nt.tensor.shape()) {
        throw std::runtime_error("checkpoint: shape mismatch at " + nt.name);
      }
      nt.tensor.values() = e.values;
    }
  };
  load_group(agent.actor_params());
  load_group(agent.critic_params());
  load_group(agent.target_actor_params());
  load_group(agent.target_critic_params());
  auto load_moments = [&entries](AdamOptimizer& opt, const std::string& prefix) {
    opt.set_step_count(
        static_cast<std::int64_t>(find_entry(entries, prefix + "/step").values[0]));
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
      const auto& name = opt.params()[i].name;
      opt.restore_state(i, find_entry(entries, prefix + "/" + name + ".m").values,
                        find_entry(entries, prefix + "/" + name + ".v").values);
    }
  };
  load_moments(agent.actor_opt_, "adam_actor");
  load_moments(agent.critic_opt_, "adam_critic");
  return agent;
}

ActorSnapshot snapshot_actor(const DdpgAgent& agent, std::uint64_t version) {
  ActorSnapshot snap;
  snap.cfg = agent.config();
  snap.version = version;
  ParameterSet ps;
  agent.actor().collect("actor", ps);
  snap.values.reserve(ps.size());
  for (const auto& nt : ps) snap.values.push_back(nt.tensor.values());
  return snap;
}

void load_snapshot(const ActorSnapshot& snap, Actor& into) {
  ParameterSet ps;
  into.collect("actor", ps);
  if (ps.size() != snap.values.size()) {
    throw std::invalid_argument("snapshot: parameter count mismatch");
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].tensor.values().size() != snap.values[i].size()) {
      throw std::invalid_argument("snapshot: size mismatch at " + ps[i].name);
    }
    ps[i].tensor.values() = snap.values[i];
  }
}

}  // namespace rlfolio
