#pragma once

#include <cstdint>
#include <deque>
#include <limits>
#include <mutex>
#include <random>
#include <vector>

#include "core/observation.hpp"

namespace rlfolio {

/// One experience record. worker_id / episode_index tag the producing episode
/// so every stored transition is attributable to a run.
struct Transition {
  ObservationWindow s;
  ActionVector a;
  double r = 0.0;
  ObservationWindow s_next;
  bool terminal = false;
  int worker_id = 0;
  std::int64_t episode_index = 0;
};

class ReplayBuffer;
class HMemory;

/// Draws batch_size transitions; each draw independently comes from HMemory
/// with probability rho (uniform over its stored transitions) and from the
/// main buffer otherwise. An empty HMemory routes everything to the buffer;
/// an empty buffer is an error.
std::vector<Transition> sample(const ReplayBuffer& buffer, const HMemory* hmem,
                               std::size_t batch_size, double rho, std::mt19937_64& rng);

/// Ring buffer with uniform sampling. Appends and reads are mutually atomic;
/// multiple producers and one consumer are supported.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const;
  Transition get(std::size_t index) const;  // copy, oldest first
  std::size_t capacity() const { return capacity_; }

 private:
  friend std::vector<Transition> sample(const ReplayBuffer&, const HMemory*, std::size_t, double,
                                        std::mt19937_64&);
  mutable std::mutex mu_;
  std::deque<Transition> items_;
  std::size_t capacity_;
};

/// Record-renewal episode store: keeps an episode only when its total reward
/// strictly exceeds the best seen so far. Bounded; oldest record evicted.
class HMemory {
 public:
  explicit HMemory(std::size_t max_episodes = 50);

  bool offer_episode(std::vector<Transition> episode, double episodic_reward);
  double best_reward() const;
  std::size_t num_episodes() const;
  std::size_t num_transitions() const;

 private:
  friend std::vector<Transition> sample(const ReplayBuffer&, const HMemory*, std::size_t, double,
                                        std::mt19937_64&);
  mutable std::mutex mu_;
  std::deque<std::vector<Transition>> episodes_;
  std::size_t transition_count_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
  std::size_t max_episodes_;
};

}  // namespace rlfolio
