#include "core/replay.hpp"

#include <stdexcept>

namespace rlfolio {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay buffer: capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  std::lock_guard<std::mutex> lock(mu_);
  items_.push_back(std::move(t));
  if (items_.size() > capacity_) items_.pop_front();
}

std::size_t ReplayBuffer::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return items_.size();
}

Transition ReplayBuffer::get(std::size_t index) const {
  std::lock_guard<std::mutex> lock(mu_);
  if (index >= items_.size()) throw std::out_of_range("replay buffer: index out of range");
  return items_[index];
}

HMemory::HMemory(std::size_t max_episodes) : max_episodes_(max_episodes) {
  if (max_episodes == 0) throw std::invalid_argument("hmemory: capacity must be positive");
}

bool HMemory::offer_episode(std::vector<Transition> episode, double episodic_reward) {
  if (episode.empty()) throw std::invalid_argument("hmemory: empty episode");
  std::lock_guard<std::mutex> lock(mu_);
  if (!(episodic_reward > best_)) return false;
  best_ = episodic_reward;
  transition_count_ += episode.size();
  episodes_.push_back(std::move(episode));
  if (episodes_.size() > max_episodes_) {
    transition_count_ -= episodes_.front().size();
    episodes_.pop_front();
  }
  return true;
}

double HMemory::best_reward() const {
  std::lock_guard<std::mutex> lock(mu_);
  return best_;
}

std::size_t HMemory::num_episodes() const {
  std::lock_guard<std::mutex> lock(mu_);
  return episodes_.size();
}

std::size_t HMemory::num_transitions() const {
  std::lock_guard<std::mutex> lock(mu_);
  return transition_count_;
}

std::vector<Transition> sample(const ReplayBuffer& buffer, const HMemory* hmem,
                               std::size_t batch_size, double rho, std::mt19937_64& rng) {
  // Lock order: buffer before hmemory, everywhere.
  std::unique_lock<std::mutex> buffer_lock(buffer.mu_);
  std::unique_lock<std::mutex> hmem_lock;
  if (hmem != nullptr) hmem_lock = std::unique_lock<std::mutex>(hmem->mu_);
  if (buffer.items_.empty()) throw std::invalid_argument("sample: main buffer is empty");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<Transition> out;
  out.reserve(batch_size);
  const bool has_h = hmem != nullptr && hmem->transition_count_ > 0;
  for (std::size_t i = 0; i < batch_size; ++i) {
    if (has_h && coin(rng) < rho) {
      std::uniform_int_distribution<std::size_t> pick(0, hmem->transition_count_ - 1);
      std::size_t k = pick(rng);
      for (const auto& ep : hmem->episodes_) {
        if (k < ep.size()) {
          out.push_back(ep[k]);
          break;
        }
        k -= ep.size();
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, buffer.items_.size() - 1);
      out.push_back(buffer.items_[pick(rng)]);
    }
  }
  return out;
}

}  // namespace rlfolio
