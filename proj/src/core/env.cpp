#include "core/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "core/util.hpp"

namespace rlfolio {

std::vector<double> estimate_spread(const std::vector<double>& close_log,
                                    const std::vector<double>& eta, int window) {
  if (close_log.size() != eta.size()) {
    throw std::invalid_argument("estimate_spread: series lengths differ");
  }
  const std::size_t n = close_log.size();
  if (n < 2) throw std::invalid_argument("estimate_spread: need at least 2 observations");
  // z_t = (log c_t - eta_t)(log c_t - eta_{t+1}), defined up to n-2.
  std::vector<double> z(n - 1);
  for (std::size_t t = 0; t + 1 < n; ++t) {
    z[t] = (close_log[t] - eta[t]) * (close_log[t] - eta[t + 1]);
  }
  std::vector<double> d(n, 0.0);
  double running = 0.0;
  for (std::size_t t = 0; t + 1 < n; ++t) {
    running += z[t];
    if (t >= static_cast<std::size_t>(window)) running -= z[t - window];
    const std::size_t count = std::min(t + 1, static_cast<std::size_t>(window));
    const double mean = running / static_cast<double>(count);
    d[t] = 2.0 * std::sqrt(std::max(0.0, mean));
  }
  d[n - 1] = d[n - 2];  // no eta_{t+1} on the final day; carry the estimate
  return d;
}

void rebalance(PortfolioLedger& ledger, const ActionVector& action,
               const std::vector<double>& closes, const std::vector<double>& spreads,
               double fee_rate, double slippage_coef) {
  const std::size_t m = ledger.shares.size();
  if (action.size() != m + 1 || closes.size() != m + 1 || spreads.size() != m + 1) {
    throw std::invalid_argument("rebalance: action/closes/spreads must cover cash + " +
                                std::to_string(m) + " assets");
  }
  if (closes[0] != 1.0) throw std::invalid_argument("rebalance: cash close must be 1");
  for (std::size_t i = 1; i <= m; ++i) {
    if (!(closes[i] > 0.0)) {
      throw std::invalid_argument("rebalance: non-positive close for asset " + std::to_string(i));
    }
  }
  if (!is_simplex(action)) {
    throw std::invalid_argument("rebalance: action is not on the simplex");
  }

  double p_prev = ledger.cash;
  for (std::size_t i = 0; i < m; ++i) {
    p_prev += closes[i + 1] * static_cast<double>(ledger.shares[i]);
  }

  std::vector<double> target_value(m);
  for (std::size_t i = 0; i < m; ++i) target_value[i] = p_prev * action[i + 1];

  std::vector<std::int64_t> new_shares(m);
  double cost = 0.0, cash = 0.0;
  while (true) {
    double invested = 0.0;
    cost = 0.0;
    bool all_zero = true;
    for (std::size_t i = 0; i < m; ++i) {
      new_shares[i] = static_cast<std::int64_t>(std::floor(target_value[i] / closes[i + 1]));
      if (new_shares[i] < 0) new_shares[i] = 0;
      if (new_shares[i] != 0) all_zero = false;
      const double traded =
          closes[i + 1] * std::fabs(static_cast<double>(new_shares[i] - ledger.shares[i]));
      cost += traded * (fee_rate + slippage_coef * spreads[i + 1]);
      invested += closes[i + 1] * static_cast<double>(new_shares[i]);
    }
    cash = p_prev - invested - cost;
    if (cash >= 0.0) break;
    if (all_zero) {
      throw std::invalid_argument(
          "rebalance: infeasible even at zero shares; prices or spreads are corrupt");
    }
    for (auto& v : target_value) v *= 0.999;
  }

  ledger.shares = new_shares;
  ledger.cash = cash;
  ledger.last_cost = cost;
  double p = cash;
  for (std::size_t i = 0; i < m; ++i) {
    p += closes[i + 1] * static_cast<double>(new_shares[i]);
  }
  ledger.value = p;
}

double sortino_reward(const std::vector<double>& returns, double floor_eps, double cap) {
  if (returns.empty()) return 0.0;
  double mean = 0.0, downsq = 0.0;
  for (double r : returns) {
    mean += r;
    const double neg = std::min(r, 0.0);
    downsq += neg * neg;
  }
  mean /= static_cast<double>(returns.size());
  const double downside = std::sqrt(downsq / static_cast<double>(returns.size()));
  if (downside < floor_eps) {
    return std::clamp(mean / floor_eps, -cap, cap);
  }
  return mean / downside;
}

MarketEnv::MarketEnv(const AlignedDataset& data, EnvConfig cfg) : data_(data), cfg_(cfg) {
  if (cfg_.window_len < 1 || cfg_.max_episode_len < 1) {
    throw std::invalid_argument("env: window_len and max_episode_len must be positive");
  }
  if (data_.num_days() < cfg_.window_len + 1) {
    throw std::invalid_argument("env: dataset has " + std::to_string(data_.num_days()) +
                                " days, need at least " + std::to_string(cfg_.window_len + 1));
  }
  ledger_.shares.assign(static_cast<std::size_t>(data_.num_assets()), 0);
}

ObservationWindow MarketEnv::observation(std::int64_t day) const {
  if (day < first_admissible_day() || day >= data_.num_days()) {
    throw std::invalid_argument("env: day " + std::to_string(day) +
                                " leaves insufficient history for a window of " +
                                std::to_string(cfg_.window_len));
  }
  ObservationWindow obs;
  obs.window_len = cfg_.window_len;
  obs.columns = data_.columns();
  const std::int64_t cols = data_.columns();
  for (int f = 0; f < 5; ++f) {
    obs.planes[f].resize(static_cast<std::size_t>(cfg_.window_len * cols));
    for (std::int64_t r = 0; r < cfg_.window_len; ++r) {
      const std::int64_t src_day = day - r;  // row 0 = most recent
      for (std::int64_t c = 0; c < cols; ++c) {
        obs.planes[f][static_cast<std::size_t>(r * cols + c)] = data_.diff_at(f, src_day, c);
      }
    }
  }
  return obs;
}

std::vector<double> MarketEnv::closes(std::int64_t day) const {
  std::vector<double> c(static_cast<std::size_t>(data_.columns()));
  c[0] = 1.0;
  for (std::int64_t i = 1; i < data_.columns(); ++i) {
    c[static_cast<std::size_t>(i)] = data_.raw_at(kClose, day, i);
  }
  return c;
}

std::vector<double> MarketEnv::spreads(std::int64_t day) const {
  std::vector<double> d(static_cast<std::size_t>(data_.columns()), 0.0);
  if (cfg_.zero_cost) return d;
  for (std::int64_t i = 1; i < data_.columns(); ++i) {
    d[static_cast<std::size_t>(i)] = data_.spread_at(day, i);
  }
  return d;
}

double MarketEnv::holdings_value(std::int64_t day) const {
  double p = ledger_.cash;
  const auto c = closes(day);
  for (std::size_t i = 0; i < ledger_.shares.size(); ++i) {
    p += c[i + 1] * static_cast<double>(ledger_.shares[i]);
  }
  return p;
}

ObservationWindow MarketEnv::reset(std::int64_t start_day) {
  return reset(start_day, cfg_.initial_cash);
}

ObservationWindow MarketEnv::reset(std::int64_t start_day, double initial_cash) {
  if (start_day < first_admissible_day() || start_day > last_admissible_day()) {
    throw std::invalid_argument("env: start day " + std::to_string(start_day) +
                                " outside admissible range [" +
                                std::to_string(first_admissible_day()) + ", " +
                                std::to_string(last_admissible_day()) + "]");
  }
  ledger_.cash = initial_cash;
  std::fill(ledger_.shares.begin(), ledger_.shares.end(), 0);
  ledger_.value = initial_cash;
  ledger_.last_return = 0.0;
  ledger_.last_cost = 0.0;
  ledger_.episode_returns.clear();
  day_ = start_day;
  steps_taken_ = 0;
  active_ = true;
  return observation(day_);
}

MarketEnv::StepResult MarketEnv::step(const ActionVector& action) {
  if (!active_) throw std::logic_error("env: step after terminal");
  const double fee = cfg_.zero_cost ? 0.0 : cfg_.fee_rate;
  const double slip = cfg_.zero_cost ? 0.0 : cfg_.slippage_coef;

  // Value entering the step: current holdings at today's closes.
  const double p_start = holdings_value(day_);
  rebalance(ledger_, action, closes(day_), spreads(day_), fee, slip);
  ++day_;
  const double p_end = holdings_value(day_);
  ledger_.value = p_end;
  const double r = std::log(p_end) - std::log(p_start);
  ledger_.last_return = r;
  ledger_.episode_returns.push_back(r);

  StepResult result;
  result.reward = sortino_reward(ledger_.episode_returns, cfg_.reward_floor, cfg_.reward_cap);
  ++steps_taken_;
  result.terminal = steps_taken_ >= cfg_.max_episode_len || day_ >= data_.num_days() - 1;
  if (result.terminal) active_ = false;
  result.obs = observation(day_);
  if (!cfg_.trace_path.empty()) trace_step(action, result.reward);
  return result;
}

void MarketEnv::trace_step(const ActionVector& action, double reward) {
  std::ofstream out(cfg_.trace_path, std::ios::app);
  if (!out) throw std::runtime_error("env: cannot append trace to " + cfg_.trace_path);
  if (!trace_header_written_) {
    out << "day";
    for (std::size_t i = 0; i < action.size(); ++i) out << ",action_" << i;
    out << ",cash";
    for (std::size_t i = 1; i <= ledger_.shares.size(); ++i) out << ",shares_" << i;
    out << ",cost,value,reward\n";
    trace_header_written_ = true;
  }
  out << (day_ - 1);
  for (double a : action) out << ',' << format_double(a);
  out << ',' << format_double(ledger_.cash);
  for (auto s : ledger_.shares) out << ',' << s;
  out << ',' << format_double(ledger_.last_cost) << ',' << format_double(ledger_.value) << ','
      << format_double(reward) << '\n';
}

}  // namespace rlfolio
