#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/data.hpp"
#include "core/observation.hpp"

namespace rlfolio {

/// Proportional bid-ask spread estimated from daily close/high/low log-prices:
/// d_t = 2 sqrt(max(0, E[(log c_t - eta_t)(log c_t - eta_{t+1})])), where
/// eta_t is the midpoint of the high/low log-prices and the expectation is a
/// trailing mean over `window` days. Negative covariances clamp to zero.
std::vector<double> estimate_spread(const std::vector<double>& close_log,
                                    const std::vector<double>& eta, int window = 30);

/// Share ledger: integer holdings per risky asset, real-valued cash, and the
/// episode's return history. No shorting, no leverage.
struct PortfolioLedger {
  double cash = 0.0;                 // s[0], currency units
  std::vector<std::int64_t> shares;  // risky assets, s[1..m]
  double value = 0.0;                // p = c . s
  double last_return = 0.0;
  double last_cost = 0.0;
  std::vector<double> episode_returns;
};

/// One rebalance at the given closes: integer share targets via floor
/// division, fee + half-spread cost on traded value, remainder to cash.
/// Infeasible targets (costs exceeding the cash remainder) shrink by repeated
/// proportional reduction; still infeasible at zero shares is an error.
void rebalance(PortfolioLedger& ledger, const ActionVector& action,
               const std::vector<double>& closes, const std::vector<double>& spreads,
               double fee_rate, double slippage_coef);

struct EnvConfig {
  std::int64_t window_len = 50;
  std::int64_t max_episode_len = 50;
  double initial_cash = 100000.0;
  double fee_rate = 0.002;       // 20 basis points
  double slippage_coef = 0.5;    // half the proportional spread
  bool zero_cost = false;
  double reward_floor = 1e-8;    // downside-deviation floor
  double reward_cap = 10.0;
  std::string trace_path;        // append-only per-step CSV when set
};

/// The portfolio MDP: observations are trailing log-differenced windows,
/// actions are simplex weights executed as integer-share rebalances at the
/// current closes, rewards are the episode-to-date Sortino ratio of log
/// returns. Single-owner; share the dataset, not the environment.
class MarketEnv {
 public:
  MarketEnv(const AlignedDataset& data, EnvConfig cfg);

  struct StepResult {
    ObservationWindow obs;
    double reward = 0.0;
    bool terminal = false;
  };

  ObservationWindow reset(std::int64_t start_day);
  ObservationWindow reset(std::int64_t start_day, double initial_cash);
  StepResult step(const ActionVector& action);

  ObservationWindow observation(std::int64_t day) const;
  const PortfolioLedger& ledger() const { return ledger_; }
  std::int64_t day() const { return day_; }
  bool episode_active() const { return active_; }
  std::int64_t num_assets() const { return data_.num_assets(); }

  std::int64_t first_admissible_day() const { return cfg_.window_len - 1; }
  std::int64_t last_admissible_day() const { return data_.num_days() - 2; }

  std::vector<double> closes(std::int64_t day) const;   // includes cash at [0] = 1
  std::vector<double> spreads(std::int64_t day) const;  // zeros under zero_cost

 private:
  double holdings_value(std::int64_t day) const;
  void trace_step(const ActionVector& action, double reward);

  const AlignedDataset& data_;
  EnvConfig cfg_;
  PortfolioLedger ledger_;
  std::int64_t day_ = 0;
  std::int64_t steps_taken_ = 0;
  bool active_ = false;
  bool trace_header_written_ = false;
};

/// Episode-to-date Sortino: mean(returns) / sqrt(mean(min(r, 0)^2)), with the
/// mean divided by `floor_eps` and capped to +/- cap when the downside
/// deviation degenerates.
double sortino_reward(const std::vector<double>& returns, double floor_eps = 1e-8,
                      double cap = 10.0);

}  // namespace rlfolio
