#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace rlfolio {

/// One asset's daily bars, date-sorted, validated at ingestion:
/// high >= max(open, close), low <= min(open, close), prices > 0, volume >= 0.
struct AssetSeries {
  std::string symbol;
  std::vector<std::string> dates;  // ISO-8601, strictly increasing
  std::vector<double> open, high, low, close, volume;

  std::size_t size() const { return dates.size(); }
};

/// Calendar-aligned panel over cash + m assets. Column 0 is cash (raw 1,
/// differenced 0). Day 0 corresponds to the second intersection date: the
/// first is consumed by differencing so raw and differenced rows align 1:1.
struct AlignedDataset {
  std::vector<std::string> symbols;  // risky assets only
  std::vector<std::string> dates;    // length T
  std::array<std::vector<double>, 5> raw;   // each T x (m+1), row-major
  std::array<std::vector<double>, 5> diff;  // log-differenced
  std::vector<double> spread;               // T x (m+1); column 0 = 0
  std::vector<std::pair<std::string, std::string>> sources;  // (path, content hash)

  std::int64_t num_days() const { return static_cast<std::int64_t>(dates.size()); }
  std::int64_t columns() const { return static_cast<std::int64_t>(symbols.size()) + 1; }
  std::int64_t num_assets() const { return static_cast<std::int64_t>(symbols.size()); }

  double raw_at(int feature, std::int64_t day, std::int64_t col) const {
    return raw[feature][static_cast<std::size_t>(day * columns() + col)];
  }
  double diff_at(int feature, std::int64_t day, std::int64_t col) const {
    return diff[feature][static_cast<std::size_t>(day * columns() + col)];
  }
  double spread_at(std::int64_t day, std::int64_t col) const {
    return spread[static_cast<std::size_t>(day * columns() + col)];
  }
  std::int64_t day_index(const std::string& date) const;  // -1 when absent
};

/// Strict CSV ingestion: header `date,open,high,low,close,volume`, ISO dates,
/// rejected with the line number (malformed) or date (inconsistent bars).
AssetSeries load_csv(const std::string& path);
void save_csv(const AssetSeries& series, const std::string& path);

/// Intersects calendars, log-differences all five features (volume floored at
/// 1 before the log), drops the first differenced row, precomputes spreads.
AlignedDataset align_and_transform(const std::vector<AssetSeries>& series);

/// Geometric Brownian closes with open = previous close and high/low pushed
/// outward by a small intraday factor. Deterministic per seed.
std::vector<AssetSeries> synth_gbm(int num_assets, int num_days,
                                   const std::vector<double>& drift,
                                   const std::vector<double>& volatility, std::uint64_t seed);

/// Dataset cache: a directory holding a JSON manifest (symbols, date range)
/// plus per-asset matrices in the checkpoint blob format.
void save_dataset_cache(const AlignedDataset& data, const std::string& dir);
AlignedDataset load_dataset_cache(const std::string& dir);

/// Loads and aligns every *.csv under dir (sorted by filename); records
/// per-file content hashes for run manifests.
AlignedDataset load_csv_dir(const std::string& dir);

}  // namespace rlfolio
