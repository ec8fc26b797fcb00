#include "core/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "core/checkpoint.hpp"
#include "core/env.hpp"
#include "core/util.hpp"

namespace rlfolio {

namespace {

const char* kFeatureNames[5] = {"open", "high", "low", "close", "volume"};

bool looks_like_iso_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u}) {
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
  }
  return true;
}

// Days-since-epoch to Y-M-D (civil calendar), for synthetic date axes.
std::string civil_date(std::int64_t days_since_epoch) {
  std::int64_t z = days_since_epoch + 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const std::int64_t doe = z - era * 146097;
  const std::int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = yoe + era * 400;
  const std::int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const std::int64_t mp = (5 * doy + 2) / 153;
  const std::int64_t d = doy - (153 * mp + 2) / 5 + 1;
  const std::int64_t m = mp < 10 ? mp + 3 : mp - 9;
  const std::int64_t year = m <= 2 ? y + 1 : y;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04lld-%02lld-%02lld", static_cast<long long>(year),
                static_cast<long long>(m), static_cast<long long>(d));
  return std::string(buf);
}

}  // namespace

std::int64_t AlignedDataset::day_index(const std::string& date) const {
  auto it = std::lower_bound(dates.begin(), dates.end(), date);
  if (it == dates.end() || *it != date) return -1;
  return static_cast<std::int64_t>(it - dates.begin());
}

AssetSeries load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open csv: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty csv: " + path);
  if (trim(line) != "date,open,high,low,close,volume") {
    throw std::runtime_error(path + ": expected header date,open,high,low,close,volume");
  }

  struct Row {
    std::string date;
    double o, h, l, c, v;
  };
  std::vector<Row> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split(trim(line), ',');
    if (fields.size() != 6) {
      throw std::runtime_error(path + ": malformed row at line " + std::to_string(line_no));
    }
    Row r;
    r.date = trim(fields[0]);
    if (!looks_like_iso_date(r.date)) {
      throw std::runtime_error(path + ": bad date at line " + std::to_string(line_no));
    }
    try {
      r.o = std::stod(fields[1]);
      r.h = std::stod(fields[2]);
      r.l = std::stod(fields[3]);
      r.c = std::stod(fields[4]);
      r.v = std::stod(fields[5]);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ": malformed row at line " + std::to_string(line_no));
    }
    if (!(r.o > 0 && r.h > 0 && r.l > 0 && r.c > 0) || r.v < 0) {
      throw std::runtime_error(path + ": non-positive price or negative volume on " + r.date);
    }
    if (r.h < std::max(r.o, r.c) || r.l > std::min(r.o, r.c)) {
      throw std::runtime_error(path + ": inconsistent OHLC on " + r.date);
    }
    rows.push_back(std::move(r));
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.date < b.date; });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].date == rows[i - 1].date) {
      throw std::runtime_error(path + ": duplicate date " + rows[i].date);
    }
  }

  AssetSeries s;
  s.symbol = std::filesystem::path(path).stem().string();
  for (const auto& r : rows) {
    s.dates.push_back(r.date);
    s.open.push_back(r.o);
    s.high.push_back(r.h);
    s.low.push_back(r.l);
    s.close.push_back(r.c);
    s.volume.push_back(r.v);
  }
  return s;
}

void save_csv(const AssetSeries& series, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "date,open,high,low,close,volume\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    out << series.dates[i] << ',' << format_double(series.open[i]) << ','
        << format_double(series.high[i]) << ',' << format_double(series.low[i]) << ','
        << format_double(series.close[i]) << ',' << format_double(series.volume[i]) << '\n';
  }
  if (!out.good()) throw std::runtime_error("write failed: " + path);
}

AlignedDataset align_and_transform(const std::vector<AssetSeries>& series) {
  if (series.empty()) throw std::invalid_argument("align: no input series");

  // Calendar intersection.
  std::set<std::string> common(series[0].dates.begin(), series[0].dates.end());
  for (std::size_t i = 1; i < series.size(); ++i) {
    std::set<std::string> next;
    for (const auto& d : series[i].dates) {
      if (common.count(d)) next.insert(d);
    }
    common = std::move(next);
  }
  if (common.size() < 2) {
    throw std::invalid_argument("align: date intersection has fewer than 2 days");
  }
  std::vector<std::string> all_dates(common.begin(), common.end());
  const std::int64_t full_days = static_cast<std::int64_t>(all_dates.size());
  const std::int64_t m = static_cast<std::int64_t>(series.size());
  const std::int64_t cols = m + 1;

  // Full panel including the day that differencing will consume.
  std::array<std::vector<double>, 5> full_raw;
  for (auto& f : full_raw) f.assign(static_cast<std::size_t>(full_days * cols), 1.0);
  for (std::int64_t a = 0; a < m; ++a) {
    const auto& s = series[static_cast<std::size_t>(a)];
    std::map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < s.dates.size(); ++i) pos[s.dates[i]] = i;
    for (std::int64_t t = 0; t < full_days; ++t) {
      const std::size_t i = pos.at(all_dates[static_cast<std::size_t>(t)]);
      full_raw[kOpen][t * cols + a + 1] = s.open[i];
      full_raw[kHigh][t * cols + a + 1] = s.high[i];
      full_raw[kLow][t * cols + a + 1] = s.low[i];
      full_raw[kClose][t * cols + a + 1] = s.close[i];
      full_raw[kVolume][t * cols + a + 1] = s.volume[i];
    }
  }

  AlignedDataset out;
  for (const auto& s : series) out.symbols.push_back(s.symbol);
  out.dates.assign(all_dates.begin() + 1, all_dates.end());
  const std::int64_t days = full_days - 1;
  for (int f = 0; f < 5; ++f) {
    out.raw[f].assign(static_cast<std::size_t>(days * cols), 1.0);
    out.diff[f].assign(static_cast<std::size_t>(days * cols), 0.0);
    for (std::int64_t t = 0; t < days; ++t) {
      for (std::int64_t c = 0; c < cols; ++c) {
        const double cur = full_raw[f][(t + 1) * cols + c];
        const double prev = full_raw[f][t * cols + c];
        out.raw[f][t * cols + c] = cur;
        if (c == 0) continue;  // cash differences to exactly 0
        if (f == kVolume) {
          out.diff[f][t * cols + c] =
              std::log(std::max(cur, 1.0)) - std::log(std::max(prev, 1.0));
        } else {
          out.diff[f][t * cols + c] = std::log(cur) - std::log(prev);
        }
      }
    }
  }

  // Per-asset spread series over the full calendar, first day dropped to align.
  out.spread.assign(static_cast<std::size_t>(days * cols), 0.0);
  for (std::int64_t a = 0; a < m; ++a) {
    std::vector<double> close_log(static_cast<std::size_t>(full_days));
    std::vector<double> eta(static_cast<std::size_t>(full_days));
    for (std::int64_t t = 0; t < full_days; ++t) {
      close_log[t] = std::log(full_raw[kClose][t * cols + a + 1]);
      eta[t] = 0.5 * (std::log(full_raw[kHigh][t * cols + a + 1]) +
                      std::log(full_raw[kLow][t * cols + a + 1]));
    }
    const auto d = estimate_spread(close_log, eta);
    for (std::int64_t t = 0; t < days; ++t) {
      out.spread[t * cols + a + 1] = d[static_cast<std::size_t>(t + 1)];
    }
  }
  return out;
}

std::vector<AssetSeries> synth_gbm(int num_assets, int num_days,
                                   const std::vector<double>& drift,
                                   const std::vector<double>& volatility, std::uint64_t seed) {
  if (num_assets < 1 || num_days < 1) {
    throw std::invalid_argument("synth_gbm: need at least 1 asset and 1 day");
  }
  if (drift.size() != static_cast<std::size_t>(num_assets) ||
      volatility.size() != static_cast<std::size_t>(num_assets)) {
    throw std::invalid_argument("synth_gbm: drift/volatility must have one entry per asset");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double intraday = 0.002;
  // 2000-01-03 in days since epoch.
  const std::int64_t start_day = 10959;

  std::vector<AssetSeries> out;
  out.reserve(static_cast<std::size_t>(num_assets));
  for (int a = 0; a < num_assets; ++a) {
    AssetSeries s;
    s.symbol = "SYN" + std::to_string(a);
    double log_close = std::log(100.0);
    double prev_close = 100.0;
    for (int t = 0; t < num_days; ++t) {
      if (t > 0) log_close += drift[a] + volatility[a] * normal(rng);
      const double close = std::exp(log_close);
      const double open = t == 0 ? close : prev_close;
      const double high = std::max(open, close) * (1.0 + intraday);
      const double low = std::min(open, close) * (1.0 - intraday);
      s.dates.push_back(civil_date(start_day + t));
      s.open.push_back(open);
      s.high.push_back(high);
      s.low.push_back(low);
      s.close.push_back(close);
      s.volume.push_back(1e6);
      prev_close = close;
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_dataset_cache(const AlignedDataset& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["symbols"] = data.symbols;
  meta["dates"] = data.dates;
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& [path, hash] : data.sources) {
    sources.push_back({{"path", path}, {"hash", hash}});
  }
  meta["sources"] = sources;
  write_text_file(dir + "/dataset.json", meta.dump(2) + "\n");

  const std::int64_t days = data.num_days(), cols = data.columns();
  std::vector<NamedTensor> tensors;
  for (int f = 0; f < 5; ++f) {
    tensors.push_back({std::string("raw/") + kFeatureNames[f],
                       Tensor::from({days, cols}, data.raw[f])});
    tensors.push_back({std::string("diff/") + kFeatureNames[f],
                       Tensor::from({days, cols}, data.diff[f])});
  }
  tensors.push_back({"spread", Tensor::from({days, cols}, data.spread)});
  save_checkpoint(dir + "/matrices", tensors);
}

AlignedDataset load_dataset_cache(const std::string& dir) {
  nlohmann::json meta = nlohmann::json::parse(read_text_file(dir + "/dataset.json"));
  AlignedDataset data;
  data.symbols = meta.at("symbols").get<std::vector<std::string>>();
  data.dates = meta.at("dates").get<std::vector<std::string>>();
  if (meta.contains("sources")) {
    for (const auto& s : meta["sources"]) {
      data.sources.emplace_back(s.at("path").get<std::string>(),
                                s.at("hash").get<std::string>());
    }
  }
  auto entries = load_checkpoint(dir + "/matrices");
  const Shape expected{data.num_days(), data.columns()};
  auto take = [&](const std::string& name) {
    const auto& e = find_entry(entries, name);
    if (e.shape != expected) throw std::runtime_error("dataset cache: bad shape for " + name);
    return e.values;
  };
  for (int f = 0; f < 5; ++f) {
    data.raw[f] = take(std::string("raw/") + kFeatureNames[f]);
    data.diff[f] = take(std::string("diff/") + kFeatureNames[f]);
  }
  data.spread = take("spread");
  return data;
}

AlignedDataset load_csv_dir(const std::string& dir) {
  std::vector<std::string> paths;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") {
      paths.push_back(entry.path().string());
    }
  }
  if (paths.empty()) throw std::runtime_error("no .csv files under " + dir);
  std::sort(paths.begin(), paths.end());
  std::vector<AssetSeries> series;
  std::vector<std::pair<std::string, std::string>> sources;
  for (const auto& p : paths) {
    series.push_back(load_csv(p));
    sources.emplace_back(std::filesystem::path(p).filename().string(), fnv1a64_file_hex(p));
  }
  AlignedDataset data = align_and_transform(series);
  data.sources = std::move(sources);
  return data;
}

}  // namespace rlfolio
