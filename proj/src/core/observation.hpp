#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "core/tensor.hpp"

namespace rlfolio {

/// Portfolio weights over cash + m assets; nonnegative, summing to 1.
using ActionVector = std::vector<double>;

bool is_simplex(const ActionVector& a, double tol = 1e-9);

enum Feature { kOpen = 0, kHigh = 1, kLow = 2, kClose = 3, kVolume = 4 };

/// One state: five log-differenced feature planes over the window_len most
/// recent periods (row 0 = most recent) across cash + m asset columns
/// (column 0 = cash, identically 0 after differencing).
struct ObservationWindow {
  std::int64_t window_len = 0;  // rows
  std::int64_t columns = 0;     // cash + m assets
  std::array<std::vector<double>, 5> planes;  // each window_len x columns, row-major

  double at(Feature f, std::int64_t row, std::int64_t col) const {
    return planes[f][static_cast<std::size_t>(row * columns + col)];
  }

  /// Packs the planes into a (window_len, columns, 5) constant tensor, the
  /// per-cell feature layout the encoder consumes.
  Tensor features() const {
    if (window_len <= 0 || columns <= 0) {
      throw std::invalid_argument("observation: empty window");
    }
    const std::size_t n = static_cast<std::size_t>(window_len * columns);
    for (const auto& p : planes) {
      if (p.size() != n) {
        throw std::invalid_argument("observation: feature plane size mismatch");
      }
    }
    std::vector<double> packed(n * 5);
    for (std::size_t cell = 0; cell < n; ++cell) {
      for (int f = 0; f < 5; ++f) packed[cell * 5 + f] = planes[f][cell];
    }
    return Tensor::from({window_len, columns, 5}, std::move(packed));
  }
};

inline bool is_simplex(const ActionVector& a, double tol) {
  double s = 0.0;
  for (double w : a) {
    if (w < -tol || w > 1.0 + tol) return false;
    s += w;
  }
  return a.size() >= 1 && std::abs(s - 1.0) <= tol;
}

}  // namespace rlfolio
