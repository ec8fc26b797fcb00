#pragma once

#include <random>

#include "core/tensor.hpp"

namespace rlfolio {

/// Geometry of one 2D relative-attention block: model width D split across h
/// heads over a (time_len x height) grid of cells.
struct RelAttentionConfig {
  std::int64_t model_dim = 128;  // D
  std::int64_t heads = 8;        // h
  std::int64_t time_len = 50;    // L
  std::int64_t height = 10;      // H, cash + assets

  std::int64_t head_dim() const { return model_dim / heads; }
  void validate() const;
};

/// Learned relative-position embeddings, one row per distance and head.
/// Row r of an N-row table encodes distance (N-1) - r, so the last row is
/// distance 0.
struct RelEmbeddings {
  Tensor time;   // (h, L, D_h)
  Tensor asset;  // (h, H, D_h)

  static RelEmbeddings init(const RelAttentionConfig& cfg, std::mt19937_64& rng);
  static RelEmbeddings zeros(const RelAttentionConfig& cfg);
};

struct AttentionWeights {
  Tensor wq, wk, wv;  // (D, D) each

  static AttentionWeights init(std::int64_t model_dim, std::mt19937_64& rng);
};

/// The pad-reshape-drop procedure that turns a (queries x distance) product
/// into (queries x keys) layout. Input T[b, i, k] = q_i . e_k with column k
/// encoding relative distance k - (N-1); output S[b, i, j] = T[b, i, j-i+N-1]
/// for j <= i. Entries above the diagonal are unspecified here and must be
/// supplied by a mirror pass.
Tensor skew(const Tensor& t);

/// P[a, i, j] = Q[a, i, :] . E[a, (N-1) - |i - j|, :] via two skew passes
/// (forward for j <= i, index-reversed for j > i).
Tensor relative_logits(const Tensor& q, const Tensor& e);

/// Multi-head attention over the flattened L*H cells with separate relative
/// terms along the time and asset axes. x is (L, H, D); output is (L, H, D).
Tensor attention_2d(const Tensor& x, const AttentionWeights& w, const RelEmbeddings& emb,
                    const RelAttentionConfig& cfg);

}  // namespace rlfolio
