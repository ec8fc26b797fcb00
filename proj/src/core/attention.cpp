#include "core/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace rlfolio {

void RelAttentionConfig::validate() const {
  if (model_dim <= 0 || heads <= 0 || time_len <= 0 || height <= 0) {
    throw std::invalid_argument("attention config: all extents must be positive");
  }
  if (model_dim % heads != 0) {
    throw std::invalid_argument("attention config: model_dim " + std::to_string(model_dim) +
                                " not divisible by heads " + std::to_string(heads));
  }
}

RelEmbeddings RelEmbeddings::init(const RelAttentionConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  RelEmbeddings e;
  e.time = Tensor::xavier({cfg.heads, cfg.time_len, cfg.head_dim()}, rng, true);
  e.asset = Tensor::xavier({cfg.heads, cfg.height, cfg.head_dim()}, rng, true);
  return e;
}

RelEmbeddings RelEmbeddings::zeros(const RelAttentionConfig& cfg) {
  cfg.validate();
  RelEmbeddings e;
  e.time = Tensor::zeros({cfg.heads, cfg.time_len, cfg.head_dim()}, true);
  e.asset = Tensor::zeros({cfg.heads, cfg.height, cfg.head_dim()}, true);
  return e;
}

AttentionWeights AttentionWeights::init(std::int64_t model_dim, std::mt19937_64& rng) {
  AttentionWeights w;
  w.wq = Tensor::xavier({model_dim, model_dim}, rng, true);
  w.wk = Tensor::xavier({model_dim, model_dim}, rng, true);
  w.wv = Tensor::xavier({model_dim, model_dim}, rng, true);
  return w;
}

Tensor skew(const Tensor& t) {
  if (!t.defined() || t.rank() != 3) {
    throw std::invalid_argument("skew: expected rank-3 input");
  }
  const std::int64_t b = t.dim(0), n = t.dim(1);
  if (t.dim(2) != n) {
    throw std::invalid_argument("skew: trailing axes must be square, got " +
                                shape_str(t.shape()));
  }
  Tensor padded = pad(t, 2, 1, 0);               // (B, N, N+1), zero column on the left
  Tensor folded = reshape(padded, {b, n + 1, n});
  return slice(folded, 1, 1, n);                 // drop the first row of each batch
}

namespace {

std::vector<std::int64_t> reversed_indices(std::int64_t n) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = n - 1 - i;
  return idx;
}

// q: (h, B, N, D_h), e: (h, N, D_h) -> (h, B, N, N) with
// out[a, b, i, j] = q[a, b, i, :] . e[a, (N-1) - |i-j|, :].
Tensor rel_logits_batched(const Tensor& q, const Tensor& e) {
  const std::int64_t h = q.dim(0), b = q.dim(1), n = q.dim(2), dh = q.dim(3);
  if (e.dim(0) != h) {
    throw std::invalid_argument("relative_logits: head-count mismatch: " + shape_str(q.shape()) +
                                " vs " + shape_str(e.shape()));
  }
  if (e.dim(1) != n || e.dim(2) != dh) {
    throw std::invalid_argument("relative_logits: embedding shape " + shape_str(e.shape()) +
                                " does not match queries " + shape_str(q.shape()));
  }
  Tensor et = reshape(permute(e, {0, 2, 1}), {h, 1, dh, n});  // (h, 1, D_h, N)

  // Forward pass covers j <= i.
  Tensor low = reshape(skew(reshape(matmul(q, et), {h * b, n, n})), {h, b, n, n});

  // Mirror pass on the index-reversed sequence covers j >= i.
  const auto rev = reversed_indices(n);
  Tensor qr = gather(q, 2, rev);
  Tensor up_rev = reshape(skew(reshape(matmul(qr, et), {h * b, n, n})), {h, b, n, n});
  Tensor up = gather(gather(up_rev, 2, rev), 3, rev);

  // Stitch the triangles; both agree on the diagonal (distance 0).
  std::vector<double> mlow(static_cast<std::size_t>(n * n), 0.0);
  std::vector<double> mup(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      (j <= i ? mlow : mup)[static_cast<std::size_t>(i * n + j)] = 1.0;
    }
  }
  Tensor mask_low = Tensor::from({n, n}, std::move(mlow));
  Tensor mask_up = Tensor::from({n, n}, std::move(mup));
  return add(mul(low, mask_low), mul(up, mask_up));
}

}  // namespace

Tensor relative_logits(const Tensor& q, const Tensor& e) {
  if (!q.defined() || !e.defined() || q.rank() != 3 || e.rank() != 3) {
    throw std::invalid_argument("relative_logits: expected rank-3 inputs");
  }
  const std::int64_t h = q.dim(0), n = q.dim(1), dh = q.dim(2);
  Tensor q4 = reshape(q, {h, 1, n, dh});
  return reshape(rel_logits_batched(q4, e), {h, n, n});
}

Tensor attention_2d(const Tensor& x, const AttentionWeights& w, const RelEmbeddings& emb,
                    const RelAttentionConfig& cfg) {
  cfg.validate();
  const std::int64_t l = cfg.time_len, ht = cfg.height, d = cfg.model_dim;
  const std::int64_t h = cfg.heads, dh = cfg.head_dim();
  if (!x.defined() || x.rank() != 3 || x.dim(0) != l || x.dim(1) != ht || x.dim(2) != d) {
    throw std::invalid_argument("attention_2d: input shape " +
                                (x.defined() ? shape_str(x.shape()) : std::string("(undefined)")) +
                                " does not match config (" + std::to_string(l) + ", " +
                                std::to_string(ht) + ", " + std::to_string(d) + ")");
  }
  for (const Tensor* wt : {&w.wq, &w.wk, &w.wv}) {
    if (wt->rank() != 2 || wt->dim(0) != d || wt->dim(1) != d) {
      throw std::invalid_argument("attention_2d: projection weights must be (" +
                                  std::to_string(d) + ", " + std::to_string(d) + "), got " +
                                  shape_str(wt->shape()));
    }
  }
  const std::int64_t cells = l * ht;

  Tensor xf = reshape(x, {cells, d});
  auto split_heads = [&](const Tensor& m) {
    return permute(reshape(m, {cells, h, dh}), {1, 0, 2});  // (h, cells, D_h)
  };
  Tensor q = split_heads(matmul(xf, w.wq));
  Tensor k = split_heads(matmul(xf, w.wk));
  Tensor v = split_heads(matmul(xf, w.wv));

  // Content term over all flattened cells.
  Tensor content = matmul(q, permute(k, {0, 2, 1}));  // (h, cells, cells)

  // Time-relative term: queries grouped per asset, distances over time rows.
  Tensor q_grid = reshape(q, {h, l, ht, dh});
  Tensor rel_time = rel_logits_batched(permute(q_grid, {0, 2, 1, 3}), emb.time);  // (h, H, L, L)
  // Asset-relative term: queries grouped per time row, distances over assets.
  Tensor rel_asset = rel_logits_batched(q_grid, emb.asset);  // (h, L, H, H)

  // Lift both to the (h, L, H, L, H) pairwise layout; the time term is
  // constant over the key's asset and the asset term over the key's time.
  Tensor content5 = reshape(content, {h, l, ht, l, ht});
  Tensor time5 = reshape(permute(rel_time, {0, 2, 1, 3}), {h, l, ht, l, 1});
  Tensor asset5 = reshape(rel_asset, {h, l, ht, 1, ht});
  Tensor logits = scalar_mul(add(add(content5, time5), asset5),
                             1.0 / std::sqrt(static_cast<double>(dh)));

  Tensor attn = softmax(reshape(logits, {h, cells, cells}));
  Tensor out = matmul(attn, v);                             // (h, cells, D_h)
  Tensor merged = reshape(permute(out, {1, 0, 2}), {cells, d});
  return reshape(merged, {l, ht, d});
}

}  // namespace rlfolio
