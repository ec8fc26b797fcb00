#pragma once

#include <random>
#include <vector>

#include "core/attention.hpp"
#include "core/observation.hpp"
#include "core/tensor.hpp"

namespace rlfolio {

struct Linear {
  Tensor w;  // (in, out)
  Tensor b;  // (out)

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;  // (..., in) -> (..., out)
  void collect(const std::string& prefix, ParameterSet& out) const;
};

struct LayerNorm {
  Tensor gain, bias;  // (dim)
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(std::int64_t dim);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParameterSet& out) const;
};

/// GRU-structured gate replacing the residual connection:
///   r = sigmoid(W_r y + U_r x), z = sigmoid(W_z y + U_z x - b_g),
///   h = tanh(W_g y + U_g (r*x)), g(x, y) = (1-z)*x + z*h.
/// x is the residual stream, y the sublayer output. A positive b_g biases z
/// toward 0 so fresh layers start near the identity.
struct GatingUnit {
  Tensor wr, ur, wz, uz, wg, ug;  // (D, D)
  Tensor bg;                      // (D)

  GatingUnit() = default;
  GatingUnit(std::int64_t dim, double gate_bias_init, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, const Tensor& y) const;
  void collect(const std::string& prefix, ParameterSet& out) const;
};

/// Pre-normalized encoder layer: attention and feed-forward sublayers, each
/// entered through layer norm and merged back through a gating unit.
struct EncoderLayer {
  RelAttentionConfig cfg;
  AttentionWeights attn;
  RelEmbeddings emb;
  LayerNorm ln1, ln2;
  GatingUnit gate_attn, gate_ffn;
  Linear ffn1, ffn2;  // D -> F -> D

  EncoderLayer() = default;
  EncoderLayer(const RelAttentionConfig& cfg, std::int64_t ffn_dim, double gate_bias_init,
               std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;  // (L, H, D) -> (L, H, D)
  void collect(const std::string& prefix, ParameterSet& out) const;
};

struct EncoderConfig {
  std::int64_t layers = 3;
  std::int64_t heads = 8;
  std::int64_t model_dim = 128;
  std::int64_t ffn_dim = 512;
  std::int64_t window_len = 50;
  std::int64_t columns = 10;  // cash + m assets
  double gate_bias_init = 2.0;
  bool sinusoidal_time_encoding = true;

  RelAttentionConfig attention() const {
    return RelAttentionConfig{model_dim, heads, window_len, columns};
  }
  void validate() const;
};

/// Shared trunk: projects the 5 per-cell features to model width, adds a
/// sinusoidal encoding over the time axis, then applies the encoder layers.
struct EncoderStack {
  EncoderConfig cfg;
  Linear input_proj;      // 5 -> D
  Tensor time_encoding;   // (L, 1, D), constant
  std::vector<EncoderLayer> layers;

  EncoderStack() = default;
  EncoderStack(const EncoderConfig& cfg, std::mt19937_64& rng);

  /// Input embedding only: projection plus time encoding.
  Tensor embed(const Tensor& features) const;  // (L, H, 5) -> (L, H, D)
  Tensor forward(const Tensor& features) const;
  Tensor encode(const ObservationWindow& obs) const { return forward(obs.features()); }
  void collect(const std::string& prefix, ParameterSet& out) const;
};

/// Standard sin/cos positional table over `len` positions of width `dim`.
Tensor sinusoidal_encoding(std::int64_t len, std::int64_t dim);

}  // namespace rlfolio
