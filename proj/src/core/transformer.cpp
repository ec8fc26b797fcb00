#include "core/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace rlfolio {

Linear::Linear(std::int64_t in, std::int64_t out, std::mt19937_64& rng)
    : w(Tensor::xavier({in, out}, rng, true)), b(Tensor::zeros({out}, true)) {}

Tensor Linear::forward(const Tensor& x) const { return add(matmul(x, w), b); }

void Linear::collect(const std::string& prefix, ParameterSet& out) const {
  out.add(prefix + ".w", w);
  out.add(prefix + ".b", b);
}

LayerNorm::LayerNorm(std::int64_t dim)
    : gain(Tensor::full({dim}, 1.0, true)), bias(Tensor::zeros({dim}, true)) {}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

void LayerNorm::collect(const std::string& prefix, ParameterSet& out) const {
  out.add(prefix + ".gain", gain);
  out.add(prefix + ".bias", bias);
}

GatingUnit::GatingUnit(std::int64_t dim, double gate_bias_init, std::mt19937_64& rng)
    : wr(Tensor::xavier({dim, dim}, rng, true)),
      ur(Tensor::xavier({dim, dim}, rng, true)),
      wz(Tensor::xavier({dim, dim}, rng, true)),
      uz(Tensor::xavier({dim, dim}, rng, true)),
      wg(Tensor::xavier({dim, dim}, rng, true)),
      ug(Tensor::xavier({dim, dim}, rng, true)),
      bg(Tensor::full({dim}, gate_bias_init, true)) {}

Tensor GatingUnit::forward(const Tensor& x, const Tensor& y) const {
  if (x.shape().back() != y.shape().back() || x.shape().back() != bg.dim(0)) {
    throw std::invalid_argument("gate: trailing-dim mismatch: " + shape_str(x.shape()) + " vs " +
                                shape_str(y.shape()));
  }
  Tensor r = sigmoid(add(matmul(y, wr), matmul(x, ur)));
  Tensor z = sigmoid(sub(add(matmul(y, wz), matmul(x, uz)), bg));
  Tensor h = tanh(add(matmul(y, wg), matmul(mul(r, x), ug)));
  Tensor one = Tensor::scalar(1.0);
  return add(mul(sub(one, z), x), mul(z, h));
}

void GatingUnit::collect(const std::string& prefix, ParameterSet& out) const {
  out.add(prefix + ".wr", wr);
  out.add(prefix + ".ur", ur);
  out.add(prefix + ".wz", wz);
  out.add(prefix + ".uz", uz);
  out.add(prefix + ".wg", wg);
  out.add(prefix + ".ug", ug);
  out.add(prefix + ".bg", bg);
}

EncoderLayer::EncoderLayer(const RelAttentionConfig& cfg_, std::int64_t ffn_dim,
                           double gate_bias_init, std::mt19937_64& rng)
    : cfg(cfg_),
      attn(AttentionWeights::init(cfg_.model_dim, rng)),
      emb(RelEmbeddings::init(cfg_, rng)),
      ln1(cfg_.model_dim),
      ln2(cfg_.model_dim),
      gate_attn(cfg_.model_dim, gate_bias_init, rng),
      gate_ffn(cfg_.model_dim, gate_bias_init, rng),
      ffn1(cfg_.model_dim, ffn_dim, rng),
      ffn2(ffn_dim, cfg_.model_dim, rng) {}

Tensor EncoderLayer::forward(const Tensor& x) const {
  Tensor u = attention_2d(ln1.forward(x), attn, emb, cfg);
  Tensor x1 = gate_attn.forward(x, u);
  Tensor v = ffn2.forward(relu(ffn1.forward(ln2.forward(x1))));
  return gate_ffn.forward(x1, v);
}

void EncoderLayer::collect(const std::string& prefix, ParameterSet& out) const {
  out.add(prefix + ".attn.wq", attn.wq);
  out.add(prefix + ".attn.wk", attn.wk);
  out.add(prefix + ".attn.wv", attn.wv);
  out.add(prefix + ".emb.time", emb.time);
  out.add(prefix + ".emb.asset", emb.asset);
  ln1.collect(prefix + ".ln1", out);
  ln2.collect(prefix + ".ln2", out);
  gate_attn.collect(prefix + ".gate_attn", out);
  gate_ffn.collect(prefix + ".gate_ffn", out);
  ffn1.collect(prefix + ".ffn1", out);
  ffn2.collect(prefix + ".ffn2", out);
}

void EncoderConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("encoder: layer count must be >= 1");
  if (ffn_dim < 1) throw std::invalid_argument("encoder: ffn_dim must be >= 1");
  attention().validate();
}

Tensor sinusoidal_encoding(std::int64_t len, std::int64_t dim) {
  std::vector<double> v(static_cast<std::size_t>(len * dim), 0.0);
  for (std::int64_t pos = 0; pos < len; ++pos) {
    for (std::int64_t i = 0; i < dim; i += 2) {
      const double rate = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
      v[pos * dim + i] = std::sin(static_cast<double>(pos) * rate);
      if (i + 1 < dim) v[pos * dim + i + 1] = std::cos(static_cast<double>(pos) * rate);
    }
  }
  return Tensor::from({len, 1, dim}, std::move(v));
}

EncoderStack::EncoderStack(const EncoderConfig& cfg_, std::mt19937_64& rng) : cfg(cfg_) {
  cfg.validate();
  input_proj = Linear(5, cfg.model_dim, rng);
  time_encoding = cfg.sinusoidal_time_encoding
                      ? sinusoidal_encoding(cfg.window_len, cfg.model_dim)
                      : Tensor::zeros({cfg.window_len, 1, cfg.model_dim});
  layers.reserve(static_cast<std::size_t>(cfg.layers));
  for (std::int64_t i = 0; i < cfg.layers; ++i) {
    layers.emplace_back(cfg.attention(), cfg.ffn_dim, cfg.gate_bias_init, rng);
  }
}

Tensor EncoderStack::embed(const Tensor& features) const {
  if (!features.defined() || features.rank() != 3 || features.dim(0) != cfg.window_len ||
      features.dim(1) != cfg.columns || features.dim(2) != 5) {
    throw std::invalid_argument(
        "encode: feature tensor " +
        (features.defined() ? shape_str(features.shape()) : std::string("(undefined)")) +
        " does not match configured (" + std::to_string(cfg.window_len) + ", " +
        std::to_string(cfg.columns) + ", 5)");
  }
  return add(input_proj.forward(features), time_encoding);
}

Tensor EncoderStack::forward(const Tensor& features) const {
  Tensor x = embed(features);
  for (const auto& layer : layers) x = layer.forward(x);
  return x;
}

void EncoderStack::collect(const std::string& prefix, ParameterSet& out) const {
  input_proj.collect(prefix + ".proj", out);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect(prefix + ".layer" + std::to_string(i), out);
  }
}

}  // namespace rlfolio
