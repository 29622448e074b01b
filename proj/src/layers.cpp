#include "dap/layers.hpp"

#include <cmath>

namespace dap {

Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Tensor t({rows, cols});
  for (auto& v : t.storage()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor normal_tensor(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor t({rows, cols});
  for (auto& v : t.storage()) v = rng.normal(0.0, stddev);
  return t;
}

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_tensor(fan_in, fan_out, bound, rng);
}

Linear::Linear(const std::string& prefix, std::size_t in, std::size_t out, Rng& rng)
    : weight(prefix + ".w", glorot(in, out, rng)), bias(prefix + ".b", Tensor::zeros(1, out)) {}

Var Linear::forward(Tape& tape, Var x) {
  return add(matmul(x, tape.param(weight)), tape.param(bias));
}

void Linear::collect(ParameterList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

LayerNorm::LayerNorm(const std::string& prefix, std::size_t width)
    : gain(prefix + ".g", Tensor::filled(1, width, 1.0)), bias(prefix + ".b", Tensor::zeros(1, width)) {}

Var LayerNorm::forward(Tape& tape, Var x) {
  return layernorm(x, tape.param(gain), tape.param(bias));
}

void LayerNorm::collect(ParameterList& out) {
  out.push_back(&gain);
  out.push_back(&bias);
}

TransformerLayer::TransformerLayer(const std::string& prefix, const TransformerLayerConfig& config, Rng& rng)
    : config_(config),
      norm1_(prefix + ".ln1", config.width),
      query_(prefix + ".attn.wq", config.width, config.width, rng),
      key_(prefix + ".attn.wk", config.width, config.width, rng),
      value_(prefix + ".attn.wv", config.width, config.width, rng),
      output_(prefix + ".attn.wo", config.width, config.width, rng),
      norm2_(prefix + ".ln2", config.width),
      fc1_(prefix + ".mlp.fc1", config.width, config.mlp_hidden, rng),
      fc2_(prefix + ".mlp.fc2", config.mlp_hidden, config.width, rng) {
  if (config.heads == 0 || config.width % config.heads != 0) {
    throw ShapeError("transformer layer: width " + std::to_string(config.width) +
                     " not divisible by heads " + std::to_string(config.heads));
  }
}

Var TransformerLayer::forward(Tape& tape, Var x) {
  if (x.cols() != config_.width) {
    throw ShapeError("transformer layer: input width " + std::to_string(x.cols()) + ", expected " +
                     std::to_string(config_.width));
  }
  const std::size_t head_dim = config_.width / config_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Var h = norm1_.forward(tape, x);
  Var q = query_.forward(tape, h);
  Var k = key_.forward(tape, h);
  Var v = value_.forward(tape, h);
  std::vector<Var> heads;
  heads.reserve(config_.heads);
  for (std::size_t i = 0; i < config_.heads; ++i) {
    Var qh = slice_cols(q, i * head_dim, head_dim);
    Var kh = slice_cols(k, i * head_dim, head_dim);
    Var vh = slice_cols(v, i * head_dim, head_dim);
    Var attn = softmax(scale(matmul_nt(qh, kh), inv_sqrt));
    heads.push_back(matmul(attn, vh));
  }
  Var mixed = heads.size() == 1 ? heads[0] : concat_cols(heads);
  x = add(x, output_.forward(tape, mixed));

  Var m = fc2_.forward(tape, gelu(fc1_.forward(tape, norm2_.forward(tape, x))));
  return add(x, m);
}

void TransformerLayer::collect(ParameterList& out) {
  norm1_.collect(out);
  query_.collect(out);
  key_.collect(out);
  value_.collect(out);
  output_.collect(out);
  norm2_.collect(out);
  fc1_.collect(out);
  fc2_.collect(out);
}

}  // namespace dap
