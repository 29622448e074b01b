#pragma once

#include <string>
#include <vector>

#include "dap/autodiff.hpp"
#include "dap/rng.hpp"

namespace dap {

using ParameterList = std::vector<Parameter*>;

/// Glorot-uniform initialized fan_in x fan_out matrix.
Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng);
Tensor normal_tensor(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

/// y = x W + b
struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);
  Var forward(Tape& tape, Var x);
  void collect(ParameterList& out);
  std::size_t in_features() const { return weight.value.rows(); }
  std::size_t out_features() const { return weight.value.cols(); }
};

struct LayerNorm {
  Parameter gain;
  Parameter bias;

  LayerNorm() = default;
  LayerNorm(const std::string& prefix, std::size_t width);
  Var forward(Tape& tape, Var x);
  void collect(ParameterList& out);
};

struct TransformerLayerConfig {
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 128;
};

/// Pre-norm encoder layer: x + MHSA(LN(x)), then x + MLP(LN(x)), applied to the
/// whole sequence.
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(const std::string& prefix, const TransformerLayerConfig& config, Rng& rng);

  Var forward(Tape& tape, Var x);
  void collect(ParameterList& out);
  const TransformerLayerConfig& config() const { return config_; }

 private:
  TransformerLayerConfig config_;
  LayerNorm norm1_;
  Linear query_, key_, value_, output_;
  LayerNorm norm2_;
  Linear fc1_, fc2_;
};

}  // namespace dap
