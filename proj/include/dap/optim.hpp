#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "dap/autodiff.hpp"

namespace dap {

enum class UpdateRule { kSgd, kAdam };

struct OptimizerConfig {
  UpdateRule rule = UpdateRule::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First-order optimizer over named parameters. Frozen parameters are skipped
/// and must not carry a gradient; a trainable parameter without a gradient is
/// a caller error.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  void step(std::span<Parameter* const> params);
  /// Clears gradient buffers of all given parameters.
  static void zero_grad(std::span<Parameter* const> params);

  const OptimizerConfig& config() const { return config_; }
  std::size_t steps_taken() const { return steps_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  OptimizerConfig config_;
  std::map<std::string, Moments> moments_;
  std::size_t steps_ = 0;
};

}  // namespace dap
