#include "dap/optim.hpp"

#include <cmath>

namespace dap {

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
  if (!(config_.lr > 0.0)) throw ContractError("optimizer: learning rate must be positive");
  if (config_.rule == UpdateRule::kAdam) {
    if (config_.beta1 < 0.0 || config_.beta1 >= 1.0 || config_.beta2 < 0.0 || config_.beta2 >= 1.0) {
      throw ContractError("optimizer: Adam betas must lie in [0, 1)");
    }
    if (!(config_.eps > 0.0)) throw ContractError("optimizer: eps must be positive");
  }
}

void Optimizer::step(std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    if (p->frozen) {
      if (p->value.has_grad()) throw FrozenViolation("optimizer: frozen parameter '" + p->name + "' has a gradient");
      continue;
    }
    if (!p->value.has_grad()) throw ContractError("optimizer: missing gradient for '" + p->name + "'");
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  for (Parameter* p : params) {
    if (p->frozen) continue;
    auto data = p->value.data();
    auto grad = p->value.grad();
    if (config_.rule == UpdateRule::kSgd) {
      for (std::size_t i = 0; i < data.size(); ++i) data[i] -= config_.lr * grad[i];
      continue;
    }
    auto& mom = moments_[p->name];
    if (mom.m.size() != data.size()) {
      mom.m.assign(data.size(), 0.0);
      mom.v.assign(data.size(), 0.0);
    }
    const double c1 = 1.0 - std::pow(config_.beta1, t);
    const double c2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t i = 0; i < data.size(); ++i) {
      mom.m[i] = config_.beta1 * mom.m[i] + (1.0 - config_.beta1) * grad[i];
      mom.v[i] = config_.beta2 * mom.v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
      const double mhat = mom.m[i] / c1;
      const double vhat = mom.v[i] / c2;
      data[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void Optimizer::zero_grad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->value.clear_grad();
}

}  // namespace dap
