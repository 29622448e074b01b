#pragma once

#include <string>
#include <vector>

#include "dap/optim.hpp"
#include "dap/pseudo_labeler.hpp"
#include "dap/vision.hpp"
#include "dap/world.hpp"

namespace dap {

/// K × d learnable prompt matrix P₀, parameter "prompt.p0".
class PromptSet {
 public:
  PromptSet() = default;
  PromptSet(std::size_t count, std::size_t width, std::uint64_t seed);

  std::size_t count() const { return p0_.value.rows(); }
  std::size_t width() const { return p0_.value.cols(); }
  /// Prompt rows for `encode`, or nullopt when K = 0.
  std::optional<Var> bind(Tape& tape);
  Parameter& parameter() { return p0_; }
  const Parameter& parameter() const { return p0_; }
  ParameterList parameters() { return {&p0_}; }

 private:
  Parameter p0_{"prompt.p0", Tensor::zeros(0, 0)};
};

/// Entries uniform in (-a, a) with a = sqrt(6/d).
PromptSet init_prompts(std::size_t count, std::size_t width, std::uint64_t seed);

struct MLPHeadConfig {
  std::size_t hidden = 64;   // d_h
  bool linear_only = false;  // single linear map d -> C
};

/// linear(d -> d_h) + GELU + linear(d_h -> C) under "<prefix>.fc1/.fc2", or a
/// single "<prefix>.fc" when linear_only.
class MLPHead {
 public:
  MLPHead() = default;
  MLPHead(std::size_t in, std::size_t classes, const MLPHeadConfig& config, Rng& rng,
          const std::string& prefix = "head");

  Var forward(Tape& tape, Var x);
  ParameterList parameters();
  std::size_t classes() const { return last().out_features(); }
  std::size_t parameter_count();
  /// Zeroes the weights and bias of the output layer.
  void zero_output_layer();

 private:
  const Linear& last() const { return config_.linear_only ? fc1_ : fc2_; }
  MLPHeadConfig config_;
  Linear fc1_;
  Linear fc2_;
};

/// Name-prefix freezing. Every parameter must match exactly one category.
struct FreezePolicy {
  std::vector<std::string> frozen{"backbone."};
  std::vector<std::string> trainable{"prompt.", "head."};

  /// Sets each parameter's frozen flag; throws ContractError for a parameter
  /// that matches no category or both.
  void apply(const ParameterList& params) const;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 10;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
};

struct StepRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // 1-based, counted across epochs
  double loss = 0.0;      // mean over the batch
  double acc = 0.0;       // batch accuracy against the training labels
  std::size_t batch = 0;  // examples in the batch
};

struct TrainingLog {
  std::vector<StepRecord> steps;

  /// Example-weighted means per epoch.
  std::vector<double> epoch_loss() const;
  std::vector<double> epoch_acc() const;
  /// "epoch,step,loss,acc" with one row per optimizer step.
  std::string csv() const;
};

/// Trains prompts and head with cross-entropy on the pseudo-labels while the
/// backbone stays frozen. Batches follow a seeded shuffle per epoch. Throws
/// ContractError for an empty dataset and FrozenViolation if the backbone
/// digest changes.
TrainingLog prompt_tune(VisionEncoder& backbone, PromptSet& prompts, MLPHead& head,
                        const std::vector<LabeledPair>& dataset, const TrainConfig& config);

/// Head-only trainer over precomputed features (N × d), no prompt code path.
/// Follows the same shuffle and batching as prompt_tune.
TrainingLog train_head(MLPHead& head, const Tensor& features, const std::vector<int>& labels,
                       const TrainConfig& config);

/// Pooled X_N per image, stacked N × d.
Tensor extract_features(VisionEncoder& backbone, PromptSet* prompts, const std::vector<Tensor>& images);

/// y = softmax(head(X_N)).
std::vector<double> classify(VisionEncoder& backbone, PromptSet* prompts, MLPHead& head, const Tensor& image);

/// Fraction of images whose argmax class equals the given label.
double accuracy(VisionEncoder& backbone, PromptSet* prompts, MLPHead& head, const std::vector<LabeledView>& views);

/// Supervised pretraining of a backbone on labeled views through a temporary
/// linear head ("pretrain.head"). Returns the training log.
TrainingLog pretrain_backbone(VisionEncoder& backbone, const std::vector<LabeledView>& views, std::size_t classes,
                              const TrainConfig& config);

}  // namespace dap
