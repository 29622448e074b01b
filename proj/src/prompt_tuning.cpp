#include "dap/prompt_tuning.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "dap/checkpoint.hpp"
#include "dap/csv.hpp"

namespace dap {

PromptSet::PromptSet(std::size_t count, std::size_t width, std::uint64_t seed) {
  if (width == 0) throw ContractError("init_prompts: width must be positive");
  Rng rng(seed);
  p0_ = Parameter("prompt.p0", uniform_tensor(count, width, std::sqrt(6.0 / static_cast<double>(width)), rng));
}

std::optional<Var> PromptSet::bind(Tape& tape) {
  if (count() == 0) return std::nullopt;
  return tape.param(p0_);
}

PromptSet init_prompts(std::size_t count, std::size_t width, std::uint64_t seed) {
  return PromptSet(count, width, seed);
}

MLPHead::MLPHead(std::size_t in, std::size_t classes, const MLPHeadConfig& config, Rng& rng,
                 const std::string& prefix)
    : config_(config) {
  if (in == 0 || classes == 0) throw ContractError("head: input width and class count must be positive");
  if (config_.linear_only) {
    fc1_ = Linear(prefix + ".fc", in, classes, rng);
  } else {
    if (config_.hidden == 0) throw ContractError("head: hidden width must be positive");
    fc1_ = Linear(prefix + ".fc1", in, config_.hidden, rng);
    fc2_ = Linear(prefix + ".fc2", config_.hidden, classes, rng);
  }
}

Var MLPHead::forward(Tape& tape, Var x) {
  if (config_.linear_only) return fc1_.forward(tape, x);
  return fc2_.forward(tape, gelu(fc1_.forward(tape, x)));
}

ParameterList MLPHead::parameters() {
  ParameterList out;
  fc1_.collect(out);
  if (!config_.linear_only) fc2_.collect(out);
  return out;
}

std::size_t MLPHead::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.numel();
  return n;
}

void MLPHead::zero_output_layer() {
  Linear& l = config_.linear_only ? fc1_ : fc2_;
  for (auto& v : l.weight.value.storage()) v = 0.0;
  for (auto& v : l.bias.value.storage()) v = 0.0;
}

void FreezePolicy::apply(const ParameterList& params) const {
  auto matches = [](const std::vector<std::string>& prefixes, const std::string& name) {
    return std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& p) { return name.starts_with(p); });
  };
  for (auto* p : params) {
    const bool f = matches(frozen, p->name), t = matches(trainable, p->name);
    if (f == t) {
      throw ContractError("freeze policy: parameter '" + p->name + "' matches " + (f ? "both" : "no") +
                          " categories");
    }
    p->set_frozen(f);
  }
}

std::vector<double> TrainingLog::epoch_loss() const {
  std::vector<double> sum, n;
  for (const auto& s : steps) {
    if (sum.size() < s.epoch) sum.resize(s.epoch, 0.0), n.resize(s.epoch, 0.0);
    sum[s.epoch - 1] += s.loss * static_cast<double>(s.batch);
    n[s.epoch - 1] += static_cast<double>(s.batch);
  }
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] /= n[i];
  return sum;
}

std::vector<double> TrainingLog::epoch_acc() const {
  std::vector<double> sum, n;
  for (const auto& s : steps) {
    if (sum.size() < s.epoch) sum.resize(s.epoch, 0.0), n.resize(s.epoch, 0.0);
    sum[s.epoch - 1] += s.acc * static_cast<double>(s.batch);
    n[s.epoch - 1] += static_cast<double>(s.batch);
  }
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] /= n[i];
  return sum;
}

std::string TrainingLog::csv() const {
  std::string out = csv_row({"epoch", "step", "loss", "acc"});
  for (const auto& s : steps) {
    out += csv_row({std::to_string(s.epoch), std::to_string(s.step), format_real(s.loss), format_real(s.acc)});
  }
  return out;
}

namespace {

using BatchLogits = std::function<Var(Tape&, std::span<const std::size_t>)>;

double batch_accuracy(const Tensor& logits, std::span<const int> labels) {
  std::size_t hits = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    hits += static_cast<int>(best) == labels[r];
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

// Shared minibatch loop: seeded shuffle per epoch, batches in order, the
// last batch may be short.
TrainingLog run_minibatches(std::size_t count, const std::vector<int>& labels, const TrainConfig& config,
                            const ParameterList& params, const BatchLogits& logits_for) {
  if (count == 0) throw ContractError("training: dataset is empty");
  if (config.batch_size == 0) throw ContractError("training: batch size must be positive");
  Optimizer optimizer(config.optimizer);
  Rng rng(config.seed);
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  TrainingLog log;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < count; begin += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, count - begin);
      std::span<const std::size_t> batch(order.data() + begin, n);
      std::vector<int> targets;
      for (std::size_t i : batch) targets.push_back(labels[i]);
      Tape tape;
      Var logits = logits_for(tape, batch);
      Var loss = cross_entropy(logits, targets);
      tape.backward(loss);
      optimizer.step(params);
      Optimizer::zero_grad(params);
      log.steps.push_back({epoch, ++step, loss.value()[0], batch_accuracy(logits.value(), targets), n});
    }
  }
  return log;
}

ParameterList without_empty(ParameterList params) {
  std::erase_if(params, [](const Parameter* p) { return p->value.numel() == 0; });
  return params;
}

}  // namespace

TrainingLog prompt_tune(VisionEncoder& backbone, PromptSet& prompts, MLPHead& head,
                        const std::vector<LabeledPair>& dataset, const TrainConfig& config) {
  if (dataset.empty()) throw ContractError("prompt_tune: dataset is empty");
  if (prompts.count() > 0 && prompts.width() != backbone.config().width) {
    throw ShapeError("prompt_tune: prompt width " + std::to_string(prompts.width()) + " differs from backbone width " +
                     std::to_string(backbone.config().width));
  }
  ParameterList all = backbone.parameters();
  for (auto* p : without_empty(prompts.parameters())) all.push_back(p);
  for (auto* p : head.parameters()) all.push_back(p);
  FreezePolicy{}.apply(all);
  const auto before = parameter_digest(backbone.parameters());

  std::vector<ImagePatchGrid> grids;
  std::vector<int> labels;
  for (const auto& pair : dataset) {
    grids.emplace_back(pair.image, backbone.config().patch);
    labels.push_back(pair.class_id);
  }
  auto log = run_minibatches(dataset.size(), labels, config, all, [&](Tape& tape, std::span<const std::size_t> batch) {
    const auto bound = prompts.bind(tape);
    std::vector<Var> feats;
    for (std::size_t i : batch) feats.push_back(backbone.features(tape, grids[i], bound));
    return head.forward(tape, concat_seq(feats));
  });
  if (parameter_digest(backbone.parameters()) != before) {
    throw FrozenViolation("prompt_tune: backbone parameters changed during tuning");
  }
  return log;
}

TrainingLog train_head(MLPHead& head, const Tensor& features, const std::vector<int>& labels,
                       const TrainConfig& config) {
  if (features.rank() != 2 || features.rows() != labels.size()) {
    throw ShapeError("train_head: features " + shape_string(features.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  ParameterList params = head.parameters();
  for (auto* p : params) p->set_frozen(false);
  const std::size_t d = features.cols();
  return run_minibatches(labels.size(), labels, config, params, [&](Tape& tape, std::span<const std::size_t> batch) {
    Tensor x({batch.size(), d});
    for (std::size_t r = 0; r < batch.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) x.at(r, c) = features.at(batch[r], c);
    return head.forward(tape, tape.constant(x));
  });
}

Tensor extract_features(VisionEncoder& backbone, PromptSet* prompts, const std::vector<Tensor>& images) {
  const std::size_t d = backbone.config().width;
  Tensor out({images.size(), d});
  for (std::size_t i = 0; i < images.size(); ++i) {
    Tape tape(false);
    const auto bound = prompts ? prompts->bind(tape) : std::nullopt;
    const auto f = backbone.features(tape, ImagePatchGrid(images[i], backbone.config().patch), bound).value();
    std::copy(f.storage().begin(), f.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return out;
}

std::vector<double> classify(VisionEncoder& backbone, PromptSet* prompts, MLPHead& head, const Tensor& image) {
  Tape tape(false);
  const auto bound = prompts ? prompts->bind(tape) : std::nullopt;
  Var logits = head.forward(tape, backbone.features(tape, ImagePatchGrid(image, backbone.config().patch), bound));
  auto y = softmax(logits).value().data();
  return {y.begin(), y.end()};
}

double accuracy(VisionEncoder& backbone, PromptSet* prompts, MLPHead& head, const std::vector<LabeledView>& views) {
  if (views.empty()) throw ContractError("accuracy: no images");
  std::size_t hits = 0;
  for (const auto& v : views) {
    const auto y = classify(backbone, prompts, head, v.image);
    hits += static_cast<int>(std::max_element(y.begin(), y.end()) - y.begin()) == v.label;
  }
  return static_cast<double>(hits) / static_cast<double>(views.size());
}

TrainingLog pretrain_backbone(VisionEncoder& backbone, const std::vector<LabeledView>& views, std::size_t classes,
                              const TrainConfig& config) {
  Rng rng(derive_seed(config.seed, "head"));
  MLPHead head(backbone.config().width, classes, {.linear_only = true}, rng, "pretrain.head");
  ParameterList params = backbone.parameters();
  for (auto* p : head.parameters()) params.push_back(p);
  for (auto* p : params) p->set_frozen(false);
  std::vector<ImagePatchGrid> grids;
  std::vector<int> labels;
  for (const auto& v : views) {
    grids.emplace_back(v.image, backbone.config().patch);
    labels.push_back(v.label);
  }
  return run_minibatches(views.size(), labels, config, params, [&](Tape& tape, std::span<const std::size_t> batch) {
    std::vector<Var> feats;
    for (std::size_t i : batch) feats.push_back(backbone.features(tape, grids[i], std::nullopt));
    return head.forward(tape, concat_seq(feats));
  });
}

}  // namespace dap
