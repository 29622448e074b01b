#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dap/metrics.hpp"
#include "dap/optim.hpp"
#include "dap/prompt_tuning.hpp"
#include "dap/text.hpp"
#include "dap/world.hpp"

namespace dap {

// ---------------------------------------------------------------------------
// Frozen visual features

/// Pooled X_N of every render in one environment.
struct NodeFeatures {
  Tensor scene;                  // nodes × d
  std::vector<Tensor> objects;   // per node, objects × d (aligned with graph.objects)
};

struct VisualFeatures {
  std::size_t width = 0;
  std::map<int, NodeFeatures> envs;  // keyed by environment id

  const NodeFeatures& at(int env) const;
  /// [scene ; mean of objects] for one node, 1 × 2d.
  Tensor node_row(int env, int node) const;
};

/// Runs the backbone (with `prompts` when given) over every render.
VisualFeatures precompute_features(VisionEncoder& backbone, PromptSet* prompts, const std::vector<Environment>& envs);

// ---------------------------------------------------------------------------
// Scorer

struct AgentConfig {
  TextEncoderConfig text;    // vocab_size is filled from the vocabulary
  std::size_t hidden = 64;   // history and projection width; equals text width
  std::size_t max_steps = 20;
};

/// Instruction token states and their mean.
struct EncodedInstruction {
  Var tokens;   // L × hidden
  Var summary;  // 1 × hidden
};

/// Candidate scoring against the instruction. Parameters live under
/// "scorer.*" and the instruction encoder under "text.*".
class CrossModalScorer {
 public:
  CrossModalScorer() = default;
  CrossModalScorer(const AgentConfig& config, std::size_t visual_width, Rng& rng);

  EncodedInstruction encode_instruction(Tape& tape, const TokenSequence& seq);
  /// h₀ from the instruction summary.
  Var initial_history(Tape& tape, const EncodedInstruction& instr);
  /// Attention of the history (plus a step embedding) over instruction tokens.
  Var context(Tape& tape, const EncodedInstruction& instr, Var history, std::size_t step);
  /// Rows [node_row, previous-node flag] (c × (2d+1)) projected to c × hidden.
  Var project(Tape& tape, Var rows);
  /// 1 × (c+1) logits: one per candidate row, STOP last.
  Var logits(Tape& tape, Var context, Var history, Var current, Var candidates);
  /// Gated recurrent update with the chosen candidate.
  Var update_history(Tape& tape, Var history, Var chosen, Var context);
  /// 1 × k logits over the object feature rows (k × d) at a node.
  Var grounding_logits(Tape& tape, const EncodedInstruction& instr, Var objects);

  ParameterList parameters();
  const AgentConfig& config() const { return config_; }
  std::size_t visual_width() const { return visual_width_; }

 private:
  AgentConfig config_;
  std::size_t visual_width_ = 0;
  TextEncoder text_;
  Linear init_;
  Linear query_;
  Parameter step_;
  Linear cand_;
  Parameter bilinear_;
  Linear stop_;
  Linear gate_in_, gate_hist_;
  Linear cell_in_, cell_hist_;
  Linear ground_obj_, ground_query_;
};

/// Candidate rows for `node`'s neighbours in ascending id order, with the
/// previous-node flag in the last column, and the current node's row.
struct StepInputs {
  std::vector<int> candidates;
  Tensor candidate_rows;  // c × (2d+1)
  Tensor current_row;     // 1 × (2d+1)
};
StepInputs step_inputs(const VisualFeatures& features, const Environment& env, int node, int previous);

/// Softmax over candidates and STOP (last) for one step.
std::vector<double> predict_action(CrossModalScorer& scorer, const TokenSequence& instruction, const Tensor& history,
                                   std::size_t step, const Tensor& current_row, const Tensor& candidate_rows);

// ---------------------------------------------------------------------------
// Training

struct AgentTrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_episodes = 8;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
};

struct AgentEpochRecord {
  std::size_t epoch = 0;     // 1-based
  double loss = 0.0;         // mean over teacher steps (actions and grounding)
  double action_acc = 0.0;   // teacher-forced argmax accuracy over action steps
  std::size_t steps = 0;
};

struct AgentTrainingLog {
  std::vector<AgentEpochRecord> epochs;
  /// "epoch,loss,action_acc,steps"
  std::string csv() const;
};

/// Teacher-forced loss of one episode: cross-entropy on every shortest-path
/// action (STOP at the goal) plus grounding of the target object at the goal.
/// Returns the summed loss and counts steps and correct argmax actions.
Var episode_loss(Tape& tape, CrossModalScorer& scorer, const Vocabulary& vocab, const Episode& episode,
                 const Environment& env, const VisualFeatures& features, std::size_t* steps = nullptr,
                 std::size_t* correct = nullptr);

/// Imitation training over `episodes`. `frozen` (backbone and prompts) must
/// keep their digests; any change throws FrozenViolation.
AgentTrainingLog train_agent(CrossModalScorer& scorer, const Vocabulary& vocab, const std::vector<Episode>& episodes,
                             const std::map<int, const Environment*>& envs, const VisualFeatures& features,
                             const AgentTrainConfig& config, const ParameterList& frozen = {});

// ---------------------------------------------------------------------------
// Rollouts

struct StepView {
  const Environment* env = nullptr;
  int node = 0;
  int previous = -1;
  std::size_t step = 0;
  std::vector<int> candidates;  // ascending neighbour ids; index c means STOP
};

class NavigationPolicy {
 public:
  virtual ~NavigationPolicy() = default;
  virtual void begin(const Episode& episode, const Environment& env) = 0;
  /// Index into view.candidates, or candidates.size() for STOP.
  virtual std::size_t act(const StepView& view) = 0;
  /// Object index at the final node (reverie_like episodes only).
  virtual std::optional<int> ground(const StepView& view) = 0;
};

/// Greedy argmax over the scorer's distribution; ties go to the lower index.
class ScorerPolicy : public NavigationPolicy {
 public:
  ScorerPolicy(CrossModalScorer& scorer, const Vocabulary& vocab, const VisualFeatures& features);
  void begin(const Episode& episode, const Environment& env) override;
  std::size_t act(const StepView& view) override;
  std::optional<int> ground(const StepView& view) override;

 private:
  CrossModalScorer* scorer_;
  const Vocabulary* vocab_;
  const VisualFeatures* features_;
  const Environment* env_ = nullptr;
  Tensor tokens_;
  Tensor summary_;
  Tensor history_;
};

/// Follows the episode's shortest path and grounds the target object.
class TeacherPolicy : public NavigationPolicy {
 public:
  void begin(const Episode& episode, const Environment& env) override;
  std::size_t act(const StepView& view) override;
  std::optional<int> ground(const StepView& view) override;

 private:
  const Episode* episode_ = nullptr;
};

/// Uniform choice among candidates and STOP.
class RandomPolicy : public NavigationPolicy {
 public:
  explicit RandomPolicy(std::uint64_t seed) : seed_(seed) {}
  void begin(const Episode& episode, const Environment& env) override;
  std::size_t act(const StepView& view) override;
  std::optional<int> ground(const StepView& view) override;

 private:
  std::uint64_t seed_;
  Rng rng_{0};
};

/// Steps until STOP or `max_steps` moves. reverie_like episodes record the
/// grounded object at the final node.
Trajectory rollout(NavigationPolicy& policy, const Episode& episode, const Environment& env, std::size_t max_steps);

}  // namespace dap
