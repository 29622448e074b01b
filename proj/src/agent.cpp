#include "dap/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dap/checkpoint.hpp"
#include "dap/csv.hpp"

namespace dap {

namespace {

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::size_t index_of(const std::vector<int>& values, int v, const std::string& what) {
  auto it = std::find(values.begin(), values.end(), v);
  if (it == values.end()) throw ContractError(what);
  return static_cast<std::size_t>(it - values.begin());
}

}  // namespace

// ---------------------------------------------------------------------------
// Features

const NodeFeatures& VisualFeatures::at(int env) const {
  auto it = envs.find(env);
  if (it == envs.end()) throw ContractError("visual features: no environment " + std::to_string(env));
  return it->second;
}

Tensor VisualFeatures::node_row(int env, int node) const {
  const NodeFeatures& f = at(env);
  if (node < 0 || static_cast<std::size_t>(node) >= f.scene.rows()) {
    throw ContractError("visual features: environment " + std::to_string(env) + " has no node " +
                        std::to_string(node));
  }
  Tensor row = Tensor::zeros(1, 2 * width);
  for (std::size_t c = 0; c < width; ++c) row.at(0, c) = f.scene.at(static_cast<std::size_t>(node), c);
  const Tensor& objs = f.objects[static_cast<std::size_t>(node)];
  for (std::size_t r = 0; r < objs.rows(); ++r)
    for (std::size_t c = 0; c < width; ++c) row.at(0, width + c) += objs.at(r, c) / static_cast<double>(objs.rows());
  return row;
}

VisualFeatures precompute_features(VisionEncoder& backbone, PromptSet* prompts, const std::vector<Environment>& envs) {
  VisualFeatures out;
  out.width = backbone.config().width;
  for (const auto& env : envs) {
    NodeFeatures f;
    f.scene = extract_features(backbone, prompts, env.scene_views);
    std::vector<Tensor> views;
    for (const auto& node_views : env.object_views) views.insert(views.end(), node_views.begin(), node_views.end());
    const Tensor all = views.empty() ? Tensor::zeros(0, out.width) : extract_features(backbone, prompts, views);
    std::size_t next = 0;
    for (const auto& node_views : env.object_views) {
      Tensor objs = Tensor::zeros(node_views.size(), out.width);
      for (std::size_t r = 0; r < node_views.size(); ++r, ++next)
        for (std::size_t c = 0; c < out.width; ++c) objs.at(r, c) = all.at(next, c);
      f.objects.push_back(std::move(objs));
    }
    out.envs.emplace(env.id, std::move(f));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scorer

CrossModalScorer::CrossModalScorer(const AgentConfig& config, std::size_t visual_width, Rng& rng)
    : config_(config), visual_width_(visual_width) {
  const std::size_t h = config.hidden;
  if (config.text.width != h) {
    throw ContractError("agent: text width " + std::to_string(config.text.width) + " differs from hidden width " +
                        std::to_string(h));
  }
  if (visual_width == 0) throw ContractError("agent: visual width must be positive");
  text_ = TextEncoder(config.text, "text", rng);
  init_ = Linear("scorer.init", h, h, rng);
  query_ = Linear("scorer.query", h, h, rng);
  step_ = Parameter("scorer.step", normal_tensor(config.max_steps + 1, h, 0.02, rng));
  cand_ = Linear("scorer.cand", 2 * visual_width + 1, h, rng);
  bilinear_ = Parameter("scorer.bilinear", glorot(h, h, rng));
  stop_ = Linear("scorer.stop", 4 * h, 1, rng);
  gate_in_ = Linear("scorer.gate_in", 2 * h, h, rng);
  gate_hist_ = Linear("scorer.gate_hist", h, h, rng);
  cell_in_ = Linear("scorer.cell_in", 2 * h, h, rng);
  cell_hist_ = Linear("scorer.cell_hist", h, h, rng);
  ground_obj_ = Linear("scorer.ground_obj", visual_width, h, rng);
  ground_query_ = Linear("scorer.ground_query", h, h, rng);
}

EncodedInstruction CrossModalScorer::encode_instruction(Tape& tape, const TokenSequence& seq) {
  Var tokens = text_.token_states(tape, seq);
  return {tokens, mean_pool(tokens)};
}

Var CrossModalScorer::initial_history(Tape& tape, const EncodedInstruction& instr) {
  return tanh(init_.forward(tape, instr.summary));
}

Var CrossModalScorer::context(Tape& tape, const EncodedInstruction& instr, Var history, std::size_t step) {
  const int row = static_cast<int>(std::min(step, config_.max_steps));
  Var q = add(query_.forward(tape, history), embedding_lookup(tape.param(step_), std::span<const int>(&row, 1)));
  Var att = softmax(scale(matmul_nt(q, instr.tokens), 1.0 / std::sqrt(static_cast<double>(config_.hidden))));
  return matmul(att, instr.tokens);
}

Var CrossModalScorer::project(Tape& tape, Var rows) {
  if (rows.cols() != 2 * visual_width_ + 1) {
    throw ShapeError("agent: candidate rows have " + std::to_string(rows.cols()) + " columns, expected " +
                     std::to_string(2 * visual_width_ + 1));
  }
  return tanh(cand_.forward(tape, rows));
}

Var CrossModalScorer::logits(Tape& tape, Var context, Var history, Var current, Var candidates) {
  Var stop = stop_.forward(tape, concat_cols({context, history, current, mul(context, current)}));
  if (candidates.rows() == 0) return stop;
  Var scores = transpose(matmul_nt(matmul(candidates, tape.param(bilinear_)), context));
  return concat_cols({scores, stop});
}

Var CrossModalScorer::update_history(Tape& tape, Var history, Var chosen, Var context) {
  Var u = concat_cols({chosen, context});
  Var z = sigmoid(add(gate_in_.forward(tape, u), gate_hist_.forward(tape, history)));
  Var cell = tanh(add(cell_in_.forward(tape, u), cell_hist_.forward(tape, history)));
  return add(mul(affine(z, -1.0, 1.0), history), mul(z, cell));
}

Var CrossModalScorer::grounding_logits(Tape& tape, const EncodedInstruction& instr, Var objects) {
  if (objects.cols() != visual_width_) {
    throw ShapeError("agent: object features have " + std::to_string(objects.cols()) + " columns, expected " +
                     std::to_string(visual_width_));
  }
  Var q = ground_query_.forward(tape, instr.summary);
  return matmul_nt(q, tanh(ground_obj_.forward(tape, objects)));
}

ParameterList CrossModalScorer::parameters() {
  ParameterList out = text_.parameters();
  init_.collect(out);
  query_.collect(out);
  out.push_back(&step_);
  cand_.collect(out);
  out.push_back(&bilinear_);
  stop_.collect(out);
  gate_in_.collect(out);
  gate_hist_.collect(out);
  cell_in_.collect(out);
  cell_hist_.collect(out);
  ground_obj_.collect(out);
  ground_query_.collect(out);
  return out;
}

StepInputs step_inputs(const VisualFeatures& features, const Environment& env, int node, int previous) {
  if (!env.graph.contains(node)) throw ContractError("agent: node " + std::to_string(node) + " is not in the graph");
  StepInputs in;
  in.candidates = env.graph.neighbors[static_cast<std::size_t>(node)];
  const std::size_t w = 2 * features.width;
  in.candidate_rows = Tensor::zeros(in.candidates.size(), w + 1);
  for (std::size_t i = 0; i < in.candidates.size(); ++i) {
    const Tensor row = features.node_row(env.id, in.candidates[i]);
    for (std::size_t c = 0; c < w; ++c) in.candidate_rows.at(i, c) = row.at(0, c);
    in.candidate_rows.at(i, w) = in.candidates[i] == previous ? 1.0 : 0.0;
  }
  in.current_row = Tensor::zeros(1, w + 1);
  const Tensor row = features.node_row(env.id, node);
  for (std::size_t c = 0; c < w; ++c) in.current_row.at(0, c) = row.at(0, c);
  return in;
}

std::vector<double> predict_action(CrossModalScorer& scorer, const TokenSequence& instruction, const Tensor& history,
                                   std::size_t step, const Tensor& current_row, const Tensor& candidate_rows) {
  Tape tape(false);
  const auto instr = scorer.encode_instruction(tape, instruction);
  Var h = tape.constant(history);
  Var ctx = scorer.context(tape, instr, h, step);
  Var logits = scorer.logits(tape, ctx, h, scorer.project(tape, tape.constant(current_row)),
                             scorer.project(tape, tape.constant(candidate_rows)));
  return softmax_values(logits.value().data());
}

// ---------------------------------------------------------------------------
// Training

std::string AgentTrainingLog::csv() const {
  std::string out = csv_row({"epoch", "loss", "action_acc", "steps"});
  for (const auto& e : epochs) {
    out += csv_row({std::to_string(e.epoch), format_real(e.loss), format_real(e.action_acc), std::to_string(e.steps)});
  }
  return out;
}

Var episode_loss(Tape& tape, CrossModalScorer& scorer, const Vocabulary& vocab, const Episode& episode,
                 const Environment& env, const VisualFeatures& features, std::size_t* steps, std::size_t* correct) {
  if (episode.path.empty() || episode.path.front() != episode.start || episode.path.back() != episode.goal) {
    throw ContractError("agent: episode " + std::to_string(episode.id) + " has no start-to-goal path");
  }
  const auto instr = scorer.encode_instruction(tape, tokenize(vocab, episode.instruction,
                                                              scorer.config().text.max_length));
  Var h = scorer.initial_history(tape, instr);
  std::vector<Var> terms;
  const std::size_t moves = episode.path.size() - 1;
  for (std::size_t t = 0; t <= moves; ++t) {
    const int node = episode.path[t];
    const int previous = t == 0 ? -1 : episode.path[t - 1];
    const StepInputs in = step_inputs(features, env, node, previous);
    Var cands = scorer.project(tape, tape.constant(in.candidate_rows));
    Var current = scorer.project(tape, tape.constant(in.current_row));
    Var ctx = scorer.context(tape, instr, h, t);
    Var logits = scorer.logits(tape, ctx, h, current, cands);
    const std::size_t target =
        t < moves ? index_of(in.candidates, episode.path[t + 1],
                             "agent: teacher path of episode " + std::to_string(episode.id) + " leaves the graph")
                  : in.candidates.size();
    const int label = static_cast<int>(target);
    terms.push_back(cross_entropy(logits, std::span<const int>(&label, 1)));
    if (steps) ++*steps;
    if (correct) *correct += argmax(logits.value().data()) == target;
    if (t < moves) h = scorer.update_history(tape, h, slice_rows(cands, target, 1), ctx);
  }
  const auto goal = static_cast<std::size_t>(episode.goal);
  const int object = static_cast<int>(index_of(env.graph.objects[goal], episode.target_object,
                                               "agent: target object of episode " + std::to_string(episode.id) +
                                                   " is not at the goal"));
  Var ground = scorer.grounding_logits(tape, instr, tape.constant(features.at(env.id).objects[goal]));
  terms.push_back(cross_entropy(ground, std::span<const int>(&object, 1)));
  Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return total;
}

AgentTrainingLog train_agent(CrossModalScorer& scorer, const Vocabulary& vocab, const std::vector<Episode>& episodes,
                             const std::map<int, const Environment*>& envs, const VisualFeatures& features,
                             const AgentTrainConfig& config, const ParameterList& frozen) {
  if (episodes.empty()) throw ContractError("train_agent: no episodes");
  if (config.batch_episodes == 0) throw ContractError("train_agent: batch size must be positive");
  if (features.width != scorer.visual_width()) {
    throw ShapeError("train_agent: features have width " + std::to_string(features.width) + ", scorer expects " +
                     std::to_string(scorer.visual_width()));
  }
  auto env_of = [&](const Episode& e) -> const Environment& {
    auto it = envs.find(e.env);
    if (it == envs.end()) throw ContractError("train_agent: episode " + std::to_string(e.id) + " has no environment");
    return *it->second;
  };
  ParameterList params = scorer.parameters();
  for (auto* p : params) p->set_frozen(false);
  for (auto* p : frozen) p->set_frozen(true);
  const auto before = parameter_digest(frozen);

  Optimizer optimizer(config.optimizer);
  Rng rng(config.seed);
  std::vector<std::size_t> order(episodes.size());
  std::iota(order.begin(), order.end(), 0);
  AgentTrainingLog log;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t terms = 0, steps = 0, correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_episodes) {
      const std::size_t n = std::min(config.batch_episodes, order.size() - begin);
      Tape tape;
      std::vector<Var> losses;
      std::size_t batch_terms = 0;
      for (std::size_t i = begin; i < begin + n; ++i) {
        const Episode& e = episodes[order[i]];
        std::size_t s = 0;
        losses.push_back(episode_loss(tape, scorer, vocab, e, env_of(e), features, &s, &correct));
        steps += s;
        batch_terms += s + 1;
      }
      Var loss = scale(sum(concat_cols(losses)), 1.0 / static_cast<double>(batch_terms));
      tape.backward(loss);
      optimizer.step(params);
      Optimizer::zero_grad(params);
      loss_sum += loss.value()[0] * static_cast<double>(batch_terms);
      terms += batch_terms;
    }
    log.epochs.push_back({epoch, loss_sum / static_cast<double>(terms),
                          static_cast<double>(correct) / static_cast<double>(steps), steps});
  }
  if (parameter_digest(frozen) != before) {
    throw FrozenViolation("train_agent: visual parameters changed during agent training");
  }
  return log;
}

// ---------------------------------------------------------------------------
// Policies

ScorerPolicy::ScorerPolicy(CrossModalScorer& scorer, const Vocabulary& vocab, const VisualFeatures& features)
    : scorer_(&scorer), vocab_(&vocab), features_(&features) {
  if (features.width != scorer.visual_width()) {
    throw ShapeError("agent: features have width " + std::to_string(features.width) + ", scorer expects " +
                     std::to_string(scorer.visual_width()));
  }
}

void ScorerPolicy::begin(const Episode& episode, const Environment& env) {
  env_ = &env;
  Tape tape(false);
  const auto instr =
      scorer_->encode_instruction(tape, tokenize(*vocab_, episode.instruction, scorer_->config().text.max_length));
  tokens_ = instr.tokens.value();
  summary_ = instr.summary.value();
  history_ = scorer_->initial_history(tape, instr).value();
}

std::size_t ScorerPolicy::act(const StepView& view) {
  Tape tape(false);
  const EncodedInstruction instr{tape.constant(tokens_), tape.constant(summary_)};
  const StepInputs in = step_inputs(*features_, *env_, view.node, view.previous);
  Var h = tape.constant(history_);
  Var cands = scorer_->project(tape, tape.constant(in.candidate_rows));
  Var ctx = scorer_->context(tape, instr, h, view.step);
  Var logits = scorer_->logits(tape, ctx, h, scorer_->project(tape, tape.constant(in.current_row)), cands);
  const std::size_t choice = argmax(logits.value().data());
  if (choice < in.candidates.size()) {
    history_ = scorer_->update_history(tape, h, slice_rows(cands, choice, 1), ctx).value();
  }
  return choice;
}

std::optional<int> ScorerPolicy::ground(const StepView& view) {
  const auto& objects = env_->graph.objects[static_cast<std::size_t>(view.node)];
  if (objects.empty()) return std::nullopt;
  Tape tape(false);
  const EncodedInstruction instr{tape.constant(tokens_), tape.constant(summary_)};
  Var logits = scorer_->grounding_logits(
      tape, instr, tape.constant(features_->at(env_->id).objects[static_cast<std::size_t>(view.node)]));
  return objects[argmax(logits.value().data())];
}

void TeacherPolicy::begin(const Episode& episode, const Environment&) { episode_ = &episode; }

std::size_t TeacherPolicy::act(const StepView& view) {
  const auto& path = episode_->path;
  if (view.step >= path.size() || path[view.step] != view.node) {
    throw ContractError("teacher: agent left the reference path of episode " + std::to_string(episode_->id));
  }
  if (view.step + 1 == path.size()) return view.candidates.size();
  return index_of(view.candidates, path[view.step + 1], "teacher: reference path is not along an edge");
}

std::optional<int> TeacherPolicy::ground(const StepView&) { return episode_->target_object; }

void RandomPolicy::begin(const Episode& episode, const Environment&) {
  rng_ = Rng(derive_seed(seed_, "agent/random", static_cast<std::uint64_t>(episode.id)));
}

std::size_t RandomPolicy::act(const StepView& view) { return rng_.below(view.candidates.size() + 1); }

std::optional<int> RandomPolicy::ground(const StepView& view) {
  const auto& objects = view.env->graph.objects[static_cast<std::size_t>(view.node)];
  if (objects.empty()) return std::nullopt;
  return objects[rng_.below(objects.size())];
}

// ---------------------------------------------------------------------------
// Rollout

Trajectory rollout(NavigationPolicy& policy, const Episode& episode, const Environment& env, std::size_t max_steps) {
  if (!env.graph.contains(episode.start)) throw ContractError("rollout: start is not in the graph");
  Trajectory traj{episode.id, {episode.start}, false, std::nullopt};
  policy.begin(episode, env);
  StepView view;
  view.env = &env;
  view.node = episode.start;
  for (std::size_t step = 0; step < max_steps; ++step) {
    view.step = step;
    view.candidates = env.graph.neighbors[static_cast<std::size_t>(view.node)];
    const std::size_t choice = policy.act(view);
    if (choice == view.candidates.size()) {
      traj.stopped = true;
      break;
    }
    if (choice > view.candidates.size()) throw ContractError("rollout: policy chose an out-of-range action");
    view.previous = view.node;
    view.node = view.candidates[choice];
    traj.nodes.push_back(view.node);
  }
  if (episode.kind == EpisodeKind::kReverieLike) {
    view.step = traj.nodes.size() - 1;
    view.candidates = env.graph.neighbors[static_cast<std::size_t>(view.node)];
    traj.grounded_object = policy.ground(view);
  }
  return traj;
}

}  // namespace dap
