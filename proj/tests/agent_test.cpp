#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dap/agent.hpp"
#include "dap/checkpoint.hpp"
#include "support/gradcheck.hpp"

namespace dap {
namespace {

constexpr std::size_t kVisual = 12;

AgentConfig tiny_agent(const Vocabulary& vocab) {
  AgentConfig c;
  c.text = {.vocab_size = vocab.size(), .width = 8, .layers = 1, .heads = 2, .mlp_hidden = 16, .max_length = 40};
  c.hidden = 8;
  return c;
}

struct World {
  Vocabulary vocab{grammar_words()};
  std::vector<Environment> envs;
  std::map<int, const Environment*> by_id;
  VisualFeatures features;
  std::vector<Episode> episodes;

  // Scene and object features are noisy one-hot codes of their classes, so
  // instructions that name scenes and objects are learnable.
  explicit World(std::size_t count, std::size_t episodes_per_env = 12, double reverie = 0.5) {
    EnvironmentParams ep;
    ep.num_nodes = 12;
    for (std::size_t i = 0; i < count; ++i) {
      envs.push_back(generate_environment(static_cast<int>(i), derive_seed(7, "env", i), ep, RenderStyle::indomain()));
    }
    features.width = kVisual;
    Rng rng(99);
    auto code = [&](std::size_t cls, std::size_t rows) {
      Tensor t = testing::random_tensor(rows, kVisual, rng, 0.1);
      for (std::size_t r = 0; r < rows; ++r) t.at(r, cls % kVisual) += 1.0;
      return t;
    };
    for (const auto& env : envs) {
      by_id[env.id] = &env;
      NodeFeatures f;
      f.scene = Tensor::zeros(env.graph.size(), kVisual);
      for (std::size_t v = 0; v < env.graph.size(); ++v) {
        const Tensor row = code(static_cast<std::size_t>(env.graph.scene[v]), 1);
        for (std::size_t c = 0; c < kVisual; ++c) f.scene.at(v, c) = row.at(0, c);
        Tensor objs = Tensor::zeros(env.graph.objects[v].size(), kVisual);
        for (std::size_t k = 0; k < env.graph.objects[v].size(); ++k) {
          const Tensor o = code(static_cast<std::size_t>(env.graph.objects[v][k]) + 5, 1);
          for (std::size_t c = 0; c < kVisual; ++c) objs.at(k, c) = o.at(0, c);
        }
        f.objects.push_back(objs);
      }
      features.envs.emplace(env.id, std::move(f));
    }
    EpisodeParams params;
    params.reverie_fraction = reverie;
    int id = 0;
    for (const auto& env : envs)
      for (std::size_t e = 0; e < episodes_per_env; ++e, ++id)
        episodes.push_back(sample_episode(env, id, derive_seed(11, "episode", id), params));
  }

  const Environment& env(const Episode& e) const { return *by_id.at(e.env); }
};

const World& shared_world() {
  static const World w(3);
  return w;
}

TEST(AgentTest, LogitsCoverNeighboursAndStop) {
  const World& w = shared_world();
  Rng rng(1);
  CrossModalScorer scorer(tiny_agent(w.vocab), kVisual, rng);
  const Environment& env = w.envs[0];
  for (int v = 0; v < static_cast<int>(env.graph.size()); ++v) {
    const StepInputs in = step_inputs(w.features, env, v, -1);
    EXPECT_EQ(in.candidates, env.graph.neighbors[static_cast<std::size_t>(v)]);
    const auto probs = predict_action(scorer, tokenize(w.vocab, "walk to the kitchen"), Tensor::zeros(1, 8), 0,
                                      in.current_row, in.candidate_rows);
    ASSERT_EQ(probs.size(), env.graph.neighbors[static_cast<std::size_t>(v)].size() + 1);
    EXPECT_NEAR(std::accumulate(probs.begin(), probs.end(), 0.0), 1.0, 1e-9);
    const auto again = predict_action(scorer, tokenize(w.vocab, "walk to the kitchen"), Tensor::zeros(1, 8), 0,
                                      in.current_row, in.candidate_rows);
    EXPECT_EQ(probs, again);
  }
}

TEST(AgentTest, StepInputsFlagPreviousNode) {
  const World& w = shared_world();
  const Environment& env = w.envs[0];
  const int v = 0;
  const int prev = env.graph.neighbors[0].back();
  const StepInputs in = step_inputs(w.features, env, v, prev);
  for (std::size_t i = 0; i < in.candidates.size(); ++i) {
    EXPECT_EQ(in.candidate_rows.at(i, 2 * kVisual), in.candidates[i] == prev ? 1.0 : 0.0);
    const Tensor row = w.features.node_row(env.id, in.candidates[i]);
    for (std::size_t c = 0; c < 2 * kVisual; ++c) EXPECT_EQ(in.candidate_rows.at(i, c), row.at(0, c));
  }
  EXPECT_EQ(in.current_row.at(0, 2 * kVisual), 0.0);
}

TEST(AgentTest, NodeRowIsSceneThenObjectMean) {
  const World& w = shared_world();
  const Environment& env = w.envs[1];
  for (int v = 0; v < static_cast<int>(env.graph.size()); ++v) {
    const Tensor row = w.features.node_row(env.id, v);
    const NodeFeatures& f = w.features.at(env.id);
    const Tensor& objs = f.objects[static_cast<std::size_t>(v)];
    for (std::size_t c = 0; c < kVisual; ++c) {
      EXPECT_EQ(row.at(0, c), f.scene.at(static_cast<std::size_t>(v), c));
      double mean = 0.0;
      for (std::size_t r = 0; r < objs.rows(); ++r) mean += objs.at(r, c);
      EXPECT_NEAR(row.at(0, kVisual + c), mean / static_cast<double>(objs.rows()), 1e-15);
    }
  }
  EXPECT_THROW(w.features.node_row(env.id, 999), ContractError);
  EXPECT_THROW(w.features.at(77), ContractError);
}

TEST(AgentTest, PermutingCandidatesPermutesProbabilities) {
  const World& w = shared_world();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    CrossModalScorer scorer(tiny_agent(w.vocab), kVisual, rng);
    Tensor rows = testing::random_tensor(5, 2 * kVisual + 1, rng);
    Tensor current = testing::random_tensor(1, 2 * kVisual + 1, rng);
    Tensor history = testing::random_tensor(1, 8, rng);
    const auto seq = tokenize(w.vocab, "go past the bedroom and stop near the lamp");
    const auto base = predict_action(scorer, seq, history, 2, current, rows);
    std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    Tensor permuted = Tensor::zeros(5, rows.cols());
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t c = 0; c < rows.cols(); ++c) permuted.at(i, c) = rows.at(perm[i], c);
    const auto got = predict_action(scorer, seq, history, 2, current, permuted);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(got[i], base[perm[i]], 1e-12);
    EXPECT_NEAR(got[5], base[5], 1e-12);
  }
}

TEST(AgentTest, ShapeAndConfigErrors) {
  const World& w = shared_world();
  Rng rng(2);
  AgentConfig bad = tiny_agent(w.vocab);
  bad.hidden = 16;
  EXPECT_THROW(CrossModalScorer(bad, kVisual, rng), ContractError);
  CrossModalScorer scorer(tiny_agent(w.vocab), kVisual, rng);
  const auto seq = tokenize(w.vocab, "stop");
  EXPECT_THROW(predict_action(scorer, seq, Tensor::zeros(1, 8), 0, Tensor::zeros(1, 5), Tensor::zeros(2, 5)),
               ShapeError);
  Tape tape;
  const auto instr = scorer.encode_instruction(tape, seq);
  EXPECT_THROW(scorer.grounding_logits(tape, instr, tape.constant(Tensor::zeros(2, 3))), ShapeError);
  VisualFeatures narrow;
  narrow.width = 4;
  EXPECT_THROW(ScorerPolicy(scorer, w.vocab, narrow), ShapeError);
}

TEST(AgentTest, ImitationLossGradientMatchesFiniteDifferences) {
  const World& w = shared_world();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    CrossModalScorer scorer(tiny_agent(w.vocab), kVisual, rng);
    const Episode& e = w.episodes[seed * 7];
    auto build = [&](Tape& tape) { return episode_loss(tape, scorer, w.vocab, e, w.env(e), w.features); };
    worst = std::max(worst, testing::check_params(scorer.parameters(), build, 40, rng));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(AgentTest, EpisodeLossCountsOneStepPerPathNode) {
  const World& w = shared_world();
  Rng rng(3);
  CrossModalScorer scorer(tiny_agent(w.vocab), kVisual, rng);
  for (const auto& e : w.episodes) {
    Tape tape;
    std::size_t steps = 0, correct = 0;
    Var loss = episode_loss(tape, scorer, w.vocab, e, w.env(e), w.features, &steps, &correct);
    EXPECT_EQ(steps, e.path.size());
    EXPECT_LE(correct, steps);
    EXPECT_GT(loss.value()[0], 0.0);
  }
}

TEST(AgentTest, TeacherActionOutsideCandidatesIsContractError) {
  const World& w = shared_world();
  Rng rng(4);
  CrossModalScorer scorer(tiny_agent(w.vocab), kVisual, rng);
  Episode e = w.episodes[0];
  const Environment& env = w.env(e);
  int far = -1;
  for (int v = 0; v < static_cast<int>(env.graph.size()); ++v)
    if (v != e.start && !env.graph.adjacent(e.start, v)) far = v;
  ASSERT_GE(far, 0);
  e.path = {e.start, far};
  e.goal = far;
  Tape tape;
  EXPECT_THROW(episode_loss(tape, scorer, w.vocab, e, env, w.features), ContractError);
  TeacherPolicy teacher;
  EXPECT_THROW(rollout(teacher, e, env, 20), ContractError);
}

TEST(AgentTest, TeacherRolloutIsShortestPathWithFullSpl) {
  const World& w = shared_world();
  TeacherPolicy teacher;
  for (const auto& e : w.episodes) {
    const Trajectory t = rollout(teacher, e, w.env(e), 20);
    EXPECT_EQ(t.nodes, e.path);
    EXPECT_TRUE(t.stopped);
    const EpisodeResult r = score_episode(t, e, w.env(e).graph);
    EXPECT_TRUE(r.success);
    EXPECT_DOUBLE_EQ(r.spl, 1.0);
    if (e.kind == EpisodeKind::kReverieLike) {
      EXPECT_TRUE(r.rgs);
      EXPECT_DOUBLE_EQ(r.rgspl, 1.0);
    } else {
      EXPECT_FALSE(t.grounded_object.has_value());
    }
  }
}

TEST(AgentTest, UntrainedScorerRolloutIsDeterministicAndValid) {
  const World& w = shared_world();
  auto run = [&] {
    Rng rng(5);
    CrossModalScorer scorer(tiny_agent(w.vocab), kVisual, rng);
    ScorerPolicy policy(scorer, w.vocab, w.features);
    std::vector<Trajectory> out;
    for (const auto& e : w.episodes) out.push_back(rollout(policy, e, w.env(e), 20));
    return out;
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].nodes, b[i].nodes);
    EXPECT_EQ(a[i].stopped, b[i].stopped);
    EXPECT_EQ(a[i].grounded_object, b[i].grounded_object);
    const Episode& e = w.episodes[i];
    EXPECT_NO_THROW(validate_trajectory(a[i], e, w.env(e).graph, 20));
    if (!a[i].stopped) EXPECT_EQ(a[i].nodes.size(), 21u);
    if (a[i].grounded_object) {
      const auto& objs = w.env(e).graph.objects[static_cast<std::size_t>(a[i].nodes.back())];
      EXPECT_NE(std::find(objs.begin(), objs.end(), *a[i].grounded_object), objs.end());
    }
  }
}

TEST(AgentTest, StepCapLimitsTrajectories) {
  const World& w = shared_world();
  struct Wander : NavigationPolicy {
    void begin(const Episode&, const Environment&) override {}
    std::size_t act(const StepView&) override { return 0; }
    std::optional<int> ground(const StepView&) override { return std::nullopt; }
  } wander;
  for (std::size_t cap : {0u, 1u, 5u, 20u}) {
    const Episode& e = w.episodes[3];
    const Trajectory t = rollout(wander, e, w.env(e), cap);
    EXPECT_EQ(t.nodes.size(), cap + 1);
    EXPECT_FALSE(t.stopped);
    EXPECT_NO_THROW(validate_trajectory(t, e, w.env(e).graph, cap));
  }
}

TEST(AgentTest, RandomPolicyIsDeterministicPerSeedAndUniform) {
  const World& w = shared_world();
  const Episode& e = w.episodes[0];
  RandomPolicy a(42), b(42), c(43);
  bool differs = false;
  for (int rep = 0; rep < 5; ++rep) {
    const auto ta = rollout(a, e, w.env(e), 20);
    const auto tb = rollout(b, e, w.env(e), 20);
    EXPECT_EQ(ta.nodes, tb.nodes);
    EXPECT_EQ(ta.grounded_object, tb.grounded_object);
    differs = differs || rollout(c, e, w.env(e), 20).nodes != ta.nodes;
  }
  EXPECT_TRUE(differs || w.env(e).graph.neighbors[static_cast<std::size_t>(e.start)].size() == 0);

  // First action across many episode ids: counts per option within 4 sigma.
  const Environment& env = w.env(e);
  const std::size_t options = env.graph.neighbors[static_cast<std::size_t>(e.start)].size() + 1;
  std::vector<std::size_t> counts(options, 0);
  const std::size_t trials = 6000;
  RandomPolicy policy(9);
  for (std::size_t i = 0; i < trials; ++i) {
    Episode copy = e;
    copy.id = static_cast<int>(i);
    policy.begin(copy, env);
    StepView view{&env, e.start, -1, 0, env.graph.neighbors[static_cast<std::size_t>(e.start)]};
    ++counts[policy.act(view)];
  }
  const double p = 1.0 / static_cast<double>(options);
  const double sigma = std::sqrt(static_cast<double>(trials) * p * (1 - p));
  for (std::size_t k : counts) EXPECT_LT(std::abs(static_cast<double>(k) - trials * p), 4 * sigma);
}

TEST(AgentTest, TrainingLowersLossAndBeatsChance) {
  const World w(4, 25, 0.3);
  Rng rng(6);
  CrossModalScorer scorer(tiny_agent(w.vocab), kVisual, rng);
  VisionEncoder backbone({.layers = 1, .width = 8, .heads = 2, .patch = 4, .image_size = 8, .channels = 3,
                          .mlp_hidden = 16},
                         "backbone", rng);
  PromptSet prompts(3, 8, 1);
  ParameterList frozen = backbone.parameters();
  frozen.push_back(&prompts.parameter());
  const auto before = parameter_digest(frozen);
  AgentTrainConfig tc;
  tc.epochs = 8;
  tc.optimizer.lr = 3e-3;
  tc.seed = 1;
  const auto log = train_agent(scorer, w.vocab, w.episodes, w.by_id, w.features, tc, frozen);
  ASSERT_EQ(log.epochs.size(), 8u);
  EXPECT_LT(log.epochs.back().loss, log.epochs.front().loss);
  double degree = 0.0;
  std::size_t nodes = 0;
  for (const auto& env : w.envs)
    for (const auto& nb : env.graph.neighbors) degree += static_cast<double>(nb.size()), ++nodes;
  const double chance = 1.0 / (degree / static_cast<double>(nodes) + 1.0);
  EXPECT_GT(log.epochs.back().action_acc, chance);
  EXPECT_EQ(parameter_digest(frozen), before);
  for (auto* p : frozen) EXPECT_TRUE(p->frozen);
  const std::string csv = log.csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,loss,action_acc,steps");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
}

TEST(AgentTest, ZeroEpochsLeaveScorerUnchanged) {
  const World& w = shared_world();
  Rng rng(7);
  CrossModalScorer scorer(tiny_agent(w.vocab), kVisual, rng);
  const auto before = collect(scorer.parameters());
  AgentTrainConfig tc;
  tc.epochs = 0;
  const auto log = train_agent(scorer, w.vocab, w.episodes, w.by_id, w.features, tc);
  EXPECT_TRUE(log.epochs.empty());
  EXPECT_EQ(collect(scorer.parameters()), before);
}

TEST(AgentTest, TrainingErrors) {
  const World& w = shared_world();
  Rng rng(8);
  CrossModalScorer scorer(tiny_agent(w.vocab), kVisual, rng);
  AgentTrainConfig tc;
  EXPECT_THROW(train_agent(scorer, w.vocab, {}, w.by_id, w.features, tc), ContractError);
  tc.batch_episodes = 0;
  EXPECT_THROW(train_agent(scorer, w.vocab, w.episodes, w.by_id, w.features, tc), ContractError);
  tc.batch_episodes = 4;
  EXPECT_THROW(train_agent(scorer, w.vocab, w.episodes, {}, w.features, tc), ContractError);
}

TEST(AgentTest, ScorerParametersAreNamespaced) {
  const World& w = shared_world();
  Rng rng(9);
  CrossModalScorer scorer(tiny_agent(w.vocab), kVisual, rng);
  for (auto* p : scorer.parameters()) {
    EXPECT_TRUE(p->name.starts_with("scorer.") || p->name.starts_with("text.")) << p->name;
  }
}

TEST(AgentTest, RolloutsRoundTripThroughTrajectoryCsv) {
  const World& w = shared_world();
  RandomPolicy policy(3);
  std::vector<Trajectory> trajs;
  for (const auto& e : w.episodes) trajs.push_back(rollout(policy, e, w.env(e), 20));
  const auto back = trajectories_from_csv(trajectories_to_csv(trajs));
  ASSERT_EQ(back.size(), trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    EXPECT_EQ(back[i].episode_id, trajs[i].episode_id);
    EXPECT_EQ(back[i].nodes, trajs[i].nodes);
    EXPECT_EQ(back[i].stopped, trajs[i].stopped);
    EXPECT_EQ(back[i].grounded_object, trajs[i].grounded_object);
  }
}

TEST(AgentTest, PrecomputedFeaturesMatchBackboneOutputs) {
  Rng rng(10);
  VisionBackboneConfig bc;
  bc.layers = 1;
  bc.width = 16;
  bc.heads = 2;
  bc.mlp_hidden = 32;
  VisionEncoder backbone(bc, "backbone", rng);
  PromptSet prompts(2, 16, 3);
  EnvironmentParams ep;
  ep.num_nodes = 5;
  const Environment env = generate_environment(4, 123, ep, RenderStyle::indomain());
  const VisualFeatures f = precompute_features(backbone, &prompts, {env});
  EXPECT_EQ(f.width, 16u);
  const NodeFeatures& nf = f.at(4);
  EXPECT_EQ(nf.scene, extract_features(backbone, &prompts, env.scene_views));
  ASSERT_EQ(nf.objects.size(), env.graph.size());
  for (std::size_t v = 0; v < env.graph.size(); ++v) {
    EXPECT_EQ(nf.objects[v], extract_features(backbone, &prompts, env.object_views[v]));
  }
  const VisualFeatures plain = precompute_features(backbone, nullptr, {env});
  EXPECT_NE(plain.at(4).scene, nf.scene);
}

}  // namespace
}  // namespace dap
