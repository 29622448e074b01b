#include "dap/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <ostream>

#include "dap/agent.hpp"
#include "dap/bundle.hpp"
#include "dap/checkpoint.hpp"
#include "dap/csv.hpp"
#include "dap/pseudo_labeler.hpp"

namespace dap {

namespace fs = std::filesystem;

namespace {

const std::vector<std::pair<std::string, std::string>>& stage_table() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"gen-world", "world"},      {"train-clip", "clip"},   {"pseudo-label", "labels"},
      {"pretrain-backbone", "backbone"}, {"prompt-tune", "prompt"}, {"train-agent", "agent"},
      {"evaluate", "eval"},        {"ablate-k", "ablate"},   {"compare-backbones", "compare"},
      {"report", "report"},
  };
  return table;
}

const std::string& dir_name(std::string_view stage) {
  for (const auto& [name, dir] : stage_table())
    if (name == stage) return dir;
  throw ConfigError("unknown stage '" + std::string(stage) + "'");
}

// A backbone together with the directories and seed streams of everything
// trained on top of it.
struct Variant {
  std::string name;
  std::string prefix;  // seed stream prefix
  std::size_t width;
  fs::path base;       // holds backbone/ prompt/ agent/ eval/
};

struct LoadedWorld {
  std::vector<Environment> envs;
  Splits splits;
  std::map<int, const Environment*> by_id;
};

struct ViewSet {
  std::vector<Tensor> images;
  std::vector<int> labels;
};

ViewSet views_of(const LoadedWorld& world, const std::vector<int>& env_ids) {
  ViewSet out;
  for (int id : env_ids) {
    const Environment& env = *world.by_id.at(id);
    for (std::size_t v = 0; v < env.graph.size(); ++v) {
      out.images.push_back(env.scene_views[v]);
      out.labels.push_back(scene_label(env.graph.scene[v]));
      for (std::size_t k = 0; k < env.graph.objects[v].size(); ++k) {
        out.images.push_back(env.object_views[v][k]);
        out.labels.push_back(object_label(env.graph.objects[v][k]));
      }
    }
  }
  return out;
}

std::string join_ids(const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? "," : "") + std::to_string(ids[i]);
  return out;
}

std::vector<int> parse_ids(std::string_view text) {
  std::vector<int> out;
  for (const auto& field : parse_csv_row(text))
    if (!field.empty()) out.push_back(std::stoi(field));
  return out;
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, dir] : stage_table()) out.push_back(name);
    return out;
  }();
  return names;
}

// ---------------------------------------------------------------------------
// Stage bookkeeping

namespace {

class StageScope {
 public:
  StageScope(const fs::path& dir, std::string stage, std::string hash, std::ostream* log)
      : dir_(dir), stage_(std::move(stage)), hash_(std::move(hash)), log_(log),
        start_(std::chrono::steady_clock::now()) {
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    if (log_) *log_ << "[" << stage_ << "] start" << std::endl;
  }

  void finish() {
    write_text(dir_ / "stage.txt", "stage=" + stage_ + "\nconfig_hash=" + hash_ + "\n");
    if (log_) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
      *log_ << "[" << stage_ << "] done in " << static_cast<long>(secs + 0.5) << " s" << std::endl;
    }
  }

  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::string stage_;
  std::string hash_;
  std::ostream* log_;
  std::chrono::steady_clock::time_point start_;
};

void require_stage(const fs::path& dir, std::string_view stage, const std::string& hash) {
  const fs::path marker = dir / "stage.txt";
  if (!fs::is_regular_file(marker)) {
    throw DependencyError("missing output of stage '" + std::string(stage) + "' under " + dir.string() +
                          "; run it first");
  }
  const std::string text = read_text(marker);
  if (text.find("config_hash=" + hash + "\n") == std::string::npos) {
    throw DependencyError("stale output of stage '" + std::string(stage) + "' under " + dir.string() +
                          ": written under a different config hash");
  }
}

VisionBackboneConfig backbone_config(const RunConfig& c, std::size_t width) {
  VisionBackboneConfig bc;
  bc.layers = c.count("backbone.layers");
  bc.width = width;
  bc.mlp_hidden = 2 * width;
  return bc;
}

LoadedWorld load_world(const fs::path& dir) {
  LoadedWorld w;
  const auto lines = parse_csv(read_text(dir / "splits.csv"), {"split", "envs"});
  for (const auto& row : lines.rows) {
    if (row[0] == "train") w.splits.train_envs = parse_ids(row[1]);
    if (row[0] == "unseen") w.splits.unseen_envs = parse_ids(row[1]);
  }
  std::vector<int> all = w.splits.train_envs;
  all.insert(all.end(), w.splits.unseen_envs.begin(), w.splits.unseen_envs.end());
  std::sort(all.begin(), all.end());
  for (int id : all) w.envs.push_back(load_environment(dir / ("env_" + std::to_string(id))));
  for (const auto& env : w.envs) w.by_id[env.id] = &env;
  w.splits.train = episodes_from_csv(read_text(dir / "train.csv"), w.by_id);
  w.splits.val_seen = episodes_from_csv(read_text(dir / "val_seen.csv"), w.by_id);
  w.splits.val_unseen = episodes_from_csv(read_text(dir / "val_unseen.csv"), w.by_id);
  return w;
}

std::vector<LabeledView> labeled_views(const ViewSet& set) {
  std::vector<LabeledView> out;
  for (std::size_t i = 0; i < set.images.size(); ++i) out.push_back({set.images[i], set.labels[i]});
  return out;
}

AgentConfig agent_config(const RunConfig& c, const Vocabulary& vocab) {
  AgentConfig ac;
  ac.hidden = c.count("agent.hidden");
  ac.text.vocab_size = vocab.size();
  ac.text.width = ac.hidden;
  ac.text.layers = c.count("agent.text_layers");
  ac.text.mlp_hidden = 2 * ac.hidden;
  ac.max_steps = c.count("agent.max_steps");
  return ac;
}

// Everything a variant's downstream stages load.
struct VisualModels {
  VisionEncoder backbone;
  PromptSet prompts;
};

VisualModels load_visual(const RunConfig& c, const Variant& v) {
  VisualModels m;
  Rng rng(0);
  m.backbone = VisionEncoder(backbone_config(c, v.width), "backbone", rng);
  restore(load_checkpoint(v.base / "backbone" / "backbone.ckpt"), m.backbone.parameters());
  const NamedTensors prompts = load_checkpoint(v.base / "prompt" / "prompts.ckpt");
  const Tensor& p0 = prompts.at("prompt.p0");
  m.prompts = PromptSet(p0.rows(), v.width, 0);
  restore(prompts, m.prompts.parameters());
  return m;
}

ParameterList frozen_visual(VisualModels& m) {
  ParameterList out = m.backbone.parameters();
  for (auto* p : m.prompts.parameters()) out.push_back(p);
  return out;
}

void run_pretrain(const RunConfig& c, const Variant& v, const fs::path& dir) {
  const std::uint64_t seed = c.u64("seed");
  Rng rng(derive_seed(seed, v.prefix + "backbone/init"));
  VisionEncoder backbone(backbone_config(c, v.width), "backbone", rng);
  TrainConfig tc;
  tc.epochs = c.count("backbone.epochs");
  tc.batch_size = c.count("backbone.batch");
  tc.optimizer.lr = c.real("backbone.lr");
  tc.seed = derive_seed(seed, v.prefix + "backbone/train");
  const auto views =
      sample_views(c.count("backbone.views"), RenderStyle::web(), derive_seed(seed, v.prefix + "backbone/data"));
  const auto log = pretrain_backbone(backbone, views, label_classes().size(), tc);
  save_checkpoint(dir / "backbone.ckpt", collect(backbone.parameters()), c.hash(), seed);
  write_text(dir / "log.csv", log.csv());
}

void run_prompt(const RunConfig& c, const Variant& v, const fs::path& run, const fs::path& dir) {
  const std::uint64_t seed = c.u64("seed");
  const LoadedWorld world = load_world(run / "world");
  const auto data = load_dataset(run / "labels" / "dataset");
  const auto heldout = labeled_views(views_of(world, world.splits.unseen_envs));
  Rng unused(0);
  VisionEncoder backbone(backbone_config(c, v.width), "backbone", unused);
  restore(load_checkpoint(v.base / "backbone" / "backbone.ckpt"), backbone.parameters());

  MLPHeadConfig hc;
  hc.hidden = c.count("head.hidden");
  hc.linear_only = c.flag("head.linear");
  Rng head_rng(derive_seed(seed, v.prefix + "head/init"));
  MLPHead head_only(v.width, label_classes().size(), hc, head_rng);
  MLPHead head = head_only;
  TrainConfig tc;
  tc.epochs = c.count("prompt.epochs");
  tc.batch_size = c.count("prompt.batch");
  tc.optimizer.lr = c.real("prompt.lr");
  tc.seed = derive_seed(seed, v.prefix + "prompt/train");

  std::vector<Tensor> images;
  std::vector<int> labels;
  for (const auto& p : data) images.push_back(p.image), labels.push_back(p.class_id);
  const auto log0 = train_head(head_only, extract_features(backbone, nullptr, images), labels, tc);
  const double acc0 = accuracy(backbone, nullptr, head_only, heldout);

  const std::size_t k = c.count("prompt.k");
  PromptSet prompts = init_prompts(k, v.width, derive_seed(seed, v.prefix + "prompt/init"));
  const auto logk = prompt_tune(backbone, prompts, head, data, tc);
  const double acck = accuracy(backbone, &prompts, head, heldout);

  save_checkpoint(dir / "prompts.ckpt", collect(prompts.parameters()), c.hash(), seed);
  save_checkpoint(dir / "head.ckpt", collect(head.parameters()), c.hash(), seed);
  save_checkpoint(dir / "head_only.ckpt", collect(head_only.parameters()), c.hash(), seed);
  write_text(dir / "log_k0.csv", log0.csv());
  write_text(dir / ("log_k" + std::to_string(k) + ".csv"), logk.csv());
  std::string csv = csv_row({"method", "k", "first_epoch_loss", "last_epoch_loss", "heldout_acc", "heldout_images"});
  auto row = [&](const std::string& method, std::size_t kk, const TrainingLog& log, double acc) {
    const auto losses = log.epoch_loss();
    csv += csv_row({method, std::to_string(kk), losses.empty() ? "nan" : format_real(losses.front()),
                    losses.empty() ? "nan" : format_real(losses.back()), format_real(acc),
                    std::to_string(heldout.size())});
  };
  row("head_only", 0, log0, acc0);
  row("dap", k, logk, acck);
  write_text(dir / "classification.csv", csv);
}

void run_agent(const RunConfig& c, const Variant& v, const fs::path& run, const fs::path& dir) {
  const std::uint64_t seed = c.u64("seed");
  const LoadedWorld world = load_world(run / "world");
  const Vocabulary vocab = Vocabulary::deserialize(read_text(run / "clip" / "vocab.txt"));
  VisualModels m = load_visual(c, v);
  const ParameterList frozen = frozen_visual(m);
  const AgentConfig ac = agent_config(c, vocab);
  AgentTrainConfig tc;
  tc.epochs = c.count("agent.epochs");
  tc.batch_episodes = c.count("agent.batch");
  tc.optimizer.lr = c.real("agent.lr");
  tc.seed = derive_seed(seed, v.prefix + "agent/train");
  for (const std::string arm : {"baseline", "dap"}) {
    const VisualFeatures features = precompute_features(m.backbone, arm == "dap" ? &m.prompts : nullptr, world.envs);
    Rng rng(derive_seed(seed, v.prefix + "agent/init"));
    CrossModalScorer scorer(ac, v.width, rng);
    const auto log = train_agent(scorer, vocab, world.splits.train, world.by_id, features, tc, frozen);
    save_checkpoint(dir / (arm + ".ckpt"), collect(scorer.parameters()), c.hash(), seed);
    write_text(dir / ("log_" + arm + ".csv"), log.csv());
  }
}

std::vector<EpisodeResult> score_split(NavigationPolicy& policy, const std::vector<Episode>& episodes,
                                       const LoadedWorld& world, std::size_t max_steps, const fs::path& dir,
                                       const std::string& tag) {
  std::vector<Trajectory> trajectories;
  for (const auto& e : episodes) trajectories.push_back(rollout(policy, e, *world.by_id.at(e.env), max_steps));
  write_text(dir / ("trajectories_" + tag + ".csv"), trajectories_to_csv(trajectories));
  const auto replayed = trajectories_from_csv(read_text(dir / ("trajectories_" + tag + ".csv")));
  if (replayed.size() != episodes.size()) throw ContractError("evaluate: trajectory log lost episodes");
  std::vector<EpisodeResult> results;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const ConnectivityGraph& graph = world.by_id.at(episodes[i].env)->graph;
    validate_trajectory(replayed[i], episodes[i], graph, max_steps);
    results.push_back(score_episode(replayed[i], episodes[i], graph));
  }
  write_text(dir / ("episodes_" + tag + ".csv"), episode_results_csv(results));
  return results;
}

void run_eval(const RunConfig& c, const Variant& v, const fs::path& run, const fs::path& dir) {
  const std::uint64_t seed = c.u64("seed");
  const LoadedWorld world = load_world(run / "world");
  const Vocabulary vocab = Vocabulary::deserialize(read_text(run / "clip" / "vocab.txt"));
  VisualModels m = load_visual(c, v);
  const AgentConfig ac = agent_config(c, vocab);
  const std::size_t max_steps = ac.max_steps;
  const std::vector<std::pair<std::string, const std::vector<Episode>*>> splits = {
      {"val_seen", &world.splits.val_seen}, {"val_unseen", &world.splits.val_unseen}};
  MetricsReport report{seed, c.hash(), {}};
  for (const std::string arm : {"baseline", "dap"}) {
    const VisualFeatures features = precompute_features(m.backbone, arm == "dap" ? &m.prompts : nullptr, world.envs);
    Rng rng(0);
    CrossModalScorer scorer(ac, v.width, rng);
    restore(load_checkpoint(v.base / "agent" / (arm + ".ckpt")), scorer.parameters());
    ScorerPolicy policy(scorer, vocab, features);
    for (const auto& [split, episodes] : splits) {
      const auto results = score_split(policy, *episodes, world, max_steps, dir, arm + "_" + split);
      report.rows.push_back(aggregate(results, arm, split));
    }
  }
  write_text(dir / "metrics.csv", report.csv());
  MetricsReport random{seed, c.hash(), {}};
  for (const auto& [split, episodes] : splits) {
    RandomPolicy policy(derive_seed(seed, v.prefix + "eval/random"));
    random.rows.push_back(aggregate(score_split(policy, *episodes, world, max_steps, dir, "random_" + split),
                                    "random", split));
  }
  write_text(dir / "random.csv", random.csv());
}

struct VariantSummary {
  double head_only_acc = 0.0;
  double dap_acc = 0.0;
  double sr_baseline = 0.0;
  double sr_dap = 0.0;
  double spl_baseline = 0.0;
  double spl_dap = 0.0;
};

VariantSummary summarize(const Variant& v) {
  VariantSummary s;
  const auto cls = parse_csv(read_text(v.base / "prompt" / "classification.csv"));
  for (const auto& row : cls.rows) {
    const double acc = std::stod(row[cls.column("heldout_acc")]);
    (row[0] == "dap" ? s.dap_acc : s.head_only_acc) = acc;
  }
  const auto metrics = parse_csv(read_text(v.base / "eval" / "metrics.csv"));
  for (const auto& row : metrics.rows) {
    if (row[metrics.column("split")] != "val_unseen") continue;
    const bool dap = row[metrics.column("method")] == "dap";
    (dap ? s.sr_dap : s.sr_baseline) = std::stod(row[metrics.column("SR")]);
    (dap ? s.spl_dap : s.spl_baseline) = std::stod(row[metrics.column("SPL")]);
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(RunConfig config, fs::path root, std::ostream* log)
    : config_(std::move(config)), root_(std::move(root)), log_(log) {}

fs::path Pipeline::stage_dir(std::string_view stage) const { return run_dir() / dir_name(stage); }

void Pipeline::gen_world() {
  StageScope scope(stage_dir("gen-world"), "gen-world", config_.hash(), log_);
  fs::create_directories(run_dir());
  write_text(run_dir() / "config.txt", config_.canonical());
  const std::uint64_t seed = config_.u64("seed");
  EnvironmentParams ep;
  ep.num_nodes = config_.count("world.nodes");
  ep.avg_degree = config_.real("world.avg_degree");
  std::vector<Environment> envs;
  for (std::size_t i = 0; i < config_.count("world.envs"); ++i) {
    envs.push_back(generate_environment(static_cast<int>(i), derive_seed(seed, "world/env", i), ep,
                                        RenderStyle::indomain()));
  }
  SplitCounts counts;
  counts.train_envs = config_.count("world.train_envs");
  counts.train_episodes_per_env = config_.count("world.train_episodes_per_env");
  counts.val_seen_episodes_per_env = config_.count("world.val_seen_episodes_per_env");
  counts.unseen_episodes_per_env = config_.count("world.unseen_episodes_per_env");
  EpisodeParams params;
  params.min_hops = config_.count("world.min_hops");
  params.max_hops = config_.count("world.max_hops");
  params.threshold = config_.real("world.threshold");
  params.reverie_fraction = config_.real("world.reverie_fraction");
  const Splits splits = make_splits(envs, counts, params, derive_seed(seed, "world/splits"));
  for (const auto& env : envs) save_environment(scope.dir() / ("env_" + std::to_string(env.id)), env);
  write_text(scope.dir() / "splits.csv", csv_row({"split", "envs"}) +
                                             csv_row({"train", join_ids(splits.train_envs)}) +
                                             csv_row({"unseen", join_ids(splits.unseen_envs)}));
  write_text(scope.dir() / "train.csv", episodes_to_csv(splits.train));
  write_text(scope.dir() / "val_seen.csv", episodes_to_csv(splits.val_seen));
  write_text(scope.dir() / "val_unseen.csv", episodes_to_csv(splits.val_unseen));
  scope.finish();
}

void Pipeline::train_clip() {
  const std::uint64_t seed = config_.u64("seed");
  StageScope scope(stage_dir("train-clip"), "train-clip", config_.hash(), log_);
  const Vocabulary vocab(grammar_words());
  DualEncoderConfig dc;
  dc.text.vocab_size = vocab.size();
  Rng rng(derive_seed(seed, "clip/init"));
  DualEncoder clip(dc, rng);
  const auto classes = label_classes();
  std::vector<ImageTextPair> pairs;
  for (auto& v : sample_views(config_.count("clip.pairs"), RenderStyle::web(), derive_seed(seed, "clip/data"))) {
    pairs.push_back({v.image, fill_template(config_.text("label.template"), classes[static_cast<std::size_t>(v.label)])});
  }
  ContrastiveConfig cc;
  cc.epochs = config_.count("clip.epochs");
  cc.batch_size = config_.count("clip.batch");
  cc.optimizer.lr = config_.real("clip.lr");
  cc.seed = derive_seed(seed, "clip/train");
  if (!config_.flag("clip.augment")) cc.augment.reset();
  const auto log = contrastive_train(clip, vocab, pairs, cc);
  save_checkpoint(scope.dir() / "clip.ckpt", collect(clip.parameters()), config_.hash(), seed);
  write_text(scope.dir() / "vocab.txt", vocab.serialize());
  std::string csv = csv_row({"epoch", "loss"});
  for (std::size_t i = 0; i < log.epoch_loss.size(); ++i) {
    csv += csv_row({std::to_string(i + 1), format_real(log.epoch_loss[i])});
  }
  write_text(scope.dir() / "log.csv", csv);
  scope.finish();
}

void Pipeline::pseudo_label() {
  const std::uint64_t seed = config_.u64("seed");
  require_stage(stage_dir("gen-world"), "gen-world", config_.hash());
  require_stage(stage_dir("train-clip"), "train-clip", config_.hash());
  StageScope scope(stage_dir("pseudo-label"), "pseudo-label", config_.hash(), log_);
  const LoadedWorld world = load_world(stage_dir("gen-world"));
  const Vocabulary vocab = Vocabulary::deserialize(read_text(stage_dir("train-clip") / "vocab.txt"));
  DualEncoderConfig dc;
  dc.text.vocab_size = vocab.size();
  Rng rng(0);
  DualEncoder clip(dc, rng);
  restore(load_checkpoint(stage_dir("train-clip") / "clip.ckpt"), clip.parameters());
  const ViewSet pool = views_of(world, world.splits.train_envs);
  const auto ds = build_indomain_dataset(clip, vocab, pool.images, label_classes(), config_.text("label.template"),
                                         config_.count("label.count"), derive_seed(seed, "labels/sample"));
  std::size_t agree = 0;
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) agree += ds.pairs[i].class_id == pool.labels[ds.source[i]];
  save_dataset(scope.dir() / "dataset", ds.pairs);
  write_text(scope.dir() / "agreement.csv",
             csv_row({"images", "agreement"}) +
                 csv_row({std::to_string(ds.pairs.size()),
                          format_real(static_cast<double>(agree) / static_cast<double>(ds.pairs.size()))}));
  scope.finish();
}

void Pipeline::pretrain_backbone() {
  StageScope scope(stage_dir("pretrain-backbone"), "pretrain-backbone", config_.hash(), log_);
  run_pretrain(config_, {"a", "", config_.count("backbone.width"), run_dir()}, scope.dir());
  scope.finish();
}

void Pipeline::prompt_tune() {
  for (const char* s : {"gen-world", "pseudo-label", "pretrain-backbone"}) require_stage(stage_dir(s), s, config_.hash());
  StageScope scope(stage_dir("prompt-tune"), "prompt-tune", config_.hash(), log_);
  run_prompt(config_, {"a", "", config_.count("backbone.width"), run_dir()}, run_dir(), scope.dir());
  scope.finish();
}

void Pipeline::train_agent() {
  for (const char* s : {"gen-world", "train-clip", "pretrain-backbone", "prompt-tune"}) {
    require_stage(stage_dir(s), s, config_.hash());
  }
  StageScope scope(stage_dir("train-agent"), "train-agent", config_.hash(), log_);
  run_agent(config_, {"a", "", config_.count("backbone.width"), run_dir()}, run_dir(), scope.dir());
  scope.finish();
}

void Pipeline::evaluate() {
  for (const char* s : {"gen-world", "train-clip", "pretrain-backbone", "prompt-tune", "train-agent"}) {
    require_stage(stage_dir(s), s, config_.hash());
  }
  StageScope scope(stage_dir("evaluate"), "evaluate", config_.hash(), log_);
  run_eval(config_, {"a", "", config_.count("backbone.width"), run_dir()}, run_dir(), scope.dir());
  scope.finish();
}

void Pipeline::ablate_k() {
  for (const char* s : {"gen-world", "pseudo-label", "pretrain-backbone"}) require_stage(stage_dir(s), s, config_.hash());
  StageScope scope(stage_dir("ablate-k"), "ablate-k", config_.hash(), log_);
  std::string csv = csv_row({"k", "heldout_acc", "last_epoch_loss"});
  for (std::size_t k : config_.counts("ablate.k")) {
    RunConfig c = config_;
    c.set("prompt.k", std::to_string(k));
    const fs::path tmp = scope.dir() / ("k" + std::to_string(k));
    fs::create_directories(tmp);
    run_prompt(c, {"a", "", c.count("backbone.width"), run_dir()}, run_dir(), tmp);
    const auto cls = parse_csv(read_text(tmp / "classification.csv"));
    const auto& row = cls.rows.at(k == 0 ? 0 : 1);
    csv += csv_row({std::to_string(k), row[cls.column("heldout_acc")], row[cls.column("last_epoch_loss")]});
    fs::remove_all(tmp);
  }
  write_text(scope.dir() / "ablation.csv", csv);
  scope.finish();
}

void Pipeline::compare_backbones() {
  for (const char* s : {"gen-world", "train-clip", "pseudo-label", "pretrain-backbone", "prompt-tune", "evaluate"}) {
    require_stage(stage_dir(s), s, config_.hash());
  }
  StageScope scope(stage_dir("compare-backbones"), "compare-backbones", config_.hash(), log_);
  const Variant a{"a", "", config_.count("backbone.width"), run_dir()};
  const Variant b{"b", "compare/", config_.count("compare.width"), scope.dir()};
  for (const char* sub : {"backbone", "prompt", "agent", "eval"}) fs::create_directories(b.base / sub);
  run_pretrain(config_, b, b.base / "backbone");
  run_prompt(config_, b, run_dir(), b.base / "prompt");
  run_agent(config_, b, run_dir(), b.base / "agent");
  run_eval(config_, b, run_dir(), b.base / "eval");
  std::string csv = csv_row({"backbone", "width", "head_only_acc", "dap_acc", "acc_delta", "SR_baseline", "SR_dap",
                             "SR_delta", "SPL_baseline", "SPL_dap", "seed", "config_hash"});
  for (const Variant* v : {&a, &b}) {
    const VariantSummary s = summarize(*v);
    csv += csv_row({v->name, std::to_string(v->width), format_real(s.head_only_acc), format_real(s.dap_acc),
                    format_real(s.dap_acc - s.head_only_acc), format_real(s.sr_baseline), format_real(s.sr_dap),
                    format_real(s.sr_dap - s.sr_baseline), format_real(s.spl_baseline), format_real(s.spl_dap),
                    config_.text("seed"), config_.hash()});
  }
  write_text(scope.dir() / "backbones.csv", csv);
  scope.finish();
}

void Pipeline::report() {
  for (const char* s : {"prompt-tune", "evaluate"}) require_stage(stage_dir(s), s, config_.hash());
  StageScope scope(stage_dir("report"), "report", config_.hash(), log_);
  fs::copy_file(stage_dir("evaluate") / "metrics.csv", scope.dir() / "report.csv");
  fs::copy_file(stage_dir("evaluate") / "random.csv", scope.dir() / "random.csv");
  fs::copy_file(stage_dir("prompt-tune") / "classification.csv", scope.dir() / "classification.csv");
  if (fs::is_regular_file(stage_dir("compare-backbones") / "stage.txt")) {
    require_stage(stage_dir("compare-backbones"), "compare-backbones", config_.hash());
    fs::copy_file(stage_dir("compare-backbones") / "backbones.csv", scope.dir() / "backbones.csv");
  }
  if (fs::is_regular_file(stage_dir("ablate-k") / "stage.txt")) {
    require_stage(stage_dir("ablate-k"), "ablate-k", config_.hash());
    fs::copy_file(stage_dir("ablate-k") / "ablation.csv", scope.dir() / "ablation.csv");
  }
  scope.finish();
}

void Pipeline::run_stage(std::string_view name) {
  dir_name(name);
  if (name == "gen-world") gen_world();
  else if (name == "train-clip") train_clip();
  else if (name == "pseudo-label") pseudo_label();
  else if (name == "pretrain-backbone") pretrain_backbone();
  else if (name == "prompt-tune") prompt_tune();
  else if (name == "train-agent") train_agent();
  else if (name == "evaluate") evaluate();
  else if (name == "ablate-k") ablate_k();
  else if (name == "compare-backbones") compare_backbones();
  else if (name == "report") report();
}

void Pipeline::run_all() {
  for (const auto& name : stage_names())
    if (name != "ablate-k") run_stage(name);
}

}  // namespace dap
