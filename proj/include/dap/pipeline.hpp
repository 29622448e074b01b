#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dap/config.hpp"

namespace dap {

/// A stage's upstream output is missing or was written under another config.
class DependencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Subcommand names in pipeline order.
const std::vector<std::string>& stage_names();

/// Runs pipeline stages under <root>/<config hash>/<stage>/. Each stage checks
/// that its upstream stages finished under the same config, clears its own
/// directory, writes its artifacts and finally a stage.txt marker.
///
/// Layout:
///   world/     env_<id>/ bundles, splits.txt, train.csv, val_seen.csv, val_unseen.csv
///   clip/      clip.ckpt, vocab.txt, log.csv
///   labels/    dataset/, agreement.csv
///   backbone/  backbone.ckpt, log.csv
///   prompt/    prompts.ckpt, head.ckpt, head_only.ckpt, classification.csv, log_k*.csv
///   agent/     baseline.ckpt, dap.ckpt, log_baseline.csv, log_dap.csv
///   eval/      metrics.csv, random.csv, trajectories_*.csv, episodes_*.csv
///   ablate/    ablation.csv
///   compare/   backbone/ prompt/ agent/ eval/ for the second backbone, backbones.csv
///   report/    report.csv plus copies of the other tables
class Pipeline {
 public:
  Pipeline(RunConfig config, std::filesystem::path root, std::ostream* log = nullptr);

  const RunConfig& config() const { return config_; }
  std::filesystem::path run_dir() const { return root_ / config_.hash(); }
  std::filesystem::path stage_dir(std::string_view stage) const;

  void gen_world();
  void train_clip();
  void pseudo_label();
  void pretrain_backbone();
  void prompt_tune();
  void train_agent();
  void evaluate();
  void ablate_k();
  void compare_backbones();
  void report();

  /// Runs one stage by subcommand name; throws ConfigError for an unknown name.
  void run_stage(std::string_view name);
  /// Every stage except ablate-k, in order.
  void run_all();

 private:
  RunConfig config_;
  std::filesystem::path root_;
  std::ostream* log_;
};

}  // namespace dap
