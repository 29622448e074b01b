#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dap/world.hpp"

namespace dap {

/// Nodes visited by a rollout, starting at the episode start.
struct Trajectory {
  int episode_id = 0;
  std::vector<int> nodes;
  bool stopped = false;                // the agent chose STOP (rather than hitting the step cap)
  std::optional<int> grounded_object;  // reverie_like only, index into object_classes()
};

/// Throws ContractError unless the trajectory is nonempty, starts at the
/// episode start, moves only along edges and has at most max_steps moves.
void validate_trajectory(const Trajectory& traj, const Episode& episode, const ConnectivityGraph& graph,
                         std::size_t max_steps);

/// CSV episode_id,step,node,action,stop,grounded_object with one row per
/// visited node. `action` is the next node id, "stop", or "cap" on the last
/// row; `stop` and `grounded_object` are filled on the last row only.
std::string trajectories_to_csv(const std::vector<Trajectory>& trajectories);
std::vector<Trajectory> trajectories_from_csv(const std::string& text);

struct EpisodeResult {
  int episode_id = 0;
  EpisodeKind kind = EpisodeKind::kR2RLike;
  double tl = 0.0;
  double ne = 0.0;
  bool success = false;
  bool oracle_success = false;
  double spl = 0.0;
  bool rgs = false;
  double rgspl = 0.0;
};

/// TL, NE, SR, OSR and SPL per the standard definitions with graph-geodesic
/// distances; RGS = SR and grounded object equals the target.
EpisodeResult score_episode(const Trajectory& traj, const Episode& episode, const ConnectivityGraph& graph);

/// Split means. SR, OSR, SPL, RGS and RGSPL are percentages; TL and NE are
/// distance units. RGS and RGSPL average over reverie_like episodes only and
/// are NaN when the split has none.
struct SplitSummary {
  std::string method;
  std::string split;
  std::size_t episodes = 0;
  std::size_t grounding_episodes = 0;
  double tl = 0.0;
  double ne = 0.0;
  double sr = 0.0;
  double spl = 0.0;
  double osr = 0.0;
  double rgs = 0.0;
  double rgspl = 0.0;
};

SplitSummary aggregate(const std::vector<EpisodeResult>& results, const std::string& method,
                       const std::string& split);

struct MetricsReport {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<SplitSummary> rows;

  /// method,split,episodes,TL,NE,SR,SPL,OSR,RGS,RGSPL,seed,config_hash
  std::string csv() const;
};

/// Per-episode CSV: episode_id,kind,TL,NE,SR,OSR,SPL,RGS,RGSPL.
std::string episode_results_csv(const std::vector<EpisodeResult>& results);

}  // namespace dap
