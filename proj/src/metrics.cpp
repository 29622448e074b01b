#include "dap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dap/csv.hpp"

namespace dap {

namespace {

void check_path(const Trajectory& traj, const Episode& episode, const ConnectivityGraph& graph) {
  const std::string where = "trajectory for episode " + std::to_string(traj.episode_id);
  if (traj.nodes.empty()) throw ContractError(where + " is empty");
  if (traj.nodes.front() != episode.start) {
    throw ContractError(where + " starts at node " + std::to_string(traj.nodes.front()) + ", episode starts at " +
                        std::to_string(episode.start));
  }
  for (std::size_t i = 0; i < traj.nodes.size(); ++i) {
    if (!graph.contains(traj.nodes[i])) {
      throw ContractError(where + ": node " + std::to_string(traj.nodes[i]) + " is not in the graph");
    }
    if (i > 0 && !graph.adjacent(traj.nodes[i - 1], traj.nodes[i])) {
      throw ContractError(where + ": nodes " + std::to_string(traj.nodes[i - 1]) + " and " +
                          std::to_string(traj.nodes[i]) + " are not adjacent");
    }
  }
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

void validate_trajectory(const Trajectory& traj, const Episode& episode, const ConnectivityGraph& graph,
                         std::size_t max_steps) {
  check_path(traj, episode, graph);
  if (traj.nodes.size() > max_steps + 1) {
    throw ContractError("trajectory for episode " + std::to_string(traj.episode_id) + " makes " +
                        std::to_string(traj.nodes.size() - 1) + " moves, cap is " + std::to_string(max_steps));
  }
}

std::string trajectories_to_csv(const std::vector<Trajectory>& trajectories) {
  std::string out = csv_row({"episode_id", "step", "node", "action", "stop", "grounded_object"});
  for (const auto& t : trajectories) {
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
      const bool last = i + 1 == t.nodes.size();
      std::string action = last ? (t.stopped ? "stop" : "cap") : std::to_string(t.nodes[i + 1]);
      std::string stop = last ? (t.stopped ? "1" : "0") : "";
      std::string grounded;
      if (last && t.grounded_object) grounded = object_classes().at(static_cast<std::size_t>(*t.grounded_object));
      out += csv_row({std::to_string(t.episode_id), std::to_string(i), std::to_string(t.nodes[i]), action, stop,
                      grounded});
    }
  }
  return out;
}

std::vector<Trajectory> trajectories_from_csv(const std::string& text) {
  const auto table = parse_csv(text, {"episode_id", "step", "node", "action", "stop", "grounded_object"});
  std::vector<Trajectory> out;
  bool open = false;
  for (const auto& row : table.rows) {
    const int id = std::stoi(row[0]);
    const std::size_t step = std::stoul(row[1]);
    if (!open) {
      if (step != 0) throw ContractError("trajectory csv: episode " + row[0] + " does not start at step 0");
      out.push_back({id, {}, false, std::nullopt});
      open = true;
    }
    Trajectory& t = out.back();
    if (t.episode_id != id || step != t.nodes.size()) {
      throw ContractError("trajectory csv: rows of episode " + row[0] + " are out of order");
    }
    t.nodes.push_back(std::stoi(row[2]));
    const std::string& action = row[3];
    if (action == "stop" || action == "cap") {
      t.stopped = action == "stop";
      if (!row[5].empty()) {
        const auto& objs = object_classes();
        auto it = std::find(objs.begin(), objs.end(), row[5]);
        if (it == objs.end()) throw ContractError("trajectory csv: unknown object '" + row[5] + "'");
        t.grounded_object = static_cast<int>(it - objs.begin());
      }
      open = false;
    } else if (action != std::to_string(std::stoi(action))) {
      throw ContractError("trajectory csv: bad action '" + action + "'");
    }
  }
  if (open) throw ContractError("trajectory csv: last episode has no final row");
  return out;
}

EpisodeResult score_episode(const Trajectory& traj, const Episode& episode, const ConnectivityGraph& graph) {
  check_path(traj, episode, graph);
  if (!graph.contains(episode.goal)) throw ContractError("score_episode: goal is not in the graph");
  const auto to_goal = geodesic_from(graph, episode.goal);
  EpisodeResult r;
  r.episode_id = episode.id;
  r.kind = episode.kind;
  for (std::size_t i = 1; i < traj.nodes.size(); ++i) r.tl += graph.edge_length(traj.nodes[i - 1], traj.nodes[i]);
  r.ne = to_goal[static_cast<std::size_t>(traj.nodes.back())];
  r.success = r.ne <= episode.threshold;
  for (int v : traj.nodes) r.oracle_success = r.oracle_success || to_goal[static_cast<std::size_t>(v)] <= episode.threshold;
  const double ell = to_goal[static_cast<std::size_t>(episode.start)];
  const double efficiency = ell == 0.0 ? 1.0 : ell / std::max(ell, r.tl);
  r.spl = r.success ? efficiency : 0.0;
  r.rgs = r.success && traj.grounded_object && *traj.grounded_object == episode.target_object;
  r.rgspl = r.rgs ? efficiency : 0.0;
  return r;
}

SplitSummary aggregate(const std::vector<EpisodeResult>& results, const std::string& method,
                       const std::string& split) {
  if (results.empty()) throw ContractError("aggregate: split '" + split + "' has no episodes");
  std::vector<double> tl, ne, sr, spl, osr, rgs, rgspl;
  for (const auto& r : results) {
    tl.push_back(r.tl);
    ne.push_back(r.ne);
    sr.push_back(r.success ? 100.0 : 0.0);
    spl.push_back(100.0 * r.spl);
    osr.push_back(r.oracle_success ? 100.0 : 0.0);
    if (r.kind == EpisodeKind::kReverieLike) {
      rgs.push_back(r.rgs ? 100.0 : 0.0);
      rgspl.push_back(100.0 * r.rgspl);
    }
  }
  SplitSummary s;
  s.method = method;
  s.split = split;
  s.episodes = results.size();
  s.grounding_episodes = rgs.size();
  s.tl = mean_of(tl);
  s.ne = mean_of(ne);
  s.sr = mean_of(sr);
  s.spl = mean_of(spl);
  s.osr = mean_of(osr);
  s.rgs = mean_of(rgs);
  s.rgspl = mean_of(rgspl);
  return s;
}

std::string MetricsReport::csv() const {
  std::string out = csv_row({"method", "split", "episodes", "TL", "NE", "SR", "SPL", "OSR", "RGS", "RGSPL", "seed",
                             "config_hash"});
  for (const auto& r : rows) {
    out += csv_row({r.method, r.split, std::to_string(r.episodes), format_real(r.tl), format_real(r.ne),
                    format_real(r.sr), format_real(r.spl), format_real(r.osr), format_real(r.rgs),
                    format_real(r.rgspl), std::to_string(seed), config_hash});
  }
  return out;
}

std::string episode_results_csv(const std::vector<EpisodeResult>& results) {
  std::string out = csv_row({"episode_id", "kind", "TL", "NE", "SR", "OSR", "SPL", "RGS", "RGSPL"});
  for (const auto& r : results) {
    out += csv_row({std::to_string(r.episode_id), kind_name(r.kind), format_real(r.tl), format_real(r.ne),
                    r.success ? "1" : "0", r.oracle_success ? "1" : "0", format_real(r.spl), r.rgs ? "1" : "0",
                    format_real(r.rgspl)});
  }
  return out;
}

}  // namespace dap
