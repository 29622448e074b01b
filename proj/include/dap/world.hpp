#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dap/rng.hpp"
#include "dap/tensor.hpp"

namespace dap {

// ---------------------------------------------------------------------------
// Class sets

const std::vector<std::string>& object_classes();
const std::vector<std::string>& scene_classes();
/// Pseudo-label candidates: object classes followed by scene classes.
std::vector<std::string> label_classes();
inline int scene_label(int scene) { return static_cast<int>(object_classes().size()) + scene; }
inline int object_label(int object) { return object; }

/// Every word the instruction and caption grammars can emit.
std::vector<std::string> grammar_words();

// ---------------------------------------------------------------------------
// Rendering

enum class StyleTag { kWeb, kInDomain };

const char* style_name(StyleTag tag);
StyleTag parse_style(const std::string& name);

/// Render parameters. The two presets differ only in saturation, tint,
/// brightness, noise and glyph contrast; geometry, palettes, patterns and
/// glyph shapes are shared. Web renders are clean and vivid, in-domain renders
/// are washed out, warm, dim and noisy.
struct RenderStyle {
  StyleTag tag = StyleTag::kWeb;
  double saturation_lo = 1.0;
  double saturation_hi = 1.0;
  std::array<double, 3> tint{1.0, 1.0, 1.0};
  double tint_jitter = 0.0;  // per-channel relative spread around `tint`
  double brightness_lo = 0.8;
  double brightness_hi = 1.0;
  double pattern_contrast = 0.4;
  double noise_sigma = 0.02;
  double glyph_contrast = 0.9;

  static RenderStyle web();
  static RenderStyle indomain();
  static RenderStyle preset(StyleTag tag) { return tag == StyleTag::kWeb ? web() : indomain(); }
};

inline constexpr std::size_t kImageSize = 16;
inline constexpr std::size_t kImageChannels = 3;

/// 16×16×3 image of a scene background. Values are multiples of 1/255.
Tensor render_scene_view(int scene, const RenderStyle& style, Rng& rng);
/// Object glyph in front of a scene background.
Tensor render_object_view(int object, int scene, const RenderStyle& style, Rng& rng);

/// A rendered image with its generator ground-truth label.
struct LabeledView {
  Tensor image;
  int label = 0;  // index into label_classes()
};

/// Balanced random scene/object views in one style.
std::vector<LabeledView> sample_views(std::size_t count, const RenderStyle& style, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Graphs

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct ConnectivityGraph {
  std::vector<Vec2> positions;
  std::vector<std::vector<int>> neighbors;  // ascending ids
  std::vector<int> scene;                   // per node, index into scene_classes()
  std::vector<std::vector<int>> objects;    // per node, indices into object_classes()

  std::size_t size() const { return positions.size(); }
  bool contains(int node) const { return node >= 0 && static_cast<std::size_t>(node) < size(); }
  bool adjacent(int a, int b) const;
  double edge_length(int a, int b) const;
  void add_edge(int a, int b);
  /// Undirected edges with a < b, in ascending order.
  std::vector<std::pair<int, int>> edges() const;
  bool connected() const;
};

struct EnvironmentParams {
  std::size_t num_nodes = 30;
  double avg_degree = 3.0;
  double area_per_node = 13.0;  // square meters of floor per node
  std::size_t min_objects = 1;
  std::size_t max_objects = 2;
};

struct Environment {
  int id = 0;
  std::uint64_t seed = 0;
  ConnectivityGraph graph;
  StyleTag style = StyleTag::kInDomain;
  std::vector<Tensor> scene_views;                // per node
  std::vector<std::vector<Tensor>> object_views;  // per node, aligned with graph.objects
  std::vector<std::vector<double>> geodesic;      // all-pairs shortest path lengths
};

ConnectivityGraph generate_graph(std::uint64_t seed, const EnvironmentParams& params);
Environment generate_environment(int id, std::uint64_t seed, const EnvironmentParams& params,
                                 const RenderStyle& style);

struct PathResult {
  std::vector<int> nodes;
  double length = 0.0;
};

/// Dijkstra from `a`; ties between equal tentative distances go to the lower
/// node id. Lengths accumulate from `a` along the path.
PathResult shortest_path(const ConnectivityGraph& graph, int a, int b);
/// Shortest path lengths from `source` to every node.
std::vector<double> geodesic_from(const ConnectivityGraph& graph, int source);
/// Row i holds shortest path lengths from source i.
std::vector<std::vector<double>> all_pairs_geodesic(const ConnectivityGraph& graph);
/// Fewest-edge distance between two nodes.
std::size_t hop_distance(const ConnectivityGraph& graph, int a, int b);

// ---------------------------------------------------------------------------
// Episodes

enum class EpisodeKind { kR2RLike, kReverieLike };
const char* kind_name(EpisodeKind kind);
EpisodeKind parse_kind(const std::string& name);

struct Episode {
  int id = 0;
  int env = 0;
  int start = 0;
  int goal = 0;
  EpisodeKind kind = EpisodeKind::kR2RLike;
  std::uint64_t seed = 0;
  std::string instruction;
  std::vector<int> path;   // shortest path start..goal
  int target_object = 0;   // index into object_classes(), present at goal
  double threshold = 3.0;  // success radius
};

/// r2r_like: one clause per node after the start naming its scene, then the
/// target object; reverie_like: target object and goal scene only.
std::string generate_instruction(const ConnectivityGraph& graph, const std::vector<int>& path,
                                 EpisodeKind kind, int target_object, std::uint64_t seed);

struct EpisodeParams {
  std::size_t min_hops = 2;
  std::size_t max_hops = 6;
  double threshold = 3.0;
  double reverie_fraction = 0.0;
};

/// Samples one episode. Start and goal are at least `min_hops` apart and the
/// goal lies outside the success radius of the start.
Episode sample_episode(const Environment& env, int id, std::uint64_t seed, const EpisodeParams& params);

struct SplitCounts {
  std::size_t train_envs = 20;
  std::size_t train_episodes_per_env = 50;
  std::size_t val_seen_episodes_per_env = 10;
  std::size_t unseen_episodes_per_env = 40;
};

struct Splits {
  std::vector<int> train_envs;
  std::vector<int> unseen_envs;
  std::vector<Episode> train;
  std::vector<Episode> val_seen;
  std::vector<Episode> val_unseen;
};

/// Assigns environments to seen/unseen by a seeded shuffle. val_seen uses
/// training environments with start/goal pairs absent from the train split;
/// val_unseen uses only held-out environments. Episode ids number each split
/// from 0.
Splits make_splits(const std::vector<Environment>& envs, const SplitCounts& counts,
                   const EpisodeParams& params, std::uint64_t seed);

}  // namespace dap
