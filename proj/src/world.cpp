#include "dap/world.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <queue>
#include <set>

namespace dap {

// ---------------------------------------------------------------------------
// Class sets

const std::vector<std::string>& object_classes() {
  static const std::vector<std::string> k = {"chair", "table", "bed", "lamp", "sofa", "plant"};
  return k;
}

const std::vector<std::string>& scene_classes() {
  static const std::vector<std::string> k = {"bedroom", "kitchen", "bathroom", "office", "hallway", "lounge"};
  return k;
}

std::vector<std::string> label_classes() {
  std::vector<std::string> out = object_classes();
  out.insert(out.end(), scene_classes().begin(), scene_classes().end());
  return out;
}

namespace {

const std::array<std::array<const char*, 3>, 3> kFirstVerbs = {{
    {"walk", "to", "the"}, {"go", "to", "the"}, {"head", "to", "the"}}};
const std::array<std::array<const char*, 3>, 3> kNextVerbs = {{
    {"then", "enter", "the"}, {"then", "reach", "the"}, {"then", "visit", "the"}}};
const std::array<const char*, 3> kFindVerbs = {"find", "locate", "approach"};

}  // namespace

std::vector<std::string> grammar_words() {
  std::vector<std::string> out = label_classes();
  for (const auto& v : kFirstVerbs) out.insert(out.end(), v.begin(), v.end());
  for (const auto& v : kNextVerbs) out.insert(out.end(), v.begin(), v.end());
  out.insert(out.end(), kFindVerbs.begin(), kFindVerbs.end());
  for (const char* w : {"stop", "near", "in", "a", "photo", "of", ",", "."}) out.emplace_back(w);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

const char* style_name(StyleTag tag) { return tag == StyleTag::kWeb ? "web" : "indomain"; }

StyleTag parse_style(const std::string& name) {
  if (name == "web") return StyleTag::kWeb;
  if (name == "indomain") return StyleTag::kInDomain;
  throw ContractError("unknown render style '" + name + "'");
}

RenderStyle RenderStyle::web() { return RenderStyle{}; }

RenderStyle RenderStyle::indomain() {
  RenderStyle s;
  s.tag = StyleTag::kInDomain;
  s.saturation_lo = 0.6;
  s.saturation_hi = 0.6;
  s.tint = {1.06, 0.98, 0.86};
  s.tint_jitter = 0.0;
  s.brightness_lo = 0.6;
  s.brightness_hi = 0.85;
  s.pattern_contrast = 0.4;
  s.noise_sigma = 0.06;
  s.glyph_contrast = 0.7;
  return s;
}

namespace {

struct SceneLook {
  std::array<double, 3> color;
  int pattern;
};

const std::array<SceneLook, 6> kSceneLooks = {{
    {{0.62, 0.32, 0.86}, 0},  // bedroom: violet, horizontal stripes
    {{0.86, 0.80, 0.22}, 1},  // kitchen: yellow, coarse checker
    {{0.22, 0.72, 0.78}, 2},  // bathroom: cyan, fine tiles
    {{0.28, 0.70, 0.30}, 3},  // office: green, vertical stripes
    {{0.36, 0.50, 0.92}, 4},  // hallway: blue, diagonal stripes
    {{0.84, 0.26, 0.22}, 5},  // lounge: red, dots
}};

using Glyph = std::array<const char*, 5>;
const std::array<Glyph, 6> kGlyphs = {{
    {"#....", "#....", "#####", "#...#", "#...#"},  // chair
    {"#####", "#####", "#...#", "#...#", "#...#"},  // table
    {"#####", "#...#", "#...#", "#...#", "#####"},  // bed
    {"..#..", "..#..", "..#..", "..#..", "#####"},  // lamp
    {"#...#", "#...#", "#####", "#####", "....."},  // sofa
    {"#.#.#", "#.#.#", ".###.", "..#..", "..#.."},  // plant
}};

bool pattern_on(int pattern, std::size_t x, std::size_t y, std::size_t px, std::size_t py) {
  x += px;
  y += py;
  switch (pattern) {
    case 0: return (y / 2) % 2 == 0;
    case 1: return ((x / 4) + (y / 4)) % 2 == 0;
    case 2: return ((x / 2) + (y / 2)) % 2 == 0;
    case 3: return (x / 2) % 2 == 0;
    case 4: return ((x + y) / 2) % 2 == 0;
    default: return (x % 4 == 1 || x % 4 == 2) && (y % 4 == 1 || y % 4 == 2);
  }
}

struct Canvas {
  std::vector<double> px = std::vector<double>(kImageSize * kImageSize * kImageChannels);
  std::array<double, 3> base{};
  double& at(std::size_t x, std::size_t y, std::size_t c) { return px[(y * kImageSize + x) * kImageChannels + c]; }
};

Canvas paint_background(int scene, const RenderStyle& style, Rng& rng) {
  if (scene < 0 || static_cast<std::size_t>(scene) >= kSceneLooks.size()) {
    throw ContractError("render: unknown scene class " + std::to_string(scene));
  }
  const auto& look = kSceneLooks[static_cast<std::size_t>(scene)];
  Canvas cv;
  for (std::size_t c = 0; c < 3; ++c) cv.base[c] = look.color[c] + rng.uniform(-0.06, 0.06);
  const double gray = (cv.base[0] + cv.base[1] + cv.base[2]) / 3.0;
  const double saturation = rng.uniform(style.saturation_lo, style.saturation_hi);
  for (auto& v : cv.base) v = gray + saturation * (v - gray);
  const std::size_t phase_x = rng.below(4), phase_y = rng.below(4);
  for (std::size_t y = 0; y < kImageSize; ++y)
    for (std::size_t x = 0; x < kImageSize; ++x) {
      const double m = pattern_on(look.pattern, x, y, phase_x, phase_y) ? 1.0 + style.pattern_contrast / 2
                                                                         : 1.0 - style.pattern_contrast / 2;
      for (std::size_t c = 0; c < 3; ++c) cv.at(x, y, c) = cv.base[c] * m;
    }
  return cv;
}

Tensor finish(Canvas& cv, const RenderStyle& style, Rng& rng) {
  const double brightness = rng.uniform(style.brightness_lo, style.brightness_hi);
  std::array<double, 3> tint = style.tint;
  for (auto& t : tint) t *= 1.0 + rng.uniform(-style.tint_jitter, style.tint_jitter);
  Tensor img({kImageSize, kImageSize, kImageChannels});
  for (std::size_t i = 0; i < cv.px.size(); ++i) {
    double v = cv.px[i] * tint[i % 3] * brightness + rng.normal(0.0, style.noise_sigma);
    v = std::clamp(v, 0.0, 1.0);
    img[i] = std::round(v * 255.0) / 255.0;
  }
  return img;
}

}  // namespace

Tensor render_scene_view(int scene, const RenderStyle& style, Rng& rng) {
  Canvas cv = paint_background(scene, style, rng);
  return finish(cv, style, rng);
}

Tensor render_object_view(int object, int scene, const RenderStyle& style, Rng& rng) {
  if (object < 0 || static_cast<std::size_t>(object) >= kGlyphs.size()) {
    throw ContractError("render: unknown object class " + std::to_string(object));
  }
  Canvas cv = paint_background(scene, style, rng);
  const double lum = 0.299 * cv.base[0] + 0.587 * cv.base[1] + 0.114 * cv.base[2];
  std::array<double, 3> ink = lum > 0.45 ? std::array<double, 3>{0.08, 0.08, 0.10}
                                         : std::array<double, 3>{0.95, 0.95, 0.90};
  for (auto& v : ink) v = std::clamp(v + rng.uniform(-0.05, 0.05), 0.0, 1.0);
  const std::size_t ox = 2 + rng.below(3), oy = 2 + rng.below(3);
  const auto& glyph = kGlyphs[static_cast<std::size_t>(object)];
  for (std::size_t gy = 0; gy < 5; ++gy)
    for (std::size_t gx = 0; gx < 5; ++gx) {
      if (glyph[gy][gx] != '#') continue;
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx)
          for (std::size_t c = 0; c < 3; ++c) {
            double& p = cv.at(ox + 2 * gx + dx, oy + 2 * gy + dy, c);
            p = (1.0 - style.glyph_contrast) * p + style.glyph_contrast * ink[c];
          }
    }
  return finish(cv, style, rng);
}

std::vector<LabeledView> sample_views(std::size_t count, const RenderStyle& style, std::uint64_t seed) {
  Rng rng(seed);
  const int n_obj = static_cast<int>(object_classes().size());
  const int n_labels = static_cast<int>(label_classes().size());
  std::vector<LabeledView> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(rng.below(static_cast<std::size_t>(n_labels)));
    if (label < n_obj) {
      const int scene = static_cast<int>(rng.below(scene_classes().size()));
      out.push_back({render_object_view(label, scene, style, rng), label});
    } else {
      out.push_back({render_scene_view(label - n_obj, style, rng), label});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Graphs

bool ConnectivityGraph::adjacent(int a, int b) const {
  if (!contains(a) || !contains(b)) return false;
  const auto& n = neighbors[static_cast<std::size_t>(a)];
  return std::binary_search(n.begin(), n.end(), b);
}

double ConnectivityGraph::edge_length(int a, int b) const {
  if (!adjacent(a, b)) {
    throw ContractError("graph: nodes " + std::to_string(a) + " and " + std::to_string(b) + " are not adjacent");
  }
  const auto& p = positions[static_cast<std::size_t>(a)];
  const auto& q = positions[static_cast<std::size_t>(b)];
  return std::hypot(p.x - q.x, p.y - q.y);
}

void ConnectivityGraph::add_edge(int a, int b) {
  if (a == b) throw ContractError("graph: self-loop at node " + std::to_string(a));
  if (!contains(a) || !contains(b)) throw ContractError("graph: edge endpoint out of range");
  auto insert = [](std::vector<int>& v, int x) {
    auto it = std::lower_bound(v.begin(), v.end(), x);
    if (it == v.end() || *it != x) v.insert(it, x);
  };
  insert(neighbors[static_cast<std::size_t>(a)], b);
  insert(neighbors[static_cast<std::size_t>(b)], a);
}

std::vector<std::pair<int, int>> ConnectivityGraph::edges() const {
  std::vector<std::pair<int, int>> out;
  for (std::size_t a = 0; a < size(); ++a)
    for (int b : neighbors[a])
      if (static_cast<int>(a) < b) out.emplace_back(static_cast<int>(a), b);
  return out;
}

bool ConnectivityGraph::connected() const {
  if (size() == 0) return true;
  std::vector<char> seen(size(), 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (int v : neighbors[static_cast<std::size_t>(u)]) {
      if (!seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = 1;
        ++count;
        stack.push_back(v);
      }
    }
  }
  return count == size();
}

ConnectivityGraph generate_graph(std::uint64_t seed, const EnvironmentParams& params) {
  if (params.num_nodes < 2) throw ContractError("generate_environment: need at least 2 nodes");
  if (!(params.avg_degree > 0.0) || !(params.area_per_node > 0.0)) {
    throw ContractError("generate_environment: degree and area per node must be positive");
  }
  if (params.min_objects < 1 || params.max_objects < params.min_objects ||
      params.max_objects > object_classes().size()) {
    throw ContractError("generate_environment: object counts must satisfy 1 <= min <= max <= " +
                        std::to_string(object_classes().size()));
  }
  Rng rng(seed);
  const std::size_t n = params.num_nodes;
  const double side = std::sqrt(static_cast<double>(n) * params.area_per_node);
  const double min_sep = 1.0;
  ConnectivityGraph g;
  g.neighbors.resize(n);
  while (g.positions.size() < n) {
    Vec2 p{rng.uniform(0.0, side), rng.uniform(0.0, side)};
    bool ok = true;
    for (const auto& q : g.positions) ok = ok && std::hypot(p.x - q.x, p.y - q.y) >= min_sep;
    // Separation is best effort on very dense layouts.
    if (ok || rng.uniform() < 0.01) g.positions.push_back(p);
  }
  const double radius =
      std::sqrt(params.avg_degree * side * side / (static_cast<double>(n - 1) * std::numbers::pi));
  struct Pair {
    double d;
    int a, b;
  };
  std::vector<Pair> pairs;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      const double d = std::hypot(g.positions[a].x - g.positions[b].x, g.positions[a].y - g.positions[b].y);
      pairs.push_back({d, static_cast<int>(a), static_cast<int>(b)});
      if (d <= radius) g.add_edge(static_cast<int>(a), static_cast<int>(b));
    }
  // Spanning tree (Kruskal) so the graph is connected whatever the radius.
  std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
    return std::tie(x.d, x.a, x.b) < std::tie(y.d, y.a, y.b);
  });
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  for (const auto& p : pairs) {
    const int ra = find(p.a), rb = find(p.b);
    if (ra == rb) continue;
    parent[static_cast<std::size_t>(ra)] = rb;
    g.add_edge(p.a, p.b);
  }
  g.scene.resize(n);
  g.objects.resize(n);
  for (std::size_t v = 0; v < n; ++v) {
    g.scene[v] = static_cast<int>(rng.below(scene_classes().size()));
    const std::size_t k = params.min_objects + rng.below(params.max_objects - params.min_objects + 1);
    std::vector<int> pool(object_classes().size());
    std::iota(pool.begin(), pool.end(), 0);
    rng.shuffle(pool);
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    g.objects[v] = pool;
  }
  return g;
}

Environment generate_environment(int id, std::uint64_t seed, const EnvironmentParams& params,
                                 const RenderStyle& style) {
  Environment env;
  env.id = id;
  env.seed = seed;
  env.style = style.tag;
  env.graph = generate_graph(seed, params);
  Rng rng(derive_seed(seed, "render"));
  for (std::size_t v = 0; v < env.graph.size(); ++v) {
    env.scene_views.push_back(render_scene_view(env.graph.scene[v], style, rng));
    std::vector<Tensor> objs;
    for (int o : env.graph.objects[v]) objs.push_back(render_object_view(o, env.graph.scene[v], style, rng));
    env.object_views.push_back(std::move(objs));
  }
  env.geodesic = all_pairs_geodesic(env.graph);
  return env;
}

namespace {

struct Dijkstra {
  std::vector<double> dist;
  std::vector<int> prev;
};

Dijkstra run_dijkstra(const ConnectivityGraph& g, int source) {
  const std::size_t n = g.size();
  Dijkstra r{std::vector<double>(n, std::numeric_limits<double>::infinity()), std::vector<int>(n, -1)};
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  std::vector<char> done(n, 0);
  r.dist[static_cast<std::size_t>(source)] = 0.0;
  pq.emplace(0.0, source);
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (done[static_cast<std::size_t>(u)]) continue;
    done[static_cast<std::size_t>(u)] = 1;
    for (int v : g.neighbors[static_cast<std::size_t>(u)]) {
      const double nd = d + g.edge_length(u, v);
      auto& dv = r.dist[static_cast<std::size_t>(v)];
      if (nd < dv) {
        dv = nd;
        r.prev[static_cast<std::size_t>(v)] = u;
        pq.emplace(nd, v);
      }
    }
  }
  return r;
}

void require_node(const ConnectivityGraph& g, int v, const char* what) {
  if (!g.contains(v)) throw ContractError(std::string(what) + ": unknown node " + std::to_string(v));
}

}  // namespace

PathResult shortest_path(const ConnectivityGraph& graph, int a, int b) {
  require_node(graph, a, "shortest_path");
  require_node(graph, b, "shortest_path");
  const auto r = run_dijkstra(graph, a);
  PathResult out;
  out.length = r.dist[static_cast<std::size_t>(b)];
  if (!std::isfinite(out.length)) throw ContractError("shortest_path: nodes are disconnected");
  for (int v = b; v != -1; v = r.prev[static_cast<std::size_t>(v)]) out.nodes.push_back(v);
  std::reverse(out.nodes.begin(), out.nodes.end());
  return out;
}

std::vector<double> geodesic_from(const ConnectivityGraph& graph, int source) {
  require_node(graph, source, "geodesic_from");
  return run_dijkstra(graph, source).dist;
}

std::vector<std::vector<double>> all_pairs_geodesic(const ConnectivityGraph& graph) {
  std::vector<std::vector<double>> out;
  for (std::size_t s = 0; s < graph.size(); ++s) out.push_back(run_dijkstra(graph, static_cast<int>(s)).dist);
  return out;
}

std::size_t hop_distance(const ConnectivityGraph& graph, int a, int b) {
  require_node(graph, a, "hop_distance");
  require_node(graph, b, "hop_distance");
  std::vector<std::size_t> hops(graph.size(), std::numeric_limits<std::size_t>::max());
  std::queue<int> q;
  hops[static_cast<std::size_t>(a)] = 0;
  q.push(a);
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int v : graph.neighbors[static_cast<std::size_t>(u)]) {
      if (hops[static_cast<std::size_t>(v)] == std::numeric_limits<std::size_t>::max()) {
        hops[static_cast<std::size_t>(v)] = hops[static_cast<std::size_t>(u)] + 1;
        q.push(v);
      }
    }
  }
  return hops[static_cast<std::size_t>(b)];
}

// ---------------------------------------------------------------------------
// Episodes

const char* kind_name(EpisodeKind kind) { return kind == EpisodeKind::kR2RLike ? "r2r_like" : "reverie_like"; }

EpisodeKind parse_kind(const std::string& name) {
  if (name == "r2r_like") return EpisodeKind::kR2RLike;
  if (name == "reverie_like") return EpisodeKind::kReverieLike;
  throw ContractError("unknown episode kind '" + name + "'");
}

std::string generate_instruction(const ConnectivityGraph& graph, const std::vector<int>& path,
                                 EpisodeKind kind, int target_object, std::uint64_t seed) {
  if (path.empty()) throw ContractError("generate_instruction: empty path");
  for (int v : path) require_node(graph, v, "generate_instruction");
  if (target_object < 0 || static_cast<std::size_t>(target_object) >= object_classes().size()) {
    throw ContractError("generate_instruction: unknown target object");
  }
  if (path.size() == 1) return "stop .";
  Rng rng(seed);
  const auto& obj = object_classes()[static_cast<std::size_t>(target_object)];
  std::string out;
  if (kind == EpisodeKind::kReverieLike) {
    const auto& scene = scene_classes()[static_cast<std::size_t>(graph.scene[static_cast<std::size_t>(path.back())])];
    out = std::string(kFindVerbs[rng.below(kFindVerbs.size())]) + " the " + obj + " in the " + scene + " .";
    return out;
  }
  for (std::size_t i = 1; i < path.size(); ++i) {
    const auto& verb = i == 1 ? kFirstVerbs[rng.below(kFirstVerbs.size())] : kNextVerbs[rng.below(kNextVerbs.size())];
    const auto& scene = scene_classes()[static_cast<std::size_t>(graph.scene[static_cast<std::size_t>(path[i])])];
    out += std::string(verb[0]) + " " + verb[1] + " " + verb[2] + " " + scene + " , ";
  }
  out += "stop near the " + obj + " .";
  return out;
}

Episode sample_episode(const Environment& env, int id, std::uint64_t seed, const EpisodeParams& params) {
  const auto& g = env.graph;
  Rng rng(seed);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const int start = static_cast<int>(rng.below(g.size()));
    const int goal = static_cast<int>(rng.below(g.size()));
    if (start == goal) continue;
    const std::size_t hops = hop_distance(g, start, goal);
    if (hops < params.min_hops || hops > params.max_hops) continue;
    if (env.geodesic[static_cast<std::size_t>(start)][static_cast<std::size_t>(goal)] <= params.threshold) continue;
    Episode e;
    e.id = id;
    e.env = env.id;
    e.start = start;
    e.goal = goal;
    e.seed = seed;
    e.threshold = params.threshold;
    e.kind = rng.uniform() < params.reverie_fraction ? EpisodeKind::kReverieLike : EpisodeKind::kR2RLike;
    e.path = shortest_path(g, start, goal).nodes;
    const auto& objs = g.objects[static_cast<std::size_t>(goal)];
    e.target_object = objs[rng.below(objs.size())];
    e.instruction = generate_instruction(g, e.path, e.kind, e.target_object, derive_seed(seed, "instruction"));
    return e;
  }
  throw ContractError("sample_episode: no start/goal pair satisfies the hop and radius limits");
}

Splits make_splits(const std::vector<Environment>& envs, const SplitCounts& counts, const EpisodeParams& params,
                   std::uint64_t seed) {
  if (envs.size() < 2) throw ContractError("make_splits: need at least 2 environments");
  if (counts.train_envs == 0 || counts.train_envs >= envs.size()) {
    throw ContractError("make_splits: need at least one training and one held-out environment");
  }
  Rng rng(seed);
  std::vector<std::size_t> order(envs.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  Splits s;
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(counts.train_envs));
  std::vector<std::size_t> unseen_idx(order.begin() + static_cast<std::ptrdiff_t>(counts.train_envs), order.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(unseen_idx.begin(), unseen_idx.end());
  for (std::size_t i : train_idx) {
    const auto& env = envs[i];
    s.train_envs.push_back(env.id);
    std::set<std::pair<int, int>> used;
    std::uint64_t counter = 0;
    for (std::size_t k = 0; k < counts.train_episodes_per_env; ++k) {
      auto e = sample_episode(env, static_cast<int>(s.train.size()), derive_seed(seed, "train/" + std::to_string(env.id), counter++), params);
      used.emplace(e.start, e.goal);
      s.train.push_back(std::move(e));
    }
    for (std::size_t k = 0; k < counts.val_seen_episodes_per_env;) {
      auto e = sample_episode(env, static_cast<int>(s.val_seen.size()), derive_seed(seed, "val_seen/" + std::to_string(env.id), counter++), params);
      if (used.contains({e.start, e.goal})) {
        if (counter > 100000) throw ContractError("make_splits: cannot find fresh start/goal pairs");
        continue;
      }
      used.emplace(e.start, e.goal);
      ++k;
      s.val_seen.push_back(std::move(e));
    }
  }
  for (std::size_t i : unseen_idx) {
    const auto& env = envs[i];
    s.unseen_envs.push_back(env.id);
    for (std::size_t k = 0; k < counts.unseen_episodes_per_env; ++k) {
      s.val_unseen.push_back(
          sample_episode(env, static_cast<int>(s.val_unseen.size()), derive_seed(seed, "val_unseen/" + std::to_string(env.id), k), params));
    }
  }
  return s;
}

}  // namespace dap
