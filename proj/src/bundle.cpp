#include "dap/bundle.hpp"

#include <sstream>

#include "dap/checkpoint.hpp"
#include "dap/csv.hpp"
#include "dap/image_io.hpp"

namespace dap {

namespace {

int class_index(const std::vector<std::string>& names, const std::string& name) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  throw ContractError("unknown class name '" + name + "'");
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ContractError("malformed line '" + line + "'");
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

std::filesystem::path object_render(const std::filesystem::path& dir, std::size_t v, int object) {
  return dir / "renders" / ("node" + std::to_string(v) + "_" + object_classes()[static_cast<std::size_t>(object)] + ".png");
}

}  // namespace

void save_environment(const std::filesystem::path& dir, const Environment& env) {
  const auto& g = env.graph;
  std::ostringstream meta;
  meta << "id=" << env.id << "\nseed=" << env.seed << "\nstyle=" << style_name(env.style) << "\nnodes=" << g.size()
       << "\n";
  write_text(dir / "env.txt", meta.str());
  std::ostringstream edges;
  for (auto [a, b] : g.edges()) edges << a << ' ' << b << '\n';
  write_text(dir / "edges.txt", edges.str());
  std::string nodes = csv_row({"node", "x", "y", "scene", "objects"});
  for (std::size_t v = 0; v < g.size(); ++v) {
    std::string objs;
    for (int o : g.objects[v]) objs += (objs.empty() ? "" : ";") + object_classes()[static_cast<std::size_t>(o)];
    nodes += csv_row({std::to_string(v), format_real(g.positions[v].x), format_real(g.positions[v].y),
                      scene_classes()[static_cast<std::size_t>(g.scene[v])], objs});
    write_png(dir / "renders" / ("node" + std::to_string(v) + ".png"), env.scene_views[v]);
    for (std::size_t k = 0; k < g.objects[v].size(); ++k) {
      write_png(object_render(dir, v, g.objects[v][k]), env.object_views[v][k]);
    }
  }
  write_text(dir / "nodes.csv", nodes);
}

Environment load_environment(const std::filesystem::path& dir) {
  const auto meta = parse_key_values(read_text(dir / "env.txt"));
  for (const char* key : {"id", "seed", "style", "nodes"})
    if (!meta.contains(key)) throw ContractError("env.txt: missing key '" + std::string(key) + "'");
  Environment env;
  env.id = std::stoi(meta.at("id"));
  env.seed = std::stoull(meta.at("seed"));
  env.style = parse_style(meta.at("style"));
  const std::size_t n = std::stoull(meta.at("nodes"));
  auto& g = env.graph;
  g.positions.resize(n);
  g.neighbors.resize(n);
  g.scene.resize(n);
  g.objects.resize(n);
  const auto table = parse_csv(read_text(dir / "nodes.csv"), {"node", "x", "y", "scene", "objects"});
  if (table.rows.size() != n) throw ContractError("nodes.csv: expected " + std::to_string(n) + " rows");
  for (const auto& row : table.rows) {
    const std::size_t v = std::stoull(row[0]);
    if (v >= n) throw ContractError("nodes.csv: node id out of range");
    g.positions[v] = {std::stod(row[1]), std::stod(row[2])};
    g.scene[v] = class_index(scene_classes(), row[3]);
    std::istringstream objs(row[4]);
    std::string name;
    while (std::getline(objs, name, ';')) g.objects[v].push_back(class_index(object_classes(), name));
  }
  std::istringstream edges(read_text(dir / "edges.txt"));
  int a = 0, b = 0;
  while (edges >> a >> b) g.add_edge(a, b);
  if (!g.connected()) throw ContractError("environment bundle: graph is not connected");
  for (std::size_t v = 0; v < n; ++v) {
    env.scene_views.push_back(read_png(dir / "renders" / ("node" + std::to_string(v) + ".png")));
    std::vector<Tensor> views;
    for (int o : g.objects[v]) views.push_back(read_png(object_render(dir, v, o)));
    env.object_views.push_back(std::move(views));
  }
  env.geodesic = all_pairs_geodesic(g);
  return env;
}

std::string episodes_to_csv(const std::vector<Episode>& episodes) {
  std::string out = csv_row({"env", "start", "goal", "kind", "seed", "instruction", "target_object", "threshold"});
  for (const auto& e : episodes) {
    out += csv_row({std::to_string(e.env), std::to_string(e.start), std::to_string(e.goal), kind_name(e.kind),
                    std::to_string(e.seed), e.instruction, object_classes()[static_cast<std::size_t>(e.target_object)],
                    format_real(e.threshold)});
  }
  return out;
}

std::vector<Episode> episodes_from_csv(const std::string& text, const std::map<int, const Environment*>& envs,
                                       int first_id) {
  const auto table =
      parse_csv(text, {"env", "start", "goal", "kind", "seed", "instruction", "target_object", "threshold"});
  std::vector<Episode> out;
  for (const auto& row : table.rows) {
    Episode e;
    e.id = first_id + static_cast<int>(out.size());
    e.env = std::stoi(row[0]);
    e.start = std::stoi(row[1]);
    e.goal = std::stoi(row[2]);
    e.kind = parse_kind(row[3]);
    e.seed = std::stoull(row[4]);
    e.instruction = row[5];
    e.target_object = class_index(object_classes(), row[6]);
    e.threshold = std::stod(row[7]);
    auto it = envs.find(e.env);
    if (it == envs.end()) throw ContractError("episodes: unknown environment " + row[0]);
    e.path = shortest_path(it->second->graph, e.start, e.goal).nodes;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace dap
