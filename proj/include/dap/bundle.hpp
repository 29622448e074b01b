#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dap/world.hpp"

namespace dap {

// Environment bundle layout under <dir>:
//   env.txt     key=value: id, seed, style, nodes
//   edges.txt   one "a b" line per undirected edge, a < b
//   nodes.csv   node,x,y,scene,objects   (objects are ';'-joined class names)
//   renders/node<v>.png, renders/node<v>_<object>.png

void save_environment(const std::filesystem::path& dir, const Environment& env);
Environment load_environment(const std::filesystem::path& dir);

/// CSV with header env,start,goal,kind,seed,instruction,target_object,threshold.
/// The episode id is the row index; paths are not stored.
std::string episodes_to_csv(const std::vector<Episode>& episodes);
/// Parses an episode CSV, recomputing each shortest path from `envs` (keyed
/// by environment id) and numbering episodes from `first_id`.
std::vector<Episode> episodes_from_csv(const std::string& text, const std::map<int, const Environment*>& envs,
                                       int first_id = 0);

}  // namespace dap
