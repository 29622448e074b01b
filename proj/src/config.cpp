#include "dap/config.hpp"

#include <charconv>
#include <cmath>

#include "dap/checkpoint.hpp"

namespace dap {

namespace {

enum class Kind { kU64, kCount, kReal, kFlag, kText, kCounts };

struct KeySpec {
  const char* key;
  Kind kind;
  const char* fallback;
};

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> specs = {
      {"seed", Kind::kU64, "1"},
      {"world.envs", Kind::kCount, "25"},
      {"world.train_envs", Kind::kCount, "20"},
      {"world.nodes", Kind::kCount, "30"},
      {"world.avg_degree", Kind::kReal, "3"},
      {"world.train_episodes_per_env", Kind::kCount, "50"},
      {"world.val_seen_episodes_per_env", Kind::kCount, "10"},
      {"world.unseen_episodes_per_env", Kind::kCount, "40"},
      {"world.min_hops", Kind::kCount, "2"},
      {"world.max_hops", Kind::kCount, "6"},
      {"world.threshold", Kind::kReal, "3"},
      {"world.reverie_fraction", Kind::kReal, "0.3"},
      {"clip.pairs", Kind::kCount, "4800"},
      {"clip.epochs", Kind::kCount, "8"},
      {"clip.batch", Kind::kCount, "12"},
      {"clip.lr", Kind::kReal, "0.0003"},
      {"clip.augment", Kind::kFlag, "true"},
      {"label.count", Kind::kCount, "1000"},
      {"label.template", Kind::kText, "A photo of a {object}"},
      {"backbone.layers", Kind::kCount, "4"},
      {"backbone.width", Kind::kCount, "64"},
      {"backbone.views", Kind::kCount, "1500"},
      {"backbone.epochs", Kind::kCount, "2"},
      {"backbone.batch", Kind::kCount, "20"},
      {"backbone.lr", Kind::kReal, "0.001"},
      {"prompt.k", Kind::kCount, "10"},
      {"prompt.epochs", Kind::kCount, "20"},
      {"prompt.batch", Kind::kCount, "10"},
      {"prompt.lr", Kind::kReal, "0.001"},
      {"head.hidden", Kind::kCount, "64"},
      {"head.linear", Kind::kFlag, "false"},
      {"agent.hidden", Kind::kCount, "64"},
      {"agent.text_layers", Kind::kCount, "2"},
      {"agent.epochs", Kind::kCount, "10"},
      {"agent.batch", Kind::kCount, "8"},
      {"agent.lr", Kind::kReal, "0.001"},
      {"agent.max_steps", Kind::kCount, "20"},
      {"compare.width", Kind::kCount, "48"},
      {"ablate.k", Kind::kCounts, "0,1,5,10,20"},
  };
  return specs;
}

const KeySpec* find_spec(std::string_view key) {
  for (const auto& s : schema())
    if (key == s.key) return &s;
  return nullptr;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_integer(std::string_view s, T& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

bool parse_real(std::string_view s, double& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && !s.empty() && std::isfinite(out);
}

std::vector<std::string_view> split_commas(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t begin = 0;
  while (true) {
    const std::size_t comma = s.find(',', begin);
    out.push_back(trim(s.substr(begin, comma == std::string_view::npos ? std::string_view::npos : comma - begin)));
    if (comma == std::string_view::npos) break;
    begin = comma + 1;
  }
  return out;
}

void check_value(const KeySpec& spec, std::string_view value) {
  const std::string where = "config: " + std::string(spec.key) + "=" + std::string(value);
  switch (spec.kind) {
    case Kind::kU64:
    case Kind::kCount: {
      std::uint64_t v;
      if (!parse_integer(value, v)) throw ConfigError(where + " is not a nonnegative integer");
      break;
    }
    case Kind::kReal: {
      double v;
      if (!parse_real(value, v)) throw ConfigError(where + " is not a finite number");
      break;
    }
    case Kind::kFlag:
      if (value != "true" && value != "false") throw ConfigError(where + " must be true or false");
      break;
    case Kind::kText:
      if (value.find('\n') != std::string_view::npos) throw ConfigError(where + " spans lines");
      break;
    case Kind::kCounts:
      for (auto part : split_commas(value)) {
        std::size_t v;
        if (!parse_integer(part, v)) throw ConfigError(where + " is not a comma-separated list of integers");
      }
      break;
  }
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& s : schema()) values_.emplace(s.key, s.fallback);
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& s : schema()) out.emplace_back(s.key);
  return out;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const KeySpec* spec = find_spec(key);
  if (!spec) throw ConfigError("config: unknown key '" + std::string(key) + "'");
  value = trim(value);
  check_value(*spec, value);
  values_.find(key)->second = std::string(value);
}

void RunConfig::apply(std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("config: expected key=value, got '" + std::string(assignment) + "'");
  }
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig config;
  std::size_t line_no = 0;
  std::size_t begin = 0;
  while (begin <= text.size()) {
    std::size_t end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = trim(text.substr(begin, end - begin));
    ++line_no;
    if (!line.empty() && line.front() != '#') {
      try {
        config.apply(line);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string(e.what()) + " (line " + std::to_string(line_no) + ")");
      }
    }
    begin = end + 1;
  }
  return config;
}

RunConfig RunConfig::load(const std::filesystem::path& file) {
  if (!std::filesystem::is_regular_file(file)) throw ConfigError("config: cannot read " + file.string());
  return parse(read_text(file));
}

const std::string& RunConfig::text(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key '" + std::string(key) + "'");
  return it->second;
}

std::uint64_t RunConfig::u64(std::string_view key) const {
  std::uint64_t v = 0;
  parse_integer(std::string_view(text(key)), v);
  return v;
}

std::size_t RunConfig::count(std::string_view key) const {
  std::size_t v = 0;
  parse_integer(std::string_view(text(key)), v);
  return v;
}

double RunConfig::real(std::string_view key) const {
  double v = 0.0;
  parse_real(text(key), v);
  return v;
}

bool RunConfig::flag(std::string_view key) const { return text(key) == "true"; }

std::vector<std::size_t> RunConfig::counts(std::string_view key) const {
  std::vector<std::size_t> out;
  for (auto part : split_commas(text(key))) {
    std::size_t v = 0;
    parse_integer(part, v);
    out.push_back(v);
  }
  return out;
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::string RunConfig::hash() const { return sha256_hex(canonical()).substr(0, 16); }

}  // namespace dap
