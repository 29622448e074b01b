#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dap {

/// Malformed configuration: unknown key, bad value, unreadable file.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat key=value run configuration. Every key has a default; loading a file
/// or applying an override replaces single values and rejects unknown keys.
/// Lines starting with '#' and blank lines are ignored.
class RunConfig {
 public:
  RunConfig();

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& file);

  void set(std::string_view key, std::string_view value);
  /// "key=value"
  void apply(std::string_view assignment);

  const std::string& text(std::string_view key) const;
  std::uint64_t u64(std::string_view key) const;
  std::size_t count(std::string_view key) const;
  double real(std::string_view key) const;
  bool flag(std::string_view key) const;
  std::vector<std::size_t> counts(std::string_view key) const;

  /// Sorted "key=value" lines covering every key.
  std::string canonical() const;
  /// First 16 hex digits of SHA-256 over canonical().
  std::string hash() const;
  const std::map<std::string, std::string, std::less<>>& values() const { return values_; }

  static std::vector<std::string> keys();

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

}  // namespace dap
