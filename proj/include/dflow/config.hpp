#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>

namespace dflow {

/// Flat "key = value" settings. Blank lines and '#' comments are ignored.
/// Later assignments (including command-line overrides) replace earlier ones.
class Config {
 public:
  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  void set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }
  bool has(std::string_view key) const { return values_.find(key) != values_.end(); }
  const std::map<std::string, std::string, std::less<>>& values() const { return values_; }

  std::string get_string(std::string_view key, std::string fallback) const;
  double get_double(std::string_view key, double fallback) const;
  int get_int(std::string_view key, int fallback) const;
  std::uint64_t get_u64(std::string_view key, std::uint64_t fallback) const;

  /// Throws UsageError naming the first key not in `known`.
  void require_known(std::span<const std::string_view> known) const;

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

}  // namespace dflow
