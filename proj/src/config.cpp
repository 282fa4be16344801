#include "dflow/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "dflow/error.hpp"

namespace dflow {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T convert(std::string_view key, const std::string& text) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw UsageError("config: invalid value '" + text + "' for " + std::string(key));
  }
  return value;
}

}  // namespace

Config Config::parse(std::string_view text) {
  Config config;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    view = trim(view.substr(0, view.find('#')));
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(view.substr(0, eq));
    if (key.empty()) throw UsageError("config line " + std::to_string(line_no) + ": empty key");
    config.set(std::string(key), std::string(trim(view.substr(eq + 1))));
  }
  return config;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

std::string Config::get_string(std::string_view key, std::string fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? std::move(fallback) : it->second;
}

double Config::get_double(std::string_view key, double fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : convert<double>(key, it->second);
}

int Config::get_int(std::string_view key, int fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : convert<int>(key, it->second);
}

std::uint64_t Config::get_u64(std::string_view key, std::uint64_t fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : convert<std::uint64_t>(key, it->second);
}

void Config::require_known(std::span<const std::string_view> known) const {
  for (const auto& [key, value] : values_) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw UsageError("config: unknown key '" + key + "'");
    }
  }
}

}  // namespace dflow
