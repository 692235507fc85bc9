#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pcdiff/networks.hpp"
#include "pcdiff/sample.hpp"
#include "pcdiff/train.hpp"

namespace pcdiff {

/// Everything a run can be configured with. Loaded from `key = value` text.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SamplerVariant sampler = SamplerVariant::PaperDirect;
  std::set<std::string> explicit_keys;  // keys set by the user

  /// Applies one key. Throws std::invalid_argument for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  bool is_set(const std::string& key) const { return explicit_keys.contains(key); }

  /// Fully resolved `key = value` listing in a fixed key order; floats use %.17g.
  std::string render() const;
};

const std::vector<std::string>& config_keys();

/// Parses `key = value` lines; `#` starts a comment. Errors carry the line number.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);

RunConfig load_config(const std::filesystem::path& path);
void apply_config_text(RunConfig& config, const std::string& text);

}  // namespace pcdiff
