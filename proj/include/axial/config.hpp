#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "axial/network.hpp"
#include "axial/training.hpp"

namespace axial {

/// Settings of one training run.
///
/// Text form: one `key=value` per line; `#` starts a comment; blank lines are
/// ignored. Keys: seed, data_dir, out_dir, schedule ("20@0.001,40@0.0001"),
/// batch_size, fold (index or "all"), d_sizes ("8,16,16,16,16,32"),
/// weight_decay, dropout. Omitted keys keep their defaults.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  Schedule schedule;
  std::optional<std::size_t> fold;  // nullopt: every fold in turn
  std::vector<std::size_t> d_sizes{kDefaultWidths.begin(), kDefaultWidths.end()};
  double dropout = 0.5;

  /// Checks values that do not depend on the file system.
  void validate() const;
};

/// Raw key/value pairs of a config text, after comment stripping.
std::map<std::string, std::string> parse_key_values(std::string_view text);

RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Every key, in a fixed order; parse_run_config(serialize(c)) == c.
std::string serialize_run_config(const RunConfig& config);

std::string format_schedule(const std::vector<Phase>& phases);
std::vector<Phase> parse_schedule(std::string_view text);

/// data_dir must hold a readable manifest; out_dir must exist or be
/// creatable (it is created). Throws ConfigError naming the bad path.
void validate_paths(const RunConfig& config);

inline constexpr const char* kManifestName = "manifest.tsv";

}  // namespace axial
