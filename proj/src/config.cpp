#include "axial/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

namespace axial {

namespace {

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {"seed",     "data_dir", "out_dir",      "schedule", "batch_size",
                                                "fold",     "d_sizes",  "weight_decay", "dropout"};
  return keys;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || end != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || end != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("config key '" + key + "': expected a finite number, got '" + v + "'");
  }
  return out;
}

std::string shortest(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace

void RunConfig::validate() const {
  schedule.validate();
  if (d_sizes.size() != kDefaultWidths.size()) {
    throw ConfigError("d_sizes needs " + std::to_string(kDefaultWidths.size()) + " entries, got " +
                      std::to_string(d_sizes.size()));
  }
  for (auto d : d_sizes) {
    if (d == 0) throw ConfigError("d_sizes entries must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value, got '" + line + "'");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (std::find(known_keys().begin(), known_keys().end(), key) == known_keys().end()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (!out.emplace(key, value).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

std::vector<Phase> parse_schedule(std::string_view text) {
  std::vector<Phase> phases;
  for (const auto& item : split(text, ',')) {
    const auto at = item.find('@');
    if (at == std::string::npos) throw ConfigError("schedule item '" + item + "': expected epochs@lr");
    phases.push_back({static_cast<std::size_t>(to_u64("schedule", trim(item.substr(0, at)))),
                      to_double("schedule", trim(item.substr(at + 1)))});
  }
  return phases;
}

std::string format_schedule(const std::vector<Phase>& phases) {
  std::string out;
  for (std::size_t i = 0; i < phases.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(phases[i].epochs) + '@' + shortest(phases[i].lr);
  }
  return out;
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig c;
  for (const auto& [key, value] : parse_key_values(text)) {
    if (key == "seed") {
      c.seed = to_u64(key, value);
    } else if (key == "data_dir") {
      c.data_dir = value;
    } else if (key == "out_dir") {
      c.out_dir = value;
    } else if (key == "schedule") {
      c.schedule.phases = parse_schedule(value);
    } else if (key == "batch_size") {
      c.schedule.batch_size = static_cast<std::size_t>(to_u64(key, value));
    } else if (key == "weight_decay") {
      c.schedule.fc_weight_decay = to_double(key, value);
    } else if (key == "fold") {
      if (value == "all") {
        c.fold.reset();
      } else {
        c.fold = static_cast<std::size_t>(to_u64(key, value));
      }
    } else if (key == "d_sizes") {
      c.d_sizes.clear();
      for (const auto& d : split(value, ',')) c.d_sizes.push_back(static_cast<std::size_t>(to_u64(key, d)));
    } else if (key == "dropout") {
      c.dropout = to_double(key, value);
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string serialize_run_config(const RunConfig& c) {
  std::string d_sizes;
  for (std::size_t i = 0; i < c.d_sizes.size(); ++i) {
    if (i) d_sizes += ',';
    d_sizes += std::to_string(c.d_sizes[i]);
  }
  std::ostringstream os;
  os << "seed=" << c.seed << '\n'
     << "data_dir=" << c.data_dir.string() << '\n'
     << "out_dir=" << c.out_dir.string() << '\n'
     << "schedule=" << format_schedule(c.schedule.phases) << '\n'
     << "batch_size=" << c.schedule.batch_size << '\n'
     << "fold=" << (c.fold ? std::to_string(*c.fold) : std::string("all")) << '\n'
     << "d_sizes=" << d_sizes << '\n'
     << "weight_decay=" << shortest(c.schedule.fc_weight_decay) << '\n'
     << "dropout=" << shortest(c.dropout) << '\n';
  return os.str();
}

void validate_paths(const RunConfig& c) {
  namespace fs = std::filesystem;
  if (c.data_dir.empty()) throw ConfigError("data_dir is not set");
  if (!fs::is_directory(c.data_dir)) throw ConfigError("data_dir " + c.data_dir.string() + " is not a directory");
  const fs::path manifest = c.data_dir / kManifestName;
  if (!fs::is_regular_file(manifest)) throw ConfigError("data_dir lacks " + manifest.string());
  if (c.out_dir.empty()) throw ConfigError("out_dir is not set");
  std::error_code ec;
  fs::create_directories(c.out_dir, ec);
  if (ec || !fs::is_directory(c.out_dir)) {
    throw ConfigError("cannot create out_dir " + c.out_dir.string() + (ec ? ": " + ec.message() : std::string()));
  }
}

}  // namespace axial
