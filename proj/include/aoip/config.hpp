#pragma once

#include <atomic>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aoip/errors.hpp"
#include "aoip/storage.hpp"
#include "aoip/util.hpp"

namespace aoip::config {

// Full parameter record of one relay simulation.  Region, instance-type and
// image labels are opaque strings; no catalog validation happens here.
struct SimulationConfig {
  std::string tracking_id;  // empty until assigned
  std::string sender_region;
  std::string receiver_region;
  std::string sender_instance_type;
  std::string receiver_instance_type;
  std::string sender_ami;
  std::string receiver_ami;
  int sender_up_kbps = 0;
  int sender_down_kbps = 0;
  int receiver_up_kbps = 0;
  int receiver_down_kbps = 0;
  std::string src_audio_config;
  int duration_s = 0;
  storage::StorageUrl storage_url;
  bool use_prebaked_image = false;
  std::uint64_t seed = 0;
  // Inert provisioner field; the simulator allocates no disks.
  int disk_gb = 8;

  friend bool operator==(const SimulationConfig&, const SimulationConfig&) = default;
};

// Tracking ids are `sim-<seed hex>-<counter>`: readable, sortable, and
// injective in the counter by construction.
inline std::string generate_tracking_id(std::uint64_t seed, std::uint64_t counter) {
  return strprintf("sim-%016llx-%06llu",
                   static_cast<unsigned long long>(seed),
                   static_cast<unsigned long long>(counter));
}

class TrackingIdGenerator {
 public:
  explicit TrackingIdGenerator(std::uint64_t seed) : seed_(seed) {}
  std::string next() { return generate_tracking_id(seed_, counter_++); }

 private:
  std::uint64_t seed_;
  std::atomic<std::uint64_t> counter_{0};
};

namespace detail {

struct FlagSpec {
  const char* short_name;
  const char* long_name;
  bool required;
};

// One flag per parameter, short names first, long aliases for usability.
inline const std::vector<FlagSpec>& flag_table() {
  static const std::vector<FlagSpec> table = {
      {"--sreg", "--sender-region", true},
      {"--rreg", "--receiver-region", true},
      {"--sins", "--sender-instance-type", true},
      {"--rins", "--receiver-instance-type", true},
      {"--sami", "--sender-ami", true},
      {"--rami", "--receiver-ami", true},
      {"--src", "--src-audio-config", true},
      {"--dur", "--duration", true},
      {"--subw", "--sender-up-kbps", true},
      {"--sdbw", "--sender-down-kbps", true},
      {"--rubw", "--receiver-up-kbps", true},
      {"--rdbw", "--receiver-down-kbps", true},
      {"--s3", "--storage-url", true},
      {"--tid", "--tracking-id", false},
      {"--prebaked", "--use-prebaked-image", false},
      {"--seed", "--seed-value", false},
      {"--disk", "--disk-gb", false},
  };
  return table;
}

inline int parse_int(const std::string& flag, const std::string& text) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    fail(Err::MalformedValue, flag + " " + text);
  }
  return value;
}

inline std::uint64_t parse_u64(const std::string& flag, const std::string& text) {
  std::uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    fail(Err::MalformedValue, flag + " " + text);
  }
  return value;
}

// Process-wide counter: ids stay unique within a run even across parsers.
inline std::atomic<std::uint64_t>& process_id_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

}  // namespace detail

// Parses the flat flag grammar.  Boolean flags (--prebaked) take no value;
// everything else takes exactly one.  A flag given through both its short
// name and its long alias counts as a duplicate.
inline SimulationConfig parse_simulation_args(const std::vector<std::string>& argv) {
  std::map<std::string, std::string> values;  // keyed by short name
  std::map<std::string, bool> bools;

  auto lookup = [](const std::string& arg) -> const detail::FlagSpec* {
    for (const auto& spec : detail::flag_table()) {
      if (arg == spec.short_name || arg == spec.long_name) return &spec;
    }
    return nullptr;
  };

  for (size_t i = 0; i < argv.size(); ++i) {
    const std::string& arg = argv[i];
    const detail::FlagSpec* spec = lookup(arg);
    if (spec == nullptr) fail(Err::MalformedValue, "unknown flag " + arg);
    std::string key = spec->short_name;
    bool is_bool = (key == "--prebaked");
    if (is_bool) {
      if (bools.count(key)) fail(Err::DuplicateFlag, key);
      bools[key] = true;
      continue;
    }
    if (i + 1 >= argv.size()) fail(Err::MalformedValue, key + " missing value");
    if (values.count(key)) fail(Err::DuplicateFlag, key);
    values[key] = argv[++i];
  }

  for (const auto& spec : detail::flag_table()) {
    if (spec.required && !values.count(spec.short_name)) {
      fail(Err::MissingFlag, spec.short_name);
    }
  }

  SimulationConfig cfg;
  cfg.sender_region = values["--sreg"];
  cfg.receiver_region = values["--rreg"];
  cfg.sender_instance_type = values["--sins"];
  cfg.receiver_instance_type = values["--rins"];
  cfg.sender_ami = values["--sami"];
  cfg.receiver_ami = values["--rami"];
  cfg.src_audio_config = values["--src"];
  cfg.duration_s = detail::parse_int("--dur", values["--dur"]);
  cfg.sender_up_kbps = detail::parse_int("--subw", values["--subw"]);
  cfg.sender_down_kbps = detail::parse_int("--sdbw", values["--sdbw"]);
  cfg.receiver_up_kbps = detail::parse_int("--rubw", values["--rubw"]);
  cfg.receiver_down_kbps = detail::parse_int("--rdbw", values["--rdbw"]);
  try {
    cfg.storage_url = storage::parse_storage_url(values["--s3"]);
  } catch (const Error&) {
    fail(Err::BadStorageUrl, values["--s3"]);
  }
  cfg.use_prebaked_image = bools.count("--prebaked") > 0;
  if (values.count("--seed")) cfg.seed = detail::parse_u64("--seed", values["--seed"]);
  if (values.count("--disk")) cfg.disk_gb = detail::parse_int("--disk", values["--disk"]);
  if (values.count("--tid")) {
    cfg.tracking_id = values["--tid"];
  } else {
    cfg.tracking_id = generate_tracking_id(cfg.seed, detail::process_id_counter()++);
  }
  return cfg;
}

inline const SimulationConfig& validate(const SimulationConfig& cfg) {
  auto positive = [](int v, const char* field) {
    if (v <= 0) fail(Err::NonPositive, field);
  };
  positive(cfg.sender_up_kbps, "sender_up_kbps");
  positive(cfg.sender_down_kbps, "sender_down_kbps");
  positive(cfg.receiver_up_kbps, "receiver_up_kbps");
  positive(cfg.receiver_down_kbps, "receiver_down_kbps");
  positive(cfg.duration_s, "duration_s");
  if (cfg.storage_url.bucket.empty()) fail(Err::BadStorageUrl, cfg.storage_url.render());
  return cfg;
}

// Inverse of parse_simulation_args for valid configs (round-trip property).
inline std::vector<std::string> render_args(const SimulationConfig& cfg) {
  std::vector<std::string> argv = {
      "--sreg", cfg.sender_region,
      "--rreg", cfg.receiver_region,
      "--sins", cfg.sender_instance_type,
      "--rins", cfg.receiver_instance_type,
      "--sami", cfg.sender_ami,
      "--rami", cfg.receiver_ami,
      "--src", cfg.src_audio_config,
      "--dur", std::to_string(cfg.duration_s),
      "--subw", std::to_string(cfg.sender_up_kbps),
      "--sdbw", std::to_string(cfg.sender_down_kbps),
      "--rubw", std::to_string(cfg.receiver_up_kbps),
      "--rdbw", std::to_string(cfg.receiver_down_kbps),
      "--s3", cfg.storage_url.render(),
      "--tid", cfg.tracking_id,
      "--seed", std::to_string(cfg.seed),
      "--disk", std::to_string(cfg.disk_gb),
  };
  if (cfg.use_prebaked_image) argv.push_back("--prebaked");
  return argv;
}

// Plain key=value file, one flag per line ("sreg=us-east-1").  Blank lines
// and '#' comments are skipped; "prebaked=true/false" maps to the bare flag.
inline std::vector<std::string> load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Err::NotFound, path.string());
  std::vector<std::string> argv;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) fail(Err::MalformedValue, "config line: " + line);
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (key == "prebaked") {
      if (value == "true" || value == "1") argv.push_back("--prebaked");
      else if (value != "false" && value != "0") fail(Err::MalformedValue, line);
      continue;
    }
    argv.push_back("--" + key);
    argv.push_back(value);
  }
  return argv;
}

}  // namespace aoip::config
