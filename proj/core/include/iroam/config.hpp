#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "iroam/synthdata.hpp"
#include "iroam/trainer.hpp"

namespace iroam {

/// Everything a run can be configured with.
struct RunConfig {
  DatasetConfig data;
  TrainConfig train;
};

enum class ConfigSection { Data, Train };

/// Keys accepted by apply_setting, in schema order.
std::vector<std::string> config_keys(ConfigSection section);

/// Sets one key from its text value. Throws ConfigError naming the key for
/// unknown keys and malformed values.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

/// Current value of a key as text.
std::string get_setting(const RunConfig& cfg, std::string_view key);

/// key=value lines; '#' starts a comment; blank lines are ignored.
void apply_config_text(RunConfig& cfg, std::string_view text);
/// Reads a config file. Throws IoError when unreadable.
void apply_config_file(RunConfig& cfg, const std::string& path);

/// Every key of the given sections as key=value lines, in schema order.
std::string dump_config(const RunConfig& cfg, std::vector<ConfigSection> sections = {ConfigSection::Data,
                                                                                       ConfigSection::Train});

/// Shortest text that reads back to the same double.
std::string format_double(double v);

}  // namespace iroam
