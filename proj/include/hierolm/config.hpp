#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "hierolm/training.hpp"

namespace hierolm {

/// Minimal key = value format with optional [section] headers. `#` and `;`
/// start comments, values may be quoted, lists are comma separated and may
/// be wrapped in brackets. Top-level keys live in section "".
class ConfigFile {
 public:
  using Section = std::map<std::string, std::string>;

  static ConfigFile parse(std::string_view text);
  static ConfigFile load(const std::filesystem::path& path);

  const std::map<std::string, Section>& sections() const noexcept { return sections_; }
  const Section* section(std::string_view name) const;

 private:
  std::map<std::string, Section> sections_;
};

std::vector<std::string> split_list(std::string_view value);

/// Applies top-level and [train] keys on top of `base`. Rejects unknown
/// sections other than [grid].
TrainConfig train_config_from(const ConfigFile& file, TrainConfig base = {});

/// Reads [grid] embed_size, hidden_size and dropout lists.
SweepGrid sweep_grid_from(const ConfigFile& file);

}  // namespace hierolm
