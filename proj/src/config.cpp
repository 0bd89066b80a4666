#include "hierolm/config.hpp"

#include <cctype>

#include "hierolm/corpus.hpp"
#include "hierolm/error.hpp"

namespace hierolm {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string unquote(std::string_view s) {
  s = trim(s);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
    s = s.substr(1, s.size() - 2);
  return std::string(s);
}

// Strips a trailing comment that is not inside quotes.
std::string_view strip_comment(std::string_view line) {
  char quote = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quote) {
      if (ch == quote) quote = 0;
    } else if (ch == '"' || ch == '\'') {
      quote = ch;
    } else if (ch == '#' || ch == ';') {
      return line.substr(0, i);
    }
  }
  return line;
}

}  // namespace

ConfigFile ConfigFile::parse(std::string_view text) {
  ConfigFile file;
  file.sections_[""];
  std::string current;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    const std::string_view line = trim(strip_comment(text.substr(start, end - start)));
    start = end + 1;
    if (line.empty()) continue;
    auto fail = [&](const std::string& what) {
      throw Error(ErrorCode::kParseError, "config line " + std::to_string(line_no) + ": " + what);
    };
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      current = std::string(trim(line.substr(1, line.size() - 2)));
      if (current.empty()) fail("empty section name");
      file.sections_[current];
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) fail("expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) fail("empty key");
    auto& section = file.sections_[current];
    if (section.count(key)) fail("duplicate key '" + key + "'");
    section[key] = unquote(line.substr(eq + 1));
  }
  return file;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) { return parse(read_file(path)); }

const ConfigFile::Section* ConfigFile::section(std::string_view name) const {
  const auto it = sections_.find(std::string(name));
  return it == sections_.end() ? nullptr : &it->second;
}

std::vector<std::string> split_list(std::string_view value) {
  value = trim(value);
  if (value.size() >= 2 && value.front() == '[' && value.back() == ']') value = value.substr(1, value.size() - 2);
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= value.size(); ++i) {
    if (i == value.size() || value[i] == ',') {
      const std::string item = unquote(value.substr(start, i - start));
      if (!item.empty()) out.push_back(item);
      start = i + 1;
    }
  }
  return out;
}

TrainConfig train_config_from(const ConfigFile& file, TrainConfig base) {
  for (const auto& [name, section] : file.sections()) {
    if (name == "grid") continue;
    if (!name.empty() && name != "train")
      throw Error(ErrorCode::kParseError, "unknown config section [" + name + "]");
    for (const auto& [key, value] : section) base.set(key, value);
  }
  base.validate();
  return base;
}

SweepGrid sweep_grid_from(const ConfigFile& file) {
  SweepGrid grid;
  const auto* section = file.section("grid");
  if (!section) return grid;
  for (const auto& [key, value] : *section) {
    const auto items = split_list(value);
    if (key == "embed_size" || key == "hidden_size") {
      auto& axis = key == "embed_size" ? grid.embed_sizes : grid.hidden_sizes;
      for (const auto& item : items) {
        TrainConfig probe;
        probe.set(key, item);
        axis.push_back(key == "embed_size" ? probe.embed_size : probe.hidden_size);
      }
    } else if (key == "dropout") {
      for (const auto& item : items) {
        TrainConfig probe;
        probe.set(key, item);
        grid.dropouts.push_back(probe.dropout);
      }
    } else {
      throw Error(ErrorCode::kParseError, "unknown grid axis '" + key + "'");
    }
  }
  return grid;
}

}  // namespace hierolm
