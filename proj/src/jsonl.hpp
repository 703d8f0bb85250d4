#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hidegate/error.hpp"

namespace hidegate::jsonl {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Calls fn(line_number, object) for every non-blank line.
inline void for_each(std::string_view text, const std::string& source,
                     const std::function<void(std::size_t, const nlohmann::json&)>& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::parse, source + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object()) {
      fail(ErrorKind::format, source + ":" + std::to_string(line_no) + ": expected a JSON object");
    }
    fn(line_no, j);
  }
}

inline const nlohmann::json& field(const nlohmann::json& j, const char* name,
                                   const std::string& where) {
  auto it = j.find(name);
  if (it == j.end()) fail(ErrorKind::format, where + ": missing field '" + name + "'");
  return *it;
}

inline std::string string_field(const nlohmann::json& j, const char* name,
                                const std::string& where) {
  const auto& v = field(j, name, where);
  if (!v.is_string()) fail(ErrorKind::format, where + ": field '" + name + "' must be a string");
  return v.get<std::string>();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << content;
  if (!out) fail(ErrorKind::io, "short write to " + path.string());
}

}  // namespace hidegate::jsonl
