#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "posekit/error.hpp"

namespace posekit {

using json = nlohmann::json;

// Rounds to 4 decimal places so the serializer never falls back to
// exponent notation; -0 becomes 0.
inline double plain(double v) {
  const double r = std::round(v * 1e4) / 1e4;
  return r == 0.0 ? 0.0 : r;
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, "malformed JSON in '" + path.string() + "': " + e.what());
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorCode::io, "write failed for '" + path.string() + "'");
}

inline void write_json(const std::filesystem::path& path, const json& j, int indent = 2) {
  write_text(path, j.dump(indent) + "\n");
}

// Typed field access with errors that name the field.
template <typename T>
T field(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw Error(ErrorCode::parse, where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::parse, where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace posekit
