#pragma once

#include <filesystem>
#include <istream>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "forage/error.hpp"
#include "forage/norms.hpp"

namespace forage {

inline constexpr int kSchemaVersion = 1;

void to_json(nlohmann::json& j, const RawSequence& s);
void from_json(const nlohmann::json& j, RawSequence& s);
void to_json(nlohmann::json& j, const LabeledSequence& s);
void from_json(const nlohmann::json& j, LabeledSequence& s);
void to_json(nlohmann::json& j, const FilterRecord& r);

/// Reads one JSON object per non-blank line. Parse errors carry the line number.
std::vector<nlohmann::json> read_jsonl(std::istream& in);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

template <typename T>
std::vector<T> read_jsonl_as(std::istream& in) {
  std::vector<T> out;
  std::size_t record = 0;
  for (const auto& j : read_jsonl(in)) {
    ++record;
    try {
      out.push_back(j.get<T>());
    } catch (const std::exception& e) {
      throw ParseError("record " + std::to_string(record) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
void write_jsonl(std::ostream& out, const std::vector<T>& records) {
  for (const auto& r : records) out << nlohmann::json(r).dump() << '\n';
}

/// Writes `content` to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace forage
