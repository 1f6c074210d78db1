#include "forage/sequence_io.hpp"

#include <fstream>
#include <sstream>

#include "forage/error.hpp"

namespace forage {

using nlohmann::json;

void to_json(json& j, const RawSequence& s) {
  j = json{{"id", s.id}, {"source", to_string(s.source)}, {"items", s.items}};
  if (s.model_tag) j["model_tag"] = *s.model_tag;
}

void from_json(const json& j, RawSequence& s) {
  s.id = j.at("id").get<std::string>();
  s.source = source_from_string(j.at("source").get<std::string>());
  s.model_tag.reset();
  if (auto it = j.find("model_tag"); it != j.end() && !it->is_null()) s.model_tag = it->get<std::string>();
  s.items = j.at("items").get<std::vector<std::string>>();
  if (s.items.empty()) throw InputError("sequence '" + s.id + "' has no items");
}

void to_json(json& j, const LabeledSequence& s) {
  j = json{{"schema_version", kSchemaVersion},
           {"id", s.id},
           {"source", to_string(s.source)},
           {"items", s.items},
           {"category_sets", s.category_sets},
           {"switch_flags", s.switch_flags},
           {"switch_ratio", s.switch_ratio}};
  if (s.model_tag) j["model_tag"] = *s.model_tag;
}

void from_json(const json& j, LabeledSequence& s) {
  s.id = j.at("id").get<std::string>();
  s.source = source_from_string(j.at("source").get<std::string>());
  s.model_tag.reset();
  if (auto it = j.find("model_tag"); it != j.end() && !it->is_null()) s.model_tag = it->get<std::string>();
  s.items = j.at("items").get<std::vector<std::string>>();
  s.category_sets = j.at("category_sets").get<std::vector<std::vector<std::string>>>();
  s.switch_flags = j.at("switch_flags").get<std::vector<bool>>();
  s.switch_ratio = j.at("switch_ratio").get<double>();
  if (s.items.size() < 2 || s.category_sets.size() != s.items.size() ||
      s.switch_flags.size() + 1 != s.items.size()) {
    throw InputError("labeled sequence '" + s.id + "' has inconsistent lengths");
  }
}

void to_json(json& j, const FilterRecord& r) {
  j = json{{"id", r.id}, {"disposition", to_string(r.disposition)}, {"original_length", r.original_length}};
  if (r.item) j["item"] = *r.item;
  if (r.index) j["index"] = *r.index;
}

std::vector<json> read_jsonl(std::istream& in) {
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    if (!out.back().is_object()) throw ParseError("expected a JSON object", lineno);
  }
  return out;
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return read_jsonl(in);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw InputError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace forage
