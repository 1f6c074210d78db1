#include "forage/norms.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "forage/error.hpp"

namespace forage {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace

std::string canonicalize(std::string_view raw) {
  // Pass 1: lowercase, drop punctuation other than '-'.
  std::string stripped;
  stripped.reserve(raw.size());
  for (char c : raw) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::ispunct(u) && c != '-') continue;
    stripped.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : c);
  }

  // Pass 2: keep a hyphen only when both neighbours are word characters.
  auto word_char = [](char c) { return c != '-' && !is_space(c); };
  std::string dehyphen;
  dehyphen.reserve(stripped.size());
  for (std::size_t i = 0; i < stripped.size(); ++i) {
    const char c = stripped[i];
    if (c == '-') {
      const bool internal =
          i > 0 && i + 1 < stripped.size() && word_char(stripped[i - 1]) && word_char(stripped[i + 1]);
      if (!internal) continue;
    }
    dehyphen.push_back(c);
  }

  // Pass 3: collapse whitespace.
  std::string out;
  out.reserve(dehyphen.size());
  bool pending_space = false;
  for (char c : dehyphen) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

bool CategoryNorms::add(std::string_view category, std::string_view animal) {
  const std::string name = canonicalize(animal);
  const std::string label{trim(category)};
  if (name.empty()) throw std::invalid_argument("animal name is empty after canonicalization");
  if (label.empty()) throw std::invalid_argument("category label is empty");

  auto [it, inserted] = category_lookup_.try_emplace(label, categories_.size());
  if (inserted) categories_.push_back(label);
  const std::size_t id = it->second;

  auto& ids = members_[name];
  auto pos = std::lower_bound(ids.begin(), ids.end(), id);
  if (pos != ids.end() && *pos == id) return false;
  ids.insert(pos, id);
  return true;
}

bool CategoryNorms::contains(std::string_view animal) const {
  return members_.find(std::string(animal)) != members_.end();
}

const std::vector<std::size_t>& CategoryNorms::category_ids(std::string_view animal) const {
  auto it = members_.find(std::string(animal));
  if (it == members_.end()) throw std::out_of_range("animal not in norms: " + std::string(animal));
  return it->second;
}

std::vector<std::string> CategoryNorms::category_labels(std::string_view animal) const {
  std::vector<std::string> out;
  for (auto id : category_ids(animal)) out.push_back(categories_[id]);
  return out;
}

std::optional<std::size_t> CategoryNorms::category_index(std::string_view label) const {
  auto it = category_lookup_.find(std::string(label));
  if (it == category_lookup_.end()) return std::nullopt;
  return it->second;
}

bool CategoryNorms::share_category(std::string_view a, std::string_view b) const {
  const auto& ca = category_ids(a);
  const auto& cb = category_ids(b);
  // Both sorted.
  auto i = ca.begin();
  auto j = cb.begin();
  while (i != ca.end() && j != cb.end()) {
    if (*i == *j) return true;
    if (*i < *j)
      ++i;
    else
      ++j;
  }
  return false;
}

std::vector<std::string> CategoryNorms::animals() const {
  std::vector<std::string> out;
  out.reserve(members_.size());
  for (const auto& [name, ids] : members_) out.push_back(name);
  std::sort(out.begin(), out.end());
  return out;
}

CategoryNorms parse_norms(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  bool saw_header = false;

  // Memberships keyed by the raw (trimmed) spelling, so that spelling
  // variants can be checked for consistency before merging.
  std::vector<std::pair<std::string, std::string>> rows;
  std::map<std::string, std::set<std::string>> raw_sets;

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (trim(line).empty()) continue;

    const auto fields = split(line, ',');
    if (fields.size() != 2) {
      throw ParseError("expected 2 columns (category,animal), got " + std::to_string(fields.size()),
                       lineno);
    }
    const auto category = trim(fields[0]);
    const auto animal = trim(fields[1]);
    if (!saw_header) {
      if (category != "category" || animal != "animal") {
        throw ParseError("missing header `category,animal`", lineno);
      }
      saw_header = true;
      continue;
    }
    if (category.empty() || animal.empty()) throw ParseError("empty field", lineno);
    if (canonicalize(animal).empty()) throw ParseError("animal name has no usable characters", lineno);
    rows.emplace_back(std::string(category), std::string(animal));
    raw_sets[std::string(animal)].insert(std::string(category));
  }

  if (!saw_header) throw ParseError("norms file is empty");
  if (rows.empty()) throw ParseError("norms file has a header but no memberships");

  std::map<std::string, const std::string*> first_spelling;
  for (const auto& [raw, cats] : raw_sets) {
    const auto name = canonicalize(raw);
    auto [it, inserted] = first_spelling.try_emplace(name, &raw);
    if (!inserted && raw_sets.at(*it->second) != cats) {
      throw ParseError("'" + *it->second + "' and '" + raw + "' both canonicalize to '" + name +
                       "' but have different categories");
    }
  }

  CategoryNorms norms;
  for (const auto& [category, animal] : rows) norms.add(category, animal);
  return norms;
}

CategoryNorms parse_norms(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open norms file: " + path.string());
  return parse_norms(in);
}

std::string_view to_string(Source s) noexcept { return s == Source::human ? "human" : "model"; }

Source source_from_string(std::string_view s) {
  if (s == "human") return Source::human;
  if (s == "model") return Source::model;
  throw InputError("unknown source '" + std::string(s) + "' (expected human|model)");
}

std::size_t LabeledSequence::num_switches() const {
  return static_cast<std::size_t>(std::count(switch_flags.begin(), switch_flags.end(), true));
}

LabeledSequence label_sequence(std::string id, Source source, std::optional<std::string> model_tag,
                               std::vector<std::string> items, const CategoryNorms& norms) {
  if (items.size() < 2) {
    throw std::invalid_argument("sequence '" + id + "' has fewer than two items; switch ratio undefined");
  }
  LabeledSequence out;
  out.id = std::move(id);
  out.source = source;
  out.model_tag = std::move(model_tag);
  out.category_sets.reserve(items.size());
  for (const auto& item : items) out.category_sets.push_back(norms.category_labels(item));
  out.switch_flags.reserve(items.size() - 1);
  for (std::size_t i = 0; i + 1 < items.size(); ++i) {
    out.switch_flags.push_back(!norms.share_category(items[i], items[i + 1]));
  }
  out.items = std::move(items);
  out.switch_ratio = static_cast<double>(out.num_switches()) / static_cast<double>(out.switch_flags.size());
  return out;
}

std::string_view to_string(Disposition d) noexcept {
  switch (d) {
    case Disposition::kept: return "kept";
    case Disposition::too_short: return "too short";
    case Disposition::invalid_item: return "invalid item";
    case Disposition::repeated_item: return "repeated item";
  }
  return "unknown";
}

FilterResult validate_and_filter(std::span<const RawSequence> seqs, const CategoryNorms& norms,
                                 std::size_t truncate_len) {
  if (truncate_len < 2) throw std::invalid_argument("truncate_len must be >= 2");

  FilterResult result;
  result.report.reserve(seqs.size());
  for (const auto& seq : seqs) {
    FilterRecord rec;
    rec.id = seq.id;
    rec.original_length = seq.items.size();

    if (seq.items.size() < truncate_len) {
      rec.disposition = Disposition::too_short;
      result.report.push_back(std::move(rec));
      continue;
    }

    std::vector<std::string> items;
    items.reserve(truncate_len);
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < truncate_len; ++i) {
      auto name = canonicalize(seq.items[i]);
      if (name.empty() || !norms.contains(name)) {
        rec.disposition = Disposition::invalid_item;
      } else if (!seen.insert(name).second) {
        rec.disposition = Disposition::repeated_item;
      }
      if (rec.disposition != Disposition::kept) {
        rec.item = std::move(name);
        rec.index = i;
        break;
      }
      items.push_back(std::move(name));
    }

    if (rec.disposition == Disposition::kept) {
      result.kept.push_back(label_sequence(seq.id, seq.source, seq.model_tag, std::move(items), norms));
    }
    result.report.push_back(std::move(rec));
  }
  return result;
}

std::vector<std::string> parse_generation(std::string_view text) {
  std::vector<std::string> out;
  bool started = false;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);

    line = trim(line);
    if (line.empty()) {
      if (started) break;
      continue;
    }
    started = true;
    for (auto field : split(line, ',')) {
      field = trim(field);
      if (!field.empty()) out.emplace_back(field);
    }
    if (line.back() != ',') break;
  }
  return out;
}

RawSequence to_raw(const LabeledSequence& seq) {
  return RawSequence{seq.id, seq.source, seq.model_tag, seq.items};
}

}  // namespace forage
