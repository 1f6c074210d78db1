#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace forage {

/// Lowercase, drop ASCII punctuation (hyphens survive only between two word
/// characters), collapse whitespace runs and trim. Idempotent.
std::string canonicalize(std::string_view raw);

/// Animal -> category membership table. Category ids index transition
/// matrices, so their order (first appearance) is part of the contract.
class CategoryNorms {
 public:
  /// Adds one membership; the animal name is canonicalized. Returns false if
  /// the pair was already present.
  bool add(std::string_view category, std::string_view animal);

  const std::vector<std::string>& categories() const noexcept { return categories_; }
  std::size_t num_categories() const noexcept { return categories_.size(); }
  std::size_t num_animals() const noexcept { return members_.size(); }

  bool contains(std::string_view animal) const;
  /// Sorted category ids of a canonical animal; throws std::out_of_range.
  const std::vector<std::size_t>& category_ids(std::string_view animal) const;
  std::vector<std::string> category_labels(std::string_view animal) const;
  std::optional<std::size_t> category_index(std::string_view label) const;

  /// True iff the two animals have at least one category in common.
  bool share_category(std::string_view a, std::string_view b) const;

  /// All canonical animal names, sorted.
  std::vector<std::string> animals() const;

 private:
  std::vector<std::string> categories_;
  std::unordered_map<std::string, std::size_t> category_lookup_;
  std::unordered_map<std::string, std::vector<std::size_t>> members_;
};

/// Reads a `category,animal` CSV (header required). Throws ParseError with the
/// offending line on malformed rows, on an empty file, or when two raw
/// spellings collapse to the same canonical name with different category sets.
CategoryNorms parse_norms(std::istream& in);
CategoryNorms parse_norms(const std::filesystem::path& path);

enum class Source { human, model };

std::string_view to_string(Source s) noexcept;
Source source_from_string(std::string_view s);

struct RawSequence {
  std::string id;
  Source source = Source::human;
  std::optional<std::string> model_tag;
  std::vector<std::string> items;
};

struct LabeledSequence {
  std::string id;
  Source source = Source::human;
  std::optional<std::string> model_tag;
  std::vector<std::string> items;
  /// Category labels per item, in norms category order.
  std::vector<std::vector<std::string>> category_sets;
  /// switch_flags[i] describes the transition items[i] -> items[i+1].
  std::vector<bool> switch_flags;
  double switch_ratio = 0.0;

  std::size_t num_switches() const;
};

/// Labels an already-validated list of canonical animals. Throws
/// std::invalid_argument for fewer than two items (switch ratio undefined) and
/// std::out_of_range for animals missing from the norms.
LabeledSequence label_sequence(std::string id, Source source, std::optional<std::string> model_tag,
                               std::vector<std::string> items, const CategoryNorms& norms);

enum class Disposition { kept, too_short, invalid_item, repeated_item };

std::string_view to_string(Disposition d) noexcept;

struct FilterRecord {
  std::string id;
  Disposition disposition = Disposition::kept;
  /// Offending item (canonical form) and its index, for discards.
  std::optional<std::string> item;
  std::optional<std::size_t> index;
  std::size_t original_length = 0;
};

struct FilterResult {
  std::vector<LabeledSequence> kept;
  std::vector<FilterRecord> report;
};

/// Truncates each sequence to `truncate_len` items, then validates the prefix:
/// every item must canonicalize to a norms animal and no animal may repeat.
/// Sequences shorter than `truncate_len` are discarded. Never throws for bad
/// sequences; throws std::invalid_argument when truncate_len < 2.
FilterResult validate_and_filter(std::span<const RawSequence> seqs, const CategoryNorms& norms,
                                 std::size_t truncate_len = 35);

/// Splits a model's free-text list continuation into items. The list runs
/// across lines only while a line ends with a comma; anything after the first
/// line that does not continue the list is ignored.
std::vector<std::string> parse_generation(std::string_view text);

RawSequence to_raw(const LabeledSequence& seq);

}  // namespace forage
