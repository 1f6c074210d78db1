#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "forage/norms.hpp"

namespace forage::contrastive {

/// Word vectors composed into one vector per norms animal.
struct EmbeddingTable {
  std::size_t dim = 0;
  std::map<std::string, Eigen::VectorXd> vectors;
  /// Norms animals with at least one out-of-vocabulary word.
  std::set<std::string> unavailable;

  bool has(const std::string& animal) const { return vectors.count(animal) != 0; }
};

/// Reads "word v1 v2 ... vdim" lines (dim detected from the first line). A
/// multi-word animal gets the mean of its word vectors. Throws ParseError on
/// inconsistent dimensions or non-numeric values.
EmbeddingTable load_embeddings(std::istream& in, const CategoryNorms& norms);
EmbeddingTable load_embeddings(const std::filesystem::path& path, const CategoryNorms& norms);

/// Throws std::invalid_argument for zero vectors or a size mismatch.
double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

enum class Condition { neutral, convergent, divergent };
enum class Polarity { max, min };

std::string_view to_string(Condition c) noexcept;
std::string_view to_string(Polarity p) noexcept;
Condition condition_from_string(std::string_view s);
Polarity polarity_from_string(std::string_view s);

/// Picks the replacement for `last_animal` from the unproduced, embeddable
/// norms animals. The pool is filtered by category (convergent: shares a
/// category with last_animal; divergent: shares none; neutral: no filter),
/// then the argmax (max) or argmin (min) cosine wins; ties (cosines within
/// 1e-12) go to the lexicographically smallest name. Throws std::invalid_argument when
/// last_animal has no embedding or the pool is empty.
std::string select_exemplar(const std::string& last_animal, const std::set<std::string>& produced,
                            Condition condition, Polarity polarity, const CategoryNorms& norms,
                            const EmbeddingTable& emb);

/// Prompt for the given instruction condition; animals are joined with ", "
/// and the prompt ends with a trailing comma.
std::string render_prompt(Condition condition, std::span<const std::string> subsequence);

/// Inverse of render_prompt; nullopt when `prompt` is not a rendered template.
std::optional<std::vector<std::string>> parse_prompt(Condition condition, const std::string& prompt);

struct ContrastivePair {
  std::string sequence_id;
  std::vector<std::string> base_subsequence;
  /// Instruction template the prompt was rendered with.
  Condition condition = Condition::neutral;
  /// Category filter used to choose the replacement: convergent for sampled
  /// non-switch transitions, divergent for switches. Empty for neutral pairs,
  /// which keep the true next animal.
  std::optional<Condition> selection;
  std::optional<Polarity> polarity;
  std::string replacement;
  std::string rendered_prompt;
  bool label_is_switch = false;
};

void to_json(nlohmann::json& j, const ContrastivePair& p);
void from_json(const nlohmann::json& j, ContrastivePair& p);

struct SkipRecord {
  std::string sequence_id;
  std::string reason;
};

struct BuildOptions {
  std::vector<Condition> conditions{Condition::neutral, Condition::convergent, Condition::divergent};
  std::vector<Polarity> polarities{Polarity::max, Polarity::min};
  std::uint64_t seed = 0;
};

struct BuildResult {
  std::vector<ContrastivePair> pairs;
  std::vector<SkipRecord> skipped;
};

/// For each sequence, samples one non-switch and one switch transition and
/// renders a pair per condition (and per polarity for non-neutral
/// conditions). Sequences lacking either kind of transition are skipped.
BuildResult build_dataset(std::span<const LabeledSequence> seqs, const CategoryNorms& norms,
                          const EmbeddingTable& emb, const BuildOptions& options);

}  // namespace forage::contrastive
