#include "forage/contrastive.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "forage/error.hpp"
#include "forage/random.hpp"
#include "forage/sequence_io.hpp"

namespace forage::contrastive {

using nlohmann::json;

namespace {

std::vector<std::string> words_of(const std::string& animal) {
  std::vector<std::string> out;
  std::istringstream ss(animal);
  for (std::string w; ss >> w;) out.push_back(w);
  return out;
}

bool parse_double(std::string_view s, double& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool is_integer(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (c < '0' || c > '9') return false;
  return true;
}

constexpr std::string_view kStem =
    "Without repeating yourself, provide the next animal in the comma separated list that comes immediately to mind";

std::string prefix_for(Condition c) {
  switch (c) {
    case Condition::neutral: return std::string(kStem) + ": ";
    case Condition::convergent:
      return std::string(kStem) +
             " that sticks/stays/clusters/converges to the same kind/type/category of last animal in the list: ";
    case Condition::divergent:
      return std::string(kStem) +
             " that diverges/moves/switches/changes drastically away from the kind/type/category of last animal in "
             "the list: ";
  }
  throw std::invalid_argument("unknown condition");
}

}  // namespace

EmbeddingTable load_embeddings(std::istream& in, const CategoryNorms& norms) {
  const auto animals = norms.animals();
  std::unordered_set<std::string> needed;
  for (const auto& a : animals)
    for (auto& w : words_of(a)) needed.insert(std::move(w));

  EmbeddingTable table;
  std::unordered_map<std::string, Eigen::VectorXd> words;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::vector<std::string> tok;
    for (std::string t; ss >> t;) tok.push_back(std::move(t));
    if (tok.empty()) continue;
    if (first) {
      first = false;
      // word2vec-style "count dim" header line.
      if (tok.size() == 2 && is_integer(tok[0]) && is_integer(tok[1])) continue;
    }
    if (tok.size() < 2) throw ParseError("embedding line has no values", lineno);
    const auto dim = tok.size() - 1;
    if (table.dim == 0) {
      table.dim = dim;
    } else if (dim != table.dim) {
      throw ParseError("expected " + std::to_string(table.dim) + " values, got " + std::to_string(dim), lineno);
    }
    if (!needed.count(tok[0])) continue;
    Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < dim; ++i) {
      double x;
      if (!parse_double(tok[i + 1], x) || !std::isfinite(x)) throw ParseError("bad value '" + tok[i + 1] + "'", lineno);
      v[static_cast<Eigen::Index>(i)] = x;
    }
    words.try_emplace(tok[0], std::move(v));
  }
  if (table.dim == 0) throw ParseError("embedding file has no vectors");

  for (const auto& a : animals) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(table.dim));
    const auto ws = words_of(a);
    bool ok = !ws.empty();
    for (const auto& w : ws) {
      auto it = words.find(w);
      if (it == words.end()) {
        ok = false;
        break;
      }
      acc += it->second;
    }
    if (ok) acc /= static_cast<double>(ws.size());
    if (ok && acc.norm() > 0.0) {
      table.vectors.emplace(a, std::move(acc));
    } else {
      table.unavailable.insert(a);
    }
  }
  return table;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, const CategoryNorms& norms) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open embeddings " + path.string());
  return load_embeddings(in, norms);
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: size mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine: zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

std::string_view to_string(Condition c) noexcept {
  switch (c) {
    case Condition::neutral: return "neutral";
    case Condition::convergent: return "convergent";
    case Condition::divergent: return "divergent";
  }
  return "unknown";
}

std::string_view to_string(Polarity p) noexcept { return p == Polarity::max ? "max" : "min"; }

Condition condition_from_string(std::string_view s) {
  if (s == "neutral") return Condition::neutral;
  if (s == "convergent") return Condition::convergent;
  if (s == "divergent") return Condition::divergent;
  throw std::invalid_argument("unknown condition '" + std::string(s) + "'");
}

Polarity polarity_from_string(std::string_view s) {
  if (s == "max") return Polarity::max;
  if (s == "min") return Polarity::min;
  throw std::invalid_argument("unknown polarity '" + std::string(s) + "'");
}

std::string select_exemplar(const std::string& last_animal, const std::set<std::string>& produced,
                            Condition condition, Polarity polarity, const CategoryNorms& norms,
                            const EmbeddingTable& emb) {
  auto last = emb.vectors.find(last_animal);
  if (last == emb.vectors.end()) throw std::invalid_argument("no embedding for '" + last_animal + "'");

  std::optional<std::string> best;
  double best_cos = 0.0;
  // emb.vectors is ordered by name; a candidate must beat the incumbent by
  // more than rounding noise, so ties keep the lexicographically smallest.
  constexpr double kTie = 1e-12;
  for (const auto& [name, vec] : emb.vectors) {
    if (name == last_animal || produced.count(name) || !norms.contains(name)) continue;
    if (condition != Condition::neutral) {
      const bool shares = norms.share_category(last_animal, name);
      if (shares != (condition == Condition::convergent)) continue;
    }
    const double c = cosine(last->second, vec);
    if (!best || (polarity == Polarity::max ? c > best_cos + kTie : c < best_cos - kTie)) {
      best = name;
      best_cos = c;
    }
  }
  if (!best) {
    throw std::invalid_argument("empty " + std::string(to_string(condition)) + " candidate pool after '" + last_animal + "'");
  }
  return *best;
}

std::string render_prompt(Condition condition, std::span<const std::string> subsequence) {
  if (subsequence.empty()) throw std::invalid_argument("render_prompt: empty subsequence");
  std::string out = prefix_for(condition);
  for (std::size_t i = 0; i < subsequence.size(); ++i) {
    if (i) out += ", ";
    out += subsequence[i];
  }
  out += ',';
  return out;
}

std::optional<std::vector<std::string>> parse_prompt(Condition condition, const std::string& prompt) {
  const auto prefix = prefix_for(condition);
  if (!prompt.starts_with(prefix) || !prompt.ends_with(",") || prompt.size() <= prefix.size() + 1) return std::nullopt;
  const std::string_view body(prompt.data() + prefix.size(), prompt.size() - prefix.size() - 1);
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = body.find(", ", start);
    out.emplace_back(body.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 2;
  }
  return out;
}

void to_json(json& j, const ContrastivePair& p) {
  j = json{{"schema_version", kSchemaVersion},
           {"sequence_id", p.sequence_id},
           {"base_subsequence", p.base_subsequence},
           {"condition", to_string(p.condition)},
           {"selection", p.selection ? json(to_string(*p.selection)) : json(nullptr)},
           {"polarity", p.polarity ? json(to_string(*p.polarity)) : json(nullptr)},
           {"replacement", p.replacement},
           {"rendered_prompt", p.rendered_prompt},
           {"label_is_switch", p.label_is_switch}};
}

void from_json(const json& j, ContrastivePair& p) {
  p.sequence_id = j.at("sequence_id").get<std::string>();
  p.base_subsequence = j.at("base_subsequence").get<std::vector<std::string>>();
  p.condition = condition_from_string(j.at("condition").get<std::string>());
  p.selection.reset();
  p.polarity.reset();
  if (auto it = j.find("selection"); it != j.end() && !it->is_null()) p.selection = condition_from_string(it->get<std::string>());
  if (auto it = j.find("polarity"); it != j.end() && !it->is_null()) p.polarity = polarity_from_string(it->get<std::string>());
  p.replacement = j.at("replacement").get<std::string>();
  p.rendered_prompt = j.at("rendered_prompt").get<std::string>();
  p.label_is_switch = j.at("label_is_switch").get<bool>();
}

BuildResult build_dataset(std::span<const LabeledSequence> seqs, const CategoryNorms& norms, const EmbeddingTable& emb,
                          const BuildOptions& options) {
  BuildResult result;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    std::vector<std::size_t> stays, switches;
    for (std::size_t t = 0; t < seq.switch_flags.size(); ++t) (seq.switch_flags[t] ? switches : stays).push_back(t);
    if (stays.empty() || switches.empty()) {
      result.skipped.push_back({seq.id, stays.empty() ? "no non-switch transition" : "no switch transition"});
      continue;
    }

    Rng rng(mix_seed(options.seed, s));
    const std::size_t picks[2] = {stays[uniform_index(rng, stays.size())], switches[uniform_index(rng, switches.size())]};

    for (auto t : picks) {
      std::vector<std::string> base(seq.items.begin(), seq.items.begin() + static_cast<std::ptrdiff_t>(t) + 1);
      const std::set<std::string> produced(base.begin(), base.end());
      const auto& last = seq.items[t];
      const bool is_switch = seq.switch_flags[t];

      for (auto condition : options.conditions) {
        ContrastivePair pair;
        pair.sequence_id = seq.id;
        pair.base_subsequence = base;
        pair.condition = condition;
        pair.rendered_prompt = render_prompt(condition, base);

        if (condition == Condition::neutral) {
          pair.replacement = seq.items[t + 1];
          pair.label_is_switch = is_switch;
          result.pairs.push_back(std::move(pair));
          continue;
        }
        const auto selection = is_switch ? Condition::divergent : Condition::convergent;
        for (auto polarity : options.polarities) {
          ContrastivePair p = pair;
          p.selection = selection;
          p.polarity = polarity;
          try {
            p.replacement = select_exemplar(last, produced, selection, polarity, norms, emb);
          } catch (const std::invalid_argument& e) {
            result.skipped.push_back({seq.id, std::string(to_string(condition)) + "/" +
                                                  std::string(to_string(polarity)) + " at transition " +
                                                  std::to_string(t) + ": " + e.what()});
            continue;
          }
          p.label_is_switch = !norms.share_category(last, p.replacement);
          result.pairs.push_back(std::move(p));
        }
      }
    }
  }
  return result;
}

}  // namespace forage::contrastive
