#include "forage/lens.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "forage/error.hpp"
#include "forage/sequence_io.hpp"
#include "forage/seqstats.hpp"

namespace forage::lens {

using nlohmann::json;

std::string_view to_string(NormKind k) noexcept { return k == NormKind::rms ? "rms" : "layer"; }

NormKind norm_kind_from_string(std::string_view s) {
  if (s == "rms") return NormKind::rms;
  if (s == "layer") return NormKind::layer;
  throw InputError("unknown norm_kind '" + std::string(s) + "' (expected rms|layer)");
}

void ModelHead::validate() const {
  if (d_model() == 0 || vocab_size() == 0) throw std::invalid_argument("model head is empty");
  if (final_norm_weight.size() != d_model()) {
    throw std::invalid_argument("final_norm_weight has " + std::to_string(final_norm_weight.size()) +
                                " entries, unembed has d_model " + std::to_string(d_model()));
  }
  if (!(norm_eps > 0.0)) throw std::invalid_argument("norm_eps must be positive");
}

void to_json(json& j, const EventMeta& e) {
  j = json{{"sequence_id", e.sequence_id}, {"position", e.position}, {"is_switch", e.is_switch}};
  if (e.condition) j["condition"] = *e.condition;
}

void from_json(const json& j, EventMeta& e) {
  e.sequence_id = j.at("sequence_id").get<std::string>();
  e.position = j.at("position").get<std::size_t>();
  e.is_switch = j.at("is_switch").get<bool>();
  e.condition.reset();
  if (auto it = j.find("condition"); it != j.end() && !it->is_null()) e.condition = it->get<std::string>();
}

void to_json(json& j, const Manifest& m) {
  j = json{{"schema_version", kSchemaVersion},
           {"model_tag", m.model_tag},
           {"L", m.num_layers},
           {"d_model", m.d_model},
           {"V", m.vocab_size},
           {"norm_kind", to_string(m.norm_kind)},
           {"norm_eps", m.norm_eps},
           {"first_token", m.first_token},
           {"events", m.events}};
  if (m.dump_file) j["dump_file"] = *m.dump_file;
  if (m.head_file) j["head_file"] = *m.head_file;
}

void from_json(const json& j, Manifest& m) {
  m.model_tag = j.at("model_tag").get<std::string>();
  m.num_layers = j.at("L").get<std::size_t>();
  m.d_model = j.at("d_model").get<std::size_t>();
  m.vocab_size = j.at("V").get<std::size_t>();
  m.norm_kind = norm_kind_from_string(j.at("norm_kind").get<std::string>());
  m.norm_eps = j.at("norm_eps").get<double>();
  m.first_token = j.at("first_token").get<std::map<std::string, TokenId>>();
  m.events = j.at("events").get<std::vector<EventMeta>>();
  m.dump_file.reset();
  m.head_file.reset();
  if (auto it = j.find("dump_file"); it != j.end() && !it->is_null()) m.dump_file = it->get<std::string>();
  if (auto it = j.find("head_file"); it != j.end() && !it->is_null()) m.head_file = it->get<std::string>();
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest " + path.string());
  try {
    return json::parse(in).get<Manifest>();
  } catch (const json::exception& e) {
    throw InputError("bad manifest " + path.string() + ": " + e.what());
  }
}

std::string resid_name(std::size_t event, std::size_t layer) {
  return "resid." + std::to_string(event) + "." + std::to_string(layer);
}

std::string final_dist_name(std::size_t event) { return "final_dist." + std::to_string(event); }

ModelHead load_head(const flns::TensorDump& dump, const Manifest& manifest) {
  const auto unembed = dump.read(kUnembedTensor);
  const auto weight = dump.read(kFinalNormTensor);
  if (unembed.shape.size() != 2 || unembed.shape[0] != manifest.d_model || unembed.shape[1] != manifest.vocab_size) {
    throw flns::DumpError(flns::Errc::shape_mismatch, "unembed must be [d_model, V] = [" +
                                                          std::to_string(manifest.d_model) + ", " +
                                                          std::to_string(manifest.vocab_size) + "]");
  }
  if (weight.data.size() != manifest.d_model) {
    throw flns::DumpError(flns::Errc::shape_mismatch, "final_norm_weight must have d_model entries");
  }
  ModelHead head;
  head.unembed = Eigen::Map<const ModelHead::RowMajorMatrixXf>(
      unembed.data.data(), static_cast<Eigen::Index>(manifest.d_model), static_cast<Eigen::Index>(manifest.vocab_size));
  head.final_norm_weight = Eigen::Map<const Eigen::VectorXf>(weight.data.data(), static_cast<Eigen::Index>(manifest.d_model));
  head.norm_eps = manifest.norm_eps;
  head.norm_kind = manifest.norm_kind;
  head.validate();
  return head;
}

std::vector<EventRecord> load_events(const flns::TensorDump& dump, const Manifest& manifest) {
  std::vector<EventRecord> out;
  out.reserve(manifest.events.size());
  for (std::size_t e = 0; e < manifest.events.size(); ++e) {
    EventRecord rec;
    rec.meta = manifest.events[e];
    rec.residuals.reserve(manifest.num_layers + 1);
    for (std::size_t l = 0; l <= manifest.num_layers; ++l) {
      const auto t = dump.read(resid_name(e, l));
      if (t.data.size() != manifest.d_model) {
        throw flns::DumpError(flns::Errc::shape_mismatch, resid_name(e, l) + " does not have d_model entries");
      }
      rec.residuals.emplace_back(Eigen::Map<const Eigen::VectorXf>(t.data.data(), static_cast<Eigen::Index>(t.data.size())));
    }
    const auto dist_name = final_dist_name(e);
    if (dump.contains(dist_name)) {
      const auto t = dump.read(dist_name);
      if (t.data.size() != manifest.vocab_size) {
        throw flns::DumpError(flns::Errc::shape_mismatch, dist_name + " does not have V entries");
      }
      rec.final_dist.emplace(t.data.begin(), t.data.end());
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<double> logitlens(std::span<const float> h, const ModelHead& head) {
  const auto d = head.d_model();
  if (static_cast<Eigen::Index>(h.size()) != d) {
    throw std::invalid_argument("logitlens: residual has " + std::to_string(h.size()) + " entries, d_model is " +
                                std::to_string(d));
  }
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXf>(h.data(), d).cast<double>();
  if (head.norm_kind == NormKind::layer) {
    x.array() -= x.mean();
  }
  const double ms = x.squaredNorm() / static_cast<double>(d);
  x *= 1.0 / std::sqrt(ms + head.norm_eps);
  x.array() *= head.final_norm_weight.cast<double>().array();

  Eigen::VectorXd logits = Eigen::VectorXd::Zero(head.vocab_size());
  for (Eigen::Index i = 0; i < d; ++i) {
    if (x[i] != 0.0) logits.noalias() += x[i] * head.unembed.row(i).transpose().cast<double>();
  }
  const double mx = logits.maxCoeff();
  Eigen::ArrayXd p = (logits.array() - mx).exp();
  p /= p.sum();
  return {p.data(), p.data() + p.size()};
}

std::vector<double> logitlens(const Eigen::VectorXf& h, const ModelHead& head) {
  return logitlens(std::span<const float>(h.data(), static_cast<std::size_t>(h.size())), head);
}

TokenSetPartition partition_vocab(const std::string& prev_animal, std::span<const std::string> produced,
                                  const std::optional<std::string>& next_animal, const CategoryNorms& norms,
                                  const std::map<std::string, TokenId>& first_token) {
  if (!norms.contains(prev_animal)) throw std::invalid_argument("partition_vocab: unknown animal '" + prev_animal + "'");
  const std::set<std::string> done(produced.begin(), produced.end());

  std::set<TokenId> within, between;
  for (const auto& animal : norms.animals()) {
    if (done.count(animal)) continue;
    auto it = first_token.find(animal);
    if (it == first_token.end()) {
      throw std::invalid_argument("partition_vocab: no first token for '" + animal + "'");
    }
    (norms.share_category(prev_animal, animal) ? within : between).insert(it->second);
  }

  TokenSetPartition part;
  std::set_intersection(within.begin(), within.end(), between.begin(), between.end(),
                        std::back_inserter(part.excluded_ambiguous));
  std::set_difference(within.begin(), within.end(), part.excluded_ambiguous.begin(), part.excluded_ambiguous.end(),
                      std::back_inserter(part.within));
  std::set_difference(between.begin(), between.end(), part.excluded_ambiguous.begin(), part.excluded_ambiguous.end(),
                      std::back_inserter(part.between));
  if (next_animal) {
    auto it = first_token.find(*next_animal);
    if (it == first_token.end()) throw std::invalid_argument("partition_vocab: no first token for '" + *next_animal + "'");
    part.actual = it->second;
  }
  return part;
}

SetProbabilities set_probability(std::span<const double> dist, const TokenSetPartition& part) {
  auto mean_over = [&](const std::vector<TokenId>& ids) -> std::optional<double> {
    if (ids.empty()) return std::nullopt;
    double s = 0.0;
    for (auto id : ids) {
      if (id >= dist.size()) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
      s += dist[id];
    }
    return s / static_cast<double>(ids.size());
  };
  SetProbabilities out;
  out.within = mean_over(part.within);
  out.between = mean_over(part.between);
  if (part.actual) {
    if (*part.actual >= dist.size()) throw std::out_of_range("actual token outside vocabulary");
    out.actual = dist[*part.actual];
  }
  return out;
}

std::string_view to_string(SeriesKind k) noexcept {
  switch (k) {
    case SeriesKind::within: return "within";
    case SeriesKind::between: return "between";
    case SeriesKind::actual: return "actual";
  }
  return "unknown";
}

std::optional<double> select(const SetProbabilities& p, SeriesKind k) {
  switch (k) {
    case SeriesKind::within: return p.within;
    case SeriesKind::between: return p.between;
    case SeriesKind::actual: return p.actual;
  }
  return std::nullopt;
}

namespace {

struct ZSequence {
  std::map<std::size_t, double> z;  // position -> z-scored value
  std::vector<std::size_t> switches;
};

std::map<std::string, ZSequence> zscore_by_sequence(std::span<const SeriesPoint> points, SeriesKind kind,
                                                    std::vector<std::string>& skipped) {
  std::map<std::string, std::vector<const SeriesPoint*>> grouped;
  for (const auto& p : points) grouped[p.sequence_id].push_back(&p);

  std::map<std::string, ZSequence> out;
  for (auto& [id, pts] : grouped) {
    std::sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->position < b->position; });
    std::vector<std::size_t> positions;
    std::vector<double> values;
    ZSequence zs;
    for (const auto* p : pts) {
      if (p->is_switch) zs.switches.push_back(p->position);
      if (auto v = select(p->values, kind)) {
        positions.push_back(p->position);
        values.push_back(*v);
      }
    }
    std::vector<double> z;
    try {
      z = zscore(values);
    } catch (const std::invalid_argument&) {
      skipped.push_back(id);
      continue;
    }
    for (std::size_t i = 0; i < z.size(); ++i) zs.z[positions[i]] = z[i];
    out.emplace(id, std::move(zs));
  }
  return out;
}

std::optional<double> lookup(const ZSequence& zs, std::size_t t, int rel) {
  const auto pos = static_cast<long long>(t) + rel;
  if (pos < 0) return std::nullopt;
  auto it = zs.z.find(static_cast<std::size_t>(pos));
  if (it == zs.z.end()) return std::nullopt;
  return it->second;
}

}  // namespace

AlignResult align_on_switch(std::span<const SeriesPoint> points, Window window, SeriesKind kind) {
  if (!(window.lo < 0 && window.hi >= 0)) throw std::invalid_argument("align_on_switch: window must satisfy lo < 0 <= hi");

  AlignResult result;
  const auto sequences = zscore_by_sequence(points, kind, result.skipped_sequences);

  const auto width = static_cast<std::size_t>(window.hi - window.lo + 1);
  std::vector<std::vector<double>> buckets(width);
  for (const auto& [id, zs] : sequences) {
    for (auto t : zs.switches) {
      ++result.n_switch_events;
      for (int r = window.lo; r <= window.hi; ++r) {
        if (auto v = lookup(zs, t, r)) buckets[static_cast<std::size_t>(r - window.lo)].push_back(*v);
      }
    }
  }
  if (result.n_switch_events == 0) throw std::invalid_argument("align_on_switch: no usable switch events");

  auto& c = result.curve;
  c.kind = kind;
  for (int r = window.lo; r <= window.hi; ++r) {
    const auto& b = buckets[static_cast<std::size_t>(r - window.lo)];
    c.relative_positions.push_back(r);
    c.n_events.push_back(b.size());
    c.mean.push_back(b.empty() ? std::nullopt : std::optional<double>(mean(b)));
    c.sem.push_back(b.size() < 2 ? std::nullopt
                                 : std::optional<double>(sample_sd(b) / std::sqrt(static_cast<double>(b.size()))));
  }
  return result;
}

PairedPositions paired_positions(std::span<const SeriesPoint> points, SeriesKind kind, int from_rel, int to_rel) {
  std::vector<std::string> skipped;
  PairedPositions out;
  for (const auto& [id, zs] : zscore_by_sequence(points, kind, skipped)) {
    for (auto t : zs.switches) {
      auto a = lookup(zs, t, from_rel);
      auto b = lookup(zs, t, to_rel);
      if (a && b) {
        out.from.push_back(*a);
        out.to.push_back(*b);
      }
    }
  }
  return out;
}

LayerCurves layer_curves(std::span<const EventRecord> events, const ModelHead& head,
                         std::span<const TokenSetPartition> parts) {
  if (events.size() != parts.size()) throw std::invalid_argument("layer_curves: one partition per event required");
  if (events.empty()) throw std::invalid_argument("layer_curves: no events");
  const auto n_layers = events.front().residuals.size();
  for (const auto& e : events) {
    if (e.residuals.size() != n_layers) throw std::invalid_argument("layer_curves: inconsistent layer counts across events");
  }
  if (n_layers == 0) throw std::invalid_argument("layer_curves: events carry no residuals");

  LayerCurves out;
  out.cells.resize(n_layers);
  out.event_values.resize(events.size());
  out.event_is_switch.resize(events.size());
  // samples[layer][class][series]
  std::vector<std::array<std::array<std::vector<double>, 3>, 2>> samples(n_layers);
  for (std::size_t e = 0; e < events.size(); ++e) {
    const int cls = events[e].meta.is_switch ? 1 : 0;
    out.event_is_switch[e] = events[e].meta.is_switch;
    out.event_values[e].reserve(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
      const auto dist = logitlens(events[e].residuals[l], head);
      const auto sp = set_probability(dist, parts[e]);
      for (auto k : kAllSeries) {
        if (auto v = select(sp, k)) samples[l][cls][static_cast<std::size_t>(k)].push_back(*v);
      }
      out.event_values[e].push_back(sp);
    }
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    for (int cls = 0; cls < 2; ++cls) {
      for (std::size_t k = 0; k < 3; ++k) {
        const auto& s = samples[l][cls][k];
        auto& cell = out.cells[l][cls][k];
        cell.n = s.size();
        if (!s.empty()) cell.mean = mean(s);
        if (s.size() >= 2) cell.sem = sample_sd(s) / std::sqrt(static_cast<double>(s.size()));
      }
    }
  }
  return out;
}

LateLayerSummary late_layer_summary(const LayerCurves& curves, int layer_threshold) {
  if (curves.num_layers() == 0) throw std::invalid_argument("late_layer_summary: empty curves");
  const auto last = static_cast<int>(curves.num_layers()) - 1;
  if (layer_threshold >= last) {
    throw std::invalid_argument("layer threshold " + std::to_string(layer_threshold) + " must be below the last layer " +
                                std::to_string(last));
  }
  LateLayerSummary out;
  out.layer_threshold = layer_threshold;
  for (int l = std::max(0, layer_threshold + 1); l <= last; ++l) out.layers.push_back(static_cast<std::size_t>(l));
  for (int cls = 0; cls < 2; ++cls) {
    for (auto kind : {SeriesKind::within, SeriesKind::between}) {
      std::vector<double> means;
      for (auto l : out.layers) {
        if (auto m = curves.at(l, cls == 1, kind).mean) means.push_back(*m);
      }
      if (!means.empty()) out.table[cls][static_cast<std::size_t>(kind)] = mean(means);
    }
  }
  return out;
}

std::vector<double> late_layer_event_means(const LayerCurves& curves, int layer_threshold, bool is_switch,
                                           SeriesKind kind) {
  std::vector<double> out;
  for (std::size_t e = 0; e < curves.event_values.size(); ++e) {
    if (curves.event_is_switch[e] != is_switch) continue;
    std::vector<double> vals;
    for (std::size_t l = 0; l < curves.event_values[e].size(); ++l) {
      if (static_cast<int>(l) <= layer_threshold) continue;
      if (auto v = select(curves.event_values[e][l], kind)) vals.push_back(*v);
    }
    if (!vals.empty()) out.push_back(mean(vals));
  }
  return out;
}

std::vector<SeriesPoint> event_series(std::span<const EventRecord> events, const ModelHead& head,
                                      std::span<const TokenSetPartition> parts) {
  if (events.size() != parts.size()) throw std::invalid_argument("event_series: one partition per event required");
  std::vector<SeriesPoint> out;
  out.reserve(events.size());
  for (std::size_t e = 0; e < events.size(); ++e) {
    const auto& ev = events[e];
    SeriesPoint p{ev.meta.sequence_id, ev.meta.position, ev.meta.is_switch, {}};
    if (ev.final_dist) {
      p.values = set_probability(*ev.final_dist, parts[e]);
    } else {
      if (ev.residuals.empty()) throw std::invalid_argument("event has neither a final distribution nor residuals");
      p.values = set_probability(logitlens(ev.residuals.back(), head), parts[e]);
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace forage::lens
