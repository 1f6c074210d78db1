#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "forage/cli.hpp"
#include "forage/error.hpp"
#include "forage/flns.hpp"
#include "forage/random.hpp"
#include "forage/sequence_io.hpp"

namespace forage::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path& require(const std::optional<fs::path>& p, const char* what) {
  if (!p) throw ConfigError(std::string("missing required path: ") + what);
  return *p;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json to_json(const TestResult& r) {
  json j{{"statistic", r.statistic},
         {"p_value", r.p_value},
         {"sidedness", to_string(r.sidedness)},
         {"method", r.method},
         {"effect_size_d", opt(r.effect_size_d)}};
  j["n_resamples"] = r.n_resamples ? json(*r.n_resamples) : json(nullptr);
  return j;
}

void write_json(const fs::path& path, json j) {
  if (j.is_object() && !j.contains("schema_version")) j["schema_version"] = kSchemaVersion;
  write_file_atomic(path, j.dump(2) + "\n");
}

void prepare_out(const RunConfig& config) { fs::create_directories(config.paths.out); }

std::vector<LabeledSequence> read_labeled(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open labeled sequences " + path.string());
  return read_jsonl_as<LabeledSequence>(in);
}

const char* kReferenceNote = "values reported for full-scale human/LLM datasets and 70B-class models; not reproduced by this run";

json matrix_json(const TransitionMatrix& m) {
  json counts = json::array(), probs = json::array();
  for (Eigen::Index r = 0; r < m.counts.rows(); ++r) {
    std::vector<double> c(m.counts.cols()), p(m.counts.cols());
    for (Eigen::Index k = 0; k < m.counts.cols(); ++k) {
      c[static_cast<std::size_t>(k)] = m.counts(r, k);
      p[static_cast<std::size_t>(k)] = m.probs(r, k);
    }
    counts.push_back(c);
    probs.push_back(p);
  }
  return json{{"categories", m.categories}, {"counts", counts}, {"probs", probs}, {"empty_rows", m.empty_rows},
              {"total_mass", m.total_mass()}};
}

std::string matrix_csv(const TransitionMatrix& m) {
  std::ostringstream os;
  os << "from\\to";
  for (const auto& c : m.categories) os << ',' << c;
  os << '\n';
  for (std::size_t r = 0; r < m.size(); ++r) {
    os << m.categories[r];
    for (std::size_t c = 0; c < m.size(); ++c) {
      os << ',' << num(m.probs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
    }
    os << '\n';
  }
  return os.str();
}

struct LoadedDump {
  lens::Manifest manifest;
  flns::TensorDump dump;
  fs::path head_path;
};

LoadedDump open_dump(const fs::path& manifest_path, const RunConfig& config, bool allow_dump_override) {
  auto manifest = lens::read_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();
  fs::path dump_path;
  if (allow_dump_override && config.paths.dump) {
    dump_path = *config.paths.dump;
  } else if (manifest.dump_file) {
    dump_path = dir / *manifest.dump_file;
  } else {
    throw ConfigError("no dump path: pass --dump or set dump_file in " + manifest_path.string());
  }
  fs::path head_path = dump_path;
  if (config.paths.head) {
    head_path = *config.paths.head;
  } else if (manifest.head_file) {
    head_path = dir / *manifest.head_file;
  }
  return {std::move(manifest), flns::TensorDump::open(dump_path), head_path};
}

lens::ModelHead open_head(const LoadedDump& d) {
  if (d.head_path == d.dump.path()) return lens::load_head(d.dump, d.manifest);
  return lens::load_head(flns::TensorDump::open(d.head_path), d.manifest);
}

// One partition per event, from the labeled sequence the event belongs to.
std::vector<lens::TokenSetPartition> build_partitions(const std::vector<lens::EventRecord>& events,
                                                      const std::vector<LabeledSequence>& labeled,
                                                      const CategoryNorms& norms, const lens::Manifest& manifest) {
  std::map<std::string, const LabeledSequence*> by_id;
  for (const auto& s : labeled) by_id[s.id] = &s;
  std::vector<lens::TokenSetPartition> parts;
  parts.reserve(events.size());
  for (const auto& e : events) {
    auto it = by_id.find(e.meta.sequence_id);
    if (it == by_id.end()) throw InputError("event refers to unknown sequence '" + e.meta.sequence_id + "'");
    const auto& seq = *it->second;
    const auto t = e.meta.position;
    if (t + 1 >= seq.items.size()) {
      throw InputError("event position " + std::to_string(t) + " out of range for sequence '" + seq.id + "'");
    }
    if (seq.switch_flags[t] != e.meta.is_switch) {
      throw InputError("event is_switch disagrees with the labels of sequence '" + seq.id + "' at position " +
                       std::to_string(t));
    }
    std::span<const std::string> produced(seq.items.data(), t + 1);
    parts.push_back(lens::partition_vocab(seq.items[t], produced, seq.items[t + 1], norms, manifest.first_token));
  }
  return parts;
}

}  // namespace

void cmd_label(const RunConfig& config, std::ostream& err) {
  const auto norms = parse_norms(require(config.paths.norms, "norms"));
  const auto& seq_path = require(config.paths.sequences, "sequences");
  std::ifstream in(seq_path);
  if (!in) throw InputError("cannot open sequences " + seq_path.string());
  const auto raw = read_jsonl_as<RawSequence>(in);
  if (raw.empty()) throw InputError("no sequences in " + seq_path.string());

  const auto result = validate_and_filter(raw, norms, config.truncate_len);
  prepare_out(config);

  std::ostringstream jsonl;
  write_jsonl(jsonl, result.kept);
  write_file_atomic(config.paths.out / "labeled.jsonl", jsonl.str());

  std::map<std::string, std::size_t> by_reason;
  for (const auto& r : result.report) ++by_reason[std::string(to_string(r.disposition))];
  json records = json::array();
  for (const auto& r : result.report) records.push_back(r);
  write_json(config.paths.out / "filter_report.json",
             {{"truncate_len", config.truncate_len},
              {"n_input", raw.size()},
              {"n_kept", result.kept.size()},
              {"n_discarded", raw.size() - result.kept.size()},
              {"by_disposition", by_reason},
              {"records", records}});
  err << "label: kept " << result.kept.size() << " of " << raw.size() << " sequences\n";
}

void cmd_stats(const RunConfig& config, std::ostream& err) {
  const auto norms = parse_norms(require(config.paths.norms, "norms"));
  const auto labeled = read_labeled(require(config.paths.labeled, "labeled"));
  if (labeled.empty()) throw InputError("no labeled sequences");

  std::vector<LabeledSequence> human, model;
  for (const auto& s : labeled) (s.source == Source::human ? human : model).push_back(s);
  prepare_out(config);

  json report;
  json warnings = json::array();
  std::ostringstream wb_csv;
  wb_csv << "source,kind,value\n";
  std::map<std::string, TransitionMatrix> matrices;

  for (const auto& [name, pop] : {std::pair<std::string, const std::vector<LabeledSequence>*>{"human", &human},
                                  {"model", &model}}) {
    if (pop->empty()) {
      warnings.push_back("no " + name + " sequences; " + name + "-side outputs omitted");
      err << "stats: warning: no " << name << " sequences\n";
      continue;
    }
    auto m = transition_matrix(*pop, norms);
    write_json(config.paths.out / ("transition_" + name + ".json"), matrix_json(m));
    write_file_atomic(config.paths.out / ("transition_" + name + ".csv"), matrix_csv(m));

    const auto wb = within_between_split(m);
    for (double v : wb.within) wb_csv << name << ",within," << num(v) << '\n';
    for (double v : wb.between) wb_csv << name << ",between," << num(v) << '\n';

    std::vector<double> ratios;
    for (const auto& s : *pop) ratios.push_back(s.switch_ratio);
    json side{{"n_sequences", pop->size()},
              {"mean_switch_ratio", mean(ratios)},
              {"sd_switch_ratio", sample_sd(ratios)},
              {"n_within", wb.within.size()},
              {"n_between", wb.between.size()}};
    if (!wb.within.empty() && !wb.between.empty()) {
      side["within_vs_between"] = to_json(mann_whitney_u(wb.within, wb.between, Sidedness::greater));
    }
    report["sources"][name] = side;
    matrices.emplace(name, std::move(m));
  }
  write_file_atomic(config.paths.out / "within_between.csv", wb_csv.str());

  // Per model tag switch ratios.
  std::map<std::string, std::vector<double>> by_tag;
  for (const auto& s : model) by_tag[s.model_tag.value_or("")].push_back(s.switch_ratio);
  for (const auto& [tag, r] : by_tag) {
    report["model_tags"][tag] = {{"n_sequences", r.size()}, {"mean_switch_ratio", mean(r)}};
  }

  report["spearman"] = nullptr;
  report["switch_ratio"] = nullptr;
  if (matrices.size() == 2) {
    try {
      const auto s = compare_matrices(matrices.at("human"), matrices.at("model"), config.cells);
      report["spearman"] = {{"rho", s.rho},
                            {"p_value", s.p_value},
                            {"n", s.n},
                            {"cells", config.cells == CellSelection::union_rows ? "union" : "intersection"}};
    } catch (const std::invalid_argument& e) {
      warnings.push_back(std::string("spearman: ") + e.what());
    }
    const auto sr = switch_ratio_summary(human, model);
    report["switch_ratio"] = {{"human_mean", sr.human_mean},
                              {"model_mean", sr.model_mean},
                              {"n_human", sr.n_human},
                              {"n_model", sr.n_model},
                              {"test", to_json(sr.test)}};
  }
  report["warnings"] = warnings;
  report["reference_values"] = {{"note", kReferenceNote},
                                {"spearman_rho", 0.701},
                                {"human_mean_switch_ratio", 0.55},
                                {"model_mean_switch_ratio", 0.40},
                                {"human_sequences_kept", 681},
                                {"model_sequences_kept", 2285}};
  write_json(config.paths.out / "stats.json", report);
  err << "stats: wrote " << matrices.size() << " transition matrices\n";
}

void cmd_lens(const RunConfig& config, std::ostream& err) {
  if (config.paths.manifests.empty()) throw ConfigError("missing required path: manifest");
  const auto norms = parse_norms(require(config.paths.norms, "norms"));
  const auto labeled = read_labeled(require(config.paths.labeled, "labeled"));
  const auto loaded = open_dump(config.paths.manifests.front(), config, true);
  const auto& manifest = loaded.manifest;

  if (config.layer_threshold >= static_cast<int>(manifest.num_layers)) {
    throw std::invalid_argument("layer_threshold " + std::to_string(config.layer_threshold) +
                                " must be below the last layer index " + std::to_string(manifest.num_layers));
  }
  const auto head = open_head(loaded);
  const auto events = lens::load_events(loaded.dump, manifest);
  if (events.empty()) throw InputError("manifest lists no events");
  const auto parts = build_partitions(events, labeled, norms, manifest);
  prepare_out(config);

  json report;
  report["model_tag"] = manifest.model_tag;
  report["n_events"] = events.size();
  std::size_t n_switch = 0, n_excluded = 0;
  for (const auto& e : events) n_switch += e.meta.is_switch ? 1 : 0;
  for (const auto& p : parts) n_excluded += p.excluded_ambiguous.size();
  report["n_switch_events"] = n_switch;
  report["excluded_ambiguous_tokens_total"] = n_excluded;

  // Switch-aligned curves of the output distribution.
  const auto series = lens::event_series(events, head, parts);
  std::ostringstream aligned;
  aligned << "relative_position,series,class,mean,sem,n\n";
  for (auto kind : lens::kAllSeries) {
    const std::string name(lens::to_string(kind));
    try {
      const auto res = lens::align_on_switch(series, config.window, kind);
      const auto& c = res.curve;
      for (std::size_t i = 0; i < c.relative_positions.size(); ++i) {
        aligned << c.relative_positions[i] << ',' << name << ",switch," << num(c.mean[i]) << ',' << num(c.sem[i])
                << ',' << c.n_events[i] << '\n';
      }
      report["aligned"][name] = {{"skipped_sequences", res.skipped_sequences}, {"n_switch_events", res.n_switch_events}};
    } catch (const std::invalid_argument& e) {
      report["aligned"][name] = {{"error", e.what()}};
      err << "lens: warning: " << name << " curve: " << e.what() << '\n';
    }

    const auto pp = lens::paired_positions(series, kind, -1, 0);
    if (pp.from.size() >= 2) {
      const auto seed = mix_seed(config.seed, static_cast<std::uint64_t>(kind));
      report["position_tests"][name] = to_json(paired_permutation_test(pp.from, pp.to, config.resamples, seed));
      report["position_tests"][name]["n_pairs"] = pp.from.size();
    } else {
      report["position_tests"][name] = nullptr;
    }
  }
  write_file_atomic(config.paths.out / "aligned_curves.csv", aligned.str());

  // Layer-wise logit lens curves.
  const auto curves = lens::layer_curves(events, head, parts);
  std::ostringstream layers;
  layers << "layer,series,class,mean,sem,n\n";
  for (std::size_t l = 0; l < curves.num_layers(); ++l) {
    for (int cls = 0; cls < 2; ++cls) {
      for (auto kind : lens::kAllSeries) {
        const auto& cell = curves.at(l, cls == 1, kind);
        layers << l << ',' << lens::to_string(kind) << ',' << (cls ? "switch" : "non_switch") << ',' << num(cell.mean)
               << ',' << num(cell.sem) << ',' << cell.n << '\n';
      }
    }
  }
  write_file_atomic(config.paths.out / "layer_curves.csv", layers.str());

  const auto late = lens::late_layer_summary(curves, config.layer_threshold);
  json late_json{{"layer_threshold", late.layer_threshold}, {"layers", late.layers}};
  for (int cls = 0; cls < 2; ++cls) {
    const char* cname = cls ? "switch" : "non_switch";
    late_json["table"][cname] = {{"within", opt(late.table[cls][0])}, {"between", opt(late.table[cls][1])}};
    const auto w = lens::late_layer_event_means(curves, config.layer_threshold, cls == 1, lens::SeriesKind::within);
    const auto b = lens::late_layer_event_means(curves, config.layer_threshold, cls == 1, lens::SeriesKind::between);
    late_json["within_vs_between"][cname] =
        (!w.empty() && !b.empty()) ? to_json(mann_whitney_u(w, b, Sidedness::two_sided)) : json(nullptr);
  }
  late_json["reference_values"] = {{"note", kReferenceNote},
                                   {"non_switch", {{"within", 0.0035}, {"between", 0.0005}}},
                                   {"switch", {{"within", 0.0008}, {"between", 0.0007}}}};
  write_json(config.paths.out / "late_layer_summary.json", late_json);

  report["reference_values"] = {{"note", kReferenceNote},
                                {"position_effect_d", {{"within", -0.158}, {"between", 0.144}, {"actual", -0.184}}}};
  write_json(config.paths.out / "lens.json", report);
  err << "lens: " << events.size() << " events, " << curves.num_layers() << " layers\n";
}

void cmd_probe(const RunConfig& config, std::ostream& err) {
  if (config.paths.manifests.empty()) throw ConfigError("missing required path: manifest");
  const bool single = config.paths.manifests.size() == 1;
  if (!single && config.paths.dump) throw ConfigError("--dump can only be combined with a single manifest");

  std::vector<probe::ProbeTask> tasks;
  std::size_t clamped = 0;
  std::optional<CategoryNorms> norms;
  std::vector<LabeledSequence> labeled;
  if (config.probe_features == ProbeFeatures::nll) {
    norms = parse_norms(require(config.paths.norms, "norms"));
    labeled = read_labeled(require(config.paths.labeled, "labeled"));
  }

  for (const auto& mpath : config.paths.manifests) {
    const auto loaded = open_dump(mpath, config, single);
    const auto events = lens::load_events(loaded.dump, loaded.manifest);

    std::map<std::string, std::vector<lens::EventRecord>> by_condition;
    for (const auto& e : events) by_condition[e.meta.condition.value_or("sequences")].push_back(e);

    for (auto& [condition, evs] : by_condition) {
      probe::ProbeTask task{loaded.manifest.model_tag, condition, {}};
      if (config.probe_features == ProbeFeatures::residual) {
        const auto n_layers = evs.front().residuals.size();
        for (std::size_t l = 0; l < n_layers; ++l) task.layers.push_back(probe::residual_dataset(evs, static_cast<int>(l)));
      } else {
        const auto head = open_head(loaded);
        const auto parts = build_partitions(evs, labeled, *norms, loaded.manifest);
        const auto series = lens::event_series(evs, head, parts);
        auto nll = probe::nll_features(series, config.nll_mode);
        clamped += nll.n_clamped;
        task.layers.push_back(std::move(nll.data));
      }
      tasks.push_back(std::move(task));
    }
  }

  const auto report = probe::train_layerwise(tasks, config.probe_config());
  prepare_out(config);

  json cells = json::array();
  std::ostringstream csv;
  csv << "model_tag,condition,layer,auroc,auroc_sd,n_components,n_rows\n";
  std::size_t missing = 0;
  for (const auto& c : report.cells) {
    json jc{{"model_tag", c.model_tag},  {"condition", c.condition},   {"layer", c.layer},
            {"auroc", opt(c.auroc)},     {"auroc_sd", opt(c.auroc_sd)}, {"auroc_repeats", c.auroc_repeats},
            {"n_rows", c.n_rows},        {"mean_components", c.mean_components},
            {"converged", c.all_converged}};
    jc["error"] = c.error ? json(*c.error) : json(nullptr);
    if (!c.auroc) ++missing;
    cells.push_back(jc);
    csv << c.model_tag << ',' << c.condition << ',' << c.layer << ',' << num(c.auroc) << ',' << num(c.auroc_sd) << ','
        << (c.auroc ? num(c.mean_components) : std::string()) << ',' << c.n_rows << '\n';
  }
  json summary = json::array();
  for (const auto& s : report.summary) {
    summary.push_back({{"model_tag", s.model_tag},
                       {"condition", s.condition},
                       {"top_k", config.top_k},
                       {"top_k_mean", opt(s.top_k_mean)},
                       {"top_layers", s.top_layers}});
  }
  json out{{"split_seed", config.seed},
           {"features", config.probe_features == ProbeFeatures::residual ? "residual" : "nll"},
           {"config", config_to_json(config)},
           {"cells", cells},
           {"summary", summary},
           {"missing_cells", missing},
           {"reference_values",
            {{"note", kReferenceNote},
             {"human_sequence_probe_auroc", 0.57},
             {"nll_output_auroc", 0.751},
             {"contrastive_auroc", {{"neutral", 0.96}, {"convergent", 0.98}, {"divergent", 0.97}}}}}};
  if (config.probe_features == ProbeFeatures::nll) out["n_clamped_probabilities"] = clamped;
  write_json(config.paths.out / "probe_report.json", out);
  write_file_atomic(config.paths.out / "probe_heatmap.csv", csv.str());
  err << "probe: " << report.cells.size() << " cells (" << missing << " missing), seed " << config.seed << '\n';
}

void cmd_contrastive(const RunConfig& config, std::ostream& err) {
  const auto norms = parse_norms(require(config.paths.norms, "norms"));
  const auto labeled = read_labeled(require(config.paths.labeled, "labeled"));
  const auto emb = contrastive::load_embeddings(require(config.paths.embeddings, "embeddings"), norms);

  std::vector<LabeledSequence> human;
  for (const auto& s : labeled)
    if (s.source == Source::human) human.push_back(s);
  if (human.empty()) throw InputError("no human sequences to build contrastive pairs from");

  contrastive::BuildOptions options;
  options.conditions = config.conditions;
  options.polarities = config.polarities;
  options.seed = config.seed;
  const auto result = contrastive::build_dataset(human, norms, emb, options);
  prepare_out(config);

  std::ostringstream jsonl;
  write_jsonl(jsonl, result.pairs);
  write_file_atomic(config.paths.out / "contrastive_pairs.jsonl", jsonl.str());

  json skipped = json::array();
  for (const auto& s : result.skipped) skipped.push_back({{"sequence_id", s.sequence_id}, {"reason", s.reason}});
  write_json(config.paths.out / "contrastive_report.json",
             {{"seed", config.seed},
              {"n_sequences", human.size()},
              {"n_pairs", result.pairs.size()},
              {"embedding_dim", emb.dim},
              {"unavailable_animals", emb.unavailable},
              {"skipped", skipped}});
  err << "contrastive: " << result.pairs.size() << " pairs, " << result.skipped.size() << " skips\n";
}

}  // namespace forage::cli
