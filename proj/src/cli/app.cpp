#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <map>

#include "forage/cli.hpp"
#include "forage/error.hpp"
#include "forage/flns.hpp"

namespace forage::cli {

namespace {

// Values given on the command line; empty optionals were not passed.
struct Overrides {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> norms, sequences, labeled, dump, head, embeddings;
  std::vector<std::string> manifests;
  std::optional<std::size_t> truncate_len;
  std::optional<int> layer_threshold, window_lo, window_hi, top_k, repeats;
  std::optional<std::uint64_t> resamples;
  std::optional<std::string> cells, features, nll_mode;
};

void apply(const Overrides& o, RunConfig& c) {
  auto path = [](const std::optional<std::string>& s, std::optional<std::filesystem::path>& dst) {
    if (s) dst = *s;
  };
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.paths.out = *o.out;
  path(o.norms, c.paths.norms);
  path(o.sequences, c.paths.sequences);
  path(o.labeled, c.paths.labeled);
  path(o.dump, c.paths.dump);
  path(o.head, c.paths.head);
  path(o.embeddings, c.paths.embeddings);
  if (!o.manifests.empty()) c.paths.manifests.assign(o.manifests.begin(), o.manifests.end());
  if (o.truncate_len) c.truncate_len = *o.truncate_len;
  if (o.layer_threshold) c.layer_threshold = *o.layer_threshold;
  if (o.window_lo) c.window.lo = *o.window_lo;
  if (o.window_hi) c.window.hi = *o.window_hi;
  if (o.top_k) c.top_k = *o.top_k;
  if (o.repeats) c.split_repeats = *o.repeats;
  if (o.resamples) c.resamples = *o.resamples;
  if (o.cells) c.cells = *o.cells == "union" ? CellSelection::union_rows : CellSelection::intersection_rows;
  if (o.features) c.probe_features = *o.features == "nll" ? ProbeFeatures::nll : ProbeFeatures::residual;
  if (o.nll_mode) c.nll_mode = *o.nll_mode == "actual" ? probe::NllMode::actual_only : probe::NllMode::three_features;
  c.validate();
}

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cluster/switch analysis of semantic-fluency sequences", "forage-lens"};
  app.require_subcommand(1);
  app.fallthrough();

  Overrides o;
  app.add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Master seed");
  app.add_option("--out", o.out, "Output directory");

  auto norms = [&](CLI::App* s) { s->add_option("--norms", o.norms, "Category norms CSV"); };
  auto labeled = [&](CLI::App* s) { s->add_option("--labeled", o.labeled, "Labeled sequences JSONL"); };
  auto dump = [&](CLI::App* s) {
    s->add_option("--manifest", o.manifests, "Activation manifest JSON (repeatable)");
    s->add_option("--dump", o.dump, "FLNS dump, overriding the manifest");
    s->add_option("--head", o.head, "FLNS file with unembed and final_norm_weight");
  };

  auto* label = app.add_subcommand("label", "Validate, filter and label raw sequences");
  norms(label);
  label->add_option("--sequences", o.sequences, "Raw sequences JSONL");
  label->add_option("--truncate-len", o.truncate_len, "Maximum kept sequence length");

  auto* stats = app.add_subcommand("stats", "Transition matrices and population statistics");
  norms(stats);
  labeled(stats);
  stats->add_option("--cells", o.cells, "Cells compared by Spearman")->check(CLI::IsMember({"union", "intersection"}));

  auto* lens = app.add_subcommand("lens", "Logit-lens set probabilities around switches");
  norms(lens);
  labeled(lens);
  dump(lens);
  lens->add_option("--layer-threshold", o.layer_threshold, "First layer of the late-layer average");
  lens->add_option("--window-lo", o.window_lo, "Earliest relative position");
  lens->add_option("--window-hi", o.window_hi, "Latest relative position");
  lens->add_option("--resamples", o.resamples, "Permutation resamples");

  auto* prb = app.add_subcommand("probe", "Layer-wise linear switch probes");
  norms(prb);
  labeled(prb);
  dump(prb);
  prb->add_option("--features", o.features, "Probe features")->check(CLI::IsMember({"residual", "nll"}));
  prb->add_option("--nll-mode", o.nll_mode, "NLL feature set")->check(CLI::IsMember({"three", "actual"}));
  prb->add_option("--top-k", o.top_k, "Layers averaged in the summary");
  prb->add_option("--repeats", o.repeats, "Split repeats per cell");

  auto* con = app.add_subcommand("contrastive", "Build contrastive prompt pairs");
  norms(con);
  labeled(con);
  con->add_option("--embeddings", o.embeddings, "Word embeddings (text format)");

  const std::map<CLI::App*, std::function<void(const RunConfig&, std::ostream&)>> commands{
      {label, cmd_label}, {stats, cmd_stats}, {lens, cmd_lens}, {prb, cmd_probe}, {con, cmd_contrastive}};

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    RunConfig config;
    if (o.config) config = load_config(*o.config);
    apply(o, config);
    for (const auto& [sub, fn] : commands) {
      if (sub->parsed()) fn(config, err);
    }
    return kOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}

int run(int argc, char** argv) { return run(argc, argv, std::cout, std::cerr); }

}  // namespace forage::cli
