#include "forage/config.hpp"

#include <fstream>
#include <initializer_list>
#include <string>

namespace forage::cli {

using nlohmann::json;

namespace {

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown config key '" + where + (where.empty() ? "" : ".") + key + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + key + "' has the wrong type");
  }
}

void read_path(const json& obj, const char* key, std::optional<std::filesystem::path>& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  if (it->is_null()) {
    out.reset();
    return;
  }
  if (!it->is_string()) throw ConfigError(std::string("paths.") + key + " must be a string");
  out = it->get<std::string>();
}

}  // namespace

probe::ProbeConfig RunConfig::probe_config() const {
  probe::ProbeConfig p;
  p.variance_target = variance_target;
  p.k_max = k_max;
  p.l2_lambda = l2;
  p.tol = tol;
  p.max_iters = max_iters;
  p.train_frac = split_frac;
  p.repeats = split_repeats;
  p.top_k = top_k;
  p.seed = seed;
  return p;
}

void RunConfig::validate() const {
  if (truncate_len < 2) throw ConfigError("truncate_len must be >= 2");
  if (!(window.lo < 0 && window.hi >= 0)) throw ConfigError("window must satisfy lo < 0 <= hi");
  if (!(variance_target > 0.0 && variance_target <= 1.0)) throw ConfigError("pca.variance_target must be in (0, 1]");
  if (k_max < 1) throw ConfigError("pca.k_max must be >= 1");
  if (!(l2 >= 0.0)) throw ConfigError("logreg.l2 must be >= 0");
  if (!(tol > 0.0)) throw ConfigError("logreg.tol must be > 0");
  if (max_iters < 1) throw ConfigError("logreg.max_iters must be >= 1");
  if (!(split_frac > 0.0 && split_frac < 1.0)) throw ConfigError("split.frac must be in (0, 1)");
  if (split_repeats < 1) throw ConfigError("split.repeats must be >= 1");
  if (resamples < 1) throw ConfigError("resamples must be >= 1");
  if (top_k < 1) throw ConfigError("probe.top_k must be >= 1");
  if (conditions.empty()) throw ConfigError("contrastive.conditions must not be empty");
  if (polarities.empty()) throw ConfigError("contrastive.polarities must not be empty");
}

RunConfig config_from_json(const json& j, RunConfig c) {
  check_keys(j,
             {"schema_version", "paths", "truncate_len", "window", "layer_threshold", "pca", "logreg", "split",
              "resamples", "seed", "stats", "probe", "contrastive"},
             "");

  if (auto it = j.find("paths"); it != j.end()) {
    const auto& p = *it;
    check_keys(p, {"norms", "sequences", "labeled", "manifests", "dump", "head", "embeddings", "out"}, "paths");
    read_path(p, "norms", c.paths.norms);
    read_path(p, "sequences", c.paths.sequences);
    read_path(p, "labeled", c.paths.labeled);
    read_path(p, "dump", c.paths.dump);
    read_path(p, "head", c.paths.head);
    read_path(p, "embeddings", c.paths.embeddings);
    if (auto m = p.find("manifests"); m != p.end()) {
      std::vector<std::string> v;
      read(p, "manifests", v, "paths.");
      c.paths.manifests.assign(v.begin(), v.end());
    }
    if (auto o = p.find("out"); o != p.end()) {
      std::string v;
      read(p, "out", v, "paths.");
      c.paths.out = v;
    }
  }

  if (j.contains("truncate_len")) {
    long long v = 0;
    read(j, "truncate_len", v, "");
    if (v < 2) throw ConfigError("truncate_len must be >= 2");
    c.truncate_len = static_cast<std::size_t>(v);
  }
  if (auto it = j.find("window"); it != j.end()) {
    std::vector<int> w;
    read(j, "window", w, "");
    if (w.size() != 2) throw ConfigError("window must be [lo, hi]");
    c.window = {w[0], w[1]};
  }
  read(j, "layer_threshold", c.layer_threshold, "");
  read(j, "resamples", c.resamples, "");
  read(j, "seed", c.seed, "");

  if (auto it = j.find("pca"); it != j.end()) {
    check_keys(*it, {"variance_target", "k_max"}, "pca");
    read(*it, "variance_target", c.variance_target, "pca.");
    read(*it, "k_max", c.k_max, "pca.");
  }
  if (auto it = j.find("logreg"); it != j.end()) {
    check_keys(*it, {"l2", "tol", "max_iters"}, "logreg");
    read(*it, "l2", c.l2, "logreg.");
    read(*it, "tol", c.tol, "logreg.");
    read(*it, "max_iters", c.max_iters, "logreg.");
  }
  if (auto it = j.find("split"); it != j.end()) {
    check_keys(*it, {"frac", "repeats"}, "split");
    read(*it, "frac", c.split_frac, "split.");
    read(*it, "repeats", c.split_repeats, "split.");
  }
  if (auto it = j.find("stats"); it != j.end()) {
    check_keys(*it, {"cells"}, "stats");
    std::string cells = c.cells == CellSelection::union_rows ? "union" : "intersection";
    read(*it, "cells", cells, "stats.");
    if (cells == "union")
      c.cells = CellSelection::union_rows;
    else if (cells == "intersection")
      c.cells = CellSelection::intersection_rows;
    else
      throw ConfigError("stats.cells must be union|intersection");
  }
  if (auto it = j.find("probe"); it != j.end()) {
    check_keys(*it, {"top_k", "features", "nll_mode"}, "probe");
    read(*it, "top_k", c.top_k, "probe.");
    if (auto f = it->find("features"); f != it->end()) {
      std::string v;
      read(*it, "features", v, "probe.");
      if (v == "residual")
        c.probe_features = ProbeFeatures::residual;
      else if (v == "nll")
        c.probe_features = ProbeFeatures::nll;
      else
        throw ConfigError("probe.features must be residual|nll");
    }
    if (auto f = it->find("nll_mode"); f != it->end()) {
      std::string v;
      read(*it, "nll_mode", v, "probe.");
      if (v == "three")
        c.nll_mode = probe::NllMode::three_features;
      else if (v == "actual")
        c.nll_mode = probe::NllMode::actual_only;
      else
        throw ConfigError("probe.nll_mode must be three|actual");
    }
  }
  if (auto it = j.find("contrastive"); it != j.end()) {
    check_keys(*it, {"conditions", "polarities"}, "contrastive");
    try {
      if (auto f = it->find("conditions"); f != it->end()) {
        c.conditions.clear();
        for (const auto& s : f->get<std::vector<std::string>>()) c.conditions.push_back(contrastive::condition_from_string(s));
      }
      if (auto f = it->find("polarities"); f != it->end()) {
        c.polarities.clear();
        for (const auto& s : f->get<std::vector<std::string>>()) c.polarities.push_back(contrastive::polarity_from_string(s));
      }
    } catch (const std::exception& e) {
      throw ConfigError(std::string("contrastive: ") + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return config_from_json(j, std::move(base));
}

json config_to_json(const RunConfig& c) {
  auto opt = [](const std::optional<std::filesystem::path>& p) { return p ? json(p->string()) : json(nullptr); };
  std::vector<std::string> manifests;
  for (const auto& m : c.paths.manifests) manifests.push_back(m.string());
  std::vector<std::string> conditions, polarities;
  for (auto x : c.conditions) conditions.emplace_back(contrastive::to_string(x));
  for (auto x : c.polarities) polarities.emplace_back(contrastive::to_string(x));
  return json{
      {"schema_version", 1},
      {"paths",
       {{"norms", opt(c.paths.norms)},
        {"sequences", opt(c.paths.sequences)},
        {"labeled", opt(c.paths.labeled)},
        {"manifests", manifests},
        {"dump", opt(c.paths.dump)},
        {"head", opt(c.paths.head)},
        {"embeddings", opt(c.paths.embeddings)},
        {"out", c.paths.out.string()}}},
      {"truncate_len", c.truncate_len},
      {"window", {c.window.lo, c.window.hi}},
      {"layer_threshold", c.layer_threshold},
      {"pca", {{"variance_target", c.variance_target}, {"k_max", c.k_max}}},
      {"logreg", {{"l2", c.l2}, {"tol", c.tol}, {"max_iters", c.max_iters}}},
      {"split", {{"frac", c.split_frac}, {"repeats", c.split_repeats}}},
      {"resamples", c.resamples},
      {"seed", c.seed},
      {"stats", {{"cells", c.cells == CellSelection::union_rows ? "union" : "intersection"}}},
      {"probe",
       {{"top_k", c.top_k},
        {"features", c.probe_features == ProbeFeatures::residual ? "residual" : "nll"},
        {"nll_mode", c.nll_mode == probe::NllMode::three_features ? "three" : "actual"}}},
      {"contrastive", {{"conditions", conditions}, {"polarities", polarities}}},
  };
}

}  // namespace forage::cli
