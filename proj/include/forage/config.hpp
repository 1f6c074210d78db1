#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "forage/contrastive.hpp"
#include "forage/lens.hpp"
#include "forage/probe.hpp"
#include "forage/seqstats.hpp"

namespace forage::cli {

/// Invalid configuration: unknown key, wrong type or out-of-range value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Paths {
  std::optional<std::filesystem::path> norms;
  std::optional<std::filesystem::path> sequences;
  std::optional<std::filesystem::path> labeled;
  std::vector<std::filesystem::path> manifests;
  std::optional<std::filesystem::path> dump;
  std::optional<std::filesystem::path> head;
  std::optional<std::filesystem::path> embeddings;
  std::filesystem::path out = ".";
};

enum class ProbeFeatures { residual, nll };

struct RunConfig {
  Paths paths;
  std::size_t truncate_len = 35;
  lens::Window window{-3, 2};
  int layer_threshold = 39;
  double variance_target = 0.95;
  long k_max = 50;
  double l2 = 1e-2;
  double tol = 1e-6;
  int max_iters = 1000;
  double split_frac = 0.8;
  int split_repeats = 5;
  std::uint64_t resamples = 10000;
  std::uint64_t seed = 0;
  CellSelection cells = CellSelection::union_rows;
  int top_k = 3;
  ProbeFeatures probe_features = ProbeFeatures::residual;
  probe::NllMode nll_mode = probe::NllMode::three_features;
  std::vector<contrastive::Condition> conditions{contrastive::Condition::neutral, contrastive::Condition::convergent,
                                                 contrastive::Condition::divergent};
  std::vector<contrastive::Polarity> polarities{contrastive::Polarity::max, contrastive::Polarity::min};

  probe::ProbeConfig probe_config() const;
  /// Throws ConfigError for values outside their documented ranges.
  void validate() const;
};

/// Overlays a JSON config document onto `base`. Unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
nlohmann::json config_to_json(const RunConfig& c);

}  // namespace forage::cli
