#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "forage/flns.hpp"
#include "forage/norms.hpp"

namespace forage::lens {

using TokenId = std::uint32_t;

enum class NormKind { rms, layer };

std::string_view to_string(NormKind k) noexcept;
NormKind norm_kind_from_string(std::string_view s);

/// Final normalization + unembedding of a decoder, enough to decode any
/// residual-stream vector into a next-token distribution.
struct ModelHead {
  using RowMajorMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  RowMajorMatrixXf unembed;  // [d_model x V]
  Eigen::VectorXf final_norm_weight;
  double norm_eps = 1e-5;
  NormKind norm_kind = NormKind::rms;

  Eigen::Index d_model() const noexcept { return unembed.rows(); }
  Eigen::Index vocab_size() const noexcept { return unembed.cols(); }
  /// Throws std::invalid_argument on inconsistent shapes or eps <= 0.
  void validate() const;
};

struct EventMeta {
  std::string sequence_id;
  /// Transition index t: the context ends with the comma after item t and
  /// the event concerns the move to item t+1.
  std::size_t position = 0;
  bool is_switch = false;
  std::optional<std::string> condition;
};

/// Sidecar JSON describing a dump produced by the extraction adapter.
struct Manifest {
  std::string model_tag;
  std::size_t num_layers = 0;  // residuals exist for layers 0..num_layers
  std::size_t d_model = 0;
  std::size_t vocab_size = 0;
  NormKind norm_kind = NormKind::rms;
  double norm_eps = 1e-5;
  std::map<std::string, TokenId> first_token;
  std::vector<EventMeta> events;
  /// Dump and head files, relative to the manifest's directory.
  std::optional<std::string> dump_file;
  std::optional<std::string> head_file;
};

void to_json(nlohmann::json& j, const EventMeta& e);
void from_json(const nlohmann::json& j, EventMeta& e);
void to_json(nlohmann::json& j, const Manifest& m);
void from_json(const nlohmann::json& j, Manifest& m);

Manifest read_manifest(const std::filesystem::path& path);

std::string resid_name(std::size_t event, std::size_t layer);
std::string final_dist_name(std::size_t event);
inline constexpr const char* kUnembedTensor = "unembed";
inline constexpr const char* kFinalNormTensor = "final_norm_weight";

/// Reads `unembed` and `final_norm_weight` from a head dump and checks them
/// against the manifest. Missing tensors raise DumpError naming the tensor.
ModelHead load_head(const flns::TensorDump& dump, const Manifest& manifest);

struct EventRecord {
  EventMeta meta;
  std::vector<Eigen::VectorXf> residuals;  // one per layer 0..L
  std::optional<std::vector<double>> final_dist;
};

/// Loads every manifest event (residuals for all layers, plus the final
/// distribution when present).
std::vector<EventRecord> load_events(const flns::TensorDump& dump, const Manifest& manifest);

/// Decodes a residual vector through the final norm and unembedding, then a
/// max-subtracted softmax. Throws std::invalid_argument on a size mismatch.
std::vector<double> logitlens(std::span<const float> h, const ModelHead& head);
std::vector<double> logitlens(const Eigen::VectorXf& h, const ModelHead& head);

struct TokenSetPartition {
  std::vector<TokenId> within;  // sorted, disjoint from between
  std::vector<TokenId> between;
  std::vector<TokenId> excluded_ambiguous;
  std::optional<TokenId> actual;
};

/// Splits the first tokens of every not-yet-produced norms animal into
/// within-category (shares a category with `prev_animal`) and between sets.
/// Tokens claimed by both sides are moved to `excluded_ambiguous`.
TokenSetPartition partition_vocab(const std::string& prev_animal, std::span<const std::string> produced,
                                  const std::optional<std::string>& next_animal, const CategoryNorms& norms,
                                  const std::map<std::string, TokenId>& first_token);

/// Missing (nullopt) when the corresponding set is empty.
struct SetProbabilities {
  std::optional<double> within;
  std::optional<double> between;
  std::optional<double> actual;
};

SetProbabilities set_probability(std::span<const double> dist, const TokenSetPartition& part);

enum class SeriesKind { within, between, actual };
inline constexpr std::array<SeriesKind, 3> kAllSeries{SeriesKind::within, SeriesKind::between, SeriesKind::actual};

std::string_view to_string(SeriesKind k) noexcept;
std::optional<double> select(const SetProbabilities& p, SeriesKind k);

/// Per-transition set probabilities of one sequence position.
struct SeriesPoint {
  std::string sequence_id;
  std::size_t position = 0;
  bool is_switch = false;
  SetProbabilities values;
};

struct Window {
  int lo = -3;
  int hi = 2;
};

struct AlignedCurve {
  SeriesKind kind = SeriesKind::within;
  std::vector<int> relative_positions;
  std::vector<std::optional<double>> mean;
  std::vector<std::optional<double>> sem;
  std::vector<std::size_t> n_events;
};

struct AlignResult {
  AlignedCurve curve;
  /// Sequences whose series could not be z-scored (fewer than two values or
  /// zero spread).
  std::vector<std::string> skipped_sequences;
  std::size_t n_switch_events = 0;
};

/// Z-scores each sequence's series over its own positions, then averages the
/// values at t+lo..t+hi around every switch at t. Throws std::invalid_argument
/// when there is no usable switch event or the window is invalid.
AlignResult align_on_switch(std::span<const SeriesPoint> points, Window window, SeriesKind kind);

struct PairedPositions {
  std::vector<double> from;
  std::vector<double> to;
};

/// Z-scored values at relative positions `from_rel` and `to_rel` of every
/// switch event where both exist (input to the paired permutation test).
PairedPositions paired_positions(std::span<const SeriesPoint> points, SeriesKind kind, int from_rel, int to_rel);

struct CurveCell {
  std::optional<double> mean;
  std::optional<double> sem;
  std::size_t n = 0;
};

/// cells[layer][is_switch][series]
struct LayerCurves {
  std::vector<std::array<std::array<CurveCell, 3>, 2>> cells;
  /// Per-event, per-layer set probabilities behind the means.
  std::vector<std::vector<SetProbabilities>> event_values;
  std::vector<bool> event_is_switch;

  std::size_t num_layers() const noexcept { return cells.size(); }
  const CurveCell& at(std::size_t layer, bool is_switch, SeriesKind kind) const {
    return cells[layer][is_switch ? 1 : 0][static_cast<std::size_t>(kind)];
  }
};

/// Logit-lens set probabilities for every event at every layer, averaged
/// separately over switch and non-switch events.
LayerCurves layer_curves(std::span<const EventRecord> events, const ModelHead& head,
                         std::span<const TokenSetPartition> parts);

struct LateLayerSummary {
  int layer_threshold = 0;
  std::vector<std::size_t> layers;
  /// table[is_switch][0 = within, 1 = between]
  std::array<std::array<std::optional<double>, 2>, 2> table;
};

/// Averages the per-layer means over layers strictly above `layer_threshold`.
/// Throws std::invalid_argument unless layer_threshold < L (the last layer index).
LateLayerSummary late_layer_summary(const LayerCurves& curves, int layer_threshold);

/// Each event's set probability averaged over layers above the threshold;
/// events lacking the series are omitted.
std::vector<double> late_layer_event_means(const LayerCurves& curves, int layer_threshold, bool is_switch,
                                           SeriesKind kind);

/// Set probabilities of each event's final distribution (or, when the dump
/// has none, the logit lens of its last layer).
std::vector<SeriesPoint> event_series(std::span<const EventRecord> events, const ModelHead& head,
                                      std::span<const TokenSetPartition> parts);

}  // namespace forage::lens
