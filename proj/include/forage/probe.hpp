#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "forage/lens.hpp"

namespace forage::probe {

/// Feature rows with binary labels (1 = switch) and the sequence each row
/// came from, used to keep sequences on one side of a split.
struct ProbeDataset {
  Eigen::MatrixXd X;
  std::vector<int> y;
  std::vector<std::string> groups;
  int layer = 0;

  std::size_t size() const noexcept { return y.size(); }
  /// Throws std::invalid_argument unless shapes agree, n >= 4, both classes
  /// are present and X is finite.
  void validate() const;
  ProbeDataset subset(std::span<const std::size_t> rows) const;
};

struct PcaModel {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd components;  // [k x d], orthonormal rows
  Eigen::VectorXd explained_variance;
  Eigen::VectorXd explained_variance_ratio;

  Eigen::Index num_components() const noexcept { return components.rows(); }
};

/// Keeps the smallest k whose cumulative explained variance reaches
/// `variance_target`, capped at min(k_max, n-1, d). Component signs are fixed
/// so that each row's largest-magnitude entry is positive.
PcaModel pca_fit(const Eigen::MatrixXd& X, double variance_target = 0.95, Eigen::Index k_max = 50);
Eigen::MatrixXd pca_transform(const PcaModel& model, const Eigen::MatrixXd& X);
Eigen::MatrixXd pca_reconstruct(const PcaModel& model, const Eigen::MatrixXd& Z);

struct LogisticModel {
  Eigen::VectorXd weights;
  double bias = 0.0;
  double l2_lambda = 0.0;
  bool converged = false;
  int n_iters = 0;
  /// Objective after every accepted step (first entry: initial point).
  std::vector<double> loss_trace;

  Eigen::VectorXd decision_function(const Eigen::MatrixXd& X) const;
};

struct LossAndGradient {
  double loss = 0.0;
  Eigen::VectorXd grad_w;
  double grad_b = 0.0;
};

/// Mean cross-entropy + l2_lambda * |w|^2 / 2 (bias unpenalized).
LossAndGradient logistic_objective(const Eigen::MatrixXd& X, std::span<const int> y, double l2_lambda,
                                   const Eigen::VectorXd& w, double b);

/// Full-batch gradient descent with Armijo backtracking; converged when the
/// gradient's infinity norm drops below `tol`. Throws std::invalid_argument
/// for single-class labels and std::runtime_error on a non-finite loss.
LogisticModel logreg_fit(const Eigen::MatrixXd& X, std::span<const int> y, double l2_lambda = 1e-2,
                         int max_iters = 1000, double tol = 1e-6);

/// Pair-counting AUROC with ties counted one half. Throws on a single class.
double auroc(std::span<const double> scores, std::span<const int> y);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
  std::vector<std::string> train_groups;
  std::vector<std::string> eval_groups;
};

/// Group-level, class-stratified holdout. Roughly `frac` of the groups go to
/// training; both sides contain both classes. Throws std::invalid_argument
/// when that is impossible.
Split split_train_eval(const ProbeDataset& ds, double frac, std::uint64_t seed);

struct ProbeConfig {
  double variance_target = 0.95;
  Eigen::Index k_max = 50;
  double l2_lambda = 1e-2;
  double tol = 1e-6;
  int max_iters = 1000;
  double train_frac = 0.8;
  int repeats = 5;
  int top_k = 3;
  std::uint64_t seed = 0;
};

struct CellResult {
  std::string model_tag;
  std::string condition;
  int layer = 0;
  std::optional<double> auroc;  // mean over repeats
  std::optional<double> auroc_sd;
  std::vector<double> auroc_repeats;
  double mean_components = 0.0;
  std::size_t n_rows = 0;
  bool all_converged = true;
  std::optional<std::string> error;
};

struct SummaryRow {
  std::string model_tag;
  std::string condition;
  std::optional<double> top_k_mean;
  std::vector<int> top_layers;
};

struct ProbeReport {
  ProbeConfig config;
  std::vector<CellResult> cells;
  std::vector<SummaryRow> summary;
};

/// Split, fit PCA on train, fit logistic regression on the projected train
/// rows and score the eval rows; repeated `config.repeats` times with seeds
/// derived from `seed`. Errors propagate.
CellResult evaluate_dataset(const ProbeDataset& ds, const ProbeConfig& config, std::uint64_t seed);

/// One (model_tag, condition) slice with a dataset per layer.
struct ProbeTask {
  std::string model_tag;
  std::string condition;
  std::vector<ProbeDataset> layers;
};

/// Evaluates every layer of every task. All layers of a task share the split
/// seed; failing cells are recorded with an error instead of aborting.
ProbeReport train_layerwise(std::span<const ProbeTask> tasks, const ProbeConfig& config);

/// Residual vectors of `layer` for the given events, labelled by is_switch.
ProbeDataset residual_dataset(std::span<const lens::EventRecord> events, int layer);

enum class NllMode { three_features, actual_only };

struct NllDataset {
  ProbeDataset data;
  std::size_t n_clamped = 0;
};

/// Final-distribution features per event: -log p(actual), -log within_mean,
/// -log between_mean (or only the first). Probabilities below 1e-12 (or
/// undefined set means) are clamped and counted.
NllDataset nll_features(std::span<const lens::SeriesPoint> points, NllMode mode = NllMode::three_features);

}  // namespace forage::probe
