#include "forage/probe.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include <Eigen/SVD>

#include "forage/random.hpp"
#include "forage/seqstats.hpp"

namespace forage::probe {

void ProbeDataset::validate() const {
  if (static_cast<std::size_t>(X.rows()) != y.size() || groups.size() != y.size()) {
    throw std::invalid_argument("probe dataset: X, y and groups disagree in length");
  }
  if (y.size() < 4) throw std::invalid_argument("probe dataset: need at least 4 rows");
  std::size_t pos = 0;
  for (int v : y) {
    if (v != 0 && v != 1) throw std::invalid_argument("probe dataset: labels must be 0 or 1");
    pos += static_cast<std::size_t>(v);
  }
  if (pos == 0 || pos == y.size()) throw std::invalid_argument("probe dataset: both classes required");
  if (!X.allFinite()) throw std::invalid_argument("probe dataset: non-finite features");
}

ProbeDataset ProbeDataset::subset(std::span<const std::size_t> rows) const {
  ProbeDataset out;
  out.layer = layer;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.X.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
    out.y.push_back(y[rows[i]]);
    out.groups.push_back(groups[rows[i]]);
  }
  return out;
}

PcaModel pca_fit(const Eigen::MatrixXd& X, double variance_target, Eigen::Index k_max) {
  const auto n = X.rows();
  const auto d = X.cols();
  if (n < 2 || d < 1) throw std::invalid_argument("pca_fit: need at least 2 rows and 1 column");
  if (!(variance_target > 0.0 && variance_target <= 1.0)) throw std::invalid_argument("pca_fit: variance_target must be in (0,1]");
  if (k_max < 1) throw std::invalid_argument("pca_fit: k_max must be >= 1");

  PcaModel model;
  model.mean = X.colwise().mean();
  const Eigen::MatrixXd centered = X.rowwise() - model.mean;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd sq = svd.singularValues().array().square();
  const double total = sq.sum();
  if (!(total > 0.0) || total <= 1e-300) throw std::invalid_argument("pca_fit: data has zero variance");

  const Eigen::Index cap = std::min({k_max, n - 1, d});
  Eigen::Index k = 0;
  double cum = 0.0;
  while (k < sq.size()) {
    cum += sq[k] / total;
    ++k;
    if (cum >= variance_target - 1e-12) break;
  }
  k = std::clamp<Eigen::Index>(k, 1, cap);

  model.components = svd.matrixV().leftCols(k).transpose();
  for (Eigen::Index r = 0; r < k; ++r) {
    Eigen::Index idx;
    model.components.row(r).cwiseAbs().maxCoeff(&idx);
    if (model.components(r, idx) < 0) model.components.row(r) *= -1.0;
  }
  model.explained_variance = sq.head(k) / static_cast<double>(n - 1);
  model.explained_variance_ratio = sq.head(k) / total;
  return model;
}

Eigen::MatrixXd pca_transform(const PcaModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.mean.size()) {
    throw std::invalid_argument("pca_transform: expected " + std::to_string(model.mean.size()) + " columns, got " +
                                std::to_string(X.cols()));
  }
  return (X.rowwise() - model.mean) * model.components.transpose();
}

Eigen::MatrixXd pca_reconstruct(const PcaModel& model, const Eigen::MatrixXd& Z) {
  if (Z.cols() != model.num_components()) throw std::invalid_argument("pca_reconstruct: component count mismatch");
  return (Z * model.components).rowwise() + model.mean;
}

Eigen::VectorXd LogisticModel::decision_function(const Eigen::MatrixXd& X) const {
  if (X.cols() != weights.size()) throw std::invalid_argument("decision_function: feature count mismatch");
  return (X * weights).array() + bias;
}

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_labels(std::span<const int> y, std::size_t n) {
  if (y.size() != n) throw std::invalid_argument("label count does not match rows");
  std::size_t pos = 0;
  for (int v : y) {
    if (v != 0 && v != 1) throw std::invalid_argument("labels must be 0 or 1");
    pos += static_cast<std::size_t>(v);
  }
  if (pos == 0 || pos == y.size()) throw std::invalid_argument("both classes must be present");
}

}  // namespace

LossAndGradient logistic_objective(const Eigen::MatrixXd& X, std::span<const int> y, double l2_lambda,
                                   const Eigen::VectorXd& w, double b) {
  const auto n = X.rows();
  const Eigen::VectorXd z = (X * w).array() + b;
  Eigen::VectorXd resid(n);
  double ce = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double yi = y[static_cast<std::size_t>(i)];
    ce += softplus(z[i]) - yi * z[i];
    resid[i] = sigmoid(z[i]) - yi;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  LossAndGradient out;
  out.loss = ce * inv_n + 0.5 * l2_lambda * w.squaredNorm();
  out.grad_w = X.transpose() * resid * inv_n + l2_lambda * w;
  out.grad_b = resid.sum() * inv_n;
  return out;
}

LogisticModel logreg_fit(const Eigen::MatrixXd& X, std::span<const int> y, double l2_lambda, int max_iters,
                         double tol) {
  check_labels(y, static_cast<std::size_t>(X.rows()));
  if (l2_lambda < 0.0) throw std::invalid_argument("l2_lambda must be non-negative");

  LogisticModel m;
  m.l2_lambda = l2_lambda;
  m.weights = Eigen::VectorXd::Zero(X.cols());
  auto cur = logistic_objective(X, y, l2_lambda, m.weights, m.bias);
  m.loss_trace.push_back(cur.loss);

  constexpr double kArmijo = 1e-4;
  double step = 1.0;
  for (m.n_iters = 0; m.n_iters < max_iters; ++m.n_iters) {
    const double gmax = std::max(cur.grad_w.cwiseAbs().maxCoeff(), std::abs(cur.grad_b));
    if (gmax < tol) {
      m.converged = true;
      break;
    }
    const double gsq = cur.grad_w.squaredNorm() + cur.grad_b * cur.grad_b;
    bool accepted = false;
    while (step > 1e-20) {
      Eigen::VectorXd w = m.weights - step * cur.grad_w;
      const double b = m.bias - step * cur.grad_b;
      auto next = logistic_objective(X, y, l2_lambda, w, b);
      if (!std::isfinite(next.loss)) throw std::runtime_error("logreg_fit: non-finite loss");
      if (next.loss <= cur.loss - kArmijo * step * gsq) {
        m.weights = std::move(w);
        m.bias = b;
        cur = std::move(next);
        m.loss_trace.push_back(cur.loss);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no descent possible at machine precision
    step = std::min(step * 2.0, 1e6);
  }
  if (!m.converged) {
    const double gmax = std::max(cur.grad_w.cwiseAbs().maxCoeff(), std::abs(cur.grad_b));
    m.converged = gmax < tol;
  }
  return m;
}

double auroc(std::span<const double> scores, std::span<const int> y) {
  if (scores.size() != y.size()) throw std::invalid_argument("auroc: length mismatch");
  check_labels(y, scores.size());
  // Rank-sum form of the pair count; mid-ranks are half-integers so the
  // numerator is exact.
  const auto ranks = midranks(scores);
  double rank_pos = 0.0;
  double n_pos = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 1) {
      rank_pos += ranks[i];
      n_pos += 1.0;
    }
  }
  const double n_neg = static_cast<double>(y.size()) - n_pos;
  return (rank_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

Split split_train_eval(const ProbeDataset& ds, double frac, std::uint64_t seed) {
  if (!(frac > 0.0 && frac < 1.0)) throw std::invalid_argument("split: frac must be in (0,1)");

  std::vector<std::string> order;
  std::map<std::string, std::pair<bool, bool>> classes;  // group -> (has_neg, has_pos)
  std::map<std::string, std::vector<std::size_t>> rows;
  for (std::size_t i = 0; i < ds.y.size(); ++i) {
    const auto& g = ds.groups[i];
    if (!rows.count(g)) order.push_back(g);
    rows[g].push_back(i);
    (ds.y[i] == 1 ? classes[g].second : classes[g].first) = true;
  }
  const auto n_groups = order.size();
  if (n_groups < 2) throw std::invalid_argument("split: need at least 2 groups");

  const auto n_eval = static_cast<std::size_t>(
      std::clamp<long long>(std::llround((1.0 - frac) * static_cast<double>(n_groups)), 1,
                            static_cast<long long>(n_groups) - 1));

  // Strata: negative-only, positive-only, mixed.
  std::array<std::vector<std::string>, 3> strata;
  for (const auto& g : order) {
    const auto [neg, pos] = classes[g];
    strata[neg && pos ? 2 : (pos ? 1 : 0)].push_back(g);
  }
  std::array<std::size_t, 3> quota{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const double exact = static_cast<double>(n_eval) * static_cast<double>(strata[s].size()) / static_cast<double>(n_groups);
    quota[s] = static_cast<std::size_t>(std::floor(exact));
    remainder[s] = exact - static_cast<double>(quota[s]);
    assigned += quota[s];
  }
  while (assigned < n_eval) {
    std::size_t best = 3;
    for (std::size_t s = 0; s < 3; ++s) {
      if (quota[s] < strata[s].size() && (best == 3 || remainder[s] > remainder[best])) best = s;
    }
    ++quota[best];
    remainder[best] = -1.0;
    ++assigned;
  }

  constexpr int kAttempts = 64;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(attempt)));
    Split split;
    std::array<bool, 2> train_has{}, eval_has{};
    for (std::size_t s = 0; s < 3; ++s) {
      auto groups = strata[s];
      shuffle(groups, rng);
      for (std::size_t i = 0; i < groups.size(); ++i) {
        const bool to_eval = i < quota[s];
        auto& names = to_eval ? split.eval_groups : split.train_groups;
        auto& idx = to_eval ? split.eval : split.train;
        auto& has = to_eval ? eval_has : train_has;
        names.push_back(groups[i]);
        for (auto r : rows[groups[i]]) idx.push_back(r);
        has[0] = has[0] || classes[groups[i]].first;
        has[1] = has[1] || classes[groups[i]].second;
      }
    }
    if (train_has[0] && train_has[1] && eval_has[0] && eval_has[1]) {
      std::sort(split.train.begin(), split.train.end());
      std::sort(split.eval.begin(), split.eval.end());
      return split;
    }
  }
  throw std::invalid_argument("split: cannot place both classes on both sides at group level");
}

CellResult evaluate_dataset(const ProbeDataset& ds, const ProbeConfig& config, std::uint64_t seed) {
  ds.validate();
  if (config.repeats < 1) throw std::invalid_argument("repeats must be >= 1");

  CellResult cell;
  cell.layer = ds.layer;
  cell.n_rows = ds.size();
  double comps = 0.0;
  for (int r = 0; r < config.repeats; ++r) {
    const auto split = split_train_eval(ds, config.train_frac, mix_seed(seed, static_cast<std::uint64_t>(r)));
    const auto train = ds.subset(split.train);
    const auto eval = ds.subset(split.eval);

    const auto pca = pca_fit(train.X, config.variance_target, config.k_max);
    const auto model =
        logreg_fit(pca_transform(pca, train.X), train.y, config.l2_lambda, config.max_iters, config.tol);
    const Eigen::VectorXd scores = model.decision_function(pca_transform(pca, eval.X));

    cell.auroc_repeats.push_back(auroc(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), eval.y));
    comps += static_cast<double>(pca.num_components());
    cell.all_converged = cell.all_converged && model.converged;
  }
  cell.auroc = mean(cell.auroc_repeats);
  if (cell.auroc_repeats.size() >= 2) cell.auroc_sd = sample_sd(cell.auroc_repeats);
  cell.mean_components = comps / static_cast<double>(config.repeats);
  return cell;
}

ProbeReport train_layerwise(std::span<const ProbeTask> tasks, const ProbeConfig& config) {
  ProbeReport report;
  report.config = config;
  for (const auto& task : tasks) {
    const auto task_seed = mix_seed(config.seed, hash_name(task.model_tag + '\x1f' + task.condition));
    SummaryRow row{task.model_tag, task.condition, std::nullopt, {}};
    std::vector<std::pair<double, int>> ranked;
    for (const auto& ds : task.layers) {
      CellResult cell;
      try {
        cell = evaluate_dataset(ds, config, task_seed);
      } catch (const std::exception& e) {
        cell = CellResult{};
        cell.layer = ds.layer;
        cell.n_rows = ds.size();
        cell.error = e.what();
      }
      cell.model_tag = task.model_tag;
      cell.condition = task.condition;
      if (cell.auroc) ranked.emplace_back(*cell.auroc, cell.layer);
      report.cells.push_back(std::move(cell));
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const auto k = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(std::max(config.top_k, 0)));
    if (k > 0) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        s += ranked[i].first;
        row.top_layers.push_back(ranked[i].second);
      }
      row.top_k_mean = s / static_cast<double>(k);
    }
    report.summary.push_back(std::move(row));
  }
  return report;
}

ProbeDataset residual_dataset(std::span<const lens::EventRecord> events, int layer) {
  ProbeDataset ds;
  ds.layer = layer;
  if (events.empty()) return ds;
  if (layer < 0 || static_cast<std::size_t>(layer) >= events.front().residuals.size()) {
    throw std::invalid_argument("residual_dataset: layer out of range");
  }
  const auto d = events.front().residuals[static_cast<std::size_t>(layer)].size();
  ds.X.resize(static_cast<Eigen::Index>(events.size()), d);
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (static_cast<std::size_t>(layer) >= e.residuals.size() || e.residuals[static_cast<std::size_t>(layer)].size() != d) {
      throw std::invalid_argument("residual_dataset: inconsistent residual shapes");
    }
    ds.X.row(static_cast<Eigen::Index>(i)) = e.residuals[static_cast<std::size_t>(layer)].cast<double>().transpose();
    ds.y.push_back(e.meta.is_switch ? 1 : 0);
    ds.groups.push_back(e.meta.sequence_id);
  }
  return ds;
}

NllDataset nll_features(std::span<const lens::SeriesPoint> points, NllMode mode) {
  constexpr double kFloor = 1e-12;
  NllDataset out;
  auto& ds = out.data;
  ds.layer = -1;
  const Eigen::Index cols = mode == NllMode::three_features ? 3 : 1;
  ds.X.resize(static_cast<Eigen::Index>(points.size()), cols);
  auto nll = [&](std::optional<double> p) {
    if (!p || *p < kFloor) {
      ++out.n_clamped;
      return -std::log(kFloor);
    }
    return -std::log(*p);
  };
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const auto& v = points[i].values;
    ds.X(row, 0) = nll(v.actual);
    if (cols == 3) {
      ds.X(row, 1) = nll(v.within);
      ds.X(row, 2) = nll(v.between);
    }
    ds.y.push_back(points[i].is_switch ? 1 : 0);
    ds.groups.push_back(points[i].sequence_id);
  }
  return out;
}

}  // namespace forage::probe
