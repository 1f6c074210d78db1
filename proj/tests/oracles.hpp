#pragma once

// Brute-force reference implementations used to check the library.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "forage/contrastive.hpp"
#include "forage/norms.hpp"
#include "forage/probe.hpp"

namespace oracle {

struct MwuCounts {
  std::uint64_t total = 0, le = 0, ge = 0;
  double p_less() const { return static_cast<double>(le) / static_cast<double>(total); }
  double p_greater() const { return static_cast<double>(ge) / static_cast<double>(total); }
  double p_two_sided() const { return std::min(1.0, 2.0 * std::min(p_less(), p_greater())); }
};

// 2 * U of `a` by pair counting.
inline std::int64_t u2_pairs(const std::vector<double>& a, const std::vector<double>& b) {
  std::int64_t u2 = 0;
  for (double x : a)
    for (double y : b) u2 += x > y ? 2 : (x == y ? 1 : 0);
  return u2;
}

// Every relabelling of the pooled sample into |a| and |b| members.
inline MwuCounts mwu_enumerate(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto n = pooled.size();
  const auto u_obs = u2_pairs(a, b);
  MwuCounts c;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != a.size()) continue;
    std::vector<double> xa, xb;
    for (std::size_t i = 0; i < n; ++i) ((mask >> i) & 1u ? xa : xb).push_back(pooled[i]);
    const auto u = u2_pairs(xa, xb);
    ++c.total;
    c.le += u <= u_obs;
    c.ge += u >= u_obs;
  }
  return c;
}

// Two-sided sign-flip p over all 2^n sign patterns.
inline double sign_flip_exact(const std::vector<double>& d) {
  const auto n = d.size();
  const double obs = std::abs(std::accumulate(d.begin(), d.end(), 0.0));
  double scale = 0.0;
  for (double x : d) scale += std::abs(x);
  std::uint64_t hits = 0;
  for (std::uint64_t mask = 0; mask < (1ull << n); ++mask) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (mask >> i) & 1u ? d[i] : -d[i];
    hits += std::abs(s) >= obs - 1e-12 * scale;
  }
  return static_cast<double>(hits) / static_cast<double>(1ull << n);
}

// Classic rank-difference formula; only valid without ties.
inline double spearman_sum_d2(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = x.size();
  auto ranks = [n](const std::vector<double>& v) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto i, auto j) { return v[i] < v[j]; });
    std::vector<double> r(n);
    for (std::size_t k = 0; k < n; ++k) r[idx[k]] = static_cast<double>(k + 1);
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  const double nn = static_cast<double>(n);
  return 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0));
}

inline double auroc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  std::int64_t num2 = 0, pos = 0, neg = 0;
  for (auto v : y) (v ? pos : neg) += 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      num2 += s[i] > s[j] ? 2 : (s[i] == s[j] ? 1 : 0);
    }
  }
  return static_cast<double>(num2) / 2.0 / static_cast<double>(pos * neg);
}

inline bool share_by_sets(const forage::CategoryNorms& norms, const std::string& a, const std::string& b) {
  const auto la = norms.category_labels(a), lb = norms.category_labels(b);
  std::set<std::string> sa(la.begin(), la.end());
  for (const auto& c : lb)
    if (sa.count(c)) return true;
  return false;
}

inline std::vector<bool> switch_flags(const forage::CategoryNorms& norms, const std::vector<std::string>& items) {
  std::vector<bool> out;
  for (std::size_t i = 0; i + 1 < items.size(); ++i) out.push_back(!share_by_sets(norms, items[i], items[i + 1]));
  return out;
}

// Central differences of the logistic objective in every coordinate (bias last).
inline Eigen::VectorXd objective_fd(const Eigen::MatrixXd& X, const std::vector<int>& y, double lambda,
                                    const Eigen::VectorXd& w, double b, double h) {
  const auto d = w.size();
  Eigen::VectorXd g(d + 1);
  for (Eigen::Index k = 0; k <= d; ++k) {
    Eigen::VectorXd wp = w, wm = w;
    double bp = b, bm = b;
    if (k < d) {
      wp[k] += h;
      wm[k] -= h;
    } else {
      bp += h;
      bm -= h;
    }
    g[k] = (forage::probe::logistic_objective(X, y, lambda, wp, bp).loss -
            forage::probe::logistic_objective(X, y, lambda, wm, bm).loss) /
           (2.0 * h);
  }
  return g;
}

// Exhaustive candidate scan with the same tie rule (smallest name wins).
inline std::optional<std::string> best_exemplar(const std::string& last, const std::set<std::string>& produced,
                                                forage::contrastive::Condition cond,
                                                forage::contrastive::Polarity pol, const forage::CategoryNorms& norms,
                                                const std::function<double(const std::string&, const std::string&)>& cos) {
  using forage::contrastive::Condition;
  std::vector<std::pair<double, std::string>> scored;
  for (const auto& name : norms.animals()) {
    if (name == last || produced.count(name)) continue;
    const bool shares = share_by_sets(norms, last, name);
    if (cond == Condition::convergent && !shares) continue;
    if (cond == Condition::divergent && shares) continue;
    const double c = cos(last, name);
    if (std::isnan(c)) continue;
    scored.emplace_back(pol == forage::contrastive::Polarity::max ? -c : c, name);
  }
  if (scored.empty()) return std::nullopt;
  return std::min_element(scored.begin(), scored.end())->second;
}

}  // namespace oracle
