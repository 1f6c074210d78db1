#include "forage/seqstats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include <boost/math/distributions/students_t.hpp>

#include "forage/random.hpp"

namespace forage {

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double clamp_p(double p) { return std::clamp(p, 0.0, 1.0); }

}  // namespace

TransitionMatrix transition_matrix(std::span<const LabeledSequence> seqs, const CategoryNorms& norms) {
  if (seqs.empty()) throw std::invalid_argument("transition_matrix: no sequences");

  const auto k = static_cast<Eigen::Index>(norms.num_categories());
  TransitionMatrix m;
  m.categories = norms.categories();
  m.counts = Eigen::MatrixXd::Zero(k, k);

  auto ids_of = [&](const LabeledSequence& seq, std::size_t i) {
    std::vector<Eigen::Index> ids;
    if (i < seq.category_sets.size() && !seq.category_sets[i].empty()) {
      for (const auto& label : seq.category_sets[i]) {
        auto id = norms.category_index(label);
        if (!id) throw std::invalid_argument("category '" + label + "' not in norms");
        ids.push_back(static_cast<Eigen::Index>(*id));
      }
    } else {
      for (auto id : norms.category_ids(seq.items[i])) ids.push_back(static_cast<Eigen::Index>(id));
    }
    return ids;
  };

  for (const auto& seq : seqs) {
    if (seq.items.size() < 2) continue;
    auto from = ids_of(seq, 0);
    for (std::size_t i = 1; i < seq.items.size(); ++i) {
      auto to = ids_of(seq, i);
      const double w = 1.0 / static_cast<double>(from.size() * to.size());
      for (auto a : from)
        for (auto b : to) m.counts(a, b) += w;
      from = std::move(to);
    }
  }

  m.probs = Eigen::MatrixXd::Zero(k, k);
  m.empty_rows.assign(static_cast<std::size_t>(k), false);
  for (Eigen::Index r = 0; r < k; ++r) {
    const double row = m.counts.row(r).sum();
    if (row > 0.0) {
      m.probs.row(r) = m.counts.row(r) / row;
    } else {
      m.empty_rows[static_cast<std::size_t>(r)] = true;
    }
  }
  return m;
}

std::string_view to_string(Sidedness s) noexcept {
  switch (s) {
    case Sidedness::two_sided: return "two_sided";
    case Sidedness::greater: return "greater";
    case Sidedness::less: return "less";
  }
  return "two_sided";
}

Sidedness sidedness_from_string(std::string_view s) {
  if (s == "two_sided") return Sidedness::two_sided;
  if (s == "greater") return Sidedness::greater;
  if (s == "less") return Sidedness::less;
  throw std::invalid_argument("unknown sidedness '" + std::string(s) + "'");
}

std::vector<double> midranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_sd(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

SpearmanResult spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 3) throw std::invalid_argument("spearman: need at least 3 pairs");

  const auto rx = midranks(x);
  const auto ry = midranks(y);
  const double mx = mean(rx);
  const double my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("spearman: constant input has no rank variance");

  SpearmanResult out;
  out.n = x.size();
  out.rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);

  const double df = static_cast<double>(out.n) - 2.0;
  const double denom = 1.0 - out.rho * out.rho;
  if (denom <= 0.0) {
    out.p_value = 0.0;
  } else {
    const double t = std::abs(out.rho) * std::sqrt(df / denom);
    boost::math::students_t dist(df);
    out.p_value = clamp_p(2.0 * boost::math::cdf(boost::math::complement(dist, t)));
  }
  return out;
}

SpearmanResult compare_matrices(const TransitionMatrix& a, const TransitionMatrix& b, CellSelection cells) {
  if (a.categories != b.categories) throw std::invalid_argument("compare_matrices: category lists differ");
  std::vector<double> x, y;
  const auto k = a.size();
  for (std::size_t r = 0; r < k; ++r) {
    const bool use = cells == CellSelection::union_rows ? !(a.empty_rows[r] && b.empty_rows[r])
                                                        : !(a.empty_rows[r] || b.empty_rows[r]);
    if (!use) continue;
    for (std::size_t c = 0; c < k; ++c) {
      x.push_back(a.probs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
      y.push_back(b.probs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
    }
  }
  return spearman(x, y);
}

WithinBetween within_between_split(const TransitionMatrix& m) {
  WithinBetween out;
  for (std::size_t r = 0; r < m.size(); ++r) {
    if (m.empty_rows[r]) continue;
    for (std::size_t c = 0; c < m.size(); ++c) {
      const double p = m.probs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      (r == c ? out.within : out.between).push_back(p);
    }
  }
  return out;
}

namespace {

// Null distribution of U for a by enumerating every size-na subset of the
// pooled mid-ranks. Ranks are doubled so all sums are exact integers.
TestResult mwu_exact(const std::vector<double>& ranks, std::size_t na, double u_obs, Sidedness side) {
  const std::size_t n = ranks.size();
  std::vector<std::int64_t> r2(n);
  for (std::size_t i = 0; i < n; ++i) r2[i] = std::llround(2.0 * ranks[i]);
  const auto offset2 = static_cast<std::int64_t>(na * (na + 1));  // 2 * na(na+1)/2
  const auto u_obs2 = std::llround(2.0 * u_obs);

  std::uint64_t total = 0, le = 0, ge = 0;
  std::vector<std::size_t> idx(na);
  std::iota(idx.begin(), idx.end(), 0);
  for (;;) {
    std::int64_t s = 0;
    for (auto i : idx) s += r2[i];
    const std::int64_t u2 = s - offset2;
    ++total;
    if (u2 <= u_obs2) ++le;
    if (u2 >= u_obs2) ++ge;

    // Next combination in lexicographic order.
    std::size_t pos = na;
    while (pos > 0 && idx[pos - 1] == n - na + pos - 1) --pos;
    if (pos == 0) break;
    ++idx[pos - 1];
    for (std::size_t j = pos; j < na; ++j) idx[j] = idx[j - 1] + 1;
  }

  const double p_less = static_cast<double>(le) / static_cast<double>(total);
  const double p_greater = static_cast<double>(ge) / static_cast<double>(total);
  TestResult out;
  out.statistic = u_obs;
  out.sidedness = side;
  out.method = "exact";
  switch (side) {
    case Sidedness::less: out.p_value = p_less; break;
    case Sidedness::greater: out.p_value = p_greater; break;
    case Sidedness::two_sided: out.p_value = clamp_p(2.0 * std::min(p_less, p_greater)); break;
  }
  return out;
}

}  // namespace

TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b, Sidedness sidedness,
                          std::size_t exact_limit) {
  if (a.empty() || b.empty()) throw std::invalid_argument("mann_whitney_u: both samples must be non-empty");

  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ranks = midranks(pooled);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double ra = std::accumulate(ranks.begin(), ranks.begin() + static_cast<std::ptrdiff_t>(a.size()), 0.0);
  const double u = ra - na * (na + 1.0) / 2.0;

  if (pooled.size() <= exact_limit) return mwu_exact(ranks, a.size(), u, sidedness);

  // Tie correction: sum of t^3 - t over tie groups.
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double n = na + nb;
  const double mu = na * nb / 2.0;
  const double var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));

  TestResult out;
  out.statistic = u;
  out.sidedness = sidedness;
  out.method = "normal";
  if (var <= 0.0) {
    out.p_value = 1.0;
    return out;
  }
  const double sd = std::sqrt(var);
  switch (sidedness) {
    case Sidedness::less: out.p_value = normal_cdf((u - mu + 0.5) / sd); break;
    case Sidedness::greater: out.p_value = 1.0 - normal_cdf((u - mu - 0.5) / sd); break;
    case Sidedness::two_sided: {
      const double z = std::max(0.0, std::abs(u - mu) - 0.5) / sd;
      out.p_value = 2.0 * normal_cdf(-z);
      break;
    }
  }
  out.p_value = clamp_p(out.p_value);
  return out;
}

TestResult paired_permutation_test(std::span<const double> pre, std::span<const double> post,
                                   std::uint64_t n_resamples, std::uint64_t rng_seed) {
  if (pre.size() != post.size()) throw std::invalid_argument("paired_permutation_test: length mismatch");
  if (pre.size() < 2) throw std::invalid_argument("paired_permutation_test: need at least 2 pairs");
  if (n_resamples == 0) throw std::invalid_argument("paired_permutation_test: n_resamples must be > 0");

  const std::size_t n = pre.size();
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = post[i] - pre[i];

  TestResult out;
  out.method = "sign-flip";
  out.sidedness = Sidedness::two_sided;
  out.n_resamples = n_resamples;
  out.statistic = mean(diff);
  const double sd = sample_sd(diff);

  if (sd == 0.0 && out.statistic == 0.0) {
    out.p_value = 1.0;
    out.effect_size_d = 0.0;
    return out;
  }
  if (sd > 0.0) out.effect_size_d = out.statistic / sd;

  double abs_sum = 0.0;
  for (double d : diff) abs_sum += std::abs(d);
  // Rounding slack so that sign patterns reproducing |observed| are counted.
  const double threshold = std::abs(out.statistic) - 1e-12 * abs_sum / static_cast<double>(n);

  auto is_extreme = [&](std::uint64_t signs) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (signs >> i) & 1u ? diff[i] : -diff[i];
    return std::abs(s / static_cast<double>(n)) >= threshold;
  };

  // Sign patterns are drawn without replacement from the 2^n group: complete
  // passes over the group first, then distinct patterns for the remainder.
  Rng rng(rng_seed);
  std::uint64_t extreme = 0;
  if (n < 64 && (1ull << n) <= n_resamples) {
    const std::uint64_t group = 1ull << n;
    std::uint64_t pass = 0;
    for (std::uint64_t m = 0; m < group; ++m) pass += is_extreme(m);
    extreme = pass * (n_resamples / group);
    const auto rest = n_resamples % group;
    std::vector<std::uint64_t> order(group);
    std::iota(order.begin(), order.end(), 0);
    for (std::uint64_t k = 0; k < rest; ++k) {
      std::swap(order[k], order[k + uniform_index(rng, group - k)]);
      extreme += is_extreme(order[k]);
    }
  } else if (n < 64) {
    std::unordered_set<std::uint64_t> seen;
    const std::uint64_t mask = (1ull << n) - 1;
    while (seen.size() < n_resamples) {
      const auto m = rng() & mask;
      if (seen.insert(m).second) extreme += is_extreme(m);
    }
  } else {
    for (std::uint64_t r = 0; r < n_resamples; ++r) {
      double s = 0.0;
      std::uint64_t bits = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (i % 64 == 0) bits = rng();
        s += (bits & 1u) ? diff[i] : -diff[i];
        bits >>= 1;
      }
      if (std::abs(s / static_cast<double>(n)) >= threshold) ++extreme;
    }
  }
  out.p_value = static_cast<double>(1 + extreme) / static_cast<double>(n_resamples + 1);
  return out;
}

std::vector<double> zscore(std::span<const double> x) {
  if (x.size() < 2) throw std::invalid_argument("zscore: need at least 2 values");
  const double m = mean(x);
  const double sd = sample_sd(x);
  if (!(sd > 0.0)) throw std::invalid_argument("zscore: zero standard deviation");
  std::vector<double> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [&](double v) { return (v - m) / sd; });
  return out;
}

SwitchRatioSummary switch_ratio_summary(std::span<const LabeledSequence> human,
                                        std::span<const LabeledSequence> model) {
  if (human.empty() || model.empty()) throw std::invalid_argument("switch_ratio_summary: empty population");
  std::vector<double> h, m;
  for (const auto& s : human) h.push_back(s.switch_ratio);
  for (const auto& s : model) m.push_back(s.switch_ratio);
  SwitchRatioSummary out;
  out.human_mean = mean(h);
  out.model_mean = mean(m);
  out.n_human = h.size();
  out.n_model = m.size();
  out.test = mann_whitney_u(h, m, Sidedness::two_sided);
  return out;
}

}  // namespace forage
