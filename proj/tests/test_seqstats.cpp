#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "forage/probe.hpp"
#include "forage/seqstats.hpp"
#include "oracles.hpp"

using namespace forage;

namespace {

const char* kPets = "category,animal\npets,dog\npets,cat\nsea creatures,octopus\n";

std::vector<double> uniform_draws(Rng& rng, std::size_t n, int levels) {
  std::vector<double> v(n);
  for (auto& x : v) x = static_cast<double>(uniform_index(rng, static_cast<std::uint64_t>(levels)));
  return v;
}

}  // namespace

TEST_CASE("transition_matrix") {
  const auto norms = fixture::norms_from(kPets);
  SUBCASE("dog, cat, octopus") {
    const std::vector<LabeledSequence> s{label_sequence("s", Source::human, {}, {"dog", "cat", "octopus"}, norms)};
    const auto m = transition_matrix(s, norms);
    CHECK(m.counts(0, 0) == 1.0);
    CHECK(m.counts(0, 1) == 1.0);
    CHECK(m.probs(0, 0) == 0.5);
    CHECK(m.probs(0, 1) == 0.5);
    CHECK(m.empty_rows == std::vector<bool>{false, true});
    CHECK(m.probs.row(1).sum() == 0.0);
  }
  SUBCASE("single category") {
    const std::vector<LabeledSequence> s{label_sequence("s", Source::human, {}, {"dog", "cat"}, norms)};
    const auto m = transition_matrix(s, norms);
    CHECK(m.probs(0, 0) == 1.0);
    CHECK(m.empty_rows[1]);
  }
  SUBCASE("two-category animal splits its weight") {
    const auto n2 = fixture::norms_from("category,animal\nfarm,goat\npets,goat\npets,dog\n");
    const std::vector<LabeledSequence> s{label_sequence("s", Source::human, {}, {"goat", "dog"}, n2)};
    const auto m = transition_matrix(s, n2);
    CHECK(m.counts(0, 1) == 0.5);
    CHECK(m.counts(1, 1) == 0.5);
    CHECK(m.total_mass() == 1.0);
  }
  SUBCASE("empty input") { CHECK_THROWS(transition_matrix(std::span<const LabeledSequence>{}, norms)); }
}

TEST_CASE("transition mass is conserved") {
  Rng rng(5);
  const auto norms = fixture::random_norms(rng, 40, 7);
  std::vector<LabeledSequence> seqs;
  double transitions = 0;
  for (int i = 0; i < 100; ++i) {
    auto items = fixture::random_items(rng, norms, 2 + uniform_index(rng, 30));
    transitions += static_cast<double>(items.size() - 1);
    seqs.push_back(label_sequence("s" + std::to_string(i), Source::human, {}, items, norms));
  }
  const auto m = transition_matrix(seqs, norms);
  CHECK(std::abs(m.total_mass() - transitions) < 1e-9);
  for (std::size_t r = 0; r < m.size(); ++r) {
    const double sum = m.probs.row(static_cast<Eigen::Index>(r)).sum();
    if (m.empty_rows[r])
      CHECK(sum == 0.0);
    else
      CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("within_between_split") {
  TransitionMatrix m;
  m.categories = {"a", "b"};
  m.counts = Eigen::MatrixXd::Identity(2, 2);
  m.probs = m.counts;
  m.empty_rows = {false, false};
  auto wb = within_between_split(m);
  CHECK(wb.within == std::vector<double>{1, 1});
  CHECK(wb.between == std::vector<double>{0, 0});

  m.probs << 0.5, 0.5, 0, 0;
  m.empty_rows = {false, true};
  wb = within_between_split(m);
  CHECK(wb.within == std::vector<double>{0.5});
  CHECK(wb.between == std::vector<double>{0.5});

  m.empty_rows = {true, true};
  wb = within_between_split(m);
  CHECK(wb.within.empty());
  CHECK(wb.between.empty());
}

TEST_CASE("spearman") {
  const std::vector<double> x{1, 2, 3}, y{3, 1, 2};
  CHECK(spearman(x, y).rho == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(spearman(x, x).rho == doctest::Approx(1.0));
  const std::vector<double> r{3, 2, 1};
  CHECK(spearman(x, r).rho == doctest::Approx(-1.0));
  CHECK_THROWS_AS(spearman(x, std::vector<double>{1, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(spearman(std::vector<double>{1, 2}, std::vector<double>{2, 1}), std::invalid_argument);
  CHECK_THROWS_AS(spearman(x, std::vector<double>{1, 2}), std::invalid_argument);

  Rng rng(9);
  for (int t = 0; t < 200; ++t) {
    const auto n = 3 + uniform_index(rng, 40);
    std::vector<double> a(n), b(n);
    for (auto& v : a) v = fixture::normal(rng);
    for (auto& v : b) v = fixture::normal(rng);
    const auto s = spearman(a, b);
    CHECK(std::abs(s.rho - oracle::spearman_sum_d2(a, b)) < 1e-12);
    CHECK(spearman(b, a).rho == doctest::Approx(s.rho).epsilon(1e-14));
    std::vector<double> ea(n);
    std::transform(a.begin(), a.end(), ea.begin(), [](double v) { return std::exp(v); });
    CHECK(spearman(ea, b).rho == doctest::Approx(s.rho).epsilon(1e-14));
    CHECK(s.p_value >= 0.0);
    CHECK(s.p_value <= 1.0);
  }
}

TEST_CASE("spearman p-value") {
  // t = rho sqrt((n-2)/(1-rho^2)) with n-2 = 8 degrees of freedom
  const std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, y{2, 1, 4, 3, 6, 5, 8, 7, 10, 9};
  const auto s = spearman(x, y);
  CHECK(s.rho == doctest::Approx(1.0 - 6.0 * 10.0 / 990.0));
  CHECK(s.n == 10);
  // scipy.stats.spearmanr: pvalue=5.484052998513666e-05
  CHECK(std::abs(s.p_value / 5.484052998513666e-05 - 1.0) < 1e-9);
}

TEST_CASE("midranks") {
  const std::vector<double> x{10, 20, 20, 5};
  CHECK(midranks(x) == std::vector<double>{2, 3.5, 3.5, 1});
}

TEST_CASE("mann_whitney_u") {
  SUBCASE("a=[1,2] b=[3,4]") {
    const auto r = mann_whitney_u(std::vector<double>{1, 2}, std::vector<double>{3, 4}, Sidedness::less);
    CHECK(r.statistic == 0.0);
    CHECK(r.p_value == doctest::Approx(1.0 / 6.0));
    CHECK(r.method == "exact");
  }
  SUBCASE("identical samples") {
    const std::vector<double> a{1, 2, 3, 4};
    CHECK(mann_whitney_u(a, a).p_value == 1.0);
    const std::vector<double> big(30, 2.0);
    CHECK(mann_whitney_u(big, big).p_value == 1.0);
  }
  SUBCASE("separated large samples") {
    std::vector<double> a(1000), b(1000);
    for (std::size_t i = 0; i < 1000; ++i) {
      a[i] = 2000.0 + static_cast<double>(i);
      b[i] = static_cast<double>(i);
    }
    const auto r = mann_whitney_u(a, b);
    CHECK(r.method == "normal");
    CHECK(r.p_value < 1e-6);
    CHECK(r.statistic == 1e6);
  }
  SUBCASE("exact branch equals enumeration") {
    Rng rng(21);
    for (int t = 0; t < 300; ++t) {
      const auto na = 1 + uniform_index(rng, 6);
      const auto nb = 1 + uniform_index(rng, 10 - na);
      const auto a = uniform_draws(rng, na, 5), b = uniform_draws(rng, nb, 5);
      const auto c = oracle::mwu_enumerate(a, b);
      CHECK(mann_whitney_u(a, b, Sidedness::less).p_value == c.p_less());
      CHECK(mann_whitney_u(a, b, Sidedness::greater).p_value == c.p_greater());
      CHECK(mann_whitney_u(a, b, Sidedness::two_sided).p_value == c.p_two_sided());
      CHECK(2.0 * mann_whitney_u(a, b).statistic == static_cast<double>(oracle::u2_pairs(a, b)));
    }
  }
  SUBCASE("normal branch tracks the exact branch") {
    Rng rng(4);
    for (int t = 0; t < 20; ++t) {
      std::vector<double> a(10), b(10);
      for (auto& v : a) v = fixture::normal(rng) + 0.5;
      for (auto& v : b) v = fixture::normal(rng);
      const double exact = mann_whitney_u(a, b, Sidedness::two_sided, 20).p_value;
      const double approx = mann_whitney_u(a, b, Sidedness::two_sided, 0).p_value;
      CHECK(std::abs(exact - approx) < 0.02);
    }
  }
  SUBCASE("U / (na nb) is the AUROC of sample membership") {
    Rng rng(8);
    for (int t = 0; t < 100; ++t) {
      const auto a = uniform_draws(rng, 1 + uniform_index(rng, 15), 6);
      const auto b = uniform_draws(rng, 1 + uniform_index(rng, 15), 6);
      std::vector<double> s(a);
      s.insert(s.end(), b.begin(), b.end());
      std::vector<int> y(s.size(), 0);
      std::fill(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(a.size()), 1);
      const double u = mann_whitney_u(a, b).statistic;
      CHECK(u / static_cast<double>(a.size() * b.size()) == probe::auroc(s, y));
    }
  }
  SUBCASE("empty sample") { CHECK_THROWS(mann_whitney_u(std::vector<double>{}, std::vector<double>{1})); }
}

TEST_CASE("paired_permutation_test") {
  SUBCASE("post == pre") {
    const std::vector<double> x{1, 2, 3, 4};
    const auto r = paired_permutation_test(x, x, 1000, 1);
    CHECK(r.statistic == 0.0);
    CHECK(r.p_value == 1.0);
    CHECK(r.effect_size_d == 0.0);
  }
  SUBCASE("all differences +1, n=12") {
    const std::vector<double> pre(12, 0.0), post(12, 1.0);
    CHECK(oracle::sign_flip_exact(std::vector<double>(12, 1.0)) == 2.0 / 4096.0);
    const auto r = paired_permutation_test(pre, post, 10000, 42);
    CHECK(r.p_value < 0.01);
    CHECK(r.statistic == 1.0);
    CHECK_FALSE(r.effect_size_d.has_value());
    CHECK(r.n_resamples == 10000u);
  }
  SUBCASE("deterministic per seed") {
    Rng rng(2);
    std::vector<double> pre(15), post(15);
    for (std::size_t i = 0; i < 15; ++i) {
      pre[i] = fixture::normal(rng);
      post[i] = pre[i] + 0.3 + fixture::normal(rng);
    }
    const auto a = paired_permutation_test(pre, post, 5000, 77);
    const auto b = paired_permutation_test(pre, post, 5000, 77);
    CHECK(a.p_value == b.p_value);
    CHECK(a.effect_size_d == b.effect_size_d);
    CHECK(a.p_value > 0.0);
    CHECK(a.p_value <= 1.0);
  }
  SUBCASE("close to exact enumeration") {
    Rng rng(31);
    for (std::size_t n = 2; n <= 12; ++n) {
      std::vector<double> pre(n), post(n), d(n);
      for (std::size_t i = 0; i < n; ++i) {
        pre[i] = fixture::normal(rng);
        post[i] = pre[i] + 0.4 + fixture::normal(rng);
        d[i] = post[i] - pre[i];
      }
      const double exact = oracle::sign_flip_exact(d);
      const double p = paired_permutation_test(pre, post, 10000, 1000 + n).p_value;
      CAPTURE(n);
      CHECK(std::abs(p - exact) <= 0.01);
    }
  }
  SUBCASE("whole passes over a small group") {
    // 8 patterns, 2 of them as extreme as the observed one; R = 1250 passes
    const std::vector<double> pre(3, 0.0), post(3, 1.0);
    CHECK(paired_permutation_test(pre, post, 10000, 5).p_value == 2501.0 / 10001.0);
  }
  SUBCASE("errors") {
    CHECK_THROWS(paired_permutation_test(std::vector<double>{1}, std::vector<double>{2}, 10, 0));
    CHECK_THROWS(paired_permutation_test(std::vector<double>{1, 2}, std::vector<double>{2}, 10, 0));
  }
}

TEST_CASE("zscore") {
  const auto z = zscore(std::vector<double>{1, 2, 3});
  CHECK(z == std::vector<double>{-1, 0, 1});
  CHECK_THROWS_AS(zscore(std::vector<double>{4, 4, 4}), std::invalid_argument);
  CHECK_THROWS_AS(zscore(std::vector<double>{4}), std::invalid_argument);

  Rng rng(1);
  std::vector<double> x(50);
  for (auto& v : x) v = 3.0 + 2.0 * fixture::normal(rng);
  const auto zx = zscore(x);
  CHECK(std::abs(mean(zx)) < 1e-12);
  CHECK(std::abs(sample_sd(zx) - 1.0) < 1e-12);
}

TEST_CASE("switch_ratio_summary") {
  const auto norms = fixture::norms_from("category,animal\npets,dog\npets,cat\nsea,octopus\nsea,eel\n");
  std::vector<LabeledSequence> h, m;
  for (int i = 0; i < 8; ++i) {
    h.push_back(label_sequence("h", Source::human, {}, {"dog", "octopus", "cat", "eel"}, norms));
    m.push_back(label_sequence("m", Source::model, {}, {"dog", "cat"}, norms));
  }
  const auto s = switch_ratio_summary(h, m);
  CHECK(s.human_mean == 1.0);
  CHECK(s.model_mean == 0.0);
  CHECK(s.test.p_value < 0.001);
  const auto same = switch_ratio_summary(h, h);
  CHECK(same.test.p_value == 1.0);
  CHECK_THROWS(switch_ratio_summary(h, {}));
}

TEST_CASE("compare_matrices cell selection") {
  TransitionMatrix a, b;
  a.categories = b.categories = {"x", "y", "z"};
  a.probs = Eigen::MatrixXd::Zero(3, 3);
  b.probs = Eigen::MatrixXd::Zero(3, 3);
  a.probs.row(0) << 0.2, 0.3, 0.5;
  a.probs.row(1) << 0.6, 0.1, 0.3;
  b.probs.row(0) << 0.1, 0.4, 0.5;
  b.probs.row(2) << 0.3, 0.3, 0.4;
  a.counts = a.probs;
  b.counts = b.probs;
  a.empty_rows = {false, false, true};
  b.empty_rows = {false, true, false};
  CHECK(compare_matrices(a, b, CellSelection::union_rows).n == 9);
  CHECK(compare_matrices(a, b, CellSelection::intersection_rows).n == 3);
}
