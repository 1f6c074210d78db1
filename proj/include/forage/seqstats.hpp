#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "forage/norms.hpp"

namespace forage {

/// Category-to-category transition counts and their row-normalized form.
/// Rows with no outgoing mass stay all-zero in `probs` and are flagged.
struct TransitionMatrix {
  std::vector<std::string> categories;
  Eigen::MatrixXd counts;
  Eigen::MatrixXd probs;
  std::vector<bool> empty_rows;

  std::size_t size() const noexcept { return categories.size(); }
  double total_mass() const { return counts.sum(); }
};

/// Each transition a->b spreads unit weight uniformly over C(a) x C(b).
TransitionMatrix transition_matrix(std::span<const LabeledSequence> seqs, const CategoryNorms& norms);

enum class Sidedness { two_sided, greater, less };

std::string_view to_string(Sidedness s) noexcept;
Sidedness sidedness_from_string(std::string_view s);

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::optional<double> effect_size_d;
  std::optional<std::uint64_t> n_resamples;
  Sidedness sidedness = Sidedness::two_sided;
  /// "exact" / "normal" for rank tests, "sign-flip" for permutation tests.
  std::string method;
};

struct SpearmanResult {
  double rho = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

/// Mid-rank (average for ties) ranks, 1-based.
std::vector<double> midranks(std::span<const double> x);

/// Pearson correlation of mid-ranks; two-sided p from the t approximation
/// with n-2 degrees of freedom. Throws std::invalid_argument on length
/// mismatch, n < 3, or a constant input.
SpearmanResult spearman(std::span<const double> x, std::span<const double> y);

enum class CellSelection { union_rows, intersection_rows };

/// Correlates two matrices over the same categories cell by cell, using all
/// cells of rows that are non-empty in either (union) or both (intersection).
SpearmanResult compare_matrices(const TransitionMatrix& a, const TransitionMatrix& b,
                                CellSelection cells = CellSelection::union_rows);

struct WithinBetween {
  std::vector<double> within;
  std::vector<double> between;
};

/// Diagonal vs off-diagonal probabilities of the non-empty rows.
WithinBetween within_between_split(const TransitionMatrix& m);

/// Mann-Whitney U for sample a vs b; statistic is U of a. Exact null
/// enumeration when len(a)+len(b) <= exact_limit, otherwise the
/// tie-corrected normal approximation with continuity correction.
/// "less" tests whether a tends to be smaller than b.
TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                          Sidedness sidedness = Sidedness::two_sided, std::size_t exact_limit = 20);

/// Paired sign-flip permutation test on post - pre. Two-sided
/// p = (1 + #{|null| >= |observed|}) / (R + 1); d = mean / sd of differences.
/// Each resample is a uniformly random sign pattern; patterns are drawn
/// without replacement (whole passes over the 2^n patterns when R >= 2^n).
TestResult paired_permutation_test(std::span<const double> pre, std::span<const double> post,
                                   std::uint64_t n_resamples, std::uint64_t rng_seed);

/// (x - mean) / sd with the n-1 denominator. Throws on n < 2 or zero sd.
std::vector<double> zscore(std::span<const double> x);

double mean(std::span<const double> x);
/// Sample standard deviation (n-1); 0 for fewer than two values.
double sample_sd(std::span<const double> x);

struct SwitchRatioSummary {
  double human_mean = 0.0;
  double model_mean = 0.0;
  std::size_t n_human = 0;
  std::size_t n_model = 0;
  TestResult test;
};

SwitchRatioSummary switch_ratio_summary(std::span<const LabeledSequence> human,
                                        std::span<const LabeledSequence> model);

}  // namespace forage
