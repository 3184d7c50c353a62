#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace tlab::stats {

using VectorRef = Eigen::Ref<const Eigen::VectorXd>;

// ---------------------------------------------------------------------------
// Kendall's tau-b

/// Pair counts behind tau-b. numerator = C - D; untied_x = n0 - n1 (pairs not
/// tied in x); untied_y = n0 - n2.
struct KendallCounts {
  std::int64_t numerator = 0;
  std::int64_t untied_x = 0;
  std::int64_t untied_y = 0;
};

/// O(n log n) pair counts (Knight's merge-sort method). Requires equal sizes.
KendallCounts kendall_counts(const VectorRef& x, const VectorRef& y);

/// tau-b from counts; absent when either sequence is entirely tied.
std::optional<double> tau_b(const KendallCounts& counts);

/// Tie-corrected Kendall tau. Throws std::invalid_argument unless
/// x.size() == y.size() >= 2.
std::optional<double> kendall_tau(const VectorRef& x, const VectorRef& y);

/// Kendall counts over resamples of fixed (x, y) data without re-sorting:
/// the (x, y) order is computed once and each resample is an O(n) walk plus
/// the merge count.
class KendallResampler {
 public:
  KendallResampler(const VectorRef& x, const VectorRef& y);

  /// Counts for the multiset of units `idx` (indices into x, y). Thread-safe.
  KendallCounts counts(std::span<const std::size_t> idx) const;

 private:
  std::vector<double> x_, y_;          // sorted by (x, y)
  std::vector<std::size_t> position_;  // unit -> position in sorted order
};

// ---------------------------------------------------------------------------
// Nonparametric tests

enum class PMode { automatic, exact, normal };

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  bool exact = false;
  bool degenerate = false;
};

/// Combined sample size at or below which `automatic` mode enumerates.
inline constexpr std::size_t kExactLimit = 12;

/// U for sample `a` (midranks for ties), two-sided p. Exact permutation
/// distribution when |a|+|b| <= 12, otherwise tie-corrected normal
/// approximation with continuity correction.
TestResult mann_whitney_u(const VectorRef& a, const VectorRef& b, PMode mode = PMode::automatic);

/// Signed-rank statistic W+ over nonzero differences. All-zero input is
/// degenerate with p = 1.
TestResult wilcoxon_signed_rank(const VectorRef& diffs, PMode mode = PMode::automatic);

/// Exact two-sided binomial test (sum of outcomes no more likely than the
/// observed one). Throws std::invalid_argument when trials == 0 or
/// successes > trials.
double binomial_test(std::int64_t successes, std::int64_t trials, double p0 = 0.5);

double normal_cdf(double z);

// ---------------------------------------------------------------------------
// Bootstrap

struct BootstrapConfig {
  std::size_t n_resamples = 1000;
  double confidence = 0.95;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Statistic over a resample, given as unit indices drawn with replacement.
using Statistic = std::function<std::optional<double>(std::span<const std::size_t>)>;

struct BootstrapResult {
  std::optional<double> low;
  std::optional<double> high;
  std::vector<double> replicates;  // defined replicates, in resample order
  std::size_t n_undefined = 0;
  /// Set when the statistic was undefined on more than half the resamples.
  bool flagged = false;
};

/// Percentile bootstrap over `n_units` units. Resample r draws from its own
/// sub-seed, so results do not depend on the thread count.
BootstrapResult bootstrap(std::size_t n_units, const Statistic& statistic, const BootstrapConfig& config);

/// Percentile interval only; absent when flagged.
std::optional<std::pair<double, double>> bootstrap_ci(std::size_t n_units, const Statistic& statistic,
                                                      const BootstrapConfig& config);

/// Two-sided bootstrap p-value against 0: twice the smaller tail fraction.
double bootstrap_p_value(std::span<const double> replicates);

/// Linear-interpolated quantile of an ascending-sorted sample.
double quantile_sorted(std::span<const double> sorted, double q);

std::vector<double> bonferroni(std::span<const double> p_values);

}  // namespace tlab::stats
