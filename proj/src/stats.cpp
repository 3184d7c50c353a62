#include "tlab/stats.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "tlab/rng.hpp"

namespace tlab::stats {

namespace {

std::int64_t tied_pairs(std::int64_t run) { return run * (run - 1) / 2; }

/// Counts pairs i<j with v[i] > v[j] while sorting v ascending.
std::int64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

/// Midranks (1-based) of `v`, plus the tie-correction sum of t^3 - t.
std::vector<double> midranks(const std::vector<double>& v, double* tie_sum) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  double ties = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && v[order[j]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    const double t = static_cast<double>(j - i);
    ties += t * t * t - t;
    i = j;
  }
  if (tie_sum) *tie_sum = ties;
  return ranks;
}

constexpr double kStatTolerance = 1e-9;

double normal_two_sided(double deviation, double sd) {
  if (!(sd > 0.0)) return 1.0;
  const double z = std::max(0.0, std::abs(deviation) - 0.5) / sd;
  return std::min(1.0, 2.0 * (1.0 - normal_cdf(z)));
}

}  // namespace

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

KendallResampler::KendallResampler(const VectorRef& x, const VectorRef& y) {
  if (x.size() != y.size()) throw std::invalid_argument("kendall_tau: sequences differ in length");
  const auto n = static_cast<std::size_t>(x.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });
  x_.resize(n);
  y_.resize(n);
  position_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    x_[i] = x[order[i]];
    y_[i] = y[order[i]];
    position_[order[i]] = i;
  }
}

KendallCounts KendallResampler::counts(std::span<const std::size_t> idx) const {
  std::vector<std::uint32_t> mult(x_.size(), 0u);
  for (std::size_t u : idx) ++mult[position_.at(u)];
  std::vector<double> ys, buf;
  ys.reserve(idx.size());
  std::int64_t n1 = 0, n3 = 0;
  const std::size_t n = x_.size();
  for (std::size_t i = 0; i < n;) {
    // run of equal x, sub-runs of equal (x, y)
    std::size_t j = i;
    std::int64_t run_x = 0;
    while (j < n && x_[j] == x_[i]) {
      std::size_t b = j;
      std::int64_t run_xy = 0;
      while (b < n && x_[b] == x_[j] && y_[b] == y_[j]) run_xy += mult[b++];
      n3 += tied_pairs(run_xy);
      run_x += run_xy;
      for (std::size_t q = j; q < b; ++q) ys.insert(ys.end(), mult[q], y_[q]);
      j = b;
    }
    n1 += tied_pairs(run_x);
    i = j;
  }
  buf.resize(ys.size());
  const std::int64_t swaps = merge_count(ys, buf, 0, ys.size());
  std::int64_t n2 = 0;
  for (std::size_t i = 0; i < ys.size();) {
    std::size_t j = i + 1;
    while (j < ys.size() && ys[j] == ys[i]) ++j;
    n2 += tied_pairs(static_cast<std::int64_t>(j - i));
    i = j;
  }
  const std::int64_t n0 = tied_pairs(static_cast<std::int64_t>(ys.size()));
  return {n0 - n1 - n2 + n3 - 2 * swaps, n0 - n1, n0 - n2};
}

KendallCounts kendall_counts(const VectorRef& x, const VectorRef& y) {
  if (x.size() != y.size()) throw std::invalid_argument("kendall_tau: sequences differ in length");
  const auto n = static_cast<std::size_t>(x.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });

  std::int64_t n1 = 0, n3 = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && x[order[j]] == x[order[i]]) ++j;
    n1 += tied_pairs(static_cast<std::int64_t>(j - i));
    for (std::size_t a = i; a < j;) {
      std::size_t b = a + 1;
      while (b < j && y[order[b]] == y[order[a]]) ++b;
      n3 += tied_pairs(static_cast<std::int64_t>(b - a));
      a = b;
    }
    i = j;
  }

  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
  const std::int64_t swaps = merge_count(ys, buf, 0, n);

  std::int64_t n2 = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && ys[j] == ys[i]) ++j;
    n2 += tied_pairs(static_cast<std::int64_t>(j - i));
    i = j;
  }

  const std::int64_t n0 = tied_pairs(static_cast<std::int64_t>(n));
  return {n0 - n1 - n2 + n3 - 2 * swaps, n0 - n1, n0 - n2};
}

std::optional<double> tau_b(const KendallCounts& c) {
  if (c.untied_x <= 0 || c.untied_y <= 0) return std::nullopt;
  return static_cast<double>(c.numerator) /
         std::sqrt(static_cast<double>(c.untied_x) * static_cast<double>(c.untied_y));
}

std::optional<double> kendall_tau(const VectorRef& x, const VectorRef& y) {
  if (x.size() != y.size()) throw std::invalid_argument("kendall_tau: sequences differ in length");
  if (x.size() < 2) throw std::invalid_argument("kendall_tau: need at least two observations");
  return tau_b(kendall_counts(x, y));
}

TestResult mann_whitney_u(const VectorRef& a, const VectorRef& b, PMode mode) {
  if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("mann_whitney_u: empty sample");
  const auto na = static_cast<std::size_t>(a.size());
  const auto nb = static_cast<std::size_t>(b.size());
  const std::size_t n = na + nb;
  std::vector<double> pooled(n);
  for (std::size_t i = 0; i < na; ++i) pooled[i] = a[static_cast<Eigen::Index>(i)];
  for (std::size_t i = 0; i < nb; ++i) pooled[na + i] = b[static_cast<Eigen::Index>(i)];

  double tie_sum = 0.0;
  const auto ranks = midranks(pooled, &tie_sum);
  const double offset = 0.5 * static_cast<double>(na) * static_cast<double>(na + 1);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < na; ++i) rank_sum += ranks[i];
  const double u = rank_sum - offset;
  const double mean = 0.5 * static_cast<double>(na) * static_cast<double>(nb);

  TestResult result;
  result.statistic = u;
  const bool exact = mode == PMode::exact || (mode == PMode::automatic && n <= kExactLimit);
  if (exact) {
    if (n > 24) throw std::invalid_argument("mann_whitney_u: exact mode limited to 24 observations");
    const double observed = std::abs(u - mean) - kStatTolerance;
    std::uint64_t extreme = 0, total = 0;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != na) continue;
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (mask & (1u << i)) s += ranks[i];
      }
      ++total;
      if (std::abs(s - offset - mean) >= observed) ++extreme;
    }
    result.p_value = static_cast<double>(extreme) / static_cast<double>(total);
    result.exact = true;
  } else {
    const double dn = static_cast<double>(n);
    const double var = static_cast<double>(na) * static_cast<double>(nb) / 12.0 *
                       ((dn + 1.0) - tie_sum / (dn * (dn - 1.0)));
    result.p_value = normal_two_sided(u - mean, std::sqrt(std::max(0.0, var)));
  }
  return result;
}

TestResult wilcoxon_signed_rank(const VectorRef& diffs, PMode mode) {
  std::vector<double> nonzero;
  nonzero.reserve(static_cast<std::size_t>(diffs.size()));
  for (Eigen::Index i = 0; i < diffs.size(); ++i) {
    if (diffs[i] != 0.0) nonzero.push_back(diffs[i]);
  }
  TestResult result;
  if (nonzero.empty()) {
    result.degenerate = true;
    result.p_value = 1.0;
    return result;
  }
  const std::size_t n = nonzero.size();
  std::vector<double> magnitude(n);
  for (std::size_t i = 0; i < n; ++i) magnitude[i] = std::abs(nonzero[i]);
  double tie_sum = 0.0;
  const auto ranks = midranks(magnitude, &tie_sum);
  double w = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (nonzero[i] > 0.0) w += ranks[i];
  }
  const double dn = static_cast<double>(n);
  const double mean = dn * (dn + 1.0) / 4.0;
  result.statistic = w;

  const bool exact = mode == PMode::exact || (mode == PMode::automatic && n <= kExactLimit);
  if (exact) {
    if (n > 24) throw std::invalid_argument("wilcoxon_signed_rank: exact mode limited to 24 differences");
    const double observed = std::abs(w - mean) - kStatTolerance;
    std::uint64_t extreme = 0;
    const std::uint32_t total = 1u << n;
    for (std::uint32_t mask = 0; mask < total; ++mask) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (mask & (1u << i)) s += ranks[i];
      }
      if (std::abs(s - mean) >= observed) ++extreme;
    }
    result.p_value = static_cast<double>(extreme) / static_cast<double>(total);
    result.exact = true;
  } else {
    const double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0 - tie_sum / 48.0;
    result.p_value = normal_two_sided(w - mean, std::sqrt(std::max(0.0, var)));
  }
  return result;
}

double binomial_test(std::int64_t successes, std::int64_t trials, double p0) {
  if (trials <= 0) throw std::invalid_argument("binomial_test: trials must be positive");
  if (successes < 0 || successes > trials) throw std::invalid_argument("binomial_test: successes outside [0, trials]");
  if (!(p0 > 0.0 && p0 < 1.0)) throw std::invalid_argument("binomial_test: p0 must lie in (0,1)");
  const double n = static_cast<double>(trials);
  auto log_pmf = [&](std::int64_t k) {
    const double dk = static_cast<double>(k);
    return std::lgamma(n + 1.0) - std::lgamma(dk + 1.0) - std::lgamma(n - dk + 1.0) + dk * std::log(p0) +
           (n - dk) * std::log1p(-p0);
  };
  const double observed = log_pmf(successes);
  // Relative slack matches the usual convention for ties in probability.
  const double threshold = observed + std::log1p(1e-7);
  double p = 0.0;
  for (std::int64_t k = 0; k <= trials; ++k) {
    const double lp = log_pmf(k);
    if (lp <= threshold) p += std::exp(lp);
  }
  return std::min(1.0, p);
}

// ---------------------------------------------------------------------------

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile_sorted: empty sample");
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

BootstrapResult bootstrap(std::size_t n_units, const Statistic& statistic, const BootstrapConfig& config) {
  if (n_units == 0) throw std::invalid_argument("bootstrap: no units");
  if (config.n_resamples == 0) throw std::invalid_argument("bootstrap: n_resamples must be >= 1");
  if (!(config.confidence > 0.0 && config.confidence < 1.0)) {
    throw std::invalid_argument("bootstrap: confidence must lie in (0,1)");
  }

  std::vector<std::optional<double>> values(config.n_resamples);
  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx(n_units);
    for (std::size_t r = begin; r < end; ++r) {
      Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(r)));
      for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n_units));
      values[r] = statistic(idx);
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(config.threads, static_cast<unsigned>(config.n_resamples)));
  if (threads == 1) {
    work(0, config.n_resamples);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (config.n_resamples + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(config.n_resamples, begin + chunk);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  BootstrapResult result;
  for (const auto& v : values) {
    if (v && std::isfinite(*v)) {
      result.replicates.push_back(*v);
    } else {
      ++result.n_undefined;
    }
  }
  result.flagged = 2 * result.n_undefined > config.n_resamples;
  if (!result.flagged && !result.replicates.empty()) {
    std::vector<double> sorted = result.replicates;
    std::sort(sorted.begin(), sorted.end());
    const double alpha = 1.0 - config.confidence;
    result.low = quantile_sorted(sorted, alpha / 2.0);
    result.high = quantile_sorted(sorted, 1.0 - alpha / 2.0);
  }
  return result;
}

std::optional<std::pair<double, double>> bootstrap_ci(std::size_t n_units, const Statistic& statistic,
                                                      const BootstrapConfig& config) {
  auto r = bootstrap(n_units, statistic, config);
  if (!r.low || !r.high) return std::nullopt;
  return std::pair{*r.low, *r.high};
}

double bootstrap_p_value(std::span<const double> replicates) {
  if (replicates.empty()) return 1.0;
  std::size_t le = 0, ge = 0;
  for (double v : replicates) {
    le += v <= 0.0;
    ge += v >= 0.0;
  }
  return std::min(1.0, 2.0 * static_cast<double>(std::min(le, ge)) / static_cast<double>(replicates.size()));
}

std::vector<double> bonferroni(std::span<const double> p_values) {
  std::vector<double> out(p_values.begin(), p_values.end());
  const double m = static_cast<double>(out.size());
  for (auto& p : out) p = std::min(1.0, p * m);
  return out;
}

}  // namespace tlab::stats
