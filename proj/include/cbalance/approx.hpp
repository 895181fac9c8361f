#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "cbalance/errors.hpp"
#include "cbalance/normal.hpp"

namespace cbal {

/// Parameters of one closed-form balance-probability query: arm sizes,
/// SMD cutoff, covariate count, and the accepted imbalanced count.
struct ApproxQuery {
  std::size_t n;
  std::size_t m;
  double delta;
  std::size_t j_dims;
  std::size_t r_max;

  ApproxQuery(std::size_t n_, std::size_t m_, double delta_, std::size_t j_dims_,
              std::size_t r_max_)
      : n(n_), m(m_), delta(delta_), j_dims(j_dims_), r_max(r_max_) {
    if (n < 1 || m < 1) throw validation_error("ApproxQuery: arm sizes must be >= 1");
    if (!(delta > 0.0)) throw validation_error("ApproxQuery: delta must be positive");
    if (j_dims < 1) throw validation_error("ApproxQuery: needs at least one covariate");
  }
};

/// Probability that one covariate's SMD between two independent SRS arms
/// of sizes n and m reaches delta, under the normal approximation
/// 2 - 2*Phi(delta / sqrt(1/n + 1/m)). Finite-population corrections are
/// deliberately not applied.
inline double prob_dim_imbalanced(std::size_t n, std::size_t m, double delta) {
  if (n < 1 || m < 1) throw validation_error("prob_dim_imbalanced: arm sizes must be >= 1");
  if (!(delta > 0.0)) throw validation_error("prob_dim_imbalanced: delta must be positive");
  const double scale =
      std::sqrt(1.0 / static_cast<double>(n) + 1.0 / static_cast<double>(m));
  // 2 - 2*Phi(z) == erfc(z / sqrt(2))
  return std::erfc(delta / (scale * 1.4142135623730951));
}

/// Binomial tail P(Bin(j_dims, p1) <= r_max) with p1 from
/// prob_dim_imbalanced: the chance an SRS split is declared balanced by
/// the conventional rule. Exact log-space summation, no normal
/// approximation to the binomial.
inline double prob_declared_balanced(const ApproxQuery& q) {
  if (q.r_max >= q.j_dims) return 1.0;
  const double p1 = prob_dim_imbalanced(q.n, q.m, q.delta);
  if (p1 <= 0.0) return 1.0;
  if (p1 >= 1.0) return 0.0;
  const double log_p = std::log(p1);
  const double log_q = std::log1p(-p1);
  const double lg_j1 = std::lgamma(static_cast<double>(q.j_dims) + 1.0);
  double cdf = 0.0;
  for (std::size_t i = 0; i <= q.r_max; ++i) {
    const double di = static_cast<double>(i);
    const double dji = static_cast<double>(q.j_dims - i);
    const double log_term = lg_j1 - std::lgamma(di + 1.0) - std::lgamma(dji + 1.0) +
                            di * log_p + dji * log_q;
    cdf += std::exp(log_term);
  }
  return std::min(cdf, 1.0);
}

/// One row of the reference table of balance-acceptance probabilities for
/// SRS arms: per-dimension imbalance probability plus the accepted-split
/// probabilities at (J=10, r=1) and (J=20, r=2).
struct Table1Row {
  double delta;
  std::size_t g;
  std::size_t h;
  double p_dim;
  double p_bal_j10_r1;
  double p_bal_j20_r2;
};

/// The eight standard (delta, |g|, |h|) settings, evaluated fresh.
inline std::vector<Table1Row> table1() {
  static constexpr std::array<std::pair<double, std::size_t>, 8> kSettings = {{
      {0.2, 4},   {0.3, 4},   {0.2, 10},  {0.3, 10},
      {0.2, 40},  {0.3, 40},  {0.2, 100}, {0.3, 100},
  }};
  static constexpr std::array<std::size_t, 8> kHSizes = {40, 40, 10, 10, 40, 40, 100, 100};
  std::vector<Table1Row> rows;
  rows.reserve(kSettings.size());
  for (std::size_t i = 0; i < kSettings.size(); ++i) {
    const double delta = kSettings[i].first;
    const std::size_t g = kSettings[i].second;
    const std::size_t h = kHSizes[i];
    rows.push_back({delta, g, h, prob_dim_imbalanced(g, h, delta),
                    prob_declared_balanced({g, h, delta, 10, 1}),
                    prob_declared_balanced({g, h, delta, 20, 2})});
  }
  return rows;
}

}  // namespace cbal
