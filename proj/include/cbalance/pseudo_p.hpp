#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cbalance/core.hpp"
#include "cbalance/errors.hpp"
#include "cbalance/parallel.hpp"
#include "cbalance/sampling.hpp"

namespace cbal {

// ---------------------------------------------------------------------------
// Cutoff grids
// ---------------------------------------------------------------------------

/// The search grid of SMD cutoffs: strictly increasing, all positive.
/// May be empty only in the degenerate all-zero-SMD case.
struct Grid {
  std::vector<double> deltas;

  Grid() = default;
  explicit Grid(std::vector<double> d) : deltas(std::move(d)) {
    for (std::size_t i = 0; i < deltas.size(); ++i) {
      if (!(deltas[i] > 0.0) || !std::isfinite(deltas[i]))
        throw validation_error("Grid: cutoffs must be positive and finite");
      if (i > 0 && !(deltas[i] > deltas[i - 1]))
        throw validation_error("Grid: cutoffs must be strictly increasing");
    }
  }

  /// Builds a grid from arbitrary values: keeps the positive ones, sorts,
  /// and deduplicates.
  static Grid from_values(std::vector<double> values) {
    std::vector<double> kept;
    kept.reserve(values.size());
    for (double v : values) {
      if (v > 0.0 && std::isfinite(v)) kept.push_back(v);
    }
    std::sort(kept.begin(), kept.end());
    kept.erase(std::unique(kept.begin(), kept.end()), kept.end());
    return Grid(std::move(kept));
  }

  bool empty() const noexcept { return deltas.empty(); }
  std::size_t size() const noexcept { return deltas.size(); }
  double max() const noexcept { return deltas.empty() ? 0.0 : deltas.back(); }
};

/// Shape of the default regular grid: multiples of `step` up to at least
/// max(min_max, observed max + step).
struct GridSpec {
  double step = 0.01;
  double min_max = 3.0;
};

inline Grid make_default_grid(double max_observed_smd, const GridSpec& spec = {}) {
  if (!(spec.step > 0.0) || !(spec.min_max > 0.0))
    throw validation_error("GridSpec: step and max must be positive");
  const double target = std::max(spec.min_max, max_observed_smd + spec.step);
  const auto count = static_cast<std::size_t>(std::ceil(target / spec.step - 1e-9));
  std::vector<double> d(count);
  for (std::size_t i = 0; i < count; ++i) d[i] = static_cast<double>(i + 1) * spec.step;
  return Grid(std::move(d));
}

/// The exact cutoff candidate set for one observed sample: every
/// reference SMD value at most the largest observed SMD, plus the
/// observed SMD values themselves. Minimizing over this set gives the
/// exact infimum that a regular grid only approximates, because the
/// objective is a step function jumping only at realized SMD values.
inline Grid exact_candidate_grid(const ReferenceSet& ref, const SmdVector& observed) {
  const double max_obs = observed.max();
  std::vector<double> values(observed.deltas);
  for (double v : ref.smds) {
    if (v <= max_obs) values.push_back(v);
  }
  return Grid::from_values(std::move(values));
}

// ---------------------------------------------------------------------------
// Empirical CDF family
// ---------------------------------------------------------------------------

/// For each grid cutoff, the empirical distribution over the reference
/// set of the number of imbalanced covariates. Stored as cumulative
/// counts, so a CDF lookup is one array read. Immutable after
/// construction and shareable across threads.
class EcdfFamily {
 public:
  EcdfFamily(const ReferenceSet& ref, Grid grid, unsigned threads = 0)
      : grid_(std::move(grid)), j_(ref.j), rows_(ref.rows) {
    if (rows_ == 0) throw validation_error("ecdf_family: empty reference set");
    if (grid_.empty()) {
      grid_covers_reference_ = (ref.max_smd() == 0.0);
      return;
    }
    grid_covers_reference_ = ref.max_smd() <= grid_.max();
    const std::size_t g = grid_.size();
    const std::size_t width = j_ + 1;
    cum_counts_.assign(g * width, 0);
    const unsigned workers = resolve_threads(threads);
    std::vector<std::vector<std::uint64_t>> partials(workers);
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    // Static partition mirrored here so each worker owns one tally block;
    // integer merges make the result independent of the worker count.
    {
      const std::size_t total = rows_;
      const std::size_t n_chunks = std::min<std::size_t>(workers, total);
      const std::size_t base = total / n_chunks;
      const std::size_t extra = total % n_chunks;
      std::size_t lo = 0;
      for (std::size_t c = 0; c < n_chunks; ++c) {
        const std::size_t hi = lo + base + (c < extra ? 1 : 0);
        ranges.emplace_back(lo, hi);
        lo = hi;
      }
    }
    parallel_chunks(0, ranges.size(), workers, [&](std::size_t clo, std::size_t chi) {
      for (std::size_t c = clo; c < chi; ++c) {
        auto& hist = partials[c];
        hist.assign(g * width, 0);
        std::vector<double> sorted(j_);
        for (std::size_t r = ranges[c].first; r < ranges[c].second; ++r) {
          const auto row = ref.row(r);
          std::copy(row.begin(), row.end(), sorted.begin());
          std::sort(sorted.begin(), sorted.end());
          std::size_t below = 0;  // entries strictly below the current cutoff
          for (std::size_t gi = 0; gi < g; ++gi) {
            const double delta = grid_.deltas[gi];
            while (below < j_ && sorted[below] < delta) ++below;
            const std::size_t r_count = j_ - below;
            ++hist[gi * width + r_count];
          }
        }
      }
    });
    for (const auto& hist : partials) {
      if (hist.empty()) continue;
      for (std::size_t i = 0; i < cum_counts_.size(); ++i) cum_counts_[i] += hist[i];
    }
    // histogram -> cumulative counts over the imbalance count
    for (std::size_t gi = 0; gi < g; ++gi) {
      std::uint64_t acc = 0;
      for (std::size_t a = 0; a < width; ++a) {
        acc += cum_counts_[gi * width + a];
        cum_counts_[gi * width + a] = acc;
      }
    }
  }

  const Grid& grid() const noexcept { return grid_; }
  std::size_t dims() const noexcept { return j_; }
  std::size_t rows() const noexcept { return rows_; }
  bool grid_covers_reference() const noexcept { return grid_covers_reference_; }

  /// Number of reference rows with imbalance count <= a at grid cutoff gi.
  std::uint64_t cum_count(std::size_t gi, std::int64_t a) const noexcept {
    if (a < 0) return 0;
    const auto idx = static_cast<std::size_t>(std::min<std::int64_t>(a, static_cast<std::int64_t>(j_)));
    return cum_counts_[gi * (j_ + 1) + idx];
  }

  /// F at cutoff gi evaluated at integer a; 0 below the support, 1 from J up.
  double cdf(std::size_t gi, std::int64_t a) const noexcept {
    return static_cast<double>(cum_count(gi, a)) / static_cast<double>(rows_);
  }

  /// Imbalance counts of one SMD vector across the whole grid.
  std::vector<std::uint32_t> r_profile(const SmdVector& smds) const {
    std::vector<double> sorted(smds.deltas);
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::uint32_t> out(grid_.size());
    std::size_t below = 0;
    for (std::size_t gi = 0; gi < grid_.size(); ++gi) {
      while (below < sorted.size() && sorted[below] < grid_.deltas[gi]) ++below;
      out[gi] = static_cast<std::uint32_t>(sorted.size() - below);
    }
    return out;
  }

 private:
  Grid grid_;
  std::size_t j_;
  std::size_t rows_;
  std::vector<std::uint64_t> cum_counts_;  // grid-major, (J+1) wide, cumulative in a
  bool grid_covers_reference_ = true;
};

inline EcdfFamily ecdf_family(const ReferenceSet& ref, Grid grid, unsigned threads = 0) {
  return EcdfFamily(ref, std::move(grid), threads);
}

// ---------------------------------------------------------------------------
// Pseudo p-values
// ---------------------------------------------------------------------------

struct PseudoPResult {
  double p = 1.0;
  /// Smallest grid cutoff attaining the minimum; NaN when the grid is
  /// empty (all-zero observed SMDs).
  double argmin_delta = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

/// Largest cumulative count over the grid for one sorted SMD row, i.e.
/// the maximizer of F(imbalance count - 1). Works in integer counts so
/// ties and comparisons are exact.
inline std::uint64_t best_cum_count(const EcdfFamily& fam,
                                    std::span<const double> sorted_ascending) noexcept {
  const std::size_t j = sorted_ascending.size();
  std::uint64_t best = 0;
  std::size_t below = 0;
  for (std::size_t gi = 0; gi < fam.grid().size(); ++gi) {
    const double delta = fam.grid().deltas[gi];
    while (below < j && sorted_ascending[below] < delta) ++below;
    const auto r_count = static_cast<std::int64_t>(j - below);
    best = std::max(best, fam.cum_count(gi, r_count - 1));
  }
  return best;
}

}  // namespace detail

/// The pseudo p-value of an observed SMD vector against a reference
/// family: the minimum over grid cutoffs of the tail probability that a
/// reference split has at least as many imbalanced covariates. Requires
/// the grid to reach the largest observed SMD (otherwise candidate
/// cutoffs would be missing and the minimum too large).
inline PseudoPResult pseudo_p(const SmdVector& observed, const EcdfFamily& fam) {
  if (observed.size() != fam.dims())
    throw validation_error("pseudo_p: observed SMD length does not match the reference");
  const double max_obs = observed.max();
  if (max_obs > fam.grid().max())
    throw validation_error(
        "pseudo_p: grid max " + std::to_string(fam.grid().max()) +
        " does not cover the largest observed SMD " + std::to_string(max_obs));
  if (fam.grid().empty()) return {1.0, std::numeric_limits<double>::quiet_NaN()};

  std::vector<double> sorted(observed.deltas);
  std::sort(sorted.begin(), sorted.end());
  const std::size_t j = sorted.size();
  std::uint64_t best = 0;
  std::size_t best_gi = 0;
  std::size_t below = 0;
  for (std::size_t gi = 0; gi < fam.grid().size(); ++gi) {
    const double delta = fam.grid().deltas[gi];
    while (below < j && sorted[below] < delta) ++below;
    const auto r_count = static_cast<std::int64_t>(j - below);
    const std::uint64_t c = fam.cum_count(gi, r_count - 1);
    if (c > best) {
      best = c;
      best_gi = gi;
    }
  }
  const double p =
      static_cast<double>(fam.rows() - best) / static_cast<double>(fam.rows());
  return {p, fam.grid().deltas[best_gi]};
}

/// Pseudo p-value of every reference row against the full family (each
/// row scored with itself included, matching the plain empirical-CDF
/// reading). Rows whose SMDs exceed the grid max are scored over the
/// available cutoffs; the family's coverage flag records that caveat.
inline std::vector<double> random_pseudo_p(const ReferenceSet& ref, const EcdfFamily& fam,
                                           unsigned threads = 0) {
  if (ref.j != fam.dims() || ref.rows != fam.rows())
    throw validation_error("random_pseudo_p: family was not built from this reference");
  std::vector<double> out(ref.rows, 1.0);
  if (fam.grid().empty()) return out;
  const double denom = static_cast<double>(ref.rows);
  parallel_chunks(0, ref.rows, threads, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> sorted(ref.j);
    for (std::size_t r = lo; r < hi; ++r) {
      const auto row = ref.row(r);
      std::copy(row.begin(), row.end(), sorted.begin());
      std::sort(sorted.begin(), sorted.end());
      const std::uint64_t best = detail::best_cum_count(fam, sorted);
      out[r] = static_cast<double>(ref.rows - best) / denom;
    }
  });
  return out;
}

/// Rank of an observed pseudo p-value within the reference distribution:
/// the fraction of reference p-values at or below it (ties inclusive).
inline double standardized_pseudo_p(double p, std::span<const double> dist) {
  if (dist.empty()) throw validation_error("standardized_pseudo_p: empty distribution");
  std::size_t at_or_below = 0;
  for (double v : dist) {
    if (v <= p) ++at_or_below;
  }
  return static_cast<double>(at_or_below) / static_cast<double>(dist.size());
}

// ---------------------------------------------------------------------------
// One-call assessment
// ---------------------------------------------------------------------------

struct AssessOptions {
  GridSpec grid;
  bool exact_grid = false;  // use the exact candidate set instead of the regular grid
  ReferenceMode mode = ReferenceMode::monte(10000);
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::uint64_t enumeration_cap = kDefaultEnumerationCap;
};

/// Everything one balance assessment produces, with enough provenance to
/// reproduce it bit for bit.
struct BalanceReport {
  double p = 1.0;
  double p_star = 1.0;
  SmdVector smds;
  double argmin_delta = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> grid;
  std::vector<std::uint32_t> r_profile;
  ReferenceProvenance reference;
  std::size_t reference_rows = 0;
  double grid_step = 0.0;  // 0 for exact candidate grids
  bool grid_covers_reference = true;
};

/// Scores one observed split against a prebuilt reference set (the way to
/// amortize an expensive reference across many candidate splits). Errors
/// if the reference was built for a different population or arm sizes.
inline BalanceReport assess_with_reference(const Population& pop, const SplitSample& split,
                                           const ReferenceSet& ref, const AssessOptions& opts = {},
                                           std::vector<double>* pgh_out = nullptr) {
  if (ref.provenance.population_hash != pop.content_hash())
    throw validation_error(
        "assess: reference set was built from a different population (content hash mismatch)");
  if (ref.provenance.m_size != split.m_indices.size() ||
      ref.provenance.n_size != split.n_indices.size())
    throw validation_error("assess: reference arm sizes do not match the observed split");
  const SmdVector observed = smd(pop, split);
  Grid grid = opts.exact_grid ? exact_candidate_grid(ref, observed)
                              : make_default_grid(observed.max(), opts.grid);
  EcdfFamily fam(ref, std::move(grid), opts.threads);
  const PseudoPResult pr = pseudo_p(observed, fam);
  std::vector<double> pgh = random_pseudo_p(ref, fam, opts.threads);
  const double p_star = standardized_pseudo_p(pr.p, pgh);

  BalanceReport report;
  report.p = pr.p;
  report.p_star = p_star;
  report.smds = observed;
  report.argmin_delta = pr.argmin_delta;
  report.grid = fam.grid().deltas;
  report.r_profile = fam.r_profile(observed);
  report.reference = ref.provenance;
  report.reference_rows = ref.rows;
  report.grid_step = opts.exact_grid ? 0.0 : opts.grid.step;
  report.grid_covers_reference = fam.grid_covers_reference();
  if (pgh_out != nullptr) *pgh_out = std::move(pgh);
  return report;
}

/// Full assessment: build the reference under the ideal scheme, then
/// score the observed split.
inline BalanceReport assess(const Population& pop, const SplitSample& split,
                            const SamplingScheme& scheme, const AssessOptions& opts = {},
                            std::vector<double>* pgh_out = nullptr) {
  const ReferenceSet ref = build_reference(pop, scheme, opts.mode, opts.seed, opts.threads,
                                           opts.enumeration_cap);
  return assess_with_reference(pop, split, ref, opts, pgh_out);
}

}  // namespace cbal
