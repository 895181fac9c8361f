#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "cbalance/core.hpp"
#include "cbalance/errors.hpp"
#include "cbalance/normal.hpp"
#include "cbalance/parallel.hpp"
#include "cbalance/pseudo_p.hpp"
#include "cbalance/rng.hpp"
#include "cbalance/sampling.hpp"

namespace cbal {

// ---------------------------------------------------------------------------
// Scenarios and study designs
// ---------------------------------------------------------------------------

/// One data-generating setting of the design-comparison study: population
/// size, arm sizes, the mean shift separating the two population halves,
/// and how the ideal-scheme reference is obtained.
struct Scenario {
  std::string name;
  std::size_t k = 0;
  std::size_t m_size = 0;
  std::size_t n_size = 0;
  double bias = 0.0;
  std::size_t j_dims = 10;
  ReferenceMode mode = ReferenceMode::monte(10000);
  std::size_t partial_first_half = 1;
  GridSpec grid;

  void validate() const {
    if (k < 2 || j_dims < 1) throw validation_error("Scenario: bad dimensions");
    if (m_size < 1 || n_size < 1 || m_size + n_size > k)
      throw validation_error("Scenario: arm sizes do not fit the population");
    if (bias < 0.0) throw validation_error("Scenario: bias must be >= 0");
  }
};

/// The six study designs compared by the simulation, in report order.
inline const std::vector<std::pair<std::string, SchemeKind>>& study_designs() {
  static const std::vector<std::pair<std::string, SchemeKind>> kDesigns = {
      {"Randomized", SchemeKind::kSrs},       {"Segregated", SchemeKind::kSegregated},
      {"Partial", SchemeKind::kPartial},      {"Matched", SchemeKind::kMatched},
      {"R_Partial", SchemeKind::kRPartial},   {"Natural", SchemeKind::kNatural},
  };
  return kDesigns;
}

inline SamplingScheme design_scheme(SchemeKind kind, const Scenario& sc) {
  SamplingScheme s;
  s.kind = kind;
  s.m_size = sc.m_size;
  s.n_size = sc.n_size;
  if (kind == SchemeKind::kPartial) s.partial_first_half = sc.partial_first_half;
  return s;
}

/// Built-in scenario presets: "enum-1".."enum-16" (full enumeration of
/// the ideal scheme) and "mc-1".."mc-8" (10,000 Monte Carlo reference
/// rounds). The Partial design draws 1 first-half unit of M in enum-1..12,
/// 2 in enum-13..16, and 8 in every mc scenario.
inline Scenario scenario_preset(const std::string& name) {
  struct Row {
    std::size_t k, m, n;
    double bias;
  };
  static constexpr std::array<Row, 16> kEnum = {{
      {12, 2, 2, 0.0}, {12, 2, 2, 0.5}, {12, 2, 2, 1.0}, {12, 2, 2, 2.0},
      {16, 2, 2, 0.0}, {16, 2, 2, 0.5}, {16, 2, 2, 1.0}, {16, 2, 2, 2.0},
      {20, 3, 3, 0.0}, {20, 3, 3, 0.5}, {20, 3, 3, 1.0}, {20, 3, 3, 2.0},
      {20, 4, 4, 0.0}, {20, 4, 4, 0.5}, {20, 4, 4, 1.0}, {20, 4, 4, 2.0},
  }};
  static constexpr std::array<Row, 8> kMonte = {{
      {100, 20, 20, 0.0},  {100, 20, 20, 0.1}, {100, 20, 20, 0.25},
      {100, 20, 20, 0.5},  {100, 20, 20, 0.75},
      {400, 40, 40, 0.0},  {400, 40, 40, 0.1}, {400, 40, 40, 0.25},
  }};
  auto parse_index = [&](const std::string& prefix, std::size_t count) -> std::size_t {
    const std::string digits = name.substr(prefix.size());
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos)
      throw validation_error("unknown scenario preset: " + name);
    const std::size_t idx = std::stoul(digits);
    if (idx < 1 || idx > count) throw validation_error("unknown scenario preset: " + name);
    return idx;
  };
  Scenario sc;
  sc.name = name;
  if (name.rfind("enum-", 0) == 0) {
    const std::size_t idx = parse_index("enum-", kEnum.size());
    const Row& r = kEnum[idx - 1];
    sc.k = r.k;
    sc.m_size = r.m;
    sc.n_size = r.n;
    sc.bias = r.bias;
    sc.mode = ReferenceMode::enumerate();
    sc.partial_first_half = idx <= 12 ? 1 : 2;
    return sc;
  }
  if (name.rfind("mc-", 0) == 0) {
    const std::size_t idx = parse_index("mc-", kMonte.size());
    const Row& r = kMonte[idx - 1];
    sc.k = r.k;
    sc.m_size = r.m;
    sc.n_size = r.n;
    sc.bias = r.bias;
    sc.mode = ReferenceMode::monte(10000);
    sc.partial_first_half = 8;
    return sc;
  }
  throw validation_error("unknown scenario preset: " + name);
}

// ---------------------------------------------------------------------------
// Population generation
// ---------------------------------------------------------------------------

/// A synthetic population for one scenario: first-half units i.i.d.
/// standard normal in every covariate, second-half units shifted by the
/// bias. Column-major fill, one generator for the whole matrix.
inline Population generate_population(const Scenario& sc, SeededRng& rng) {
  sc.validate();
  const std::size_t h1 = first_half_size(sc.k);
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<double> values(sc.k * sc.j_dims);
    for (std::size_t j = 0; j < sc.j_dims; ++j) {
      for (std::size_t i = 0; i < sc.k; ++i) {
        const double shift = i < h1 ? 0.0 : sc.bias;
        values[j * sc.k + i] = shift + sample_standard_normal(rng);
      }
    }
    try {
      return Population(std::move(values), sc.k);
    } catch (const validation_error&) {
      // Degenerate column: probability zero for continuous draws, but the
      // contract is to redraw rather than fail.
      std::clog << "generate_population: degenerate draw, regenerating\n";
    }
  }
  throw validation_error("generate_population: repeated degenerate draws");
}

// ---------------------------------------------------------------------------
// Scenario runs
// ---------------------------------------------------------------------------

/// p and p* for every (iteration, design) cell of one scenario run.
struct SimulationResult {
  Scenario scenario;
  std::vector<std::string> design_names;
  std::size_t iterations = 0;
  std::vector<double> p;       // iteration-major: [it * designs + d]
  std::vector<double> p_star;  // same layout

  double at_p(std::size_t it, std::size_t d) const {
    return p[it * design_names.size() + d];
  }
  double at_p_star(std::size_t it, std::size_t d) const {
    return p_star[it * design_names.size() + d];
  }

  /// All iterations of one design's p values.
  std::vector<double> design_p(std::size_t d) const {
    std::vector<double> out(iterations);
    for (std::size_t it = 0; it < iterations; ++it) out[it] = at_p(it, d);
    return out;
  }
  std::vector<double> design_p_star(std::size_t d) const {
    std::vector<double> out(iterations);
    for (std::size_t it = 0; it < iterations; ++it) out[it] = at_p_star(it, d);
    return out;
  }
};

/// Replicates the full per-iteration pipeline: fresh population, one
/// split per design, one shared ideal-scheme (SRS) reference per
/// iteration reused across all designs. Iterations run on independent
/// seed substreams, so any worker count produces identical output.
inline SimulationResult run_scenario(const Scenario& sc, std::size_t iterations,
                                     std::uint64_t seed, unsigned threads = 0) {
  sc.validate();
  const auto& designs = study_designs();
  for (const auto& [name, kind] : designs) {
    validate_scheme(design_scheme(kind, sc), sc.k);
  }
  SimulationResult res;
  res.scenario = sc;
  res.iterations = iterations;
  for (const auto& [name, kind] : designs) res.design_names.push_back(name);
  res.p.assign(iterations * designs.size(), 1.0);
  res.p_star.assign(iterations * designs.size(), 1.0);

  const SamplingScheme ideal = SamplingScheme::srs(sc.m_size, sc.n_size);
  parallel_chunks(0, iterations, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t it = lo; it < hi; ++it) {
      const std::uint64_t it_seed = derive_seed(seed, it);
      SeededRng pop_rng(it_seed, /*stream_id=*/0);
      const Population pop = generate_population(sc, pop_rng);

      std::vector<SmdVector> observed(designs.size());
      double max_obs = 0.0;
      for (std::size_t d = 0; d < designs.size(); ++d) {
        SeededRng draw_rng(it_seed, /*stream_id=*/1 + d);
        const SplitSample split = draw_split(pop, design_scheme(designs[d].second, sc), draw_rng);
        observed[d] = smd(pop, split);
        max_obs = std::max(max_obs, observed[d].max());
      }

      const ReferenceSet ref =
          build_reference(pop, ideal, sc.mode, derive_seed(it_seed, 0x5EEDu), /*threads=*/1);
      EcdfFamily fam(ref, make_default_grid(max_obs, sc.grid), /*threads=*/1);
      std::vector<double> pgh = random_pseudo_p(ref, fam, /*threads=*/1);
      std::sort(pgh.begin(), pgh.end());

      for (std::size_t d = 0; d < designs.size(); ++d) {
        const PseudoPResult pr = pseudo_p(observed[d], fam);
        res.p[it * designs.size() + d] = pr.p;
        const auto upper = std::upper_bound(pgh.begin(), pgh.end(), pr.p);
        res.p_star[it * designs.size() + d] =
            static_cast<double>(upper - pgh.begin()) / static_cast<double>(pgh.size());
      }
    }
  });
  return res;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// Per-design share of iterations in which the design attains the
/// largest p; ties are split fractionally so the shares sum to one.
inline std::vector<double> best_design_shares(const SimulationResult& res) {
  const std::size_t d_count = res.design_names.size();
  std::vector<double> shares(d_count, 0.0);
  if (res.iterations == 0) return shares;
  for (std::size_t it = 0; it < res.iterations; ++it) {
    double best = -1.0;
    for (std::size_t d = 0; d < d_count; ++d) best = std::max(best, res.at_p(it, d));
    std::size_t tied = 0;
    for (std::size_t d = 0; d < d_count; ++d) {
      if (res.at_p(it, d) == best) ++tied;
    }
    for (std::size_t d = 0; d < d_count; ++d) {
      if (res.at_p(it, d) == best) shares[d] += 1.0 / static_cast<double>(tied);
    }
  }
  for (double& s : shares) s /= static_cast<double>(res.iterations);
  return shares;
}

struct ThresholdShares {
  double p_cut;
  double p_star_cut;
  std::vector<double> p_shares;       // fraction with p  < p_cut, per design
  std::vector<double> p_star_shares;  // fraction with p* < p_star_cut, per design
};

/// Per-design share of iterations flagged by the conventional cutoffs
/// (strict comparisons).
inline ThresholdShares threshold_shares(const SimulationResult& res, double p_cut = 0.05,
                                        double p_star_cut = 0.20) {
  const std::size_t d_count = res.design_names.size();
  ThresholdShares out{p_cut, p_star_cut, std::vector<double>(d_count, 0.0),
                      std::vector<double>(d_count, 0.0)};
  if (res.iterations == 0) return out;
  for (std::size_t it = 0; it < res.iterations; ++it) {
    for (std::size_t d = 0; d < d_count; ++d) {
      if (res.at_p(it, d) < p_cut) out.p_shares[d] += 1.0;
      if (res.at_p_star(it, d) < p_star_cut) out.p_star_shares[d] += 1.0;
    }
  }
  for (double& s : out.p_shares) s /= static_cast<double>(res.iterations);
  for (double& s : out.p_star_shares) s /= static_cast<double>(res.iterations);
  return out;
}

/// Five-number summary plus 1.5*IQR outliers, quartiles by linear
/// interpolation of order statistics.
struct FiveNumberSummary {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
  std::vector<double> outliers;
};

inline double quantile_sorted(std::span<const double> sorted, double prob) {
  if (sorted.empty()) throw validation_error("quantile: empty data");
  const double pos = prob * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline FiveNumberSummary five_number_summary(std::vector<double> values) {
  if (values.empty()) throw validation_error("five_number_summary: empty data");
  std::sort(values.begin(), values.end());
  FiveNumberSummary s;
  s.min = values.front();
  s.max = values.back();
  s.q1 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.50);
  s.q3 = quantile_sorted(values, 0.75);
  const double iqr = s.q3 - s.q1;
  const double lo = s.q1 - 1.5 * iqr;
  const double hi = s.q3 + 1.5 * iqr;
  for (double v : values) {
    if (v < lo || v > hi) s.outliers.push_back(v);
  }
  return s;
}

/// Box-plot data per (design, metric): metric 0 is p, metric 1 is p*.
struct BoxplotSummary {
  std::vector<FiveNumberSummary> p;       // one per design
  std::vector<FiveNumberSummary> p_star;  // one per design
};

inline BoxplotSummary boxplot_summary(const SimulationResult& res) {
  BoxplotSummary out;
  for (std::size_t d = 0; d < res.design_names.size(); ++d) {
    out.p.push_back(five_number_summary(res.design_p(d)));
    out.p_star.push_back(five_number_summary(res.design_p_star(d)));
  }
  return out;
}

}  // namespace cbal
