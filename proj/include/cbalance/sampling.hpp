#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cbalance/core.hpp"
#include "cbalance/errors.hpp"
#include "cbalance/parallel.hpp"
#include "cbalance/rng.hpp"

namespace cbal {

// ---------------------------------------------------------------------------
// Schemes
// ---------------------------------------------------------------------------

/// The supported ways of drawing a two-arm split from a population.
///
/// "First half" means indices 0..floor(K/2)-1; with odd K the extra unit
/// falls in the second half.
enum class SchemeKind {
  kSrs,         // both arms uniform without replacement from the whole population
  kSegregated,  // N from the first half, M from the second half
  kPartial,     // N and a fixed part of M from the first half, rest of M from the second
  kMatched,     // both arms from the first half
  kRPartial,    // Partial with a Binomial(|M|, 1/2) first-half share of M
  kNatural,     // N from the first half, then M uniform from the remainder
  kCluster,     // pick one cluster uniformly, split it into the two arms
};

struct SamplingScheme {
  SchemeKind kind = SchemeKind::kSrs;
  std::size_t m_size = 0;
  std::size_t n_size = 0;
  std::size_t partial_first_half = 0;               // kPartial only
  std::vector<std::vector<std::int32_t>> clusters;  // kCluster only

  static SamplingScheme srs(std::size_t m, std::size_t n) {
    return {SchemeKind::kSrs, m, n, 0, {}};
  }
  static SamplingScheme segregated(std::size_t m, std::size_t n) {
    return {SchemeKind::kSegregated, m, n, 0, {}};
  }
  static SamplingScheme partial(std::size_t m, std::size_t n, std::size_t from_first_half) {
    return {SchemeKind::kPartial, m, n, from_first_half, {}};
  }
  static SamplingScheme matched(std::size_t m, std::size_t n) {
    return {SchemeKind::kMatched, m, n, 0, {}};
  }
  static SamplingScheme r_partial(std::size_t m, std::size_t n) {
    return {SchemeKind::kRPartial, m, n, 0, {}};
  }
  static SamplingScheme natural(std::size_t m, std::size_t n) {
    return {SchemeKind::kNatural, m, n, 0, {}};
  }
  static SamplingScheme cluster(std::size_t m, std::size_t n,
                                std::vector<std::vector<std::int32_t>> partition) {
    return {SchemeKind::kCluster, m, n, 0, std::move(partition)};
  }

  std::string name() const {
    switch (kind) {
      case SchemeKind::kSrs: return "srs";
      case SchemeKind::kSegregated: return "segregated";
      case SchemeKind::kPartial: return "partial";
      case SchemeKind::kMatched: return "matched";
      case SchemeKind::kRPartial: return "r_partial";
      case SchemeKind::kNatural: return "natural";
      case SchemeKind::kCluster: return "cluster";
    }
    return "unknown";
  }
};

inline std::size_t first_half_size(std::size_t k) noexcept { return k / 2; }

/// Checks that the scheme can produce a split of the requested sizes from
/// a population of k units; throws infeasible_error otherwise.
inline void validate_scheme(const SamplingScheme& s, std::size_t k) {
  if (s.m_size < 1 || s.n_size < 1)
    throw infeasible_error("scheme: both arm sizes must be >= 1");
  const std::size_t h1 = first_half_size(k);
  const std::size_t h2 = k - h1;
  switch (s.kind) {
    case SchemeKind::kSrs:
      if (s.m_size + s.n_size > k)
        throw infeasible_error("srs: arm sizes exceed the population");
      break;
    case SchemeKind::kSegregated:
      if (s.n_size > h1 || s.m_size > h2)
        throw infeasible_error("segregated: arm sizes exceed the half they draw from");
      break;
    case SchemeKind::kPartial:
      if (s.partial_first_half > s.m_size)
        throw infeasible_error("partial: first-half share exceeds |M|");
      if (s.n_size + s.partial_first_half > h1 || s.m_size - s.partial_first_half > h2)
        throw infeasible_error("partial: arm sizes do not fit the halves");
      break;
    case SchemeKind::kMatched:
      if (s.m_size + s.n_size > h1)
        throw infeasible_error("matched: |M|+|N| exceeds the first half");
      break;
    case SchemeKind::kRPartial: {
      const std::size_t lo = s.m_size > h2 ? s.m_size - h2 : 0;
      const std::size_t hi = std::min(s.m_size, h1 >= s.n_size ? h1 - s.n_size : 0);
      if (s.n_size > h1 || lo > hi)
        throw infeasible_error("r_partial: no feasible first-half share of M");
      break;
    }
    case SchemeKind::kNatural:
      if (s.n_size > h1 || s.m_size + s.n_size > k)
        throw infeasible_error("natural: arm sizes do not fit");
      break;
    case SchemeKind::kCluster: {
      if (s.clusters.empty()) throw infeasible_error("cluster: empty partition");
      std::vector<char> seen(k, 0);
      std::size_t covered = 0;
      for (const auto& c : s.clusters) {
        if (c.size() < s.m_size + s.n_size)
          throw infeasible_error("cluster: a cluster is smaller than |M|+|N|");
        for (std::int32_t i : c) {
          if (i < 0 || static_cast<std::size_t>(i) >= k)
            throw validation_error("cluster: index out of range");
          if (seen[static_cast<std::size_t>(i)])
            throw validation_error("cluster: clusters overlap");
          seen[static_cast<std::size_t>(i)] = 1;
          ++covered;
        }
      }
      if (covered != k)
        throw validation_error("cluster: partition does not cover the population");
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Enumeration
// ---------------------------------------------------------------------------

/// n choose r, saturating at uint64 max on overflow.
inline std::uint64_t choose(std::uint64_t n, std::uint64_t r) noexcept {
  if (r > n) return 0;
  r = std::min(r, n - r);
  std::uint64_t result = 1;
  for (std::uint64_t i = 1; i <= r; ++i) {
    const std::uint64_t factor = n - r + i;
    if (result > std::numeric_limits<std::uint64_t>::max() / factor)
      return std::numeric_limits<std::uint64_t>::max();
    result = result * factor / i;  // exact: result*factor divisible by i here
  }
  return result;
}

/// Number of ordered (M, N) pairs an SRS enumeration yields:
/// C(k, m) * C(k-m, n), saturating on overflow.
inline std::uint64_t count_splits(std::size_t k, std::size_t m, std::size_t n) noexcept {
  const std::uint64_t a = choose(k, m);
  const std::uint64_t b = choose(k - std::min(k, m), n);
  if (a == 0 || b == 0) return 0;
  if (a > std::numeric_limits<std::uint64_t>::max() / b)
    return std::numeric_limits<std::uint64_t>::max();
  return a * b;
}

constexpr std::uint64_t kDefaultEnumerationCap = 10'000'000;

namespace detail {

/// Advances a strictly increasing index vector `c` (positions into a pool
/// of size `pool`) to the next combination in lexicographic order.
/// Returns false after the last one.
inline bool next_combination_indices(std::vector<std::size_t>& c, std::size_t pool) noexcept {
  const std::size_t r = c.size();
  std::size_t i = r;
  while (i-- > 0) {
    if (c[i] < pool - r + i) {
      ++c[i];
      for (std::size_t j = i + 1; j < r; ++j) c[j] = c[j - 1] + 1;
      return true;
    }
  }
  return false;
}

inline std::vector<std::size_t> first_combination(std::size_t r) {
  std::vector<std::size_t> c(r);
  std::iota(c.begin(), c.end(), 0);
  return c;
}

/// Calls fn(selected) for every r-subset of `pool`, lexicographic by pool
/// position. `selected` is reused between calls.
template <typename Fn>
void for_each_combination(const std::vector<std::int32_t>& pool, std::size_t r, Fn&& fn) {
  if (r == 0 || r > pool.size()) return;
  auto idx = first_combination(r);
  std::vector<std::int32_t> selected(r);
  do {
    for (std::size_t i = 0; i < r; ++i) selected[i] = pool[idx[i]];
    fn(selected);
  } while (next_combination_indices(idx, pool.size()));
}

inline std::vector<std::int32_t> iota_pool(std::size_t count, std::int32_t start = 0) {
  std::vector<std::int32_t> pool(count);
  std::iota(pool.begin(), pool.end(), start);
  return pool;
}

/// pool minus a sorted subset (both sorted ascending).
inline std::vector<std::int32_t> pool_minus(const std::vector<std::int32_t>& pool,
                                            const std::vector<std::int32_t>& taken) {
  std::vector<std::int32_t> rest;
  rest.reserve(pool.size() - taken.size());
  std::set_difference(pool.begin(), pool.end(), taken.begin(), taken.end(),
                      std::back_inserter(rest));
  return rest;
}

}  // namespace detail

/// Streams every ordered pair of disjoint index sets (M first, then N
/// from the remainder) exactly once, in lexicographic order. This is the
/// SRS support.
class SplitEnumerator {
 public:
  SplitEnumerator(std::size_t k, std::size_t m_size, std::size_t n_size)
      : k_(k), m_size_(m_size), n_size_(n_size) {
    if (m_size_ < 1 || n_size_ < 1 || m_size_ + n_size_ > k_)
      throw infeasible_error("enumerate_splits: arm sizes do not fit the population");
    all_ = detail::iota_pool(k_);
  }

  std::uint64_t total() const noexcept { return count_splits(k_, m_size_, n_size_); }

  /// Fills `out` with the next split; returns false when exhausted.
  bool next(SplitSample& out) {
    if (done_) return false;
    if (!started_) {
      m_idx_ = detail::first_combination(m_size_);
      load_m();
      n_idx_ = detail::first_combination(n_size_);
      started_ = true;
    } else if (!detail::next_combination_indices(n_idx_, rest_.size())) {
      if (!detail::next_combination_indices(m_idx_, k_)) {
        done_ = true;
        return false;
      }
      load_m();
      n_idx_ = detail::first_combination(n_size_);
    }
    out.m_indices = m_;
    out.n_indices.resize(n_size_);
    for (std::size_t i = 0; i < n_size_; ++i) out.n_indices[i] = rest_[n_idx_[i]];
    return true;
  }

 private:
  void load_m() {
    m_.resize(m_size_);
    for (std::size_t i = 0; i < m_size_; ++i) m_[i] = all_[m_idx_[i]];
    rest_ = detail::pool_minus(all_, m_);
  }

  std::size_t k_, m_size_, n_size_;
  std::vector<std::int32_t> all_, m_, rest_;
  std::vector<std::size_t> m_idx_, n_idx_;
  bool started_ = false;
  bool done_ = false;
};

/// Materializes the full SRS enumeration. Errors above `cap` with a hint
/// to switch to Monte Carlo.
inline std::vector<SplitSample> enumerate_splits(std::size_t k, std::size_t m_size,
                                                 std::size_t n_size,
                                                 std::uint64_t cap = kDefaultEnumerationCap) {
  SplitEnumerator en(k, m_size, n_size);
  const std::uint64_t total = en.total();
  if (total > cap)
    throw infeasible_error(
        "enumerate_splits: " + std::to_string(total) +
        " splits exceed the cap of " + std::to_string(cap) +
        "; use Monte Carlo mode instead");
  std::vector<SplitSample> out;
  out.reserve(static_cast<std::size_t>(total));
  SplitSample s;
  while (en.next(s)) out.push_back(s);
  return out;
}

/// Enumerates the support of a scheme whose draws are uniform over it
/// (every scheme except kRPartial, whose first-half share is binomial).
/// For kCluster, uniformity additionally requires equal cluster sizes.
/// Row order is deterministic; each support element appears exactly once.
inline std::vector<SplitSample> enumerate_scheme(std::size_t k, const SamplingScheme& s,
                                                 std::uint64_t cap = kDefaultEnumerationCap) {
  validate_scheme(s, k);
  const std::size_t h1 = first_half_size(k);
  std::vector<SplitSample> out;
  auto guard = [cap, &out]() {
    if (out.size() > cap)
      throw infeasible_error("enumerate_scheme: support exceeds the cap of " +
                             std::to_string(cap) + "; use Monte Carlo mode instead");
  };
  switch (s.kind) {
    case SchemeKind::kSrs:
      return enumerate_splits(k, s.m_size, s.n_size, cap);
    case SchemeKind::kSegregated: {
      const auto first = detail::iota_pool(h1);
      const auto second = detail::iota_pool(k - h1, static_cast<std::int32_t>(h1));
      detail::for_each_combination(first, s.n_size, [&](const std::vector<std::int32_t>& n) {
        detail::for_each_combination(second, s.m_size, [&](const std::vector<std::int32_t>& m) {
          out.emplace_back(SplitSample{m, n});
          guard();
        });
      });
      return out;
    }
    case SchemeKind::kPartial: {
      const auto first = detail::iota_pool(h1);
      const auto second = detail::iota_pool(k - h1, static_cast<std::int32_t>(h1));
      const std::size_t f = s.partial_first_half;
      detail::for_each_combination(first, s.n_size, [&](const std::vector<std::int32_t>& n) {
        const auto rest_first = detail::pool_minus(first, n);
        auto emit_m2 = [&](const std::vector<std::int32_t>& m1) {
          detail::for_each_combination(
              second, s.m_size - f, [&](const std::vector<std::int32_t>& m2) {
                std::vector<std::int32_t> m = m1;
                m.insert(m.end(), m2.begin(), m2.end());
                out.emplace_back(SplitSample{std::move(m), n});
                guard();
              });
        };
        if (f == 0) {
          emit_m2({});
        } else {
          detail::for_each_combination(rest_first, f, emit_m2);
        }
      });
      return out;
    }
    case SchemeKind::kMatched: {
      const auto first = detail::iota_pool(h1);
      detail::for_each_combination(first, s.n_size, [&](const std::vector<std::int32_t>& n) {
        const auto rest = detail::pool_minus(first, n);
        detail::for_each_combination(rest, s.m_size, [&](const std::vector<std::int32_t>& m) {
          out.emplace_back(SplitSample{m, n});
          guard();
        });
      });
      return out;
    }
    case SchemeKind::kRPartial:
      throw infeasible_error(
          "enumerate_scheme: r_partial mixes support points with unequal "
          "probabilities; use Monte Carlo mode instead");
    case SchemeKind::kNatural: {
      const auto first = detail::iota_pool(h1);
      const auto all = detail::iota_pool(k);
      detail::for_each_combination(first, s.n_size, [&](const std::vector<std::int32_t>& n) {
        const auto rest = detail::pool_minus(all, n);
        detail::for_each_combination(rest, s.m_size, [&](const std::vector<std::int32_t>& m) {
          out.emplace_back(SplitSample{m, n});
          guard();
        });
      });
      return out;
    }
    case SchemeKind::kCluster: {
      for (const auto& c : s.clusters) {
        if (c.size() != s.clusters.front().size())
          throw infeasible_error(
              "enumerate_scheme: cluster enumeration needs equal-sized clusters "
              "(unequal sizes make support points unequally likely); use Monte "
              "Carlo mode instead");
      }
      for (const auto& c : s.clusters) {
        std::vector<std::int32_t> pool = c;
        std::sort(pool.begin(), pool.end());
        detail::for_each_combination(pool, s.m_size, [&](const std::vector<std::int32_t>& m) {
          const auto rest = detail::pool_minus(pool, m);
          detail::for_each_combination(rest, s.n_size, [&](const std::vector<std::int32_t>& n) {
            out.emplace_back(SplitSample{m, n});
            guard();
          });
        });
      }
      return out;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random draws
// ---------------------------------------------------------------------------

namespace detail {

/// `count` distinct elements of `pool`, uniform without replacement
/// (partial Fisher-Yates), returned sorted. Consumes `pool`.
inline std::vector<std::int32_t> sample_from_pool(std::vector<std::int32_t> pool,
                                                  std::size_t count, SeededRng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j =
        i + static_cast<std::size_t>(rng.uniform_below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline std::size_t binomial_half(std::size_t trials, SeededRng& rng) {
  std::size_t hits = 0;
  for (std::size_t t = 0; t < trials; ++t) hits += rng.next_u64() >> 63;
  return hits;
}

}  // namespace detail

/// One split drawn by the scheme from a population of k units. Pure given
/// the generator value. Draw order is fixed per scheme (documented with
/// SchemeKind) so results are reproducible byte for byte.
inline SplitSample draw_split_k(std::size_t k, const SamplingScheme& s, SeededRng& rng) {
  validate_scheme(s, k);
  const std::size_t h1 = first_half_size(k);
  const auto first = [&] { return detail::iota_pool(h1); };
  const auto second = [&] { return detail::iota_pool(k - h1, static_cast<std::int32_t>(h1)); };
  switch (s.kind) {
    case SchemeKind::kSrs: {
      auto m = detail::sample_from_pool(detail::iota_pool(k), s.m_size, rng);
      auto rest = detail::pool_minus(detail::iota_pool(k), m);
      auto n = detail::sample_from_pool(std::move(rest), s.n_size, rng);
      return {std::move(m), std::move(n)};
    }
    case SchemeKind::kSegregated: {
      auto n = detail::sample_from_pool(first(), s.n_size, rng);
      auto m = detail::sample_from_pool(second(), s.m_size, rng);
      return {std::move(m), std::move(n)};
    }
    case SchemeKind::kPartial:
    case SchemeKind::kRPartial: {
      std::size_t f = s.partial_first_half;
      if (s.kind == SchemeKind::kRPartial) {
        // First-half share of M: Binomial(|M|, 1/2), clamped to feasibility.
        const std::size_t lo = s.m_size > (k - h1) ? s.m_size - (k - h1) : 0;
        const std::size_t hi = std::min(s.m_size, h1 - s.n_size);
        f = std::clamp(detail::binomial_half(s.m_size, rng), lo, hi);
      }
      auto n = detail::sample_from_pool(first(), s.n_size, rng);
      std::vector<std::int32_t> m;
      if (f > 0) {
        auto rest_first = detail::pool_minus(first(), n);
        m = detail::sample_from_pool(std::move(rest_first), f, rng);
      }
      if (f < s.m_size) {
        auto m2 = detail::sample_from_pool(second(), s.m_size - f, rng);
        m.insert(m.end(), m2.begin(), m2.end());
      }
      return {std::move(m), std::move(n)};
    }
    case SchemeKind::kMatched: {
      auto n = detail::sample_from_pool(first(), s.n_size, rng);
      auto rest = detail::pool_minus(first(), n);
      auto m = detail::sample_from_pool(std::move(rest), s.m_size, rng);
      return {std::move(m), std::move(n)};
    }
    case SchemeKind::kNatural: {
      auto n = detail::sample_from_pool(first(), s.n_size, rng);
      auto rest = detail::pool_minus(detail::iota_pool(k), n);
      auto m = detail::sample_from_pool(std::move(rest), s.m_size, rng);
      return {std::move(m), std::move(n)};
    }
    case SchemeKind::kCluster: {
      const std::size_t c = static_cast<std::size_t>(rng.uniform_below(s.clusters.size()));
      std::vector<std::int32_t> pool = s.clusters[c];
      std::sort(pool.begin(), pool.end());
      auto m = detail::sample_from_pool(pool, s.m_size, rng);
      auto rest = detail::pool_minus(pool, m);
      auto n = detail::sample_from_pool(std::move(rest), s.n_size, rng);
      return {std::move(m), std::move(n)};
    }
  }
  throw validation_error("draw_split: unknown scheme");
}

inline SplitSample draw_split(const Population& pop, const SamplingScheme& s, SeededRng& rng) {
  return draw_split_k(pop.size(), s, rng);
}

/// Cluster sampling as a one-shot call: choose a cluster uniformly, then
/// disjoint arms uniformly inside it.
inline SplitSample cluster_draw(const Population& pop,
                                std::vector<std::vector<std::int32_t>> partition,
                                std::size_t m_size, std::size_t n_size, SeededRng& rng) {
  return draw_split(pop, SamplingScheme::cluster(m_size, n_size, std::move(partition)), rng);
}

// ---------------------------------------------------------------------------
// Reference sets
// ---------------------------------------------------------------------------

/// How a reference distribution is obtained: full enumeration of the
/// scheme support, or repeated Monte Carlo draws.
struct ReferenceMode {
  bool monte_carlo = false;
  std::uint64_t rounds = 0;

  static ReferenceMode enumerate() { return {false, 0}; }
  static ReferenceMode monte(std::uint64_t rounds) {
    if (rounds < 1) throw validation_error("ReferenceMode: rounds must be >= 1");
    return {true, rounds};
  }
  std::string name() const { return monte_carlo ? "monte_carlo" : "enumerate"; }
};

struct ReferenceProvenance {
  std::string scheme;
  std::size_t m_size = 0;
  std::size_t n_size = 0;
  std::string mode;
  std::uint64_t rounds = 0;  // 0 under enumeration
  std::uint64_t seed = 0;    // meaningful only under Monte Carlo
  std::uint64_t population_hash = 0;
};

/// SMD rows for every reference split under the ideal scheme: the raw
/// material for the empirical distribution of imbalance counts. Row-major
/// rows x J, immutable once built.
struct ReferenceSet {
  std::size_t rows = 0;
  std::size_t j = 0;
  std::vector<double> smds;
  ReferenceProvenance provenance;

  std::span<const double> row(std::size_t r) const { return {smds.data() + r * j, j}; }

  double max_smd() const noexcept {
    double m = 0.0;
    for (double v : smds) m = std::max(m, v);
    return m;
  }
};

/// Builds the reference SMD matrix for a scheme. Enumeration walks the
/// full support (uniform schemes only); Monte Carlo uses one generator
/// substream per round, so row r is the same no matter how many workers
/// participate or how rounds are scheduled.
inline ReferenceSet build_reference(const Population& pop, const SamplingScheme& scheme,
                                    const ReferenceMode& mode, std::uint64_t seed = 0,
                                    unsigned threads = 0,
                                    std::uint64_t cap = kDefaultEnumerationCap) {
  validate_scheme(scheme, pop.size());
  ReferenceSet ref;
  ref.j = pop.dims();
  ref.provenance = {scheme.name(), scheme.m_size,       scheme.n_size,
                    mode.name(),   mode.rounds,          mode.monte_carlo ? seed : 0,
                    pop.content_hash()};
  if (!mode.monte_carlo) {
    const auto splits = enumerate_scheme(pop.size(), scheme, cap);
    ref.rows = splits.size();
    ref.smds.resize(ref.rows * ref.j);
    parallel_chunks(0, ref.rows, threads, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t r = lo; r < hi; ++r) {
        const SmdVector d = smd(pop, splits[r]);
        std::copy(d.deltas.begin(), d.deltas.end(), ref.smds.begin() + r * ref.j);
      }
    });
    return ref;
  }
  ref.rows = static_cast<std::size_t>(mode.rounds);
  ref.smds.resize(ref.rows * ref.j);
  parallel_chunks(0, ref.rows, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r) {
      SeededRng rng(seed, /*stream_id=*/r);
      const SplitSample split = draw_split_k(pop.size(), scheme, rng);
      const SmdVector d = smd(pop, split);
      std::copy(d.deltas.begin(), d.deltas.end(), ref.smds.begin() + r * ref.j);
    }
  });
  return ref;
}

}  // namespace cbal
