#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <iterator>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cbalance/errors.hpp"

namespace cbal {

/// A finite study population: K units by J real covariates, fully known.
///
/// Storage is column-major (one contiguous block per covariate) so the
/// per-cutoff counting loops downstream scan contiguous memory. Instances
/// are immutable after construction and safe to share across threads.
///
/// Construction enforces: K >= 2, J >= 1, every entry finite, and every
/// column with positive population SD. Zero-variance columns are rejected
/// by name rather than dropped, since dropping would silently change the
/// covariate count every downstream statistic depends on.
class Population {
 public:
  /// `values` holds column j in [j*k, (j+1)*k). Empty `covariate_names` /
  /// `unit_ids` are filled with x1..xJ / u1..uK.
  Population(std::vector<double> values, std::size_t k,
             std::vector<std::string> covariate_names = {},
             std::vector<std::string> unit_ids = {})
      : values_(std::move(values)),
        k_(k),
        names_(std::move(covariate_names)),
        ids_(std::move(unit_ids)) {
    if (k_ < 2) throw validation_error("Population: needs at least 2 units");
    if (values_.empty() || values_.size() % k_ != 0)
      throw validation_error("Population: value count is not a multiple of the unit count");
    j_ = values_.size() / k_;
    if (names_.empty()) {
      names_.reserve(j_);
      for (std::size_t j = 0; j < j_; ++j) names_.push_back("x" + std::to_string(j + 1));
    }
    if (ids_.empty()) {
      ids_.reserve(k_);
      for (std::size_t i = 0; i < k_; ++i) ids_.push_back("u" + std::to_string(i + 1));
    }
    if (names_.size() != j_)
      throw validation_error("Population: covariate name count does not match columns");
    if (ids_.size() != k_)
      throw validation_error("Population: unit id count does not match rows");
    for (double v : values_) {
      if (!std::isfinite(v)) throw validation_error("Population: non-finite covariate entry");
    }
    compute_moments();
  }

  std::size_t size() const noexcept { return k_; }  // K
  std::size_t dims() const noexcept { return j_; }  // J

  std::span<const double> column(std::size_t j) const {
    return {values_.data() + j * k_, k_};
  }
  const std::vector<double>& values() const noexcept { return values_; }
  const std::vector<std::string>& covariate_names() const noexcept { return names_; }
  const std::vector<std::string>& unit_ids() const noexcept { return ids_; }

  /// Per-column population means (denominator K).
  const std::vector<double>& means() const noexcept { return means_; }
  /// Per-column population SDs (denominator K-1). Strictly positive.
  const std::vector<double>& sds() const noexcept { return sds_; }

  /// FNV-1a over dimensions, labels, and raw value bits. Used to tie a
  /// persisted reference set to the exact population it was built from.
  std::uint64_t content_hash() const noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    auto mix_byte = [&h](unsigned char b) {
      h ^= b;
      h *= 0x100000001B3ULL;
    };
    auto mix_u64 = [&](std::uint64_t v) {
      for (int s = 0; s < 64; s += 8) mix_byte(static_cast<unsigned char>(v >> s));
    };
    auto mix_str = [&](const std::string& s) {
      mix_u64(s.size());
      for (char c : s) mix_byte(static_cast<unsigned char>(c));
    };
    mix_u64(k_);
    mix_u64(j_);
    for (const auto& s : names_) mix_str(s);
    for (const auto& s : ids_) mix_str(s);
    for (double v : values_) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(v));
      std::memcpy(&bits, &v, sizeof(bits));
      mix_u64(bits);
    }
    return h;
  }

 private:
  void compute_moments() {
    means_.resize(j_);
    sds_.resize(j_);
    std::vector<std::string> degenerate;
    for (std::size_t j = 0; j < j_; ++j) {
      const auto col = column(j);
      double sum = 0.0;
      for (double v : col) sum += v;
      const double mean = sum / static_cast<double>(k_);
      double ss = 0.0;
      for (double v : col) {
        const double d = v - mean;
        ss += d * d;
      }
      means_[j] = mean;
      sds_[j] = std::sqrt(ss / static_cast<double>(k_ - 1));
      if (!(sds_[j] > 0.0)) degenerate.push_back(names_[j]);
    }
    if (!degenerate.empty()) {
      std::string msg = "Population: zero-variance covariate column(s):";
      for (const auto& n : degenerate) msg += " " + n;
      throw validation_error(msg);
    }
  }

  std::vector<double> values_;
  std::size_t k_;
  std::size_t j_ = 0;
  std::vector<std::string> names_;
  std::vector<std::string> ids_;
  std::vector<double> means_;
  std::vector<double> sds_;
};

/// Two disjoint, nonempty index sets into a population: the observed (or
/// drawn) two-arm sample. Indices are 0-based and stored sorted.
struct SplitSample {
  std::vector<std::int32_t> m_indices;
  std::vector<std::int32_t> n_indices;

  SplitSample() = default;
  SplitSample(std::vector<std::int32_t> m, std::vector<std::int32_t> n)
      : m_indices(std::move(m)), n_indices(std::move(n)) {
    std::sort(m_indices.begin(), m_indices.end());
    std::sort(n_indices.begin(), n_indices.end());
    validate();
  }

  void validate() const {
    if (m_indices.empty() || n_indices.empty())
      throw validation_error("SplitSample: both arms must be nonempty");
    auto has_dup = [](const std::vector<std::int32_t>& v) {
      return std::adjacent_find(v.begin(), v.end()) != v.end();
    };
    if (has_dup(m_indices) || has_dup(n_indices))
      throw validation_error("SplitSample: duplicate index within an arm");
    for (std::int32_t i : m_indices) {
      if (i < 0) throw validation_error("SplitSample: negative index");
    }
    for (std::int32_t i : n_indices) {
      if (i < 0) throw validation_error("SplitSample: negative index");
    }
    std::vector<std::int32_t> overlap;
    std::set_intersection(m_indices.begin(), m_indices.end(), n_indices.begin(),
                          n_indices.end(), std::back_inserter(overlap));
    if (!overlap.empty()) throw validation_error("SplitSample: arms overlap");
  }

  void check_range(std::size_t k) const {
    const auto limit = static_cast<std::int32_t>(k);
    if ((!m_indices.empty() && m_indices.back() >= limit) ||
        (!n_indices.empty() && n_indices.back() >= limit))
      throw validation_error("SplitSample: index out of population range");
  }
};

/// The J non-directional standardized mean differences of one split,
/// population-SD scale. Entries are finite and >= 0.
struct SmdVector {
  std::vector<double> deltas;

  std::size_t size() const noexcept { return deltas.size(); }
  double max() const noexcept {
    double m = 0.0;
    for (double d : deltas) m = std::max(m, d);
    return m;
  }
};

/// Cutoffs of the conventional balance check: SMD cutoff and the largest
/// imbalanced count still declared balanced.
struct BalanceConfig {
  double delta_cutoff;
  std::size_t max_imbalanced;

  BalanceConfig(double cutoff, std::size_t max_dims)
      : delta_cutoff(cutoff), max_imbalanced(max_dims) {
    if (!(delta_cutoff > 0.0))
      throw validation_error("BalanceConfig: delta cutoff must be positive");
  }
};

struct Moments {
  std::vector<double> means;
  std::vector<double> sds;
  bool sds_defined = true;  // false when the index set is a single unit
};

/// Column means and SDs of the whole population (SD denominator K-1).
inline Moments population_moments(const Population& pop) {
  return {pop.means(), pop.sds(), true};
}

/// Column means and SDs over one index set (SD denominator |a|-1;
/// sds_defined is false and sds empty for singleton sets).
inline Moments sample_moments(const Population& pop, std::span<const std::int32_t> a) {
  if (a.empty()) throw validation_error("sample_moments: empty index set");
  for (std::int32_t i : a) {
    if (i < 0 || static_cast<std::size_t>(i) >= pop.size())
      throw validation_error("sample_moments: index out of range");
  }
  Moments out;
  out.means.resize(pop.dims());
  const double inv = 1.0 / static_cast<double>(a.size());
  for (std::size_t j = 0; j < pop.dims(); ++j) {
    const auto col = pop.column(j);
    double sum = 0.0;
    for (std::int32_t i : a) sum += col[static_cast<std::size_t>(i)];
    out.means[j] = sum * inv;
  }
  if (a.size() < 2) {
    out.sds_defined = false;
    return out;
  }
  out.sds.resize(pop.dims());
  for (std::size_t j = 0; j < pop.dims(); ++j) {
    const auto col = pop.column(j);
    double ss = 0.0;
    for (std::int32_t i : a) {
      const double d = col[static_cast<std::size_t>(i)] - out.means[j];
      ss += d * d;
    }
    out.sds[j] = std::sqrt(ss / static_cast<double>(a.size() - 1));
  }
  return out;
}

/// |mean over M - mean over N| / S_j per covariate. The denominator is
/// always the population SD, never a sample SD.
inline SmdVector smd(const Population& pop, const SplitSample& split) {
  split.validate();
  split.check_range(pop.size());
  SmdVector out;
  out.deltas.resize(pop.dims());
  const double inv_m = 1.0 / static_cast<double>(split.m_indices.size());
  const double inv_n = 1.0 / static_cast<double>(split.n_indices.size());
  for (std::size_t j = 0; j < pop.dims(); ++j) {
    const auto col = pop.column(j);
    double sum_m = 0.0;
    for (std::int32_t i : split.m_indices) sum_m += col[static_cast<std::size_t>(i)];
    double sum_n = 0.0;
    for (std::int32_t i : split.n_indices) sum_n += col[static_cast<std::size_t>(i)];
    out.deltas[j] = std::fabs(sum_m * inv_m - sum_n * inv_n) / pop.sds()[j];
  }
  return out;
}

/// Number of covariates with SMD >= delta. The boundary counts as
/// imbalanced; every module shares this convention.
inline std::size_t count_imbalanced(const SmdVector& smds, double delta) {
  if (!(delta > 0.0)) throw validation_error("count_imbalanced: delta must be positive");
  std::size_t r = 0;
  for (double d : smds.deltas) {
    if (d >= delta) ++r;
  }
  return r;
}

/// Counts entries >= delta in an ascending-sorted SMD row. Shared by the
/// grid-scan cores.
inline std::size_t count_at_least_sorted(std::span<const double> sorted_ascending,
                                         double delta) noexcept {
  const auto it =
      std::lower_bound(sorted_ascending.begin(), sorted_ascending.end(), delta);
  return static_cast<std::size_t>(sorted_ascending.end() - it);
}

struct AdhocResult {
  bool balanced;
  std::size_t r_delta;
};

/// The conventional accept/reject rule: balanced iff the imbalanced count
/// at the cutoff is at most max_imbalanced.
inline AdhocResult adhoc_assess(const SmdVector& smds, const BalanceConfig& cfg) {
  const std::size_t r = count_imbalanced(smds, cfg.delta_cutoff);
  return {r <= cfg.max_imbalanced, r};
}

}  // namespace cbal
