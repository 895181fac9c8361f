// Acceptance suite: runs every acceptance criterion at its stated
// tolerance and prints one [PASS]/[FAIL] line per criterion. Exits
// nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbalance/cbalance.hpp"
#include "test_support.hpp"
#include "theorem_checks.hpp"

namespace fs = std::filesystem;
using namespace cbal;

namespace {

const std::string kCli = CBALANCE_CLI_PATH;

struct Failure : std::runtime_error {
  explicit Failure(const std::string& what) : std::runtime_error(what) {}
};

void require(bool cond, const std::string& what) {
  if (!cond) throw Failure(what);
}

void require_close(double actual, double expected, double tol, const std::string& what) {
  if (!(std::fabs(actual - expected) <= tol)) {
    std::ostringstream msg;
    msg << what << ": got " << actual << ", expected " << expected << " +/- " << tol;
    throw Failure(msg.str());
  }
}

int run_cli(const std::string& args) {
  const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
  return WEXITSTATUS(std::system(cmd.c_str()));
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / "cbal_acceptance";
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// --------------------------------------------------------------------------
// 1. Analytic reference-table reproduction
// --------------------------------------------------------------------------

void criterion_table1() {
  struct Expected {
    double delta;
    std::size_t g, h;
    double p_dim, p10, p20;
  };
  const std::vector<Expected> expected = {
      {0.2, 4, 40, 0.703, 0.0001, 3.2e-8},   {0.3, 4, 40, 0.567, 0.003, 1.9e-5},
      {0.2, 10, 10, 0.654, 0.0005, 4.2e-7},  {0.3, 10, 10, 0.502, 0.0103, 1.8e-4},
      {0.2, 40, 40, 0.371, 0.067, 0.007},    {0.3, 40, 40, 0.178, 0.440, 0.276},
      {0.2, 100, 100, 0.157, 0.518, 0.370},  {0.3, 100, 100, 0.034, 0.957, 0.971},
  };
  const auto rows = table1();
  require(rows.size() == expected.size(), "table must have 8 rows");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const auto& e = expected[i];
    require(r.delta == e.delta && r.g == e.g && r.h == e.h, "row parameters mismatch");
    std::ostringstream tag;
    tag << "row (" << e.delta << ", " << e.g << ", " << e.h << ")";
    require_close(r.p_dim, e.p_dim, 0.001, tag.str() + " p_dim");
    require_close(r.p_bal_j10_r1, e.p10, 0.005, tag.str() + " p(J=10,r=1)");
    require_close(r.p_bal_j20_r2, e.p20, 0.005, tag.str() + " p(J=20,r=2)");
  }
}

// --------------------------------------------------------------------------
// 2. Toy enumeration oracle
// --------------------------------------------------------------------------

void criterion_toy_oracle() {
  const Population pop({0.0, 0.0, 1.0, 1.0}, 4);
  const SplitSample observed({0}, {2});

  AssessOptions enum_opts;
  enum_opts.mode = ReferenceMode::enumerate();
  const BalanceReport enumerated = assess(pop, observed, SamplingScheme::srs(1, 1), enum_opts);
  require(enumerated.p == 2.0 / 3.0, "enumerated p must equal 2/3 exactly");
  require(enumerated.p_star == 2.0 / 3.0, "enumerated p* must equal 2/3 exactly");

  AssessOptions mc_opts;
  mc_opts.mode = ReferenceMode::monte(100000);
  mc_opts.seed = 20240801;
  const BalanceReport monte = assess(pop, observed, SamplingScheme::srs(1, 1), mc_opts);
  require_close(monte.p, 2.0 / 3.0, 0.01, "monte carlo p");
  require_close(monte.p_star, 2.0 / 3.0, 0.01, "monte carlo p*");
}

// --------------------------------------------------------------------------
// 3. Cluster-scheme toy example
// --------------------------------------------------------------------------

void criterion_cluster_toy() {
  SeededRng gen(13579);
  for (int trial = 0; trial < 50; ++trial) {
    const Population pop = testsup::random_population(4, 1, gen);
    const auto scheme = SamplingScheme::cluster(1, 1, {{0, 1}, {2, 3}});
    const ReferenceSet ref = build_reference(pop, scheme, ReferenceMode::enumerate());
    require(ref.rows == 4, "cluster toy must enumerate 4 splits");
    EcdfFamily fam(ref, Grid::from_values(ref.smds));
    const std::vector<double> pgh = random_pseudo_p(ref, fam);
    std::multiset<double> support(pgh.begin(), pgh.end());
    require(support.count(0.5) == 2 && support.count(1.0) == 2,
            "support of p(g,h) must be exactly {.5, 1} with two rows each");
  }
}

// --------------------------------------------------------------------------
// 4. Theorem and lemma property suite
// --------------------------------------------------------------------------

void criterion_theorem_suite() {
  SeededRng rng(0xACCE57);
  for (int trial = 0; trial < 200; ++trial) theorems::check_lemma(rng);
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    try {
      theorems::check_instance(seed);
    } catch (const theorems::CheckFailure& e) {
      throw Failure("instance seed " + std::to_string(seed) + ": " + e.what());
    }
  }
}

// --------------------------------------------------------------------------
// 5. Desk-scale Monte Carlo reproduction of the design-comparison tables
// --------------------------------------------------------------------------

void criterion_desk_scale_simulation() {
  struct ScenarioExpectation {
    const char* preset;
    std::vector<double> best;    // largest-p shares per design
    std::vector<double> p_cut;   // p < .05 shares
    std::vector<double> ps_cut;  // p* < 20% shares
  };
  // Published shares for the three checked scenarios, design order
  // Randomized, Segregated, Partial, Matched, R_Partial, Natural.
  const std::vector<ScenarioExpectation> expectations = {
      {"mc-1",
       {0.17, 0.15, 0.18, 0.17, 0.17, 0.17},
       {0.22, 0.22, 0.22, 0.23, 0.23, 0.22},
       {0.20, 0.21, 0.21, 0.22, 0.22, 0.20}},
      {"mc-4",
       {0.38, 0.00, 0.05, 0.39, 0.12, 0.06},
       {0.21, 0.99, 0.71, 0.19, 0.55, 0.73},
       {0.20, 0.99, 0.69, 0.18, 0.53, 0.71}},
      {"mc-5",
       {0.41, 0.00, 0.01, 0.52, 0.04, 0.01},
       {0.20, 1.00, 0.95, 0.15, 0.80, 0.93},
       {0.19, 1.00, 0.95, 0.14, 0.79, 0.93}},
  };
  constexpr std::size_t kIterations = 1000;
  constexpr std::uint64_t kRounds = 2000;
  constexpr double kTolerance = 0.05;

  for (const auto& exp : expectations) {
    Scenario sc = scenario_preset(exp.preset);
    sc.mode = ReferenceMode::monte(kRounds);
    const SimulationResult res = run_scenario(sc, kIterations, 90210, 0);
    const std::vector<double> best = best_design_shares(res);
    const ThresholdShares shares = threshold_shares(res);

    std::cout << "    " << exp.preset << " best-design shares:";
    for (double b : best) std::cout << ' ' << b;
    std::cout << "\n    " << exp.preset << " p<.05 shares:     ";
    for (double s : shares.p_shares) std::cout << ' ' << s;
    std::cout << "\n    " << exp.preset << " p*<20% shares:    ";
    for (double s : shares.p_star_shares) std::cout << ' ' << s;
    std::cout << '\n';

    for (std::size_t d = 0; d < res.design_names.size(); ++d) {
      const std::string tag = std::string(exp.preset) + " " + res.design_names[d];
      require_close(best[d], exp.best[d], kTolerance, tag + " best-design share");
      require_close(shares.p_shares[d], exp.p_cut[d], kTolerance, tag + " p<.05 share");
      require_close(shares.p_star_shares[d], exp.ps_cut[d], kTolerance, tag + " p*<20% share");
    }
    if (std::string(exp.preset) == "mc-5") {
      require(shares.p_shares[1] >= 0.95, "mc-5 Segregated p<.05 share must be >= .95");
    }
  }
}

// --------------------------------------------------------------------------
// 6. Full-enumeration scenario with the bias-0 indistinguishability check
// --------------------------------------------------------------------------

void criterion_enumeration_scenario() {
  Scenario sc = scenario_preset("enum-1");
  constexpr std::size_t kIterations = 1000;
  const SimulationResult res = run_scenario(sc, kIterations, 424242, 0);
  require(res.iterations == kIterations, "iteration count mismatch");

  // reference support per population is the full 2,970-split enumeration
  SeededRng pop_rng(derive_seed(424242, 0), 0);
  const Population pop0 = generate_population(sc, pop_rng);
  const ReferenceSet ref =
      build_reference(pop0, SamplingScheme::srs(sc.m_size, sc.n_size), sc.mode);
  require(ref.rows == 2970, "enum-1 reference must enumerate 2,970 splits");

  // at bias zero no pair of designs is distinguishable (two-sample KS)
  for (std::size_t a = 0; a < res.design_names.size(); ++a) {
    for (std::size_t b = a + 1; b < res.design_names.size(); ++b) {
      const double pk = testsup::ks_test_pvalue(res.design_p(a), res.design_p(b));
      if (pk <= 0.001) {
        throw Failure("KS rejects " + res.design_names[a] + " vs " + res.design_names[b] +
                      " at alpha=.001 (p=" + std::to_string(pk) + ")");
      }
    }
  }
}

// --------------------------------------------------------------------------
// 7. Case-study-scale substituted check
// --------------------------------------------------------------------------

void criterion_case_study_scale(const TempDir& dir) {
  // The published case-study numbers are not reproducible (the covariate
  // values are not public); this check exercises the same shape: a
  // 332-unit, 17-covariate population, arm sizes 4/40, grid .01..3.00,
  // 100,000 Monte Carlo rounds, through the command line.
  constexpr std::size_t kUnits = 332;
  constexpr std::size_t kDims = 17;
  Scenario shape;
  shape.name = "case-study-shape";
  shape.k = kUnits;
  shape.m_size = 4;
  shape.n_size = 40;
  shape.bias = 0.0;
  shape.j_dims = kDims;
  SeededRng rng(8675309);
  const Population pop = generate_population(shape, rng);

  const fs::path cov_path = dir.path / "case_cov.csv";
  {
    std::ofstream out(cov_path);
    write_covariates_csv(pop, out);
  }
  SeededRng draw(5150);
  const SplitSample observed = draw_split(pop, SamplingScheme::srs(4, 40), draw);
  const fs::path split_path = dir.path / "case_split.csv";
  {
    std::ofstream out(split_path);
    out << "unit_id,arm\n";
    for (auto i : observed.m_indices) out << pop.unit_ids()[std::size_t(i)] << ",M\n";
    for (auto i : observed.n_indices) out << pop.unit_ids()[std::size_t(i)] << ",N\n";
  }

  const fs::path report_path = dir.path / "case_report.json";
  const auto start = std::chrono::steady_clock::now();
  const int rc = run_cli("assess --covariates " + cov_path.string() + " --split " +
                         split_path.string() +
                         " --mode mc --rounds 100000 --seed 1001 --grid-step 0.01 "
                         "--grid-max 3.0 --out-format json --out " +
                         report_path.string());
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  require(rc == 0, "cmd assess failed at case-study scale");
  require(elapsed < 300.0,
          "cmd assess took " + std::to_string(elapsed) + "s, budget is 300s");
  const auto report = nlohmann::json::parse(read_file(report_path));
  const double p = report["p"].get<double>();
  require(p >= 0.0 && p <= 1.0, "case-study p out of range");
  std::cout << "    case-study-scale assess: p=" << p
            << ", p*=" << report["p_star"].get<double>() << ", " << elapsed << "s\n";

  // Conventional-cutoff stringency: almost no SRS reference split passes
  // delta=.2, r=2 at these sizes (the per-dimension imbalance probability
  // is about .7, so two or fewer imbalanced dimensions out of 17 is rare).
  const ReferenceSet ref = build_reference(pop, SamplingScheme::srs(4, 40),
                                           ReferenceMode::monte(100000), 1001, 0);
  std::size_t accepted = 0;
  std::vector<double> sorted(ref.j);
  for (std::size_t r = 0; r < ref.rows; ++r) {
    const auto row = ref.row(r);
    std::copy(row.begin(), row.end(), sorted.begin());
    std::sort(sorted.begin(), sorted.end());
    if (count_at_least_sorted(sorted, 0.2) <= 2) ++accepted;
  }
  const double fraction = double(accepted) / double(ref.rows);
  std::cout << "    fraction of SRS references with R(.2) <= 2: " << fraction << '\n';
  require(fraction < 0.05, "ad-hoc acceptance fraction must stay below 5%");
}

// --------------------------------------------------------------------------
// 8. Byte-identical outputs across thread counts
// --------------------------------------------------------------------------

void criterion_thread_determinism(const TempDir& dir) {
  // toy inputs
  const fs::path cov = dir.path / "det_cov.csv";
  {
    std::ofstream out(cov);
    out << "unit_id,x1,x2\n";
    SeededRng rng(777);
    for (int i = 0; i < 30; ++i)
      out << "u" << i << ',' << format_double(rng.next_open_double()) << ','
          << format_double(rng.next_open_double()) << '\n';
  }
  const fs::path split = dir.path / "det_split.csv";
  {
    std::ofstream out(split);
    out << "unit_id,arm\nu0,M\nu1,M\nu2,N\nu3,N\nu4,N\n";
  }

  // reference: three worker counts, identical bytes
  std::vector<std::string> ref_files;
  for (unsigned t : {1u, 2u, 5u}) {
    const fs::path out = dir.path / ("det_ref_" + std::to_string(t) + ".bin");
    require(run_cli("--threads " + std::to_string(t) + " reference --covariates " +
                    cov.string() + " --m 2 --n 3 --mode mc --rounds 20000 --seed 99 --out " +
                    out.string()) == 0,
            "reference command failed");
    ref_files.push_back(read_file(out));
  }
  require(ref_files[0] == ref_files[1] && ref_files[1] == ref_files[2],
          "reference cache bytes differ across thread counts");

  // assess: json outputs identical
  std::vector<std::string> assess_files;
  for (unsigned t : {1u, 2u}) {
    const fs::path out = dir.path / ("det_assess_" + std::to_string(t) + ".json");
    require(run_cli("--threads " + std::to_string(t) + " assess --covariates " + cov.string() +
                    " --split " + split.string() +
                    " --mode mc --rounds 20000 --seed 99 --out-format json --out " +
                    out.string()) == 0,
            "assess command failed");
    assess_files.push_back(read_file(out));
  }
  require(assess_files[0] == assess_files[1], "assess output differs across thread counts");

  // simulate: all five output files identical
  for (unsigned t : {1u, 2u}) {
    require(run_cli("--threads " + std::to_string(t) +
                    " simulate --preset enum-1 --iterations 8 --seed 5 --quiet --out-dir " +
                    (dir.path / ("det_sim_" + std::to_string(t))).string()) == 0,
            "simulate command failed");
  }
  for (const char* name :
       {"results.csv", "best_design_shares.csv", "p_threshold_shares.csv",
        "p_star_threshold_shares.csv", "boxplot.csv"}) {
    require(read_file(dir.path / "det_sim_1" / name) ==
                read_file(dir.path / "det_sim_2" / name),
            std::string("simulate output ") + name + " differs across thread counts");
  }
}

}  // namespace

int main() {
  TempDir dir;
  struct Criterion {
    std::string name;
    double budget_seconds;
    std::function<void()> fn;
  };
  const std::vector<Criterion> criteria = {
      {"table1-reproduction", 1.0, criterion_table1},
      {"toy-enumeration-oracle", 5.0, criterion_toy_oracle},
      {"cluster-toy-support", 1.0, criterion_cluster_toy},
      {"theorem-property-suite", 120.0, criterion_theorem_suite},
      {"desk-scale-simulation", 1800.0, criterion_desk_scale_simulation},
      {"enumeration-scenario-ks", 600.0, criterion_enumeration_scenario},
      {"case-study-scale", 360.0, [&dir] { criterion_case_study_scale(dir); }},
      {"thread-determinism", 600.0, [&dir] { criterion_thread_determinism(dir); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    std::string error;
    try {
      c.fn();
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (error.empty() && elapsed > c.budget_seconds) {
      std::ostringstream msg;
      msg << "runtime " << elapsed << "s exceeds budget " << c.budget_seconds << "s";
      error = msg.str();
    }
    if (error.empty()) {
      std::printf("[PASS] %-28s (%.2fs)\n", c.name.c_str(), elapsed);
    } else {
      std::printf("[FAIL] %-28s (%.2fs) %s\n", c.name.c_str(), elapsed, error.c_str());
      ++failures;
    }
    std::fflush(stdout);
  }
  if (failures > 0) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all acceptance criteria passed\n");
  return 0;
}
