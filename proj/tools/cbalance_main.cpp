// Command-line front end: covariate balance assessment for two-arm
// samples from a finite population.
//
// Subcommands:
//   assess     score an observed split against an ideal sampling scheme
//   reference  build and cache a reference SMD set for reuse
//   simulate   run the design-comparison study and write aggregate tables
//   approx     closed-form balance-acceptance probabilities for SRS arms

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cbalance/cbalance.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitParse = 2;
constexpr int kExitValidation = 3;
constexpr int kExitInfeasible = 4;

struct CommonOpts {
  unsigned threads = 0;
  bool quiet = false;
  std::string out_format = "text";
};

cbal::SamplingScheme make_scheme(const std::string& name, std::size_t m, std::size_t n,
                                 std::size_t partial_first_half,
                                 const std::string& clusters_spec,
                                 const cbal::Population& pop) {
  if (name == "srs") return cbal::SamplingScheme::srs(m, n);
  if (name == "segregated") return cbal::SamplingScheme::segregated(m, n);
  if (name == "partial") return cbal::SamplingScheme::partial(m, n, partial_first_half);
  if (name == "matched") return cbal::SamplingScheme::matched(m, n);
  if (name == "r_partial") return cbal::SamplingScheme::r_partial(m, n);
  if (name == "natural") return cbal::SamplingScheme::natural(m, n);
  if (name == "cluster") {
    if (clusters_spec.empty())
      throw cbal::validation_error(
          "cluster scheme needs --clusters \"id,id,...;id,id,...\"");
    std::vector<std::vector<std::int32_t>> partition;
    std::unordered_map<std::string, std::int32_t> index_of;
    for (std::size_t i = 0; i < pop.size(); ++i)
      index_of.emplace(pop.unit_ids()[i], static_cast<std::int32_t>(i));
    std::stringstream groups(clusters_spec);
    std::string group;
    while (std::getline(groups, group, ';')) {
      std::vector<std::int32_t> cluster;
      std::stringstream ids(group);
      std::string id;
      while (std::getline(ids, id, ',')) {
        const auto trimmed = cbal::csv::trim(id);
        const auto it = index_of.find(trimmed);
        if (it == index_of.end())
          throw cbal::validation_error("--clusters: unknown unit id '" + trimmed + "'");
        cluster.push_back(it->second);
      }
      if (!cluster.empty()) partition.push_back(std::move(cluster));
    }
    return cbal::SamplingScheme::cluster(m, n, std::move(partition));
  }
  throw cbal::validation_error("unknown scheme: " + name);
}

void print_assess_text(const cbal::BalanceReport& report,
                       const std::vector<std::string>& names, std::ostream& out) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "p        %.6g\np*       %.4g%%\n", report.p,
                report.p_star * 100.0);
  out << buf;
  std::snprintf(buf, sizeof(buf), "argmin_delta  %.6g\n", report.argmin_delta);
  out << buf;
  out << "reference     " << report.reference.scheme << " (|M|=" << report.reference.m_size
      << ", |N|=" << report.reference.n_size << ", " << report.reference.mode;
  if (report.reference.mode == "monte_carlo")
    out << ", rounds=" << report.reference.rounds << ", seed=" << report.reference.seed;
  out << ", rows=" << report.reference_rows << ")\n\n";
  out << "covariate SMDs:\n";
  for (std::size_t j = 0; j < names.size(); ++j) {
    std::snprintf(buf, sizeof(buf), "  %-24s %.4f\n", names[j].c_str(),
                  report.smds.deltas[j]);
    out << buf;
  }
  const auto fs = cbal::five_number_summary(report.smds.deltas);
  std::snprintf(buf, sizeof(buf),
                "\nSMD summary  Min %.3f  Q1 %.3f  Median %.3f  Q3 %.3f  Max %.3f\n", fs.min,
                fs.q1, fs.median, fs.q3, fs.max);
  out << buf;
}

int run_assess(const CommonOpts& common, const std::string& covariates_path,
               const std::string& split_path, const std::string& reference_path,
               const std::string& scheme_name, std::size_t partial_first_half,
               const std::string& clusters_spec, const std::string& mode_name,
               std::uint64_t rounds, std::uint64_t seed, double grid_step, double grid_max,
               bool exact_grid, const std::string& out_path, const std::string& dump_pgh) {
  const cbal::Population pop = cbal::read_covariates_file(covariates_path);
  const cbal::SplitSample split = cbal::read_split_file(split_path, pop);

  cbal::AssessOptions opts;
  opts.grid = {grid_step, grid_max};
  opts.exact_grid = exact_grid;
  opts.seed = seed;
  opts.threads = common.threads;
  if (mode_name == "enumerate") {
    opts.mode = cbal::ReferenceMode::enumerate();
  } else if (mode_name == "mc") {
    opts.mode = cbal::ReferenceMode::monte(rounds);
  } else {
    throw cbal::validation_error("--mode must be enumerate or mc");
  }

  std::vector<double> pgh;
  cbal::BalanceReport report;
  if (!reference_path.empty()) {
    const cbal::ReferenceSet ref = cbal::read_reference_file(reference_path);
    report = cbal::assess_with_reference(pop, split, ref, opts, &pgh);
  } else {
    const cbal::SamplingScheme scheme =
        make_scheme(scheme_name, split.m_indices.size(), split.n_indices.size(),
                    partial_first_half, clusters_spec, pop);
    report = cbal::assess(pop, split, scheme, opts, &pgh);
  }

  if (!common.quiet && !report.grid_covers_reference)
    std::cerr << "note: some reference SMDs exceed the grid maximum; p* is computed over "
                 "the truncated grid\n";

  std::ofstream file_out;
  std::ostream* out = &std::cout;
  if (!out_path.empty()) {
    file_out.open(out_path);
    if (!file_out) throw cbal::parse_error(out_path + ": cannot open file for writing");
    out = &file_out;
  }
  if (common.out_format == "json") {
    *out << cbal::report_json(report, pop.covariate_names()).dump(2) << '\n';
  } else if (common.out_format == "csv") {
    cbal::write_report_csv(report, pop.covariate_names(), *out);
  } else {
    print_assess_text(report, pop.covariate_names(), *out);
  }
  if (!dump_pgh.empty()) {
    std::ofstream pgh_out(dump_pgh);
    if (!pgh_out) throw cbal::parse_error(dump_pgh + ": cannot open file for writing");
    cbal::write_pgh_csv(pgh, pgh_out);
  }
  return kExitOk;
}

int run_reference(const CommonOpts& common, const std::string& covariates_path,
                  const std::string& scheme_name, std::size_t m, std::size_t n,
                  std::size_t partial_first_half, const std::string& clusters_spec,
                  const std::string& mode_name, std::uint64_t rounds, std::uint64_t seed,
                  const std::string& out_path) {
  const cbal::Population pop = cbal::read_covariates_file(covariates_path);
  const cbal::SamplingScheme scheme =
      make_scheme(scheme_name, m, n, partial_first_half, clusters_spec, pop);
  cbal::ReferenceMode mode = cbal::ReferenceMode::enumerate();
  if (mode_name == "mc") {
    mode = cbal::ReferenceMode::monte(rounds);
  } else if (mode_name != "enumerate") {
    throw cbal::validation_error("--mode must be enumerate or mc");
  }
  const cbal::ReferenceSet ref =
      cbal::build_reference(pop, scheme, mode, seed, common.threads);
  cbal::write_reference_file(ref, out_path);
  if (!common.quiet)
    std::cerr << "wrote " << ref.rows << " reference rows to " << out_path << '\n';
  return kExitOk;
}

int run_approx(const CommonOpts& common, bool full_table, std::size_t n, std::size_t m,
               double delta, std::size_t j, std::size_t r, const std::string& out_path) {
  std::ofstream file_out;
  std::ostream* out = &std::cout;
  if (!out_path.empty()) {
    file_out.open(out_path);
    if (!file_out) throw cbal::parse_error(out_path + ": cannot open file for writing");
    out = &file_out;
  }
  if (full_table) {
    if (common.out_format == "json") {
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& row : cbal::table1()) {
        rows.push_back({{"delta", row.delta},
                        {"g", row.g},
                        {"m", row.h},
                        {"p_dim", row.p_dim},
                        {"p_bal_J10_r1", row.p_bal_j10_r1},
                        {"p_bal_J20_r2", row.p_bal_j20_r2}});
      }
      *out << rows.dump(2) << '\n';
    } else {
      cbal::write_table1_csv(*out);
    }
    return kExitOk;
  }
  const double p_dim = cbal::prob_dim_imbalanced(n, m, delta);
  const double p_bal = cbal::prob_declared_balanced({n, m, delta, j, r});
  if (common.out_format == "json") {
    *out << nlohmann::json{{"n", n},     {"m", m},           {"delta", delta},
                           {"j", j},     {"r", r},           {"p_dim", p_dim},
                           {"p_balanced", p_bal}}
                .dump(2)
         << '\n';
  } else if (common.out_format == "csv") {
    *out << "n,m,delta,j,r,p_dim,p_balanced\n"
         << n << ',' << m << ',' << cbal::format_double(delta) << ',' << j << ',' << r << ','
         << cbal::format_double(p_dim) << ',' << cbal::format_double(p_bal) << '\n';
  } else {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "P(one dimension imbalanced)      %.6f\n"
                  "P(declared balanced, R <= %zu)    %.6f\n",
                  p_dim, r, p_bal);
    *out << buf;
  }
  return kExitOk;
}

int run_simulate(const CommonOpts& common, const std::string& config_path,
                 const std::vector<std::string>& presets, std::size_t iterations_flag,
                 std::uint64_t rounds_flag, std::uint64_t seed_flag, double grid_step,
                 double grid_max, const std::string& out_dir) {
  cbal::SimulationConfig config;
  if (!config_path.empty()) {
    config = cbal::read_simulation_config(config_path);
  } else if (!presets.empty()) {
    for (const auto& name : presets) config.scenarios.push_back(cbal::scenario_preset(name));
  } else {
    throw cbal::validation_error("simulate needs --config or --preset");
  }
  if (iterations_flag > 0) config.iterations = iterations_flag;
  if (seed_flag != 0) config.seed = seed_flag;
  for (auto& sc : config.scenarios) {
    sc.grid = {grid_step, grid_max};
    if (rounds_flag > 0 && sc.mode.monte_carlo)
      sc.mode = cbal::ReferenceMode::monte(rounds_flag);
  }

  std::filesystem::create_directories(out_dir);
  std::ofstream results(out_dir + "/results.csv");
  std::ofstream best(out_dir + "/best_design_shares.csv");
  std::ofstream p_cut(out_dir + "/p_threshold_shares.csv");
  std::ofstream p_star_cut(out_dir + "/p_star_threshold_shares.csv");
  if (!results || !best || !p_cut || !p_star_cut)
    throw cbal::parse_error(out_dir + ": cannot open output files");

  std::vector<cbal::SimulationResult> runs;
  bool first = true;
  for (const auto& sc : config.scenarios) {
    if (!common.quiet)
      std::cerr << "running scenario " << sc.name << " (" << config.iterations
                << " iterations)...\n";
    cbal::SimulationResult res =
        cbal::run_scenario(sc, config.iterations, config.seed, common.threads);
    cbal::write_sim_results_csv(res, results, first);
    if (first) {
      cbal::write_shares_header(res.design_names, best);
      cbal::write_shares_header(res.design_names, p_cut);
      cbal::write_shares_header(res.design_names, p_star_cut);
      first = false;
    }
    cbal::write_shares_row(res, cbal::best_design_shares(res), best);
    const cbal::ThresholdShares shares = cbal::threshold_shares(res);
    cbal::write_shares_row(res, shares.p_shares, p_cut);
    cbal::write_shares_row(res, shares.p_star_shares, p_star_cut);
    runs.push_back(std::move(res));
  }
  std::ofstream box(out_dir + "/boxplot.csv");
  if (!box) throw cbal::parse_error(out_dir + ": cannot open output files");
  cbal::write_boxplot_csv(runs, box);
  if (!common.quiet) std::cerr << "wrote results to " << out_dir << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Covariate balance assessment for two-arm samples from a finite population"};
  app.require_subcommand(1);

  CommonOpts common;
  app.add_option("--threads", common.threads, "Worker threads (0 = hardware)");
  app.add_flag("--quiet", common.quiet, "Suppress progress notes");

  // assess
  auto* assess = app.add_subcommand("assess", "Assess one observed split");
  std::string covariates_path, split_path, reference_path, clusters_spec;
  std::string scheme_name = "srs", mode_name = "mc", out_path, dump_pgh;
  std::size_t partial_first_half = 1;
  std::uint64_t rounds = 10000, seed = 0;
  double grid_step = 0.01, grid_max = 3.0;
  bool exact_grid = false;
  assess->add_option("--covariates", covariates_path, "Covariate CSV")->required();
  assess->add_option("--split", split_path, "Split CSV (unit_id,arm)")->required();
  assess->add_option("--reference", reference_path, "Prebuilt reference cache file");
  assess->add_option("--scheme", scheme_name,
                     "Ideal scheme: srs|segregated|partial|matched|r_partial|natural|cluster");
  assess->add_option("--partial-first-half", partial_first_half,
                     "Units of M from the first half (partial scheme)");
  assess->add_option("--clusters", clusters_spec,
                     "Cluster partition as unit ids: \"a,b;c,d\" (cluster scheme)");
  assess->add_option("--mode", mode_name, "Reference mode: enumerate|mc");
  assess->add_option("--rounds", rounds, "Monte Carlo rounds");
  assess->add_option("--seed", seed, "Random seed");
  assess->add_option("--grid-step", grid_step, "Cutoff grid step");
  assess->add_option("--grid-max", grid_max, "Minimum cutoff grid maximum");
  assess->add_flag("--exact-grid", exact_grid,
                   "Minimize over the exact cutoff candidate set instead of the grid");
  assess->add_option("--out", out_path, "Write the report here instead of stdout");
  assess->add_option("--out-format", common.out_format, "text|csv|json");
  assess->add_option("--dump-pgh", dump_pgh, "Write the reference pseudo p-values as CSV");

  // reference
  auto* reference = app.add_subcommand("reference", "Build and cache a reference set");
  std::string ref_covariates, ref_scheme = "srs", ref_mode = "mc", ref_out, ref_clusters;
  std::size_t ref_m = 0, ref_n = 0, ref_partial = 1;
  std::uint64_t ref_rounds = 10000, ref_seed = 0;
  reference->add_option("--covariates", ref_covariates, "Covariate CSV")->required();
  reference->add_option("--m", ref_m, "Arm M size")->required();
  reference->add_option("--n", ref_n, "Arm N size")->required();
  reference->add_option("--scheme", ref_scheme, "Sampling scheme");
  reference->add_option("--partial-first-half", ref_partial,
                        "Units of M from the first half (partial scheme)");
  reference->add_option("--clusters", ref_clusters, "Cluster partition (cluster scheme)");
  reference->add_option("--mode", ref_mode, "enumerate|mc");
  reference->add_option("--rounds", ref_rounds, "Monte Carlo rounds");
  reference->add_option("--seed", ref_seed, "Random seed");
  reference->add_option("--out", ref_out, "Output cache path")->required();

  // approx
  auto* approx = app.add_subcommand("approx", "Closed-form balance probabilities");
  bool full_table = false;
  std::size_t ax_n = 0, ax_m = 0, ax_j = 10, ax_r = 1;
  double ax_delta = 0.2;
  std::string ax_out;
  approx->add_flag("--table1", full_table, "Emit the full 8-row reference table");
  approx->add_option("--n", ax_n, "Arm 1 size");
  approx->add_option("--m", ax_m, "Arm 2 size");
  approx->add_option("--delta", ax_delta, "SMD cutoff");
  approx->add_option("--j", ax_j, "Number of covariates");
  approx->add_option("--r", ax_r, "Accepted imbalanced dimensions");
  approx->add_option("--out", ax_out, "Write output here instead of stdout");
  approx->add_option("--out-format", common.out_format, "text|csv|json");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Run the design-comparison study");
  std::string sim_config, sim_out_dir = "sim-out";
  std::vector<std::string> sim_presets;
  std::size_t sim_iterations = 0;
  std::uint64_t sim_rounds = 0, sim_seed = 0;
  double sim_grid_step = 0.01, sim_grid_max = 3.0;
  simulate->add_option("--config", sim_config, "JSON scenario config");
  simulate->add_option("--preset", sim_presets, "Scenario preset (enum-1..16, mc-1..8)");
  simulate->add_option("--iterations", sim_iterations, "Iterations per scenario");
  simulate->add_option("--rounds", sim_rounds, "Monte Carlo reference rounds override");
  simulate->add_option("--seed", sim_seed, "Random seed");
  simulate->add_option("--grid-step", sim_grid_step, "Cutoff grid step");
  simulate->add_option("--grid-max", sim_grid_max, "Minimum cutoff grid maximum");
  simulate->add_option("--out-dir", sim_out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp" ||
        e.get_name() == "CallForVersion")
      return app.exit(e);
    std::cerr << "error: " << e.what() << '\n';
    return kExitParse;
  }

  try {
    if (assess->parsed()) {
      return run_assess(common, covariates_path, split_path, reference_path, scheme_name,
                        partial_first_half, clusters_spec, mode_name, rounds, seed, grid_step,
                        grid_max, exact_grid, out_path, dump_pgh);
    }
    if (reference->parsed()) {
      return run_reference(common, ref_covariates, ref_scheme, ref_m, ref_n, ref_partial,
                           ref_clusters, ref_mode, ref_rounds, ref_seed, ref_out);
    }
    if (approx->parsed()) {
      if (!full_table && (ax_n == 0 || ax_m == 0))
        throw cbal::validation_error("approx needs --n and --m (or --table1)");
      return run_approx(common, full_table, ax_n, ax_m, ax_delta, ax_j, ax_r, ax_out);
    }
    if (simulate->parsed()) {
      return run_simulate(common, sim_config, sim_presets, sim_iterations, sim_rounds,
                          sim_seed, sim_grid_step, sim_grid_max, sim_out_dir);
    }
  } catch (const cbal::parse_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitParse;
  } catch (const cbal::infeasible_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const cbal::validation_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitOk;
}
