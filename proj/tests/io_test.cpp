#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cbalance/io.hpp"
#include "test_support.hpp"

using Catch::Approx;
using namespace cbal;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cbal_io_test_" + name);
}

constexpr const char* kToyCsv =
    "unit_id,x1\n"
    "a,0\n"
    "b,0\n"
    "c,1\n"
    "d,1\n";

}  // namespace

TEST_CASE("covariates csv round trip") {
  std::istringstream in(
      "unit_id,age,income\n"
      "u1,34,51000.5\n"
      "u2,29,47250.25\n"
      "u3,61,90123.125\n");
  const Population pop = read_covariates_csv(in, "test");
  REQUIRE(pop.size() == 3);
  REQUIRE(pop.dims() == 2);
  REQUIRE(pop.covariate_names() == std::vector<std::string>{"age", "income"});
  REQUIRE(pop.unit_ids()[2] == "u3");
  REQUIRE(pop.column(1)[0] == 51000.5);

  std::ostringstream out;
  write_covariates_csv(pop, out);
  std::istringstream back(out.str());
  const Population pop2 = read_covariates_csv(back, "roundtrip");
  REQUIRE(pop2.unit_ids() == pop.unit_ids());
  REQUIRE(pop2.covariate_names() == pop.covariate_names());
  REQUIRE(pop2.values() == pop.values());  // format_double is lossless
  REQUIRE(pop2.content_hash() == pop.content_hash());
}

TEST_CASE("csv round trip at full double precision") {
  SeededRng rng(808);
  std::vector<double> values;
  for (int i = 0; i < 40; ++i)
    values.push_back((rng.next_open_double() - 0.5) * std::pow(10.0, double(i % 17) - 5.0));
  const Population pop(std::move(values), 10);
  std::ostringstream out;
  write_covariates_csv(pop, out);
  std::istringstream back(out.str());
  REQUIRE(read_covariates_csv(back, "prop").values() == pop.values());
}

TEST_CASE("covariates csv diagnostics") {
  SECTION("bad numeric cell names line and column") {
    std::istringstream in("unit_id,x\nu1,1\nu2,oops\nu3,2\n");
    try {
      read_covariates_csv(in, "demo.csv");
      FAIL("expected parse_error");
    } catch (const parse_error& e) {
      const std::string msg = e.what();
      REQUIRE(msg.find("demo.csv:3") != std::string::npos);
      REQUIRE(msg.find("column 2") != std::string::npos);
      REQUIRE(msg.find("oops") != std::string::npos);
    }
  }
  SECTION("ragged rows are rejected") {
    std::istringstream in("unit_id,x,y\nu1,1,2\nu2,3\n");
    REQUIRE_THROWS_AS(read_covariates_csv(in, "r"), parse_error);
  }
  SECTION("duplicate unit ids are rejected") {
    std::istringstream in("unit_id,x\nu1,1\nu1,2\nu2,0\n");
    REQUIRE_THROWS_AS(read_covariates_csv(in, "d"), validation_error);
  }
  SECTION("header must carry at least one covariate") {
    std::istringstream in("unit_id\nu1\n");
    REQUIRE_THROWS_AS(read_covariates_csv(in, "h"), parse_error);
  }
  SECTION("zero-variance column is named") {
    std::istringstream in("unit_id,flat,ok\nu1,5,1\nu2,5,2\n");
    try {
      read_covariates_csv(in, "z");
      FAIL("expected validation_error");
    } catch (const validation_error& e) {
      REQUIRE(std::string(e.what()).find("flat") != std::string::npos);
    }
  }
  SECTION("quoted fields parse") {
    std::istringstream in("unit_id,x\n\"City, Big\",1\nother,2\n");
    const Population pop = read_covariates_csv(in, "q");
    REQUIRE(pop.unit_ids()[0] == "City, Big");
  }
}

TEST_CASE("split csv") {
  std::istringstream cov(kToyCsv);
  const Population pop = read_covariates_csv(cov, "toy");

  SECTION("valid split resolves ids") {
    std::istringstream in("unit_id,arm\na,M\nc,N\n");
    const SplitSample s = read_split_csv(in, pop, "s");
    REQUIRE(s.m_indices == std::vector<std::int32_t>{0});
    REQUIRE(s.n_indices == std::vector<std::int32_t>{2});
  }
  SECTION("unknown unit id") {
    std::istringstream in("unit_id,arm\nzz,M\nc,N\n");
    REQUIRE_THROWS_AS(read_split_csv(in, pop, "s"), validation_error);
  }
  SECTION("bad arm label") {
    std::istringstream in("unit_id,arm\na,X\nc,N\n");
    REQUIRE_THROWS_AS(read_split_csv(in, pop, "s"), parse_error);
  }
  SECTION("unit in both arms") {
    std::istringstream in("unit_id,arm\na,M\na,N\n");
    REQUIRE_THROWS_AS(read_split_csv(in, pop, "s"), validation_error);
  }
  SECTION("empty arm") {
    std::istringstream in("unit_id,arm\na,M\nb,M\n");
    REQUIRE_THROWS_AS(read_split_csv(in, pop, "s"), validation_error);
  }
}

TEST_CASE("reference cache round trip") {
  std::istringstream cov(kToyCsv);
  const Population pop = read_covariates_csv(cov, "toy");
  const ReferenceSet ref =
      build_reference(pop, SamplingScheme::srs(1, 1), ReferenceMode::monte(500), 9);

  const auto path = temp_file("ref.bin");
  write_reference_file(ref, path.string());
  const ReferenceSet back = read_reference_file(path.string());
  REQUIRE(back.rows == ref.rows);
  REQUIRE(back.j == ref.j);
  REQUIRE(back.smds == ref.smds);
  REQUIRE(back.provenance.scheme == "srs");
  REQUIRE(back.provenance.population_hash == pop.content_hash());
  REQUIRE(back.provenance.seed == 9);
  std::filesystem::remove(path);

  SECTION("corrupt magic is rejected") {
    const auto bad = temp_file("bad.bin");
    std::ofstream out(bad, std::ios::binary);
    out << "NOTAREF1xxxxxxxxxxxx";
    out.close();
    REQUIRE_THROWS_AS(read_reference_file(bad.string()), parse_error);
    std::filesystem::remove(bad);
  }
}

TEST_CASE("report serialization") {
  std::istringstream cov(kToyCsv);
  const Population pop = read_covariates_csv(cov, "toy");
  AssessOptions opts;
  opts.mode = ReferenceMode::enumerate();
  const BalanceReport report =
      assess(pop, SplitSample({0}, {2}), SamplingScheme::srs(1, 1), opts);

  SECTION("json carries the headline numbers") {
    const nlohmann::json j = report_json(report, pop.covariate_names());
    REQUIRE(j["p"].get<double>() == Approx(2.0 / 3.0));
    REQUIRE(j["p_star_percent"].get<double>() == Approx(100.0 * 2.0 / 3.0));
    REQUIRE(j["smds"].size() == 1);
    REQUIRE(j["smds"][0]["name"] == "x1");
    REQUIRE(j["reference"]["rows"].get<std::size_t>() == 12);
    REQUIRE(j["smd_summary"].contains("median"));
    REQUIRE(j["r_profile"].size() == report.grid.size());
  }
  SECTION("flat csv row") {
    std::ostringstream out;
    write_report_csv(report, pop.covariate_names(), out);
    std::istringstream lines(out.str());
    std::string header, row, extra;
    REQUIRE(std::getline(lines, header));
    REQUIRE(std::getline(lines, row));
    REQUIRE_FALSE(std::getline(lines, extra));
    REQUIRE(header.rfind("p,p_star,argmin_delta", 0) == 0);
    REQUIRE(header.find("smd:x1") != std::string::npos);
    REQUIRE(row.find("srs") != std::string::npos);
  }
}

TEST_CASE("table1 csv shape") {
  std::ostringstream out;
  write_table1_csv(out);
  std::istringstream lines(out.str());
  std::string line;
  std::size_t rows = 0;
  REQUIRE(std::getline(lines, line));
  REQUIRE(line == "delta,g,m,p_dim,p_bal_J10_r1,p_bal_J20_r2");
  while (std::getline(lines, line)) ++rows;
  REQUIRE(rows == 8);
}

TEST_CASE("simulation config parsing") {
  SECTION("presets and overrides") {
    const nlohmann::json cfg = {
        {"scenarios", {"mc-1", "enum-3"}}, {"iterations", 50}, {"seed", 7}, {"rounds", 2000}};
    const SimulationConfig parsed = parse_simulation_config(cfg);
    REQUIRE(parsed.scenarios.size() == 2);
    REQUIRE(parsed.scenarios[0].mode.rounds == 2000);  // override applies to mc
    REQUIRE_FALSE(parsed.scenarios[1].mode.monte_carlo);
    REQUIRE(parsed.iterations == 50);
    REQUIRE(parsed.seed == 7);
  }
  SECTION("custom scenario object") {
    const nlohmann::json cfg = {
        {"scenarios",
         {{{"name", "tiny"},
           {"k", 10},
           {"m", 2},
           {"n", 2},
           {"bias", 0.5},
           {"mode", "enumerate"}}}},
        {"iterations", 5}};
    const SimulationConfig parsed = parse_simulation_config(cfg);
    REQUIRE(parsed.scenarios[0].name == "tiny");
    REQUIRE(parsed.scenarios[0].k == 10);
    REQUIRE(parsed.scenarios[0].bias == 0.5);
  }
  SECTION("schema diagnostics point at the problem") {
    try {
      parse_simulation_config({{"scenarios", {{{"k", 10}}}}});
      FAIL("expected validation_error");
    } catch (const validation_error& e) {
      REQUIRE(std::string(e.what()).find("missing key 'm'") != std::string::npos);
    }
    REQUIRE_THROWS_AS(parse_simulation_config({{"iterations", 5}}), validation_error);
    REQUIRE_THROWS_AS(
        parse_simulation_config({{"scenarios", {"mc-1"}}, {"iterations", 0}}),
        validation_error);
  }
}

TEST_CASE("simulation csv writers") {
  Scenario sc = scenario_preset("enum-1");
  const SimulationResult res = run_scenario(sc, 4, 3, 2);

  std::ostringstream results;
  write_sim_results_csv(res, results);
  std::istringstream lines(results.str());
  std::string line;
  std::size_t count = 0;
  std::getline(lines, line);
  REQUIRE(line == "scenario,design,iteration,p,p_star");
  while (std::getline(lines, line)) ++count;
  REQUIRE(count == 4 * 6);

  std::ostringstream shares;
  write_shares_header(res.design_names, shares);
  write_shares_row(res, best_design_shares(res), shares);
  REQUIRE(shares.str().find("Randomized") != std::string::npos);
  REQUIRE(shares.str().find("enum-1") != std::string::npos);

  std::ostringstream box;
  write_boxplot_csv({res}, box);
  REQUIRE(box.str().find("p_star") != std::string::npos);
}

TEST_CASE("format_double round trips") {
  SeededRng rng(606);
  for (int i = 0; i < 2000; ++i) {
    double v = (rng.next_open_double() - 0.5) * std::pow(10.0, double(i % 31) - 15.0);
    const std::string s = format_double(v);
    double back = 0.0;
    std::from_chars(s.data(), s.data() + s.size(), back);
    REQUIRE(back == v);
  }
  REQUIRE(format_double(0.25) == "0.25");
  REQUIRE(format_double(1.0) == "1");
}
