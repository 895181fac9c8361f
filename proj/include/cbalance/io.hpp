#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cbalance/approx.hpp"
#include "cbalance/core.hpp"
#include "cbalance/errors.hpp"
#include "cbalance/pseudo_p.hpp"
#include "cbalance/sampling.hpp"
#include "cbalance/simulation.hpp"

namespace cbal {

static_assert(std::endian::native == std::endian::little,
              "reference cache files assume a little-endian host");

// ---------------------------------------------------------------------------
// Formatting
// ---------------------------------------------------------------------------

/// Shortest decimal form that round-trips the double exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Trim to the shortest representation that still parses back equal.
  for (int prec = 1; prec < 17; ++prec) {
    char shorter[40];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
    double back = 0.0;
    std::from_chars(shorter, shorter + std::strlen(shorter), back);
    if (back == v) return shorter;
  }
  return buf;
}

// ---------------------------------------------------------------------------
// CSV primitives
// ---------------------------------------------------------------------------

namespace csv {

/// Splits one CSV record. Supports RFC-4180 quoting; `line_no` is used in
/// diagnostics only.
inline std::vector<std::string> split_record(const std::string& line, std::size_t line_no,
                                             const std::string& source) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"' && cur.empty()) {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted)
    throw parse_error(source + ":" + std::to_string(line_no) + ": unterminated quote");
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& field, std::size_t line_no, std::size_t col_no,
                           const std::string& source) {
  const std::string t = trim(field);
  double value = 0.0;
  const auto* begin = t.data();
  const auto* end = t.data() + t.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end)
    throw parse_error(source + ":" + std::to_string(line_no) + ": column " +
                      std::to_string(col_no) + ": not a number: '" + field + "'");
  return value;
}

}  // namespace csv

// ---------------------------------------------------------------------------
// Covariate and split files
// ---------------------------------------------------------------------------

/// Reads a covariate table: header of `id,<covariate names...>`, then one
/// row per unit. Returns a validated Population (so zero-variance columns
/// are rejected here, by name).
inline Population read_covariates_csv(std::istream& in, const std::string& source = "covariates") {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line))
    throw parse_error(source + ": empty file");
  ++line_no;
  const auto header = csv::split_record(line, line_no, source);
  if (header.size() < 2)
    throw parse_error(source + ":1: header needs a unit-id column and at least one covariate");
  std::vector<std::string> names(header.begin() + 1, header.end());
  const std::size_t j = names.size();

  std::vector<std::string> ids;
  std::vector<double> row_major;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
    const auto fields = csv::split_record(line, line_no, source);
    if (fields.size() != j + 1)
      throw parse_error(source + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(j + 1) + " fields, got " + std::to_string(fields.size()));
    ids.push_back(csv::trim(fields[0]));
    for (std::size_t c = 1; c < fields.size(); ++c)
      row_major.push_back(csv::parse_double(fields[c], line_no, c + 1, source));
  }
  const std::size_t k = ids.size();
  if (k < 2) throw validation_error(source + ": needs at least 2 unit rows");
  {
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto [it, inserted] = seen.emplace(ids[i], i);
      if (!inserted)
        throw validation_error(source + ": duplicate unit id '" + ids[i] + "' (rows " +
                               std::to_string(it->second + 2) + " and " +
                               std::to_string(i + 2) + ")");
    }
  }
  std::vector<double> col_major(k * j);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t c = 0; c < j; ++c) col_major[c * k + i] = row_major[i * j + c];
  }
  return Population(std::move(col_major), k, std::move(names), std::move(ids));
}

inline Population read_covariates_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error(path + ": cannot open file");
  return read_covariates_csv(in, path);
}

inline void write_covariates_csv(const Population& pop, std::ostream& out) {
  out << "unit_id";
  for (const auto& n : pop.covariate_names()) out << ',' << csv::escape(n);
  out << '\n';
  for (std::size_t i = 0; i < pop.size(); ++i) {
    out << csv::escape(pop.unit_ids()[i]);
    for (std::size_t j = 0; j < pop.dims(); ++j)
      out << ',' << format_double(pop.column(j)[i]);
    out << '\n';
  }
}

/// Reads an observed split: header, then `unit_id,arm` rows with arm M or
/// N. Units not listed are population members outside the sample.
inline SplitSample read_split_csv(std::istream& in, const Population& pop,
                                  const std::string& source = "split") {
  std::unordered_map<std::string, std::int32_t> index_of;
  for (std::size_t i = 0; i < pop.size(); ++i)
    index_of.emplace(pop.unit_ids()[i], static_cast<std::int32_t>(i));

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw parse_error(source + ": empty file");
  ++line_no;
  std::vector<std::int32_t> m, n;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
    const auto fields = csv::split_record(line, line_no, source);
    if (fields.size() != 2)
      throw parse_error(source + ":" + std::to_string(line_no) +
                        ": expected 2 fields (unit_id,arm)");
    const std::string id = csv::trim(fields[0]);
    const std::string arm = csv::trim(fields[1]);
    const auto it = index_of.find(id);
    if (it == index_of.end())
      throw validation_error(source + ":" + std::to_string(line_no) + ": unknown unit id '" +
                             id + "'");
    if (arm == "M") {
      m.push_back(it->second);
    } else if (arm == "N") {
      n.push_back(it->second);
    } else {
      throw parse_error(source + ":" + std::to_string(line_no) + ": arm must be M or N, got '" +
                        arm + "'");
    }
  }
  if (m.empty() || n.empty())
    throw validation_error(source + ": both arms must be nonempty");
  try {
    return SplitSample(std::move(m), std::move(n));
  } catch (const validation_error& e) {
    throw validation_error(source + ": " + e.what());
  }
}

inline SplitSample read_split_file(const std::string& path, const Population& pop) {
  std::ifstream in(path);
  if (!in) throw parse_error(path + ": cannot open file");
  return read_split_csv(in, pop, path);
}

// ---------------------------------------------------------------------------
// Reference cache files
// ---------------------------------------------------------------------------

inline constexpr char kReferenceMagic[8] = {'C', 'B', 'A', 'L', 'R', 'E', 'F', '1'};

inline void write_reference_file(const ReferenceSet& ref, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw parse_error(path + ": cannot open file for writing");
  nlohmann::json header = {
      {"version", 1},
      {"scheme", ref.provenance.scheme},
      {"m", ref.provenance.m_size},
      {"n", ref.provenance.n_size},
      {"mode", ref.provenance.mode},
      {"rounds", ref.provenance.rounds},
      {"seed", ref.provenance.seed},
      {"population_hash", ref.provenance.population_hash},
      {"rows", ref.rows},
      {"j", ref.j},
  };
  const std::string header_str = header.dump();
  const auto header_len = static_cast<std::uint32_t>(header_str.size());
  out.write(kReferenceMagic, sizeof(kReferenceMagic));
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  out.write(reinterpret_cast<const char*>(ref.smds.data()),
            static_cast<std::streamsize>(ref.smds.size() * sizeof(double)));
  if (!out) throw parse_error(path + ": write failed");
}

inline ReferenceSet read_reference_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error(path + ": cannot open file");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kReferenceMagic, sizeof(magic)) != 0)
    throw parse_error(path + ": not a reference cache file");
  std::uint32_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || header_len == 0 || header_len > (1u << 20))
    throw parse_error(path + ": corrupt header length");
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), header_len);
  if (!in) throw parse_error(path + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path + ": bad header json: " + e.what());
  }
  ReferenceSet ref;
  try {
    ref.rows = header.at("rows").get<std::size_t>();
    ref.j = header.at("j").get<std::size_t>();
    ref.provenance.scheme = header.at("scheme").get<std::string>();
    ref.provenance.m_size = header.at("m").get<std::size_t>();
    ref.provenance.n_size = header.at("n").get<std::size_t>();
    ref.provenance.mode = header.at("mode").get<std::string>();
    ref.provenance.rounds = header.at("rounds").get<std::uint64_t>();
    ref.provenance.seed = header.at("seed").get<std::uint64_t>();
    ref.provenance.population_hash = header.at("population_hash").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path + ": header missing fields: " + e.what());
  }
  ref.smds.resize(ref.rows * ref.j);
  in.read(reinterpret_cast<char*>(ref.smds.data()),
          static_cast<std::streamsize>(ref.smds.size() * sizeof(double)));
  if (!in) throw parse_error(path + ": truncated payload");
  return ref;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline nlohmann::json report_json(const BalanceReport& report,
                                  const std::vector<std::string>& covariate_names) {
  nlohmann::json smds = nlohmann::json::array();
  for (std::size_t j = 0; j < report.smds.size(); ++j) {
    smds.push_back({{"name", covariate_names[j]}, {"delta", report.smds.deltas[j]}});
  }
  const FiveNumberSummary fs = five_number_summary(report.smds.deltas);
  nlohmann::json r_profile = nlohmann::json::array();
  for (std::size_t i = 0; i < report.grid.size(); ++i) {
    r_profile.push_back({report.grid[i], report.r_profile[i]});
  }
  return {
      {"p", report.p},
      {"p_star", report.p_star},
      {"p_star_percent", report.p_star * 100.0},
      {"argmin_delta", report.argmin_delta},
      {"smds", smds},
      {"smd_summary",
       {{"min", fs.min}, {"q1", fs.q1}, {"median", fs.median}, {"q3", fs.q3}, {"max", fs.max}}},
      {"r_profile", r_profile},
      {"grid",
       {{"step", report.grid_step},
        {"max", report.grid.empty() ? 0.0 : report.grid.back()},
        {"points", report.grid.size()},
        {"covers_reference", report.grid_covers_reference}}},
      {"reference",
       {{"scheme", report.reference.scheme},
        {"m", report.reference.m_size},
        {"n", report.reference.n_size},
        {"mode", report.reference.mode},
        {"rounds", report.reference.rounds},
        {"seed", report.reference.seed},
        {"rows", report.reference_rows},
        {"population_hash", report.reference.population_hash}}},
  };
}

/// One flat CSV row: scalar fields first, then one smd:<name> column per
/// covariate.
inline void write_report_csv(const BalanceReport& report,
                             const std::vector<std::string>& covariate_names,
                             std::ostream& out) {
  out << "p,p_star,argmin_delta,scheme,m,n,mode,rounds,seed,reference_rows,"
         "grid_step,grid_max,grid_covers_reference";
  for (const auto& name : covariate_names) out << ',' << csv::escape("smd:" + name);
  out << '\n';
  out << format_double(report.p) << ',' << format_double(report.p_star) << ','
      << format_double(report.argmin_delta) << ',' << report.reference.scheme << ','
      << report.reference.m_size << ',' << report.reference.n_size << ','
      << report.reference.mode << ',' << report.reference.rounds << ','
      << report.reference.seed << ',' << report.reference_rows << ','
      << format_double(report.grid_step) << ','
      << format_double(report.grid.empty() ? 0.0 : report.grid.back()) << ','
      << (report.grid_covers_reference ? 1 : 0);
  for (double d : report.smds.deltas) out << ',' << format_double(d);
  out << '\n';
}

inline void write_pgh_csv(std::span<const double> pgh, std::ostream& out) {
  out << "p_gh\n";
  for (double v : pgh) out << format_double(v) << '\n';
}

inline void write_table1_csv(std::ostream& out) {
  out << "delta,g,m,p_dim,p_bal_J10_r1,p_bal_J20_r2\n";
  for (const auto& row : table1()) {
    out << format_double(row.delta) << ',' << row.g << ',' << row.h << ','
        << format_double(row.p_dim) << ',' << format_double(row.p_bal_j10_r1) << ','
        << format_double(row.p_bal_j20_r2) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Simulation outputs
// ---------------------------------------------------------------------------

inline void write_sim_results_csv(const SimulationResult& res, std::ostream& out,
                                  bool header = true) {
  if (header) out << "scenario,design,iteration,p,p_star\n";
  for (std::size_t it = 0; it < res.iterations; ++it) {
    for (std::size_t d = 0; d < res.design_names.size(); ++d) {
      out << csv::escape(res.scenario.name) << ',' << res.design_names[d] << ',' << it << ','
          << format_double(res.at_p(it, d)) << ',' << format_double(res.at_p_star(it, d))
          << '\n';
    }
  }
}

inline void write_shares_header(const std::vector<std::string>& designs, std::ostream& out) {
  out << "scenario,k,bias";
  for (const auto& d : designs) out << ',' << d;
  out << '\n';
}

inline void write_shares_row(const SimulationResult& res, const std::vector<double>& shares,
                             std::ostream& out) {
  out << csv::escape(res.scenario.name) << ',' << res.scenario.k << ','
      << format_double(res.scenario.bias);
  for (double s : shares) out << ',' << format_double(s);
  out << '\n';
}

inline void write_boxplot_csv(const std::vector<SimulationResult>& runs, std::ostream& out) {
  out << "scenario,design,metric,min,q1,median,q3,max,outliers\n";
  for (const auto& res : runs) {
    const BoxplotSummary box = boxplot_summary(res);
    auto emit = [&](const std::string& metric, const std::vector<FiveNumberSummary>& rows) {
      for (std::size_t d = 0; d < res.design_names.size(); ++d) {
        const auto& s = rows[d];
        out << csv::escape(res.scenario.name) << ',' << res.design_names[d] << ',' << metric
            << ',' << format_double(s.min) << ',' << format_double(s.q1) << ','
            << format_double(s.median) << ',' << format_double(s.q3) << ','
            << format_double(s.max) << ',';
        for (std::size_t i = 0; i < s.outliers.size(); ++i) {
          if (i > 0) out << ';';
          out << format_double(s.outliers[i]);
        }
        out << '\n';
      }
    };
    emit("p", box.p);
    emit("p_star", box.p_star);
  }
}

// ---------------------------------------------------------------------------
// Simulation config files
// ---------------------------------------------------------------------------

struct SimulationConfig {
  std::vector<Scenario> scenarios;
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;
};

/// JSON config schema: {"scenarios": [<preset name> | {name,k,m,n,bias,
/// j?,mode,rounds?,partial_first_half?}], "iterations": int, "seed": int,
/// "grid_step"?: real, "grid_max"?: real, "rounds"?: int (override)}.
inline SimulationConfig parse_simulation_config(const nlohmann::json& cfg) {
  SimulationConfig out;
  if (!cfg.is_object()) throw validation_error("config: top level must be an object");
  if (!cfg.contains("scenarios") || !cfg["scenarios"].is_array() || cfg["scenarios"].empty())
    throw validation_error("config: 'scenarios' must be a nonempty array");
  GridSpec grid;
  if (cfg.contains("grid_step")) grid.step = cfg["grid_step"].get<double>();
  if (cfg.contains("grid_max")) grid.min_max = cfg["grid_max"].get<double>();
  for (const auto& item : cfg["scenarios"]) {
    Scenario sc;
    if (item.is_string()) {
      sc = scenario_preset(item.get<std::string>());
    } else if (item.is_object()) {
      auto need = [&](const char* key) -> const nlohmann::json& {
        if (!item.contains(key))
          throw validation_error(std::string("config: scenario missing key '") + key + "'");
        return item[key];
      };
      sc.name = item.value("name", "custom");
      sc.k = need("k").get<std::size_t>();
      sc.m_size = need("m").get<std::size_t>();
      sc.n_size = need("n").get<std::size_t>();
      sc.bias = need("bias").get<double>();
      sc.j_dims = item.value("j", 10);
      const std::string mode = need("mode").get<std::string>();
      if (mode == "enumerate") {
        sc.mode = ReferenceMode::enumerate();
      } else if (mode == "mc" || mode == "monte_carlo") {
        sc.mode = ReferenceMode::monte(item.value("rounds", 10000));
      } else {
        throw validation_error("config: mode must be 'enumerate' or 'mc', got '" + mode + "'");
      }
      sc.partial_first_half = item.value("partial_first_half", 1);
    } else {
      throw validation_error("config: scenario entries must be preset names or objects");
    }
    if (cfg.contains("rounds") && sc.mode.monte_carlo)
      sc.mode = ReferenceMode::monte(cfg["rounds"].get<std::uint64_t>());
    sc.grid = grid;
    sc.validate();
    out.scenarios.push_back(std::move(sc));
  }
  if (cfg.contains("iterations")) out.iterations = cfg["iterations"].get<std::size_t>();
  if (out.iterations < 1) throw validation_error("config: iterations must be >= 1");
  if (cfg.contains("seed")) out.seed = cfg["seed"].get<std::uint64_t>();
  return out;
}

inline SimulationConfig read_simulation_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error(path + ": cannot open file");
  nlohmann::json cfg;
  try {
    in >> cfg;
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path + ": " + e.what());
  }
  return parse_simulation_config(cfg);
}

}  // namespace cbal
