#pragma once

// On-disk formats: field dumps, diagnostics CSV, run and sweep summaries.
//
// Layout under an output root:
//   <root>/<case>/<placement>/dt<value>/diagnostics.csv
//   <root>/<case>/<placement>/dt<value>/summary.json
//   <root>/<case>/<placement>/dt<value>/fields/<name>_t<time>.dat
//   <root>/<case>/convergence.csv, <root>/<case>/summary.json   (sweeps)

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "moistsw/experiments.hpp"

namespace moistsw {

struct FieldDump {
  Index nx = 0;
  Index ny = 0;
  double dx = 0;
  double dy = 0;
  double time = 0;
  std::string name;
  Field<double> values;
};

/// Header line "nx ny dx dy time name", then one grid row per line, 17 significant digits.
void write_field_dump(const std::filesystem::path& path, const Field<double>& f, const Grid<double>& g,
                      double time, const std::string& name);
FieldDump read_field_dump(const std::filesystem::path& path);

/// Writes fields/<name>_t<time>.dat for every field of the state.
void dump_state(const std::filesystem::path& fields_dir, const ModelState<double>& s, double time);

void write_diagnostics_csv(const std::filesystem::path& path, const std::vector<DiagnosticsRecord>& rows);
std::vector<DiagnosticsRecord> read_diagnostics_csv(const std::filesystem::path& path);

/// "dt800", "dt112.5"
std::string dt_dirname(double dt);
std::filesystem::path run_directory(const std::filesystem::path& root, TestCase c,
                                    const std::string& placement, double dt);

nlohmann::json to_json(const TestCaseSpec& spec);
nlohmann::json to_json(const SIQNConfig& cfg);
nlohmann::json to_json(const RunStats& stats);
nlohmann::json to_json(const ConvergenceTable& table);

/// diagnostics.csv, summary.json and fields/ (initial and final states) for one run.
void write_run(const std::filesystem::path& dir, const TestCaseSpec& spec, const CaseRun& run,
               const CaseResult& result, const nlohmann::json& extra = nlohmann::json::object());

void write_convergence_csv(const std::filesystem::path& path, const ConvergenceTable& table);
void write_sweep(const std::filesystem::path& case_dir, const TestCaseSpec& spec, const SweepSpec& sweep,
                 const ConvergenceTable& table);

}  // namespace moistsw
