// Tables and plot-ready series rebuilt from a results directory written by
// write_run or write_sweep.
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace p2pgrid {

class MissingArtifacts : public std::runtime_error {
 public:
  MissingArtifacts(const std::filesystem::path& dir, std::vector<std::string> expected);
  std::vector<std::string> expected;
};

enum class Format { csv, json, md };
Format format_from_string(const std::string& text);  // throws std::invalid_argument
std::string extension(Format format);

struct Table {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

struct Report {
  std::string kind;  // "run" or "sweep"
  std::string scenario;
  std::string hash;
  Table headline;  // settlement row for a run, Gamma columns for a sweep
  Table network;   // loading, voltage and DLMP summary per run or cell
  Table loading;   // line, loading_pct (per cell for sweeps)
  Table voltage;   // bus, v_mag_pu (per cell for sweeps)
  std::vector<std::string> notes;
};

/// Throws MissingArtifacts naming the files that were expected.
Report build_report(const std::filesystem::path& dir);

/// CSV output starts with a "# scenario ... hash ..." provenance line.
std::string render(const Table& table, Format format, const Report& report);

/// Writes one file per table into `dir` and returns their names in order.
std::vector<std::string> write_report(const std::filesystem::path& dir, const Report& report, Format format);

}  // namespace p2pgrid
