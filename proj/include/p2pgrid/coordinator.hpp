// End-to-end workflows: one-shot co-optimised settlement, the iterative
// match / OPF / charge loop, and Gamma sweeps over either.
#pragma once

#include "p2pgrid/conic.hpp"
#include "p2pgrid/match_peer.hpp"
#include "p2pgrid/network.hpp"
#include "p2pgrid/opf.hpp"
#include "p2pgrid/pricing.hpp"
#include "p2pgrid/trade.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace p2pgrid {

enum class Mode { system, peer };
std::string to_string(Mode mode);
Mode mode_from_string(const std::string& text);  // throws std::invalid_argument

struct Coordination {
  int max_rounds = 50;
  double epsilon = 50.0;             // $/MWh, charge on every matched trade after an infeasible OPF
  double charge_tolerance = 1e-4;    // $/MWh
};

struct ScenarioConfig {
  std::string name;
  std::filesystem::path case_path;
  CaseFormat case_format = CaseFormat::json;
  std::filesystem::path peers_path;  // empty: no peers
  Mode mode = Mode::system;
  std::optional<double> gamma;           // uniform override
  std::map<int, double> gamma_by_bus;    // applied after the uniform one
  std::vector<double> gamma_grid;        // sweeps only
  MatchConfig match;
  Coordination coordination;
  conic::Settings solver;

  void validate() const;  // throws std::invalid_argument
};

/// Relative paths resolve against `base_dir`.
ScenarioConfig scenario_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
ScenarioConfig load_scenario_file(const std::filesystem::path& path);
nlohmann::json scenario_to_json(const ScenarioConfig& cfg);

/// A directory holding case.json (and optionally peers.json), a directory of
/// MATPOWER tables, or a case file.
void resolve_case_location(ScenarioConfig& cfg, const std::filesystem::path& location);

/// Case and peers loaded with the scenario's Gamma overrides applied.
struct Scenario {
  ScenarioConfig config;
  NetworkCase net;
  PeerSet peers;
  std::string peers_text;  // raw peer file, part of the hash

  void apply_gamma(double gamma);
};

Scenario load_scenario(const ScenarioConfig& cfg);

/// 16 hex digits; covers the scenario settings, the loaded case (with Gamma)
/// and the peer file.
std::string scenario_hash(const Scenario& scenario);

struct RoundRow {
  int round = 0;
  int matched = 0;
  double volume = 0.0;  // MW
  bool feasible = false;
  double nuc = 0.0;
  double max_charge_delta = 0.0;
  long iterations = 0;
};

struct RunResult {
  Mode mode = Mode::system;
  std::string hash;
  double p2p_demand_mw = 0.0;  // sum Gamma_b D^p_b
  TradeGraph graph;            // matched flags, prices and charges
  std::optional<PriceBook> book;
  std::optional<OpfSolution> opf;
  std::optional<DlmpVector> dlmp;
  Settlement settlement;
  RevenueReport revenue;
  double welfare = 0.0;  // buyer utility - generation cost + O^Dist, $/h
  bool opf_feasible = false;
  int rounds = 0;
  bool converged = false;
  std::vector<RoundRow> rounds_trace;
  std::vector<TraceRow> match_trace;  // last round
  std::vector<std::string> warnings;
  double elapsed_s = 0.0;
};

/// One co-optimisation, DLMP recovery, midpoint settlement.
RunResult run_system_centric(const Scenario& scenario);
/// Match, fixed-injection OPF, charge update, repeated to a fixed point.
RunResult run_peer_centric(const Scenario& scenario);
RunResult run(const Scenario& scenario);

/// Bus injections implied by the matched trades.
std::map<int, BusInjection> matched_injections(const TradeGraph& graph, const PeerSet& peers);

struct SweepCell {
  double gamma = 0.0;
  Mode mode = Mode::system;
  bool ok = false;
  std::string error;
  std::optional<RunResult> result;
};

/// Every (Gamma, mode) cell; failures are recorded per cell. `threads` <= 0
/// uses the hardware concurrency.
std::vector<SweepCell> run_gamma_sweep(const Scenario& scenario, const std::vector<double>& grid,
                                       const std::vector<Mode>& modes, int threads = 0);

nlohmann::json summary_json(const RunResult& result, const Scenario& scenario);

/// trades.csv, buses.csv, lines.csv, revenue.json, summary.json and, for
/// peer runs, rounds.csv and match_trace.csv.
void write_run(const std::filesystem::path& dir, const RunResult& result, const Scenario& scenario);

/// One sub-directory per cell plus sweep.json.
void write_sweep(const std::filesystem::path& dir, const std::vector<SweepCell>& cells, const Scenario& scenario);

std::string cell_directory(double gamma, Mode mode);

}  // namespace p2pgrid
