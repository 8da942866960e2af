// p2pgrid: validate cases, solve the OPF, clear a market, sweep Gamma and
// rebuild report tables.
//
// Exit codes: 0 converged and optimal, 2 finished but flagged (not
// converged, infeasible final OPF, failed sweep cell), 1 error.

#include "p2pgrid/coordinator.hpp"
#include "p2pgrid/report.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

using namespace p2pgrid;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0, kError = 1, kFlagged = 2;

struct Options {
  std::string scenario_file;
  std::string case_location;
  std::string peers;
  std::string mode;
  std::optional<double> gamma;
  std::string gamma_grid;
  std::optional<double> trade_size, delta_rho, epsilon;
  std::optional<int> max_rounds;
  int threads = 0;
  std::string out;
  std::string format = "md";
};

/// "0,0.1,0.3" or "start:stop:step" (inclusive).
std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  if (text.find(':') != std::string::npos) {
    double a = 0, b = 0, step = 0;
    char c1 = 0, c2 = 0;
    std::istringstream in(text);
    if (!(in >> a >> c1 >> b >> c2 >> step) || c1 != ':' || c2 != ':' || !(step > 0.0) || b < a)
      throw std::invalid_argument("Gamma grid range must read start:stop:step, got '" + text + "'");
    const int n = static_cast<int>(std::floor((b - a) / step + 1e-9));
    for (int i = 0; i <= n; ++i) grid.push_back(std::round((a + i * step) * 1e9) / 1e9);
    return grid;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    const double g = std::stod(item, &used);
    if (used != item.size()) throw std::invalid_argument("bad Gamma grid value '" + item + "'");
    grid.push_back(g);
  }
  if (grid.empty()) throw std::invalid_argument("Gamma grid is empty");
  return grid;
}

ScenarioConfig make_config(const Options& o, bool sweep) {
  ScenarioConfig cfg;
  if (!o.scenario_file.empty()) cfg = load_scenario_file(o.scenario_file);
  if (!o.case_location.empty()) resolve_case_location(cfg, o.case_location);
  if (!o.peers.empty()) cfg.peers_path = o.peers;
  if (!sweep && !o.mode.empty()) cfg.mode = mode_from_string(o.mode);
  if (o.gamma) cfg.gamma = o.gamma;
  if (!o.gamma_grid.empty()) cfg.gamma_grid = parse_grid(o.gamma_grid);
  if (o.trade_size) cfg.match.trade_size = *o.trade_size;
  if (o.delta_rho) cfg.match.delta_rho = *o.delta_rho;
  if (o.epsilon) cfg.coordination.epsilon = *o.epsilon;
  if (o.max_rounds) cfg.coordination.max_rounds = *o.max_rounds;
  if (cfg.case_path.empty()) throw std::invalid_argument("no case given (use --case or --scenario)");
  cfg.validate();
  cfg.match.validate();
  return cfg;
}

void print_report(const Report& report, Format format) {
  std::cout << render(report.headline, format, report);
  if (format == Format::md) std::cout << "\n";
  std::cout << render(report.network, format, report);
}

int cmd_validate(const Options& o) {
  const auto sc = load_scenario(make_config(o, false));
  const auto& net = sc.net;
  json doc = {{"scenario", sc.config.name},
              {"hash", scenario_hash(sc)},
              {"buses", net.buses.size()},
              {"lines", net.lines.size()},
              {"root", net.root},
              {"demand_mw", net.total_demand_mw()},
              {"p2p_demand_mw", net.p2p_demand_mw()},
              {"sellers", sc.peers.sellers.size()},
              {"buyers", sc.peers.buyers.size()}};
  if (o.format == "json") {
    std::cout << doc.dump(2) << "\n";
  } else {
    for (const auto& [k, v] : doc.items()) {
      std::cout << k << ": ";
      if (v.is_string()) {
        std::cout << v.get<std::string>() << "\n";
      } else if (v.is_number_float()) {
        std::printf("%.6f\n", v.get<double>());
        std::fflush(stdout);
      } else {
        std::cout << v.dump() << "\n";
      }
    }
  }
  return kOk;
}

int cmd_solve_opf(const Options& o) {
  const auto sc = load_scenario(make_config(o, false));
  OpfInput in;
  in.net = &sc.net;
  const auto sol = solve_opf(build_opf(in), sc.config.solver);
  json doc = {{"scenario", sc.config.name}, {"hash", scenario_hash(sc)}, {"status", to_string(sol.status)}};
  int code = sol.optimal() ? kOk : kFlagged;
  if (sol.optimal()) {
    const auto dlmp = recover_dlmp(sol, sc.net);
    const auto exact = check_exactness(sol, sc.net);
    doc["objective"] = sol.objective;
    doc["root_import_mw"] = sol.p0;
    doc["max_soc_gap"] = exact.max_gap;
    doc["max_dlmp_residual"] = dlmp.max_relative_residual(sc.net);
    if (!exact.exact()) code = kFlagged;
    if (!o.out.empty()) {
      fs::create_directories(o.out);
      std::ofstream buses(fs::path(o.out) / "buses.csv", std::ios::binary), lines(fs::path(o.out) / "lines.csv", std::ios::binary);
      write_bus_csv(buses, sc.net, sol, dlmp);
      write_line_csv(lines, sc.net, sol, dlmp);
      std::ofstream(fs::path(o.out) / "opf.json", std::ios::binary) << doc.dump(2) << "\n";
    }
  }
  std::cout << doc.dump(2) << "\n";
  return code;
}

int cmd_clear(const Options& o) {
  const auto sc = load_scenario(make_config(o, false));
  const auto result = run(sc);
  const fs::path out = o.out.empty() ? fs::path("results") / (sc.config.name + "_" + to_string(sc.config.mode)) : fs::path(o.out);
  write_run(out, result, sc);
  const auto report = build_report(out);
  print_report(report, format_from_string(o.format));
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  std::cerr << "wrote " << out.string() << "\n";
  return result.converged && result.opf_feasible ? kOk : kFlagged;
}

int cmd_sweep(const Options& o) {
  const auto cfg = make_config(o, true);
  const auto sc = load_scenario(cfg);
  std::vector<Mode> modes;
  if (o.mode.empty() || o.mode == "both") {
    modes = {Mode::system, Mode::peer};
  } else {
    modes = {mode_from_string(o.mode)};
  }
  auto grid = cfg.gamma_grid;
  if (grid.empty()) grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  const auto cells = run_gamma_sweep(sc, grid, modes, o.threads);
  const fs::path out = o.out.empty() ? fs::path("results") / (sc.config.name + "_sweep") : fs::path(o.out);
  write_sweep(out, cells, sc);
  const auto report = build_report(out);
  print_report(report, format_from_string(o.format));
  std::cerr << "wrote " << out.string() << "\n";
  for (const auto& c : cells)
    if (!c.ok || !c.result->converged || !c.result->opf_feasible) return kFlagged;
  return kOk;
}

int cmd_report(const Options& o) {
  if (o.out.empty()) throw std::invalid_argument("report needs a results directory (--out DIR)");
  const auto format = format_from_string(o.format);
  const auto report = build_report(o.out);
  const auto files = write_report(o.out, report, format);
  print_report(report, format);
  for (const auto& f : files) std::cerr << "wrote " << (fs::path(o.out) / f).string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Peer-to-peer electricity trading on radial distribution feeders"};
  app.require_subcommand(1, 1);
  Options o;

  auto scenario_flags = [&](CLI::App* cmd) {
    cmd->add_option("--scenario", o.scenario_file, "scenario JSON file");
    cmd->add_option("--case", o.case_location, "case directory or file");
    cmd->add_option("--peers", o.peers, "peer population JSON");
    cmd->add_option("--gamma", o.gamma, "uniform P2P penetration level")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--trade-size", o.trade_size, "standard trade size P (MW)");
    cmd->add_option("--delta-rho", o.delta_rho, "price step ($/MWh)");
    cmd->add_option("--epsilon", o.epsilon, "charge after an infeasible OPF ($/MWh)");
    cmd->add_option("--max-rounds", o.max_rounds, "coordination round limit");
    cmd->add_option("--format", o.format, "stdout format")->check(CLI::IsMember({"csv", "json", "md"}));
  };

  auto* validate = app.add_subcommand("validate", "load and check a case and its peers");
  scenario_flags(validate);
  auto* opf = app.add_subcommand("solve-opf", "OPF without peer trades");
  scenario_flags(opf);
  opf->add_option("--out", o.out, "directory for buses.csv, lines.csv and opf.json");
  auto* clear = app.add_subcommand("clear", "clear one market");
  scenario_flags(clear);
  clear->add_option("--mode", o.mode, "system or peer")->check(CLI::IsMember({"system", "peer"}));
  clear->add_option("--out", o.out, "results directory");
  auto* sweep = app.add_subcommand("sweep", "sweep the penetration level");
  scenario_flags(sweep);
  sweep->add_option("--mode", o.mode, "system, peer or both")->check(CLI::IsMember({"system", "peer", "both"}));
  sweep->add_option("--gamma-grid", o.gamma_grid, "comma list or start:stop:step");
  sweep->add_option("--threads", o.threads, "worker threads (0: all cores)");
  sweep->add_option("--out", o.out, "results directory");
  auto* report = app.add_subcommand("report", "rebuild tables from a results directory");
  report->add_option("--out", o.out, "results directory")->required();
  report->add_option("--format", o.format, "table format")->check(CLI::IsMember({"csv", "json", "md"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kError;
  }

  try {
    if (*validate) return cmd_validate(o);
    if (*opf) return cmd_solve_opf(o);
    if (*clear) return cmd_clear(o);
    if (*sweep) return cmd_sweep(o);
    if (*report) return cmd_report(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
  return kError;
}
