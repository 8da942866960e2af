#include "p2pgrid/coordinator.hpp"

#include "p2pgrid/match_system.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace p2pgrid {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Mode mode) { return mode == Mode::system ? "system" : "peer"; }

Mode mode_from_string(const std::string& text) {
  if (text == "system") return Mode::system;
  if (text == "peer") return Mode::peer;
  throw std::invalid_argument("mode must be 'system' or 'peer', got '" + text + "'");
}

void ScenarioConfig::validate() const {
  if (case_path.empty()) throw std::invalid_argument("scenario has no case");
  if (coordination.max_rounds < 1) throw std::invalid_argument("max rounds must be at least 1");
  if (!(coordination.epsilon > 0.0)) throw std::invalid_argument("infeasibility penalty epsilon must be positive");
  if (!(coordination.charge_tolerance > 0.0)) throw std::invalid_argument("charge tolerance must be positive");
  auto in_unit = [](double g) { return g >= 0.0 && g <= 1.0; };
  if (gamma && !in_unit(*gamma)) throw std::invalid_argument("Gamma must lie in [0,1]");
  for (const auto& [bus, g] : gamma_by_bus)
    if (!in_unit(g)) throw std::invalid_argument("Gamma of bus " + std::to_string(bus) + " must lie in [0,1]");
  for (double g : gamma_grid)
    if (!in_unit(g)) throw std::invalid_argument("Gamma grid values must lie in [0,1]");
  match.validate();
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void resolve_case_location(ScenarioConfig& cfg, const fs::path& location) {
  if (fs::is_directory(location)) {
    if (fs::exists(location / "case.json")) {
      cfg.case_path = location / "case.json";
      cfg.case_format = CaseFormat::json;
    } else if (fs::exists(location / "bus.csv") && fs::exists(location / "branch.csv")) {
      cfg.case_path = location;
      cfg.case_format = CaseFormat::matpower_csv;
    } else {
      throw ParseError(location.string() + ": expected case.json or bus.csv + branch.csv");
    }
    if (cfg.peers_path.empty() && fs::exists(location / "peers.json")) cfg.peers_path = location / "peers.json";
  } else if (fs::exists(location)) {
    cfg.case_path = location;
    cfg.case_format = CaseFormat::json;
  } else {
    throw ParseError("case not found: " + location.string());
  }
  if (cfg.name.empty()) cfg.name = (fs::is_directory(location) ? location : location.parent_path()).filename().string();
}

ScenarioConfig scenario_from_json(const json& doc, const fs::path& base_dir) {
  ScenarioConfig cfg;
  try {
    cfg.name = doc.value("name", std::string());
    if (doc.contains("peers")) cfg.peers_path = resolve(base_dir, doc.at("peers").get<std::string>());
    if (!doc.contains("case")) throw ParseError("scenario: missing field 'case'");
    resolve_case_location(cfg, resolve(base_dir, doc.at("case").get<std::string>()));
    if (doc.contains("case_format")) {
      const auto f = doc.at("case_format").get<std::string>();
      if (f == "json") cfg.case_format = CaseFormat::json;
      else if (f == "matpower_csv") cfg.case_format = CaseFormat::matpower_csv;
      else throw ParseError("scenario: case_format must be 'json' or 'matpower_csv'");
    }
    if (doc.contains("mode")) cfg.mode = mode_from_string(doc.at("mode").get<std::string>());
    if (doc.contains("gamma")) {
      const auto& g = doc.at("gamma");
      if (g.is_number()) {
        cfg.gamma = g.get<double>();
      } else {
        for (const auto& [bus, value] : g.items()) cfg.gamma_by_bus[std::stoi(bus)] = value.get<double>();
      }
    }
    if (doc.contains("gamma_by_bus"))
      for (const auto& [bus, value] : doc.at("gamma_by_bus").items()) cfg.gamma_by_bus[std::stoi(bus)] = value.get<double>();
    if (doc.contains("gamma_grid")) cfg.gamma_grid = doc.at("gamma_grid").get<std::vector<double>>();
    if (doc.contains("match")) {
      const auto& m = doc.at("match");
      cfg.match.trade_size = m.value("trade_size", cfg.match.trade_size);
      cfg.match.delta_rho = m.value("delta_rho", cfg.match.delta_rho);
      cfg.match.max_iterations = m.value("max_iterations", cfg.match.max_iterations);
      cfg.match.tolerance = m.value("tolerance", cfg.match.tolerance);
    }
    if (doc.contains("coordination")) {
      const auto& c = doc.at("coordination");
      cfg.coordination.max_rounds = c.value("max_rounds", cfg.coordination.max_rounds);
      cfg.coordination.epsilon = c.value("epsilon", cfg.coordination.epsilon);
      cfg.coordination.charge_tolerance = c.value("charge_tolerance", cfg.coordination.charge_tolerance);
    }
    if (doc.contains("solver")) {
      const auto& s = doc.at("solver");
      cfg.solver.feastol = s.value("feastol", cfg.solver.feastol);
      cfg.solver.abstol = s.value("abstol", cfg.solver.abstol);
      cfg.solver.reltol = s.value("reltol", cfg.solver.reltol);
      cfg.solver.max_iterations = s.value("max_iterations", cfg.solver.max_iterations);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("scenario: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ScenarioConfig load_scenario_file(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return scenario_from_json(doc, path.parent_path());
}

json scenario_to_json(const ScenarioConfig& cfg) {
  json doc;
  doc["name"] = cfg.name;
  doc["case"] = cfg.case_path.generic_string();
  doc["case_format"] = cfg.case_format == CaseFormat::json ? "json" : "matpower_csv";
  doc["peers"] = cfg.peers_path.generic_string();
  doc["mode"] = to_string(cfg.mode);
  if (cfg.gamma) doc["gamma"] = *cfg.gamma;
  if (!cfg.gamma_by_bus.empty()) {
    json by_bus = json::object();
    for (const auto& [bus, g] : cfg.gamma_by_bus) by_bus[std::to_string(bus)] = g;
    doc["gamma_by_bus"] = by_bus;
  }
  if (!cfg.gamma_grid.empty()) doc["gamma_grid"] = cfg.gamma_grid;
  doc["match"] = {{"trade_size", cfg.match.trade_size},
                  {"delta_rho", cfg.match.delta_rho},
                  {"max_iterations", cfg.match.max_iterations},
                  {"tolerance", cfg.match.tolerance}};
  doc["coordination"] = {{"max_rounds", cfg.coordination.max_rounds},
                         {"epsilon", cfg.coordination.epsilon},
                         {"charge_tolerance", cfg.coordination.charge_tolerance}};
  doc["solver"] = {{"feastol", cfg.solver.feastol},
                   {"abstol", cfg.solver.abstol},
                   {"reltol", cfg.solver.reltol},
                   {"max_iterations", cfg.solver.max_iterations}};
  return doc;
}

void Scenario::apply_gamma(double gamma) {
  net.set_gamma(gamma);
  peers.refresh_from_case(net);
}

Scenario load_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  Scenario sc;
  sc.config = cfg;
  sc.net = load_case(cfg.case_path, cfg.case_format);
  if (cfg.gamma) sc.net.set_gamma(*cfg.gamma);
  for (const auto& [bus, g] : cfg.gamma_by_bus) {
    if (!sc.net.has_bus(bus)) throw ValidationError("Gamma override names unknown bus " + std::to_string(bus));
    sc.net.buses[sc.net.bus_index(bus)].gamma = g;
  }
  if (!cfg.peers_path.empty()) {
    sc.peers_text = read_text(cfg.peers_path);
    sc.peers = load_peers(cfg.peers_path, sc.net);
  }
  return sc;
}

std::string scenario_hash(const Scenario& scenario) {
  json doc = scenario_to_json(scenario.config);
  doc.erase("case");
  doc.erase("peers");
  doc.erase("name");
  const std::string text = doc.dump() + case_to_json(scenario.net).dump() + scenario.peers_text;
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::map<int, BusInjection> matched_injections(const TradeGraph& graph, const PeerSet& peers) {
  std::map<int, BusInjection> out;
  for (const auto& t : graph.trades) {
    if (!t.matched) continue;
    out[peers.sellers[t.seller].bus].sold_mw += t.quantity;
    out[peers.buyers[t.buyer].bus].bought_mw += t.quantity;
  }
  return out;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void finish(RunResult& out, const Scenario& sc) {
  out.hash = scenario_hash(sc);
  out.p2p_demand_mw = sc.net.p2p_demand_mw();
  out.settlement = settle(out.graph, sc.peers);
  out.revenue = utility_revenue(sc.net, out.graph, Architecture::mixed);
  out.welfare = out.opf && out.opf->optimal() ? out.settlement.welfare() + out.opf->o_dist
                                              : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

RunResult run_system_centric(const Scenario& sc) {
  const auto t0 = std::chrono::steady_clock::now();
  RunResult out;
  out.mode = Mode::system;
  auto clearing = clear_system_centric(build_trade_graph_simple(sc.peers), sc.peers, &sc.net, true, sc.config.solver);
  out.dlmp = recover_dlmp(*clearing.opf, sc.net);
  settle_system_centric(clearing.graph, *out.dlmp, sc.net, sc.peers);
  out.graph = std::move(clearing.graph);
  out.opf = std::move(clearing.opf);
  if (out.opf->reduced_accuracy) out.warnings.push_back("OPF solved to reduced accuracy");
  out.opf_feasible = true;
  out.rounds = 1;
  out.converged = true;
  finish(out, sc);
  out.elapsed_s = seconds_since(t0);
  return out;
}

RunResult run_peer_centric(const Scenario& sc) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& cfg = sc.config;
  RunResult out;
  out.mode = Mode::peer;
  std::string warning;
  TradeGraph graph = build_trade_graph_parallel(sc.peers, cfg.match, &warning);
  if (!warning.empty()) out.warnings.push_back(warning);
  const std::size_t n = graph.size();

  std::optional<PriceBook> warm;
  std::vector<char> previous;
  bool have_previous = false;
  std::vector<std::string> match_warnings;
  for (int round = 1; round <= cfg.coordination.max_rounds; ++round) {
    PeerMatch match = run_price_adjustment(graph, sc.peers, cfg.match, warm ? &*warm : nullptr);
    match_warnings = match.warnings;

    OpfInput in;
    in.net = &sc.net;
    in.mode = OpfMode::fixed_injections;
    in.injections = matched_injections(match.graph, sc.peers);
    OpfSolution sol = solve_opf(build_opf(in), cfg.solver);
    if (sol.status == OpfStatus::numeric_failure)
      throw std::runtime_error("OPF failed in coordination round " + std::to_string(round) + ": " + sol.message);

    RoundRow row;
    row.round = round;
    row.feasible = sol.optimal();
    row.iterations = match.iterations;
    std::vector<double> charge(n);
    for (std::size_t k = 0; k < n; ++k) charge[k] = match.graph.trades[k].charge;
    if (sol.optimal()) {
      DlmpVector dlmp = recover_dlmp(sol, sc.net);
      // DLMPs price every seller-buyer pair, so unmatched edges follow too.
      for (std::size_t k = 0; k < n; ++k) charge[k] = trade_charge(dlmp, sc.net, sc.peers, match.graph.trades[k]);
      out.dlmp = std::move(dlmp);
      out.opf = std::move(sol);
    } else {
      for (std::size_t k = 0; k < n; ++k)
        if (match.graph.trades[k].matched) charge[k] = cfg.coordination.epsilon;
      out.dlmp.reset();
      out.opf.reset();
    }

    std::vector<char> current(n);
    for (std::size_t k = 0; k < n; ++k) {
      current[k] = match.graph.trades[k].matched;
      row.max_charge_delta = std::max(row.max_charge_delta, std::abs(charge[k] - match.graph.trades[k].charge));
      match.graph.trades[k].charge = charge[k];
    }
    out.graph = match.graph;
    row.matched = static_cast<int>(out.graph.matched().size());
    row.volume = out.graph.matched_volume();
    row.nuc = network_usage_charge(out.graph);
    out.rounds_trace.push_back(row);
    out.match_trace = std::move(match.trace);
    out.book = match.book;
    out.rounds = round;
    out.opf_feasible = row.feasible;

    if (have_previous && current == previous && row.max_charge_delta < cfg.coordination.charge_tolerance) {
      out.converged = true;
      break;
    }
    previous = std::move(current);
    have_previous = true;
    graph = match.graph;
    // Settled trades reopen at their agreed price; the rest start over.
    warm = match.book;
    for (std::size_t k = 0; k < n; ++k)
      if (!warm->settled[k]) warm->tick[k] = 0;
  }
  for (auto& w : match_warnings) out.warnings.push_back(w);
  if (!out.converged)
    out.warnings.push_back("coordination stopped after " + std::to_string(out.rounds) +
                           " rounds without a fixed point");
  if (!out.opf_feasible) out.warnings.push_back("final OPF infeasible; charges are the penalty");
  finish(out, sc);
  out.elapsed_s = seconds_since(t0);
  return out;
}

RunResult run(const Scenario& scenario) {
  return scenario.config.mode == Mode::system ? run_system_centric(scenario) : run_peer_centric(scenario);
}

std::vector<SweepCell> run_gamma_sweep(const Scenario& scenario, const std::vector<double>& grid,
                                       const std::vector<Mode>& modes, int threads) {
  for (double g : grid)
    if (!(g >= 0.0 && g <= 1.0)) throw std::invalid_argument("Gamma grid values must lie in [0,1]");
  std::vector<SweepCell> cells;
  for (double g : grid)
    for (Mode m : modes) {
      SweepCell c;
      c.gamma = g;
      c.mode = m;
      cells.push_back(c);
    }
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min<int>(threads, static_cast<int>(cells.size()));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      SweepCell& cell = cells[i];
      try {
        Scenario sc = scenario;
        sc.config.mode = cell.mode;
        sc.config.gamma = cell.gamma;
        sc.config.gamma_by_bus.clear();
        sc.config.gamma_grid.clear();
        sc.apply_gamma(cell.gamma);
        cell.result = run(sc);
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return cells;
}

// ---------------------------------------------------------------------------
// Artifacts

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::optional<double> uniform_gamma(const NetworkCase& net) {
  if (net.buses.empty()) return 0.0;
  const double g = net.buses.front().gamma;
  for (const auto& b : net.buses)
    if (b.gamma != g) return std::nullopt;
  return g;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

json summary_json(const RunResult& r, const Scenario& sc) {
  json s;
  s["scenario"] = sc.config.name;
  s["hash"] = r.hash;
  s["mode"] = to_string(r.mode);
  const auto g = uniform_gamma(sc.net);
  s["gamma"] = g ? json(*g) : json(nullptr);
  s["p2p_demand_mw"] = r.p2p_demand_mw;
  s["rounds"] = r.rounds;
  s["converged"] = r.converged;
  s["opf_feasible"] = r.opf_feasible;
  const auto& st = r.settlement;
  s["settlement"] = {{"consumer_payments", st.consumer_payments},
                     {"producer_revenues", st.producer_revenues},
                     {"nuc", st.nuc},
                     {"generation_cost", st.generation_cost},
                     {"buyer_utility", st.buyer_utility},
                     {"volume_mw", st.volume},
                     {"matched_trades", st.matched_trades},
                     {"average_charge", st.average_charge ? json(*st.average_charge) : json(nullptr)}};
  s["revenue"] = {{"architecture", to_string(r.revenue.architecture)},
                  {"total", r.revenue.total},
                  {"tariff_income", r.revenue.tariff_income},
                  {"nuc_income", r.revenue.nuc_income}};
  s["welfare"] = number_or_null(r.welfare);
  if (r.opf) {
    const auto loading = line_loading_percent(*r.opf, sc.net);
    double vmin = 1e9, vmax = 0.0;
    for (double v : r.opf->v) {
      vmin = std::min(vmin, std::sqrt(std::max(0.0, v)));
      vmax = std::max(vmax, std::sqrt(std::max(0.0, v)));
    }
    s["network"] = {
        {"root_import_mw", r.opf->p0},
        {"o_dist", r.opf->o_dist},
        {"mean_loading_pct",
         loading.empty() ? 0.0 : std::accumulate(loading.begin(), loading.end(), 0.0) / loading.size()},
        {"max_loading_pct", loading.empty() ? 0.0 : *std::max_element(loading.begin(), loading.end())},
        {"v_min_pu", vmin},
        {"v_max_pu", vmax},
        {"max_soc_gap", check_exactness(*r.opf, sc.net).max_gap},
        {"max_dlmp_residual", r.dlmp ? r.dlmp->max_relative_residual(sc.net) : 0.0}};
  }
  s["warnings"] = r.warnings;
  s["config"] = scenario_to_json(sc.config);
  s["config"].erase("case");
  s["config"].erase("peers");
  return s;
}

void write_run(const fs::path& dir, const RunResult& r, const Scenario& sc) {
  fs::create_directories(dir);
  {
    std::ostringstream ss;
    write_trades_csv(ss, sc.net, sc.peers, r.graph);
    write_file(dir / "trades.csv", ss.str());
  }
  if (r.opf && r.dlmp) {
    std::ostringstream buses, lines;
    write_bus_csv(buses, sc.net, *r.opf, *r.dlmp);
    write_line_csv(lines, sc.net, *r.opf, *r.dlmp);
    write_file(dir / "buses.csv", buses.str());
    write_file(dir / "lines.csv", lines.str());
  }
  json rev = {{"hash", r.hash}};
  for (Architecture a : {Architecture::current, Architecture::mixed, Architecture::p2p}) {
    const auto rep = utility_revenue(sc.net, r.graph, a);
    rev[to_string(a)] = {{"total", rep.total}, {"tariff_income", rep.tariff_income}, {"nuc_income", rep.nuc_income}};
  }
  write_file(dir / "revenue.json", rev.dump(2) + "\n");
  write_file(dir / "summary.json", summary_json(r, sc).dump(2) + "\n");
  if (r.mode == Mode::peer) {
    std::ostringstream rounds, trace;
    rounds << "round,matched,volume_mw,opf_feasible,nuc,max_charge_delta,match_iterations\n";
    for (const auto& row : r.rounds_trace) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%d,%d,%.6f,%d,%.6f,%.6f,%ld\n", row.round, row.matched, row.volume,
                    int(row.feasible), row.nuc, row.max_charge_delta, row.iterations);
      rounds << buf;
    }
    write_trace_csv(trace, r.match_trace);
    write_file(dir / "rounds.csv", rounds.str());
    write_file(dir / "match_trace.csv", trace.str());
  }
}

std::string cell_directory(double gamma, Mode mode) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "gamma_%.3f_%s", gamma, to_string(mode).c_str());
  return buf;
}

void write_sweep(const fs::path& dir, const std::vector<SweepCell>& cells, const Scenario& scenario) {
  fs::create_directories(dir);
  json doc;
  doc["scenario"] = scenario.config.name;
  doc["hash"] = scenario_hash(scenario);
  json rows = json::array();
  for (const auto& c : cells) {
    json row = {{"gamma", c.gamma}, {"mode", to_string(c.mode)}, {"ok", c.ok}, {"directory", cell_directory(c.gamma, c.mode)}};
    if (c.ok) {
      Scenario sc = scenario;
      sc.config.mode = c.mode;
      sc.config.gamma = c.gamma;
      sc.config.gamma_by_bus.clear();
      sc.config.gamma_grid.clear();
      sc.apply_gamma(c.gamma);
      write_run(dir / cell_directory(c.gamma, c.mode), *c.result, sc);
      row["summary"] = summary_json(*c.result, sc);
    } else {
      row["error"] = c.error;
    }
    rows.push_back(row);
  }
  doc["cells"] = rows;
  write_file(dir / "sweep.json", doc.dump(2) + "\n");
}

}  // namespace p2pgrid
