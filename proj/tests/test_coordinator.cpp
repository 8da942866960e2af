#include "doctest.h"

#include "p2pgrid/coordinator.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace p2pgrid;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kData = P2PGRID_DATA_DIR;

Scenario feeder15(Mode mode) {
  ScenarioConfig cfg;
  resolve_case_location(cfg, kData + "/feeder15");
  cfg.mode = mode;
  return load_scenario(cfg);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("p2pgrid_test_" + name);
  fs::remove_all(dir);
  return dir;
}

// Root, a long thin line and one elastic buyer; the seller sits at the root.
Scenario congested_market() {
  Scenario sc;
  sc.config.case_path = "inline";
  sc.config.mode = Mode::peer;
  sc.config.coordination.max_rounds = 5;
  sc.net = case_from_json(json::parse(R"({
    "base": {"mva": 1}, "root": 1, "C_w": 30,
    "buses": [{"id": 1, "V_min": 1, "V_max": 1}, {"id": 2, "D_p": 0.5, "D_q": 0.1, "Gamma": 1}],
    "lines": [{"id": 1, "from": 1, "to": 2, "R": 0.01, "X": 0.01, "S": 0.3}]
  })"));
  sc.peers = peers_from_json(json::parse(R"({
    "peers": [{"id": 1, "bus": 1, "side": "seller", "G_max": 1, "cost": 5},
              {"id": 2, "bus": 2, "side": "buyer", "D_max": 0.5, "Upsilon": 60}]
  })"), sc.net);
  return sc;
}

}  // namespace

TEST_CASE("system-centric 15-bus settlement reproduces the published figures") {
  const auto sc = feeder15(Mode::system);
  const auto r = run_system_centric(sc);
  CHECK(r.converged);
  CHECK(r.rounds == 1);
  CHECK(r.settlement.consumer_payments == doctest::Approx(88.20).epsilon(0.05));
  CHECK(r.settlement.producer_revenues == doctest::Approx(78.17).epsilon(0.05));
  CHECK(r.settlement.nuc == doctest::Approx(10.03).epsilon(0.05));
  CHECK(r.settlement.generation_cost == doctest::Approx(70.61).epsilon(0.05));
  CHECK(r.settlement.consumer_payments - r.settlement.producer_revenues == doctest::Approx(r.settlement.nuc));
  // matched volume equals the demand handed to the platform
  CHECK(r.settlement.volume == doctest::Approx(sc.net.p2p_demand_mw()).epsilon(1e-6));
  // the welfare objective of the co-optimisation equals its realised parts
  CHECK(r.welfare == doctest::Approx(-r.opf->objective).epsilon(1e-6));
}

TEST_CASE("without peers the system-centric run is a plain OPF with tariff revenue") {
  auto sc = feeder15(Mode::system);
  sc.apply_gamma(0.0);
  const auto r = run_system_centric(sc);
  OpfInput in;
  in.net = &sc.net;
  const auto plain = solve_opf(in);
  REQUIRE(plain.optimal());
  CHECK(r.opf->p0 == doctest::Approx(plain.p0).epsilon(1e-6));
  CHECK(r.settlement.volume == 0.0);
  double tariff = 0.0;
  for (const auto& b : sc.net.buses) tariff += b.tariff * b.demand_p * sc.net.base.mva;
  CHECK(r.revenue.total == doctest::Approx(tariff));
}

TEST_CASE("peer-centric run settles all inelastic demand and records rounds") {
  const auto sc = feeder15(Mode::peer);
  const auto r = run_peer_centric(sc);
  CHECK(r.rounds >= 1);
  CHECK(r.rounds_trace.size() == static_cast<std::size_t>(r.rounds));
  CHECK(r.settlement.volume == doctest::Approx(sc.net.p2p_demand_mw()).epsilon(1e-6));
  CHECK(r.settlement.consumer_payments - r.settlement.producer_revenues == doctest::Approx(r.settlement.nuc));
  CHECK(r.book.has_value());
}

TEST_CASE("an infeasible round charges the penalty and the next match shrinks") {
  const auto sc = congested_market();
  const auto r = run_peer_centric(sc);
  REQUIRE(r.rounds_trace.size() >= 2);
  CHECK_FALSE(r.rounds_trace[0].feasible);
  CHECK(r.rounds_trace[0].nuc == doctest::Approx(2 * sc.config.coordination.epsilon * r.rounds_trace[0].volume));
  CHECK(r.rounds_trace[1].volume < r.rounds_trace[0].volume);
}

TEST_CASE("peer-centric fixed point is stable under one more round") {
  auto sc = feeder15(Mode::peer);
  sc.apply_gamma(0.0);
  const auto r = run_peer_centric(sc);
  CHECK(r.converged);
  CHECK(r.rounds == 2);
}

TEST_CASE("gamma sweep produces one cell per grid point and mode") {
  ScenarioConfig cfg;
  resolve_case_location(cfg, kData + "/feeder141");
  const auto sc = load_scenario(cfg);
  const auto cells = run_gamma_sweep(sc, {0.3}, {Mode::system}, 1);
  REQUIRE(cells.size() == 1);
  REQUIRE(cells[0].ok);
  CHECK(cells[0].result->p2p_demand_mw == doctest::Approx(3.594).epsilon(1e-3));
  const auto two = run_gamma_sweep(sc, {0.0, 0.1}, {Mode::system, Mode::peer}, 2);
  CHECK(two.size() == 4);
  for (const auto& c : two) CHECK(c.ok);
  CHECK_THROWS_AS(run_gamma_sweep(sc, {1.5}, {Mode::system}), std::invalid_argument);
}

TEST_CASE("sweep records failures per cell") {
  auto sc = congested_market();
  sc.config.mode = Mode::system;
  sc.net.lines[0].rating = 0.01;
  sc.peers.buyers[0].d_min = 0.5;
  const auto cells = run_gamma_sweep(sc, {0.0, 1.0}, {Mode::system}, 1);
  REQUIRE(cells.size() == 2);
  CHECK_FALSE(cells[1].ok);
  CHECK(cells[1].error.find("infeasible") != std::string::npos);
}

TEST_CASE("scenario files round-trip and are validated") {
  const auto dir = scratch_dir("scenario");
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "s.json");
    out << json{{"name", "t"},
                {"case", kData + "/feeder15"},
                {"mode", "peer"},
                {"gamma", 0.5},
                {"match", {{"trade_size", 0.02}, {"delta_rho", 0.5}}},
                {"coordination", {{"epsilon", 20}, {"max_rounds", 7}}}}
               .dump();
  }
  const auto cfg = load_scenario_file(dir / "s.json");
  CHECK(cfg.mode == Mode::peer);
  CHECK(cfg.gamma.value() == 0.5);
  CHECK(cfg.match.trade_size == 0.02);
  CHECK(cfg.coordination.epsilon == 20);
  CHECK(cfg.coordination.max_rounds == 7);
  CHECK(cfg.peers_path.filename() == "peers.json");
  const auto again = scenario_from_json(scenario_to_json(cfg));
  CHECK(scenario_to_json(again) == scenario_to_json(cfg));

  auto per_bus = cfg;
  per_bus.gamma_by_bus = {{2, 0.25}, {13, 0.75}};
  CHECK(scenario_from_json(scenario_to_json(per_bus)).gamma_by_bus == per_bus.gamma_by_bus);

  auto bad = scenario_to_json(cfg);
  bad["coordination"]["epsilon"] = 0;
  CHECK_THROWS_AS(scenario_from_json(bad), std::invalid_argument);
  bad = scenario_to_json(cfg);
  bad["coordination"]["max_rounds"] = 0;
  CHECK_THROWS_AS(scenario_from_json(bad), std::invalid_argument);
  bad = scenario_to_json(cfg);
  bad["mode"] = "pool";
  CHECK_THROWS_AS(scenario_from_json(bad), std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("scenario hash follows the inputs") {
  auto a = feeder15(Mode::system);
  auto b = feeder15(Mode::system);
  CHECK(scenario_hash(a) == scenario_hash(b));
  CHECK(scenario_hash(a).size() == 16);
  b.apply_gamma(0.5);
  CHECK(scenario_hash(a) != scenario_hash(b));
  b = feeder15(Mode::peer);
  CHECK(scenario_hash(a) != scenario_hash(b));
}

TEST_CASE("run artifacts are complete and byte-stable") {
  const auto sc = feeder15(Mode::peer);
  const auto d1 = scratch_dir("run1"), d2 = scratch_dir("run2");
  write_run(d1, run(sc), sc);
  write_run(d2, run(sc), sc);
  // the final 15-bus peer round has no feasible OPF, so no bus or line tables
  for (const char* f : {"trades.csv", "revenue.json", "summary.json", "rounds.csv", "match_trace.csv"}) {
    REQUIRE(fs::exists(d1 / f));
    CHECK(slurp(d1 / f) == slurp(d2 / f));
  }
  const auto summary = json::parse(slurp(d1 / "summary.json"));
  CHECK(summary["hash"] == scenario_hash(sc));
  CHECK(summary["config"]["coordination"]["epsilon"] == 50.0);
  fs::remove_all(d1);
  fs::remove_all(d2);
}
