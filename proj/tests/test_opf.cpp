#include "doctest.h"

#include "p2pgrid/match_system.hpp"
#include "p2pgrid/opf.hpp"
#include "p2pgrid/pricing.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace p2pgrid;
using nlohmann::json;

namespace {

const std::string kData = P2PGRID_DATA_DIR;

// root 1 - 2 - 3, with a branch 2 - 4
json small_case(double d2 = 0.8, double d3 = 0.5, double d4 = 0.3) {
  json doc = json::parse(R"({
    "name": "small", "base": {"mva": 1, "kv": 12.47}, "root": 1, "C_w": 40,
    "buses": [
      {"id": 1, "V_min": 1.0, "V_max": 1.0},
      {"id": 2}, {"id": 3}, {"id": 4}
    ],
    "lines": [
      {"id": 1, "from": 1, "to": 2, "R": 0.02, "X": 0.04, "S": 5},
      {"id": 2, "from": 2, "to": 3, "R": 0.03, "X": 0.02, "S": 5},
      {"id": 3, "from": 2, "to": 4, "R": 0.01, "X": 0.03, "S": 5}
    ]
  })");
  doc["buses"][1]["D_p"] = d2;
  doc["buses"][1]["D_q"] = 0.3 * d2;
  doc["buses"][2]["D_p"] = d3;
  doc["buses"][2]["D_q"] = 0.2 * d3;
  doc["buses"][3]["D_p"] = d4;
  doc["buses"][3]["D_q"] = 0.1 * d4;
  return doc;
}

OpfSolution solve_fixed(const NetworkCase& net, std::map<int, BusInjection> inj = {}) {
  OpfInput in;
  in.net = &net;
  in.injections = std::move(inj);
  return solve_opf(in);
}

}  // namespace

TEST_CASE("two-bus feeder prices the load above the root") {
  const auto net = case_from_json(json::parse(R"({
    "base": {"mva": 1}, "root": 1, "C_w": 30,
    "buses": [{"id": 1, "V_min": 1, "V_max": 1}, {"id": 2, "D_p": 1.0, "D_q": 0.3}],
    "lines": [{"id": 1, "from": 1, "to": 2, "R": 0.01, "X": 0.02, "S": 5}]
  })"));
  const auto sol = solve_fixed(net);
  REQUIRE(sol.optimal());
  CHECK(sol.lambda[net.root_index()] == doctest::Approx(30.0).epsilon(1e-6));
  CHECK(sol.lambda[net.bus_index(2)] > 30.0);
  CHECK(sol.p0 > 1.0);
  CHECK(check_exactness(sol, net).exact());
}

TEST_CASE("DLMPs match finite differences of the optimal cost") {
  const double h = 1e-4;
  const auto net = case_from_json(small_case());
  const auto base = solve_fixed(net);
  REQUIRE(base.optimal());
  for (int bus : {2, 3, 4}) {
    auto up = small_case(), down = small_case();
    const int k = bus - 1;
    up["buses"][k]["D_p"] = up["buses"][k]["D_p"].get<double>() + h;
    down["buses"][k]["D_p"] = down["buses"][k]["D_p"].get<double>() - h;
    const auto su = solve_fixed(case_from_json(up)), sd = solve_fixed(case_from_json(down));
    REQUIRE(su.optimal());
    REQUIRE(sd.optimal());
    const double fd = (su.objective - sd.objective) / (2 * h);
    CHECK(base.lambda[net.bus_index(bus)] == doctest::Approx(fd).epsilon(1e-4));
  }
}

TEST_CASE("zero demand gives zero flows and a flat price") {
  const auto net = case_from_json(small_case(0, 0, 0));
  const auto sol = solve_fixed(net);
  REQUIRE(sol.optimal());
  for (double f : sol.fp) CHECK(std::abs(f) < 1e-6);
  for (double lam : sol.lambda) CHECK(lam == doctest::Approx(40.0).epsilon(1e-5));
  const auto dlmp = recover_dlmp(sol, net);
  for (char d : dlmp.degenerate) CHECK(d == 1);
}

TEST_CASE("injections beyond a line rating are reported infeasible") {
  auto doc = small_case();
  doc["lines"][1]["S"] = 0.1;
  const auto net = case_from_json(doc);
  const auto sol = solve_fixed(net);
  CHECK(sol.status == OpfStatus::infeasible);
  CHECK_FALSE(sol.optimal());
}

TEST_CASE("15-bus program has one balance row pair per bus and three cones per line") {
  const auto net = load_case(kData + "/feeder15/case.json");
  OpfInput in;
  in.net = &net;
  const auto prog = build_opf(in);
  CHECK(prog.active_balance_rows() == 15);
  CHECK(prog.row_q.size() == 15);
  CHECK(prog.rotated_cones() == 14);
  CHECK(prog.rating_cones() == 28);
}

TEST_CASE("optimal solves conserve energy, close the duality gap and are exact") {
  const auto net = case_from_json(small_case());
  std::map<int, BusInjection> inj;
  inj[3].sold_mw = 0.2;
  inj[4].bought_mw = 0.1;
  const auto sol = solve_fixed(net, inj);
  REQUIRE(sol.optimal());
  double losses = 0.0;
  for (std::size_t l = 0; l < net.lines.size(); ++l) losses += net.lines[l].r * sol.a[l] * net.base.mva;
  const double demand = net.total_demand_mw() + 0.1;
  CHECK(sol.p0 + 0.2 == doctest::Approx(demand + losses).epsilon(1e-7));
  CHECK(std::abs(sol.objective - sol.dual_objective) <= 1e-6 * std::max(1.0, std::abs(sol.objective)));
  CHECK(max_balance_residual(sol, net) < 1e-7);
  CHECK(check_exactness(sol, net).exact());
}

TEST_CASE("rating multipliers are positive only on saturated lines") {
  const auto net = load_case(kData + "/feeder15/case.json");
  const auto peers = load_peers(kData + "/feeder15/peers.json", net);
  const auto clearing = clear_system_centric(build_trade_graph_simple(peers), peers, &net, true);
  const auto& sol = *clearing.opf;
  const auto loading = line_loading_percent(sol, net);
  int saturated = 0;
  for (std::size_t l = 0; l < net.lines.size(); ++l) {
    const double eta = sol.eta_plus[l] + sol.eta_minus[l];
    if (loading[l] < 99.0) CHECK(eta < 1e-5);
    if (eta > 1e-3) {
      CHECK(loading[l] > 99.99);
      ++saturated;
    }
  }
  CHECK(saturated >= 1);
}

TEST_CASE("SOCP voltages agree with a Newton AC power flow on the 15-bus solve") {
  const auto net = load_case(kData + "/feeder15/case.json");
  const auto peers = load_peers(kData + "/feeder15/peers.json", net);
  const auto clearing = clear_system_centric(build_trade_graph_simple(peers), peers, &net, true);
  const auto& sol = *clearing.opf;
  REQUIRE(check_exactness(sol, net).exact());
  const int nb = static_cast<int>(net.buses.size());
  std::vector<double> p(nb), q(nb);
  for (int i = 0; i < nb; ++i) {
    p[i] = (sol.sold[i] - sol.demand[i]) / net.base.mva;
    q[i] = -net.buses[i].demand_q;
  }
  const auto vm = oracle::newton_voltages(net, p, q, sol.v[net.root_index()]);
  for (int i = 0; i < nb; ++i) CHECK(std::sqrt(sol.v[i]) == doctest::Approx(vm[i]).epsilon(1e-4));
}

TEST_CASE("exactness check flags a perturbed current") {
  const auto net = case_from_json(small_case());
  auto sol = solve_fixed(net);
  REQUIRE(check_exactness(sol, net).exact());
  sol.a[1] += 1e-3;
  const auto rep = check_exactness(sol, net);
  REQUIRE(rep.flagged.size() == 1);
  CHECK(rep.flagged[0] == 1);
}

TEST_CASE("141-bus base case solves exactly with a clean DLMP reconstruction") {
  const auto net = load_case(kData + "/feeder141", CaseFormat::matpower_csv);
  CHECK(net.total_demand_mw() == doctest::Approx(11.98).epsilon(1e-6));
  const auto sol = solve_fixed(net);
  REQUIRE(sol.optimal());
  CHECK(check_exactness(sol, net).exact());
  const auto dlmp = recover_dlmp(sol, net);
  CHECK(dlmp.max_relative_residual(net) <= 1e-4);
  const auto loading = line_loading_percent(sol, net);
  for (std::size_t l = 0; l < net.lines.size(); ++l)
    if (dlmp.degenerate[l]) CHECK(loading[l] < 1e-3);
}
