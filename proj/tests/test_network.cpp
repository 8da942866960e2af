#include "doctest.h"

#include "p2pgrid/network.hpp"

#include <cmath>

using namespace p2pgrid;
using nlohmann::json;

namespace {

json three_bus_case() {
  return json::parse(R"({
    "name": "three",
    "base": {"mva": 10, "kv": 12.47},
    "root": 1, "C_w": 40,
    "buses": [
      {"id": 1},
      {"id": 2, "D_p": 1.5, "D_q": 0.5, "T": 100, "Gamma": 0.5},
      {"id": 3, "D_p": 0.25, "G": 0.001, "B": 0.002}
    ],
    "lines": [
      {"id": 7, "from": 2, "to": 1, "R": 0.01, "X": 0.02, "S": 5},
      {"id": 8, "from": 2, "to": 3, "R": 0.03, "X": 0.01, "S": 2}
    ],
    "generators": [{"bus": 3, "C_u": 30, "P_max": 1, "Q_min": -1, "Q_max": 1}]
  })");
}

}  // namespace

TEST_CASE("JSON case converts to per-unit and orients lines from the root") {
  const auto net = case_from_json(three_bus_case());
  CHECK(net.buses.size() == 3);
  CHECK(net.bus(2).demand_p == doctest::Approx(0.15));
  CHECK(net.total_demand_mw() == doctest::Approx(1.75));
  CHECK(net.p2p_demand_mw() == doctest::Approx(0.75));
  CHECK(net.lines[0].from == 1);
  CHECK(net.lines[0].to == 2);
  CHECK(net.lines[1].rating == doctest::Approx(0.2));
  CHECK(net.parent_line(net.bus_index(3)) == 1);
  CHECK(net.parent_line(net.root_index()) == -1);
  CHECK(net.topological_order().front() == net.root_index());
  CHECK(net.generators[0].p_max == doctest::Approx(0.1));
}

TEST_CASE("case serialization round-trips") {
  const auto net = case_from_json(three_bus_case());
  const auto again = case_from_json(case_to_json(net));
  CHECK(case_to_json(again) == case_to_json(net));
  for (std::size_t i = 0; i < net.buses.size(); ++i) {
    CHECK(std::abs(again.buses[i].demand_p - net.buses[i].demand_p) <= 1e-12 * std::abs(net.buses[i].demand_p));
    CHECK(again.buses[i].demand_q == net.buses[i].demand_q);
  }
}

TEST_CASE("per-unit conversion is invertible") {
  for (double mva : {1.0, 10.0, 3.7, 100.0}) {
    auto doc = three_bus_case();
    doc["base"]["mva"] = mva;
    const auto out = case_to_json(case_from_json(doc));
    for (std::size_t i = 0; i < doc["buses"].size(); ++i) {
      const double d_in = doc["buses"][i].value("D_p", 0.0);
      const double d_out = out["buses"][i]["D_p"].get<double>();
      CHECK(std::abs(d_in - d_out) <= 1e-12 * std::max(1.0, std::abs(d_in)));
    }
    CHECK(std::abs(out["lines"][1]["S"].get<double>() - 2.0) <= 2e-12);
  }
}

TEST_CASE("radiality violations are rejected") {
  SUBCASE("cycle among three buses is named") {
    auto doc = three_bus_case();
    doc["lines"].push_back({{"id", 9}, {"from", 3}, {"to", 1}, {"R", 0.01}, {"X", 0.01}, {"S", 1}});
    try {
      case_from_json(doc);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("cycle") != std::string::npos);
      CHECK(msg.find("line 9") != std::string::npos);
    }
  }
  SUBCASE("disconnected bus") {
    auto doc = three_bus_case();
    doc["lines"].erase(1);
    doc["buses"].push_back({{"id", 4}});
    doc["lines"].push_back({{"id", 9}, {"from", 3}, {"to", 4}, {"R", 0.01}, {"X", 0.01}, {"S", 1}});
    CHECK_THROWS_AS(case_from_json(doc), ValidationError);
  }
  SUBCASE("too few lines") {
    auto doc = three_bus_case();
    doc["lines"].erase(1);
    CHECK_THROWS_AS(case_from_json(doc), ValidationError);
  }
  SUBCASE("dangling reference names the line") {
    auto doc = three_bus_case();
    doc["lines"][1]["to"] = 42;
    CHECK_THROWS_WITH_AS(case_from_json(doc), doctest::Contains("line 8"), ValidationError);
  }
}

TEST_CASE("bus invariants are enforced") {
  auto doc = three_bus_case();
  doc["buses"][1]["Gamma"] = 1.5;
  CHECK_THROWS_AS(case_from_json(doc), ValidationError);
  doc = three_bus_case();
  doc["buses"][1]["V_min"] = 1.3;
  CHECK_THROWS_AS(case_from_json(doc), ValidationError);
  doc = three_bus_case();
  doc["lines"][0]["S"] = 0;
  CHECK_THROWS_AS(case_from_json(doc), ValidationError);
  doc = three_bus_case();
  doc.erase("root");
  CHECK_THROWS_AS(case_from_json(doc), ParseError);
}

TEST_CASE("peer files") {
  const auto net = case_from_json(three_bus_case());
  SUBCASE("empty") {
    const auto peers = peers_from_json(json::object(), net);
    CHECK(peers.empty());
  }
  SUBCASE("explicit and from-case buyers") {
    const auto peers = peers_from_json(json::parse(R"({
      "peers": [
        {"id": 1, "bus": 3, "side": "seller", "G_max": 0.4, "cost": 10},
        {"id": 2, "bus": 2, "side": "buyer", "D_max": "from-case", "Upsilon": 80}
      ]})"),
                                       net);
    REQUIRE(peers.sellers.size() == 1);
    REQUIRE(peers.buyers.size() == 1);
    CHECK(peers.sellers[0].cost.linear == 10);
    CHECK(peers.buyers[0].d_max == doctest::Approx(0.75));
    CHECK(peers.buyers[0].d_min == doctest::Approx(0.75));
    CHECK(peers.seller_at_bus(3) != nullptr);
  }
  SUBCASE("generated buyers follow Gamma") {
    auto local = net;
    local.set_gamma(0.2);
    auto peers = peers_from_json(json::parse(R"({"buyers_from_case": {"Upsilon": 90, "first_id": 100}})"), local);
    REQUIRE(peers.buyers.size() == 2);
    CHECK(peers.buyers[0].id == 100);
    CHECK(peers.buyers[1].d_max == doctest::Approx(0.05));
    local.set_gamma(1.0);
    peers.refresh_from_case(local);
    CHECK(peers.buyers[1].d_max == doctest::Approx(0.25));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(peers_from_json(json::parse(R"({"peers": [
      {"id": 1, "bus": 9, "side": "seller", "G_max": 1, "cost": 1}]})"),
                                    net),
                    ValidationError);
    CHECK_THROWS_WITH_AS(peers_from_json(json::parse(R"({"peers": [
      {"id": 1, "bus": 2, "side": "seller", "G_max": 1, "cost": 1},
      {"id": 1, "bus": 3, "side": "buyer", "D_max": 1, "Upsilon": 5}]})"),
                                         net),
                         doctest::Contains("both"), ValidationError);
  }
}
