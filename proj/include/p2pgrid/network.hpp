// Radial distribution case and peer population.
//
// Files carry physical units (MW, MVAr, MVA, $/MWh); a loaded NetworkCase
// holds powers in per-unit of `base.mva`. R, X, G, B and squared voltage
// bounds are per-unit in both places.
#pragma once

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace p2pgrid {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Bus {
  int id = 0;
  double shunt_g = 0.0;    // G_b, p.u.
  double shunt_b = 0.0;    // B_b, p.u.
  double demand_p = 0.0;   // D^p_b, p.u.
  double demand_q = 0.0;   // D^q_b, p.u.
  double tariff = 0.0;     // T_b, $/MWh
  double v_min = 0.81;     // squared magnitude, p.u.
  double v_max = 1.21;
  double gamma = 0.0;      // P2P penetration level
};

struct Line {
  int id = 0;
  int from = 0;  // o(l), towards the root after validation
  int to = 0;    // r(l)
  double r = 0.0;
  double x = 0.0;
  double rating = 0.0;  // S_l, p.u.
};

struct UtilityGenerator {
  int bus = 0;
  double cost = 0.0;  // $/MWh
  double p_min = 0.0, p_max = 0.0;
  double q_min = 0.0, q_max = 0.0;
};

/// Wholesale interconnection at the root bus.
struct RootSupply {
  double p_min = -1e3, p_max = 1e3;  // p.u.
  double q_min = -1e3, q_max = 1e3;
};

struct BaseValues {
  double mva = 1.0;
  double kv = 12.47;
};

class NetworkCase {
 public:
  std::string name;
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::vector<UtilityGenerator> generators;
  int root = 0;  // bus id
  double wholesale_price = 0.0;  // C^w, $/MWh
  BaseValues base;
  RootSupply root_supply;

  /// Checks invariants, orients every line away from the root and builds
  /// the index. Throws ValidationError naming the offending record.
  void finalize();

  int bus_index(int bus_id) const;  // throws std::out_of_range
  bool has_bus(int bus_id) const;
  const Bus& bus(int bus_id) const { return buses[bus_index(bus_id)]; }
  int root_index() const { return bus_index(root); }
  /// Index of the line feeding bus position `b` (-1 at the root).
  int parent_line(int b) const { return parent_line_[b]; }
  const std::vector<int>& child_lines(int b) const { return child_lines_[b]; }
  /// Bus positions ordered root first, each parent before its children.
  const std::vector<int>& topological_order() const { return order_; }

  double total_demand_mw() const;
  /// Sum_b Gamma_b D^p_b in MW.
  double p2p_demand_mw() const;

  /// Uniform Gamma override.
  void set_gamma(double gamma);

 private:
  std::vector<int> index_;  // bus id -> position, -1 if absent
  std::vector<int> parent_line_;
  std::vector<std::vector<int>> child_lines_;
  std::vector<int> order_;
};

enum class CaseFormat { json, matpower_csv };

/// Loads a case. For `matpower_csv`, `path` is a directory holding
/// bus.csv, branch.csv and meta.json (see import_matpower_tables).
NetworkCase load_case(const std::filesystem::path& path, CaseFormat format = CaseFormat::json);
NetworkCase case_from_json(const nlohmann::json& doc);
nlohmann::json case_to_json(const NetworkCase& net);

/// Options for converting MATPOWER-style tables (columns as in mpc.bus /
/// mpc.branch) into a case.
struct MatpowerImport {
  double base_mva = 1.0;
  double base_kv = 12.47;
  bool impedance_in_ohm = false;
  double load_scale = 1.0;          // multiply Pd/Qd columns, e.g. 1e-3 for kW
  std::optional<double> power_factor;  // Pd column holds apparent power when set
  double default_tariff = 0.0;
  double default_rating_mva = 0.0;  // used when rateA == 0
  double wholesale_price = 0.0;
  double v_min_sq = 0.81, v_max_sq = 1.21;
  std::optional<double> root_v_sq;  // pins the reference bus voltage
};

NetworkCase import_matpower_tables(const std::filesystem::path& bus_csv, const std::filesystem::path& branch_csv,
                                   const MatpowerImport& options);

// ---------------------------------------------------------------------------
// Peers

enum class Side { seller, buyer };

struct CostFunction {
  double linear = 0.0;     // $/MWh
  double quadratic = 0.0;  // $/MW^2h
  double operator()(double mw) const { return linear * mw + quadratic * mw * mw; }
  double marginal(double mw) const { return linear + 2.0 * quadratic * mw; }
};

struct SellerSpec {
  int id = 0;
  int bus = 0;
  double g_min = 0.0, g_max = 0.0;  // MW
  CostFunction cost;
};

struct BuyerSpec {
  int id = 0;
  int bus = 0;
  double d_min = 0.0, d_max = 0.0;  // MW
  double surplus_value = 0.0;       // Upsilon_n, $/MWh
  double utility_quadratic = 0.0;   // optional concavity, U = Y(d-D) - q(d-D)^2
  // When set, bounds follow Gamma_b D^p_b of the host bus.
  bool from_case = false;
  bool inelastic = true;

  double utility(double mw) const {
    const double e = mw - d_min;
    return surplus_value * e - utility_quadratic * e * e;
  }
};

struct PeerSet {
  std::vector<SellerSpec> sellers;
  std::vector<BuyerSpec> buyers;

  bool empty() const { return sellers.empty() && buyers.empty(); }
  const SellerSpec* seller_at_bus(int bus) const;
  /// Re-derives bounds of from-case buyers from the case's Gamma_b.
  void refresh_from_case(const NetworkCase& net);
};

PeerSet load_peers(const std::filesystem::path& path, const NetworkCase& net);
PeerSet peers_from_json(const nlohmann::json& doc, const NetworkCase& net);

}  // namespace p2pgrid
