// DLMP recovery, network usage charges, settlement and utility revenue.
#pragma once

#include "p2pgrid/network.hpp"
#include "p2pgrid/opf.hpp"
#include "p2pgrid/trade.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace p2pgrid {

/// Closed-form coefficients relating the origin-bus DLMP of a line to the
/// receiving-end prices and the rating multipliers. `a5_doubled` is a
/// variant of the last coefficient with the fp^3 x term doubled; it does not
/// satisfy the KKT conditions and serves as a negative control.
struct LineCoefficients {
  double den = 0.0;
  double a1 = 0.0, a2 = 0.0, a3 = 0.0, a4 = 0.0, a5 = 0.0;
  double a5_doubled = 0.0;
};

LineCoefficients line_coefficients(double fp, double fq, double a, double r, double x);

struct DlmpVector {
  std::vector<double> lambda, mu;           // $/MWh per bus
  std::vector<double> eta_plus, eta_minus;  // per line
  std::vector<double> reconstructed;        // closed-form lambda_{o(l)} per line
  std::vector<double> residual;             // |lambda_o - reconstructed|
  std::vector<double> residual_doubled;     // same with a5_doubled
  std::vector<char> degenerate;             // per line

  /// max over non-degenerate lines of residual / max(1, |lambda_o|)
  double max_relative_residual(const NetworkCase& net, bool doubled = false) const;
};

constexpr double kDegenerateDenominator = 1e-10;

DlmpVector recover_dlmp(const OpfSolution& sol, const NetworkCase& net);

/// (lambda_buyer - lambda_seller) / 2
double trade_charge(const DlmpVector& dlmp, const NetworkCase& net, const PeerSet& peers, const Trade& trade);

/// Writes c^n for every trade in the graph.
void apply_charges(TradeGraph& graph, const DlmpVector& dlmp, const NetworkCase& net, const PeerSet& peers);

/// sum_{matched} 2 c p
double network_usage_charge(const TradeGraph& graph);

/// sum c p / sum p over matched trades; empty when nothing is matched.
std::optional<double> average_charge(const TradeGraph& graph);

struct Settlement {
  double consumer_payments = 0.0;  // sum (rho + c) p
  double producer_revenues = 0.0;  // sum (rho - c) p
  double nuc = 0.0;
  double generation_cost = 0.0;    // sum C_n(g_n)
  double buyer_utility = 0.0;      // sum U_n(d_n)
  double volume = 0.0;             // MW
  std::optional<double> average_charge;
  int matched_trades = 0;

  double welfare() const { return buyer_utility - generation_cost; }
};

Settlement settle(const TradeGraph& graph, const PeerSet& peers);

enum class Architecture { current, mixed, p2p };

std::string to_string(Architecture arch);

struct RevenueReport {
  Architecture architecture = Architecture::mixed;
  double total = 0.0;
  double tariff_income = 0.0;
  double nuc_income = 0.0;
};

RevenueReport utility_revenue(const NetworkCase& net, const TradeGraph& graph, Architecture arch);

// CSV emitters; rows are ordered by bus id, line id and trade id.
void write_bus_csv(std::ostream& out, const NetworkCase& net, const OpfSolution& sol, const DlmpVector& dlmp);
void write_line_csv(std::ostream& out, const NetworkCase& net, const OpfSolution& sol, const DlmpVector& dlmp);
void write_trades_csv(std::ostream& out, const NetworkCase& net, const PeerSet& peers, const TradeGraph& graph);

}  // namespace p2pgrid
