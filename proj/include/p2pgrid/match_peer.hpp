// Peer-centric matching: fixed-size parallel trades, per-peer selection and
// the ascending price-adjustment loop.
#pragma once

#include "p2pgrid/network.hpp"
#include "p2pgrid/trade.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace p2pgrid {

struct MatchConfig {
  double trade_size = 0.01;  // P, MW
  double delta_rho = 0.1;    // $/MWh
  long max_iterations = 100000;
  double tolerance = 1e-9;   // strict-improvement threshold, $/h

  void validate() const;
};

/// Trade prices on the integer grid k * delta_rho. Selling and buying
/// prices coincide, so one tick per trade suffices.
struct PriceBook {
  std::vector<long> tick;
  std::vector<char> settled;
  double delta_rho = 0.1;

  double price(std::size_t k) const { return static_cast<double>(tick[k]) * delta_rho; }
};

/// Parallel edges between every seller and buyer. A buyer's edges share a
/// quantum P_m = D_max / ceil(D_max / P) so that its demand is met exactly;
/// a pair gets floor(min(G_max, D_max) / P_m) edges. Sellers with
/// G_max < P get none. `warning` is set when the graph is empty.
TradeGraph build_trade_graph_parallel(const PeerSet& peers, const MatchConfig& config, std::string* warning = nullptr);

/// Greedy choice over the peer's trades at the given prices and charges.
/// Returns trade positions, sorted. `floor_unmet` reports a buyer or seller
/// that cannot reach its lower bound.
std::vector<int> select_seller(const SellerSpec& seller, const TradeGraph& graph, const std::vector<int>& trades,
                               const std::vector<double>& price, double tolerance, bool* floor_unmet = nullptr);
std::vector<int> select_buyer(const BuyerSpec& buyer, const TradeGraph& graph, const std::vector<int>& trades,
                              const std::vector<double>& price, double tolerance, bool* floor_unmet = nullptr);

/// Objective of a seller or buyer for a chosen set (charges from the graph).
double seller_objective(const SellerSpec& seller, const TradeGraph& graph, const std::vector<int>& chosen,
                        const std::vector<double>& price);
double buyer_objective(const BuyerSpec& buyer, const TradeGraph& graph, const std::vector<int>& chosen,
                       const std::vector<double>& price);

struct TraceRow {
  long round = 0;
  int settled = 0;
  int raised = 0;
  double mean_settled_price = 0.0;
};

struct PeerMatch {
  TradeGraph graph;  // matched flags, prices
  PriceBook book;
  long iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;
  std::vector<TraceRow> trace;
};

/// Charges are read from graph.trades[k].charge. `warm` optionally seeds
/// the price ticks.
PeerMatch run_price_adjustment(TradeGraph graph, const PeerSet& peers, const MatchConfig& config,
                               const PriceBook* warm = nullptr);

struct StabilityReport {
  struct Blocking {
    int trade = 0;
    double price = 0.0;
  };
  std::vector<Blocking> blocking;
  bool stable() const { return blocking.empty(); }
};

/// Looks for an unmatched trade and a grid price at which both its seller
/// and its buyer strictly gain by adding it to their current sets.
StabilityReport verify_stability(const PeerMatch& match, const PeerSet& peers, const MatchConfig& config);

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

}  // namespace p2pgrid
