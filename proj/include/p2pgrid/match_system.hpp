// System-centric clearing: welfare maximisation with or without the network.
#pragma once

#include "p2pgrid/network.hpp"
#include "p2pgrid/opf.hpp"
#include "p2pgrid/pricing.hpp"
#include "p2pgrid/trade.hpp"

#include <optional>
#include <stdexcept>

namespace p2pgrid {

class ClearingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One continuous edge per (seller, buyer) pair, ids in seller-major order.
TradeGraph build_trade_graph_simple(const PeerSet& peers);

struct SystemClearing {
  TradeGraph graph;
  std::optional<OpfSolution> opf;  // set when co-optimized
  double objective = 0.0;          // maximised welfare, $/h (O^P2P [+ O^Dist])
  std::vector<double> g, d;        // per seller / buyer, MW
};

constexpr double kQuantityFloor = 1e-6;

/// Throws ClearingError when the program is infeasible or unbounded.
SystemClearing clear_system_centric(TradeGraph graph, const PeerSet& peers, const NetworkCase* net, bool coopt,
                                    const conic::Settings& settings = {});

/// Midpoint trade price and charges from endpoint DLMPs.
void settle_system_centric(TradeGraph& graph, const DlmpVector& dlmp, const NetworkCase& net, const PeerSet& peers);

}  // namespace p2pgrid
