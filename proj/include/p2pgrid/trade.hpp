// Bipartite trade graph shared by both matching configurations.
#pragma once

#include <cstddef>
#include <vector>

namespace p2pgrid {

struct Trade {
  int id = 0;
  int seller = 0;  // position in PeerSet::sellers
  int buyer = 0;   // position in PeerSet::buyers
  double quantity = 0.0;  // p_omega, MW
  double rho_s = 0.0;     // $/MWh
  double rho_b = 0.0;
  double price = 0.0;     // settled rho_omega
  double charge = 0.0;    // c^n_omega
  bool matched = false;
};

struct TradeGraph {
  std::vector<Trade> trades;
  bool parallel = false;  // fixed-size edges
  std::vector<std::vector<int>> by_seller;  // Omega_n, trade positions
  std::vector<std::vector<int>> by_buyer;

  std::size_t size() const { return trades.size(); }
  void index(std::size_t sellers, std::size_t buyers);
  std::vector<int> matched() const;
  double matched_volume() const;
};

}  // namespace p2pgrid
