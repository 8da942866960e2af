#include "p2pgrid/trade.hpp"

namespace p2pgrid {

void TradeGraph::index(std::size_t sellers, std::size_t buyers) {
  by_seller.assign(sellers, {});
  by_buyer.assign(buyers, {});
  for (std::size_t k = 0; k < trades.size(); ++k) {
    by_seller.at(trades[k].seller).push_back(static_cast<int>(k));
    by_buyer.at(trades[k].buyer).push_back(static_cast<int>(k));
  }
}

std::vector<int> TradeGraph::matched() const {
  std::vector<int> out;
  for (std::size_t k = 0; k < trades.size(); ++k)
    if (trades[k].matched) out.push_back(static_cast<int>(k));
  return out;
}

double TradeGraph::matched_volume() const {
  double total = 0.0;
  for (const auto& t : trades)
    if (t.matched) total += t.quantity;
  return total;
}

}  // namespace p2pgrid
