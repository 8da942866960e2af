#include "p2pgrid/match_peer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace p2pgrid {

namespace {

constexpr double kQtyTol = 1e-9;
constexpr double kMinusInf = -std::numeric_limits<double>::infinity();

std::vector<int> take_greedy(const TradeGraph& graph, std::vector<int> order, int forced, double lower, double upper,
                             const std::function<double(double, int)>& gain, double tolerance, bool* floor_unmet) {
  std::vector<int> chosen;
  double q = 0.0;
  if (forced >= 0) {
    chosen.push_back(forced);
    q += graph.trades[forced].quantity;
    if (q > upper + kQtyTol) {
      if (floor_unmet) *floor_unmet = false;
      return {};
    }
  }
  std::vector<char> used(order.size(), 0);
  // Reach the lower bound first, best units first.
  for (std::size_t i = 0; i < order.size() && q < lower - kQtyTol; ++i) {
    const double p = graph.trades[order[i]].quantity;
    if (order[i] == forced || q + p > upper + kQtyTol) continue;
    chosen.push_back(order[i]);
    used[i] = 1;
    q += p;
  }
  if (floor_unmet) *floor_unmet = q < lower - kQtyTol;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (used[i] || order[i] == forced) continue;
    const double p = graph.trades[order[i]].quantity;
    if (q + p > upper + kQtyTol) continue;
    if (gain(q, order[i]) <= tolerance) break;
    chosen.push_back(order[i]);
    q += p;
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<int> seller_choice(const SellerSpec& s, const TradeGraph& graph, std::vector<int> trades,
                               const std::vector<double>& price, double tol, int forced, bool* floor_unmet) {
  auto margin = [&](int k) { return price[k] - graph.trades[k].charge; };
  std::sort(trades.begin(), trades.end(), [&](int a, int b) {
    const double ma = margin(a), mb = margin(b);
    return ma != mb ? ma > mb : graph.trades[a].id < graph.trades[b].id;
  });
  auto gain = [&](double g, int k) {
    const double p = graph.trades[k].quantity;
    return margin(k) * p - (s.cost(g + p) - s.cost(g));
  };
  return take_greedy(graph, std::move(trades), forced, s.g_min, s.g_max, gain, tol, floor_unmet);
}

std::vector<int> buyer_choice(const BuyerSpec& b, const TradeGraph& graph, std::vector<int> trades,
                              const std::vector<double>& price, double tol, int forced, bool* floor_unmet) {
  auto cost = [&](int k) { return price[k] + graph.trades[k].charge; };
  std::sort(trades.begin(), trades.end(), [&](int x, int y) {
    const double cx = cost(x), cy = cost(y);
    return cx != cy ? cx < cy : graph.trades[x].id < graph.trades[y].id;
  });
  auto gain = [&](double d, int k) {
    const double p = graph.trades[k].quantity;
    return b.utility(d + p) - b.utility(d) - cost(k) * p;
  };
  return take_greedy(graph, std::move(trades), forced, b.d_min, b.d_max, gain, tol, floor_unmet);
}

}  // namespace

void MatchConfig::validate() const {
  if (!(trade_size > 0.0)) throw std::invalid_argument("trade size must be positive");
  if (!(delta_rho > 0.0)) throw std::invalid_argument("price step must be positive");
  if (max_iterations < 1) throw std::invalid_argument("max iterations must be at least 1");
}

TradeGraph build_trade_graph_parallel(const PeerSet& peers, const MatchConfig& config, std::string* warning) {
  config.validate();
  TradeGraph graph;
  graph.parallel = true;
  const double P = config.trade_size;
  std::vector<double> quantum(peers.buyers.size(), 0.0);
  for (std::size_t m = 0; m < peers.buyers.size(); ++m) {
    const double dmax = peers.buyers[m].d_max;
    if (dmax > kQtyTol) quantum[m] = dmax / std::max(1.0, std::ceil(dmax / P - 1e-9));
  }
  int id = 1;
  for (std::size_t n = 0; n < peers.sellers.size(); ++n) {
    const double gmax = peers.sellers[n].g_max;
    if (gmax < P - kQtyTol) continue;
    for (std::size_t m = 0; m < peers.buyers.size(); ++m) {
      if (quantum[m] <= 0.0) continue;
      const long count = static_cast<long>(std::floor(std::min(gmax, peers.buyers[m].d_max) / quantum[m] + 1e-9));
      for (long k = 0; k < count; ++k) {
        Trade t;
        t.id = id++;
        t.seller = static_cast<int>(n);
        t.buyer = static_cast<int>(m);
        t.quantity = quantum[m];
        graph.trades.push_back(t);
      }
    }
  }
  graph.index(peers.sellers.size(), peers.buyers.size());
  if (graph.trades.empty() && warning)
    *warning = "trade graph is empty: standard trade size exceeds every seller capacity or no buyer has demand";
  return graph;
}

std::vector<int> select_seller(const SellerSpec& seller, const TradeGraph& graph, const std::vector<int>& trades,
                               const std::vector<double>& price, double tolerance, bool* floor_unmet) {
  return seller_choice(seller, graph, trades, price, tolerance, -1, floor_unmet);
}

std::vector<int> select_buyer(const BuyerSpec& buyer, const TradeGraph& graph, const std::vector<int>& trades,
                              const std::vector<double>& price, double tolerance, bool* floor_unmet) {
  return buyer_choice(buyer, graph, trades, price, tolerance, -1, floor_unmet);
}

double seller_objective(const SellerSpec& seller, const TradeGraph& graph, const std::vector<int>& chosen,
                        const std::vector<double>& price) {
  double g = 0.0, income = 0.0;
  for (int k : chosen) {
    g += graph.trades[k].quantity;
    income += (price[k] - graph.trades[k].charge) * graph.trades[k].quantity;
  }
  if (g > seller.g_max + kQtyTol || g < seller.g_min - kQtyTol) return kMinusInf;
  return income - seller.cost(g);
}

double buyer_objective(const BuyerSpec& buyer, const TradeGraph& graph, const std::vector<int>& chosen,
                       const std::vector<double>& price) {
  double d = 0.0, spend = 0.0;
  for (int k : chosen) {
    d += graph.trades[k].quantity;
    spend += (price[k] + graph.trades[k].charge) * graph.trades[k].quantity;
  }
  if (d > buyer.d_max + kQtyTol || d < buyer.d_min - kQtyTol) return kMinusInf;
  return buyer.utility(d) - spend;
}

namespace {

// Buyers with a demand floor accept any price, so the ceiling must also
// clear every seller's marginal cost plus charge.
long ceiling_tick(const TradeGraph& graph, const PeerSet& peers, double delta_rho) {
  double top = 0.0;
  for (const auto& b : peers.buyers) top = std::max(top, b.surplus_value);
  for (const auto& t : graph.trades)
    top = std::max(top, peers.sellers[t.seller].cost.marginal(peers.sellers[t.seller].g_max) + t.charge);
  return static_cast<long>(std::floor(top / delta_rho + 1e-9)) + 1;
}

}  // namespace

PeerMatch run_price_adjustment(TradeGraph graph, const PeerSet& peers, const MatchConfig& config,
                               const PriceBook* warm) {
  config.validate();
  const std::size_t n = graph.trades.size();
  if (graph.by_seller.size() != peers.sellers.size() || graph.by_buyer.size() != peers.buyers.size())
    graph.index(peers.sellers.size(), peers.buyers.size());
  PeerMatch out;
  out.book.delta_rho = config.delta_rho;
  out.book.tick.assign(n, 0);
  out.book.settled.assign(n, 0);
  const long ceiling = ceiling_tick(graph, peers, config.delta_rho);
  if (warm && warm->tick.size() == n && warm->delta_rho == config.delta_rho)
    for (std::size_t k = 0; k < n; ++k) out.book.tick[k] = std::min(warm->tick[k], ceiling);

  std::vector<double> price(n);
  std::vector<char> by_buyer(n), by_seller(n);
  std::vector<char> dead(n, 0);  // rejected at the ceiling, can never settle
  std::vector<std::vector<int>> open(peers.buyers.size());
  bool floor_warning = false;
  for (long round = 1; round <= config.max_iterations; ++round) {
    for (std::size_t k = 0; k < n; ++k) price[k] = out.book.price(k);
    std::fill(by_buyer.begin(), by_buyer.end(), 0);
    std::fill(by_seller.begin(), by_seller.end(), 0);
    floor_warning = false;
    for (std::size_t m = 0; m < peers.buyers.size(); ++m) {
      bool unmet = false;
      open[m].clear();
      for (int k : graph.by_buyer[m])
        if (!dead[k]) open[m].push_back(k);
      for (int k : select_buyer(peers.buyers[m], graph, open[m], price, config.tolerance, &unmet))
        by_buyer[k] = 1;
      floor_warning |= unmet;
    }
    // Sellers choose among the trades buyers currently ask for.
    for (std::size_t s = 0; s < peers.sellers.size(); ++s) {
      std::vector<int> offered;
      for (int k : graph.by_seller[s])
        if (by_buyer[k]) offered.push_back(k);
      for (int k : select_seller(peers.sellers[s], graph, offered, price, config.tolerance)) by_seller[k] = 1;
    }

    TraceRow row;
    row.round = round;
    double price_sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      out.book.settled[k] = by_buyer[k] && by_seller[k];
      if (out.book.settled[k]) {
        ++row.settled;
        price_sum += price[k];
      } else if (by_buyer[k]) {
        if (out.book.tick[k] < ceiling) {
          ++out.book.tick[k];
        } else {
          dead[k] = 1;
        }
        ++row.raised;
      }
    }
    row.mean_settled_price = row.settled ? price_sum / row.settled : 0.0;
    out.trace.push_back(row);
    out.iterations = round;
    if (row.raised == 0) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged)
    out.warnings.push_back("price adjustment stopped at the iteration limit; unsettled trades dropped");
  if (floor_warning) out.warnings.push_back("some buyers cannot reach their minimum demand with available trades");
  for (std::size_t k = 0; k < n; ++k) {
    Trade& t = graph.trades[k];
    t.matched = out.book.settled[k];
    t.price = t.rho_s = t.rho_b = out.book.price(k);
  }
  out.graph = std::move(graph);
  return out;
}

StabilityReport verify_stability(const PeerMatch& match, const PeerSet& peers, const MatchConfig& config) {
  StabilityReport rep;
  const TradeGraph& graph = match.graph;
  const std::size_t n = graph.trades.size();
  std::vector<double> price(n);
  for (std::size_t k = 0; k < n; ++k) price[k] = graph.trades[k].price;
  std::vector<std::vector<int>> held_s(peers.sellers.size()), held_b(peers.buyers.size());
  for (std::size_t k = 0; k < n; ++k)
    if (graph.trades[k].matched) {
      held_s[graph.trades[k].seller].push_back(static_cast<int>(k));
      held_b[graph.trades[k].buyer].push_back(static_cast<int>(k));
    }
  std::vector<double> base_s(peers.sellers.size()), base_b(peers.buyers.size());
  for (std::size_t s = 0; s < peers.sellers.size(); ++s)
    base_s[s] = seller_objective(peers.sellers[s], graph, held_s[s], price);
  for (std::size_t m = 0; m < peers.buyers.size(); ++m)
    base_b[m] = buyer_objective(peers.buyers[m], graph, held_b[m], price);

  const long ceiling = ceiling_tick(graph, peers, config.delta_rho);
  for (std::size_t k = 0; k < n; ++k) {
    const Trade& t = graph.trades[k];
    if (t.matched) continue;
    const auto& seller = peers.sellers[t.seller];
    const auto& buyer = peers.buyers[t.buyer];
    auto pool_s = held_s[t.seller];
    pool_s.push_back(static_cast<int>(k));
    auto pool_b = held_b[t.buyer];
    pool_b.push_back(static_cast<int>(k));
    auto at = [&](long tick) {
      std::vector<double> p = price;
      p[k] = static_cast<double>(tick) * config.delta_rho;
      return p;
    };
    auto seller_gains = [&](long tick) {
      const auto p = at(tick);
      const auto c = seller_choice(seller, graph, pool_s, p, config.tolerance, static_cast<int>(k), nullptr);
      if (c.empty()) return false;
      return seller_objective(seller, graph, c, p) > base_s[t.seller] + config.tolerance;
    };
    auto buyer_gains = [&](long tick) {
      const auto p = at(tick);
      const auto c = buyer_choice(buyer, graph, pool_b, p, config.tolerance, static_cast<int>(k), nullptr);
      if (c.empty()) return false;
      return buyer_objective(buyer, graph, c, p) > base_b[t.buyer] + config.tolerance;
    };
    // Seller gain rises with price, buyer gain falls: test the lowest
    // price at which the seller gains.
    long lo = 0, hi = ceiling;
    if (!seller_gains(hi)) continue;
    while (lo < hi) {
      const long mid = lo + (hi - lo) / 2;
      if (seller_gains(mid))
        hi = mid;
      else
        lo = mid + 1;
    }
    if (buyer_gains(lo)) rep.blocking.push_back({static_cast<int>(k), static_cast<double>(lo) * config.delta_rho});
  }
  return rep;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << "round,settled,raised,mean_settled_price\n";
  char buf[64];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%.6f", r.mean_settled_price);
    out << r.round << ',' << r.settled << ',' << r.raised << ',' << buf << '\n';
  }
}

}  // namespace p2pgrid
