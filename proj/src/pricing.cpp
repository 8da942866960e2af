#include "p2pgrid/pricing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>

namespace p2pgrid {

LineCoefficients line_coefficients(double fp, double fq, double a, double r, double x) {
  LineCoefficients c;
  const double f2 = fp * fp + fq * fq;
  const double z2 = r * r + x * x;
  c.den = f2 * x - a * fq * z2;
  if (std::abs(c.den) < kDegenerateDenominator) return c;
  const double den = c.den;
  c.a1 = (f2 * x + a * fq * (r * r - x * x) - 2.0 * a * fp * r * x) / den;
  c.a2 = (f2 * r - a * fp * z2) / den;
  c.a3 = (-f2 * r + a * fp * (r * r - x * x) + 2.0 * a * fq * r * x) / den;
  const double cubic = 2.0 * (fq * fq * fq * r - fp * fp * fp * x) + 2.0 * fp * fq * (fp * r - fq * x);
  c.a4 = cubic / den;
  const double rest = 2.0 * a * a * (fq * r * r * r - fp * x * x * x) - 4.0 * a * fp * fq * (r * r - x * x) +
                      4.0 * a * r * x * (fp * fp - fq * fq) - 2.0 * a * a * r * x * (fp * r - fq * x);
  c.a5 = (cubic + rest) / den;
  const double cubic_doubled = 2.0 * (fq * fq * fq * r - 2.0 * fp * fp * fp * x) + 2.0 * fp * fq * (fp * r - fq * x);
  c.a5_doubled = (cubic_doubled + rest) / den;
  return c;
}

DlmpVector recover_dlmp(const OpfSolution& sol, const NetworkCase& net) {
  DlmpVector out;
  out.lambda = sol.lambda;
  out.mu = sol.mu;
  out.eta_plus = sol.eta_plus;
  out.eta_minus = sol.eta_minus;
  const std::size_t nl = net.lines.size();
  out.reconstructed.assign(nl, 0.0);
  out.residual.assign(nl, 0.0);
  out.residual_doubled.assign(nl, 0.0);
  out.degenerate.assign(nl, 0);
  for (std::size_t l = 0; l < nl; ++l) {
    const Line& line = net.lines[l];
    const int o = net.bus_index(line.from), r = net.bus_index(line.to);
    const auto c = line_coefficients(sol.fp_pu[l], sol.fq_pu[l], sol.a[l], line.r, line.x);
    if (std::abs(c.den) < kDegenerateDenominator) {
      out.degenerate[l] = 1;
      out.reconstructed[l] = out.lambda[o];
      continue;
    }
    const double base = c.a1 * out.lambda[r] + c.a2 * out.mu[o] + c.a3 * out.mu[r] + c.a4 * out.eta_plus[l];
    out.reconstructed[l] = base + c.a5 * out.eta_minus[l];
    out.residual[l] = std::abs(out.lambda[o] - out.reconstructed[l]);
    out.residual_doubled[l] = std::abs(out.lambda[o] - base - c.a5_doubled * out.eta_minus[l]);
  }
  return out;
}

double DlmpVector::max_relative_residual(const NetworkCase& net, bool doubled) const {
  double worst = 0.0;
  for (std::size_t l = 0; l < residual.size(); ++l) {
    if (degenerate[l]) continue;
    const double lam = lambda[net.bus_index(net.lines[l].from)];
    worst = std::max(worst, (doubled ? residual_doubled[l] : residual[l]) / std::max(1.0, std::abs(lam)));
  }
  return worst;
}

double trade_charge(const DlmpVector& dlmp, const NetworkCase& net, const PeerSet& peers, const Trade& trade) {
  const int b = net.bus_index(peers.buyers.at(trade.buyer).bus);
  const int s = net.bus_index(peers.sellers.at(trade.seller).bus);
  return (dlmp.lambda.at(b) - dlmp.lambda.at(s)) / 2.0;
}

void apply_charges(TradeGraph& graph, const DlmpVector& dlmp, const NetworkCase& net, const PeerSet& peers) {
  for (auto& t : graph.trades) t.charge = trade_charge(dlmp, net, peers, t);
}

double network_usage_charge(const TradeGraph& graph) {
  double total = 0.0;
  for (const auto& t : graph.trades)
    if (t.matched) total += 2.0 * t.charge * t.quantity;
  return total;
}

std::optional<double> average_charge(const TradeGraph& graph) {
  double cp = 0.0, p = 0.0;
  for (const auto& t : graph.trades)
    if (t.matched) {
      cp += t.charge * t.quantity;
      p += t.quantity;
    }
  if (p <= 0.0) return std::nullopt;
  return cp / p;
}

Settlement settle(const TradeGraph& graph, const PeerSet& peers) {
  Settlement s;
  std::vector<double> g(peers.sellers.size(), 0.0), d(peers.buyers.size(), 0.0);
  for (const auto& t : graph.trades) {
    if (!t.matched) continue;
    s.consumer_payments += (t.price + t.charge) * t.quantity;
    s.producer_revenues += (t.price - t.charge) * t.quantity;
    s.nuc += 2.0 * t.charge * t.quantity;
    s.volume += t.quantity;
    g[t.seller] += t.quantity;
    d[t.buyer] += t.quantity;
    ++s.matched_trades;
  }
  for (std::size_t n = 0; n < g.size(); ++n) s.generation_cost += peers.sellers[n].cost(g[n]);
  for (std::size_t n = 0; n < d.size(); ++n) s.buyer_utility += peers.buyers[n].utility(d[n]);
  s.average_charge = average_charge(graph);
  return s;
}

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::current: return "current";
    case Architecture::mixed: return "mixed";
    case Architecture::p2p: return "p2p";
  }
  return "unknown";
}

RevenueReport utility_revenue(const NetworkCase& net, const TradeGraph& graph, Architecture arch) {
  RevenueReport rep;
  rep.architecture = arch;
  const double s = net.base.mva;
  switch (arch) {
    case Architecture::current:
      for (const auto& b : net.buses) rep.tariff_income += b.tariff * b.demand_p * s;
      break;
    case Architecture::mixed:
      for (const auto& b : net.buses) rep.tariff_income += b.tariff * b.demand_p * (1.0 - b.gamma) * s;
      rep.nuc_income = network_usage_charge(graph);
      break;
    case Architecture::p2p:
      rep.nuc_income = network_usage_charge(graph);
      break;
  }
  rep.total = rep.tariff_income + rep.nuc_income;
  return rep;
}

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", std::abs(v) < 5e-7 ? 0.0 : v);  // no negative zero
  return buf;
}

}  // namespace

void write_bus_csv(std::ostream& out, const NetworkCase& net, const OpfSolution& sol, const DlmpVector& dlmp) {
  out << "bus,v_mag_pu,lambda_usd_mwh,mu_usd_mvarh,demand_mw,sold_mw\n";
  std::vector<int> order(net.buses.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) { return net.buses[i].id < net.buses[j].id; });
  for (int i : order)
    out << net.buses[i].id << ',' << num(std::sqrt(std::max(0.0, sol.v[i]))) << ',' << num(dlmp.lambda[i]) << ','
        << num(dlmp.mu[i]) << ',' << num(sol.demand[i]) << ',' << num(sol.sold[i]) << '\n';
}

void write_line_csv(std::ostream& out, const NetworkCase& net, const OpfSolution& sol, const DlmpVector& dlmp) {
  const auto loading = line_loading_percent(sol, net);
  const auto gaps = check_exactness(sol, net).gap;
  out << "line,from,to,fp_mw,fq_mvar,loading_pct,soc_gap,eta_plus,eta_minus,dlmp_residual,degenerate\n";
  std::vector<int> order(net.lines.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) { return net.lines[i].id < net.lines[j].id; });
  for (int l : order) {
    const Line& line = net.lines[l];
    out << line.id << ',' << line.from << ',' << line.to << ',' << num(sol.fp[l]) << ',' << num(sol.fq[l]) << ','
        << num(loading[l]) << ',' << num(gaps[l]) << ',' << num(dlmp.eta_plus[l]) << ',' << num(dlmp.eta_minus[l])
        << ',' << num(dlmp.residual[l]) << ',' << int(dlmp.degenerate[l]) << '\n';
  }
}

void write_trades_csv(std::ostream& out, const NetworkCase& net, const PeerSet& peers, const TradeGraph& graph) {
  (void)net;
  out << "trade,seller,seller_bus,buyer,buyer_bus,quantity_mw,price_usd_mwh,charge_usd_mwh\n";
  std::vector<const Trade*> rows;
  for (const auto& t : graph.trades)
    if (t.matched) rows.push_back(&t);
  std::sort(rows.begin(), rows.end(), [](const Trade* a, const Trade* b) { return a->id < b->id; });
  for (const Trade* t : rows) {
    const auto& s = peers.sellers[t->seller];
    const auto& b = peers.buyers[t->buyer];
    out << t->id << ',' << s.id << ',' << s.bus << ',' << b.id << ',' << b.bus << ',' << num(t->quantity) << ','
        << num(t->price) << ',' << num(t->charge) << '\n';
  }
}

}  // namespace p2pgrid
