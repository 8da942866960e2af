#include "p2pgrid/match_system.hpp"

namespace p2pgrid {

using conic::Affine;

TradeGraph build_trade_graph_simple(const PeerSet& peers) {
  TradeGraph graph;
  int id = 1;
  for (std::size_t n = 0; n < peers.sellers.size(); ++n)
    for (std::size_t m = 0; m < peers.buyers.size(); ++m) {
      Trade t;
      t.id = id++;
      t.seller = static_cast<int>(n);
      t.buyer = static_cast<int>(m);
      graph.trades.push_back(t);
    }
  graph.index(peers.sellers.size(), peers.buyers.size());
  return graph;
}

namespace {

void add_bounds(conic::ProgramBuilder& pb, int var, double lo, double hi) {
  if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) {
    pb.add_equality(Affine::var(var) - Affine(lo));
    return;
  }
  pb.add_nonnegative(Affine::var(var) - Affine(lo));
  pb.add_nonnegative(Affine(hi) - Affine::var(var));
}

// Welfare program without the network; returns (x, objective) indices.
struct PeerProgram {
  conic::Program program;
  std::vector<int> g, d, p;
};

PeerProgram build_peer_program(const TradeGraph& graph, const PeerSet& peers) {
  conic::ProgramBuilder pb;
  PeerProgram out;
  for (const auto& s : peers.sellers) {
    const int g = pb.add_variable(s.cost.linear);
    add_bounds(pb, g, s.g_min, s.g_max);
    if (s.cost.quadratic > 0) {
      const int t = pb.add_variable(1.0);
      pb.add_rotated_soc(Affine::var(t), Affine(1.0 / s.cost.quadratic), {Affine::var(g)});
    }
    out.g.push_back(g);
  }
  for (const auto& b : peers.buyers) {
    const int d = pb.add_variable(-b.surplus_value);
    pb.add_objective_constant(b.surplus_value * b.d_min);
    add_bounds(pb, d, b.d_min, b.d_max);
    if (b.utility_quadratic > 0) {
      const int t = pb.add_variable(1.0);
      pb.add_rotated_soc(Affine::var(t), Affine(1.0 / b.utility_quadratic), {Affine::var(d) - Affine(b.d_min)});
    }
    out.d.push_back(d);
  }
  std::vector<Affine> gs(peers.sellers.size()), ds(peers.buyers.size());
  for (const auto& t : graph.trades) {
    const int p = pb.add_variable();
    pb.add_nonnegative(Affine::var(p));
    gs[t.seller].add(p, 1.0);
    ds[t.buyer].add(p, 1.0);
    out.p.push_back(p);
  }
  for (std::size_t n = 0; n < gs.size(); ++n) pb.add_equality(Affine::var(out.g[n]) - gs[n]);
  for (std::size_t n = 0; n < ds.size(); ++n) pb.add_equality(Affine::var(out.d[n]) - ds[n]);
  out.program = pb.assemble();
  return out;
}

void fail_on_status(conic::Status status, const std::string& message) {
  switch (status) {
    case conic::Status::optimal: return;
    case conic::Status::primal_infeasible:
      throw ClearingError("clearing infeasible: peer bounds or network limits are inconsistent (" + message + ")");
    case conic::Status::dual_infeasible:
      throw ClearingError("clearing unbounded: check utility and cost specifications (" + message + ")");
    default: throw ClearingError("clearing failed: " + conic::to_string(status) + " (" + message + ")");
  }
}

}  // namespace

SystemClearing clear_system_centric(TradeGraph graph, const PeerSet& peers, const NetworkCase* net, bool coopt,
                                    const conic::Settings& settings) {
  SystemClearing out;
  std::vector<double> p;
  if (coopt) {
    if (!net) throw std::invalid_argument("co-optimization needs a case");
    OpfInput in;
    in.net = net;
    in.mode = OpfMode::co_optimize;
    in.peers = &peers;
    in.graph = &graph;
    auto sol = solve_opf(build_opf(in), settings);
    if (sol.status == OpfStatus::infeasible)
      throw ClearingError("co-optimization infeasible: peer bounds or network limits are inconsistent (" +
                          sol.message + ")");
    if (!sol.optimal()) throw ClearingError("co-optimization failed: " + sol.message);
    p = sol.trade;
    out.g = sol.g;
    out.d = sol.d;
    out.objective = -sol.objective;
    out.opf = std::move(sol);
  } else {
    const auto prog = build_peer_program(graph, peers);
    const auto res = conic::solve(prog.program, settings);
    fail_on_status(res.status, res.message);
    for (int k : prog.p) p.push_back(res.x[k]);
    for (int k : prog.g) out.g.push_back(res.x[k]);
    for (int k : prog.d) out.d.push_back(res.x[k]);
    out.objective = -res.primal_objective;
  }
  for (std::size_t k = 0; k < graph.trades.size(); ++k) {
    Trade& t = graph.trades[k];
    t.quantity = std::max(0.0, p[k]);
    t.matched = t.quantity > kQuantityFloor;
    if (!t.matched) t.quantity = 0.0;
  }
  out.graph = std::move(graph);
  return out;
}

void settle_system_centric(TradeGraph& graph, const DlmpVector& dlmp, const NetworkCase& net, const PeerSet& peers) {
  if (dlmp.lambda.size() != net.buses.size()) throw std::invalid_argument("settlement needs DLMPs for every bus");
  for (auto& t : graph.trades) {
    const double lb = dlmp.lambda[net.bus_index(peers.buyers[t.buyer].bus)];
    const double ls = dlmp.lambda[net.bus_index(peers.sellers[t.seller].bus)];
    t.charge = (lb - ls) / 2.0;
    t.price = t.rho_s = t.rho_b = (lb + ls) / 2.0;
  }
}

}  // namespace p2pgrid
