#include "p2pgrid/opf.hpp"

#include <cmath>
#include <stdexcept>

namespace p2pgrid {

using conic::Affine;

std::string to_string(OpfStatus status) {
  switch (status) {
    case OpfStatus::optimal: return "optimal";
    case OpfStatus::infeasible: return "infeasible";
    case OpfStatus::numeric_failure: return "numeric-failure";
  }
  return "unknown";
}

namespace {

constexpr double kUnbounded = 1e20;

void add_box(conic::ProgramBuilder& pb, int var, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("inverted bounds");
  if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) {
    pb.add_equality(Affine::var(var) - Affine(lo));
    return;
  }
  if (lo > -kUnbounded) pb.add_nonnegative(Affine::var(var) - Affine(lo));
  if (hi < kUnbounded) pb.add_nonnegative(Affine(hi) - Affine::var(var));
}

// cost q*u^2 through an epigraph variable; u = var - shift
void add_quadratic_cost(conic::ProgramBuilder& pb, int var, double shift, double q) {
  if (q <= 0.0) return;
  const int t = pb.add_variable(1.0);
  pb.add_rotated_soc(Affine::var(t), Affine(1.0 / q), {Affine::var(var) - Affine(shift)});
}

}  // namespace

OpfProgram build_opf(const OpfInput& in) {
  if (!in.net) throw std::invalid_argument("OPF input has no case");
  const NetworkCase& net = *in.net;
  const bool coopt = in.mode == OpfMode::co_optimize;
  if (coopt && (!in.peers || !in.graph)) throw std::invalid_argument("co-optimization needs peers and a trade graph");
  for (const auto& [bus, inj] : in.injections) {
    if (!net.has_bus(bus)) throw std::invalid_argument("injection at unknown bus " + std::to_string(bus));
    if (!std::isfinite(inj.sold_mw) || !std::isfinite(inj.bought_mw))
      throw std::invalid_argument("non-finite injection at bus " + std::to_string(bus));
  }

  const double s = net.base.mva;
  const int nb = static_cast<int>(net.buses.size());
  const int nl = static_cast<int>(net.lines.size());
  conic::ProgramBuilder pb;
  OpfProgram out;
  out.mode = in.mode;
  out.net = &net;

  out.v.resize(nb);
  for (int i = 0; i < nb; ++i) {
    out.v[i] = pb.add_variable();
    add_box(pb, out.v[i], net.buses[i].v_min, net.buses[i].v_max);
  }
  out.fp.resize(nl);
  out.fq.resize(nl);
  out.a.resize(nl);
  for (int l = 0; l < nl; ++l) {
    out.fp[l] = pb.add_variable();
    out.fq[l] = pb.add_variable();
    out.a[l] = pb.add_variable();
  }
  out.p0 = pb.add_variable(net.wholesale_price * s);
  out.q0 = pb.add_variable();
  add_box(pb, out.p0, net.root_supply.p_min, net.root_supply.p_max);
  add_box(pb, out.q0, net.root_supply.q_min, net.root_supply.q_max);
  for (const auto& gen : net.generators) {
    out.pg.push_back(pb.add_variable(gen.cost * s));
    out.qg.push_back(pb.add_variable());
    add_box(pb, out.pg.back(), gen.p_min, gen.p_max);
    add_box(pb, out.qg.back(), gen.q_min, gen.q_max);
  }

  std::vector<Affine> peer_p(nb);  // peer terms of the active balance, p.u.
  std::vector<double> demand(nb);
  out.fixed_sold.assign(nb, 0.0);
  for (int i = 0; i < nb; ++i) demand[i] = (1.0 - net.buses[i].gamma) * net.buses[i].demand_p;

  if (coopt) {
    const PeerSet& peers = *in.peers;
    const TradeGraph& graph = *in.graph;
    for (const auto& seller : peers.sellers) {
      const int g = pb.add_variable(seller.cost.linear);
      add_box(pb, g, seller.g_min, seller.g_max);
      add_quadratic_cost(pb, g, 0.0, seller.cost.quadratic);
      peer_p[net.bus_index(seller.bus)].add(g, -1.0 / s);
      out.g.push_back(g);
      out.seller_bus.push_back(net.bus_index(seller.bus));
    }
    for (const auto& buyer : peers.buyers) {
      const int d = pb.add_variable(-buyer.surplus_value);
      pb.add_objective_constant(buyer.surplus_value * buyer.d_min);
      add_box(pb, d, buyer.d_min, buyer.d_max);
      add_quadratic_cost(pb, d, buyer.d_min, buyer.utility_quadratic);
      peer_p[net.bus_index(buyer.bus)].add(d, 1.0 / s);
      out.d.push_back(d);
      out.buyer_bus.push_back(net.bus_index(buyer.bus));
    }
    std::vector<Affine> seller_sum(peers.sellers.size()), buyer_sum(peers.buyers.size());
    for (const auto& t : graph.trades) {
      const int p = pb.add_variable();
      pb.add_nonnegative(Affine::var(p));
      seller_sum[t.seller].add(p, 1.0);
      buyer_sum[t.buyer].add(p, 1.0);
      out.trade.push_back(p);
    }
    for (std::size_t n = 0; n < peers.sellers.size(); ++n)
      pb.add_equality(Affine::var(out.g[n]) - seller_sum[n]);
    for (std::size_t n = 0; n < peers.buyers.size(); ++n)
      pb.add_equality(Affine::var(out.d[n]) - buyer_sum[n]);
  } else {
    for (const auto& [bus, inj] : in.injections) {
      const int i = net.bus_index(bus);
      demand[i] += inj.bought_mw / s;
      peer_p[i] += Affine(-inj.sold_mw / s);
      out.fixed_sold[i] += inj.sold_mw / s;
    }
  }
  out.fixed_demand = demand;

  double tariff_income = 0.0;
  for (const auto& b : net.buses) tariff_income += b.tariff * b.demand_p * (1.0 - b.gamma) * s;
  out.objective_constant = tariff_income;
  pb.add_objective_constant(-tariff_income);

  std::vector<std::vector<int>> gens_at(nb);
  for (std::size_t k = 0; k < net.generators.size(); ++k) gens_at[net.bus_index(net.generators[k].bus)].push_back(k);

  out.row_p.resize(nb);
  out.row_q.resize(nb);
  for (int i = 0; i < nb; ++i) {
    const Bus& bus = net.buses[i];
    Affine ep = peer_p[i] + Affine(demand[i]);
    Affine eq(bus.demand_q);
    for (int l : net.child_lines(i)) {
      ep.add(out.fp[l], 1.0);
      eq.add(out.fq[l], 1.0);
    }
    if (const int l = net.parent_line(i); l >= 0) {
      ep.add(out.fp[l], -1.0).add(out.a[l], net.lines[l].r);
      eq.add(out.fq[l], -1.0).add(out.a[l], net.lines[l].x);
    }
    for (int k : gens_at[i]) {
      ep.add(out.pg[k], -1.0);
      eq.add(out.qg[k], -1.0);
    }
    if (i == net.root_index()) {
      ep.add(out.p0, -1.0);
      eq.add(out.q0, -1.0);
    }
    ep.add(out.v[i], bus.shunt_g);
    eq.add(out.v[i], -bus.shunt_b);
    out.row_p[i] = pb.add_equality(ep);
    out.row_q[i] = pb.add_equality(eq);
  }

  std::vector<int> fw(nl), bw(nl), rot(nl);
  for (int l = 0; l < nl; ++l) {
    const Line& line = net.lines[l];
    const int o = net.bus_index(line.from), r = net.bus_index(line.to);
    const Affine fp = Affine::var(out.fp[l]), fq = Affine::var(out.fq[l]), a = Affine::var(out.a[l]);
    pb.add_equality(Affine::var(out.v[o]) - 2.0 * (line.r * fp + line.x * fq) +
                    (line.r * line.r + line.x * line.x) * a - Affine::var(out.v[r]));
    fw[l] = pb.add_soc(Affine(line.rating), {fp, fq});
    bw[l] = pb.add_soc(Affine(line.rating), {fp - line.r * a, fq - line.x * a});
    rot[l] = pb.add_rotated_soc(a, Affine::var(out.v[o]), {fp, fq});
  }
  for (int l = 0; l < nl; ++l) {
    out.cone_fw.push_back(pb.soc_offset(fw[l]));
    out.cone_bw.push_back(pb.soc_offset(bw[l]));
    out.cone_rot.push_back(pb.soc_offset(rot[l]));
  }
  out.program = pb.assemble();
  return out;
}

OpfSolution solve_opf(const OpfProgram& prog, const conic::Settings& settings) {
  const NetworkCase& net = *prog.net;
  const double s = net.base.mva;
  const auto res = conic::solve(prog.program, settings);
  OpfSolution sol;
  sol.mode = prog.mode;
  sol.iterations = res.iterations;
  sol.reduced_accuracy = res.reduced_accuracy;
  sol.message = res.message;
  switch (res.status) {
    case conic::Status::optimal: sol.status = OpfStatus::optimal; break;
    case conic::Status::primal_infeasible: sol.status = OpfStatus::infeasible; break;
    case conic::Status::dual_infeasible:
      sol.status = OpfStatus::numeric_failure;
      sol.message = "objective unbounded: " + res.message;
      break;
    default:
      sol.status = OpfStatus::numeric_failure;
      sol.message = conic::to_string(res.status) + ": " + res.message;
  }
  if (!sol.optimal()) return sol;

  const auto& x = res.x;
  const int nb = static_cast<int>(net.buses.size());
  const int nl = static_cast<int>(net.lines.size());
  for (int l = 0; l < nl; ++l) {
    sol.fp_pu.push_back(x[prog.fp[l]]);
    sol.fq_pu.push_back(x[prog.fq[l]]);
    sol.fp.push_back(x[prog.fp[l]] * s);
    sol.fq.push_back(x[prog.fq[l]] * s);
    sol.a.push_back(x[prog.a[l]]);
    const double rating = net.lines[l].rating;
    sol.eta_plus.push_back(res.z[prog.cone_fw[l]] / (2.0 * rating) / s);
    sol.eta_minus.push_back(res.z[prog.cone_bw[l]] / (2.0 * rating) / s);
  }
  // a_l is undetermined on lines whose impedance is too small to price it;
  // pin it to the physical value there when doing so moves no balance.
  for (int i = 0; i < nb; ++i) sol.v.push_back(x[prog.v[i]]);
  for (int l = 0; l < nl; ++l) {
    const Line& line = net.lines[l];
    const double vo = sol.v[net.bus_index(line.from)];
    if (vo <= 0.0) continue;
    const double a_phys = (sol.fp_pu[l] * sol.fp_pu[l] + sol.fq_pu[l] * sol.fq_pu[l]) / vo;
    const double da = std::abs(sol.a[l] - a_phys);
    if (std::max(line.r, line.x) > kNegligibleImpedance) continue;
    if (da * std::max(line.r, line.x) <= 1e-8 && da * (line.r * line.r + line.x * line.x) <= 1e-8) {
      sol.a[l] = a_phys;
      sol.pinned.push_back(l);
    }
  }
  for (int i = 0; i < nb; ++i) {
    sol.lambda.push_back(res.y[prog.row_p[i]] / s);
    sol.mu.push_back(res.y[prog.row_q[i]] / s);
  }
  for (std::size_t k = 0; k < prog.pg.size(); ++k) {
    sol.pg.push_back(x[prog.pg[k]] * s);
    sol.qg.push_back(x[prog.qg[k]] * s);
  }
  sol.p0 = x[prog.p0] * s;
  sol.q0 = x[prog.q0] * s;
  for (int g : prog.g) sol.g.push_back(x[g]);
  for (int d : prog.d) sol.d.push_back(x[d]);
  for (int t : prog.trade) sol.trade.push_back(x[t]);

  sol.demand.assign(nb, 0.0);
  sol.sold.assign(nb, 0.0);
  for (int i = 0; i < nb; ++i) {
    sol.demand[i] = prog.fixed_demand[i] * s;
    sol.sold[i] = prog.fixed_sold[i] * s;
  }
  for (std::size_t n = 0; n < sol.g.size(); ++n) sol.sold[prog.seller_bus[n]] += sol.g[n];
  for (std::size_t n = 0; n < sol.d.size(); ++n) sol.demand[prog.buyer_bus[n]] += sol.d[n];

  sol.objective = res.primal_objective;
  sol.dual_objective = res.dual_objective;
  double gen_cost = net.wholesale_price * sol.p0;
  for (std::size_t k = 0; k < net.generators.size(); ++k) gen_cost += net.generators[k].cost * sol.pg[k];
  sol.o_dist = prog.objective_constant - gen_cost;
  sol.o_p2p = -(sol.objective + sol.o_dist);
  return sol;
}

ExactnessReport check_exactness(const OpfSolution& sol, const NetworkCase& net, double tolerance) {
  ExactnessReport rep;
  for (std::size_t l = 0; l < net.lines.size(); ++l) {
    const double vo = sol.v[net.bus_index(net.lines[l].from)];
    const double av = sol.a[l] * vo;
    const double gap = (av - sol.fp_pu[l] * sol.fp_pu[l] - sol.fq_pu[l] * sol.fq_pu[l]) / std::max(1.0, av);
    rep.gap.push_back(gap);
    rep.max_gap = std::max(rep.max_gap, std::abs(gap));
    if (std::abs(gap) > tolerance) rep.flagged.push_back(static_cast<int>(l));
  }
  return rep;
}

double max_balance_residual(const OpfSolution& sol, const NetworkCase& net) {
  const double s = net.base.mva;
  const int nb = static_cast<int>(net.buses.size());
  std::vector<double> rp(nb), rq(nb);
  for (int i = 0; i < nb; ++i) {
    const Bus& b = net.buses[i];
    rp[i] = (sol.demand[i] - sol.sold[i]) / s + b.shunt_g * sol.v[i];
    rq[i] = b.demand_q - b.shunt_b * sol.v[i];
  }
  for (std::size_t l = 0; l < net.lines.size(); ++l) {
    const Line& line = net.lines[l];
    const int o = net.bus_index(line.from), r = net.bus_index(line.to);
    rp[o] += sol.fp_pu[l];
    rq[o] += sol.fq_pu[l];
    rp[r] -= sol.fp_pu[l] - sol.a[l] * line.r;
    rq[r] -= sol.fq_pu[l] - sol.a[l] * line.x;
  }
  for (std::size_t k = 0; k < net.generators.size(); ++k) {
    const int i = net.bus_index(net.generators[k].bus);
    rp[i] -= sol.pg[k] / s;
    rq[i] -= sol.qg[k] / s;
  }
  rp[net.root_index()] -= sol.p0 / s;
  rq[net.root_index()] -= sol.q0 / s;
  double worst = 0.0;
  for (int i = 0; i < nb; ++i) worst = std::max({worst, std::abs(rp[i]), std::abs(rq[i])});
  return worst;
}

std::vector<double> line_loading_percent(const OpfSolution& sol, const NetworkCase& net) {
  std::vector<double> out;
  for (std::size_t l = 0; l < net.lines.size(); ++l) {
    const Line& line = net.lines[l];
    const double fw = std::hypot(sol.fp_pu[l], sol.fq_pu[l]);
    const double bw = std::hypot(sol.fp_pu[l] - sol.a[l] * line.r, sol.fq_pu[l] - sol.a[l] * line.x);
    out.push_back(100.0 * std::max(fw, bw) / line.rating);
  }
  return out;
}

}  // namespace p2pgrid
