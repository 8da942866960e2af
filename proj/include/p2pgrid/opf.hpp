// Second-order-cone branch-flow OPF.
//
// Formulated as cost minimisation in $/h over per-unit network variables;
// peer quantities stay in MW. Reported duals are divided by the MVA base,
// so lambda and mu read in $/MWh and the rating multipliers apply to the
// squared per-unit rating constraints with the same scaling.
#pragma once

#include "p2pgrid/conic.hpp"
#include "p2pgrid/network.hpp"
#include "p2pgrid/trade.hpp"

#include <map>
#include <string>
#include <vector>

namespace p2pgrid {

enum class OpfMode { fixed_injections, co_optimize };

struct BusInjection {
  double sold_mw = 0.0;    // g^p
  double bought_mw = 0.0;  // sum of d^p of buyers at the bus
};

struct OpfInput {
  const NetworkCase* net = nullptr;
  OpfMode mode = OpfMode::fixed_injections;
  std::map<int, BusInjection> injections;  // by bus id, fixed mode
  const PeerSet* peers = nullptr;          // co-optimize mode
  const TradeGraph* graph = nullptr;       // co-optimize mode
};

/// Conic program plus the variable and row maps needed to read it back.
struct OpfProgram {
  conic::Program program;
  OpfMode mode = OpfMode::fixed_injections;
  const NetworkCase* net = nullptr;
  double objective_constant = 0.0;  // sum T_b D_b (1 - Gamma_b), $/h

  std::vector<int> fp, fq, a;  // per line
  std::vector<int> v;          // per bus
  int p0 = -1, q0 = -1;
  std::vector<int> pg, qg;  // per generator
  std::vector<int> g, d;    // per seller / buyer, MW
  std::vector<int> trade;   // per trade, MW
  std::vector<int> row_p, row_q;      // balance rows per bus
  std::vector<int> cone_fw, cone_bw;  // z offsets per line
  std::vector<int> cone_rot;
  std::vector<double> fixed_demand;  // constant part of D^p per bus, p.u.
  std::vector<double> fixed_sold;    // constant peer injection per bus, p.u.
  std::vector<int> seller_bus, buyer_bus;  // bus positions of peers

  int active_balance_rows() const { return static_cast<int>(row_p.size()); }
  int rotated_cones() const { return static_cast<int>(cone_rot.size()); }
  int rating_cones() const { return static_cast<int>(cone_fw.size() + cone_bw.size()); }
};

enum class OpfStatus { optimal, infeasible, numeric_failure };

std::string to_string(OpfStatus status);

/// Lines with max(R, X) at or below this (p.u.) leave a_l undetermined.
constexpr double kNegligibleImpedance = 1e-5;

struct OpfSolution {
  OpfStatus status = OpfStatus::numeric_failure;
  OpfMode mode = OpfMode::fixed_injections;
  std::string message;
  bool reduced_accuracy = false;
  int iterations = 0;

  std::vector<double> fp, fq;  // MW, MVAr
  std::vector<double> fp_pu, fq_pu;
  std::vector<double> a;       // p.u.
  std::vector<int> pinned;     // lines whose a was set from the flows
  std::vector<double> v;       // p.u., squared magnitude
  std::vector<double> pg, qg;  // MW, MVAr per generator
  double p0 = 0.0, q0 = 0.0;   // root import, MW / MVAr
  std::vector<double> g, d;    // co-optimized peer quantities, MW
  std::vector<double> trade;   // co-optimized trade quantities, MW
  std::vector<double> demand;  // effective D^p per bus, MW
  std::vector<double> sold;    // g^p injected per bus, MW

  double objective = 0.0;       // solver objective, $/h (cost orientation)
  double dual_objective = 0.0;
  double o_dist = 0.0;          // utility profit
  double o_p2p = 0.0;           // peer welfare (co-optimize mode)

  std::vector<double> lambda, mu;           // $/MWh per bus
  std::vector<double> eta_plus, eta_minus;  // per line

  bool optimal() const { return status == OpfStatus::optimal; }
};

OpfProgram build_opf(const OpfInput& input);
OpfSolution solve_opf(const OpfProgram& program, const conic::Settings& settings = {});
inline OpfSolution solve_opf(const OpfInput& input) { return solve_opf(build_opf(input)); }

struct ExactnessReport {
  std::vector<double> gap;  // per line
  std::vector<int> flagged;
  double max_gap = 0.0;
  bool exact() const { return flagged.empty(); }
};

ExactnessReport check_exactness(const OpfSolution& sol, const NetworkCase& net, double tolerance = 1e-6);

/// Balance residuals of the active/reactive rows at the reported primal
/// point, p.u.
double max_balance_residual(const OpfSolution& sol, const NetworkCase& net);

/// Line loading in percent of the rating (max of both ends).
std::vector<double> line_loading_percent(const OpfSolution& sol, const NetworkCase& net);

}  // namespace p2pgrid
