// Conic program container and primal-dual interior point solver.
//
// Standard form:
//   minimize    c'x
//   subject to  A x = b
//               G x + s = h,   s in K
// where K is a product of a nonnegative orthant followed by second-order
// cones { (t, u) : ||u|| <= t }. The dual is
//   maximize   -b'y - h'z   subject to  A'y + G'z + c = 0,  z in K.
#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace p2pgrid::conic {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

struct ConeDims {
  int orthant = 0;
  std::vector<int> soc;

  int rows() const;
  // Number of cones counted with their barrier degree (orthant entries
  // count once each, every second-order cone counts once).
  int degree() const;
};

struct Program {
  Eigen::VectorXd c;
  SparseMatrix A;
  Eigen::VectorXd b;
  SparseMatrix G;
  Eigen::VectorXd h;
  ConeDims cones;
  double objective_offset = 0.0;

  int num_variables() const { return static_cast<int>(c.size()); }
  // Throws std::invalid_argument on inconsistent dimensions.
  void validate() const;
};

/// Sparse affine expression sum_i coef_i * x[var_i] + constant.
struct Affine {
  std::vector<std::pair<int, double>> terms;
  double constant = 0.0;

  Affine() = default;
  Affine(double value) : constant(value) {}
  static Affine var(int index, double coef = 1.0) {
    Affine a;
    a.terms.emplace_back(index, coef);
    return a;
  }
  Affine& add(int index, double coef) {
    if (coef != 0.0) terms.emplace_back(index, coef);
    return *this;
  }
  Affine& operator+=(const Affine& other);
  Affine& operator*=(double factor);
};

Affine operator+(Affine lhs, const Affine& rhs);
Affine operator-(Affine lhs, const Affine& rhs);
Affine operator*(double factor, Affine rhs);

/// Incremental builder; rows can be added in any order and are arranged
/// into orthant-then-SOC order by assemble().
class ProgramBuilder {
 public:
  int add_variable(double cost = 0.0);
  int num_variables() const { return static_cast<int>(cost_.size()); }
  void set_cost(int var, double cost) { cost_.at(var) = cost; }
  void add_cost(int var, double cost) { cost_.at(var) += cost; }
  void add_objective_constant(double value) { offset_ += value; }

  /// expr == 0; returns the equality row index (dual y index).
  int add_equality(const Affine& expr);
  /// expr >= 0; returns the orthant row index (dual z index).
  int add_nonnegative(const Affine& expr);
  /// ||(u_1..u_k)|| <= t; returns the index of the cone among SOCs.
  int add_soc(const Affine& t, const std::vector<Affine>& u);
  /// sum u_i^2 <= p*q with p, q >= 0, encoded as a standard cone of
  /// dimension k+2; returns the SOC index.
  int add_rotated_soc(const Affine& p, const Affine& q, const std::vector<Affine>& u);

  int num_equalities() const { return static_cast<int>(eq_rhs_.size()); }
  int num_orthant_rows() const { return static_cast<int>(lin_rows_.size()); }
  int num_socs() const { return static_cast<int>(soc_rows_.size()); }
  /// Offset of SOC k inside the z vector after assembly.
  int soc_offset(int k) const;

  Program assemble() const;

 private:
  std::vector<double> cost_;
  double offset_ = 0.0;
  std::vector<Eigen::Triplet<double>> eq_terms_;
  std::vector<double> eq_rhs_;
  std::vector<Affine> lin_rows_;
  std::vector<std::vector<Affine>> soc_rows_;
};

enum class Status { optimal, primal_infeasible, dual_infeasible, max_iterations, numeric_failure };

std::string to_string(Status status);

struct Settings {
  double feastol = 1e-8;
  double abstol = 1e-8;
  double reltol = 1e-8;
  // Looser tolerances accepted when progress stalls.
  double feastol_inacc = 1e-5;
  double abstol_inacc = 5e-5;
  double reltol_inacc = 5e-5;
  int max_iterations = 150;
  double static_regularization = 1e-9;
  int refinement_steps = 5;
  bool verbose = false;
};

struct Result {
  Status status = Status::numeric_failure;
  bool reduced_accuracy = false;
  Eigen::VectorXd x, y, z, s;
  double primal_objective = 0.0;
  double dual_objective = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double gap = 0.0;
  int iterations = 0;
  std::string message;
};

/// Homogeneous self-dual embedding, Nesterov-Todd scaling, Mehrotra
/// predictor-corrector. Returns scaled-back (x, y, z, s) when optimal and
/// unnormalised certificates when infeasible.
Result solve(const Program& program, const Settings& settings = {});

/// Text dump for cross-checking with external solvers. Format:
///   CONIC 1
///   n <vars> p <eq rows> m <cone rows>
///   cones l <orthant> q <k> <dims...>
///   c <n values>            objective_offset <value>
///   A <nnz>   then lines "i j v" (0-based)
///   b <p values>
///   G <nnz>   then lines "i j v"
///   h <m values>
void write_program(std::ostream& out, const Program& program);

}  // namespace p2pgrid::conic
