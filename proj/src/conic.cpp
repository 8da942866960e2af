#include "p2pgrid/conic.hpp"

#include <Eigen/Dense>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace p2pgrid::conic {

int ConeDims::rows() const {
  int r = orthant;
  for (int d : soc) r += d;
  return r;
}

int ConeDims::degree() const { return orthant + static_cast<int>(soc.size()); }

void Program::validate() const {
  const auto n = c.size();
  if (A.cols() != n || G.cols() != n) throw std::invalid_argument("conic program: column count mismatch");
  if (A.rows() != b.size()) throw std::invalid_argument("conic program: A/b row mismatch");
  if (G.rows() != h.size()) throw std::invalid_argument("conic program: G/h row mismatch");
  if (cones.rows() != h.size()) throw std::invalid_argument("conic program: cone dimensions do not cover h");
  for (int d : cones.soc)
    if (d < 2) throw std::invalid_argument("conic program: second-order cone of dimension < 2");
}

Affine& Affine::operator+=(const Affine& other) {
  terms.insert(terms.end(), other.terms.begin(), other.terms.end());
  constant += other.constant;
  return *this;
}

Affine& Affine::operator*=(double factor) {
  for (auto& t : terms) t.second *= factor;
  constant *= factor;
  return *this;
}

Affine operator+(Affine lhs, const Affine& rhs) { return lhs += rhs; }
Affine operator-(Affine lhs, const Affine& rhs) {
  Affine neg = rhs;
  neg *= -1.0;
  return lhs += neg;
}
Affine operator*(double factor, Affine rhs) { return rhs *= factor; }

int ProgramBuilder::add_variable(double cost) {
  cost_.push_back(cost);
  return static_cast<int>(cost_.size()) - 1;
}

int ProgramBuilder::add_equality(const Affine& expr) {
  const int row = static_cast<int>(eq_rhs_.size());
  for (const auto& [var, coef] : expr.terms) eq_terms_.emplace_back(row, var, coef);
  eq_rhs_.push_back(-expr.constant);
  return row;
}

int ProgramBuilder::add_nonnegative(const Affine& expr) {
  lin_rows_.push_back(expr);
  return static_cast<int>(lin_rows_.size()) - 1;
}

int ProgramBuilder::add_soc(const Affine& t, const std::vector<Affine>& u) {
  std::vector<Affine> rows;
  rows.reserve(u.size() + 1);
  rows.push_back(t);
  rows.insert(rows.end(), u.begin(), u.end());
  soc_rows_.push_back(std::move(rows));
  return static_cast<int>(soc_rows_.size()) - 1;
}

int ProgramBuilder::add_rotated_soc(const Affine& p, const Affine& q, const std::vector<Affine>& u) {
  // sum u^2 <= p q  <=>  ||(2u, p - q)|| <= p + q
  std::vector<Affine> rows;
  rows.reserve(u.size() + 1);
  for (const auto& ui : u) rows.push_back(2.0 * ui);
  rows.push_back(p - q);
  return add_soc(p + q, rows);
}

int ProgramBuilder::soc_offset(int k) const {
  int off = num_orthant_rows();
  for (int i = 0; i < k; ++i) off += static_cast<int>(soc_rows_[i].size());
  return off;
}

Program ProgramBuilder::assemble() const {
  Program prog;
  const int n = num_variables();
  prog.c = Eigen::Map<const Eigen::VectorXd>(cost_.data(), n);
  prog.objective_offset = offset_;

  prog.A.resize(num_equalities(), n);
  prog.A.setFromTriplets(eq_terms_.begin(), eq_terms_.end());
  prog.b = Eigen::Map<const Eigen::VectorXd>(eq_rhs_.data(), static_cast<Eigen::Index>(eq_rhs_.size()));

  // s = expr = h - G x  =>  G row = -coefs, h = constant
  std::vector<Eigen::Triplet<double>> g_terms;
  std::vector<double> h;
  int row = 0;
  auto emit = [&](const Affine& expr) {
    for (const auto& [var, coef] : expr.terms) g_terms.emplace_back(row, var, -coef);
    h.push_back(expr.constant);
    ++row;
  };
  for (const auto& r : lin_rows_) emit(r);
  prog.cones.orthant = num_orthant_rows();
  for (const auto& cone : soc_rows_) {
    for (const auto& r : cone) emit(r);
    prog.cones.soc.push_back(static_cast<int>(cone.size()));
  }
  prog.G.resize(row, n);
  prog.G.setFromTriplets(g_terms.begin(), g_terms.end());
  prog.h = Eigen::Map<const Eigen::VectorXd>(h.data(), static_cast<Eigen::Index>(h.size()));
  prog.validate();
  return prog;
}

std::string to_string(Status status) {
  switch (status) {
    case Status::optimal: return "optimal";
    case Status::primal_infeasible: return "primal-infeasible";
    case Status::dual_infeasible: return "dual-infeasible";
    case Status::max_iterations: return "max-iterations";
    case Status::numeric_failure: return "numeric-failure";
  }
  return "unknown";
}

namespace {

using Eigen::VectorXd;

// Nesterov-Todd scaling for the whole cone product.
struct Scaling {
  VectorXd orthant_w;                      // sqrt(s/z)
  std::vector<double> soc_eta;             // eta
  std::vector<Eigen::VectorXd> soc_wbar;   // normalized scaling point
  std::vector<Eigen::MatrixXd> soc_wsq;    // W^2 (dense, small)
};

class ConeOps {
 public:
  explicit ConeOps(const ConeDims& dims) : dims_(dims) {
    int off = dims.orthant;
    for (int d : dims.soc) {
      offsets_.push_back(off);
      off += d;
    }
  }

  const ConeDims& dims() const { return dims_; }
  int soc_offset(std::size_t k) const { return offsets_[k]; }

  // Smallest alpha with u + alpha*e in K (e = identity element).
  double shift_needed(const VectorXd& u) const {
    double alpha = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < dims_.orthant; ++i) alpha = std::max(alpha, -u[i]);
    for (std::size_t k = 0; k < dims_.soc.size(); ++k) {
      const int o = offsets_[k], d = dims_.soc[k];
      alpha = std::max(alpha, u.segment(o + 1, d - 1).norm() - u[o]);
    }
    return alpha;
  }

  void add_identity(VectorXd& u, double t) const {
    for (int i = 0; i < dims_.orthant; ++i) u[i] += t;
    for (int o : offsets_) u[o] += t;
  }

  bool interior(const VectorXd& u) const {
    for (int i = 0; i < dims_.orthant; ++i)
      if (!(u[i] > 0)) return false;
    for (std::size_t k = 0; k < dims_.soc.size(); ++k) {
      const int o = offsets_[k], d = dims_.soc[k];
      if (!(u[o] > u.segment(o + 1, d - 1).norm())) return false;
    }
    return true;
  }

  bool compute_scaling(const VectorXd& s, const VectorXd& z, Scaling& w, VectorXd& lambda) const {
    const int m = static_cast<int>(s.size());
    lambda.resize(m);
    w.orthant_w.resize(dims_.orthant);
    for (int i = 0; i < dims_.orthant; ++i) {
      if (!(s[i] > 0 && z[i] > 0)) return false;
      w.orthant_w[i] = std::sqrt(s[i] / z[i]);
      lambda[i] = std::sqrt(s[i] * z[i]);
    }
    const std::size_t nsoc = dims_.soc.size();
    w.soc_eta.resize(nsoc);
    w.soc_wbar.resize(nsoc);
    w.soc_wsq.resize(nsoc);
    for (std::size_t k = 0; k < nsoc; ++k) {
      const int o = offsets_[k], d = dims_.soc[k];
      const VectorXd sk = s.segment(o, d);
      const VectorXd zk = z.segment(o, d);
      const double s_res = sk[0] * sk[0] - sk.tail(d - 1).squaredNorm();
      const double z_res = zk[0] * zk[0] - zk.tail(d - 1).squaredNorm();
      if (!(s_res > 0 && z_res > 0 && sk[0] > 0 && zk[0] > 0)) return false;
      const VectorXd sn = sk / std::sqrt(s_res);
      const VectorXd zn = zk / std::sqrt(z_res);
      const double gamma = std::sqrt((1.0 + sn.dot(zn)) / 2.0);
      VectorXd wbar(d);
      wbar[0] = (sn[0] + zn[0]) / (2.0 * gamma);
      wbar.tail(d - 1) = (sn.tail(d - 1) - zn.tail(d - 1)) / (2.0 * gamma);
      const double eta = std::pow(s_res / z_res, 0.25);
      w.soc_eta[k] = eta;
      w.soc_wbar[k] = wbar;
      Eigen::MatrixXd wmat(d, d);
      wmat(0, 0) = wbar[0];
      wmat.block(0, 1, 1, d - 1) = wbar.tail(d - 1).transpose();
      wmat.block(1, 0, d - 1, 1) = wbar.tail(d - 1);
      wmat.block(1, 1, d - 1, d - 1) = Eigen::MatrixXd::Identity(d - 1, d - 1) +
                                       wbar.tail(d - 1) * wbar.tail(d - 1).transpose() / (1.0 + wbar[0]);
      w.soc_wsq[k] = eta * eta * wmat * wmat;
      lambda.segment(o, d) = eta * (wmat * zk);
    }
    return true;
  }

  // W v
  VectorXd apply_w(const Scaling& w, const VectorXd& v) const {
    VectorXd out(v.size());
    for (int i = 0; i < dims_.orthant; ++i) out[i] = w.orthant_w[i] * v[i];
    for (std::size_t k = 0; k < dims_.soc.size(); ++k) {
      const int o = offsets_[k], d = dims_.soc[k];
      out.segment(o, d) = w.soc_eta[k] * apply_wbar(w.soc_wbar[k], v.segment(o, d));
    }
    return out;
  }

  // W^{-1} v
  VectorXd apply_winv(const Scaling& w, const VectorXd& v) const {
    VectorXd out(v.size());
    for (int i = 0; i < dims_.orthant; ++i) out[i] = v[i] / w.orthant_w[i];
    for (std::size_t k = 0; k < dims_.soc.size(); ++k) {
      const int o = offsets_[k], d = dims_.soc[k];
      VectorXd jv = v.segment(o, d);
      jv.tail(d - 1) *= -1.0;
      VectorXd r = apply_wbar(w.soc_wbar[k], jv);
      r.tail(d - 1) *= -1.0;
      out.segment(o, d) = r / w.soc_eta[k];
    }
    return out;
  }

  // W^2 v
  VectorXd apply_wsq(const Scaling& w, const VectorXd& v) const {
    VectorXd out(v.size());
    for (int i = 0; i < dims_.orthant; ++i) out[i] = w.orthant_w[i] * w.orthant_w[i] * v[i];
    for (std::size_t k = 0; k < dims_.soc.size(); ++k) {
      const int o = offsets_[k], d = dims_.soc[k];
      out.segment(o, d) = w.soc_wsq[k] * v.segment(o, d);
    }
    return out;
  }

  // Jordan product u o v
  VectorXd jordan(const VectorXd& u, const VectorXd& v) const {
    VectorXd out(u.size());
    for (int i = 0; i < dims_.orthant; ++i) out[i] = u[i] * v[i];
    for (std::size_t k = 0; k < dims_.soc.size(); ++k) {
      const int o = offsets_[k], d = dims_.soc[k];
      out[o] = u.segment(o, d).dot(v.segment(o, d));
      out.segment(o + 1, d - 1) = u[o] * v.segment(o + 1, d - 1) + v[o] * u.segment(o + 1, d - 1);
    }
    return out;
  }

  // x with u o x = v
  VectorXd jordan_solve(const VectorXd& u, const VectorXd& v) const {
    VectorXd out(u.size());
    for (int i = 0; i < dims_.orthant; ++i) out[i] = v[i] / u[i];
    for (std::size_t k = 0; k < dims_.soc.size(); ++k) {
      const int o = offsets_[k], d = dims_.soc[k];
      const double u0 = u[o];
      const auto ub = u.segment(o + 1, d - 1);
      const auto vb = v.segment(o + 1, d - 1);
      const double det = u0 * u0 - ub.squaredNorm();
      const double x0 = (u0 * v[o] - ub.dot(vb)) / det;
      out[o] = x0;
      out.segment(o + 1, d - 1) = (vb - x0 * ub) / u0;
    }
    return out;
  }

  void add_identity_scaled(VectorXd& u, double t) const { add_identity(u, t); }

  // Largest alpha in [0, inf) with lambda + alpha*d in K, lambda interior.
  double max_step(const VectorXd& lambda, const VectorXd& d) const {
    double alpha = std::numeric_limits<double>::infinity();
    for (int i = 0; i < dims_.orthant; ++i)
      if (d[i] < 0) alpha = std::min(alpha, -lambda[i] / d[i]);
    for (std::size_t k = 0; k < dims_.soc.size(); ++k) {
      const int o = offsets_[k], dim = dims_.soc[k];
      const auto l = lambda.segment(o, dim);
      const auto dd = d.segment(o, dim);
      const double qa = dd[0] * dd[0] - dd.tail(dim - 1).squaredNorm();
      const double qb = l[0] * dd[0] - l.tail(dim - 1).dot(dd.tail(dim - 1));
      const double qc = l[0] * l[0] - l.tail(dim - 1).squaredNorm();
      const double disc = qb * qb - qa * qc;
      if (disc < 0) continue;
      const double t = -qb + std::sqrt(disc);
      if (t > 0) alpha = std::min(alpha, qc / t);
    }
    return alpha;
  }

  VectorXd identity(int m) const {
    VectorXd e = VectorXd::Zero(m);
    add_identity(e, 1.0);
    return e;
  }

 private:
  static VectorXd apply_wbar(const VectorXd& wbar, const VectorXd& v) {
    const int d = static_cast<int>(v.size());
    VectorXd out(d);
    const double w0 = wbar[0];
    const auto w1 = wbar.tail(d - 1);
    const double w1v = w1.dot(v.tail(d - 1));
    out[0] = w0 * v[0] + w1v;
    out.tail(d - 1) = v.tail(d - 1) + (v[0] + w1v / (1.0 + w0)) * w1;
    return out;
  }

  ConeDims dims_;
  std::vector<int> offsets_;
};

// Quasi-definite KKT system
//   [ dI   A'   G'       ]
//   [ A   -dI   0        ]
//   [ G    0   -W^2 - dI ]
class KktSystem {
 public:
  KktSystem(const Program& prog, const ConeOps& cones, double reg, int refine)
      : prog_(prog), cones_(cones), reg_(reg), refine_(refine) {
    n_ = prog.num_variables();
    p_ = static_cast<int>(prog.A.rows());
    m_ = static_cast<int>(prog.G.rows());
    const int dim = n_ + p_ + m_;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(prog.A.nonZeros() + prog.G.nonZeros() + dim + 16 * cones.dims().soc.size());
    for (int i = 0; i < n_; ++i) trip.emplace_back(i, i, reg_);
    for (int j = 0; j < prog.A.outerSize(); ++j)
      for (SparseMatrix::InnerIterator it(prog.A, j); it; ++it) trip.emplace_back(n_ + it.row(), j, it.value());
    for (int j = 0; j < prog.G.outerSize(); ++j)
      for (SparseMatrix::InnerIterator it(prog.G, j); it; ++it) trip.emplace_back(n_ + p_ + it.row(), j, it.value());
    for (int i = 0; i < p_; ++i) trip.emplace_back(n_ + i, n_ + i, -reg_);
    const int zo = n_ + p_;
    for (int i = 0; i < cones.dims().orthant; ++i) trip.emplace_back(zo + i, zo + i, -1.0);
    for (std::size_t k = 0; k < cones.dims().soc.size(); ++k) {
      const int o = zo + cones.soc_offset(k), d = cones.dims().soc[k];
      for (int c = 0; c < d; ++c)
        for (int r = c; r < d; ++r) trip.emplace_back(o + r, o + c, r == c ? -1.0 : 0.0);
    }
    kkt_.resize(dim, dim);
    kkt_.setFromTriplets(trip.begin(), trip.end());
    kkt_.makeCompressed();
    // Locate the W^2 block entries once; the sparsity pattern never changes.
    for (int i = 0; i < cones.dims().orthant; ++i) orthant_slots_.push_back(slot(zo + i, zo + i));
    for (std::size_t k = 0; k < cones.dims().soc.size(); ++k) {
      const int o = zo + cones.soc_offset(k), d = cones.dims().soc[k];
      std::vector<int> slots;
      for (int c = 0; c < d; ++c)
        for (int r = c; r < d; ++r) slots.push_back(slot(o + r, o + c));
      soc_slots_.push_back(std::move(slots));
    }
    ldlt_.analyzePattern(kkt_);
  }

  bool factor(const Scaling* w) {
    double* val = kkt_.valuePtr();
    for (int i = 0; i < cones_.dims().orthant; ++i) {
      const double wi = w ? w->orthant_w[i] : 1.0;
      val[orthant_slots_[i]] = -wi * wi - reg_;
    }
    for (std::size_t k = 0; k < cones_.dims().soc.size(); ++k) {
      const int d = cones_.dims().soc[k];
      int idx = 0;
      for (int c = 0; c < d; ++c)
        for (int r = c; r < d; ++r) {
          const double v = w ? w->soc_wsq[k](r, c) : (r == c ? 1.0 : 0.0);
          val[soc_slots_[k][idx++]] = -v - (r == c ? reg_ : 0.0);
        }
    }
    scaling_ = w;
    ldlt_.factorize(kkt_);
    return ldlt_.info() == Eigen::Success;
  }

  // Solves the unregularized system with iterative refinement.
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    Eigen::VectorXd u = ldlt_.solve(rhs);
    const double rnorm = std::max(1.0, rhs.lpNorm<Eigen::Infinity>());
    for (int it = 0; it < refine_; ++it) {
      const Eigen::VectorXd err = rhs - multiply(u);
      if (err.lpNorm<Eigen::Infinity>() <= 1e-14 * rnorm) break;
      u += ldlt_.solve(err);
    }
    return u;
  }

 private:
  int slot(int row, int col) const {
    for (SparseMatrix::InnerIterator it(kkt_, col); it; ++it)
      if (it.row() == row) return static_cast<int>(&it.valueRef() - kkt_.valuePtr());
    throw std::logic_error("kkt slot not found");
  }

  Eigen::VectorXd multiply(const Eigen::VectorXd& u) const {
    const auto x = u.head(n_);
    const auto y = u.segment(n_, p_);
    const auto z = u.tail(m_);
    Eigen::VectorXd out(u.size());
    out.head(n_) = prog_.A.transpose() * y + prog_.G.transpose() * z;
    out.segment(n_, p_) = prog_.A * x;
    Eigen::VectorXd wz = scaling_ ? cones_.apply_wsq(*scaling_, z) : Eigen::VectorXd(z);
    out.tail(m_) = prog_.G * x - wz;
    return out;
  }

  const Program& prog_;
  const ConeOps& cones_;
  double reg_;
  int refine_;
  int n_ = 0, p_ = 0, m_ = 0;
  SparseMatrix kkt_;
  std::vector<int> orthant_slots_;
  std::vector<std::vector<int>> soc_slots_;
  const Scaling* scaling_ = nullptr;
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
};

double safe_norm(const VectorXd& v) { return v.size() ? v.norm() : 0.0; }

}  // namespace

Result solve(const Program& prog, const Settings& settings) {
  prog.validate();
  const int n = prog.num_variables();
  const int p = static_cast<int>(prog.A.rows());
  const int m = static_cast<int>(prog.G.rows());
  ConeOps cones(prog.cones);
  KktSystem kkt(prog, cones, settings.static_regularization, settings.refinement_steps);
  Result res;

  // Initial point from two least-squares style solves with W = I.
  if (!kkt.factor(nullptr)) {
    res.message = "initial factorization failed";
    return res;
  }
  VectorXd rhs(n + p + m);
  rhs << VectorXd::Zero(n), prog.b, prog.h;
  VectorXd sol = kkt.solve(rhs);
  VectorXd x = sol.head(n);
  VectorXd s = -sol.tail(m);
  rhs << -prog.c, VectorXd::Zero(p), VectorXd::Zero(m);
  sol = kkt.solve(rhs);
  VectorXd y = sol.segment(n, p);
  VectorXd z = sol.tail(m);
  {
    double a = cones.shift_needed(s);
    if (a >= 0 || !cones.interior(s)) cones.add_identity(s, 1.0 + std::max(a, 0.0));
    a = cones.shift_needed(z);
    if (a >= 0 || !cones.interior(z)) cones.add_identity(z, 1.0 + std::max(a, 0.0));
  }
  double tau = 1.0, kappa = 1.0;
  const double degree = static_cast<double>(prog.cones.degree());
  const double bnorm = std::max(1.0, safe_norm(prog.b));
  const double hnorm = std::max(1.0, safe_norm(prog.h));
  const double cnorm = std::max(1.0, safe_norm(prog.c));

  Scaling w;
  VectorXd lambda;
  VectorXd best_x, best_y, best_z, best_s;
  double best_tau = 0;
  bool have_inaccurate = false;

  auto record = [&](Status st) {
    res.status = st;
    if (st == Status::optimal) {
      res.x = x / tau;
      res.y = y / tau;
      res.z = z / tau;
      res.s = s / tau;
    } else {
      res.x = x;
      res.y = y;
      res.z = z;
      res.s = s;
    }
  };

  for (int iter = 0; iter <= settings.max_iterations; ++iter) {
    res.iterations = iter;
    const VectorXd ax = prog.A * x;
    const VectorXd gx = prog.G * x;
    const VectorXd aty_gtz = prog.A.transpose() * y + prog.G.transpose() * z;
    const VectorXd hx = aty_gtz + prog.c * tau;
    const VectorXd hy = prog.b * tau - ax;
    const VectorXd hz = s + gx - prog.h * tau;
    const double cx = prog.c.dot(x);
    const double byhz = prog.b.dot(y) + prog.h.dot(z);
    const double htau = kappa + cx + byhz;

    const double pres = std::max(safe_norm(hy) / bnorm, safe_norm(hz) / hnorm) / tau;
    const double dres = safe_norm(hx) / cnorm / tau;
    const double pcost = cx / tau;
    const double dcost = -byhz / tau;
    const double gap = s.dot(z) / (tau * tau);
    double relgap = std::numeric_limits<double>::infinity();
    if (pcost < 0) relgap = gap / -pcost;
    else if (dcost > 0) relgap = gap / dcost;
    res.primal_residual = pres;
    res.dual_residual = dres;
    res.gap = gap;
    res.primal_objective = pcost + prog.objective_offset;
    res.dual_objective = dcost + prog.objective_offset;

    if (settings.verbose) {
      std::ostringstream os;
      os << std::scientific << std::setprecision(3) << "it " << iter << " pcost " << pcost << " dcost " << dcost
         << " gap " << gap << " pres " << pres << " dres " << dres << " tau " << tau << " kap " << kappa;
      res.message = os.str();
      std::fprintf(stderr, "%s\n", res.message.c_str());
    }

    if (pres < settings.feastol && dres < settings.feastol &&
        (gap < settings.abstol || relgap < settings.reltol)) {
      record(Status::optimal);
      res.message = "converged";
      return res;
    }
    if (pres < settings.feastol_inacc && dres < settings.feastol_inacc &&
        (gap < settings.abstol_inacc || relgap < settings.reltol_inacc)) {
      have_inaccurate = true;
      best_x = x;
      best_y = y;
      best_z = z;
      best_s = s;
      best_tau = tau;
    }
    // Infeasibility certificates.
    if (byhz < 0 && tau < kappa) {
      const double pinf = safe_norm(aty_gtz) / -byhz;
      if (pinf < settings.feastol) {
        record(Status::primal_infeasible);
        res.message = "primal infeasibility certificate";
        return res;
      }
    }
    if (cx < 0 && tau < kappa) {
      const double dinf = std::max(safe_norm(ax) / bnorm, safe_norm(gx + s) / hnorm) / -cx;
      if (dinf < settings.feastol) {
        record(Status::dual_infeasible);
        res.message = "dual infeasibility certificate";
        return res;
      }
    }
    if (iter == settings.max_iterations) break;

    if (!cones.compute_scaling(s, z, w, lambda) || !kkt.factor(&w)) {
      res.message = "lost interiority or factorization failed";
      break;
    }
    const double mu = (s.dot(z) + tau * kappa) / (degree + 1.0);

    VectorXd r1(n + p + m);
    r1 << -prog.c, prog.b, prog.h;
    const VectorXd u1 = kkt.solve(r1);
    const double q1 = prog.c.dot(u1.head(n)) + prog.b.dot(u1.segment(n, p)) + prog.h.dot(u1.tail(m));

    struct Direction {
      VectorXd dx, dy, dz, ds;
      double dtau = 0, dkappa = 0;
    };
    auto direction = [&](double eta, const VectorXd& xi, double rtau) {
      VectorXd r2(n + p + m);
      r2 << -eta * hx, eta * hy, -eta * hz - cones.apply_w(w, xi);
      const VectorXd u2 = kkt.solve(r2);
      const double q2 = prog.c.dot(u2.head(n)) + prog.b.dot(u2.segment(n, p)) + prog.h.dot(u2.tail(m));
      Direction d;
      d.dtau = (-eta * htau - q2 - rtau / tau) / (q1 - kappa / tau);
      const VectorXd u = u2 + d.dtau * u1;
      d.dx = u.head(n);
      d.dy = u.segment(n, p);
      d.dz = u.tail(m);
      d.ds = cones.apply_w(w, xi - cones.apply_w(w, d.dz));
      d.dkappa = (rtau - kappa * d.dtau) / tau;
      return d;
    };
    auto step_length = [&](const Direction& d) {
      double alpha = std::min(cones.max_step(lambda, cones.apply_winv(w, d.ds)),
                              cones.max_step(lambda, cones.apply_w(w, d.dz)));
      if (d.dtau < 0) alpha = std::min(alpha, -tau / d.dtau);
      if (d.dkappa < 0) alpha = std::min(alpha, -kappa / d.dkappa);
      return alpha;
    };

    // Predictor.
    const Direction aff = direction(1.0, -lambda, -tau * kappa);
    const double alpha_aff = std::min(1.0, step_length(aff));
    const double sigma = std::clamp(std::pow(1.0 - alpha_aff, 3), 0.0, 1.0);

    // Corrector.
    const VectorXd ds_scaled = cones.apply_winv(w, aff.ds);
    const VectorXd dz_scaled = cones.apply_w(w, aff.dz);
    VectorXd rc = -cones.jordan(lambda, lambda) - cones.jordan(ds_scaled, dz_scaled);
    rc += sigma * mu * cones.identity(m);
    const VectorXd xi = cones.jordan_solve(lambda, rc);
    const double rtau = -tau * kappa - aff.dtau * aff.dkappa + sigma * mu;
    const Direction dir = direction(1.0 - sigma, xi, rtau);
    const double alpha = std::min(1.0, 0.99 * step_length(dir));
    if (!(alpha > 1e-10) || !std::isfinite(alpha)) {
      res.message = "step length too small";
      break;
    }
    x += alpha * dir.dx;
    y += alpha * dir.dy;
    z += alpha * dir.dz;
    s += alpha * dir.ds;
    tau += alpha * dir.dtau;
    kappa += alpha * dir.dkappa;
    if (!cones.interior(s) || !cones.interior(z) || !(tau > 0) || !(kappa > 0)) {
      res.message = "iterate left the cone";
      break;
    }
  }

  if (have_inaccurate) {
    x = best_x;
    y = best_y;
    z = best_z;
    s = best_s;
    tau = best_tau;
    record(Status::optimal);
    res.reduced_accuracy = true;
    res.message += " (reduced accuracy)";
    return res;
  }
  if (res.message.empty()) res.message = "iteration limit";
  res.status = res.iterations >= settings.max_iterations ? Status::max_iterations : Status::numeric_failure;
  res.x = x;
  res.y = y;
  res.z = z;
  res.s = s;
  return res;
}

void write_program(std::ostream& out, const Program& prog) {
  out << std::setprecision(17);
  out << "CONIC 1\n";
  out << "n " << prog.num_variables() << " p " << prog.A.rows() << " m " << prog.G.rows() << "\n";
  out << "cones l " << prog.cones.orthant << " q " << prog.cones.soc.size();
  for (int d : prog.cones.soc) out << ' ' << d;
  out << "\n";
  out << "c";
  for (Eigen::Index i = 0; i < prog.c.size(); ++i) out << ' ' << prog.c[i];
  out << "\nobjective_offset " << prog.objective_offset << "\n";
  auto dump = [&](const char* tag, const SparseMatrix& mat) {
    out << tag << ' ' << mat.nonZeros() << "\n";
    for (int j = 0; j < mat.outerSize(); ++j)
      for (SparseMatrix::InnerIterator it(mat, j); it; ++it) out << it.row() << ' ' << j << ' ' << it.value() << "\n";
  };
  dump("A", prog.A);
  out << "b";
  for (Eigen::Index i = 0; i < prog.b.size(); ++i) out << ' ' << prog.b[i];
  out << "\n";
  dump("G", prog.G);
  out << "h";
  for (Eigen::Index i = 0; i < prog.h.size(); ++i) out << ' ' << prog.h[i];
  out << "\n";
}

}  // namespace p2pgrid::conic
