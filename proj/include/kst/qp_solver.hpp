// qp_solver.hpp - dense strictly convex QP with box bounds and linear inequalities
//
//   minimize    1/2 x'Hx + g'x
//   subject to  lb <= x <= ub,  C x <= d
//
// Dual active-set method (Goldfarb-Idnani). Starts from the unconstrained
// minimum, or from the active set of a warm-start point, and adds the most
// violated constraint each outer iteration while keeping the working set dual
// feasible. Linear algebra is recomputed from the Cholesky factor of H on
// every step; problems are small (tens of variables) so this keeps the code
// simple and numerically clean.
#pragma once

#include "kst/core_math.hpp"

#include <nlohmann/json.hpp>

#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace kst {

struct QuadraticProgram {
  MatX H;
  VecX g;
  VecX lb, ub;  // +-infinity allowed
  MatX C;       // m x n
  VecX d;

  int n() const { return static_cast<int>(g.size()); }
  int m() const { return static_cast<int>(d.size()); }

  /// Unconstrained problem of size n with infinite bounds and no rows.
  static QuadraticProgram unconstrained(const MatX& H, const VecX& g) {
    const int n = static_cast<int>(g.size());
    constexpr double inf = std::numeric_limits<double>::infinity();
    return {H, g, VecX::Constant(n, -inf), VecX::Constant(n, inf), MatX(0, n), VecX(0)};
  }

  void validate() const {
    const int nn = n();
    if (H.rows() != nn || H.cols() != nn) throw std::invalid_argument("QP: H must be n x n");
    if (lb.size() != nn || ub.size() != nn) throw std::invalid_argument("QP: bounds must have n entries");
    if (C.rows() != m() || (m() > 0 && C.cols() != nn)) throw std::invalid_argument("QP: C must be m x n");
    if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, H.cwiseAbs().maxCoeff()))
      throw std::invalid_argument("QP: H must be symmetric");
    for (int i = 0; i < nn; ++i)
      if (!(lb[i] <= ub[i])) throw std::invalid_argument("QP: lb must be <= ub");
  }
};

enum class QpStatus { optimal, max_iterations, infeasible };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::max_iterations: return "max_iterations";
    case QpStatus::infeasible: return "infeasible";
  }
  return "?";
}

struct QpMultipliers {
  VecX lower;       // >= 0, for x >= lb
  VecX upper;       // >= 0, for x <= ub
  VecX inequality;  // >= 0, for C x <= d
};

struct QpSolution {
  VecX x;
  QpStatus status = QpStatus::infeasible;
  int iterations = 0;
  double kkt_residual = std::numeric_limits<double>::infinity();
  QpMultipliers multipliers;
  /// Active constraints: [0, n) upper bounds, [n, 2n) lower bounds, [2n, 2n+m) rows of C.
  std::vector<int> active_set;
};

struct QpSettings {
  int max_iterations = 200;
  double feasibility_tolerance = 1e-8;
  double regularization = 1e-9;
  double regularization_threshold = 1e-10;
};

/// Max of stationarity, primal violation, dual sign violation and complementarity.
inline double kkt_residual(const QuadraticProgram& qp, const VecX& x, const QpMultipliers& mu) {
  const int n = qp.n(), m = qp.m();
  auto get = [](const VecX& v, int i) { return v.size() > i ? v[i] : 0.0; };
  VecX r = qp.H * x + qp.g;
  for (int i = 0; i < n; ++i) r[i] += get(mu.upper, i) - get(mu.lower, i);
  if (m > 0 && mu.inequality.size() == m) r += qp.C.transpose() * mu.inequality;
  double res = r.size() ? r.cwiseAbs().maxCoeff() : 0.0;

  auto complement = [&](double lambda, double slack) {
    res = std::max(res, std::max(0.0, -slack));
    res = std::max(res, std::max(0.0, -lambda));
    if (std::isfinite(slack)) res = std::max(res, std::abs(lambda * slack));
    else res = std::max(res, std::abs(lambda));
  };
  for (int i = 0; i < n; ++i) {
    complement(get(mu.lower, i), x[i] - qp.lb[i]);
    complement(get(mu.upper, i), qp.ub[i] - x[i]);
  }
  if (m > 0) {
    const VecX cx = qp.C * x;
    for (int i = 0; i < m; ++i) complement(get(mu.inequality, i), qp.d[i] - cx[i]);
  }
  return res;
}

class QpSolver {
 public:
  explicit QpSolver(QpSettings settings = {}) : settings_(settings) {}

  const QpSettings& settings() const { return settings_; }

  QpSolution solve(const QuadraticProgram& qp, const std::optional<VecX>& warm_start = std::nullopt) {
    qp.validate();
    n_ = qp.n();
    qp_ = &qp;
    QpSolution sol;

    factor_hessian(qp.H);
    c_ = L_.triangularView<Eigen::Lower>().solve(qp.g);
    x_ = -L_.transpose().triangularView<Eigen::Upper>().solve(c_);
    active_.clear();
    lambda_.resize(0);
    int iterations = 0;

    if (warm_start && warm_start->size() == n_ && warm_start->allFinite()) {
      seed_working_set(*warm_start);
      while (!active_.empty()) {
        ++iterations;
        if (!solve_equality(x_, lambda_)) {
          active_.pop_back();
          continue;
        }
        int worst = -1;
        for (int j = 0; j < lambda_.size(); ++j)
          if (lambda_[j] < 0.0 && (worst < 0 || lambda_[j] < lambda_[worst])) worst = j;
        if (worst < 0) break;
        drop(worst);
      }
      if (active_.empty()) {
        lambda_.resize(0);
        refresh_working_set();
        x_ = -L_.transpose().triangularView<Eigen::Upper>().solve(c_);
      }
    }

    QpStatus status = QpStatus::optimal;
    bool done = false;
    while (!done) {
      // Most violated constraint outside the working set (lowest index on ties).
      int p = -1;
      double worst = settings_.feasibility_tolerance;
      for (int id = 0; id < num_constraints(); ++id) {
        if (!finite_rhs(id) || in_active(id)) continue;
        const double s = violation(id, x_);
        if (s > worst) {
          worst = s;
          p = id;
        }
      }
      if (p < 0) break;

      const VecX ap = normal(p);
      double lambda_p = 0.0;
      while (true) {
        if (iterations >= settings_.max_iterations) {
          status = QpStatus::max_iterations;
          done = true;
          break;
        }
        ++iterations;
        const int k = static_cast<int>(active_.size());
        const VecX u = L_.triangularView<Eigen::Lower>().solve(ap);
        VecX w(k);
        VecX proj = u;
        if (k > 0) {
          w = -llt_m_.solve(B_.transpose() * u);
          proj += B_ * w;
        }
        const double proj_sq = proj.squaredNorm();
        const bool dependent = proj_sq <= 1e-20 * std::max(1.0, u.squaredNorm());

        int block = -1;
        double t1 = std::numeric_limits<double>::infinity();
        for (int j = 0; j < k; ++j) {
          if (w[j] < 0.0) {
            const double t = lambda_[j] / -w[j];
            if (t < t1) {
              t1 = t;
              block = j;
            }
          }
        }
        if (dependent) {
          if (block < 0) {
            status = QpStatus::infeasible;
            done = true;
            break;
          }
          lambda_ += t1 * w;
          lambda_p += t1;
          drop(block);
          continue;
        }
        const VecX z = -L_.transpose().triangularView<Eigen::Upper>().solve(proj);
        const double s = violation(p, x_);
        const double t2 = std::max(0.0, s) / proj_sq;
        if (t2 <= t1) {
          x_ += t2 * z;
          if (k > 0) lambda_ += t2 * w;
          lambda_p += t2;
          add(p, lambda_p);
          break;
        }
        x_ += t1 * z;
        lambda_ += t1 * w;
        lambda_p += t1;
        drop(block);
      }
    }

    if (status == QpStatus::optimal && !active_.empty()) polish();
    // Active box bounds hold exactly.
    if (status != QpStatus::infeasible)
      for (int id : active_)
        if (id < 2 * n_) x_[id % n_] = id < n_ ? qp.ub[id] : qp.lb[id - n_];

    sol.x = x_;
    sol.status = status;
    sol.iterations = iterations;
    sol.active_set = active_;
    sol.multipliers = unpack_multipliers();
    sol.kkt_residual = kkt_residual(qp, sol.x, sol.multipliers);
    if (status == QpStatus::infeasible) sol.kkt_residual = std::numeric_limits<double>::infinity();
    qp_ = nullptr;
    return sol;
  }

 private:
  int num_constraints() const { return 2 * n_ + qp_->m(); }

  bool finite_rhs(int id) const { return std::isfinite(rhs(id)); }

  double rhs(int id) const {
    if (id < n_) return qp_->ub[id];
    if (id < 2 * n_) return -qp_->lb[id - n_];
    return qp_->d[id - 2 * n_];
  }

  VecX normal(int id) const {
    if (id < 2 * n_) {
      VecX a = VecX::Zero(n_);
      a[id % n_] = id < n_ ? 1.0 : -1.0;
      return a;
    }
    return qp_->C.row(id - 2 * n_).transpose();
  }

  double violation(int id, const VecX& x) const {
    if (id < n_) return x[id] - qp_->ub[id];
    if (id < 2 * n_) return qp_->lb[id - n_] - x[id - n_];
    return qp_->C.row(id - 2 * n_).dot(x) - qp_->d[id - 2 * n_];
  }

  bool in_active(int id) const {
    for (int a : active_)
      if (a == id) return true;
    return false;
  }

  void factor_hessian(const MatX& H) {
    llt_h_.compute(H);
    bool ok = llt_h_.info() == Eigen::Success;
    if (ok) {
      const VecX diag = MatX(llt_h_.matrixL()).diagonal();
      ok = n_ == 0 || diag.cwiseAbs2().minCoeff() >= settings_.regularization_threshold;
    }
    if (!ok) {
      llt_h_.compute(H + settings_.regularization * MatX::Identity(n_, n_));
      if (llt_h_.info() != Eigen::Success)
        throw std::invalid_argument("QP: Hessian is not positive semidefinite");
    }
    L_ = llt_h_.matrixL();
  }

  // B = L^-1 N and the Cholesky factor of M = B'B for the current working set.
  bool refresh_working_set() {
    const int k = static_cast<int>(active_.size());
    MatX N(n_, k);
    for (int j = 0; j < k; ++j) N.col(j) = normal(active_[j]);
    B_ = L_.triangularView<Eigen::Lower>().solve(N);
    if (k == 0) return true;
    llt_m_.compute(B_.transpose() * B_);
    return llt_m_.info() == Eigen::Success;
  }

  void add(int id, double lambda) {
    active_.push_back(id);
    lambda_.conservativeResize(lambda_.size() + 1);
    lambda_[lambda_.size() - 1] = lambda;
    refresh_working_set();
  }

  void drop(int j) {
    active_.erase(active_.begin() + j);
    const int k = static_cast<int>(lambda_.size());
    VecX next(k - 1);
    next << lambda_.head(j), lambda_.tail(k - 1 - j);
    lambda_ = next;
    refresh_working_set();
  }

  // Equality-constrained solve on the working set: x = -H^-1 (g + N lambda), N'x = b.
  bool solve_equality(VecX& x, VecX& lambda) {
    if (!refresh_working_set()) return false;
    const int k = static_cast<int>(active_.size());
    VecX b(k);
    for (int j = 0; j < k; ++j) b[j] = rhs(active_[j]);
    lambda = -llt_m_.solve(b + B_.transpose() * c_);
    x = -L_.transpose().triangularView<Eigen::Upper>().solve(c_ + B_ * lambda);
    return x.allFinite() && lambda.allFinite();
  }

  void seed_working_set(const VecX& warm) {
    for (int id = 0; id < num_constraints() && static_cast<int>(active_.size()) < n_; ++id) {
      if (!finite_rhs(id)) continue;
      const double b = rhs(id);
      if (std::abs(violation(id, warm)) > 1e-9 * std::max(1.0, std::abs(b))) continue;
      const VecX u = L_.triangularView<Eigen::Lower>().solve(normal(id));
      VecX r = u;
      if (!active_.empty()) r -= B_ * llt_m_.solve(B_.transpose() * u);
      if (r.squaredNorm() <= 1e-18 * std::max(1.0, u.squaredNorm())) continue;
      active_.push_back(id);
      refresh_working_set();
    }
    lambda_ = VecX::Zero(static_cast<int>(active_.size()));
  }

  void polish() {
    VecX x, lambda;
    if (!solve_equality(x, lambda)) return;
    if (lambda.size() && lambda.minCoeff() < -1e-10) return;
    for (int id = 0; id < num_constraints(); ++id)
      if (finite_rhs(id) && !in_active(id) && violation(id, x) > settings_.feasibility_tolerance) return;
    x_ = x;
    lambda_ = lambda.cwiseMax(0.0);
  }

  QpMultipliers unpack_multipliers() const {
    QpMultipliers mu{VecX::Zero(n_), VecX::Zero(n_), VecX::Zero(qp_->m())};
    for (std::size_t j = 0; j < active_.size(); ++j) {
      const int id = active_[j];
      const double l = std::max(0.0, lambda_[static_cast<int>(j)]);
      if (id < n_) mu.upper[id] = l;
      else if (id < 2 * n_) mu.lower[id - n_] = l;
      else mu.inequality[id - 2 * n_] = l;
    }
    return mu;
  }

  QpSettings settings_;
  const QuadraticProgram* qp_ = nullptr;
  int n_ = 0;
  Eigen::LLT<MatX> llt_h_;
  Eigen::LLT<MatX> llt_m_;
  MatX L_;
  MatX B_;
  VecX c_;
  VecX x_;
  VecX lambda_;
  std::vector<int> active_;
};

// ---------------------------------------------------------------------------
// Debug dump / load in the same JSON document syntax as model files.
// Infinite bounds are written as null.

inline nlohmann::json qp_to_json(const QuadraticProgram& qp) {
  auto vec = [](const VecX& v) {
    nlohmann::json a = nlohmann::json::array();
    for (int i = 0; i < v.size(); ++i) {
      if (std::isfinite(v[i])) a.push_back(v[i]);
      else a.push_back(nullptr);
    }
    return a;
  };
  auto mat = [&](const MatX& m) {
    nlohmann::json a = nlohmann::json::array();
    for (int r = 0; r < m.rows(); ++r) a.push_back(vec(m.row(r).transpose()));
    return a;
  };
  return {{"n", qp.n()}, {"m", qp.m()}, {"H", mat(qp.H)}, {"g", vec(qp.g)}, {"lb", vec(qp.lb)},
          {"ub", vec(qp.ub)}, {"C", mat(qp.C)}, {"d", vec(qp.d)}};
}

inline QuadraticProgram qp_from_json(const nlohmann::json& j) {
  const int n = j.at("n").get<int>(), m = j.at("m").get<int>();
  auto vec = [](const nlohmann::json& a, int size, double null_value) {
    VecX v(size);
    for (int i = 0; i < size; ++i) v[i] = a.at(i).is_null() ? null_value : a.at(i).get<double>();
    return v;
  };
  auto mat = [&](const nlohmann::json& a, int rows, int cols) {
    MatX out(rows, cols);
    for (int r = 0; r < rows; ++r) out.row(r) = vec(a.at(r), cols, 0.0).transpose();
    return out;
  };
  constexpr double inf = std::numeric_limits<double>::infinity();
  QuadraticProgram qp{mat(j.at("H"), n, n), vec(j.at("g"), n, 0.0), vec(j.at("lb"), n, -inf),
                      vec(j.at("ub"), n, inf), mat(j.at("C"), m, n), vec(j.at("d"), m, inf)};
  qp.validate();
  return qp;
}

}  // namespace kst
