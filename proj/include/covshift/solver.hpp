#pragma once

// Constrained solvers for the kernel-based estimators:
//  * a box + sum-slab constrained convex QP (kernel mean matching),
//  * projected gradient ascent of a sum-of-logs objective under a linear
//    equality constraint and nonnegativity (KLIEP).

#include "covshift/core.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace covshift {

/// minimize 1/2 w'Hw - c'w  s.t.  0 <= w <= upper,  |sum(w) - sum_target| <= sum_target * sum_slack
struct QpProblem {
  Matrix hessian;
  Vector linear;
  double upper = 1000.0;
  double sum_target = 1.0;
  double sum_slack = 0.0;

  double objective(const Vector& w) const { return 0.5 * w.dot(hessian * w) - linear.dot(w); }
};

struct SolverReport {
  Vector solution;
  std::vector<double> objective_trace;
  int iterations = 0;
  bool converged = false;
  double kkt_residual = std::numeric_limits<double>::infinity();
};

struct SolverOptions {
  double tol = 1e-8;
  int max_iter = 2000;
};

namespace detail {

inline double clipped_sum(const Vector& v, double shift, double upper) {
  double s = 0.0;
  for (Index i = 0; i < v.size(); ++i) s += std::clamp(v(i) - shift, 0.0, upper);
  return s;
}

/// Shift tau with sum(clip(v - tau, 0, upper)) == target. The function is
/// non-increasing and piecewise linear in tau; bisection brackets the
/// segment, then the segment's linear equation gives tau exactly.
inline double solve_shift(const Vector& v, double upper, double target, double lo, double hi) {
  for (int it = 0; it < 200 && hi - lo > 0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (clipped_sum(v, mid, upper) > target) lo = mid;
    else hi = mid;
  }
  double tau = 0.5 * (lo + hi);
  double free_sum = 0.0, at_upper = 0.0;
  Index free_count = 0;
  for (Index i = 0; i < v.size(); ++i) {
    const double x = v(i) - tau;
    if (x >= upper) at_upper += upper;
    else if (x > 0) {
      free_sum += v(i);
      ++free_count;
    }
  }
  if (free_count > 0) {
    const double exact = (free_sum + at_upper - target) / static_cast<double>(free_count);
    if (std::abs(clipped_sum(v, exact, upper) - target) <=
        std::abs(clipped_sum(v, tau, upper) - target))
      tau = exact;
  }
  return tau;
}

}  // namespace detail

/// Euclidean projection onto {0 <= w <= upper} intersected with
/// {|sum(w) - s| <= s * slack}. The projection has the form
/// clip(v - tau, 0, upper) for a scalar tau chosen by the active sum bound.
inline Vector project_box_slab(const Vector& v, double upper, double s, double slack) {
  require(upper > 0 && std::isfinite(upper), ErrorCode::InvalidArgument, "upper bound must be positive");
  require(slack >= 0, ErrorCode::InvalidArgument, "slack must be nonnegative");
  const double n = static_cast<double>(v.size());
  const double lo_sum = s * (1.0 - slack);
  const double hi_sum = s * (1.0 + slack);
  require(lo_sum <= n * upper, ErrorCode::Infeasible,
          "sum lower bound " + std::to_string(lo_sum) + " exceeds n*B = " + std::to_string(n * upper));
  require(hi_sum >= 0, ErrorCode::Infeasible, "sum upper bound is negative");

  const double base = detail::clipped_sum(v, 0.0, upper);
  double tau = 0.0;
  if (base > hi_sum) {
    tau = detail::solve_shift(v, upper, hi_sum, 0.0, v.maxCoeff());
  } else if (base < lo_sum) {
    tau = detail::solve_shift(v, upper, lo_sum, v.minCoeff() - upper, 0.0);
  }
  Vector w(v.size());
  for (Index i = 0; i < v.size(); ++i) w(i) = std::clamp(v(i) - tau, 0.0, upper);
  return w;
}

inline void check_psd(const Matrix& h, double tol = 1e-8) {
  require(h.rows() == h.cols(), ErrorCode::DimensionMismatch, "hessian must be square");
  const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
  require((h - h.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale, ErrorCode::NonPsd,
          "hessian is not symmetric");
  if (h.rows() == 0) return;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(h, Eigen::EigenvaluesOnly);
  const double smallest = eig.eigenvalues().minCoeff();
  require(smallest >= -tol * scale, ErrorCode::NonPsd,
          "smallest eigenvalue " + std::to_string(smallest));
}

namespace detail {

/// Primal active-set refinement from a feasible x. The working set holds
/// coordinates pinned at 0 or `upper` and, optionally, the sum pinned at
/// one slab edge. Each step is a reduced Newton step on the free
/// coordinates (Hessian regularized by `ridge` so near-singular kernel
/// matrices stay solvable), shortened to the first blocking constraint.
/// Every step lowers the objective. When the reduced step vanishes, the
/// constraint with the most negative multiplier is released.
struct ActiveSetResult {
  int iterations = 0;
  bool optimal = false;
};

inline ActiveSetResult active_set_refine(const QpProblem& p, Vector& x, Vector& hx, double lo_sum,
                                         double hi_sum, double tol, int max_iter,
                                         std::vector<double>& trace) {
  const Index n = x.size();
  const double ridge = 1e-12 * std::max(1.0, p.hessian.diagonal().cwiseAbs().maxCoeff());
  const double pin_eps = 1e-12 * std::max(1.0, hi_sum);
  // state: 0 free, 1 at zero, 2 at upper
  std::vector<int> state(static_cast<std::size_t>(n), 0);
  for (Index i = 0; i < n; ++i) {
    if (x(i) <= 0.0) state[static_cast<std::size_t>(i)] = 1;
    else if (x(i) >= p.upper) state[static_cast<std::size_t>(i)] = 2;
  }
  // sum_state: 0 free, -1 pinned at lo_sum, +1 pinned at hi_sum
  int sum_state = 0;
  if (std::abs(x.sum() - hi_sum) <= pin_eps) sum_state = 1;
  else if (std::abs(x.sum() - lo_sum) <= pin_eps) sum_state = -1;

  ActiveSetResult out;
  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it + 1;
    std::vector<Index> free;
    for (Index i = 0; i < n; ++i)
      if (state[static_cast<std::size_t>(i)] == 0) free.push_back(i);
    const Index m = static_cast<Index>(free.size());
    if (m == 0) sum_state = 0;  // every coordinate pinned: the sum is implied
    const Vector g = hx - p.linear;

    Vector step_f = Vector::Zero(m);
    double mu = 0.0;  // g_F + mu 1 = 0 at a face optimum with pinned sum
    if (m > 0) {
      Matrix hf(m, m);
      Vector gf(m);
      for (Index a = 0; a < m; ++a) {
        gf(a) = g(free[static_cast<std::size_t>(a)]);
        for (Index b = 0; b < m; ++b)
          hf(a, b) = p.hessian(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
      }
      hf.diagonal().array() += ridge;
      const Eigen::LDLT<Matrix> ldlt(hf);
      const Vector hinv_g = ldlt.solve(gf);
      if (sum_state != 0) {
        const Vector hinv_1 = ldlt.solve(Vector::Ones(m));
        mu = -hinv_g.sum() / hinv_1.sum();
        step_f = -(hinv_g + mu * hinv_1);
      } else {
        step_f = -hinv_g;
      }
    }

    Vector reduced(m);
    for (Index a = 0; a < m; ++a) reduced(a) = g(free[static_cast<std::size_t>(a)]) + mu;
    const bool face_optimal = m == 0 || reduced.lpNorm<Eigen::Infinity>() <= tol;

    if (!face_optimal) {
      // Ratio test against the box and, when free, the sum.
      double alpha = 1.0;
      Index block = -1;
      int block_kind = 0;
      for (Index a = 0; a < m; ++a) {
        const Index i = free[static_cast<std::size_t>(a)];
        if (step_f(a) < 0 && -x(i) / step_f(a) < alpha) {
          alpha = -x(i) / step_f(a);
          block = i;
          block_kind = 1;
        } else if (step_f(a) > 0 && (p.upper - x(i)) / step_f(a) < alpha) {
          alpha = (p.upper - x(i)) / step_f(a);
          block = i;
          block_kind = 2;
        }
      }
      int sum_block = 0;
      const double ds = step_f.sum(), cur = x.sum();
      if (sum_state == 0 && ds > 0 && (hi_sum - cur) / ds < alpha) {
        alpha = (hi_sum - cur) / ds;
        sum_block = 1;
      } else if (sum_state == 0 && ds < 0 && (lo_sum - cur) / ds < alpha) {
        alpha = (lo_sum - cur) / ds;
        sum_block = -1;
      }
      alpha = std::max(alpha, 0.0);
      Vector d = Vector::Zero(n);
      for (Index a = 0; a < m; ++a) d(free[static_cast<std::size_t>(a)]) = alpha * step_f(a);
      x += d;
      hx += p.hessian * d;
      if (sum_block != 0) {
        sum_state = sum_block;
      } else if (block >= 0) {
        state[static_cast<std::size_t>(block)] = block_kind;
        x(block) = block_kind == 1 ? 0.0 : p.upper;
      }
      for (Index i = 0; i < n; ++i) x(i) = std::clamp(x(i), 0.0, p.upper);
      trace.push_back(p.objective(x));
      continue;
    }

    // Face optimal: release the most violated constraint, if any.
    double worst = -tol;
    Index release = -1;
    bool release_sum = false;
    for (Index i = 0; i < n; ++i) {
      const int st = state[static_cast<std::size_t>(i)];
      if (st == 0) continue;
      // Moving x_i off its bound changes f at rate +-(g_i + mu).
      const double rate = st == 1 ? g(i) + mu : -(g(i) + mu);
      if (rate < worst) {
        worst = rate;
        release = i;
      }
    }
    if (sum_state != 0) {
      // Moving the sum inward changes f at rate -mu (lo edge) or +mu (hi edge).
      const double rate = sum_state == -1 ? -mu : mu;
      if (rate < worst) {
        worst = rate;
        release = -1;
        release_sum = true;
      }
    }
    if (release_sum) sum_state = 0;
    else if (release >= 0) state[static_cast<std::size_t>(release)] = 0;
    else {
      out.optimal = true;
      return out;
    }
  }
  return out;
}

}  // namespace detail

/// Projected gradient with backtracking (initial step 1.0, factor 0.5) and
/// momentum that is dropped whenever it would raise the objective. Kernel
/// matrices are often nearly singular, which makes the projected-gradient
/// tail very slow; after at most a quarter of the iteration budget the
/// iterate is handed to an active-set refinement that solves the identified
/// face exactly. Convergence is measured by |w - P(w - grad)|_inf.
inline SolverReport solve_box_sum_qp(const QpProblem& p, const SolverOptions& opt = {},
                                     bool verify_psd = true) {
  const Index n = p.linear.size();
  require(p.hessian.rows() == n && p.hessian.cols() == n, ErrorCode::DimensionMismatch,
          "QP hessian/linear size mismatch");
  require(p.upper > 0, ErrorCode::InvalidArgument, "upper bound must be positive");
  if (verify_psd) check_psd(p.hessian);

  const auto project = [&](const Vector& v) {
    return project_box_slab(v, p.upper, p.sum_target, p.sum_slack);
  };
  const auto residual = [&](const Vector& x, const Vector& hx) {
    return (x - project(x - (hx - p.linear))).lpNorm<Eigen::Infinity>();
  };

  SolverReport rep;
  Vector x = project(Vector::Constant(n, p.sum_target / static_cast<double>(std::max<Index>(n, 1))));
  Vector x_prev = x;
  Vector hx = p.hessian * x;
  rep.objective_trace.push_back(p.objective(x));

  const int pg_budget = opt.max_iter / 4;
  double step = 1.0;
  double momentum_k = 1.0;
  int it = 0;
  for (; it < pg_budget; ++it) {
    const Vector grad_x = hx - p.linear;
    rep.kkt_residual = residual(x, hx);
    if (rep.kkt_residual <= opt.tol) {
      rep.converged = true;
      rep.iterations = it;
      rep.solution = x;
      return rep;
    }

    const double next_k = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum_k * momentum_k));
    const double beta = (momentum_k - 1.0) / next_k;
    Vector y = x + beta * (x - x_prev);
    Vector hy = beta == 0.0 ? hx : Vector(p.hessian * y);

    // The momentum step is kept only if it lowers the objective, judged by
    // f(y + d) - f(x) = grad(x)'d + d'Hd / 2 with d = z - x. Otherwise the
    // step is retaken from x, where the backtracking condition guarantees
    // descent in exact arithmetic, so it is accepted as is.
    Vector z, hz;
    for (int attempt = 0; attempt < 2; ++attempt) {
      const Vector grad_y = hy - p.linear;
      for (int ls = 0; ls < 80; ++ls) {
        z = project(y - step * grad_y);
        hz = p.hessian * z;
        const Vector dz = z - y;
        if (0.5 * dz.dot(hz - hy) <= dz.squaredNorm() / (2.0 * step)) break;
        step *= 0.5;
      }
      if (attempt == 1) break;
      const Vector dx = z - x;
      if (grad_x.dot(dx) + 0.5 * dx.dot(hz - hx) <= 0.0) break;
      y = x;
      hy = hx;
      momentum_k = 1.0;
    }
    if (z == x) break;
    x_prev = x;
    x = std::move(z);
    hx = std::move(hz);
    momentum_k = next_k;
    rep.objective_trace.push_back(p.objective(x));
  }

  const double lo_sum = p.sum_target * (1.0 - p.sum_slack);
  const double hi_sum = p.sum_target * (1.0 + p.sum_slack);
  const auto refine = detail::active_set_refine(p, x, hx, lo_sum, hi_sum, 0.1 * opt.tol,
                                                opt.max_iter - it, rep.objective_trace);
  rep.iterations = it + refine.iterations;
  rep.kkt_residual = residual(x, hx);
  rep.converged = rep.kkt_residual <= opt.tol;
  rep.solution = x;
  return rep;
}

// ---------------------------------------------------------------------------
// KLIEP

/// sum_j log((basis_te * alpha)_j); -inf when any fitted value is nonpositive.
inline double kliep_objective(const Matrix& basis_te, const Vector& alpha) {
  const Vector fitted = basis_te * alpha;
  double j = 0.0;
  for (Index r = 0; r < fitted.size(); ++r) {
    if (!(fitted(r) > 0)) return -std::numeric_limits<double>::infinity();
    j += std::log(fitted(r));
  }
  return j;
}

struct KliepSolution {
  Vector alpha;
  SolverReport report;
};

/// Maximize sum_j log(sum_k alpha_k phi_k(x_te_j)) subject to
/// sum_i sum_k alpha_k phi_k(x_tr_i) = n_tr and alpha >= 0.
///
/// Solved in the simplex coordinates beta_k = alpha_k m_k / n_tr, where m_k
/// is the training mass of basis k; there the constraint is sum(beta) = 1
/// and the optimality condition is grad_k <= n_te with equality wherever
/// beta_k > 0, so max_k grad_k - n_te bounds the remaining objective gain.
///
/// Each iteration takes a Newton step of the log-likelihood on the free
/// coordinates within the constraint (or the projected gradient when the
/// Newton system is unusable), clips at zero and renormalizes, and accepts
/// by Armijo backtracking, so the objective never decreases. Coordinates
/// that reach zero stay pinned until their gradient exceeds the free ones.
/// Converged when the optimality gap is below tol * n_te, or when no step
/// improves the objective and no pinned coordinate is worth releasing.
inline KliepSolution kliep_ascent(const Matrix& basis_tr, const Matrix& basis_te,
                                  const SolverOptions& opt = {}) {
  require(basis_tr.cols() == basis_te.cols(), ErrorCode::DimensionMismatch,
          "train/test basis widths differ");
  const Index b = basis_tr.cols();
  const double n_tr = static_cast<double>(basis_tr.rows());
  const double n_te = static_cast<double>(basis_te.rows());
  require(b >= 1 && basis_tr.rows() >= 1 && basis_te.rows() >= 1, ErrorCode::EmptyDataset,
          "KLIEP needs at least one basis function, train row and test row");
  require((basis_tr.array() >= 0).all() && (basis_te.array() >= 0).all(),
          ErrorCode::InvalidArgument, "basis values must be nonnegative");
  for (Index r = 0; r < basis_te.rows(); ++r)
    require(basis_te.row(r).maxCoeff() > 0, ErrorCode::DegenerateBasis,
            "test row " + std::to_string(r) + " has no positive basis value");

  const Vector mass = basis_tr.colwise().sum().transpose();
  require(mass.maxCoeff() > 0, ErrorCode::DegenerateBasis,
          "every basis function vanishes on the training rows");
  // Basis functions (numerically) invisible to the training rows would
  // take astronomically large coefficients at the optimum; they are held
  // at zero. A test row that only they cover makes the basis degenerate.
  const double visible = 1e-10 * mass.maxCoeff();
  std::vector<bool> usable(static_cast<std::size_t>(b));
  Matrix scaled(basis_te.rows(), b);  // basis_te * n_tr / m_k
  for (Index k = 0; k < b; ++k) {
    usable[static_cast<std::size_t>(k)] = mass(k) > visible;
    scaled.col(k) = usable[static_cast<std::size_t>(k)] ? Vector(basis_te.col(k) * (n_tr / mass(k)))
                                                        : Vector::Zero(basis_te.rows());
  }

  const auto objective = [&](const Vector& beta) { return kliep_objective(scaled, beta); };
  const auto normalize = [](Vector& v) {
    const double s = v.sum();
    if (s > 0) v /= s;
    return s > 0;
  };

  KliepSolution out;
  SolverReport& rep = out.report;
  std::vector<bool> free = usable;
  Vector beta = Vector::Zero(b);
  for (Index k = 0; k < b; ++k)
    if (usable[static_cast<std::size_t>(k)]) beta(k) = 1.0;
  normalize(beta);
  double f = objective(beta);
  require(std::isfinite(f), ErrorCode::DegenerateBasis,
          "some test row is covered only by basis functions without training mass");
  rep.objective_trace.push_back(f);

  for (int it = 0; it < opt.max_iter; ++it) {
    rep.iterations = it + 1;
    const Vector inv_fit = (scaled * beta).cwiseInverse();
    const Vector grad = scaled.transpose() * inv_fit;

    double gap = -n_te;
    for (Index k = 0; k < b; ++k)
      if (usable[static_cast<std::size_t>(k)]) gap = std::max(gap, grad(k) - n_te);
    rep.kkt_residual = std::max(gap, 0.0) / n_te;
    if (rep.kkt_residual <= opt.tol) {
      rep.converged = true;
      break;
    }

    std::vector<Index> idx;
    for (Index k = 0; k < b; ++k)
      if (free[static_cast<std::size_t>(k)]) idx.push_back(k);
    const Index m = static_cast<Index>(idx.size());
    Vector gf(m);
    for (Index c = 0; c < m; ++c) gf(c) = grad(idx[static_cast<std::size_t>(c)]);

    // The current face is finished when the free gradients agree or when no
    // step improves the objective. A pinned coordinate whose gradient exceeds the
    // free ones is then released; without one the point is optimal.
    bool face_done = m == 0 || gf.maxCoeff() - gf.minCoeff() <= 1e-12 * n_te;
    if (!face_done) {
      Vector step_f;
      {
        Matrix a(scaled.rows(), m);
        for (Index c = 0; c < m; ++c)
          a.col(c) = scaled.col(idx[static_cast<std::size_t>(c)]).cwiseProduct(inv_fit);
        Matrix q = a.transpose() * a;
        q.diagonal().array() += 1e-10 * std::max(1.0, q.diagonal().maxCoeff());
        const Eigen::LDLT<Matrix> ldlt(q);
        const Vector qg = ldlt.solve(gf), q1 = ldlt.solve(Vector::Ones(m));
        step_f = qg - (qg.sum() / q1.sum()) * q1;
      }
      const Vector projected = gf.array() - gf.mean();
      if (!step_f.allFinite() || gf.dot(step_f) <= 0.0) step_f = projected;

      bool accepted = false;
      double t = 1.0, f_new = f;
      Vector candidate;
      for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
        Vector step = Vector::Zero(b);
        for (Index c = 0; c < m; ++c) step(idx[static_cast<std::size_t>(c)]) = step_f(c);
        t = 1.0;
        for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
          candidate = (beta + t * step).cwiseMax(0.0);
          if (!normalize(candidate)) continue;
          f_new = objective(candidate);
          const double predicted = std::max(0.0, grad.dot(candidate - beta));
          if (std::isfinite(f_new) && f_new > f && f_new - f >= 1e-4 * predicted) {
            accepted = true;
            break;
          }
        }
        step_f = projected;  // second attempt: plain projected gradient
      }
      if (accepted) {
        for (Index k = 0; k < b; ++k)
          if (candidate(k) == 0.0) free[static_cast<std::size_t>(k)] = false;
        beta = candidate;
        f = f_new;
        rep.objective_trace.push_back(f);
      } else {
        face_done = true;
      }
    }
    if (face_done) {
      const double level = m > 0 ? gf.maxCoeff() : -std::numeric_limits<double>::infinity();
      Index best = -1;
      for (Index k = 0; k < b; ++k)
        if (usable[static_cast<std::size_t>(k)] && !free[static_cast<std::size_t>(k)] &&
            grad(k) > level + 1e-12 * n_te && (best < 0 || grad(k) > grad(best)))
          best = k;
      if (best < 0) {
        rep.converged = true;
        break;
      }
      free[static_cast<std::size_t>(best)] = true;
    }
  }

  Vector alpha = Vector::Zero(b);
  for (Index k = 0; k < b; ++k)
    if (usable[static_cast<std::size_t>(k)]) alpha(k) = beta(k) * n_tr / mass(k);
  // Exact constraint after the change of variables.
  const double total = mass.dot(alpha);
  if (total > 0) alpha *= n_tr / total;
  rep.solution = alpha;
  out.alpha = std::move(alpha);
  return out;
}

}  // namespace covshift
