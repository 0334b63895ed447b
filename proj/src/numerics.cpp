#include "rtqp/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

namespace rtqp {
namespace {

constexpr double kDualTol = 1e-9;       // multipliers may sit this far below zero
constexpr double kStepTol = 1e-11;      // ||p|| threshold declaring the subproblem stationary

void check_qp_shapes(const Matrix& H, const Matrix& G, const Vector& f, const Vector& e) {
  if (H.rows() != H.cols()) throw ShapeMismatch("H must be square");
  if (f.size() != H.rows()) throw ShapeMismatch("f length must match H");
  if (G.cols() != H.rows()) throw ShapeMismatch("G column count must match H");
  if (e.size() != G.rows()) throw ShapeMismatch("e length must match G rows");
  if (!H.allFinite() || !G.allFinite() || !f.allFinite() || !e.allFinite())
    throw ShapeMismatch("QP data must be finite");
}

Vector nonneg_psd_qp(const Matrix& M, const Vector& d, int max_iter);

struct CoreResult {
  Vector z;
  Vector lambda;               // per working-set row, aligned with W
  std::vector<Index> W;
  int iterations = 0;
};

// Primal active-set iteration for min 1/2 z^T H z + f^T z s.t. G z <= e from
// a feasible start. Working-set subproblems are solved through the Schur
// complement G_W H^{-1} G_W^T, refactorized per iteration (problems here are
// small and dense; determinism beats the rank-one-update bookkeeping).
CoreResult active_set_core(const Eigen::LLT<Matrix>& Hf, const Matrix& G, const Vector& f,
                           const Vector& e, const Vector& z0, int max_iter) {
  const Index q = G.rows();
  CoreResult res;
  res.z = z0;
  std::vector<char> in_w(static_cast<std::size_t>(q), 0);

  for (int iter = 1; iter <= max_iter; ++iter) {
    res.iterations = iter;
    const Vector g = (Hf.matrixL() * (Hf.matrixU() * res.z)).eval() + f;  // H z + f without storing H

    Vector p;
    Vector lam;
    const Index w = static_cast<Index>(res.W.size());
    Vector hg = Hf.solve(g);
    if (w == 0) {
      p = -hg;
    } else {
      Matrix GW(w, G.cols());
      for (Index i = 0; i < w; ++i) GW.row(i) = G.row(res.W[static_cast<std::size_t>(i)]);
      Matrix B = Hf.solve(GW.transpose());
      Matrix S = GW * B;
      // Rank-revealing solve: duplicated constraint rows make S singular but
      // leave the system consistent, and the min-norm multipliers simply
      // split the weight between the copies.
      Eigen::CompleteOrthogonalDecomposition<Matrix> Sf(S);
      Sf.setThreshold(1e-12);
      lam = Sf.solve(-(GW * hg));
      if (!lam.allFinite())
        throw MaxIterations("working set became numerically dependent");
      p = -hg - B * lam;
    }

    // p is a difference of hg- and B*lam-sized terms, so its floating-point
    // noise floor scales with them; the exit gate must too or ill-conditioned
    // subproblems (phase 1 especially) spin on noise steps forever.
    const double step_scale = 1.0 + res.z.lpNorm<Eigen::Infinity>() +
                              hg.lpNorm<Eigen::Infinity>() +
                              (p + hg).lpNorm<Eigen::Infinity>();
    if (p.lpNorm<Eigen::Infinity>() <= kStepTol * step_scale) {
      if (w == 0) return res;
      // Most-negative multiplier normally; once the budget is half spent,
      // assume degenerate cycling and fall back to the lowest eligible
      // constraint index (Bland's pivoting rule, which cannot cycle).
      const bool bland = res.iterations > max_iter / 2;
      Index drop = -1;
      double worst = -kDualTol;
      for (Index i = 0; i < w; ++i) {
        if (lam[i] >= -kDualTol) continue;
        const bool better = bland ? (drop < 0 || res.W[static_cast<std::size_t>(i)] <
                                                      res.W[static_cast<std::size_t>(drop)])
                                  : lam[i] < worst;
        if (better) {
          worst = lam[i];
          drop = i;
        }
      }
      if (drop < 0) {
        res.lambda = lam;
        return res;
      }
      in_w[static_cast<std::size_t>(res.W[static_cast<std::size_t>(drop)])] = 0;
      res.W.erase(res.W.begin() + drop);
      continue;
    }

    // Ratio test; ascending scan with strict < keeps the lowest index on ties.
    const Vector Gp = G * p;
    const Vector slack = e - G * res.z;
    double alpha = 1.0;
    Index blocker = -1;
    for (Index i = 0; i < q; ++i) {
      if (in_w[static_cast<std::size_t>(i)]) continue;
      const double d = Gp[i];
      if (d <= 1e-14 * (1.0 + std::abs(Gp[i]))) continue;
      const double ai = std::max(slack[i] / d, 0.0);
      if (ai < alpha) {
        alpha = ai;
        blocker = i;
      }
    }
    res.z += alpha * p;
    if (blocker >= 0) {
      res.W.push_back(blocker);
      in_w[static_cast<std::size_t>(blocker)] = 1;
    }
  }
  throw MaxIterations("active-set iteration limit exceeded");
}

std::vector<Index> classify_active(const Matrix& G, const Vector& e, const Vector& z,
                                   double tol_active) {
  std::vector<Index> act;
  const Vector res = G * z - e;
  for (Index i = 0; i < e.size(); ++i)
    if (std::abs(res[i]) <= tol_active * (1.0 + std::abs(e[i]))) act.push_back(i);
  return act;
}

QPSolution package_solution(const Matrix& H, const Matrix& G, const Vector& f, const Vector& e,
                            const CoreResult& core, const SolveOptions& opts) {
  QPSolution sol;
  sol.primal = core.z;
  sol.dual = Vector::Zero(G.rows());
  for (std::size_t i = 0; i < core.W.size(); ++i)
    sol.dual[core.W[i]] = core.lambda.size() ? core.lambda[static_cast<Index>(i)] : 0.0;
  sol.active = classify_active(G, e, core.z, opts.tol_active);
  sol.kkt_residual = (H * sol.primal + f + G.transpose() * sol.dual).lpNorm<Eigen::Infinity>();
  sol.iterations = core.iterations;
  return sol;
}

}  // namespace

QPSolution solve_qp(const Matrix& H, const Matrix& G, const Vector& f, const Vector& e,
                    const SolveOptions& opts) {
  check_qp_shapes(H, G, f, e);
  const Index l = H.rows();
  const Index q = G.rows();
  const int max_iter = opts.max_iterations > 0 ? opts.max_iterations
                                               : 100 + 50 * static_cast<int>(q);

  Eigen::LLT<Matrix> Hf(0.5 * (H + H.transpose()));
  if (Hf.info() != Eigen::Success) throw NotPositiveDefinite("H is not positive definite");

  const Vector z_u = Hf.solve(-f);
  if (q == 0) {
    CoreResult core;
    core.z = z_u;
    core.iterations = 1;
    return package_solution(H, G, f, e, core, opts);
  }
  const double feas_tol = 1e-9 * (1.0 + e.lpNorm<Eigen::Infinity>());
  const double max_viol = (G * z_u - e).maxCoeff();

  Vector z0 = z_u;
  if (max_viol > feas_tol) {
    // Phase 1: project a point onto the polyhedron by solving the dual of
    // min 1/2 ||z - z_c||^2 s.t. G z <= e. The dual is a bound-constrained
    // PSD QP whose data stays at the scale of G and e (a min-t epigraph
    // formulation needs a tiny regularizer or a big M, and either one turns
    // the stationarity test into a difference of huge near-equal vectors).
    // z_c is z_u clamped to the scale the constraints themselves define: a
    // start point orders of magnitude beyond it buys nothing as a warm start
    // and inflates the dual's multipliers by the same factor. A projection
    // that still violates the constraints certifies the set is empty.
    const double z_cap = 100.0 * (1.0 + e.lpNorm<Eigen::Infinity>()) /
                         (1e-12 + G.cwiseAbs().maxCoeff());
    const double z_norm = z_u.lpNorm<Eigen::Infinity>();
    const Matrix M = G * G.transpose();
    const double gate = 1e-7 * (1.0 + e.lpNorm<Eigen::Infinity>());
    z0 = z_norm > z_cap ? (z_u * (z_cap / z_norm)).eval() : z_u;
    double residual = max_viol;
    // The dual solve leaves a feasibility bias on the active rows that grows
    // with ||lambda||; re-projecting the near-feasible point shrinks the
    // correction dual, and with it the bias, to round-off.
    for (int round = 0; round < 4 && residual > gate; ++round) {
      z0 -= G.transpose() * nonneg_psd_qp(M, e - G * z0, max_iter);
      residual = (G * z0 - e).maxCoeff();
    }
    if (residual > gate)
      throw Infeasible("constraint set is empty (projection violation " +
                       std::to_string(residual) + ")");
  }

  CoreResult core = active_set_core(Hf, G, f, e, z0, max_iter);

  // Polish: re-solve the KKT system of the final working set so phase-1
  // round-off does not linger in the reported point.
  if (!core.W.empty()) {
    const Index w = static_cast<Index>(core.W.size());
    Matrix GW(w, l);
    Vector eW(w);
    for (Index i = 0; i < w; ++i) {
      GW.row(i) = G.row(core.W[static_cast<std::size_t>(i)]);
      eW[i] = e[core.W[static_cast<std::size_t>(i)]];
    }
    Matrix B = Hf.solve(GW.transpose());
    Matrix S = GW * B;
    Eigen::CompleteOrthogonalDecomposition<Matrix> Sf(S);
    Sf.setThreshold(1e-12);
    Vector rhs = GW * Hf.solve(-f) - eW;
    Vector lam = Sf.solve(rhs);
    Vector z = Hf.solve(-(f + GW.transpose() * lam));
    const double viol = (G * z - e).maxCoeff();
    bool lam_ok = lam.allFinite() && z.allFinite() && lam.minCoeff() >= -kDualTol;
    if (lam_ok && viol <= 1e-8 * (1.0 + e.lpNorm<Eigen::Infinity>()) &&
        (z - core.z).lpNorm<Eigen::Infinity>() <= 1e-5 * (1.0 + core.z.lpNorm<Eigen::Infinity>())) {
      core.z = z;
      core.lambda = lam;
    }
  }

  return package_solution(H, G, f, e, core, opts);
}

namespace {

// Bound-constrained QP min_{x >= 0} 1/2 x^T M x + d^T x by Lawson-Hanson
// free-set pivoting. M is only positive SEMIdefinite here (G H^-1 G^T or
// G G^T with q > l), so every free-block system gets a Tikhonov shift tied to
// ||M||: the shifted subproblems are SPD, which is exactly what the classic
// finite-termination argument needs (a freshly entered variable provably
// receives positive weight). The entering screen uses the shifted gradient so
// the outer loop and the subproblems minimize the same function; the shift
// moves multipliers by about delta * ||x||, orders of magnitude below the
// 1e-6 agreement tolerances downstream for data-scaled duals.
Vector nonneg_psd_qp(const Matrix& M, const Vector& d, int max_iter) {
  const Index q = d.size();
  Vector x = Vector::Zero(q);
  std::vector<Index> F;
  std::vector<char> free_mask(static_cast<std::size_t>(q), 0);
  // Entrants whose subproblem weight came back nonpositive, which an SPD
  // solve only produces at round-off scale; parked until the iterate moves.
  std::vector<char> barred(static_cast<std::size_t>(q), 0);
  const double delta = 1e-12 * (1.0 + M.lpNorm<Eigen::Infinity>());
  const double grad_tol = 1e-10 * (1.0 + d.lpNorm<Eigen::Infinity>());

  Vector xF(0);
  for (int iter = 0; iter < max_iter; ++iter) {
    const Vector grad = M * x + d + delta * x;
    Index enter = -1;
    double most_neg = -grad_tol;
    for (Index i = 0; i < q; ++i) {
      if (free_mask[static_cast<std::size_t>(i)] || barred[static_cast<std::size_t>(i)]) continue;
      if (grad[i] < most_neg) {
        most_neg = grad[i];
        enter = i;
      }
    }
    if (enter < 0) return x;

    F.push_back(enter);
    free_mask[static_cast<std::size_t>(enter)] = 1;
    Vector xF_new(static_cast<Index>(F.size()));
    for (Index a = 0; a < static_cast<Index>(F.size()); ++a)
      xF_new[a] = x[F[static_cast<std::size_t>(a)]];
    xF = xF_new;

    bool moved = false;
    for (int pass = 0; pass < static_cast<int>(q) + 2 && !F.empty(); ++pass) {
      const Index nf = static_cast<Index>(F.size());
      Matrix MFF(nf, nf);
      Vector dF(nf);
      for (Index a = 0; a < nf; ++a) {
        dF[a] = d[F[static_cast<std::size_t>(a)]];
        for (Index b = 0; b < nf; ++b)
          MFF(a, b) = M(F[static_cast<std::size_t>(a)], F[static_cast<std::size_t>(b)]);
        MFF(a, a) += delta;
      }
      const Vector cand = Eigen::LLT<Matrix>(MFF).solve(-dF);

      if (cand.minCoeff() >= -1e-13 * (1.0 + cand.lpNorm<Eigen::Infinity>())) {
        xF = cand.cwiseMax(0.0);
        moved = true;
        break;
      }

      // Walk from xF toward cand until the first coordinate hits zero.
      double theta = 1.0;
      Index hit = -1;
      for (Index a = 0; a < nf; ++a) {
        if (cand[a] < 0.0 && xF[a] - cand[a] > 0.0) {
          const double t = xF[a] / (xF[a] - cand[a]);
          if (t < theta) {
            theta = t;
            hit = a;
          }
        }
      }
      if (theta <= 0.0) {
        // Surviving coordinates are strictly positive between passes, so a
        // zero-length walk can only be blocked by this pass's entrant.
        barred[static_cast<std::size_t>(enter)] = 1;
        free_mask[static_cast<std::size_t>(enter)] = 0;
        F.pop_back();
        break;
      }
      xF += theta * (cand - xF);
      if (hit >= 0) xF[hit] = 0.0;
      moved = true;

      // Retire coordinates that reached the bound.
      std::vector<Index> keepF;
      Vector keep_x(nf);
      Index kept = 0;
      const double keep_tol = 1e-13 * (1.0 + xF.lpNorm<Eigen::Infinity>());
      for (Index a = 0; a < nf; ++a) {
        if (xF[a] > keep_tol) {
          keepF.push_back(F[static_cast<std::size_t>(a)]);
          keep_x[kept++] = xF[a];
        } else {
          free_mask[static_cast<std::size_t>(F[static_cast<std::size_t>(a)])] = 0;
        }
      }
      F = keepF;
      xF = keep_x.head(kept).eval();
    }

    x.setZero();
    for (Index a = 0; a < static_cast<Index>(F.size()); ++a)
      x[F[static_cast<std::size_t>(a)]] = xF[a];
    if (moved) std::fill(barred.begin(), barred.end(), 0);
  }
  throw MaxIterations("bound-constrained QP iteration limit exceeded");
}

}  // namespace

QPSolution solve_dual_qp(const Matrix& H, const Matrix& G, const Vector& f, const Vector& e,
                         const SolveOptions& opts) {
  check_qp_shapes(H, G, f, e);
  const Index q = G.rows();
  const int max_iter = opts.max_iterations > 0 ? opts.max_iterations
                                               : 100 + 20 * static_cast<int>(q);

  Eigen::LLT<Matrix> Hf(0.5 * (H + H.transpose()));
  if (Hf.info() != Eigen::Success) throw NotPositiveDefinite("H is not positive definite");

  Matrix HiGt = Hf.solve(G.transpose());
  Matrix M = G * HiGt;
  M = 0.5 * (M + M.transpose()).eval();
  Vector d = G * Hf.solve(f) + e;

  QPSolution sol;
  sol.dual = q == 0 ? Vector::Zero(0) : nonneg_psd_qp(M, d, max_iter);
  sol.primal = -Hf.solve(f + G.transpose() * sol.dual);
  sol.active = classify_active(G, e, sol.primal, opts.tol_active);
  sol.kkt_residual = (H * sol.primal + f + G.transpose() * sol.dual).lpNorm<Eigen::Infinity>();
  sol.iterations = 0;
  return sol;
}

SvdResult svd(const Matrix& A) {
  if (!A.allFinite()) throw ShapeMismatch("svd input must be finite");
  Eigen::JacobiSVD<Matrix> dec(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (dec.info() != Eigen::Success) throw ConvergenceFailure("SVD did not converge");
  SvdResult out;
  out.U = dec.matrixU();
  out.V = dec.matrixV();
  out.singular_values = dec.singularValues();
  out.numeric_rank = 0;
  if (out.singular_values.size() > 0) {
    const double cut = kRankRelTol * out.singular_values[0];
    for (Index i = 0; i < out.singular_values.size(); ++i)
      if (out.singular_values[i] > cut) ++out.numeric_rank;
  }
  return out;
}

LeastSquaresResult solve_underdetermined(const Matrix& A, const Vector& b) {
  if (b.size() != A.rows()) throw ShapeMismatch("rhs length must match rows");
  if (!A.allFinite() || !b.allFinite()) throw ShapeMismatch("system must be finite");
  Eigen::JacobiSVD<Matrix> dec(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (dec.info() != Eigen::Success) throw ConvergenceFailure("SVD did not converge");
  dec.setThreshold(kRankRelTol);
  LeastSquaresResult out;
  out.x = dec.solve(b);
  out.rank = dec.rank();
  out.nullspace_dim = A.cols() - out.rank;
  out.residual = (A * out.x - b).norm();
  return out;
}

}  // namespace rtqp
