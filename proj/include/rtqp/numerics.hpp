#pragma once

#include "rtqp/types.hpp"

namespace rtqp {

// Solution of min_z 1/2 z^T H z + f^T z  s.t.  G z <= e, with H SPD.
// Multipliers satisfy H z + f + G^T lambda = 0, lambda >= 0.
struct QPSolution {
  Vector primal;
  Vector dual;                  // size q, zero off the active set
  std::vector<Index> active;    // ascending indices with |G z - e|_i tight
  double kkt_residual = 0.0;    // ||H z + f + G^T lambda||_inf
  int iterations = 0;
};

struct SolveOptions {
  double tol_kkt = 1e-8;        // multiplier nonnegativity slack and final residual gate
  double tol_active = 1e-7;     // i active iff |(G z - e)_i| <= tol_active * (1 + |e_i|)
  int max_iterations = 0;       // 0: use 100 + 50 * q
};

QPSolution solve_qp(const Matrix& H, const Matrix& G, const Vector& f, const Vector& e,
                    const SolveOptions& opts = {});

// Solves the explicitly formed dual
//   min_{lambda >= 0} 1/2 lambda^T (G H^{-1} G^T) lambda + (G H^{-1} f + e)^T lambda
// and recovers the primal from stationarity. Independent of the primal
// active-set path so the two routes can be cross-checked.
QPSolution solve_dual_qp(const Matrix& H, const Matrix& G, const Vector& f, const Vector& e,
                         const SolveOptions& opts = {});

struct SvdResult {
  Matrix U;                     // m x m
  Vector singular_values;       // descending
  Matrix V;                     // n x n
  Index numeric_rank = 0;       // #{sigma_i > 1e-10 * sigma_1}
};

SvdResult svd(const Matrix& A);

struct LeastSquaresResult {
  Vector x;                     // min-norm least-squares solution
  Index rank = 0;
  Index nullspace_dim = 0;      // cols - rank
  double residual = 0.0;        // ||A x - b||_2
};

// Min-norm solution of A x = b (any shape), rank detected at the same
// 1e-10 relative threshold as svd().
LeastSquaresResult solve_underdetermined(const Matrix& A, const Vector& b);

inline constexpr double kRankRelTol = 1e-10;

}  // namespace rtqp
