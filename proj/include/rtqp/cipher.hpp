#pragma once

#include "rtqp/numerics.hpp"
#include "rtqp/types.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace rtqp {

// min_z 1/2 z^T H z + f^T z  s.t.  G z <= e. H is l x l SPD, G is q x l
// with full column rank.
struct QPInstance {
  Matrix H;
  Matrix G;
  Vector f;
  Vector e;
  int step = 0;

  Index l() const { return H.rows(); }
  Index q() const { return G.rows(); }
};

struct TransformKey {
  Matrix R;                        // invertible l x l
  Vector r;                        // l
  std::optional<Permutation> P;    // row permutation of the constraints, if any
  int step = 0;
};

// Transformed instance the cloud sees. Substituting z = R y + r:
//   H~ = R^T H R, G~ = G R, f~ = R^T (f + H r), e~ = e - G r,
// and when permuted, G~ and e~ rows additionally shuffled by P.
struct Ciphertext {
  Matrix H_tilde;
  Matrix G_tilde;
  Vector f_tilde;
  Vector e_tilde;
  bool permuted = false;
  int step = 0;

  Index l() const { return H_tilde.rows(); }
  Index q() const { return G_tilde.rows(); }
};

enum class GuessProvenance { Svd, Structure, Composed, Reconstructed, Trivial, Manual };

// Candidate plaintext-and-key pair (H^, G^, f^, e^) + (R^, r^). Consistent iff
//   H~ = R^T H^ R^,  G~ = G^ R^,  f~ = R^T (f^ + H^ r^),  e~ = e^ - G^ r^.
struct Guess {
  Matrix H_hat;
  Matrix G_hat;
  Vector f_hat;
  Vector e_hat;
  Matrix R_hat;
  Vector r_hat;
  GuessProvenance provenance = GuessProvenance::Manual;
};

struct KeygenOptions {
  double lo = -10.0;
  double hi = 10.0;
  bool permute = false;
  double max_condition = 1e8;      // resample R above this
  int max_resamples = 100;
};

TransformKey keygen(Index l, Index q, std::uint64_t seed, const KeygenOptions& opts = {});

Ciphertext encrypt(const QPInstance& qp, const TransformKey& key);

// y* -> z* = R y* + r.
Vector decrypt_solution(const Vector& y_star, const TransformKey& key);

// Dual and active set transfer untouched modulo the row permutation.
Vector decrypt_dual(const Vector& lambda_star, const TransformKey& key);

// Given a consistent guess (H^, G^, ..., R^, r^) for ciphertext c and a
// trial key (R_t, r_t), rewrites the guess as seen through the trial key:
//   H' = R_t^T H^ R_t, G' = G^ R_t, f' = R_t^T (f^ + H^ r_t), e' = e^ - G^ r_t,
//   R' = R_t^{-1} R^, r' = R_t^{-1} (r^ - r_t).
Guess compose_guess(const Guess& guess, const Matrix& R_trial, const Vector& r_trial);

// The tautological guess (H~, G~, f~, e~) with identity key.
Guess trivial_guess(const Ciphertext& c);

struct ConsistencyReport {
  bool consistent = false;
  double max_relative_residual = 0.0;
  double res_H = 0.0, res_G = 0.0, res_f = 0.0, res_e = 0.0;
};

// Relative residuals of the four defining equations, gated at tol.
ConsistencyReport check_consistency(const Guess& guess, const Ciphertext& c, double tol = 1e-6);

}  // namespace rtqp
