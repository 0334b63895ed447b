#pragma once

#include "rtqp/cipher.hpp"
#include "rtqp/numerics.hpp"

#include <optional>
#include <vector>

namespace rtqp {

// Key-independent functions of a ciphertext: M = G~ H~^{-1} G~^T and
// v = G~ H~^{-1} f~ + e~ equal the same expressions in the plaintext
// parameters (row/column-permuted when the ciphertext is permuted).
struct InvariantPair {
  Matrix M;
  Vector v;
  int step = 0;
};

struct SpecReport {
  bool spec1 = false;                        // M constant over all observed steps
  std::vector<std::vector<int>> spec3_sets;  // index sets with constant v, |set| >= 2
  std::optional<int> period_estimate;
  double tolerance_used = 0.0;
};

struct ReconstructionResult {
  std::vector<int> steps;
  std::vector<Guess> guesses;        // aligned with steps
  std::vector<Vector> z_star_hat;    // recovered plaintext optimizers
  Vector e_fix_hat;
  Vector anchor_used;
  Index rank = 0;
  Index nullspace_dim = 0;
  double max_fix_residual = 0.0;     // worst least-squares residual in the fixed-block solves
};

struct AmbiguityGroup {
  int step = 0;
  std::vector<Index> rows;           // rows of M'_k not uniquely matched
  std::vector<Index> candidates;     // union of their candidate reference rows
};

struct PermutationMap {
  std::vector<int> steps;
  std::vector<bool> resolved;
  std::vector<Permutation> delta;     // P_k P_ref^T, identity placeholder when unresolved
  std::vector<Permutation> absolute;  // delta composed with the supplied reference permutation
  std::vector<AmbiguityGroup> ambiguity_sets;

  bool all_resolved() const {
    for (bool r : resolved)
      if (!r) return false;
    return true;
  }
};

// What the cloud legitimately accumulates: step index, transformed
// parameters, and its own reported optimizer. Attack code consumes only this.
struct AdversaryStep {
  int k = 0;
  Ciphertext ct;
  Vector y_star;
};

InvariantPair invariants(const Ciphertext& c);

SpecReport detect_specs(const std::vector<InvariantPair>& pairs, double tol);

// Guess from the SVD of M: H^ = D~^{-1}, G^ = first l columns of U~,
// R^ = G^^T G~, completed with f^ = R^^{-T} f~, e^ = e~, r^ = 0.
Guess svd_guess(const Ciphertext& c);

// Guess exploiting the [I_l; -I_l; *] constraint layout: R^ = top l x l
// block of G~, G^ = G~ R^^{-1}, H^ = R^^{-T} H~ R^^{-1}.
Guess structure_guess(const Ciphertext& c);

// Least-squares key recovery R^ = G^+ G~ for steps where only the shared G^
// is known.
Matrix derive_key(const Matrix& G_hat, const Matrix& G_tilde);

// Closed-form reconstruction on a constant-optimizer index set: given a
// guess z_anchor for the (shared) plaintext optimizer,
//   r^_k = z_anchor - R^_k y*_k, e^_k = e~_k + G^ r^_k, f^_k = R^_k^{-T} f~_k - H^ r^_k.
// q_fix > 0 additionally records e^_fix from the last step's head block.
ReconstructionResult reconstruct_with_anchor(const std::vector<AdversaryStep>& steps,
                                             const std::vector<Guess>& guesses,
                                             const Vector& z_anchor, Index q_fix = 0);

struct LinearSystem {
  Matrix A;
  Vector b;
  // Column layout of the unknown stack.
  Index q = 0, l = 0, s = 0, q_fix = 0;
  Index offset_e = 0, offset_f = 0, offset_r = 0;  // r-blocks are contiguous per instance
};

// Shared-(e, f) multi-instance system with unknowns (e^, f^, r^_{k_1..k_s}).
LinearSystem build_multi_instance_system(const std::vector<AdversaryStep>& steps,
                                         const std::vector<Guess>& guesses);

// Appends the l equations r^_{k_1} = z_anchor - R^_{k_1} y*_{k_1}.
LinearSystem append_anchor_rows(const LinearSystem& sys, const AdversaryStep& first,
                                const Guess& first_guess, const Vector& z_anchor);

// Variant where only the leading q_fix entries of e^ are shared; unknowns
// (e^fix, then per instance e^var_k, f^_k, r^_k). Used to check its rank
// deficiency numerically.
LinearSystem build_spec2_system(const std::vector<AdversaryStep>& steps,
                                const std::vector<Guess>& guesses, Index q_fix);

// Propagates one solved instance to every logged step through the constant
// leading e-block: solves G^fix r^_k = e^fix - e~fix_k per step, then fills
// e^var_k, f^_k and the optimizer z^*_k = R^_k y*_k + r^_k.
ReconstructionResult extend_spec2(const std::vector<AdversaryStep>& steps,
                                  const std::vector<Guess>& guesses, const Guess& solved,
                                  Index q_fix);

struct ResolveOptions {
  double tol_match = 1e-8;     // relative to max |M'_ref|
  double tol_v = 1e-6;         // relative, for the v'-based refinement
  bool use_v_refinement = true;
};

// Matches rows of each permuted invariant against the reference step
// (pairs[0], whose absolute permutation p0 is supplied) by diagonal value and
// sorted-row fingerprint, then prunes with already-matched rows and, when the
// v multisets of two steps agree, with the v' relation. Rows that remain
// ambiguous are reported, never guessed.
PermutationMap resolve_permutations(const std::vector<InvariantPair>& pairs,
                                    const Permutation& p0, const ResolveOptions& opts = {});

// Undoes a recovered row permutation: G~ = P^T G~', e~ = P^T e~'.
Ciphertext unpermute(const Ciphertext& c, const Permutation& p);

}  // namespace rtqp
