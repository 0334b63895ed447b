#include "rtqp/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace rtqp {
namespace {

Matrix symmetrized(const Matrix& A) { return 0.5 * (A + A.transpose()); }

double median(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  const std::size_t mid = xs.size() / 2;
  std::nth_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid), xs.end());
  double hi = xs[mid];
  if (xs.size() % 2 == 1) return hi;
  const double lo = *std::max_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

}  // namespace

InvariantPair invariants(const Ciphertext& c) {
  Eigen::LLT<Matrix> Hf(symmetrized(c.H_tilde));
  if (Hf.info() != Eigen::Success)
    throw SingularHTilde("transformed Hessian is not positive definite");
  InvariantPair out;
  out.M = symmetrized(c.G_tilde * Hf.solve(c.G_tilde.transpose()));
  out.v = c.G_tilde * Hf.solve(c.f_tilde) + c.e_tilde;
  out.step = c.step;
  return out;
}

SpecReport detect_specs(const std::vector<InvariantPair>& pairs, double tol) {
  if (pairs.size() < 2) throw ShapeMismatch("specification detection needs at least two steps");
  const std::size_t n = pairs.size();

  SpecReport rep;
  rep.tolerance_used = tol;

  const double m0 = pairs[0].M.norm();
  rep.spec1 = true;
  for (std::size_t i = 1; i < n; ++i) {
    if ((pairs[i].M - pairs[0].M).norm() > tol * (1.0 + m0)) {
      rep.spec1 = false;
      break;
    }
  }

  // Greedy clustering: the earliest unassigned step seeds a set and captures
  // every later step whose v lies within tol of the seed's.
  std::vector<char> assigned(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (assigned[i]) continue;
    std::vector<int> set{pairs[i].step};
    assigned[i] = 1;
    const double scale = 1.0 + pairs[i].v.norm();
    for (std::size_t j = i + 1; j < n; ++j) {
      if (assigned[j]) continue;
      if ((pairs[j].v - pairs[i].v).norm() <= tol * scale) {
        set.push_back(pairs[j].step);
        assigned[j] = 1;
      }
    }
    if (set.size() >= 2) rep.spec3_sets.push_back(std::move(set));
  }

  // Period: smallest shift whose lagged v-distances collapse. The median is
  // the collapse statistic so a decaying initial transient cannot mask an
  // exact steady-state period.
  std::vector<double> vnorms;
  vnorms.reserve(n);
  for (const auto& p : pairs) vnorms.push_back(p.v.norm());
  const double vscale = 1.0 + median(vnorms);
  for (std::size_t d = 2; d <= n / 2; ++d) {
    std::vector<double> dists;
    dists.reserve(n - d);
    for (std::size_t k = 0; k + d < n; ++k) dists.push_back((pairs[k + d].v - pairs[k].v).norm());
    if (median(dists) <= tol * vscale) {
      rep.period_estimate = static_cast<int>(d);
      break;
    }
  }
  return rep;
}

Guess svd_guess(const Ciphertext& c) {
  const Index l = c.l();
  InvariantPair pair = invariants(c);
  SvdResult dec = svd(pair.M);
  if (dec.numeric_rank < l)
    throw RankDeficientInvariant("invariant rank " + std::to_string(dec.numeric_rank) +
                                 " below " + std::to_string(l));

  Matrix Ghat = dec.U.leftCols(l);
  for (Index j = 0; j < l; ++j) {
    Index imax = 0;
    double best = 0.0;
    for (Index i = 0; i < Ghat.rows(); ++i) {
      if (std::abs(Ghat(i, j)) > best) {
        best = std::abs(Ghat(i, j));
        imax = i;
      }
    }
    if (Ghat(imax, j) < 0.0) Ghat.col(j) = -Ghat.col(j);
  }

  Guess g;
  g.G_hat = Ghat;
  g.H_hat = dec.singular_values.head(l).cwiseInverse().asDiagonal();
  g.R_hat = Ghat.transpose() * c.G_tilde;

  Eigen::FullPivLU<Matrix> lu(g.R_hat.transpose());
  if (!lu.isInvertible()) throw RankDeficientInvariant("recovered key is singular");
  g.f_hat = lu.solve(c.f_tilde);
  g.e_hat = c.e_tilde;
  g.r_hat = Vector::Zero(l);
  g.provenance = GuessProvenance::Svd;
  return g;
}

Guess structure_guess(const Ciphertext& c) {
  const Index l = c.l();
  const Index q = c.q();
  if (q < 2 * l) throw StructureMismatch("too few constraint rows for the banded layout");

  const Matrix top = c.G_tilde.topRows(l);
  const Matrix mid = c.G_tilde.middleRows(l, l);
  if ((mid + top).norm() > 1e-8 * (1.0 + top.norm()))
    throw StructureMismatch("rows l..2l-1 are not the negation of rows 0..l-1");

  Eigen::FullPivLU<Matrix> lu(top);
  if (!lu.isInvertible()) throw StructureMismatch("leading block of the constraint matrix is singular");
  Eigen::FullPivLU<Matrix> luT(top.transpose());

  Guess g;
  g.R_hat = top;
  g.G_hat = luT.solve(c.G_tilde.transpose()).transpose();  // G~ R^{-1}
  g.G_hat.topRows(l) = Matrix::Identity(l, l);
  g.G_hat.middleRows(l, l) = -Matrix::Identity(l, l);
  Matrix Y = luT.solve(c.H_tilde);                          // R^{-T} H~
  g.H_hat = symmetrized(luT.solve(Y.transpose()));          // R^{-T} H~ R^{-1}
  g.f_hat = luT.solve(c.f_tilde);
  g.e_hat = c.e_tilde;
  g.r_hat = Vector::Zero(l);
  g.provenance = GuessProvenance::Structure;
  return g;
}

Matrix derive_key(const Matrix& G_hat, const Matrix& G_tilde) {
  if (G_hat.rows() != G_tilde.rows()) throw ShapeMismatch("row counts must match");
  return G_hat.colPivHouseholderQr().solve(G_tilde);
}

namespace {

void require_shared(const std::vector<Guess>& guesses) {
  for (std::size_t i = 1; i < guesses.size(); ++i) {
    const double dh =
        (guesses[i].H_hat - guesses[0].H_hat).norm() / (1.0 + guesses[0].H_hat.norm());
    const double dg =
        (guesses[i].G_hat - guesses[0].G_hat).norm() / (1.0 + guesses[0].G_hat.norm());
    if (dh > 1e-6 || dg > 1e-6)
      throw AttackAbort("reconstruction requires a shared (H^, G^) across the chosen steps");
  }
}

}  // namespace

ReconstructionResult reconstruct_with_anchor(const std::vector<AdversaryStep>& steps,
                                             const std::vector<Guess>& guesses,
                                             const Vector& z_anchor, Index q_fix) {
  if (steps.empty() || steps.size() != guesses.size())
    throw ShapeMismatch("steps and guesses must align and be nonempty");
  require_shared(guesses);
  const Matrix& H0 = guesses[0].H_hat;
  const Matrix& G0 = guesses[0].G_hat;
  const Index l = H0.rows();
  if (z_anchor.size() != l) throw ShapeMismatch("anchor length must be l");

  ReconstructionResult out;
  out.anchor_used = z_anchor;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& st = steps[i];
    Eigen::FullPivLU<Matrix> lu(guesses[i].R_hat);
    if (!lu.isInvertible()) throw SingularRHat("key guess is singular at step " + std::to_string(st.k));
    Eigen::FullPivLU<Matrix> luT(guesses[i].R_hat.transpose());

    Guess g;
    g.H_hat = H0;
    g.G_hat = G0;
    g.R_hat = guesses[i].R_hat;
    g.r_hat = z_anchor - g.R_hat * st.y_star;
    g.e_hat = st.ct.e_tilde + G0 * g.r_hat;
    g.f_hat = luT.solve(st.ct.f_tilde) - H0 * g.r_hat;
    g.provenance = GuessProvenance::Reconstructed;

    out.steps.push_back(st.k);
    out.z_star_hat.push_back(z_anchor);
    out.guesses.push_back(std::move(g));
  }
  if (q_fix > 0) {
    if (q_fix > steps[0].ct.q()) throw ShapeMismatch("q_fix exceeds the constraint count");
    out.e_fix_hat = out.guesses.back().e_hat.head(q_fix);
  }
  return out;
}

LinearSystem build_multi_instance_system(const std::vector<AdversaryStep>& steps,
                                         const std::vector<Guess>& guesses) {
  if (steps.empty() || steps.size() != guesses.size())
    throw ShapeMismatch("steps and guesses must align and be nonempty");
  require_shared(guesses);
  const Matrix& H0 = guesses[0].H_hat;
  const Matrix& G0 = guesses[0].G_hat;
  const Index q = G0.rows();
  const Index l = G0.cols();
  const Index s = static_cast<Index>(steps.size());

  LinearSystem sys;
  sys.q = q;
  sys.l = l;
  sys.s = s;
  sys.offset_e = 0;
  sys.offset_f = q;
  sys.offset_r = q + l;
  sys.A = Matrix::Zero((q + l) * s, q + l * (s + 1));
  sys.b = Vector::Zero((q + l) * s);

  for (Index i = 0; i < s; ++i) {
    const Index row = i * (q + l);
    const Index rcol = sys.offset_r + l * i;
    const Matrix Rt = guesses[static_cast<std::size_t>(i)].R_hat.transpose();
    sys.A.block(row, sys.offset_e, q, q) = Matrix::Identity(q, q);
    sys.A.block(row, rcol, q, l) = -G0;
    sys.b.segment(row, q) = steps[static_cast<std::size_t>(i)].ct.e_tilde;
    sys.A.block(row + q, sys.offset_f, l, l) = Rt;
    sys.A.block(row + q, rcol, l, l) = Rt * H0;
    sys.b.segment(row + q, l) = steps[static_cast<std::size_t>(i)].ct.f_tilde;
  }
  return sys;
}

LinearSystem append_anchor_rows(const LinearSystem& sys, const AdversaryStep& first,
                                const Guess& first_guess, const Vector& z_anchor) {
  LinearSystem out = sys;
  const Index rows = sys.A.rows();
  out.A.conservativeResize(rows + sys.l, Eigen::NoChange);
  out.A.bottomRows(sys.l).setZero();
  out.A.block(rows, sys.offset_r, sys.l, sys.l) = Matrix::Identity(sys.l, sys.l);
  out.b.conservativeResize(rows + sys.l);
  out.b.tail(sys.l) = z_anchor - first_guess.R_hat * first.y_star;
  return out;
}

LinearSystem build_spec2_system(const std::vector<AdversaryStep>& steps,
                                const std::vector<Guess>& guesses, Index q_fix) {
  if (steps.empty() || steps.size() != guesses.size())
    throw ShapeMismatch("steps and guesses must align and be nonempty");
  require_shared(guesses);
  const Matrix& H0 = guesses[0].H_hat;
  const Matrix& G0 = guesses[0].G_hat;
  const Index q = G0.rows();
  const Index l = G0.cols();
  if (q_fix <= 0 || q_fix > q) throw ShapeMismatch("q_fix must lie in (0, q]");
  const Index q_var = q - q_fix;
  const Index s = static_cast<Index>(steps.size());

  LinearSystem sys;
  sys.q = q;
  sys.l = l;
  sys.s = s;
  sys.q_fix = q_fix;
  sys.offset_e = 0;  // shared e^fix block
  sys.A = Matrix::Zero((q + l) * s, q_fix + s * (q_var + 2 * l));
  sys.b = Vector::Zero((q + l) * s);

  for (Index i = 0; i < s; ++i) {
    const Index row = i * (q + l);
    const Index base = q_fix + i * (q_var + 2 * l);
    const Index evar_col = base;
    const Index f_col = base + q_var;
    const Index r_col = base + q_var + l;
    const Matrix Rt = guesses[static_cast<std::size_t>(i)].R_hat.transpose();

    sys.A.block(row, 0, q_fix, q_fix) = Matrix::Identity(q_fix, q_fix);
    sys.A.block(row, r_col, q_fix, l) = -G0.topRows(q_fix);
    sys.b.segment(row, q_fix) = steps[static_cast<std::size_t>(i)].ct.e_tilde.head(q_fix);

    if (q_var > 0) {
      sys.A.block(row + q_fix, evar_col, q_var, q_var) = Matrix::Identity(q_var, q_var);
      sys.A.block(row + q_fix, r_col, q_var, l) = -G0.bottomRows(q_var);
      sys.b.segment(row + q_fix, q_var) = steps[static_cast<std::size_t>(i)].ct.e_tilde.tail(q_var);
    }

    sys.A.block(row + q, f_col, l, l) = Rt;
    sys.A.block(row + q, r_col, l, l) = Rt * H0;
    sys.b.segment(row + q, l) = steps[static_cast<std::size_t>(i)].ct.f_tilde;
  }
  return sys;
}

ReconstructionResult extend_spec2(const std::vector<AdversaryStep>& steps,
                                  const std::vector<Guess>& guesses, const Guess& solved,
                                  Index q_fix) {
  if (steps.empty() || steps.size() != guesses.size())
    throw ShapeMismatch("steps and guesses must align and be nonempty");
  require_shared(guesses);
  const Matrix& H0 = guesses[0].H_hat;
  const Matrix& G0 = guesses[0].G_hat;
  const Index l = H0.rows();
  const Index q = G0.rows();
  if (q_fix <= l)
    throw UnderdeterminedAfterAnchor("constant e-block must be longer than l");
  if (q_fix > q) throw ShapeMismatch("q_fix exceeds the constraint count");

  const Matrix G_fix = G0.topRows(q_fix);
  Eigen::ColPivHouseholderQR<Matrix> qr(G_fix);
  qr.setThreshold(kRankRelTol);
  if (qr.rank() < l)
    throw UnderdeterminedAfterAnchor("constant e-block does not determine the offsets (rank " +
                                     std::to_string(qr.rank()) + " < " + std::to_string(l) + ")");

  const Vector e_fix = solved.e_hat.head(q_fix);

  ReconstructionResult out;
  out.e_fix_hat = e_fix;
  out.rank = qr.rank();
  out.nullspace_dim = l - qr.rank();
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& st = steps[i];
    Eigen::FullPivLU<Matrix> luT(guesses[i].R_hat.transpose());
    if (!luT.isInvertible())
      throw SingularRHat("key guess is singular at step " + std::to_string(st.k));

    const Vector rhs = e_fix - st.ct.e_tilde.head(q_fix);
    const Vector r_hat = qr.solve(rhs);
    out.max_fix_residual = std::max(out.max_fix_residual, (G_fix * r_hat - rhs).norm());

    Guess g;
    g.H_hat = H0;
    g.G_hat = G0;
    g.R_hat = guesses[i].R_hat;
    g.r_hat = r_hat;
    g.e_hat = Vector(q);
    g.e_hat.head(q_fix) = e_fix;
    if (q > q_fix)
      g.e_hat.tail(q - q_fix) = st.ct.e_tilde.tail(q - q_fix) + G0.bottomRows(q - q_fix) * r_hat;
    g.f_hat = luT.solve(st.ct.f_tilde) - H0 * r_hat;
    g.provenance = GuessProvenance::Reconstructed;

    out.steps.push_back(st.k);
    out.z_star_hat.push_back(g.R_hat * st.y_star + r_hat);
    out.guesses.push_back(std::move(g));
  }
  return out;
}

namespace {

struct RowFingerprints {
  Vector diag;
  std::vector<Vector> sorted_rows;
};

RowFingerprints fingerprints(const Matrix& M) {
  RowFingerprints fp;
  const Index q = M.rows();
  fp.diag = M.diagonal();
  fp.sorted_rows.reserve(static_cast<std::size_t>(q));
  for (Index i = 0; i < q; ++i) {
    Vector row = M.row(i);
    std::sort(row.data(), row.data() + row.size());
    fp.sorted_rows.push_back(std::move(row));
  }
  return fp;
}

bool rows_match(const Vector& a, const Vector& b, double tol) {
  return (a - b).lpNorm<Eigen::Infinity>() <= tol;
}

}  // namespace

PermutationMap resolve_permutations(const std::vector<InvariantPair>& pairs,
                                    const Permutation& p0, const ResolveOptions& opts) {
  if (pairs.empty()) throw ShapeMismatch("permutation resolution needs at least one step");
  const Index q = pairs[0].M.rows();
  if (p0.size() != q) throw ShapeMismatch("reference permutation length mismatch");

  const Matrix& Mref = pairs[0].M;
  const Vector& vref = pairs[0].v;
  const double tolM = opts.tol_match * (1.0 + Mref.cwiseAbs().maxCoeff());
  const double tolv = opts.tol_v * (1.0 + vref.lpNorm<Eigen::Infinity>());
  const RowFingerprints ref_fp = fingerprints(Mref);

  Vector vref_sorted = vref;
  std::sort(vref_sorted.data(), vref_sorted.data() + vref_sorted.size());

  PermutationMap map;
  for (std::size_t idx = 0; idx < pairs.size(); ++idx) {
    map.steps.push_back(pairs[idx].step);
    if (idx == 0) {
      map.resolved.push_back(true);
      map.delta.push_back(Permutation::identity(q));
      map.absolute.push_back(p0);
      continue;
    }

    const Matrix& Mk = pairs[idx].M;
    const Vector& vk = pairs[idx].v;
    const RowFingerprints fp = fingerprints(Mk);

    std::vector<std::vector<Index>> cand(static_cast<std::size_t>(q));
    for (Index i = 0; i < q; ++i)
      for (Index j = 0; j < q; ++j)
        if (std::abs(fp.diag[i] - ref_fp.diag[j]) <= tolM &&
            rows_match(fp.sorted_rows[static_cast<std::size_t>(i)],
                       ref_fp.sorted_rows[static_cast<std::size_t>(j)], tolM))
          cand[static_cast<std::size_t>(i)].push_back(j);

    // v' carries the same permutation whenever the unpermuted v agree, which
    // is checkable from the sorted entries alone.
    if (opts.use_v_refinement) {
      Vector vk_sorted = vk;
      std::sort(vk_sorted.data(), vk_sorted.data() + vk_sorted.size());
      if ((vk_sorted - vref_sorted).lpNorm<Eigen::Infinity>() <= tolv) {
        for (Index i = 0; i < q; ++i) {
          auto& ci = cand[static_cast<std::size_t>(i)];
          ci.erase(std::remove_if(ci.begin(), ci.end(),
                                  [&](Index j) { return std::abs(vk[i] - vref[j]) > tolv; }),
                   ci.end());
        }
      }
    }

    // Constraint propagation: pin singletons, enforce bijectivity, and prune
    // candidates that disagree with any pinned row on the pairwise entries.
    std::vector<Index> match(static_cast<std::size_t>(q), -1);
    std::vector<char> used(static_cast<std::size_t>(q), 0);
    bool changed = true;
    while (changed) {
      changed = false;
      for (Index i = 0; i < q; ++i) {
        auto& ci = cand[static_cast<std::size_t>(i)];
        if (match[static_cast<std::size_t>(i)] >= 0) continue;
        ci.erase(std::remove_if(ci.begin(), ci.end(),
                                [&](Index j) { return used[static_cast<std::size_t>(j)]; }),
                 ci.end());
        for (Index i2 = 0; i2 < q && !ci.empty(); ++i2) {
          const Index j2 = match[static_cast<std::size_t>(i2)];
          if (j2 < 0) continue;
          ci.erase(std::remove_if(ci.begin(), ci.end(),
                                  [&](Index j) {
                                    return std::abs(Mk(i, i2) - Mref(j, j2)) > tolM;
                                  }),
                   ci.end());
        }
        if (ci.size() == 1) {
          match[static_cast<std::size_t>(i)] = ci[0];
          used[static_cast<std::size_t>(ci[0])] = 1;
          changed = true;
        }
      }
      // A reference row claimed by exactly one undecided row is forced.
      for (Index j = 0; j < q; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        Index owner = -1;
        int count = 0;
        for (Index i = 0; i < q; ++i) {
          if (match[static_cast<std::size_t>(i)] >= 0) continue;
          const auto& ci = cand[static_cast<std::size_t>(i)];
          if (std::find(ci.begin(), ci.end(), j) != ci.end()) {
            ++count;
            owner = i;
          }
        }
        if (count == 1) {
          match[static_cast<std::size_t>(owner)] = j;
          used[static_cast<std::size_t>(j)] = 1;
          cand[static_cast<std::size_t>(owner)] = {j};
          changed = true;
        }
      }
    }

    bool complete = true;
    for (Index i = 0; i < q; ++i)
      if (match[static_cast<std::size_t>(i)] < 0) complete = false;

    if (complete) {
      std::vector<Index> m(match.begin(), match.end());
      Permutation delta{std::move(m)};
      map.resolved.push_back(true);
      map.absolute.push_back(delta.compose(p0));
      map.delta.push_back(std::move(delta));
    } else {
      // Group mutually entangled rows through shared candidates.
      std::vector<Index> group_of(static_cast<std::size_t>(q), -1);
      Index ngroups = 0;
      for (Index i = 0; i < q; ++i) {
        if (match[static_cast<std::size_t>(i)] >= 0 || group_of[static_cast<std::size_t>(i)] >= 0)
          continue;
        std::vector<Index> stack{i};
        group_of[static_cast<std::size_t>(i)] = ngroups;
        std::vector<Index> rows;
        std::vector<Index> cands;
        while (!stack.empty()) {
          const Index cur = stack.back();
          stack.pop_back();
          rows.push_back(cur);
          for (Index j : cand[static_cast<std::size_t>(cur)]) {
            if (std::find(cands.begin(), cands.end(), j) == cands.end()) cands.push_back(j);
            for (Index i2 = 0; i2 < q; ++i2) {
              if (match[static_cast<std::size_t>(i2)] >= 0 ||
                  group_of[static_cast<std::size_t>(i2)] >= 0)
                continue;
              const auto& c2 = cand[static_cast<std::size_t>(i2)];
              if (std::find(c2.begin(), c2.end(), j) != c2.end()) {
                group_of[static_cast<std::size_t>(i2)] = ngroups;
                stack.push_back(i2);
              }
            }
          }
        }
        std::sort(rows.begin(), rows.end());
        std::sort(cands.begin(), cands.end());
        map.ambiguity_sets.push_back(AmbiguityGroup{pairs[idx].step, std::move(rows), std::move(cands)});
        ++ngroups;
      }
      map.resolved.push_back(false);
      map.delta.push_back(Permutation::identity(q));
      map.absolute.push_back(p0);
    }
  }
  return map;
}

Ciphertext unpermute(const Ciphertext& c, const Permutation& p) {
  if (p.size() != c.q()) throw ShapeMismatch("permutation length does not match ciphertext");
  Ciphertext out = c;
  const Permutation inv = p.inverse();
  out.G_tilde = inv.apply_rows(c.G_tilde);
  out.e_tilde = inv.apply(c.e_tilde);
  out.permuted = false;
  return out;
}

}  // namespace rtqp
