#include "rtqp/cipher.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <utility>

namespace rtqp {
namespace {

// Explicit uniform-double construction so key streams are reproducible
// independent of standard-library distribution internals.
double next_uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + u * (hi - lo);
}

std::uint64_t next_bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = bound * (UINT64_MAX / bound);
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

double condition_number(const Matrix& R) {
  Eigen::JacobiSVD<Matrix> dec(R);
  const auto& sv = dec.singularValues();
  const double smin = sv[sv.size() - 1];
  if (smin <= 0.0) return std::numeric_limits<double>::infinity();
  return sv[0] / smin;
}

}  // namespace

TransformKey keygen(Index l, Index q, std::uint64_t seed, const KeygenOptions& opts) {
  if (l < 1 || q < 1) throw ShapeMismatch("keygen requires l, q >= 1");
  if (!(opts.lo < opts.hi)) throw ShapeMismatch("keygen range must satisfy lo < hi");

  std::mt19937_64 rng(seed);
  TransformKey key;
  key.R.resize(l, l);

  bool ok = false;
  for (int attempt = 0; attempt < opts.max_resamples; ++attempt) {
    for (Index i = 0; i < l; ++i)
      for (Index j = 0; j < l; ++j) key.R(i, j) = next_uniform(rng, opts.lo, opts.hi);
    if (condition_number(key.R) <= opts.max_condition) {
      ok = true;
      break;
    }
  }
  if (!ok) throw ResampleLimitExceeded("no well-conditioned R within the resample budget");

  key.r.resize(l);
  for (Index i = 0; i < l; ++i) key.r[i] = next_uniform(rng, opts.lo, opts.hi);

  if (opts.permute) {
    Permutation p = Permutation::identity(q);
    for (Index i = q - 1; i > 0; --i) {
      const Index j = static_cast<Index>(next_bounded(rng, static_cast<std::uint64_t>(i) + 1));
      std::swap(p.map[static_cast<std::size_t>(i)], p.map[static_cast<std::size_t>(j)]);
    }
    key.P = std::move(p);
  }
  return key;
}

Ciphertext encrypt(const QPInstance& qp, const TransformKey& key) {
  const Index l = qp.l();
  const Index q = qp.q();
  if (qp.H.cols() != l || qp.G.cols() != l || qp.f.size() != l || qp.e.size() != q)
    throw ShapeMismatch("inconsistent QP instance shapes");
  if (key.R.rows() != l || key.R.cols() != l || key.r.size() != l)
    throw ShapeMismatch("key dimensions do not match the instance");
  if (key.P && key.P->size() != q)
    throw ShapeMismatch("permutation length does not match constraint count");

  Ciphertext c;
  c.H_tilde = key.R.transpose() * qp.H * key.R;
  c.H_tilde = 0.5 * (c.H_tilde + c.H_tilde.transpose()).eval();
  c.G_tilde = qp.G * key.R;
  c.f_tilde = key.R.transpose() * (qp.f + qp.H * key.r);
  c.e_tilde = qp.e - qp.G * key.r;
  c.step = qp.step;
  c.permuted = key.P.has_value();
  if (key.P) {
    c.G_tilde = key.P->apply_rows(c.G_tilde);
    c.e_tilde = key.P->apply(c.e_tilde);
  }

  Eigen::LLT<Matrix> chk(c.H_tilde);
  if (chk.info() != Eigen::Success)
    throw ShapeMismatch("transformed H lost positive definiteness; key.R is numerically singular");
  return c;
}

Vector decrypt_solution(const Vector& y_star, const TransformKey& key) {
  if (y_star.size() != key.R.cols()) throw ShapeMismatch("optimizer length does not match key");
  return key.R * y_star + key.r;
}

Vector decrypt_dual(const Vector& lambda_star, const TransformKey& key) {
  if (!key.P) return lambda_star;
  if (lambda_star.size() != key.P->size())
    throw ShapeMismatch("dual length does not match permutation");
  return key.P->inverse().apply(lambda_star);
}

Guess compose_guess(const Guess& guess, const Matrix& R_trial, const Vector& r_trial) {
  const Index l = guess.H_hat.rows();
  if (R_trial.rows() != l || R_trial.cols() != l || r_trial.size() != l)
    throw ShapeMismatch("trial key dimensions do not match the guess");

  Eigen::FullPivLU<Matrix> lu(R_trial);
  if (!lu.isInvertible()) throw SingularComposer("composition matrix is singular");

  Guess out;
  out.H_hat = R_trial.transpose() * guess.H_hat * R_trial;
  out.H_hat = 0.5 * (out.H_hat + out.H_hat.transpose()).eval();
  out.G_hat = guess.G_hat * R_trial;
  out.f_hat = R_trial.transpose() * (guess.f_hat + guess.H_hat * r_trial);
  out.e_hat = guess.e_hat - guess.G_hat * r_trial;
  out.R_hat = lu.solve(guess.R_hat);
  out.r_hat = lu.solve(guess.r_hat - r_trial);
  out.provenance = GuessProvenance::Composed;
  return out;
}

Guess trivial_guess(const Ciphertext& c) {
  Guess g;
  g.H_hat = c.H_tilde;
  g.G_hat = c.G_tilde;
  g.f_hat = c.f_tilde;
  g.e_hat = c.e_tilde;
  g.R_hat = Matrix::Identity(c.l(), c.l());
  g.r_hat = Vector::Zero(c.l());
  g.provenance = GuessProvenance::Trivial;
  return g;
}

ConsistencyReport check_consistency(const Guess& g, const Ciphertext& c, double tol) {
  if (g.H_hat.rows() != c.l() || g.G_hat.rows() != c.q() || g.R_hat.rows() != c.l() ||
      g.f_hat.size() != c.l() || g.e_hat.size() != c.q() || g.r_hat.size() != c.l())
    throw ShapeMismatch("guess shapes do not match ciphertext");

  ConsistencyReport rep;
  rep.res_H = (g.R_hat.transpose() * g.H_hat * g.R_hat - c.H_tilde).norm() / (1.0 + c.H_tilde.norm());
  rep.res_G = (g.G_hat * g.R_hat - c.G_tilde).norm() / (1.0 + c.G_tilde.norm());
  rep.res_f =
      (g.R_hat.transpose() * (g.f_hat + g.H_hat * g.r_hat) - c.f_tilde).norm() / (1.0 + c.f_tilde.norm());
  rep.res_e = (g.e_hat - g.G_hat * g.r_hat - c.e_tilde).norm() / (1.0 + c.e_tilde.norm());
  rep.max_relative_residual = std::max({rep.res_H, rep.res_G, rep.res_f, rep.res_e});
  rep.consistent = rep.max_relative_residual <= tol;
  return rep;
}

}  // namespace rtqp
