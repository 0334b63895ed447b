#include "rtqp/mpc.hpp"

#include "rtqp/numerics.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace rtqp {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

void validate_model(const PlantModel& model) {
  if (model.A.rows() != model.A.cols()) throw ShapeMismatch("A must be square");
  if (model.B.rows() != model.A.rows()) throw ShapeMismatch("B row count must match A");
  if (model.C_out.cols() != model.A.rows()) throw ShapeMismatch("C_out column count must match A");
  if (model.x_lo.size() != model.n() || model.x_hi.size() != model.n())
    throw ShapeMismatch("state bound lengths must match n");
  if (model.u_lo.size() != model.m() || model.u_hi.size() != model.m())
    throw ShapeMismatch("input bound lengths must match m");
  if (((model.x_hi - model.x_lo).array() <= 0).any() ||
      ((model.u_hi - model.u_lo).array() <= 0).any())
    throw ShapeMismatch("bounds must satisfy lo < hi elementwise");
}

}  // namespace

TransformKey KeySource::make(int k, Index l, Index q, bool permute) const {
  if (identity) {
    TransformKey key;
    key.R = Matrix::Identity(l, l);
    key.r = Vector::Zero(l);
    key.step = k;
    return key;
  }
  KeygenOptions opts;
  opts.lo = lo;
  opts.hi = hi;
  opts.permute = permute;
  const std::uint64_t seed =
      splitmix64(base_seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(k) + 1));
  TransformKey key = keygen(l, q, seed, opts);
  key.step = k;
  return key;
}

std::vector<Vector> reference(const MPCConfig& cfg, int k) {
  const Index p = cfg.Q_weight.rows();
  std::vector<Vector> samples;
  samples.reserve(static_cast<std::size_t>(cfg.N) + 1);
  if (cfg.reference.kind == ReferenceSpec::Kind::Setpoint) {
    for (int j = 0; j <= cfg.N; ++j) samples.push_back(Vector::Zero(p));
    return samples;
  }
  if (p != 2) throw ShapeMismatch("circular reference requires two outputs");
  const double dir = cfg.reference.counterclockwise ? 1.0 : -1.0;
  for (int j = 0; j <= cfg.N; ++j) {
    const double theta =
        2.0 * std::numbers::pi * static_cast<double>(k + j) / cfg.reference.period +
        cfg.reference.phase;
    Vector s(2);
    s << cfg.reference.radius * std::cos(theta), dir * cfg.reference.radius * std::sin(theta);
    samples.push_back(std::move(s));
  }
  return samples;
}

QPInstance build_condensed_qp(const PlantModel& model, const MPCConfig& cfg,
                              const PlantState& state) {
  validate_model(model);
  const Index n = model.n();
  const Index m = model.m();
  const Index p = model.p();
  const int N = cfg.N;
  if (N < 1) throw ShapeMismatch("horizon must be at least 1");
  if (cfg.Q_weight.rows() != p || cfg.Q_weight.cols() != p)
    throw ShapeMismatch("Q weight must be p x p");
  if (cfg.R_weight.rows() != m || cfg.R_weight.cols() != m)
    throw ShapeMismatch("R weight must be m x m");
  if (state.x.size() != n || state.u_prev.size() != m)
    throw ShapeMismatch("state dimensions do not match the model");

  const Index l = m * N;

  std::vector<Matrix> Apow(static_cast<std::size_t>(N) + 1);
  Apow[0] = Matrix::Identity(n, n);
  for (int i = 1; i <= N; ++i) Apow[static_cast<std::size_t>(i)] = Apow[static_cast<std::size_t>(i - 1)] * model.A;

  // Phi[i] maps the input stack to x(k+i).
  std::vector<Matrix> Phi(static_cast<std::size_t>(N) + 1, Matrix::Zero(n, l));
  for (int i = 1; i <= N; ++i)
    for (int j = 0; j < i; ++j)
      Phi[static_cast<std::size_t>(i)].middleCols(m * j, m) =
          Apow[static_cast<std::size_t>(i - 1 - j)] * model.B;

  Matrix Theta = Matrix::Zero(p * N, l);
  Matrix Gamma = Matrix::Zero(p * N, n);
  for (int i = 1; i <= N; ++i) {
    Theta.middleRows(p * (i - 1), p) = model.C_out * Phi[static_cast<std::size_t>(i)];
    Gamma.middleRows(p * (i - 1), p) = model.C_out * Apow[static_cast<std::size_t>(i)];
  }

  // Rate map: (D z - E u_prev) stacks u(k)-u(k-1), ..., u(k+N-1)-u(k+N-2).
  Matrix D = Matrix::Identity(l, l);
  for (int i = 1; i < N; ++i) D.block(m * i, m * (i - 1), m, m) = -Matrix::Identity(m, m);
  Matrix E = Matrix::Zero(l, m);
  E.topRows(m) = Matrix::Identity(m, m);

  Matrix Qbar = Matrix::Zero(p * N, p * N);
  Matrix Rbar = Matrix::Zero(l, l);
  for (int i = 0; i < N; ++i) {
    Qbar.block(p * i, p * i, p, p) = cfg.Q_weight;
    Rbar.block(m * i, m * i, m, m) = cfg.R_weight;
  }

  // Predicted output y(k+i+1) tracks the reference sample at k+i.
  const std::vector<Vector> refs = reference(cfg, state.k);
  Vector Yref(p * N);
  for (int i = 0; i < N; ++i) Yref.segment(p * i, p) = refs[static_cast<std::size_t>(i)];

  QPInstance qp;
  qp.H = 2.0 * (Theta.transpose() * Qbar * Theta + D.transpose() * Rbar * D);
  qp.H = 0.5 * (qp.H + qp.H.transpose()).eval();
  qp.f = 2.0 * (Theta.transpose() * Qbar * (Gamma * state.x - Yref) -
                D.transpose() * Rbar * E * state.u_prev);

  const Index q = 2 * l + 2 * n * N;
  qp.G = Matrix::Zero(q, l);
  qp.e = Vector::Zero(q);
  qp.G.topRows(l) = Matrix::Identity(l, l);
  qp.G.middleRows(l, l) = -Matrix::Identity(l, l);
  for (int i = 0; i < N; ++i) {
    qp.e.segment(m * i, m) = model.u_hi;
    qp.e.segment(l + m * i, m) = -model.u_lo;
  }
  for (int i = 1; i <= N; ++i) {
    const Index row = 2 * l + 2 * n * (i - 1);
    const Vector free_resp = Apow[static_cast<std::size_t>(i)] * state.x;
    qp.G.middleRows(row, n) = Phi[static_cast<std::size_t>(i)];
    qp.G.middleRows(row + n, n) = -Phi[static_cast<std::size_t>(i)];
    qp.e.segment(row, n) = model.x_hi - free_resp;
    qp.e.segment(row + n, n) = -model.x_lo + free_resp;
  }
  qp.step = state.k;
  return qp;
}

EpisodeLog closed_loop(const PlantModel& model, const MPCConfig& cfg, const Vector& x0,
                       const Vector& u_prev0, int T, const KeySource& key_source,
                       bool permute) {
  validate_model(model);
  if (T < 1) throw ShapeMismatch("episode length must be at least 1");

  EpisodeLog log;
  log.records.reserve(static_cast<std::size_t>(T));
  Vector x = x0;
  Vector u_prev = u_prev0;

  for (int k = 0; k < T; ++k) {
    EpisodeRecord rec;
    rec.k = k;
    rec.qp = build_condensed_qp(model, cfg, PlantState{x, u_prev, k});
    rec.key = key_source.make(k, rec.qp.l(), rec.qp.q(), permute);
    rec.ct = encrypt(rec.qp, rec.key);
    try {
      rec.y_star = solve_qp(rec.ct.H_tilde, rec.ct.G_tilde, rec.ct.f_tilde, rec.ct.e_tilde).primal;
    } catch (const Infeasible& ex) {
      throw Infeasible("episode aborted at step " + std::to_string(k) + ": " + ex.what());
    }
    rec.z_star = decrypt_solution(rec.y_star, rec.key);
    rec.x = x;
    rec.u = rec.z_star.head(model.m());

    x = model.A * x + model.B * rec.u;
    u_prev = rec.u;
    log.records.push_back(std::move(rec));
  }
  log.x_final = x;
  return log;
}

}  // namespace rtqp
