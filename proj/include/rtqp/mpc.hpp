#pragma once

#include "rtqp/episode.hpp"

#include <cstdint>
#include <vector>

namespace rtqp {

struct PlantModel {
  Matrix A;
  Matrix B;
  Matrix C_out;   // p x n output selector
  Vector x_lo, x_hi;
  Vector u_lo, u_hi;

  Index n() const { return A.rows(); }
  Index m() const { return B.cols(); }
  Index p() const { return C_out.rows(); }
};

struct ReferenceSpec {
  enum class Kind { Setpoint, Circle };
  Kind kind = Kind::Setpoint;
  double radius = 10.0;
  double period = 20.0;
  double phase = 0.0;
  bool counterclockwise = true;
};

struct MPCConfig {
  int N = 5;
  Matrix Q_weight;   // p x p, PSD
  Matrix R_weight;   // m x m, PD (rate penalty)
  ReferenceSpec reference;
};

struct PlantState {
  Vector x;
  Vector u_prev;
  int k = 0;
};

// Fresh per-step transformation keys, deterministic in (base_seed, k).
struct KeySource {
  std::uint64_t base_seed = 1;
  double lo = -10.0;
  double hi = 10.0;
  bool identity = false;   // testing hook: R = I, r = 0, no permutation

  TransformKey make(int k, Index l, Index q, bool permute) const;
};

// Reference samples y_ref(k), ..., y_ref(k+N); the condensed cost pairs the
// predicted outputs y(k+1), ..., y(k+N) with samples 0..N-1.
std::vector<Vector> reference(const MPCConfig& cfg, int k);

// Condenses the horizon onto the stacked input z = (u(k), ..., u(k+N-1)):
//   min 1/2 z^T H z + f^T z  s.t.  G z <= e
// with G = [I_l; -I_l; state-bound blocks] and e carrying input bounds first.
// H and G depend only on (model, cfg), never on the state.
QPInstance build_condensed_qp(const PlantModel& model, const MPCConfig& cfg,
                              const PlantState& state);

// Simulates T steps of encrypt -> cloud-solve -> decrypt -> apply. Records
// ground truth alongside what the cloud saw.
EpisodeLog closed_loop(const PlantModel& model, const MPCConfig& cfg, const Vector& x0,
                       const Vector& u_prev0, int T, const KeySource& key_source,
                       bool permute);

}  // namespace rtqp
