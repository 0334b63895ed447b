#pragma once

#include "rtqp/cipher.hpp"

#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace rtqp {

enum class ScenarioKind { Setpoint, Tracking };

struct Tolerances {
  double constancy = 1e-3;    // invariant-constancy detection on closed-loop data
  double consistency = 1e-6;  // guess consistency residual gate
  double rank = 1e-10;        // relative singular-value threshold
};

struct ScenarioConfig {
  ScenarioKind scenario = ScenarioKind::Setpoint;
  int steps = 21;
  bool permute = false;
  double key_lo = -10.0;
  double key_hi = 10.0;
  std::uint64_t seed = 1;
  Tolerances tolerances;
  std::string output_dir = ".";
  // Half the per-step arc: a ZOH input acts over [k, k+1), so advancing the
  // sampled circle by pi/20 centers each input on its reference arc and the
  // steady-state u_2 crosses zero exactly at the lateral extremes.
  double circle_phase = std::numbers::pi / 20.0;
};

struct EpisodeRecord {
  int k = 0;
  QPInstance qp;        // ground truth, harness-only
  TransformKey key;     // ground truth, harness-only
  Ciphertext ct;
  Vector y_star;        // cloud's optimizer of the transformed QP
  Vector z_star;        // decrypt_solution(y_star, key)
  Vector x;             // state at step k
  Vector u;             // applied input (first m entries of z_star)
};

struct EpisodeLog {
  std::vector<EpisodeRecord> records;
  Vector x_final;
  std::optional<ScenarioConfig> config;

  int steps() const { return static_cast<int>(records.size()); }
};

}  // namespace rtqp
