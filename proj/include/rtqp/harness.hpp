#pragma once

#include "rtqp/attack.hpp"
#include "rtqp/episode.hpp"
#include "rtqp/mpc.hpp"

#include <string>
#include <vector>

namespace rtqp {

// Double-integrator pair: A = I_2 (x) [[1, 1], [0, 1]], B = I_2 (x) [0.5; 1],
// outputs pick the two positions, |x_pos| <= 20, |x_vel| <= 5, |u| <= 1.
PlantModel scenario_plant();

// N = 5, Q = I_2, rate penalty 0.1 I_2, reference per scenario kind. The
// phase default matches ScenarioConfig so direct callers and config-driven
// runs agree.
MPCConfig scenario_mpc_config(ScenarioKind kind,
                              double circle_phase = ScenarioConfig{}.circle_phase);

// Runs the closed loop from x(0) = (10, -2, 10, 2), u(-1) = 0 and writes
// episode.json, trajectory.csv, ciphertext_norms.csv into cfg.output_dir.
EpisodeLog run_scenario(const ScenarioConfig& cfg);

struct AttackOptions {
  enum class Anchor { Zero, Oracle, Custom };
  enum class KSelect { Largest, Contains };

  Anchor anchor = Anchor::Zero;
  Vector custom_anchor;
  KSelect k_select = KSelect::Largest;
  int k_contains = -1;          // used by KSelect::Contains
  double tol_constancy = -1.0;  // < 0: take the episode's configured tolerance
  bool use_p0 = false;          // permuted episodes: assume P of the first K step is known
};

struct AttackMetrics {
  SpecReport spec;
  std::string guess_mode;            // "structure" or "svd"
  std::vector<int> steps;
  Matrix u_hat;                      // T x m reconstructed inputs
  Matrix u_true;                     // T x m ground truth
  Matrix per_step_abs_error;         // T x m
  Vector offset_estimate;            // mean signed error per component
  Vector error_std;                  // std of signed error per component
  double max_abs_error = 0.0;
  std::vector<int> k_used;
  int pin_step = -1;                 // solved instance propagated by the e-fix block
  Index rank = 0;
  Index nullspace_dim = 0;
  double perm_recovery_rate = -1.0;  // -1 when the episode is unpermuted
};

// invariants -> detect_specs -> (resolve permutations) -> per-step guesses ->
// anchor reconstruction on the chosen K -> propagation to all steps ->
// metrics against the log's ground truth. Throws AttackAbort with a stage tag
// when a pipeline precondition fails.
AttackMetrics run_attack(const EpisodeLog& log, const AttackOptions& options = {});

std::vector<AdversaryStep> adversary_view(const EpisodeLog& log);

// Quick self-check battery (round trips, invariants, one small end-to-end run).
int selftest(std::uint64_t seed = 1);

int run_cli(int argc, char** argv);

}  // namespace rtqp
