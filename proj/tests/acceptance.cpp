// Acceptance gate: one line per criterion, nonzero exit if any fails.
#include "rtqp/attack.hpp"
#include "rtqp/cipher.hpp"
#include "rtqp/harness.hpp"
#include "rtqp/mpc.hpp"
#include "rtqp/numerics.hpp"

#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace rtqp;

namespace {

int g_failures = 0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

void report(int idx, const std::string& name, const std::function<Outcome()>& fn) {
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& ex) {
    o.pass = false;
    o.detail = std::string("unexpected exception: ") + ex.what();
  }
  std::printf("[%s] %d. %s: %s\n", o.pass ? "PASS" : "FAIL", idx, name.c_str(),
              o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++g_failures;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", x);
  return buf;
}

QPInstance random_instance(std::mt19937_64& rng, Index l, Index q) {
  oracle::FeasibleQP p = oracle::random_feasible_qp(rng, l, q);
  QPInstance qp;
  qp.H = p.H;
  qp.G = p.G;
  qp.f = p.f;
  qp.e = p.e;
  return qp;
}

Vector demo_x0() {
  Vector x0(4);
  x0 << 10.0, -2.0, 10.0, 2.0;
  return x0;
}

EpisodeLog make_episode(ScenarioKind kind, int T, bool permute) {
  KeySource ks;
  ks.base_seed = 11;
  return closed_loop(scenario_plant(), scenario_mpc_config(kind), demo_x0(), Vector::Zero(2), T,
                     ks, permute);
}

bool contains_all(const std::vector<std::vector<int>>& sets, const std::vector<int>& wanted,
                  std::vector<int>* found = nullptr) {
  for (const auto& s : sets) {
    if (std::all_of(wanted.begin(), wanted.end(),
                    [&](int k) { return std::find(s.begin(), s.end(), k) != s.end(); })) {
      if (found) *found = s;
      return true;
    }
  }
  return false;
}

// 1. Decrypted optimizers match the plaintext optimizers on random data.
Outcome criterion_cipher_roundtrip() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1001);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const QPInstance qp = random_instance(rng, 10, 60);
    const TransformKey key = keygen(10, 60, 9000 + static_cast<std::uint64_t>(i));
    const Ciphertext ct = encrypt(qp, key);
    const Vector z_plain = solve_qp(qp.H, qp.G, qp.f, qp.e).primal;
    const Vector z_cloud =
        decrypt_solution(solve_qp(ct.H_tilde, ct.G_tilde, ct.f_tilde, ct.e_tilde).primal, key);
    worst = std::max(worst, (z_plain - z_cloud).lpNorm<Eigen::Infinity>());
  }
  const double dt = seconds_since(t0);
  Outcome o;
  o.pass = worst <= 1e-6 && dt < 10.0;
  o.detail = "100 instances (l=10, q=60), max |dz|_inf = " + fmt(worst) + ", " + fmt(dt) + " s";
  return o;
}

// 2. Both ciphertext invariants equal their plaintext counterparts; duals agree.
Outcome criterion_invariants() {
  std::mt19937_64 rng(1002);
  double worst_inv = 0.0;
  double worst_dual = 0.0;
  for (int i = 0; i < 100; ++i) {
    const QPInstance qp = random_instance(rng, 10, 60);
    const TransformKey key = keygen(10, 60, 9500 + static_cast<std::uint64_t>(i));
    const Ciphertext ct = encrypt(qp, key);

    const Matrix Hinv = qp.H.llt().solve(Matrix::Identity(10, 10));
    const Matrix M_plain = qp.G * Hinv * qp.G.transpose();
    const Vector v_plain = qp.G * Hinv * qp.f + qp.e;
    const InvariantPair inv = invariants(ct);
    worst_inv = std::max(worst_inv, (inv.M - M_plain).norm() / (1.0 + M_plain.norm()));
    worst_inv = std::max(worst_inv, (inv.v - v_plain).norm() / (1.0 + v_plain.norm()));

    const Vector lam_plain = solve_qp(qp.H, qp.G, qp.f, qp.e).dual;
    const Vector lam_cloud =
        decrypt_dual(solve_qp(ct.H_tilde, ct.G_tilde, ct.f_tilde, ct.e_tilde).dual, key);
    worst_dual = std::max(worst_dual, (lam_plain - lam_cloud).lpNorm<Eigen::Infinity>());
  }
  Outcome o;
  o.pass = worst_inv <= 1e-8 && worst_dual <= 1e-6;
  o.detail = "100 pairs, max invariant deviation = " + fmt(worst_inv) +
             ", max |dlambda|_inf = " + fmt(worst_dual);
  return o;
}

// 3. The SVD guess is consistent on every scenario ciphertext; with distinct
// singular values it is identical across steps of a constant-(H, G) stream.
Outcome criterion_svd_guess(const EpisodeLog& setpoint, const EpisodeLog& tracking) {
  double worst_res = 0.0;
  bool all_consistent = true;
  for (const EpisodeLog* log : {&setpoint, &tracking}) {
    for (const EpisodeRecord& rec : log->records) {
      const ConsistencyReport rep = check_consistency(svd_guess(rec.ct), rec.ct, 1e-6);
      worst_res = std::max(worst_res, rep.max_relative_residual);
      all_consistent = all_consistent && rep.consistent;
    }
  }

  // The scenario invariant has a heavily tied spectrum, which leaves the
  // first-l singular subspace non-unique, so the cross-step identity is
  // checked on a generic constant-(H, G) stream with simple spectrum.
  const Vector sv = svd(invariants(setpoint.records[0].ct).M).singular_values.head(10);
  double min_gap = std::numeric_limits<double>::infinity();
  for (Index i = 0; i + 1 < 10; ++i) min_gap = std::min(min_gap, (sv[i] - sv[i + 1]) / sv[0]);

  std::mt19937_64 rng(1003);
  const QPInstance qp = random_instance(rng, 10, 60);
  std::vector<Guess> guesses;
  for (int k = 0; k < 10; ++k)
    guesses.push_back(svd_guess(encrypt(qp, keygen(10, 60, 9800 + static_cast<std::uint64_t>(k)))));
  double worst_cross = 0.0;
  for (std::size_t a = 1; a < guesses.size(); ++a) {
    worst_cross = std::max(
        worst_cross, (guesses[a].H_hat - guesses[0].H_hat).norm() / (1.0 + guesses[0].H_hat.norm()));
    worst_cross = std::max(
        worst_cross, (guesses[a].G_hat - guesses[0].G_hat).norm() / (1.0 + guesses[0].G_hat.norm()));
  }

  Outcome o;
  o.pass = all_consistent && worst_cross <= 1e-6;
  o.detail = "max consistency residual = " + fmt(worst_res) +
             " over 81 scenario ciphertexts; scenario spectrum tied (min rel gap = " +
             fmt(min_gap) + "), cross-step check on a simple-spectrum stream: max dev = " +
             fmt(worst_cross);
  return o;
}

// 4. The stacked reconstruction system has rank q + l s, nullity l, and
// becomes uniquely solvable once l anchor equations are appended.
Outcome criterion_rank_structure(const EpisodeLog& setpoint) {
  std::vector<AdversaryStep> view = adversary_view(setpoint);
  bool ok = true;
  std::ostringstream detail;
  for (int s = 1; s <= 3; ++s) {
    std::vector<AdversaryStep> steps;
    std::vector<Guess> guesses;
    for (int i = 0; i < s; ++i) {
      steps.push_back(view[static_cast<std::size_t>(18 + i)]);
      guesses.push_back(structure_guess(view[static_cast<std::size_t>(18 + i)].ct));
    }
    const LinearSystem sys = build_multi_instance_system(steps, guesses);
    const Index rank = svd(sys.A).numeric_rank;
    const Index nullity = sys.A.cols() - rank;

    const Vector z_true = setpoint.records[static_cast<std::size_t>(steps[0].k)].z_star;
    const LinearSystem anchored = append_anchor_rows(sys, steps[0], guesses[0], z_true);
    const LeastSquaresResult sol = solve_underdetermined(anchored.A, anchored.b);

    const bool this_ok = rank == 60 + 10 * s && nullity == 10 &&
                         sol.rank == anchored.A.cols() && sol.nullspace_dim == 0 &&
                         sol.residual <= 1e-6 * (1.0 + anchored.b.norm());
    ok = ok && this_ok;
    detail << "s=" << s << ": rank " << rank << "/" << sys.A.cols() << " (nullity " << nullity
           << "), anchored rank " << sol.rank << (s < 3 ? "; " : "");
  }
  Outcome o;
  o.pass = ok;
  o.detail = detail.str();
  return o;
}

// 5. Setpoint experiment: spec detection plus full zero-anchor attack.
Outcome criterion_setpoint(const EpisodeLog& setpoint) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<InvariantPair> pairs;
  for (const EpisodeRecord& rec : setpoint.records) pairs.push_back(invariants(rec.ct));
  const SpecReport rep = detect_specs(pairs, 5e-2);
  std::vector<int> wanted;
  for (int k = 8; k <= 20; ++k) wanted.push_back(k);
  const bool detected = rep.spec1 && contains_all(rep.spec3_sets, wanted);

  AttackOptions opts;
  opts.tol_constancy = 5e-2;
  const AttackMetrics m = run_attack(setpoint, opts);
  const double dt = seconds_since(t0);

  Outcome o;
  o.pass = detected && m.max_abs_error <= 1e-3 && dt < 30.0;
  o.detail = std::string("spec1 ") + (rep.spec1 ? "yes" : "no") + ", K holds {8..20}: " +
             (detected ? "yes" : "no") + ", max |du| = " + fmt(m.max_abs_error) + ", " +
             fmt(dt) + " s";
  return o;
}

// 6. Tracking experiment: period, K, constant-offset error structure.
Outcome criterion_tracking(const EpisodeLog& tracking) {
  const AttackMetrics m = run_attack(tracking, {});
  const bool period_ok = m.spec.period_estimate && *m.spec.period_estimate == 20;
  const bool k_ok = contains_all(m.spec.spec3_sets, {10, 30, 50});
  const double std_max = m.error_std.lpNorm<Eigen::Infinity>();
  const double mean2 = m.per_step_abs_error.col(1).mean();

  Outcome o;
  o.pass = period_ok && k_ok && std_max <= 1e-3 && mean2 <= 5e-2;
  o.detail = "period = " + (m.spec.period_estimate ? std::to_string(*m.spec.period_estimate)
                                                   : std::string("none")) +
             ", K holds {10,30,50}: " + (k_ok ? "yes" : "no") +
             ", error std max = " + fmt(std_max) + ", mean |du_2| = " + fmt(mean2);
  return o;
}

// 7. Permutation recovery: exact on a generic stream; ambiguity reported and
// then removed by the v-refinement on the structured scenario.
Outcome criterion_permutations() {
  std::mt19937_64 rng(1007);
  const QPInstance qp = random_instance(rng, 6, 18);
  KeygenOptions kopts;
  kopts.permute = true;
  std::vector<InvariantPair> pairs;
  std::vector<Permutation> truth;
  for (int k = 0; k < 50; ++k) {
    const TransformKey key = keygen(6, 18, 9900 + static_cast<std::uint64_t>(k), kopts);
    pairs.push_back(invariants(encrypt(qp, key)));
    truth.push_back(*key.P);
  }
  const PermutationMap generic = resolve_permutations(pairs, truth[0]);
  int exact = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (generic.resolved[i] && generic.absolute[i] == truth[i]) ++exact;

  const EpisodeLog permuted = make_episode(ScenarioKind::Tracking, 51, true);
  std::vector<InvariantPair> struct_pairs;
  std::vector<Permutation> struct_truth;
  for (int k : {10, 30, 50}) {
    const EpisodeRecord& rec = permuted.records[static_cast<std::size_t>(k)];
    InvariantPair p = invariants(rec.ct);
    p.step = k;
    struct_pairs.push_back(std::move(p));
    struct_truth.push_back(*rec.key.P);
  }
  const PermutationMap coarse = resolve_permutations(struct_pairs, struct_truth[0]);
  const bool reported = !coarse.all_resolved() && !coarse.ambiguity_sets.empty();

  ResolveOptions fine_opts;
  fine_opts.tol_v = 4e-3;  // covers the deterministic drift of v across one period
  const PermutationMap fine = resolve_permutations(struct_pairs, struct_truth[0], fine_opts);
  bool refined = fine.all_resolved();
  for (std::size_t i = 0; i < struct_truth.size(); ++i)
    refined = refined && fine.absolute[i] == struct_truth[i];

  Outcome o;
  o.pass = exact == 50 && reported && refined;
  o.detail = "generic stream " + std::to_string(exact) + "/50 exact; scenario ambiguity sets: " +
             std::to_string(coarse.ambiguity_sets.size()) +
             (reported ? " (reported)" : " (missing)") +
             ", v-refinement resolves: " + (refined ? "yes" : "no");
  return o;
}

// 8. Negative control: unrelated per-step problems never flag Specification 1.
Outcome criterion_negative_control() {
  int false_positives = 0;
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(2000 + static_cast<std::uint64_t>(seed));
    std::vector<InvariantPair> pairs;
    for (int k = 0; k < 50; ++k) {
      QPInstance qp = random_instance(rng, 4, 12);
      qp.step = k;
      InvariantPair p =
          invariants(encrypt(qp, keygen(4, 12, 3000 + static_cast<std::uint64_t>(seed * 50 + k))));
      p.step = k;
      pairs.push_back(std::move(p));
    }
    const SpecReport rep = detect_specs(pairs, 1e-6);
    if (rep.spec1 || !rep.spec3_sets.empty()) ++false_positives;
  }
  Outcome o;
  o.pass = false_positives == 0;
  o.detail = std::to_string(false_positives) + "/20 seeds flagged (50 steps each, tol 1e-6)";
  return o;
}

}  // namespace

int main() {
  const EpisodeLog setpoint = make_episode(ScenarioKind::Setpoint, 21, false);
  const EpisodeLog tracking = make_episode(ScenarioKind::Tracking, 60, false);

  report(1, "cipher round trip", [] { return criterion_cipher_roundtrip(); });
  report(2, "ciphertext invariants and dual agreement", [] { return criterion_invariants(); });
  report(3, "SVD guess consistency",
         [&] { return criterion_svd_guess(setpoint, tracking); });
  report(4, "reconstruction system rank structure",
         [&] { return criterion_rank_structure(setpoint); });
  report(5, "setpoint reconstruction", [&] { return criterion_setpoint(setpoint); });
  report(6, "tracking reconstruction", [&] { return criterion_tracking(tracking); });
  report(7, "permutation recovery", [] { return criterion_permutations(); });
  report(8, "negative control", [] { return criterion_negative_control(); });

  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all 8 criteria passed\n");
  return 0;
}
