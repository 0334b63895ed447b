#include "rtqp/attack.hpp"
#include "rtqp/harness.hpp"
#include "rtqp/mpc.hpp"

#include <doctest.h>

#include "oracles.hpp"

#include <algorithm>
#include <random>

using namespace rtqp;

namespace {

Vector demo_x0() {
  Vector x0(4);
  x0 << 10.0, -2.0, 10.0, 2.0;
  return x0;
}

const EpisodeLog& setpoint_episode() {
  static const EpisodeLog log = [] {
    KeySource ks;
    ks.base_seed = 11;
    return closed_loop(scenario_plant(), scenario_mpc_config(ScenarioKind::Setpoint), demo_x0(),
                       Vector::Zero(2), 21, ks, false);
  }();
  return log;
}

const EpisodeLog& tracking_episode() {
  static const EpisodeLog log = [] {
    KeySource ks;
    ks.base_seed = 11;
    return closed_loop(scenario_plant(), scenario_mpc_config(ScenarioKind::Tracking), demo_x0(),
                       Vector::Zero(2), 60, ks, false);
  }();
  return log;
}

std::vector<InvariantPair> pairs_of(const EpisodeLog& log) {
  std::vector<InvariantPair> pairs;
  for (const EpisodeRecord& rec : log.records) pairs.push_back(invariants(rec.ct));
  return pairs;
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

// Invariant pair computed straight from plaintext data, bypassing attack.cpp.
InvariantPair plaintext_invariants(const QPInstance& qp) {
  const Matrix Hinv = qp.H.llt().solve(Matrix::Identity(qp.l(), qp.l()));
  InvariantPair out;
  out.M = qp.G * Hinv * qp.G.transpose();
  out.v = qp.G * Hinv * qp.f + qp.e;
  return out;
}

bool set_contains(const std::vector<std::vector<int>>& sets, const std::vector<int>& wanted) {
  for (const auto& s : sets) {
    if (std::all_of(wanted.begin(), wanted.end(),
                    [&](int k) { return std::find(s.begin(), s.end(), k) != s.end(); }))
      return true;
  }
  return false;
}

}  // namespace

TEST_CASE("invariants: identity key reproduces the plaintext expressions") {
  std::mt19937_64 rng(900);
  QPInstance qp = random_instance(rng, 4, 11);
  TransformKey id;
  id.R = Matrix::Identity(4, 4);
  id.r = Vector::Zero(4);
  const InvariantPair got = invariants(encrypt(qp, id));
  const InvariantPair want = plaintext_invariants(qp);
  CHECK((got.M - want.M).norm() <= 1e-10 * (1.0 + want.M.norm()));
  CHECK((got.v - want.v).norm() <= 1e-10 * (1.0 + want.v.norm()));
}

TEST_CASE("invariants: independent of the key, conjugated by the permutation") {
  std::mt19937_64 rng(901);
  QPInstance qp = random_instance(rng, 5, 14);
  const InvariantPair a = invariants(encrypt(qp, keygen(5, 14, 1)));
  const InvariantPair b = invariants(encrypt(qp, keygen(5, 14, 2)));
  CHECK((a.M - b.M).norm() <= 1e-8 * (1.0 + a.M.norm()));
  CHECK((a.v - b.v).norm() <= 1e-8 * (1.0 + a.v.norm()));

  KeygenOptions opts;
  opts.permute = true;
  TransformKey pkey = keygen(5, 14, 3, opts);
  const InvariantPair c = invariants(encrypt(qp, pkey));
  const Matrix P = pkey.P->to_matrix();
  CHECK((c.M - P * a.M * P.transpose()).norm() <= 1e-8 * (1.0 + a.M.norm()));
  CHECK((c.v - P * a.v).norm() <= 1e-8 * (1.0 + a.v.norm()));
}

TEST_CASE("invariants: M is symmetric PSD with numeric rank l") {
  std::mt19937_64 rng(902);
  for (int trial = 0; trial < 5; ++trial) {
    QPInstance qp = random_instance(rng, 4, 10);
    const InvariantPair p = invariants(encrypt(qp, keygen(4, 10, 40 + trial)));
    CHECK((p.M - p.M.transpose()).lpNorm<Eigen::Infinity>() <= 1e-10 * (1.0 + p.M.norm()));
    Eigen::SelfAdjointEigenSolver<Matrix> es(p.M);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8 * (1.0 + p.M.norm()));
    CHECK(svd(p.M).numeric_rank == 4);
  }
}

TEST_CASE("invariants: indefinite transformed Hessian is rejected") {
  Ciphertext c;
  c.H_tilde = Matrix::Identity(2, 2);
  c.H_tilde(1, 1) = -1.0;
  c.G_tilde = Matrix::Ones(3, 2);
  c.f_tilde = Vector::Zero(2);
  c.e_tilde = Vector::Ones(3);
  CHECK_THROWS_AS(invariants(c), SingularHTilde);
}

TEST_CASE("detect_specs: setpoint episode flags a constant tail") {
  const SpecReport rep = detect_specs(pairs_of(setpoint_episode()), 5e-2);
  CHECK(rep.spec1);
  CHECK(rep.tolerance_used == 5e-2);
  std::vector<int> wanted;
  for (int k = 8; k <= 20; ++k) wanted.push_back(k);
  CHECK(set_contains(rep.spec3_sets, wanted));
  for (const auto& s : rep.spec3_sets) CHECK(s.size() >= 2);
}

TEST_CASE("detect_specs: tracking episode finds the period") {
  const std::vector<InvariantPair> pairs = pairs_of(tracking_episode());
  const SpecReport rep = detect_specs(pairs, 1e-3);
  CHECK(rep.spec1);
  CHECK(set_contains(rep.spec3_sets, {10, 30, 50}));
  REQUIRE(rep.period_estimate.has_value());
  CHECK(*rep.period_estimate == 20);

  // Reported sets honor the clustering tolerance pairwise (triangle bound
  // around the seed representative).
  for (const auto& s : rep.spec3_sets) {
    const Vector& seed = pairs[static_cast<std::size_t>(s.front())].v;
    for (int k : s) {
      const Vector& vk = pairs[static_cast<std::size_t>(k)].v;
      CHECK((vk - seed).norm() <= 1e-3 * (1.0 + seed.norm()));
    }
  }
}

TEST_CASE("detect_specs: unrelated instances produce no findings") {
  std::mt19937_64 rng(903);
  std::vector<InvariantPair> pairs;
  for (int k = 0; k < 8; ++k) {
    QPInstance qp = random_instance(rng, 4, 9);
    qp.step = k;
    InvariantPair p = invariants(encrypt(qp, keygen(4, 9, 70 + k)));
    p.step = k;
    pairs.push_back(std::move(p));
  }
  const SpecReport rep = detect_specs(pairs, 1e-6);
  CHECK(!rep.spec1);
  CHECK(rep.spec3_sets.empty());
  CHECK(!rep.period_estimate.has_value());

  CHECK_THROWS_AS(detect_specs({pairs[0]}, 1e-6), ShapeMismatch);
}

TEST_CASE("svd_guess: consistent on scenario ciphertexts, deterministic") {
  for (const EpisodeLog* log : {&setpoint_episode(), &tracking_episode()}) {
    for (int k : {0, 7, 15}) {
      const Ciphertext& ct = log->records[static_cast<std::size_t>(k)].ct;
      const Guess g = svd_guess(ct);
      CHECK(g.provenance == GuessProvenance::Svd);
      const ConsistencyReport rep = check_consistency(g, ct);
      CHECK(rep.consistent);
      CHECK(rep.max_relative_residual <= 1e-6);
      const Guess again = svd_guess(ct);
      CHECK(g.H_hat == again.H_hat);
      CHECK(g.G_hat == again.G_hat);
    }
  }
}

TEST_CASE("svd_guess: same plaintext under two keys yields the same guess") {
  std::mt19937_64 rng(904);
  QPInstance qp = random_instance(rng, 5, 17);
  const Ciphertext c1 = encrypt(qp, keygen(5, 17, 21));
  const Ciphertext c2 = encrypt(qp, keygen(5, 17, 22));

  // The guess is only canonical when the invariant spectrum is simple; this
  // random stream has well-separated singular values.
  const SvdResult spec = svd(invariants(c1).M);
  for (Index i = 0; i + 1 < 5; ++i)
    REQUIRE(spec.singular_values[i] - spec.singular_values[i + 1] >
            1e-6 * spec.singular_values[0]);

  const Guess g1 = svd_guess(c1);
  const Guess g2 = svd_guess(c2);
  CHECK((g1.H_hat - g2.H_hat).norm() <= 1e-6 * (1.0 + g1.H_hat.norm()));
  CHECK((g1.G_hat - g2.G_hat).norm() <= 1e-6 * (1.0 + g1.G_hat.norm()));
}

TEST_CASE("svd_guess: orthogonal constraints with identity Hessian") {
  // G a rotation, H = I: M = G G^T = I, so D = I and H^ = D^{-1} = I.
  const double th = 0.3;
  QPInstance qp;
  qp.H = Matrix::Identity(2, 2);
  qp.G = Matrix(2, 2);
  qp.G << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  qp.f = Vector(2);
  qp.f << 1.0, -2.0;
  qp.e = Vector::Ones(2);
  TransformKey id;
  id.R = Matrix::Identity(2, 2);
  id.r = Vector::Zero(2);
  const Ciphertext c = encrypt(qp, id);
  const Guess g = svd_guess(c);
  CHECK((g.H_hat - Matrix::Identity(2, 2)).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK(check_consistency(g, c).consistent);
}

TEST_CASE("svd_guess: rank-deficient invariant is rejected") {
  QPInstance qp;
  qp.H = Matrix::Identity(2, 2);
  qp.G = Matrix(3, 2);
  qp.G << 1.0, 0.0, 2.0, 0.0, 3.0, 0.0;  // rank 1 < l = 2
  qp.f = Vector::Zero(2);
  qp.e = Vector::Ones(3);
  TransformKey id;
  id.R = Matrix::Identity(2, 2);
  id.r = Vector::Zero(2);
  CHECK_THROWS_AS(svd_guess(encrypt(qp, id)), RankDeficientInvariant);
}

TEST_CASE("structure_guess: recovers the exact key on scenario data") {
  const EpisodeRecord& rec = setpoint_episode().records[3];
  const Guess g = structure_guess(rec.ct);
  CHECK(g.provenance == GuessProvenance::Structure);
  // The top l rows of G are exactly I_l, so the top block of G~ is exactly R.
  CHECK(g.R_hat == rec.key.R);
  CHECK(g.G_hat.topRows(10) == Matrix::Identity(10, 10));
  CHECK(g.G_hat.middleRows(10, 10) == -Matrix::Identity(10, 10));
  CHECK((g.G_hat - rec.qp.G).norm() <= 1e-9 * (1.0 + rec.qp.G.norm()));
  CHECK((g.H_hat - rec.qp.H).norm() <= 1e-9 * (1.0 + rec.qp.H.norm()));
  CHECK((g.f_hat - (rec.qp.f + rec.qp.H * rec.key.r)).norm() <=
        1e-9 * (1.0 + rec.qp.f.norm()));
  CHECK(check_consistency(g, rec.ct).consistent);

  TransformKey id;
  id.R = Matrix::Identity(10, 10);
  id.r = Vector::Zero(10);
  CHECK(structure_guess(encrypt(rec.qp, id)).R_hat == Matrix::Identity(10, 10));
}

TEST_CASE("structure_guess: absent pattern raises StructureMismatch") {
  std::mt19937_64 rng(905);
  QPInstance qp = random_instance(rng, 4, 12);  // random top block
  CHECK_THROWS_AS(structure_guess(encrypt(qp, keygen(4, 12, 5))), StructureMismatch);

  QPInstance narrow = random_instance(rng, 4, 6);  // q < 2l
  CHECK_THROWS_AS(structure_guess(encrypt(narrow, keygen(4, 6, 6))), StructureMismatch);
}

TEST_CASE("derive_key: least squares on the shared constraint matrix") {
  const EpisodeRecord& rec = tracking_episode().records[5];
  const Matrix R_hat = derive_key(rec.qp.G, rec.ct.G_tilde);
  CHECK((R_hat - rec.key.R).norm() <= 1e-9 * (1.0 + rec.key.R.norm()));
}

TEST_CASE("reconstruct_with_anchor: true anchor reproduces e, f, r exactly") {
  // The anchor doubles as every step's optimizer, so exactness needs steps
  // that share z* exactly. Raising e only on rows strictly inactive at z*
  // leaves z* the optimizer of each variant; the input-bound head stays
  // untouched, matching the partially shared layout.
  const EpisodeLog& log = tracking_episode();
  const QPInstance& base = log.records[10].qp;
  const Vector z_true = log.records[10].z_star;
  const Vector slack = base.e - base.G * z_true;

  std::mt19937_64 rng(906);
  std::vector<AdversaryStep> steps;
  std::vector<Guess> guesses;
  std::vector<QPInstance> plains;
  std::vector<TransformKey> keys;
  for (int i = 0; i < 3; ++i) {
    QPInstance qp = base;
    if (i > 0)
      for (Index row = 20; row < qp.e.size(); ++row)
        if (slack[row] > 1e-3) qp.e[row] += oracle::urand(rng, 0.1, 0.5);
    plains.push_back(qp);
    keys.push_back(keygen(10, 60, 7100 + i));
    AdversaryStep st;
    st.k = i;
    st.ct = encrypt(qp, keys.back());
    st.y_star = solve_qp(st.ct.H_tilde, st.ct.G_tilde, st.ct.f_tilde,
                         st.ct.e_tilde).primal;
    steps.push_back(st);
    guesses.push_back(structure_guess(st.ct));
  }

  const ReconstructionResult res = reconstruct_with_anchor(steps, guesses, z_true, 20);
  REQUIRE(res.guesses.size() == 3);
  CHECK(res.anchor_used == z_true);
  CHECK(res.e_fix_hat.size() == 20);
  CHECK((res.e_fix_hat - base.e.head(20)).lpNorm<Eigen::Infinity>() <=
        1e-6 * (1.0 + base.e.lpNorm<Eigen::Infinity>()));
  for (std::size_t i = 0; i < res.guesses.size(); ++i) {
    const Guess& g = res.guesses[i];
    CHECK(g.provenance == GuessProvenance::Reconstructed);
    const double scale = 1.0 + plains[i].e.lpNorm<Eigen::Infinity>();
    CHECK((g.e_hat - plains[i].e).lpNorm<Eigen::Infinity>() <= 1e-6 * scale);
    CHECK((g.f_hat - plains[i].f).lpNorm<Eigen::Infinity>() <=
          1e-6 * (1.0 + plains[i].f.lpNorm<Eigen::Infinity>()));
    CHECK((g.r_hat - keys[i].r).lpNorm<Eigen::Infinity>() <=
          1e-6 * (1.0 + keys[i].r.lpNorm<Eigen::Infinity>()));
    CHECK(check_consistency(g, steps[i].ct).consistent);
  }
}

TEST_CASE("reconstruct_with_anchor: zero anchor error equals the missed optimizer") {
  // With anchor a and exact key guesses, r^_k - r_k = a - z*_k; downstream,
  // e^_k - e_k = G (r^_k - r_k) and f^_k - f_k = -H (r^_k - r_k).
  const EpisodeLog& log = setpoint_episode();
  std::vector<AdversaryStep> view = adversary_view(log);
  std::vector<AdversaryStep> steps;
  std::vector<Guess> guesses;
  for (int k = 8; k <= 20; ++k) {
    steps.push_back(view[static_cast<std::size_t>(k)]);
    guesses.push_back(structure_guess(view[static_cast<std::size_t>(k)].ct));
  }
  const ReconstructionResult res =
      reconstruct_with_anchor(steps, guesses, Vector::Zero(10), 20);
  for (std::size_t i = 0; i < res.guesses.size(); ++i) {
    const EpisodeRecord& rec = log.records[static_cast<std::size_t>(res.steps[i])];
    const Guess& g = res.guesses[i];
    const Vector miss = -rec.z_star;
    CHECK((g.r_hat - rec.key.r - miss).lpNorm<Eigen::Infinity>() <= 1e-9);
    CHECK((g.e_hat - rec.qp.e - rec.qp.G * miss).lpNorm<Eigen::Infinity>() <= 1e-8);
    CHECK((g.f_hat - rec.qp.f + rec.qp.H * miss).lpNorm<Eigen::Infinity>() <= 1e-8);
    CHECK(res.z_star_hat[i] == Vector::Zero(10));
    CHECK(check_consistency(g, rec.ct).consistent);
  }
  // At the tail of the constant set the optimizer is nearly zero, so the
  // zero anchor recovers the step data to input-level accuracy.
  CHECK(log.records[20].z_star.lpNorm<Eigen::Infinity>() <= 1e-3);

  Guess broken = guesses[0];
  broken.R_hat.setZero();
  CHECK_THROWS_AS(
      reconstruct_with_anchor({steps[0]}, {broken}, Vector::Zero(10), 0), SingularRHat);
}

TEST_CASE("multi-instance system: rank q + l s with nullity l, unique once anchored") {
  const EpisodeLog& log = setpoint_episode();
  std::vector<AdversaryStep> view = adversary_view(log);

  // Rank law on episode data. The coefficient matrix is built from the
  // guesses alone, so the residual state drift of the late steps does not
  // enter it.
  for (int s = 1; s <= 3; ++s) {
    std::vector<AdversaryStep> steps;
    std::vector<Guess> guesses;
    for (int i = 0; i < s; ++i) {
      steps.push_back(view[static_cast<std::size_t>(18 + i)]);
      guesses.push_back(structure_guess(view[static_cast<std::size_t>(18 + i)].ct));
    }
    const LinearSystem sys = build_multi_instance_system(steps, guesses);
    CHECK(sys.A.rows() == (60 + 10) * s);
    CHECK(sys.A.cols() == 60 + 10 * (s + 1));
    const SvdResult dec = svd(sys.A);
    CHECK(dec.numeric_rank == 60 + 10 * s);
    CHECK(sys.A.cols() - dec.numeric_rank == 10);
    const LinearSystem anchored = append_anchor_rows(
        sys, steps[0], guesses[0],
        log.records[static_cast<std::size_t>(steps[0].k)].z_star);
    CHECK(anchored.A.rows() == sys.A.rows() + 10);
    const LeastSquaresResult sol = solve_underdetermined(anchored.A, anchored.b);
    CHECK(sol.rank == anchored.A.cols());
    CHECK(sol.nullspace_dim == 0);
  }

  // Ground-truth recovery needs instances that share e and f exactly, so
  // re-encrypt one plaintext under s fresh keys instead of relying on the
  // episode tail, whose QP data still drifts at the 1e-4 level.
  const QPInstance& qp = log.records[18].qp;
  for (int s = 1; s <= 3; ++s) {
    std::vector<AdversaryStep> steps;
    std::vector<Guess> guesses;
    std::vector<TransformKey> keys;
    for (int i = 0; i < s; ++i) {
      keys.push_back(keygen(10, 60, 7000 + 10 * s + i));
      AdversaryStep step;
      step.k = i;
      step.ct = encrypt(qp, keys.back());
      step.y_star = solve_qp(step.ct.H_tilde, step.ct.G_tilde, step.ct.f_tilde,
                             step.ct.e_tilde).primal;
      steps.push_back(step);
      guesses.push_back(structure_guess(step.ct));
    }
    const LinearSystem sys = build_multi_instance_system(steps, guesses);
    const Vector z_true = keys[0].R * steps[0].y_star + keys[0].r;
    const LinearSystem anchored = append_anchor_rows(sys, steps[0], guesses[0], z_true);
    const LeastSquaresResult sol = solve_underdetermined(anchored.A, anchored.b);
    CHECK(sol.rank == anchored.A.cols());
    CHECK(sol.nullspace_dim == 0);

    const Vector e_hat = sol.x.segment(sys.offset_e, 60);
    const Vector f_hat = sol.x.segment(sys.offset_f, 10);
    const Vector r0_hat = sol.x.segment(sys.offset_r, 10);
    CHECK((e_hat - qp.e).lpNorm<Eigen::Infinity>() <= 1e-6 * (1.0 + qp.e.norm()));
    CHECK((f_hat - qp.f).lpNorm<Eigen::Infinity>() <= 1e-6 * (1.0 + qp.f.norm()));
    CHECK((r0_hat - keys[0].r).lpNorm<Eigen::Infinity>() <= 1e-6 * (1.0 + keys[0].r.norm()));

    const ReconstructionResult direct =
        reconstruct_with_anchor(steps, guesses, z_true, 0);
    CHECK((direct.guesses[0].r_hat - r0_hat).lpNorm<Eigen::Infinity>() <= 1e-6);
  }
}

TEST_CASE("partially shared e: the spec2 system is rank deficient by l") {
  const EpisodeLog& log = setpoint_episode();
  std::vector<AdversaryStep> view = adversary_view(log);
  std::vector<AdversaryStep> steps;
  std::vector<Guess> guesses;
  for (int k : {18, 19, 20}) {
    steps.push_back(view[static_cast<std::size_t>(k)]);
    guesses.push_back(structure_guess(view[static_cast<std::size_t>(k)].ct));
  }
  const LinearSystem sys = build_spec2_system(steps, guesses, 20);
  CHECK(sys.A.rows() == 210);
  CHECK(sys.A.cols() == 200);
  CHECK(svd(sys.A).numeric_rank == 190);
}

TEST_CASE("extend_spec2: one solved instance unlocks the whole episode") {
  const EpisodeLog& log = setpoint_episode();
  std::vector<AdversaryStep> view = adversary_view(log);

  std::vector<AdversaryStep> k_steps;
  std::vector<Guess> k_guesses;
  for (int k = 8; k <= 20; ++k) {
    k_steps.push_back(view[static_cast<std::size_t>(k)]);
    k_guesses.push_back(structure_guess(view[static_cast<std::size_t>(k)].ct));
  }
  const ReconstructionResult anchored =
      reconstruct_with_anchor(k_steps, k_guesses, Vector::Zero(10), 20);

  std::vector<Guess> all_guesses;
  for (const AdversaryStep& st : view) all_guesses.push_back(structure_guess(st.ct));
  const ReconstructionResult full =
      extend_spec2(view, all_guesses, anchored.guesses.back(), 20);

  REQUIRE(full.guesses.size() == log.records.size());
  CHECK(full.rank == 10);
  CHECK(full.nullspace_dim == 0);
  CHECK(full.max_fix_residual <= 1e-8);

  const Vector miss = -log.records[20].z_star;  // anchor error of the solved step
  Vector first_offset;
  for (std::size_t i = 0; i < full.guesses.size(); ++i) {
    const EpisodeRecord& rec = log.records[i];
    CHECK(check_consistency(full.guesses[i], rec.ct).consistent);
    // Every recovered input inherits the solved step's miss as a constant
    // offset; the applied inputs come out to input-level accuracy.
    const Vector err = full.z_star_hat[i] - rec.z_star;
    if (i == 0)
      first_offset = err;
    else
      CHECK((err - first_offset).lpNorm<Eigen::Infinity>() <= 1e-9);
    CHECK((err - miss).lpNorm<Eigen::Infinity>() <= 1e-8);
    CHECK((full.z_star_hat[i].head(2) - rec.u).lpNorm<Eigen::Infinity>() <= 1e-3);
  }

  CHECK_THROWS_AS(extend_spec2(view, all_guesses, anchored.guesses.back(), 10),
                  UnderdeterminedAfterAnchor);
  CHECK_THROWS_AS(extend_spec2(view, all_guesses, anchored.guesses.back(), 61),
                  ShapeMismatch);
}

TEST_CASE("extend_spec2: tracking reconstruction splits into offset and accuracy") {
  const EpisodeLog& log = tracking_episode();
  std::vector<AdversaryStep> view = adversary_view(log);

  std::vector<AdversaryStep> k_steps;
  std::vector<Guess> k_guesses;
  for (int k : {10, 30, 50}) {
    k_steps.push_back(view[static_cast<std::size_t>(k)]);
    k_guesses.push_back(structure_guess(view[static_cast<std::size_t>(k)].ct));
  }
  const ReconstructionResult anchored =
      reconstruct_with_anchor(k_steps, k_guesses, Vector::Zero(10), 20);

  std::vector<Guess> all_guesses;
  for (const AdversaryStep& st : view) all_guesses.push_back(structure_guess(st.ct));
  const ReconstructionResult full =
      extend_spec2(view, all_guesses, anchored.guesses.back(), 20);

  double sum_abs_2 = 0.0;
  double max_dev_1 = 0.0;
  Vector offset = full.z_star_hat[0].head(2) - log.records[0].u;
  for (std::size_t i = 0; i < full.guesses.size(); ++i) {
    const Vector err = full.z_star_hat[i].head(2) - log.records[i].u;
    sum_abs_2 += std::abs(err[1]);
    max_dev_1 = std::max(max_dev_1, std::abs(err[0] - offset[0]));
  }
  const double mean_abs_2 = sum_abs_2 / static_cast<double>(full.guesses.size());
  // Second input component: the anchored step sits where the lateral input
  // crosses zero, so the miss is tiny. First component: the full centripetal
  // magnitude lands in the constant offset, but only in the offset.
  CHECK(mean_abs_2 <= 5e-2);
  CHECK(std::abs(offset[0]) > 0.5);
  CHECK(max_dev_1 <= 1e-6);
}

TEST_CASE("resolve_permutations: generic stream is recovered exactly") {
  std::mt19937_64 rng(906);
  QPInstance qp = random_instance(rng, 4, 12);
  KeygenOptions opts;
  opts.permute = true;
  std::vector<InvariantPair> pairs;
  std::vector<Permutation> truth;
  for (int k = 0; k < 6; ++k) {
    TransformKey key = keygen(4, 12, 500 + k, opts);
    Ciphertext ct = encrypt(qp, key);
    ct.step = k;
    InvariantPair p = invariants(ct);
    p.step = k;
    pairs.push_back(std::move(p));
    truth.push_back(*key.P);
  }
  const PermutationMap map = resolve_permutations(pairs, truth[0]);
  REQUIRE(map.steps.size() == 6);
  CHECK(map.all_resolved());
  CHECK(map.ambiguity_sets.empty());
  CHECK(map.delta[0].is_identity());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    CHECK(map.resolved[i]);
    CHECK(map.absolute[i] == truth[i]);
  }
}

TEST_CASE("resolve_permutations: equal permutations give identity deltas") {
  std::mt19937_64 rng(907);
  QPInstance qp = random_instance(rng, 4, 12);
  KeygenOptions opts;
  opts.permute = true;
  const TransformKey base = keygen(4, 12, 600, opts);
  std::vector<InvariantPair> pairs;
  for (int k = 0; k < 4; ++k) {
    TransformKey key = keygen(4, 12, 700 + k);
    key.P = base.P;  // same row shuffle every step
    pairs.push_back(invariants(encrypt(qp, key)));
  }
  const PermutationMap map = resolve_permutations(pairs, *base.P);
  CHECK(map.all_resolved());
  for (const Permutation& d : map.delta) CHECK(d.is_identity());
  for (const Permutation& a : map.absolute) CHECK(a == *base.P);
}

TEST_CASE("resolve_permutations: structured rows stay ambiguous until v breaks the tie") {
  KeySource ks;
  ks.base_seed = 11;
  const EpisodeLog log = closed_loop(scenario_plant(), scenario_mpc_config(ScenarioKind::Tracking),
                                     demo_x0(), Vector::Zero(2), 51, ks, true);
  std::vector<InvariantPair> pairs;
  std::vector<Permutation> truth;
  for (int k : {10, 30, 50}) {
    const EpisodeRecord& rec = log.records[static_cast<std::size_t>(k)];
    InvariantPair p = invariants(rec.ct);
    p.step = k;
    pairs.push_back(std::move(p));
    truth.push_back(*rec.key.P);
  }

  // Input-bound rows of G repeat across the two sign blocks, so row
  // fingerprints of M alone cannot separate them.
  const PermutationMap coarse = resolve_permutations(pairs, truth[0]);
  CHECK(!coarse.all_resolved());
  CHECK(!coarse.ambiguity_sets.empty());

  ResolveOptions opts;
  opts.tol_v = 4e-3;  // covers the deterministic drift of v between the steps
  const PermutationMap fine = resolve_permutations(pairs, truth[0], opts);
  CHECK(fine.all_resolved());
  CHECK(fine.ambiguity_sets.empty());
  for (std::size_t i = 0; i < truth.size(); ++i) CHECK(fine.absolute[i] == truth[i]);

  // Undoing the recovered permutation reproduces the unpermuted encryption.
  const EpisodeRecord& rec = log.records[30];
  TransformKey bare = rec.key;
  bare.P.reset();
  const Ciphertext plain = encrypt(rec.qp, bare);
  const Ciphertext undone = unpermute(rec.ct, fine.absolute[1]);
  CHECK((undone.G_tilde - plain.G_tilde).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((undone.e_tilde - plain.e_tilde).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(!undone.permuted);
}

TEST_CASE("unpermute: inverse of the encryption row shuffle") {
  std::mt19937_64 rng(908);
  QPInstance qp = random_instance(rng, 3, 8);
  KeygenOptions opts;
  opts.permute = true;
  TransformKey key = keygen(3, 8, 800, opts);
  TransformKey bare = key;
  bare.P.reset();
  const Ciphertext shuffled = encrypt(qp, key);
  const Ciphertext undone = unpermute(shuffled, *key.P);
  const Ciphertext plain = encrypt(qp, bare);
  CHECK(undone.G_tilde == plain.G_tilde);
  CHECK(undone.e_tilde == plain.e_tilde);
  CHECK(undone.H_tilde == plain.H_tilde);

  CHECK_THROWS_AS(unpermute(shuffled, Permutation::identity(5)), ShapeMismatch);
}
