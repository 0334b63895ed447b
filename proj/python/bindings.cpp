#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <filesystem>

#include "rtqp/harness.hpp"
#include "rtqp/serialize.hpp"

namespace py = pybind11;
using namespace rtqp;

PYBIND11_MODULE(_core, m) {
  m.doc() = "Affine-masked QP outsourcing: cipher, MPC loop, and recovery attacks";

  auto err = py::register_exception<Error>(m, "Error");
  py::register_exception<ShapeMismatch>(m, "ShapeMismatch", err);
  py::register_exception<Infeasible>(m, "Infeasible", err);
  py::register_exception<NotPositiveDefinite>(m, "NotPositiveDefinite", err);
  py::register_exception<MaxIterations>(m, "MaxIterations", err);
  py::register_exception<AttackAbort>(m, "AttackAbort", err);
  py::register_exception<StructureMismatch>(m, "StructureMismatch", err);

  py::class_<Permutation>(m, "Permutation")
      .def(py::init<>())
      .def_readwrite("map", &Permutation::map)
      .def_static("identity", &Permutation::identity)
      .def("inverse", &Permutation::inverse)
      .def("compose", &Permutation::compose)
      .def("to_matrix", &Permutation::to_matrix)
      .def("apply", &Permutation::apply)
      .def("__eq__", [](const Permutation& a, const Permutation& b) { return a == b; });

  py::class_<SolveOptions>(m, "SolveOptions")
      .def(py::init<>())
      .def_readwrite("tol_kkt", &SolveOptions::tol_kkt)
      .def_readwrite("tol_active", &SolveOptions::tol_active)
      .def_readwrite("max_iterations", &SolveOptions::max_iterations);

  py::class_<QPSolution>(m, "QPSolution")
      .def_readonly("primal", &QPSolution::primal)
      .def_readonly("dual", &QPSolution::dual)
      .def_readonly("active", &QPSolution::active)
      .def_readonly("kkt_residual", &QPSolution::kkt_residual)
      .def_readonly("iterations", &QPSolution::iterations);

  m.def("solve_qp", &solve_qp, py::arg("H"), py::arg("G"), py::arg("f"), py::arg("e"),
        py::arg("options") = SolveOptions{});
  m.def("solve_dual_qp", &solve_dual_qp, py::arg("H"), py::arg("G"), py::arg("f"),
        py::arg("e"), py::arg("options") = SolveOptions{});

  py::class_<QPInstance>(m, "QPInstance")
      .def(py::init<>())
      .def_readwrite("H", &QPInstance::H)
      .def_readwrite("G", &QPInstance::G)
      .def_readwrite("f", &QPInstance::f)
      .def_readwrite("e", &QPInstance::e)
      .def_readwrite("step", &QPInstance::step)
      .def_property_readonly("l", &QPInstance::l)
      .def_property_readonly("q", &QPInstance::q);

  py::class_<TransformKey>(m, "TransformKey")
      .def(py::init<>())
      .def_readwrite("R", &TransformKey::R)
      .def_readwrite("r", &TransformKey::r)
      .def_readwrite("P", &TransformKey::P)
      .def_readwrite("step", &TransformKey::step);

  py::class_<Ciphertext>(m, "Ciphertext")
      .def(py::init<>())
      .def_readwrite("H_tilde", &Ciphertext::H_tilde)
      .def_readwrite("G_tilde", &Ciphertext::G_tilde)
      .def_readwrite("f_tilde", &Ciphertext::f_tilde)
      .def_readwrite("e_tilde", &Ciphertext::e_tilde)
      .def_readwrite("permuted", &Ciphertext::permuted)
      .def_readwrite("step", &Ciphertext::step);

  py::enum_<GuessProvenance>(m, "GuessProvenance")
      .value("Svd", GuessProvenance::Svd)
      .value("Structure", GuessProvenance::Structure)
      .value("Composed", GuessProvenance::Composed)
      .value("Reconstructed", GuessProvenance::Reconstructed)
      .value("Trivial", GuessProvenance::Trivial)
      .value("Manual", GuessProvenance::Manual);

  py::class_<Guess>(m, "Guess")
      .def(py::init<>())
      .def_readwrite("H_hat", &Guess::H_hat)
      .def_readwrite("G_hat", &Guess::G_hat)
      .def_readwrite("f_hat", &Guess::f_hat)
      .def_readwrite("e_hat", &Guess::e_hat)
      .def_readwrite("R_hat", &Guess::R_hat)
      .def_readwrite("r_hat", &Guess::r_hat)
      .def_readwrite("provenance", &Guess::provenance);

  py::class_<KeygenOptions>(m, "KeygenOptions")
      .def(py::init<>())
      .def_readwrite("lo", &KeygenOptions::lo)
      .def_readwrite("hi", &KeygenOptions::hi)
      .def_readwrite("permute", &KeygenOptions::permute)
      .def_readwrite("max_condition", &KeygenOptions::max_condition)
      .def_readwrite("max_resamples", &KeygenOptions::max_resamples);

  py::class_<ConsistencyReport>(m, "ConsistencyReport")
      .def_readonly("consistent", &ConsistencyReport::consistent)
      .def_readonly("max_relative_residual", &ConsistencyReport::max_relative_residual)
      .def_readonly("res_H", &ConsistencyReport::res_H)
      .def_readonly("res_G", &ConsistencyReport::res_G)
      .def_readonly("res_f", &ConsistencyReport::res_f)
      .def_readonly("res_e", &ConsistencyReport::res_e);

  m.def("keygen", &keygen, py::arg("l"), py::arg("q"), py::arg("seed"),
        py::arg("options") = KeygenOptions{});
  m.def("encrypt", &encrypt, py::arg("qp"), py::arg("key"));
  m.def("decrypt_solution", &decrypt_solution, py::arg("y_star"), py::arg("key"));
  m.def("decrypt_dual", &decrypt_dual, py::arg("lambda_star"), py::arg("key"));
  m.def("compose_guess", &compose_guess, py::arg("guess"), py::arg("R_trial"),
        py::arg("r_trial"));
  m.def("trivial_guess", &trivial_guess, py::arg("ciphertext"));
  m.def("check_consistency", &check_consistency, py::arg("guess"), py::arg("ciphertext"),
        py::arg("tol") = 1e-6);

  py::class_<InvariantPair>(m, "InvariantPair")
      .def_readonly("M", &InvariantPair::M)
      .def_readonly("v", &InvariantPair::v)
      .def_readonly("step", &InvariantPair::step);

  py::class_<SpecReport>(m, "SpecReport")
      .def_readonly("spec1", &SpecReport::spec1)
      .def_readonly("spec3_sets", &SpecReport::spec3_sets)
      .def_readonly("period_estimate", &SpecReport::period_estimate)
      .def_readonly("tolerance_used", &SpecReport::tolerance_used);

  py::class_<AdversaryStep>(m, "AdversaryStep")
      .def(py::init<>())
      .def_readwrite("k", &AdversaryStep::k)
      .def_readwrite("ct", &AdversaryStep::ct)
      .def_readwrite("y_star", &AdversaryStep::y_star);

  m.def("invariants", &invariants, py::arg("ciphertext"));
  m.def("detect_specs", &detect_specs, py::arg("pairs"), py::arg("tol"));
  m.def("svd_guess", &svd_guess, py::arg("ciphertext"));
  m.def("structure_guess", &structure_guess, py::arg("ciphertext"));
  m.def("derive_key", &derive_key, py::arg("G_hat"), py::arg("G_tilde"));

  py::enum_<ScenarioKind>(m, "ScenarioKind")
      .value("Setpoint", ScenarioKind::Setpoint)
      .value("Tracking", ScenarioKind::Tracking);

  py::class_<Tolerances>(m, "Tolerances")
      .def(py::init<>())
      .def_readwrite("constancy", &Tolerances::constancy)
      .def_readwrite("consistency", &Tolerances::consistency)
      .def_readwrite("rank", &Tolerances::rank);

  py::class_<ScenarioConfig>(m, "ScenarioConfig")
      .def(py::init<>())
      .def_readwrite("scenario", &ScenarioConfig::scenario)
      .def_readwrite("steps", &ScenarioConfig::steps)
      .def_readwrite("permute", &ScenarioConfig::permute)
      .def_readwrite("key_lo", &ScenarioConfig::key_lo)
      .def_readwrite("key_hi", &ScenarioConfig::key_hi)
      .def_readwrite("seed", &ScenarioConfig::seed)
      .def_readwrite("tolerances", &ScenarioConfig::tolerances)
      .def_readwrite("output_dir", &ScenarioConfig::output_dir)
      .def_readwrite("circle_phase", &ScenarioConfig::circle_phase);

  py::class_<EpisodeRecord>(m, "EpisodeRecord")
      .def_readonly("k", &EpisodeRecord::k)
      .def_readonly("qp", &EpisodeRecord::qp)
      .def_readonly("key", &EpisodeRecord::key)
      .def_readonly("ct", &EpisodeRecord::ct)
      .def_readonly("y_star", &EpisodeRecord::y_star)
      .def_readonly("z_star", &EpisodeRecord::z_star)
      .def_readonly("x", &EpisodeRecord::x)
      .def_readonly("u", &EpisodeRecord::u);

  py::class_<EpisodeLog>(m, "EpisodeLog")
      .def_readonly("records", &EpisodeLog::records)
      .def_readonly("x_final", &EpisodeLog::x_final)
      .def_readonly("config", &EpisodeLog::config)
      .def_property_readonly("steps", &EpisodeLog::steps);

  py::class_<AttackOptions> ao(m, "AttackOptions");
  py::enum_<AttackOptions::Anchor>(ao, "Anchor")
      .value("Zero", AttackOptions::Anchor::Zero)
      .value("Oracle", AttackOptions::Anchor::Oracle)
      .value("Custom", AttackOptions::Anchor::Custom);
  py::enum_<AttackOptions::KSelect>(ao, "KSelect")
      .value("Largest", AttackOptions::KSelect::Largest)
      .value("Contains", AttackOptions::KSelect::Contains);
  ao.def(py::init<>())
      .def_readwrite("anchor", &AttackOptions::anchor)
      .def_readwrite("custom_anchor", &AttackOptions::custom_anchor)
      .def_readwrite("k_select", &AttackOptions::k_select)
      .def_readwrite("k_contains", &AttackOptions::k_contains)
      .def_readwrite("tol_constancy", &AttackOptions::tol_constancy)
      .def_readwrite("use_p0", &AttackOptions::use_p0);

  py::class_<AttackMetrics>(m, "AttackMetrics")
      .def_readonly("spec", &AttackMetrics::spec)
      .def_readonly("guess_mode", &AttackMetrics::guess_mode)
      .def_readonly("steps", &AttackMetrics::steps)
      .def_readonly("u_hat", &AttackMetrics::u_hat)
      .def_readonly("u_true", &AttackMetrics::u_true)
      .def_readonly("per_step_abs_error", &AttackMetrics::per_step_abs_error)
      .def_readonly("offset_estimate", &AttackMetrics::offset_estimate)
      .def_readonly("error_std", &AttackMetrics::error_std)
      .def_readonly("max_abs_error", &AttackMetrics::max_abs_error)
      .def_readonly("k_used", &AttackMetrics::k_used)
      .def_readonly("pin_step", &AttackMetrics::pin_step)
      .def_readonly("rank", &AttackMetrics::rank)
      .def_readonly("nullspace_dim", &AttackMetrics::nullspace_dim)
      .def_readonly("perm_recovery_rate", &AttackMetrics::perm_recovery_rate);

  m.def("run_scenario", &run_scenario, py::arg("config"));
  m.def("run_attack", &run_attack, py::arg("log"), py::arg("options") = AttackOptions{});
  m.def("adversary_view", &adversary_view, py::arg("log"));
  m.def("selftest", &selftest, py::arg("seed") = 1);
  m.def(
      "save_episode",
      [](const EpisodeLog& log, const std::filesystem::path& p) {
        save_episode(log, p.string());
      },
      py::arg("log"), py::arg("path"));
  m.def(
      "load_episode",
      [](const std::filesystem::path& p) { return load_episode(p.string()); },
      py::arg("path"));
  m.def(
      "save_metrics",
      [](const AttackMetrics& metrics, const std::filesystem::path& p) {
        save_metrics(metrics, p.string());
      },
      py::arg("metrics"), py::arg("path"));
}
