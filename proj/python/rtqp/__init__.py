"""Affine-masked QP outsourcing: cipher, MPC loop, and recovery attacks.

Thin re-export of the compiled extension. Matrices and vectors cross the
boundary as numpy arrays (row-major copies of the Eigen objects).
"""

from ._core import (
    AdversaryStep,
    AttackAbort,
    AttackMetrics,
    AttackOptions,
    Ciphertext,
    ConsistencyReport,
    EpisodeLog,
    EpisodeRecord,
    Error,
    Guess,
    GuessProvenance,
    Infeasible,
    InvariantPair,
    KeygenOptions,
    MaxIterations,
    NotPositiveDefinite,
    Permutation,
    QPInstance,
    QPSolution,
    ScenarioConfig,
    ScenarioKind,
    ShapeMismatch,
    SolveOptions,
    SpecReport,
    StructureMismatch,
    Tolerances,
    TransformKey,
    adversary_view,
    check_consistency,
    compose_guess,
    decrypt_dual,
    decrypt_solution,
    derive_key,
    detect_specs,
    encrypt,
    invariants,
    keygen,
    load_episode,
    run_attack,
    run_scenario,
    save_episode,
    save_metrics,
    selftest,
    solve_dual_qp,
    solve_qp,
    structure_guess,
    svd_guess,
    trivial_guess,
)

__all__ = [
    "AdversaryStep",
    "AttackAbort",
    "AttackMetrics",
    "AttackOptions",
    "Ciphertext",
    "ConsistencyReport",
    "EpisodeLog",
    "EpisodeRecord",
    "Error",
    "Guess",
    "GuessProvenance",
    "Infeasible",
    "InvariantPair",
    "KeygenOptions",
    "MaxIterations",
    "NotPositiveDefinite",
    "Permutation",
    "QPInstance",
    "QPSolution",
    "ScenarioConfig",
    "ScenarioKind",
    "ShapeMismatch",
    "SolveOptions",
    "SpecReport",
    "StructureMismatch",
    "Tolerances",
    "TransformKey",
    "adversary_view",
    "check_consistency",
    "compose_guess",
    "decrypt_dual",
    "decrypt_solution",
    "derive_key",
    "detect_specs",
    "encrypt",
    "invariants",
    "keygen",
    "load_episode",
    "run_attack",
    "run_scenario",
    "save_episode",
    "save_metrics",
    "selftest",
    "solve_dual_qp",
    "solve_qp",
    "structure_guess",
    "svd_guess",
    "trivial_guess",
]
