"""Three-level theta time stepping for the displacement-pressure wave system.

The update solves, once per step,

    (A + theta*dt^2 * D^T C^{-1} D) U[n+1]
        = A (2 U[n] - U[n-1]) - dt^2 D^T ((1-2theta) P[n] + theta P[n-1])
          + dt^2 (theta F[n+1] + (1-2theta) F[n] + theta F[n-1])

and then recovers P[n+1] = C^{-1} D U[n+1] by explicit division: the
half-sum constraint C P^{n+1/2} = D U^{n+1/2} telescopes to an equality at
every level because the initial data are projected so that the defect
C P0 - D U0 vanishes. theta = 0 gives the explicit leapfrog variant (the
solve degenerates to a mass solve); theta >= 1/4 is unconditionally stable.

The first step comes from a Taylor expansion of the initial state and uses
the same SPD operator, so stepping never touches a saddle-point system.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .linalg import CsrMatrix, SolverConfig, cg_solve, schur_matrix, spmv
from .mesh import BoundaryPartition, RectMesh
from .spaces import (
    MaterialField,
    MixedOperators,
    assemble_load,
    assemble_operators,
    pressure_l2_error,
    project_pressure_p_h,
    project_velocity_pi_h,
    velocity_l2_error,
)

BLOWUP_THRESHOLD = 1e12  # sup-norm guard on velocity coefficients

COMPLETED = "Completed"
BLOWUP = "BlowUp"


class CompatibilityWarning(UserWarning):
    """Initial pressure is not the stiffness-weighted divergence of the initial velocity."""


@dataclass(frozen=True)
class ThetaConfig:
    """Time discretization: theta in [0,1], N steps of size dt up to T = N*dt."""

    theta: float
    dt: float
    num_steps: int
    final_time: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.num_steps < 1:
            raise ValueError("need at least one step")
        if abs(self.num_steps * self.dt - self.final_time) > 1e-12 * abs(self.final_time):
            raise ValueError(
                f"final_time must equal num_steps*dt: {self.final_time} vs {self.num_steps * self.dt}"
            )

    @staticmethod
    def from_steps(theta, final_time, num_steps) -> "ThetaConfig":
        return ThetaConfig(theta, final_time / num_steps, num_steps, final_time)

    @staticmethod
    def from_dt(theta, final_time, dt) -> "ThetaConfig":
        n = max(1, round(final_time / dt))
        return ThetaConfig(theta, dt, n, final_time)


@dataclass
class ProblemSpec:
    """Everything a run needs: geometry, material, data, optional exact fields.

    Callbacks are vectorized over point arrays. Vector fields return an
    (x-component, y-component) pair; time-dependent fields take (x, y, t).
    """

    mesh: RectMesh
    bc: BoundaryPartition
    material: MaterialField
    f: Optional[Callable] = None      # body force f(x, y, t) -> (fx, fy)
    u0: Callable = None               # initial velocity field (x, y) -> (ux, uy)
    v0: Callable = None               # initial time derivative of the velocity
    p0: Callable = None               # initial pressure (x, y) -> p
    exact_u: Optional[Callable] = None  # (x, y, t) -> (ux, uy)
    exact_p: Optional[Callable] = None  # (x, y, t) -> p


@dataclass(frozen=True)
class SchemeState:
    """Rolling pair of time levels (n-1, n) for both fields."""

    n: int
    U_prev: np.ndarray
    U_curr: np.ndarray
    P_prev: np.ndarray
    P_curr: np.ndarray


@dataclass(frozen=True)
class EnergySample:
    n: int          # sample sits between levels n and n+1
    t_half: float   # (n + 1/2) * dt
    value: float


def step_matrix(ops: MixedOperators, cfg: ThetaConfig) -> CsrMatrix:
    """SPD operator of the implicit solve, A + theta*dt^2 * D^T C^{-1} D."""
    return schur_matrix(ops.A, ops.D, ops.Cdiag, cfg.theta * cfg.dt**2)


class LoadCache:
    """Per-level load vectors; each is consumed by three consecutive steps."""

    def __init__(self, spec: ProblemSpec, ops: MixedOperators, dt: float):
        self._spec = spec
        self._ops = ops
        self._dt = dt
        self._cache = {}
        self._zero = None if spec.f is not None else np.zeros(ops.n_velocity)

    def at_level(self, n: int) -> np.ndarray:
        if self._zero is not None:
            return self._zero
        if n not in self._cache:
            self._cache[n] = assemble_load(self._ops.mesh, self._ops.bc, self._spec.f, n * self._dt)
            for stale in [k for k in self._cache if k < n - 2]:
                del self._cache[stale]
        return self._cache[n]


def _solve_with_guess(S, rhs, guess, solver: SolverConfig):
    """CG on the defect system keeps the absolute accuracy tied to the increment."""
    defect = rhs - spmv(S, guess)
    return guess + cg_solve(S, defect, solver).x


def initialize(
    spec: ProblemSpec,
    ops: MixedOperators,
    cfg: ThetaConfig,
    solver: SolverConfig | None = None,
    S: CsrMatrix | None = None,
    loads: LoadCache | None = None,
) -> SchemeState:
    """Project initial data and take the Taylor first step; returns the state at n=1.

    U0 is the flux interpolant of u0 and P0 the element-average projection of
    p0; U1 solves

        (A + theta*dt^2 D^T C^{-1} D) U1 = A U0 + dt A V0
            + (theta - 1/2) dt^2 D^T P0 + dt^2/2 F0 + theta*dt^2 (F1 - F0)

    after eliminating P1 through the divergence constraint. Warns when the
    initial data are incompatible (C P0 != D U0), which would otherwise leave
    an alternating-sign defect in the pressure recursion.
    """
    if solver is None:
        solver = SolverConfig()
    mesh, bc = ops.mesh, ops.bc
    U0 = project_velocity_pi_h(mesh, bc, spec.u0)
    V0 = project_velocity_pi_h(mesh, bc, spec.v0)
    P0 = project_pressure_p_h(mesh, spec.p0)

    defect = ops.Cdiag * P0 - spmv(ops.D, U0)
    if defect.size and np.abs(defect).max() > 1e-10:
        warnings.warn(
            "initial data incompatible: max |C P0 - D U0| = "
            f"{np.abs(defect).max():.3e} (is p0 the stiffness-weighted divergence "
            "of u0, and lambda element-wise constant?)",
            CompatibilityWarning,
            stacklevel=2,
        )

    if S is None:
        S = step_matrix(ops, cfg)
    if loads is None:
        loads = LoadCache(spec, ops, cfg.dt)
    dt, theta = cfg.dt, cfg.theta
    F0, F1 = loads.at_level(0), loads.at_level(1)
    rhs = (
        spmv(ops.A, U0)
        + dt * spmv(ops.A, V0)
        + (theta - 0.5) * dt**2 * spmv(ops.DT, P0)
        + 0.5 * dt**2 * F0
        + theta * dt**2 * (F1 - F0)
    )
    U1 = _solve_with_guess(S, rhs, U0 + dt * V0, solver)
    P1 = spmv(ops.D, U1) / ops.Cdiag
    return SchemeState(1, U0, U1, P0, P1)


def step(
    state: SchemeState,
    ops: MixedOperators,
    cfg: ThetaConfig,
    spec: ProblemSpec,
    solver: SolverConfig | None = None,
    S: CsrMatrix | None = None,
    loads: LoadCache | None = None,
) -> SchemeState:
    """Advance one level: three-level velocity update, then the pressure division."""
    if solver is None:
        solver = SolverConfig()
    if S is None:
        S = step_matrix(ops, cfg)
    if loads is None:
        loads = LoadCache(spec, ops, cfg.dt)
    n, dt, theta = state.n, cfg.dt, cfg.theta
    F_theta = (
        theta * loads.at_level(n + 1)
        + (1.0 - 2.0 * theta) * loads.at_level(n)
        + theta * loads.at_level(n - 1)
    )
    guess = 2.0 * state.U_curr - state.U_prev
    rhs = (
        spmv(ops.A, guess)
        - dt**2 * spmv(ops.DT, (1.0 - 2.0 * theta) * state.P_curr + theta * state.P_prev)
        + dt**2 * F_theta
    )
    U_next = _solve_with_guess(S, rhs, guess, solver)
    P_next = spmv(ops.D, U_next) / ops.Cdiag
    return SchemeState(n + 1, state.U_curr, U_next, state.P_curr, P_next)


def discrete_energy(state: SchemeState, ops: MixedOperators, cfg: ThetaConfig) -> EnergySample:
    """Conserved quadratic form of the scheme, sampled between the state's two levels.

    E = 1/2 [ udot' A udot + dt^2 (theta - 1/4) pdot' C pdot + pbar' C pbar ]

    with udot, pdot the one-step difference quotients and pbar the level
    average. At theta = 1/4 the middle term drops and the form mirrors the
    continuous energy; for theta < 1/4 it is positive only under the CFL
    bound, which is exactly the stability boundary.
    """
    dt = cfg.dt
    udot = (state.U_curr - state.U_prev) / dt
    pdot = (state.P_curr - state.P_prev) / dt
    pbar = 0.5 * (state.P_curr + state.P_prev)
    value = 0.5 * (
        udot @ spmv(ops.A, udot)
        + dt**2 * (cfg.theta - 0.25) * (pdot * ops.Cdiag) @ pdot
        + (pbar * ops.Cdiag) @ pbar
    )
    return EnergySample(state.n - 1, (state.n - 0.5) * dt, float(value))


@dataclass
class RunResult:
    """Trajectory summary: energy series, final state, optional error series."""

    status: str
    energies: list
    state: SchemeState
    error_u: Optional[list] = None   # per retained level 0..N
    error_p: Optional[list] = None
    config: ThetaConfig = None
    operators: MixedOperators = None

    @property
    def completed(self):
        return self.status == COMPLETED


def _blown_up(U):
    m = np.abs(U).max() if U.size else 0.0
    return not np.isfinite(m) or m > BLOWUP_THRESHOLD


def run(
    spec: ProblemSpec,
    cfg: ThetaConfig,
    probes=(),
    solver: SolverConfig | None = None,
    record_errors: bool | None = None,
) -> RunResult:
    """Initialize, march N-1 steps, record the energy at every half level.

    Probes are callables probe(level, t, U, P) fired at every retained level
    including 0 and 1. When exact fields are present (and record_errors is
    not False) the weighted L2 errors against them are recorded per level.
    """
    if solver is None:
        solver = SolverConfig()
    ops = assemble_operators(spec.mesh, spec.bc, spec.material)
    S = step_matrix(ops, cfg)
    loads = LoadCache(spec, ops, cfg.dt)
    if record_errors is None:
        record_errors = spec.exact_u is not None and spec.exact_p is not None
    err_u = [] if record_errors else None
    err_p = [] if record_errors else None

    def observe(level, U, P):
        t = level * cfg.dt
        if record_errors:
            err_u.append(
                velocity_l2_error(
                    spec.mesh,
                    ops.classification,
                    spec.material.rho_per_element,
                    U,
                    lambda x, y: spec.exact_u(x, y, t),
                )
            )
            err_p.append(
                pressure_l2_error(
                    spec.mesh,
                    spec.material.lambda_per_element,
                    P,
                    lambda x, y: spec.exact_p(x, y, t),
                )
            )
        for probe in probes:
            probe(level, t, U, P)

    state = initialize(spec, ops, cfg, solver, S, loads)
    energies = [discrete_energy(state, ops, cfg)]
    observe(0, state.U_prev, state.P_prev)
    observe(1, state.U_curr, state.P_curr)
    status = COMPLETED
    if _blown_up(state.U_curr):
        status = BLOWUP
    else:
        for _ in range(cfg.num_steps - 1):
            state = step(state, ops, cfg, spec, solver, S, loads)
            energies.append(discrete_energy(state, ops, cfg))
            if _blown_up(state.U_curr):
                status = BLOWUP
                break
            observe(state.n, state.U_curr, state.P_curr)
    return RunResult(status, energies, state, err_u, err_p, cfg, ops)
