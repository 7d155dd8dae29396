"""Manufactured solutions, CFL bound, error norms, and the study drivers.

The workhorse test problem is a force-free standing wave on the unit square
with zero normal velocity on the whole boundary. It exercises energy
conservation and both error norms at once, and its continuous energy has the
closed form pi^4 / 2.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .linalg import SolverConfig, cg_solve, spmv
from .mesh import BoundaryPartition, RectMesh, build_rect_mesh
from .scheme import (
    BLOWUP,
    ProblemSpec,
    RunResult,
    ThetaConfig,
    run,
)
from .spaces import assemble_operators, material_field

STABLE = "Stable"
DRIFT = "Drift"  # completed but the energy drifted beyond tolerance

SQRT2_PI = math.sqrt(2.0) * math.pi


class PowerIterationError(RuntimeError):
    """Power iteration hit its cap without the Rayleigh quotient settling."""


@dataclass(frozen=True)
class ManufacturedSolution:
    """Closed-form solution of the coupled displacement-pressure system.

    All callbacks are vectorized; vector fields return (x, y) component
    pairs. The derivative callbacks (u_tt, grad_p, div_u) exist so the
    defining relations rho*u_tt - grad p = f and p = lambda div u can be
    checked pointwise to machine precision.
    """

    name: str
    rho: float
    lam: float
    bc: BoundaryPartition
    u: Callable
    u_t: Callable
    p: Callable
    f: Optional[Callable]  # None means identically zero
    u_tt: Callable
    grad_p: Callable
    div_u: Callable
    energy: Optional[float]  # continuous energy, constant when f = 0


def _spatial_profile(x, y):
    """Common velocity profile: gradient of cos(pi x) cos(pi y) ."""
    return -np.pi * np.sin(np.pi * x) * np.cos(np.pi * y), -np.pi * np.cos(
        np.pi * x
    ) * np.sin(np.pi * y)


def mms_standing_wave() -> ManufacturedSolution:
    """Force-free standing wave, rho = lambda = 1, u.n = 0 on the whole boundary.

    u(x,y,t) = cos(sqrt(2) pi t) * (-pi sin(pi x) cos(pi y), -pi cos(pi x) sin(pi y))
    p(x,y,t) = -2 pi^2 cos(sqrt(2) pi t) cos(pi x) cos(pi y)

    The initial time derivative vanishes, and the continuous energy equals
    pi^4 / 2 for all time.
    """

    def u(x, y, t):
        g = np.cos(SQRT2_PI * t)
        sx, sy = _spatial_profile(x, y)
        return g * sx, g * sy

    def u_t(x, y, t):
        dg = -SQRT2_PI * np.sin(SQRT2_PI * t)
        sx, sy = _spatial_profile(x, y)
        return dg * sx, dg * sy

    def u_tt(x, y, t):
        ddg = -2.0 * np.pi**2 * np.cos(SQRT2_PI * t)
        sx, sy = _spatial_profile(x, y)
        return ddg * sx, ddg * sy

    def p(x, y, t):
        return -2.0 * np.pi**2 * np.cos(SQRT2_PI * t) * np.cos(np.pi * x) * np.cos(np.pi * y)

    def grad_p(x, y, t):
        g = np.cos(SQRT2_PI * t)
        sx, sy = _spatial_profile(x, y)
        return -2.0 * np.pi**2 * g * sx, -2.0 * np.pi**2 * g * sy

    return ManufacturedSolution(
        name="standing-wave",
        rho=1.0,
        lam=1.0,
        bc=BoundaryPartition.all_neumann(),
        u=u,
        u_t=u_t,
        p=p,
        f=None,
        u_tt=u_tt,
        grad_p=grad_p,
        div_u=p,  # lambda = 1, so div u and p coincide
        energy=0.5 * np.pi**4,
    )


def mms_forced(omega: float) -> ManufacturedSolution:
    """Same spatial profile driven at frequency omega by a matching body force.

    f = (2 pi^2 - omega^2) cos(omega t) * profile; at omega = sqrt(2) pi the
    force coefficient vanishes and the standing wave is recovered. omega = 0
    freezes the field (u_t = 0).
    """
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    coeff = 2.0 * np.pi**2 - omega**2

    def u(x, y, t):
        g = np.cos(omega * t)
        sx, sy = _spatial_profile(x, y)
        return g * sx, g * sy

    def u_t(x, y, t):
        dg = -omega * np.sin(omega * t)
        sx, sy = _spatial_profile(x, y)
        return dg * sx, dg * sy

    def u_tt(x, y, t):
        ddg = -(omega**2) * np.cos(omega * t)
        sx, sy = _spatial_profile(x, y)
        return ddg * sx, ddg * sy

    def p(x, y, t):
        return -2.0 * np.pi**2 * np.cos(omega * t) * np.cos(np.pi * x) * np.cos(np.pi * y)

    def grad_p(x, y, t):
        g = np.cos(omega * t)
        sx, sy = _spatial_profile(x, y)
        return -2.0 * np.pi**2 * g * sx, -2.0 * np.pi**2 * g * sy

    def f(x, y, t):
        g = np.cos(omega * t)
        sx, sy = _spatial_profile(x, y)
        return coeff * g * sx, coeff * g * sy

    return ManufacturedSolution(
        name=f"forced:{omega:g}",
        rho=1.0,
        lam=1.0,
        bc=BoundaryPartition.all_neumann(),
        u=u,
        u_t=u_t,
        p=p,
        f=f,
        u_tt=u_tt,
        grad_p=grad_p,
        div_u=p,
        energy=None,
    )


def residual_check(mms: ManufacturedSolution, n_samples=50, tol=1e-10, seed=20240711) -> float:
    """Verify the defining relations at random space-time samples.

    Checks rho*u_tt - grad p - f = 0 and p - lambda*div u = 0; raises when
    the largest residual exceeds tol, otherwise returns it.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, n_samples)
    y = rng.uniform(0.0, 1.0, n_samples)
    t = rng.uniform(0.0, 2.0, n_samples)
    ax, ay = mms.u_tt(x, y, t)
    gx, gy = mms.grad_p(x, y, t)
    fx, fy = mms.f(x, y, t) if mms.f is not None else (0.0, 0.0)
    r1 = np.hypot(mms.rho * ax - gx - fx, mms.rho * ay - gy - fy)
    r2 = np.abs(mms.p(x, y, t) - mms.lam * mms.div_u(x, y, t))
    worst = float(max(r1.max(), r2.max()))
    if worst > tol:
        raise ValueError(f"manufactured solution violates its equations: residual {worst:.3e}")
    return worst


def make_problem(mms: ManufacturedSolution, nx: int, ny: int | None = None) -> ProblemSpec:
    """Discretize a manufactured solution on an nx-by-ny unit-square mesh."""
    mesh = build_rect_mesh(nx, ny if ny is not None else nx)
    return ProblemSpec(
        mesh=mesh,
        bc=mms.bc,
        material=material_field(mesh, mms.rho, mms.lam),
        f=mms.f,
        u0=lambda x, y: mms.u(x, y, 0.0),
        v0=lambda x, y: mms.u_t(x, y, 0.0),
        p0=lambda x, y: mms.p(x, y, 0.0),
        exact_u=mms.u,
        exact_p=mms.p,
    )


def estimate_inverse_constant(
    mesh: RectMesh,
    bc: BoundaryPartition,
    ops=None,
    rel_tolerance: float = 1e-8,
    max_iterations: int = 50000,
    solver: SolverConfig | None = None,
) -> float:
    """Constant C0 of the divergence inverse inequality ||div v|| <= C0/h ||v||.

    Computed as h * sqrt(mu_max) where mu_max is the largest generalized
    eigenvalue of (D^T M_p^{-1} D) v = mu M_u v over the free velocity dofs
    with unit material, found by power iteration with the Rayleigh quotient
    monitored for relative stagnation on two consecutive iterations.

    ``ops`` may supply prebuilt operators; they must use rho = lambda = 1.
    """
    if ops is None:
        ops = assemble_operators(mesh, bc, material_field(mesh, 1.0, 1.0))
    n = ops.n_velocity
    if n == 0:
        raise ValueError("mesh has no free velocity dofs; C0 is undefined")
    if solver is None:
        solver = SolverConfig()
    rng = np.random.default_rng(1234)
    v = rng.standard_normal(n)
    v /= math.sqrt(v @ spmv(ops.A, v))
    mu_prev = None
    hits = 0
    for _ in range(max_iterations):
        Kv = spmv(ops.DT, spmv(ops.D, v) / ops.Cdiag)
        mu = float(v @ Kv)
        if mu_prev is not None and abs(mu - mu_prev) <= rel_tolerance * abs(mu):
            hits += 1
            if hits >= 2:
                return mesh.h * math.sqrt(mu)
        else:
            hits = 0
        mu_prev = mu
        w = cg_solve(ops.A, Kv, solver).x
        norm_w = math.sqrt(w @ spmv(ops.A, w))
        if norm_w == 0.0:
            v = rng.standard_normal(n)  # restarted from the kernel, vanishingly rare
            norm_w = math.sqrt(v @ spmv(ops.A, v))
            w = v
        v = w / norm_w
    raise PowerIterationError(
        f"Rayleigh quotient did not settle to {rel_tolerance:g} in {max_iterations} iterations"
    )


def cfl_max_dt(theta: float, h: float, C0: float, rho0: float, lambda1: float) -> float:
    """Largest stable time step: dt^2 (1/4 - theta) C0^2 lambda1 / (h^2 rho0) <= 1.

    Infinite for theta >= 1/4 (unconditional stability).
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    if min(h, C0, rho0, lambda1) <= 0:
        raise ValueError("h, C0, rho0, lambda1 must be positive")
    if theta >= 0.25:
        return math.inf
    return (h / C0) * math.sqrt(rho0 / lambda1) / math.sqrt(0.25 - theta)


@dataclass(frozen=True)
class StabilityEstimate:
    """Inverse-inequality constant plus the material data the CFL bound needs."""

    C0: float
    h: float
    rho0: float
    lambda1: float

    def dt_max(self, theta: float) -> float:
        return cfl_max_dt(theta, self.h, self.C0, self.rho0, self.lambda1)


def error_linf_l2(result: RunResult):
    """Max-over-time of the weighted spatial L2 errors recorded by a run."""
    if result.error_u is None or result.error_p is None:
        raise ValueError("run was executed without exact fields; no errors recorded")
    return max(result.error_u), max(result.error_p)


def energy_drift(result: RunResult) -> float:
    """Largest relative deviation of the energy series from its first sample."""
    e0 = result.energies[0].value
    scale = abs(e0) if e0 != 0.0 else 1.0
    return max(abs(s.value - e0) / scale for s in result.energies)


@dataclass(frozen=True)
class ConvergenceRow:
    nx: int
    h: float
    dt: float
    err_u: float
    err_p: float
    rate_u: Optional[float]
    rate_p: Optional[float]


@dataclass(frozen=True)
class ConvergenceTable:
    rows: tuple

    @property
    def finest_rates(self):
        last = self.rows[-1]
        return last.rate_u, last.rate_p


def observed_rates(spacings, errors):
    """Pairwise slopes log(e_prev/e_cur) / log(x_prev/x_cur); None for the first row.

    Pure function of the tabulated numbers, so rates recomputed from an
    emitted table reproduce these values exactly.
    """
    rates = [None]
    for k in range(1, len(errors)):
        rates.append(
            math.log(errors[k - 1] / errors[k]) / math.log(spacings[k - 1] / spacings[k])
        )
    return rates


def _build_table(nxs, hs, dts, errs_u, errs_p, spacings):
    ru = observed_rates(spacings, errs_u)
    rp = observed_rates(spacings, errs_p)
    rows = tuple(
        ConvergenceRow(nxs[k], hs[k], dts[k], errs_u[k], errs_p[k], ru[k], rp[k])
        for k in range(len(nxs))
    )
    return ConvergenceTable(rows)


def convergence_study(
    mms: ManufacturedSolution,
    theta: float,
    mesh_sizes,
    dt_rule,
    final_time: float,
    solver: SolverConfig | None = None,
    workers: int = 1,
) -> ConvergenceTable:
    """Spatial refinement study against the exact solution.

    ``dt_rule`` maps h to a target step; the actual step is final_time / N
    with N rounded up so the horizon is hit exactly. Rows are ordered by
    decreasing h and rates are slopes between consecutive rows.
    """
    residual_check(mms)
    mesh_sizes = sorted(int(n) for n in mesh_sizes)

    def level(nx):
        spec = make_problem(mms, nx)
        n = max(1, math.ceil(final_time / dt_rule(spec.mesh.h) - 1e-12))
        cfg = ThetaConfig.from_steps(theta, final_time, n)
        result = run(spec, cfg, solver=solver)
        if not result.completed:
            raise RuntimeError(f"convergence run blew up at nx={nx}")
        err_u, err_p = error_linf_l2(result)
        return spec.mesh.h, cfg.dt, err_u, err_p

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(level, mesh_sizes))
    else:
        results = [level(nx) for nx in mesh_sizes]
    hs = [r[0] for r in results]
    return _build_table(
        mesh_sizes, hs, [r[1] for r in results],
        [r[2] for r in results], [r[3] for r in results], spacings=hs,
    )


def temporal_study(
    mms: ManufacturedSolution,
    theta: float,
    nx: int,
    final_time: float,
    divisors=(25, 50, 100),
    ref_divisor: int = 800,
    solver: SolverConfig | None = None,
) -> ConvergenceTable:
    """Time-step refinement on a fixed mesh against a fine-step reference run.

    Comparing against a reference on the *same* mesh cancels the spatial
    error exactly, which isolates the quadratic-in-dt part of the error; an
    exact-solution comparison would be swamped by the O(h) spatial term.
    Errors are discrete weighted L2 norms of the coefficient differences,
    maximized over the coarse run's levels.
    """
    residual_check(mms)
    divisors = sorted(int(d) for d in divisors)
    stride = ref_divisor // divisors[-1]
    for d in divisors:
        if ref_divisor % d != 0 or (ref_divisor // d) % stride != 0:
            raise ValueError(f"divisor {d} incompatible with reference {ref_divisor}")

    spec = make_problem(mms, nx)
    snapshots = {}

    def keep(level, t, U, P):
        if level % stride == 0:
            snapshots[level] = (U.copy(), P.copy())

    ref = run(spec, ThetaConfig.from_steps(theta, final_time, ref_divisor),
              probes=(keep,), solver=solver, record_errors=False)
    if not ref.completed:
        raise RuntimeError("reference run blew up")
    A, Cdiag = ref.operators.A, ref.operators.Cdiag

    rows = []
    for d in divisors:
        ratio = ref_divisor // d
        worst_u, worst_p = 0.0, 0.0

        def compare(level, t, U, P):
            nonlocal worst_u, worst_p
            du = U - snapshots[level * ratio][0]
            dp = P - snapshots[level * ratio][1]
            worst_u = max(worst_u, math.sqrt(du @ spmv(A, du)))
            worst_p = max(worst_p, math.sqrt((dp * Cdiag) @ dp))

        res = run(spec, ThetaConfig.from_steps(theta, final_time, d),
                  probes=(compare,), solver=solver, record_errors=False)
        if not res.completed:
            raise RuntimeError(f"temporal run blew up at divisor {d}")
        rows.append((final_time / d, worst_u, worst_p))

    dts = [r[0] for r in rows]
    return _build_table(
        [nx] * len(rows), [spec.mesh.h] * len(rows), dts,
        [r[1] for r in rows], [r[2] for r in rows], spacings=dts,
    )


@dataclass(frozen=True)
class StabilityRow:
    theta: float
    multiplier: float
    dt: float
    dt_over_dtmax: float  # 0 when the bound is infinite
    status: str           # Stable / BlowUp / Drift
    final_energy: float
    drift: float


def stability_sweep(
    mms: ManufacturedSolution,
    thetas,
    multipliers,
    nx: int,
    ny: int | None = None,
    num_steps: int = 500,
    drift_tol: float = 1e-8,
    solver: SolverConfig | None = None,
    workers: int = 1,
) -> list:
    """Probe the stability boundary: run at multiples of the predicted dt_max.

    For theta >= 1/4 the bound is infinite and the step is multiplier*10*h
    instead. The predicted bound is sufficient, not sharp from below, so
    multipliers slightly above 1 may complete without blowing up; such runs
    are reported as Drift or even Stable rather than being forced into a
    verdict.
    """
    if mms.f is not None:
        raise ValueError("stability sweep expects a force-free manufactured solution")
    residual_check(mms)
    spec = make_problem(mms, nx, ny)
    spec.exact_u = spec.exact_p = None
    C0 = estimate_inverse_constant(spec.mesh, spec.bc, solver=solver)
    est = StabilityEstimate(C0, spec.mesh.h, rho0=mms.rho, lambda1=mms.lam)

    def one(theta, m):
        dtmax = est.dt_max(theta)
        dt = m * dtmax if math.isfinite(dtmax) else m * 10.0 * spec.mesh.h
        cfg = ThetaConfig.from_steps(theta, dt * num_steps, num_steps)
        result = run(spec, cfg, solver=solver, record_errors=False)
        if result.status == BLOWUP:
            status = BLOWUP
            drift = math.inf
        else:
            drift = energy_drift(result)
            status = STABLE if drift <= drift_tol else DRIFT
        return StabilityRow(
            theta, m, cfg.dt, cfg.dt / dtmax, status,
            result.energies[-1].value, drift,
        )

    combos = [(t, m) for t in thetas for m in multipliers]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(lambda c: one(*c), combos))
    else:
        out = [one(*c) for c in combos]
    return sorted(out, key=lambda r: (r.theta, r.multiplier))
