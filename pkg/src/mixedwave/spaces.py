"""Lowest-order Raviart-Thomas / piecewise-constant pair on rectangles.

Velocity dofs are *integrated* normal fluxes through edges, taken along the
global normal (+x for vertical edges, +y for horizontal ones). With that
normalization every divergence-coupling entry is exactly +-1 and the pressure
mass matrix is diagonal, which the time stepper exploits.

Assembly uses closed-form element integrals (exact for constant-per-element
coefficients); the 3x3 Gauss rule appears only where genuinely smooth data
must be integrated (loads, error norms). The interpolation operators use a
7-point edge rule / 7x7 element rule so that smooth non-polynomial fields are
projected to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .linalg import CsrMatrix, csr_from_coo, csr_transpose
from .mesh import LEFT, RIGHT, BOTTOM, TOP, BoundaryPartition, EdgeClassification, RectMesh, edge_classify

ASSEMBLY_RULE = 3      # exact for all RT0/P0 products with constant coefficients
PROJECTION_RULE = 7    # effectively exact for smooth data at desk scale


@lru_cache(maxsize=None)
def gauss_rule_1d(n: int):
    """Gauss-Legendre nodes/weights on [0, 1]; weights sum to 1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class MaterialField:
    """Element-wise constant density and stiffness with global bounds."""

    rho_per_element: np.ndarray
    lambda_per_element: np.ndarray
    rho0: float
    rho1: float
    lambda0: float
    lambda1: float

    def __post_init__(self):
        for lo, hi, field, name in (
            (self.rho0, self.rho1, self.rho_per_element, "rho"),
            (self.lambda0, self.lambda1, self.lambda_per_element, "lambda"),
        ):
            if not (0 < lo <= hi):
                raise ValueError(f"{name} bounds must satisfy 0 < lower <= upper")
            if field.size and (field.min() < lo or field.max() > hi):
                raise ValueError(f"material bound violation: {name} leaves [{lo}, {hi}]")


def material_field(mesh: RectMesh, rho, lam, rho_bounds=None, lambda_bounds=None) -> MaterialField:
    """Sample rho and lambda per element (callbacks at centroids, scalars broadcast)."""
    cx, cy = mesh.centroids()

    def per_element(value):
        if callable(value):
            return np.broadcast_to(np.asarray(value(cx, cy), dtype=np.float64), cx.shape).copy()
        return np.full(mesh.n_elements, float(value))

    rho_e = per_element(rho)
    lam_e = per_element(lam)
    rb = rho_bounds if rho_bounds is not None else (rho_e.min(), rho_e.max())
    lb = lambda_bounds if lambda_bounds is not None else (lam_e.min(), lam_e.max())
    return MaterialField(rho_e, lam_e, float(rb[0]), float(rb[1]), float(lb[0]), float(lb[1]))


def rt0_basis_eval(mesh: RectMesh, element: int, local_edge: int, x, y):
    """RT0 shape function of one element edge, evaluated at points inside it.

    Normalized so the integrated flux through its own edge (along the global
    normal) is 1 and through the other three edges is 0. Returns (vx, vy).
    """
    if local_edge not in (LEFT, RIGHT, BOTTOM, TOP):
        raise ValueError(f"invalid local edge index {local_edge}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xl = mesh.element_x0[element]
    yb = mesh.element_y0[element]
    area = mesh.hx * mesh.hy
    zero = np.zeros(np.broadcast(x, y).shape)
    if local_edge == LEFT:
        return (xl + mesh.hx - x) / area, zero
    if local_edge == RIGHT:
        return (x - xl) / area, zero
    if local_edge == BOTTOM:
        return zero, (yb + mesh.hy - y) / area
    return zero, (y - yb) / area


@dataclass(frozen=True)
class MixedOperators:
    """Assembled bilinear forms over the free velocity dofs.

    A : rho-weighted velocity mass matrix (SPD)
    Cdiag : diagonal of the lambda^{-1}-weighted pressure mass, one entry per element
    D : divergence coupling, rows = elements, columns = free velocity dofs
    DT : D transposed, kept around because every step multiplies by it
    """

    A: CsrMatrix
    Cdiag: np.ndarray
    D: CsrMatrix
    DT: CsrMatrix
    n_velocity: int
    n_pressure: int
    mesh: RectMesh
    bc: BoundaryPartition
    classification: EdgeClassification
    material: MaterialField


def assemble_operators(
    mesh: RectMesh,
    bc: BoundaryPartition,
    material: MaterialField,
    element_order=None,
) -> MixedOperators:
    """Assemble A, C, D with NEUMANN_U edge dofs eliminated.

    ``element_order`` permutes the element-wise accumulation order; results
    agree for any order up to floating-point addition reordering, which is
    what makes a parallel element-wise reduction legitimate.
    """
    if material.rho_per_element.shape != (mesh.n_elements,):
        raise ValueError("material arrays must have one entry per element")
    cls = edge_classify(mesh, bc)
    ee = mesh.element_edges
    rho = material.rho_per_element
    if element_order is not None:
        order = np.asarray(element_order)
        if np.any(np.sort(order) != np.arange(mesh.n_elements)):
            raise ValueError("element_order must be a permutation of all elements")
        ee = ee[order]
        rho = rho[order]

    # closed-form element mass blocks; x- and y-oriented shapes never overlap
    ax_d = rho * mesh.hx / (3.0 * mesh.hy)
    ax_o = rho * mesh.hx / (6.0 * mesh.hy)
    ay_d = rho * mesh.hy / (3.0 * mesh.hx)
    ay_o = rho * mesh.hy / (6.0 * mesh.hx)
    L, R, B, T = ee[:, LEFT], ee[:, RIGHT], ee[:, BOTTOM], ee[:, TOP]
    rows = np.concatenate([L, L, R, R, B, B, T, T])
    cols = np.concatenate([L, R, L, R, B, T, B, T])
    vals = np.concatenate([ax_d, ax_o, ax_o, ax_d, ay_d, ay_o, ay_o, ay_d])
    fi, fj = cls.free_index[rows], cls.free_index[cols]
    keep = (fi >= 0) & (fj >= 0)
    n_free = cls.n_free
    A = csr_from_coo(fi[keep], fj[keep], vals[keep], (n_free, n_free))

    # divergence theorem with integrated-flux dofs: entries exactly +-1
    n_el = mesh.n_elements
    el = np.repeat(np.arange(n_el), 4)
    div_cols = cls.free_index[ee.ravel()]
    div_vals = np.tile(np.array([-1.0, 1.0, -1.0, 1.0]), n_el)
    if element_order is not None:
        el = np.repeat(order, 4)
    keep = div_cols >= 0
    D = csr_from_coo(el[keep], div_cols[keep], div_vals[keep], (n_el, n_free))

    Cdiag = mesh.hx * mesh.hy / material.lambda_per_element

    return MixedOperators(
        A=A,
        Cdiag=Cdiag,
        D=D,
        DT=csr_transpose(D),
        n_velocity=n_free,
        n_pressure=n_el,
        mesh=mesh,
        bc=bc,
        classification=cls,
        material=material,
    )


def _element_gauss_points(mesh: RectMesh, n: int):
    """Tensor Gauss points per element: arrays of shape (n_elements, n*n)."""
    xi, w = gauss_rule_1d(n)
    gx = mesh.element_x0[:, None] + mesh.hx * np.repeat(xi, n)[None, :]
    gy = mesh.element_y0[:, None] + mesh.hy * np.tile(xi, n)[None, :]
    weights = (np.repeat(w, n) * np.tile(w, n))  # sums to 1
    return gx, gy, weights, np.repeat(xi, n), np.tile(xi, n)


def assemble_load(mesh: RectMesh, bc: BoundaryPartition, f, t: float) -> np.ndarray:
    """Load vector (f(.,t), phi_i) over free velocity dofs; f=None means zero."""
    cls = edge_classify(mesh, bc)
    if f is None:
        return np.zeros(cls.n_free)
    gx, gy, w, xi, eta = _element_gauss_points(mesh, ASSEMBLY_RULE)
    fx, fy = f(gx, gy, t)
    fx = np.broadcast_to(np.asarray(fx, dtype=np.float64), gx.shape)
    fy = np.broadcast_to(np.asarray(fy, dtype=np.float64), gx.shape)
    # integral of f . phi over the element, one value per local slot
    contrib = np.empty((mesh.n_elements, 4))
    contrib[:, LEFT] = mesh.hx * (fx @ (w * (1.0 - xi)))
    contrib[:, RIGHT] = mesh.hx * (fx @ (w * xi))
    contrib[:, BOTTOM] = mesh.hy * (fy @ (w * (1.0 - eta)))
    contrib[:, TOP] = mesh.hy * (fy @ (w * eta))
    full = np.zeros(mesh.n_edges)
    np.add.at(full, mesh.element_edges.ravel(), contrib.ravel())
    return full[cls.free_edges]


def edge_fluxes(mesh: RectMesh, z) -> np.ndarray:
    """Integrated normal flux of a vector field through every edge.

    The flux is taken along the global normal (+x vertical, +y horizontal),
    integrated with the 7-point Gauss rule per edge.
    """
    xi, w = gauss_rule_1d(PROJECTION_RULE)
    out = np.empty(mesh.n_edges)

    iv, jv = np.meshgrid(np.arange(mesh.nx + 1), np.arange(mesh.ny), indexing="xy")
    xv = (mesh.x0 + iv.ravel() * mesh.hx)[:, None] + np.zeros_like(xi)[None, :]
    yv = (mesh.y0 + jv.ravel() * mesh.hy)[:, None] + mesh.hy * xi[None, :]
    zx, _ = z(xv, yv)
    out[: mesh.n_vedges] = mesh.hy * (np.broadcast_to(zx, xv.shape) @ w)

    ih, jh = np.meshgrid(np.arange(mesh.nx), np.arange(mesh.ny + 1), indexing="xy")
    xh = (mesh.x0 + ih.ravel() * mesh.hx)[:, None] + mesh.hx * xi[None, :]
    yh = (mesh.y0 + jh.ravel() * mesh.hy)[:, None] + np.zeros_like(xi)[None, :]
    _, zy = z(xh, yh)
    out[mesh.n_vedges :] = mesh.hx * (np.broadcast_to(zy, xh.shape) @ w)
    return out


def project_velocity_pi_h(mesh: RectMesh, bc: BoundaryPartition, z) -> np.ndarray:
    """Flux interpolant of z onto the velocity space, restricted to free dofs.

    Its defining property is that element-wise divergence averages of the
    interpolant match those of z, which keeps the initial pressure-velocity
    compatibility defect at zero.
    """
    cls = edge_classify(mesh, bc)
    return edge_fluxes(mesh, z)[cls.free_edges]


def project_pressure_p_h(mesh: RectMesh, phi) -> np.ndarray:
    """L2 projection onto piecewise constants: element averages of phi."""
    gx, gy, w, _, _ = _element_gauss_points(mesh, PROJECTION_RULE)
    vals = np.broadcast_to(np.asarray(phi(gx, gy), dtype=np.float64), gx.shape)
    return vals @ w


def scatter_free(cls: EdgeClassification, free_values, n_edges: int) -> np.ndarray:
    """Expand free-dof values to the full edge set; constrained edges get 0."""
    full = np.zeros(n_edges)
    full[cls.free_edges] = free_values
    return full


def velocity_values(mesh: RectMesh, edge_coeffs, xi, eta):
    """Evaluate the RT0 field at fixed reference points in each element.

    edge_coeffs is over all edges; xi, eta are reference coordinates in
    [0,1] shared by every element. Returns (vx, vy) of shape (n_elements, npts).
    """
    c = edge_coeffs[mesh.element_edges]
    vx = (c[:, [LEFT]] * (1.0 - xi)[None, :] + c[:, [RIGHT]] * xi[None, :]) / mesh.hy
    vy = (c[:, [BOTTOM]] * (1.0 - eta)[None, :] + c[:, [TOP]] * eta[None, :]) / mesh.hx
    return vx, vy


def velocity_l2_error(
    mesh: RectMesh,
    cls: EdgeClassification,
    rho_per_element,
    free_coeffs,
    exact,
    rule: int = ASSEMBLY_RULE,
) -> float:
    """Weighted L2 distance || rho^{1/2} (exact - U_h) || by element quadrature."""
    gx, gy, w, xi, eta = _element_gauss_points(mesh, rule)
    ux, uy = exact(gx, gy)
    ux = np.broadcast_to(np.asarray(ux, dtype=np.float64), gx.shape)
    uy = np.broadcast_to(np.asarray(uy, dtype=np.float64), gx.shape)
    vx, vy = velocity_values(mesh, scatter_free(cls, free_coeffs, mesh.n_edges), xi, eta)
    per_el = ((ux - vx) ** 2 + (uy - vy) ** 2) @ w
    area = mesh.hx * mesh.hy
    return float(np.sqrt(area * np.sum(np.asarray(rho_per_element) * per_el)))


def pressure_l2_error(
    mesh: RectMesh,
    lambda_per_element,
    pressure_coeffs,
    exact,
    rule: int = ASSEMBLY_RULE,
) -> float:
    """Weighted L2 distance || lambda^{-1/2} (exact - P_h) ||."""
    gx, gy, w, _, _ = _element_gauss_points(mesh, rule)
    pv = np.broadcast_to(np.asarray(exact(gx, gy), dtype=np.float64), gx.shape)
    per_el = (pv - np.asarray(pressure_coeffs)[:, None]) ** 2 @ w
    area = mesh.hx * mesh.hy
    return float(np.sqrt(area * np.sum(per_el / np.asarray(lambda_per_element))))
