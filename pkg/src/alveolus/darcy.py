"""Perturbed dual-mixed Darcy problem with CGLS stabilization on RT0 x P0.

Solves  div u + lam p = F,  u = -grad p,  u.n = 0  where F is the
(mollified) line-sink term of the extraction drains.

Pressure gradients of P0 functions only enter the Darcy-law least-squares
term. Against an RT0 test function the gradient is taken by parts,
``int grad p . v = -int p div v``, which is exact for v in H0(div). The
gradient of a P0 *test* function vanishes elementwise, so that half of the
term drops. With this reading the stabilized form is consistent and the
pressure block is diagonal, which is what :func:`solve_cgls` exploits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .linalg import DEFAULT_TOL, SolveReport, SolverError, SparseMatrix, cg_solve, jacobi_precondition
from .mesh import Mesh, Pipe


@dataclass(frozen=True)
class DarcyParams:
    """``lam=None`` means the largest element diameter (per-tet with ``lam_per_element``)."""

    D: float = 1e-11
    mu_gas: float = 1.3
    lam: float | None = None
    lam_per_element: bool = False
    d1: float = 0.5
    d2: float = 0.5
    d3: float = 0.5
    J_out: float = 258.0
    mollify_radius: float | None = None
    depletion_floor: float = 1e-12

    def __post_init__(self):
        if self.lam is not None and not self.lam > 0:
            raise ValueError("perturbation lam must be positive")
        if not 0 < self.d1 < 1:
            raise ValueError("d1 must lie in (0, 1)")
        if self.d2 < 0 or self.d3 < 0:
            raise ValueError("d2 and d3 must be nonnegative")

    def lam_field(self, mesh: Mesh) -> np.ndarray:
        if self.lam is not None:
            return np.full(mesh.n_tets, float(self.lam))
        if self.lam_per_element:
            return np.array(mesh.element_diameters, dtype=float)
        return np.full(mesh.n_tets, mesh.max_diameter)

    def physical_pressure(self, p, phi: float = 0.3):
        """Undo the scaling p = D / (phi mu_gas) P."""
        return np.asarray(p) * phi * self.mu_gas / self.D


class GasDepletedError(SolverError):
    pass


@dataclass
class VelocityPressure:
    space: fem.RT0P0Space
    u: np.ndarray
    p: np.ndarray
    lam: np.ndarray
    report: SolveReport | None = None
    _rms: float | None = field(default=None, repr=False)

    def at_quadrature(self, rule: fem.Rule) -> np.ndarray:
        return self.space.at_quadrature(self.u, rule)

    def velocity_at(self, points) -> np.ndarray:
        """Pointwise RT0 velocity; raises for points outside the mesh."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        cells, _ = self.space.mesh.locate(points)
        if np.any(cells < 0):
            bad = points[cells < 0][0]
            raise ValueError(f"point {bad.tolist()} is outside the mesh")
        return self.space.evaluate(self.u, cells, points)

    def divergence(self) -> np.ndarray:
        return self.space.divergence(self.u)

    def nodal(self) -> np.ndarray:
        """Volume-weighted vertex average of the elementwise RT0 field."""
        mesh = self.space.mesh
        cells = np.repeat(np.arange(mesh.n_tets), 4)
        vals = self.space.evaluate(self.u, cells, mesh.vertices[mesh.tets].reshape(-1, 3))
        w = np.repeat(mesh.volumes, 4)
        acc = np.zeros((mesh.n_vertices, 3))
        np.add.at(acc, mesh.tets.ravel(), vals * w[:, None])
        den = np.bincount(mesh.tets.ravel(), weights=w, minlength=mesh.n_vertices)
        return acc / den[:, None]

    def rms(self) -> float:
        """sqrt(int |u|^2 / |Omega|)."""
        if self._rms is None:
            rule = fem.tet_rule(2)
            uq = self.at_quadrature(rule)
            vol = self.space.volumes
            self._rms = float(np.sqrt(np.sum(rule.weights * np.sum(uq**2, axis=2) * vol[:, None])
                                      / vol.sum()))
        return self._rms

    def balance(self, F_cells) -> float:
        """int (div u + lam p - F) over the domain."""
        vol = self.space.volumes
        return float(np.sum(self.divergence() * vol + self.lam * self.p * vol - F_cells))


def fout_density(p1: fem.P1Space, c_tot, pipes: list[Pipe], J_out: float,
                 floor: float = 1e-12) -> list[float]:
    """Per-pipe line density -J_out / int_pipe c_tot dl."""
    out = []
    for i, pipe in enumerate(pipes):
        if J_out == 0:
            out.append(0.0)
            continue
        total = fem.line_integral(p1, c_tot, pipe.polyline)
        if total < floor:
            raise GasDepletedError(f"gas depleted at extractor {i} (int c_tot dl = {total:.3e})")
        out.append(-J_out / total)
    return out


def extraction_load(mesh: Mesh, pipes: list[Pipe], densities, radius: float) -> np.ndarray:
    """Per-tet integrals of the mollified sink term."""
    F = np.zeros(mesh.n_tets)
    for pipe, dens in zip(pipes, densities):
        if dens == 0:
            continue
        pm = fem.line_source_points(mesh, fem.LineSource(pipe.polyline, dens, radius))
        F += fem.cell_load(mesh, pm)
    return F


def source_cells(space: fem.RT0P0Space, f, degree: int = 4) -> np.ndarray:
    """Per-tet integrals of a smooth source given as a callable."""
    rule = fem.tet_rule(degree)
    pts = np.einsum("qk,ekd->eqd", rule.points, space.mesh.vertices[space.mesh.tets])
    vals = np.asarray(f(pts.reshape(-1, 3)), dtype=float).reshape(len(pts), -1)
    return np.sum(rule.weights * vals, axis=1) * space.volumes


def assemble_cgls_system(space: fem.RT0P0Space, F_cells, params: DarcyParams, lam=None):
    """Full block system on (free velocity dofs, pressures).

    Rows are the velocity tests then the pressure tests of
    a_vel - GLS1 + GLS2a + GLS3 = l_vel + GLS2l.
    """
    lam = params.lam_field(space.mesh) if lam is None else np.broadcast_to(lam, (space.n_pressure,))
    d1, d2, d3 = params.d1, params.d2, params.d3
    vol = space.volumes
    free = space.free_dofs
    Mu = space.mass_matrix().csr[free][:, free]
    Cu = space.curl_matrix().csr[free][:, free]
    D = space.divergence_matrix().csr[:, free]
    W = sp.diags(1 / vol)
    L = sp.diags(lam)
    Mp = sp.diags(vol)
    uu = (1 - d1) * Mu + d2 * (D.T @ W @ D) + d3 * Cu
    up = -(1 - d1) * D.T + d2 * (D.T @ L)
    pu = -D + d2 * (L @ D)
    pp = -(L @ Mp) + d2 * (L @ L @ Mp)
    A = sp.bmat([[uu, up], [pu, pp]]).tocsr()
    F = np.asarray(F_cells, dtype=float)
    rhs = np.concatenate([d2 * (D.T @ (F / vol)), -F + d2 * lam * F])
    return SparseMatrix(A), rhs


def solve_cgls(space: fem.RT0P0Space, F_cells, params: DarcyParams = DarcyParams(),
               tol: float = DEFAULT_TOL, lam=None) -> VelocityPressure:
    """Solve the stabilized problem by eliminating the diagonal pressure block.

    The pressure rows read ``(d2 lam - 1)(D u + lam |K| p - F) = 0``; for
    ``d2 lam != 1`` they give p elementwise, and the velocity rows reduce to
    ``[(1-d1) M + d3 C + (1-d1) D^T (lam |K|)^-1 D] u = (1-d1) D^T (lam |K|)^-1 F``.
    """
    lam = params.lam_field(space.mesh) if lam is None else np.broadcast_to(
        np.asarray(lam, dtype=float), (space.n_pressure,)).copy()
    d1, d2, d3 = params.d1, params.d2, params.d3
    diag_msg = f"(lam in [{lam.min():.4g}, {lam.max():.4g}], d1={d1}, d2={d2}, d3={d3})"
    if np.any(np.abs(d2 * lam - 1) < 1e-12):
        raise SolverError(f"CGLS pressure rows vanish for d2*lam = 1 {diag_msg}")
    vol = space.volumes
    F = np.asarray(F_cells, dtype=float)
    free = space.free_dofs
    Mu = space.mass_matrix().csr[free][:, free]
    D = space.divergence_matrix().csr[:, free]
    Winv = sp.diags(1 / (lam * vol))
    S = (1 - d1) * Mu + (1 - d1) * (D.T @ Winv @ D)
    if d3 > 0:
        S = S + d3 * space.curl_matrix().csr[free][:, free]
    S = S.tocsr()
    rhs = (1 - d1) * (D.T @ (F / (lam * vol)))
    u = np.zeros(space.n_velocity)
    report = SolveReport(0, 0.0, True, tol, "cg")
    if np.any(rhs != 0):
        x, report = cg_solve(S, rhs, tol=tol, M=jacobi_precondition(S))
        if not report.converged:
            raise SolverError(f"CGLS velocity solve did not converge after {report.iterations} "
                              f"iterations, residual {report.residual:.3e} {diag_msg}")
        u[free] = x
    p = (F - space.divergence(u) * vol) / (lam * vol)
    return VelocityPressure(space, u, p, lam, report)


def solve_velocity(space: fem.RT0P0Space, p1: fem.P1Space, c_tot, extractors: list[Pipe],
                   params: DarcyParams = DarcyParams(), tol: float = DEFAULT_TOL):
    """Gas velocity for the current gas state; returns (VelocityPressure, F_cells)."""
    dens = fout_density(p1, c_tot, extractors, params.J_out, params.depletion_floor)
    radius = params.mollify_radius
    if radius is None:
        radius = 2 * float(np.median(space.mesh.element_diameters))
    F = extraction_load(space.mesh, extractors, dens, radius)
    return solve_cgls(space, F, params, tol), F
