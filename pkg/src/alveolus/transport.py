"""SUPG transport of the gases and of liquid water, and phase-change laws."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .linalg import DEFAULT_TOL, SolveReport, SolverError, SparseMatrix, solve
from .mesh import Mesh, Pipe

VELOCITY_FLOOR = 1e-14


@dataclass(frozen=True)
class GasParams:
    c_M: float = 1.8e7
    c_C: float = 2.6e7
    c_h: float = 2.5e6
    M0: float = 1.0
    Cdx0: float = 1.0
    O0: float = 0.0
    N0: float = 0.0
    h0: float = 1.0

    def __post_init__(self):
        if min(self.c_M, self.c_C, self.c_h) < 0:
            raise ValueError("gas production rates must be nonnegative")


@dataclass(frozen=True)
class WaterParams:
    u_w: float = 2.1
    k_w: float = 8.6e-2
    J_in: float = 258.0
    w0: float = 50.0

    def __post_init__(self):
        if self.u_w < 0:
            raise ValueError("water drift speed must be nonnegative")
        if not self.k_w > 0:
            raise ValueError("water diffusion k_w must be positive")

    @property
    def velocity(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.u_w])


@dataclass(frozen=True)
class PhaseParams:
    P0: float = 133.322
    s0: float = 20.386
    s1: float = 5132.0
    H0: float = -9.56e4
    H1: float = 337.89
    c_hw: float = 1e-1
    c_wh: float = 0.0
    p_ref: float = 1.013e5

    def __post_init__(self):
        if not self.P0 > 0:
            raise ValueError("P0 must be positive")
        if not self.H1 > 0:
            raise ValueError("H1 must be positive")
        if self.c_hw < 0 or self.c_wh < 0:
            raise ValueError("phase-change rates must be nonnegative")
        if not self.p_ref > 0:
            raise ValueError("reference pressure must be positive")


# ------------------------------------------------------------- phase change


def vapor_pressure_rankine(T, params: PhaseParams = PhaseParams()):
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise ValueError("absolute temperature must be positive")
    return params.P0 * np.exp(params.s0 - params.s1 / T)


def vapor_pressure_linear(T, params: PhaseParams = PhaseParams()):
    return params.H0 + params.H1 * np.asarray(T, dtype=float)


def total_concentration(state) -> np.ndarray:
    """C^dx + M + O + N + h from a mapping of gas fields."""
    return sum(np.asarray(state[k], dtype=float) for k in ("Cdx", "M", "O", "N", "h"))


def saturation_threshold(c_tot, T, p_ref, params: PhaseParams = PhaseParams()):
    """Vapor concentration above which the mixture condenses.

    ``p_ref`` may be a scalar or a nodal pressure field.
    """
    p_ref = np.asarray(p_ref, dtype=float)
    if np.any(p_ref <= 0):
        raise ValueError("reference pressure must be positive")
    return np.asarray(c_tot, dtype=float) * vapor_pressure_linear(T, params) / p_ref


def condensation_rate(h, threshold, c_hw: float = PhaseParams.c_hw):
    return c_hw * np.maximum(np.asarray(h, dtype=float) - threshold, 0.0)


def evaporation_rate(h, threshold, w, c_wh: float = PhaseParams.c_wh):
    return c_wh * np.maximum(threshold - np.asarray(h, dtype=float), 0.0) * np.asarray(w, dtype=float)


# ------------------------------------------------------------------- SUPG


def supg_tau(mesh: Mesh, velocity) -> float:
    """max_K l_K / (2 |u|), |u| the domain RMS speed; 0 when the flow is at rest."""
    if hasattr(velocity, "rms"):
        speed = velocity.rms()
    else:
        v = np.asarray(velocity, dtype=float)
        if v.shape == (3,):
            speed = float(np.linalg.norm(v))
        else:
            # values at degree-2 quadrature points, shape (n_tets, 4, 3)
            rule = fem.tet_rule(2)
            sq = np.sum(rule.weights * np.sum(v**2, axis=2) * mesh.volumes[:, None])
            speed = float(np.sqrt(sq / mesh.volumes.sum()))
    if speed < VELOCITY_FLOOR:
        return 0.0
    return mesh.max_diameter / (2 * speed)


@dataclass(frozen=True)
class GasSource:
    """Right-hand side of a gas step: -rate (C_{n+1} - C_n) - dt F_cond."""

    rate: float = 0.0
    delta_corg: np.ndarray | None = None
    condensation: np.ndarray | None = None

    @classmethod
    def zero(cls) -> "GasSource":
        return cls()

    @classmethod
    def carbon(cls, rate: float, delta_corg) -> "GasSource":
        return cls(rate, np.asarray(delta_corg, dtype=float))

    @classmethod
    def vapor(cls, rate: float, delta_corg, condensation) -> "GasSource":
        return cls(rate, np.asarray(delta_corg, dtype=float), np.asarray(condensation, dtype=float))


@dataclass
class AdvectionOperators:
    """Operators of one implicit SUPG step for a given velocity.

    ``system = phi (M + tau S) + dt (A + tau V) [+ dt k K]`` with
    S the streamline-weighted mass and V the streamline diffusion.

    With the global tau the weighted mass ``M + tau S`` is indefinite
    wherever ``tau div u`` exceeds 2, which defeats Jacobi-preconditioned
    Krylov solvers. ``direct=True`` (default) factors the system once and
    reuses the factors for every species sharing the velocity.
    """

    space: fem.P1Space
    velocity: object
    dt: float
    phi: float = 0.3
    tau: float | None = None
    diffusion: float = 0.0
    tol: float = DEFAULT_TOL
    direct: bool = True
    reports: list = field(default_factory=list)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if self.tau is None:
            self.tau = supg_tau(self.space.mesh, self.velocity)
        sp_ = self.space
        self.M = fem.assemble_mass(sp_)
        self.at_rest = self._speed_zero()
        if self.at_rest:
            self.A = self.S = self.V = None
            self.test_mass = self.M
            system = self.M * self.phi
        else:
            self.A = fem.assemble_advection(sp_, self.velocity)
            self.S = fem.assemble_streamline_mass(sp_, self.velocity)
            self.V = fem.assemble_streamline_diffusion(sp_, self.velocity)
            self.test_mass = self.M + self.S * self.tau
            system = self.test_mass * self.phi + (self.A + self.V * self.tau) * self.dt
        if self.diffusion:
            system = system + fem.assemble_stiffness(sp_, self.diffusion) * self.dt
        self.system = system
        self._lu = None

    def _speed_zero(self) -> bool:
        rule = fem.tet_rule(2)
        return not np.any(self.space.velocity(self.velocity, rule))

    def solve(self, rhs, x0=None, what="transport step"):
        if not self.direct:
            x, rep = solve(self.system, rhs, tol=self.tol, x0=x0,
                           symmetric=self.system.symmetric, what=what)
            self.reports.append(rep)
            return x
        if self._lu is None:
            try:
                self._lu = spla.splu(self.system.csr.tocsc())
            except RuntimeError as exc:
                raise SolverError(f"{what}: LU factorization failed ({exc})") from exc
        x = self._lu.solve(np.asarray(rhs, dtype=float))
        res = float(np.linalg.norm(rhs - self.system @ x))
        bnorm = float(np.linalg.norm(rhs))
        rep = SolveReport(0, res, bool(np.all(np.isfinite(x)) and res <= max(self.tol * bnorm, 1e-300)),
                          self.tol, "splu")
        if not rep.converged:
            raise SolverError(f"{what}: direct solve residual {res:.3e} exceeds tol * |b| = "
                              f"{self.tol * bnorm:.3e}")
        self.reports.append(rep)
        return x


def gas_rhs(ops: AdvectionOperators, G_n, source: GasSource) -> np.ndarray:
    nodal = ops.phi * np.asarray(G_n, dtype=float)
    if source.delta_corg is not None and source.rate:
        nodal = nodal - source.rate * source.delta_corg
    if source.condensation is not None:
        nodal = nodal - ops.dt * source.condensation
    return ops.test_mass @ nodal


def step_gas(ops: AdvectionOperators, G_n, source: GasSource = GasSource()) -> np.ndarray:
    """One SUPG implicit-Euler step of  phi dG/dt + u . grad G = F^G."""
    return ops.solve(gas_rhs(ops, G_n, source), x0=np.asarray(G_n, dtype=float), what="gas step")


def water_operators(space: fem.P1Space, dt: float, params: WaterParams = WaterParams(),
                    phi: float = 0.3, tol: float = DEFAULT_TOL, direct: bool = True) -> AdvectionOperators:
    u_w = params.velocity
    return AdvectionOperators(space, u_w, dt, phi, supg_tau(space.mesh, u_w), params.k_w, tol, direct)


def injector_load(space: fem.P1Space, injectors: list[Pipe], J_in: float, radius: float = 0.0,
                  streamline=None) -> np.ndarray:
    """Load of F_in = sum_i J_in / L_i on each injector centerline."""
    f = np.zeros(space.ndofs)
    for pipe in injectors:
        src = fem.LineSource(pipe.polyline, J_in / pipe.length, radius)
        f += fem.line_source_load(space, src, streamline)
    return f


def step_water(ops: AdvectionOperators, w_n, condensation=None, injection=None) -> np.ndarray:
    """One step of  phi dw/dt + u_w . grad w - k_w lap w = F_cond + F_in.

    All boundaries carry natural (zero diffusive flux) conditions. The
    Laplacian in the SUPG residual vanishes for P1 and is omitted.
    """
    nodal = ops.phi * np.asarray(w_n, dtype=float)
    if condensation is not None:
        nodal = nodal + ops.dt * np.asarray(condensation, dtype=float)
    rhs = ops.test_mass @ nodal
    if injection is not None:
        rhs = rhs + ops.dt * injection
    return ops.solve(rhs, x0=np.asarray(w_n, dtype=float), what="water step")


def step_vapor_implicit(ops: AdvectionOperators, h_n, rate: float, delta_corg, threshold,
                        c_hw: float, evaporation=None):
    """Vapor step with the condensation sink taken implicitly.

    The sink ``c_hw (h_{n+1} - H)`` acts on the nodes where ``h_n > H``.
    Returns ``(h_{n+1}, F_cond)`` with F_cond evaluated at the new level, so
    the water step receives exactly what the vapor lost.
    """
    h_n = np.asarray(h_n, dtype=float)
    threshold = np.broadcast_to(np.asarray(threshold, dtype=float), h_n.shape)
    k = np.where(h_n > threshold, c_hw, 0.0)
    nodal = ops.phi * h_n - rate * np.asarray(delta_corg, dtype=float) + ops.dt * k * threshold
    if evaporation is not None:
        nodal = nodal + ops.dt * np.asarray(evaporation, dtype=float)
    rhs = ops.test_mass @ nodal
    if not np.any(k):
        h = ops.solve(rhs, x0=h_n, what="vapor step")
        return h, np.zeros_like(h)
    sink = AdvectionOperators.__new__(AdvectionOperators)
    sink.__dict__.update(ops.__dict__)
    sink.system = ops.system + SparseMatrix((ops.test_mass.csr @ sp.diags(ops.dt * k)).tocsr())
    sink._lu = None
    sink.reports = ops.reports
    h = sink.solve(rhs, x0=h_n, what="vapor step")
    return h, k * (h - threshold)
