"""Implicit-Euler heat equation driven by carbon consumption."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem
from .linalg import DEFAULT_TOL, SolveReport, apply_dirichlet, cg_solve, jacobi_precondition, SolverError
from .mesh import BoundaryLabel


@dataclass(frozen=True)
class HeatParams:
    k_T: float = 9e-2
    c_T: float = 1e2
    T_m: float = 293.0
    T_g: float = 278.0
    T0: float = 293.0

    def __post_init__(self):
        if not self.k_T > 0:
            raise ValueError("thermal diffusivity k_T must be positive")


def dirichlet_data(space: fem.P1Space, params: HeatParams):
    """Boundary dofs and values: membrane on TOP, ground on BOTTOM and LATERAL.

    Vertices on the rim shared by the membrane and the ground take the ground
    value.
    """
    ground = space.mesh.boundary_vertices(BoundaryLabel.BOTTOM, BoundaryLabel.LATERAL)
    top = np.setdiff1d(space.mesh.boundary_vertices(BoundaryLabel.TOP), ground)
    dofs = np.concatenate([top, ground])
    values = np.concatenate([np.full(len(top), params.T_m), np.full(len(ground), params.T_g)])
    return dofs, values


@dataclass
class HeatStepper:
    """Caches the operators of one (space, dt, params) triple across steps."""

    space: fem.P1Space
    dt: float
    params: HeatParams = field(default_factory=HeatParams)
    tol: float = DEFAULT_TOL
    dirichlet: tuple | None = None
    last_report: SolveReport | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        self.M = fem.assemble_mass(self.space)
        self.K = fem.assemble_stiffness(self.space, self.params.k_T)
        self.A = self.M + self.K * self.dt
        if self.dirichlet is None:
            self.dirichlet = dirichlet_data(self.space, self.params)

    def source(self, corg_new, corg_old, scale: float = 1.0) -> np.ndarray:
        """Load of  -c_T (C_{n+1} - C_n); ``scale`` is dt_T/dt_C when the clocks differ."""
        dC = np.asarray(corg_new, dtype=float) - np.asarray(corg_old, dtype=float)
        return -self.params.c_T * scale * (self.M @ dC)

    def step(self, T_n, corg_new=None, corg_old=None, forcing=None, scale: float = 1.0):
        rhs = self.M @ np.asarray(T_n, dtype=float)
        if corg_new is not None:
            rhs = rhs + self.source(corg_new, corg_old, scale)
        if forcing is not None:
            rhs = rhs + forcing
        dofs, values = self.dirichlet
        A, b = apply_dirichlet(self.A, rhs, dofs, values)
        x, rep = cg_solve(A, b, tol=self.tol, x0=np.asarray(T_n, dtype=float), M=jacobi_precondition(A))
        self.last_report = rep
        if not rep.converged:
            raise SolverError(f"heat solve did not converge: {rep}")
        x[dofs] = values
        return x


def step_heat(space: fem.P1Space, T_n, corg_new, corg_old, dt: float,
              params: HeatParams = HeatParams(), forcing=None):
    """Solve (M + dt K) T_{n+1} = M T_n - c_T M (C_{n+1} - C_n) with Dirichlet lifting."""
    return HeatStepper(space, dt, params).step(T_n, corg_new, corg_old, forcing)
