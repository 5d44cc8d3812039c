"""Organic-carbon consumption by the methanogenic bacteria.

Carbon and bacteria are nondimensional. The rate constant ``a_b`` is quoted
in m^6 kg^-2 day^-1, which does not balance against dimensionless b and C;
it is used as a plain per-day multiplier of ``psi1 * psi2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .linalg import cg_solve


@dataclass(frozen=True)
class ReactionParams:
    phi: float = 0.3
    a_b: float = 1e-5
    c_b: float = 1.0
    b0: float = 1.0
    corg0: float = 1.0
    w_max: float = 100.0
    T_opt: float = 308.0
    A_T: float = 20.0

    def __post_init__(self):
        if not 0 < self.phi < 1:
            raise ValueError("porosity phi must lie in (0, 1)")
        for name in ("a_b", "w_max", "A_T"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def psi1(w, params: ReactionParams = ReactionParams()):
    """Water factor w * max(0, 1 - w/w_max), clamped to 0 for w < 0."""
    w = np.asarray(w, dtype=float)
    return np.maximum(w, 0.0) * np.maximum(0.0, 1.0 - w / params.w_max)


def psi2(T, params: ReactionParams = ReactionParams()):
    """Temperature window max(0, 1 - |T - T_opt|/A_T)."""
    T = np.asarray(T, dtype=float)
    return np.maximum(0.0, 1.0 - np.abs(T - params.T_opt) / params.A_T)


def bacteria_of(corg, params: ReactionParams = ReactionParams()):
    return params.b0 + params.c_b * (params.corg0 - np.asarray(corg, dtype=float))


def reaction_coefficient(corg_n, w_n, T_n, dt: float, params: ReactionParams):
    """A_C = (1 - phi) + dt a_b b(C_n) psi1(w_n) psi2(T_n)."""
    return (1 - params.phi) + dt * params.a_b * bacteria_of(corg_n, params) * psi1(w_n, params) \
        * psi2(T_n, params)


def step_carbon(corg_n, w_n, T_n, dt: float, params: ReactionParams = ReactionParams(),
                space: fem.P1Space | None = None, consistent: bool = False, corg_lin=None,
                tol: float = 1e-12):
    """One semi-implicit step: C_{n+1} C_n replaces C_{n+1}^2.

    The default lumped form is nodewise:
    ``C_{n+1} = (1 - phi) C_n / A_C``. With ``consistent=True`` the weak form
    is assembled with the degree-4 rule and solved on ``space``.
    ``corg_lin`` overrides the level used inside the bacteria factor (used
    for the first-step predictor).
    """
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    corg_n = np.asarray(corg_n, dtype=float)
    lin = corg_n if corg_lin is None else np.asarray(corg_lin, dtype=float)
    A_C = reaction_coefficient(lin, w_n, T_n, dt, params) * np.ones_like(corg_n)
    if not consistent:
        # dividing by A_C / (1 - phi) keeps frozen nodes bit-identical
        return corg_n / (A_C / (1 - params.phi))
    if space is None:
        raise ValueError("consistent assembly needs a P1 space")
    rule = fem.tet_rule(4)
    # evaluate the nonlinear coefficient from interpolated fields, not nodal A_C
    cq = space.eval_at_quad(lin, rule)
    wq = space.eval_at_quad(np.broadcast_to(w_n, corg_n.shape), rule)
    Tq = space.eval_at_quad(np.broadcast_to(T_n, corg_n.shape), rule)
    coeff = (1 - params.phi) + dt * params.a_b * bacteria_of(cq, params) * psi1(wq, params) \
        * psi2(Tq, params)
    A = fem.assemble_mass(space, coeff, degree=4)
    rhs = fem.assemble_mass(space, 1 - params.phi, degree=2) @ corg_n
    x, rep = cg_solve(A, rhs, tol=tol)
    if not rep.converged:
        raise RuntimeError(f"carbon mass solve did not converge: {rep}")
    return x


def bootstrap_carbon(corg0, w0, T0, dt: float, params: ReactionParams = ReactionParams(), **kw):
    """First step with a linearized predictor.

    A linear solve with the bacteria factor frozen at ``corg0`` supplies the
    level used in the semi-implicit product for the actual first step.
    """
    frozen = np.full_like(np.asarray(corg0, dtype=float), params.corg0)
    predictor = step_carbon(corg0, w0, T0, dt, params, corg_lin=frozen, **kw)
    return step_carbon(corg0, w0, T0, dt, params, corg_lin=predictor, **kw)


def carbon_rate(corg, w, T, params: ReactionParams = ReactionParams()):
    """dC/dt of the continuous model, for ODE reference solutions."""
    return -params.a_b * bacteria_of(corg, params) * corg * psi1(w, params) * psi2(T, params) \
        / (1 - params.phi)
