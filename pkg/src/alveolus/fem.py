"""P1 Lagrange and RT0 x P0 spaces on tetrahedra, quadrature and assembly.

All element loops are vectorized over tets; local matrices are scattered
into scipy CSR through :class:`alveolus.linalg.SparseMatrix`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import roots_jacobi

from .linalg import SparseMatrix
from .mesh import TET_FACES, BoundaryLabel, Mesh, MeshError

# ------------------------------------------------------------------ quadrature


@dataclass(frozen=True)
class Rule:
    """Quadrature on the reference simplex: barycentric points, weights summing to 1."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


def _conical_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    # collapsed Gauss-Jacobi product, exact to degree 2n - 1
    def gj(alpha):
        x, w = roots_jacobi(n, alpha, 0.0)
        return (1 + x) / 2, w / 2 ** (alpha + 1)

    t1, w1 = gj(2.0)
    t2, w2 = gj(1.0)
    t3, w3 = gj(0.0)
    pts, wts = [], []
    for a, wa in zip(t1, w1):
        for b, wb in zip(t2, w2):
            for c, wc in zip(t3, w3):
                x = a
                y = b * (1 - a)
                z = c * (1 - a) * (1 - b)
                pts.append([1 - x - y - z, x, y, z])
                wts.append(wa * wb * wc)
    wts = np.array(wts)
    return np.array(pts), wts / wts.sum()


@lru_cache(maxsize=None)
def tet_rule(degree: int) -> Rule:
    if degree <= 1:
        return Rule(np.full((1, 4), 0.25), np.ones(1), 1)
    if degree == 2:
        a, b = 0.5854101966249685, 0.1381966011250105
        pts = np.full((4, 4), b)
        np.fill_diagonal(pts, a)
        return Rule(pts, np.full(4, 0.25), 2)
    n = (degree + 2) // 2
    pts, wts = _conical_rule(n)
    return Rule(pts, wts, 2 * n - 1)


@lru_cache(maxsize=None)
def tri_rule() -> Rule:
    """Degree-2 three-point rule on triangles (barycentric, weights sum to 1)."""
    pts = np.full((3, 3), 1 / 6)
    np.fill_diagonal(pts, 2 / 3)
    return Rule(pts, np.full(3, 1 / 3), 2)


# ------------------------------------------------------------------- P1 space


class P1Space:
    """Continuous piecewise-linear scalar space; one dof per vertex."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        x = mesh.vertices[mesh.tets]
        J = np.transpose(x[:, 1:] - x[:, :1], (0, 2, 1))
        Jinv = np.linalg.inv(J)
        ref = np.array([[-1.0, -1.0, -1.0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
        self.grads = np.einsum("kd,edj->ekj", ref, Jinv)
        self.volumes = mesh.volumes
        self.grads.setflags(write=False)

    @property
    def ndofs(self) -> int:
        return self.mesh.n_vertices

    @cached_property
    def dirichlet(self) -> dict:
        return {label: self.mesh.boundary_vertices(label) for label in BoundaryLabel}

    @cached_property
    def boundary_dofs(self) -> np.ndarray:
        return np.unique(self.mesh.boundary_facets)

    @cached_property
    def interior_dofs(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.ndofs), self.boundary_dofs)

    def quad_points(self, rule: Rule) -> np.ndarray:
        return np.einsum("qk,ekd->eqd", rule.points, self.mesh.vertices[self.mesh.tets])

    def eval_at_quad(self, values, rule: Rule) -> np.ndarray:
        """Interpolate a nodal field to quadrature points, shape (n_tets, nq)."""
        return np.asarray(values, dtype=float)[self.mesh.tets] @ rule.points.T

    def coefficient(self, coeff, rule: Rule) -> np.ndarray:
        ne, nq = self.mesh.n_tets, len(rule.weights)
        if callable(coeff):
            pts = self.quad_points(rule)
            return np.asarray(coeff(pts.reshape(-1, 3)), dtype=float).reshape(ne, nq)
        c = np.asarray(coeff, dtype=float)
        if c.ndim == 0:
            return np.full((ne, nq), float(c))
        if c.shape == (self.ndofs,):
            return self.eval_at_quad(c, rule)
        if c.shape == (ne,):
            return np.repeat(c[:, None], nq, axis=1)
        if c.shape == (ne, nq):
            return c
        raise ValueError(f"cannot interpret coefficient of shape {c.shape}")

    def velocity(self, velocity, rule: Rule) -> np.ndarray:
        """Velocity at quadrature points, shape (n_tets, nq, 3)."""
        ne, nq = self.mesh.n_tets, len(rule.weights)
        if velocity is None:
            return np.zeros((ne, nq, 3))
        if hasattr(velocity, "at_quadrature"):
            return velocity.at_quadrature(rule)
        if callable(velocity):
            pts = self.quad_points(rule)
            return np.asarray(velocity(pts.reshape(-1, 3)), dtype=float).reshape(ne, nq, 3)
        v = np.asarray(velocity, dtype=float)
        if v.shape == (3,):
            return np.broadcast_to(v, (ne, nq, 3)).copy()
        if v.shape == (ne, 3):
            return np.repeat(v[:, None, :], nq, axis=1)
        if v.shape == (ne, nq, 3):
            return v
        raise ValueError(f"cannot interpret velocity of shape {v.shape}")

    def _scatter(self, local, symmetric=False, spd=False) -> SparseMatrix:
        t = self.mesh.tets
        rows = np.repeat(t, 4, axis=1)
        cols = np.tile(t, (1, 4))
        return SparseMatrix.from_coo(rows, cols, local.reshape(len(t), 16),
                                     (self.ndofs, self.ndofs), symmetric, spd)

    def scatter_vector(self, local) -> np.ndarray:
        return np.bincount(self.mesh.tets.ravel(), weights=np.ravel(local), minlength=self.ndofs)


def assemble_mass(space: P1Space, coeff=1.0, degree: int = 2, lumped: bool = False) -> SparseMatrix:
    """Coefficient-weighted L2 Gram matrix of the P1 basis."""
    rule = tet_rule(degree)
    c = space.coefficient(coeff, rule)
    phi = rule.points
    local = np.einsum("q,eq,qi,qj->eij", rule.weights, c, phi, phi) * space.volumes[:, None, None]
    if lumped:
        diag = space.scatter_vector(local.sum(axis=2))
        n = space.ndofs
        idx = np.arange(n)
        return SparseMatrix.from_coo(idx, idx, diag, (n, n), True, bool(np.all(diag > 0)))
    return space._scatter(local, symmetric=True, spd=bool(np.all(c > 0)))


def assemble_stiffness(space: P1Space, coeff=1.0) -> SparseMatrix:
    """Gram matrix of basis gradients; ``coeff`` scalar or per-tet."""
    c = np.asarray(coeff, dtype=float)
    if c.ndim == 0:
        c = np.full(space.mesh.n_tets, float(c))
    if np.any(c < 0):
        raise ValueError("stiffness coefficient must be nonnegative")
    local = np.einsum("eid,ejd->eij", space.grads, space.grads) * (c * space.volumes)[:, None, None]
    return space._scatter(local, symmetric=True)


def assemble_advection(space: P1Space, velocity, coeff=1.0, degree: int = 2) -> SparseMatrix:
    """Matrix of  (test i, trial j) -> int c (u . grad phi_j) phi_i."""
    rule = tet_rule(degree)
    u = space.velocity(velocity, rule)
    c = space.coefficient(coeff, rule)
    ug = np.einsum("eqd,ejd->eqj", u, space.grads)
    local = np.einsum("q,eq,qi,eqj->eij", rule.weights, c, rule.points, ug) * space.volumes[:, None, None]
    return space._scatter(local)


def assemble_streamline_mass(space: P1Space, velocity, coeff=1.0, degree: int = 2) -> SparseMatrix:
    """Matrix of  (i, j) -> int c phi_j (u . grad phi_i)  (SUPG-weighted mass)."""
    rule = tet_rule(degree)
    u = space.velocity(velocity, rule)
    c = space.coefficient(coeff, rule)
    ug = np.einsum("eqd,eid->eqi", u, space.grads)
    local = np.einsum("q,eq,eqi,qj->eij", rule.weights, c, ug, rule.points) * space.volumes[:, None, None]
    return space._scatter(local)


def assemble_streamline_diffusion(space: P1Space, velocity, degree: int = 2) -> SparseMatrix:
    """Matrix of  (i, j) -> int (u . grad phi_j)(u . grad phi_i)."""
    rule = tet_rule(degree)
    u = space.velocity(velocity, rule)
    ug = np.einsum("eqd,eid->eqi", u, space.grads)
    local = np.einsum("q,eqi,eqj->eij", rule.weights, ug, ug) * space.volumes[:, None, None]
    return space._scatter(local, symmetric=True)


def load_vector(space: P1Space, f, degree: int = 2) -> np.ndarray:
    """int f phi_i for f scalar, nodal, per-tet, or callable."""
    rule = tet_rule(degree)
    c = space.coefficient(f, rule)
    local = np.einsum("q,eq,qi->ei", rule.weights, c, rule.points) * space.volumes[:, None]
    return space.scatter_vector(local)


def interpolate(space: P1Space, func) -> np.ndarray:
    if callable(func):
        return np.asarray(func(space.mesh.vertices), dtype=float).reshape(space.ndofs)
    return np.full(space.ndofs, float(func))


def integrate_field(space: P1Space, values) -> float:
    """Exact integral of a P1 field."""
    v = np.asarray(values, dtype=float)[space.mesh.tets]
    return float(np.sum(v.mean(axis=1) * space.volumes))


def lumped_weights(space: P1Space) -> np.ndarray:
    """Row sums of the P1 mass matrix (nodal control volumes)."""
    return space.scatter_vector(np.repeat(space.volumes[:, None] / 4, 4, axis=1))


def l2_error(space: P1Space, values, exact, degree: int = 4) -> float:
    rule = tet_rule(degree)
    uh = space.eval_at_quad(values, rule)
    ex = space.coefficient(exact, rule)
    return float(np.sqrt(np.sum(rule.weights * (uh - ex) ** 2 * space.volumes[:, None])))


def l2_norm(space: P1Space, values, degree: int = 2) -> float:
    rule = tet_rule(degree)
    uh = space.coefficient(values, rule)
    return float(np.sqrt(np.sum(rule.weights * uh**2 * space.volumes[:, None])))


# ---------------------------------------------------------------- RT0 x P0


class RT0P0Space:
    """Lowest-order Raviart-Thomas velocity with piecewise-constant pressure.

    A velocity dof is the total flux through a facet along its global normal,
    which points from the lower to the higher tet id (outward on the
    boundary). Local basis on tet K for the face opposite vertex k is
    ``sign * (x - x_k) / (3 |K|)``.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        nt = mesh.n_tets
        faces = mesh.tets[:, TET_FACES].reshape(-1, 3)
        keys = np.sort(faces, axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.ravel()
        self.facets = uniq
        self.tet_facets = inv.reshape(nt, 4)
        owner = np.repeat(np.arange(nt), 4)
        first = np.full(len(uniq), nt, dtype=np.int64)
        np.minimum.at(first, inv, owner)
        self.signs = np.where(owner == first[inv], 1.0, -1.0).reshape(nt, 4)
        counts = np.bincount(inv, minlength=len(uniq))
        self.boundary = counts == 1
        self.first_tet = first
        self.volumes = mesh.volumes
        for a in (self.facets, self.tet_facets, self.signs, self.boundary):
            a.setflags(write=False)

    @property
    def n_velocity(self) -> int:
        return len(self.facets)

    @property
    def n_pressure(self) -> int:
        return self.mesh.n_tets

    @cached_property
    def free_dofs(self) -> np.ndarray:
        return np.nonzero(~self.boundary)[0]

    @cached_property
    def facet_normals(self) -> np.ndarray:
        """Unit normals along the global orientation, and facet areas."""
        v = self.mesh.vertices
        a, b, c = (v[self.facets[:, i]] for i in range(3))
        n = np.cross(b - a, c - a)
        area = 0.5 * np.linalg.norm(n, axis=1)
        n = n / (2 * area[:, None])
        # orient outward from the first tet
        K = self.first_tet
        centroid = v[self.mesh.tets[K]].mean(axis=1)
        flip = np.einsum("ij,ij->i", centroid - a, n) > 0
        n[flip] *= -1
        return n, area

    def basis_at(self, cells, points) -> np.ndarray:
        """Signed local basis values at points, shape (npts, 4, 3)."""
        x = self.mesh.vertices[self.mesh.tets[cells]]
        vals = (points[:, None, :] - x) / (3 * self.volumes[cells])[:, None, None]
        return vals * self.signs[cells][:, :, None]

    def basis_at_quad(self, rule: Rule) -> np.ndarray:
        x = self.mesh.vertices[self.mesh.tets]
        pts = np.einsum("qk,ekd->eqd", rule.points, x)
        vals = (pts[:, :, None, :] - x[:, None, :, :]) / (3 * self.volumes)[:, None, None, None]
        return vals * self.signs[:, None, :, None]

    def divergence(self, u) -> np.ndarray:
        """Elementwise divergence of an RT0 field (constant per tet)."""
        return np.sum(self.signs * np.asarray(u)[self.tet_facets], axis=1) / self.volumes

    def evaluate(self, u, cells, points) -> np.ndarray:
        phi = self.basis_at(cells, points)
        return np.einsum("pkd,pk->pd", phi, np.asarray(u)[self.tet_facets[cells]])

    def at_quadrature(self, u, rule: Rule) -> np.ndarray:
        phi = self.basis_at_quad(rule)
        return np.einsum("eqkd,ek->eqd", phi, np.asarray(u)[self.tet_facets])

    def interpolate(self, field) -> np.ndarray:
        """Facet fluxes of a vector field (constant vector or callable)."""
        n, area = self.facet_normals
        rule = tri_rule()
        v = self.mesh.vertices[self.facets]
        pts = np.einsum("qk,fkd->fqd", rule.points, v)
        if callable(field):
            vals = np.asarray(field(pts.reshape(-1, 3)), dtype=float).reshape(pts.shape)
        else:
            vals = np.broadcast_to(np.asarray(field, dtype=float), pts.shape)
        return np.einsum("q,fqd,fd->f", rule.weights, vals, n) * area

    def mass_matrix(self, degree: int = 2) -> SparseMatrix:
        rule = tet_rule(degree)
        phi = self.basis_at_quad(rule)
        local = np.einsum("q,eqid,eqjd->eij", rule.weights, phi, phi) * self.volumes[:, None, None]
        return self._scatter_uu(local, symmetric=True, spd=True)

    def curl_matrix(self, degree: int = 1) -> SparseMatrix:
        """Elementwise  int curl(phi_i) . curl(phi_j).

        The RT0 basis is affine with a scalar-multiple-of-identity Jacobian,
        so its curl vanishes; the matrix is assembled anyway from the basis
        Jacobians so any change of basis is picked up.
        """
        x = self.mesh.vertices[self.mesh.tets]
        nt = len(x)
        # grad of (x - x_k)/(3|K|) is I/(3|K|) for every k
        jac = np.broadcast_to(np.eye(3), (nt, 4, 3, 3)) / (3 * self.volumes)[:, None, None, None]
        jac = jac * self.signs[:, :, None, None]
        curl = np.stack([jac[..., 2, 1] - jac[..., 1, 2],
                         jac[..., 0, 2] - jac[..., 2, 0],
                         jac[..., 1, 0] - jac[..., 0, 1]], axis=-1)
        local = np.einsum("eid,ejd->eij", curl, curl) * self.volumes[:, None, None]
        return self._scatter_uu(local, symmetric=True)

    def divergence_matrix(self) -> SparseMatrix:
        """D[K, f] = int_K div(phi_f) = sign of f in K."""
        nt = self.mesh.n_tets
        rows = np.repeat(np.arange(nt), 4)
        return SparseMatrix.from_coo(rows, self.tet_facets.ravel(), self.signs.ravel(),
                                     (nt, self.n_velocity))

    def _scatter_uu(self, local, symmetric=False, spd=False) -> SparseMatrix:
        f = self.tet_facets
        rows = np.repeat(f, 4, axis=1)
        cols = np.tile(f, (1, 4))
        n = self.n_velocity
        return SparseMatrix.from_coo(rows, cols, local.reshape(len(f), 16), (n, n), symmetric, spd)

    def l2_error_velocity(self, u, exact, degree: int = 4) -> float:
        rule = tet_rule(degree)
        uh = self.at_quadrature(u, rule)
        pts = np.einsum("qk,ekd->eqd", rule.points, self.mesh.vertices[self.mesh.tets])
        ex = np.asarray(exact(pts.reshape(-1, 3)), dtype=float).reshape(uh.shape)
        err = np.sum((uh - ex) ** 2, axis=2)
        return float(np.sqrt(np.sum(rule.weights * err * self.volumes[:, None])))

    def l2_error_pressure(self, p, exact, degree: int = 4) -> float:
        rule = tet_rule(degree)
        pts = np.einsum("qk,ekd->eqd", rule.points, self.mesh.vertices[self.mesh.tets])
        ex = np.asarray(exact(pts.reshape(-1, 3)), dtype=float).reshape(len(p), -1)
        err = (np.asarray(p)[:, None] - ex) ** 2
        return float(np.sqrt(np.sum(rule.weights * err * self.volumes[:, None])))


# ------------------------------------------------------------- line sources


@dataclass(frozen=True)
class LineSource:
    """Line density ``density`` (constant or callable of points) on a polyline.

    ``radius`` is the mollification radius; 0 keeps the exact line measure.
    """

    polyline: np.ndarray
    density: object = 1.0
    radius: float = 0.0


@dataclass(frozen=True)
class PointMasses:
    cells: np.ndarray
    bary: np.ndarray
    mass: np.ndarray

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    def points(self, mesh: Mesh) -> np.ndarray:
        return np.einsum("pk,pkd->pd", self.bary, mesh.vertices[mesh.tets[self.cells]])


def _segment_pieces(mesh: Mesh, a, b, tol=1e-12):
    """Split segment [a, b] at tet faces; return (t0, t1, cell) pieces."""
    lo = np.minimum(a, b) - 1e-9
    hi = np.maximum(a, b) + 1e-9
    x = mesh.vertices[mesh.tets]
    cand = np.nonzero(np.all(x.min(axis=1) <= hi, axis=1) & np.all(x.max(axis=1) >= lo, axis=1))[0]
    if len(cand) == 0:
        raise MeshError(f"segment {a.tolist()} -> {b.tolist()} lies outside the mesh")
    la = mesh.barycentric(cand, np.repeat(a[None], len(cand), axis=0))
    lb = mesh.barycentric(cand, np.repeat(b[None], len(cand), axis=0))
    slope = lb - la
    t_lo = np.zeros(len(cand))
    t_hi = np.ones(len(cand))
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(4):
            s, c = slope[:, k], la[:, k]
            root = -c / s
            inc = s > tol
            dec = s < -tol
            flat = ~inc & ~dec
            t_lo = np.where(inc, np.maximum(t_lo, root), t_lo)
            t_hi = np.where(dec, np.minimum(t_hi, root), t_hi)
            dead = flat & (c < -1e-10)
            t_hi = np.where(dead, -1.0, t_hi)
    live = t_hi > t_lo + tol
    cuts = np.concatenate([[0.0, 1.0], t_lo[live], t_hi[live]])
    cuts = np.unique(np.clip(cuts, 0.0, 1.0))
    keep = np.concatenate([[True], np.diff(cuts) > 1e-12])
    cuts = cuts[keep]
    if cuts[-1] < 1.0:
        cuts[-1] = 1.0
    pieces = []
    lc, lt_lo, lt_hi = cand[live], t_lo[live], t_hi[live]
    order = np.argsort(lc)
    lc, lt_lo, lt_hi = lc[order], lt_lo[order], lt_hi[order]
    for t0, t1 in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (t0 + t1)
        hit = np.nonzero((lt_lo <= mid + 1e-12) & (lt_hi >= mid - 1e-12))[0]
        if len(hit) == 0:
            p = a + mid * (b - a)
            raise MeshError(f"polyline leaves the domain near {p.tolist()}")
        pieces.append((t0, t1, int(lc[hit[0]])))
    return pieces


def line_points(mesh: Mesh, polyline, density=1.0) -> PointMasses:
    """Gauss points of the exact line measure, split at element faces."""
    polyline = np.asarray(polyline, dtype=float)
    g, gw = np.polynomial.legendre.leggauss(3)
    g, gw = (g + 1) / 2, gw / 2
    cells, pts, mass = [], [], []
    for a, b in zip(polyline[:-1], polyline[1:]):
        seg = np.linalg.norm(b - a)
        for t0, t1, cell in _segment_pieces(mesh, a, b):
            t = t0 + (t1 - t0) * g
            p = a + t[:, None] * (b - a)
            cells.append(np.full(len(g), cell))
            pts.append(p)
            mass.append(gw * (t1 - t0) * seg)
    cells = np.concatenate(cells)
    pts = np.vstack(pts)
    mass = np.concatenate(mass)
    if callable(density):
        mass = mass * np.asarray(density(pts), dtype=float)
    else:
        mass = mass * float(density)
    return PointMasses(cells, mesh.barycentric(cells, pts), mass)


@lru_cache(maxsize=8)
def _quad_tree(mesh: Mesh):
    rule = tet_rule(2)
    pts = np.einsum("qk,ekd->eqd", rule.points, mesh.vertices[mesh.tets]).reshape(-1, 3)
    w = (mesh.volumes[:, None] * rule.weights[None, :]).ravel()
    return cKDTree(pts), pts, w, rule


def line_source_points(mesh: Mesh, src: LineSource) -> PointMasses:
    """Discretize a line source into weighted points inside tets.

    With ``radius > 0`` each line point spreads its mass over volume
    quadrature points with a tent kernel ``(1 - d/r)+``, renormalized so the
    total is preserved exactly.
    """
    exact = line_points(mesh, src.polyline, src.density)
    if src.radius <= 0:
        return exact
    tree, qpts, qw, rule = _quad_tree(mesh)
    src_pts = exact.points(mesh)
    acc = np.zeros(len(qpts))
    for p, m, cell, bary in zip(src_pts, exact.mass, exact.cells, exact.bary):
        idx = np.asarray(tree.query_ball_point(p, src.radius), dtype=np.int64)
        if len(idx):
            d = np.linalg.norm(qpts[idx] - p, axis=1)
            k = np.clip(1 - d / src.radius, 0, None) * qw[idx]
            if k.sum() > 0:
                acc[idx] += m * k / k.sum()
                continue
        # radius below quadrature spacing: keep the point mass as is
        j = int(np.argmin(np.linalg.norm(qpts[cell * 4: cell * 4 + 4] - p, axis=1)))
        acc[cell * 4 + j] += m
    nz = np.nonzero(acc)[0]
    nq = len(rule.weights)
    cells = nz // nq
    return PointMasses(cells, rule.points[nz % nq], acc[nz])


def point_load(space: P1Space, pm: PointMasses, streamline=None) -> np.ndarray:
    """P1 load  sum_p m_p (phi_i(x_p) + tau u . grad phi_i).

    ``streamline`` is an optional ``(tau, u)`` with ``u`` a constant vector.
    """
    w = pm.bary * pm.mass[:, None]
    if streamline is not None:
        tau, u = streamline
        ug = np.einsum("d,pid->pi", np.asarray(u, dtype=float), space.grads[pm.cells])
        w = w + tau * ug * pm.mass[:, None]
    return np.bincount(space.mesh.tets[pm.cells].ravel(), weights=w.ravel(), minlength=space.ndofs)


def line_source_load(space: P1Space, src: LineSource, streamline=None) -> np.ndarray:
    return point_load(space, line_source_points(space.mesh, src), streamline)


def cell_load(mesh: Mesh, pm: PointMasses) -> np.ndarray:
    """Per-tet integrals of a discretized source (P0 load)."""
    return np.bincount(pm.cells, weights=pm.mass, minlength=mesh.n_tets)


def line_integral(space: P1Space, values, polyline) -> float:
    """Exact integral of a P1 field along a polyline inside the mesh."""
    pm = line_points(space.mesh, polyline)
    v = np.asarray(values, dtype=float)[space.mesh.tets[pm.cells]]
    return float(np.sum(pm.mass * np.einsum("pk,pk->p", pm.bary, v)))
