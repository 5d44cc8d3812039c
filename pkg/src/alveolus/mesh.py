"""Tetrahedral alveolus meshes, boundary labels and embedded pipe networks."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


class BoundaryLabel(enum.IntEnum):
    TOP = 1
    BOTTOM = 2
    LATERAL = 3


class PipeRole(enum.Enum):
    INJECTOR = "injector"
    EXTRACTOR = "extractor"


class MeshError(ValueError):
    pass


class MshParseError(MeshError):
    pass


# local facet k of a tet is the face opposite local vertex k
TET_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


def signed_volumes(vertices, tets):
    x = vertices[tets]
    e = x[:, 1:] - x[:, :1]
    return np.einsum("ij,ij->i", e[:, 0], np.cross(e[:, 1], e[:, 2])) / 6.0


def longest_edges(vertices, tets):
    x = vertices[tets]
    pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    lengths = np.stack([np.linalg.norm(x[:, a] - x[:, b], axis=1) for a, b in pairs], axis=1)
    return lengths.max(axis=1)


def boundary_faces(tets):
    """Return (faces, owner_tet, local_face) for faces that belong to one tet only."""
    nt = len(tets)
    faces = tets[:, TET_FACES].reshape(-1, 3)
    keys = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    on_boundary = counts[inverse] == 1
    idx = np.nonzero(on_boundary)[0]
    return faces[idx], idx // 4, idx % 4, nt


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming tetrahedral mesh with labeled boundary facets.

    Tets are stored positively oriented. ``boundary_facets[i]`` carries label
    ``facet_labels[i]`` and belongs to tet ``facet_owner[i]``.
    """

    vertices: np.ndarray
    tets: np.ndarray
    boundary_facets: np.ndarray
    facet_labels: np.ndarray
    element_diameters: np.ndarray
    facet_owner: np.ndarray
    volumes: np.ndarray
    _locator: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_arrays(cls, vertices, tets, facets=None, labels=None) -> "Mesh":
        """Validate, orient and label a raw (vertices, tets) pair.

        When ``facets``/``labels`` are given they must cover exactly the
        boundary of the tet complex; otherwise every boundary facet is labeled
        LATERAL and the caller is expected to run :func:`classify_boundary`.
        """
        vertices = np.array(vertices, dtype=float).reshape(-1, 3)
        tets = np.array(tets, dtype=np.int64).reshape(-1, 4).copy()
        if len(tets) == 0:
            raise MeshError("mesh has no tetrahedra")
        if tets.min() < 0 or tets.max() >= len(vertices):
            raise MeshError("tet connectivity references missing vertices")
        vol = signed_volumes(vertices, tets)
        flip = vol < 0
        tets[flip, 2], tets[flip, 3] = tets[flip, 3], tets[flip, 2].copy()
        vol = np.abs(vol)
        scale = longest_edges(vertices, tets) ** 3
        bad = np.nonzero(vol <= 1e-12 * scale)[0]
        if len(bad):
            raise MeshError(f"degenerate tetrahedra (zero volume): {bad[:10].tolist()}")

        bfaces, owner, _, _ = boundary_faces(tets)
        if facets is None:
            facets = bfaces
            labels = np.full(len(bfaces), BoundaryLabel.LATERAL, dtype=np.int64)
            facet_owner = owner
        else:
            facets = np.array(facets, dtype=np.int64).reshape(-1, 3)
            labels = np.array(labels, dtype=np.int64).ravel()
            facet_owner = _match_facets(facets, bfaces, owner)
        return cls._build(vertices, tets, facets, labels, facet_owner, vol)

    @classmethod
    def _build(cls, vertices, tets, facets, labels, owner, vol):
        diam = longest_edges(vertices, tets)
        arrays = [vertices, tets, facets, labels, diam, owner, vol]
        for a in arrays:
            a.setflags(write=False)
        return cls(*arrays)

    def with_labels(self, labels) -> "Mesh":
        labels = np.array(labels, dtype=np.int64)
        labels.setflags(write=False)
        return Mesh(self.vertices, self.tets, self.boundary_facets, labels,
                    self.element_diameters, self.facet_owner, self.volumes)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def total_volume(self) -> float:
        return float(self.volumes.sum())

    @property
    def max_diameter(self) -> float:
        return float(self.element_diameters.max())

    def facets_with(self, *labels: BoundaryLabel) -> np.ndarray:
        return self.boundary_facets[np.isin(self.facet_labels, [int(l) for l in labels])]

    def boundary_vertices(self, *labels: BoundaryLabel) -> np.ndarray:
        return np.unique(self.facets_with(*labels))

    def barycentric(self, cells, points):
        """Barycentric coordinates of ``points[i]`` with respect to tet ``cells[i]``."""
        x = self.vertices[self.tets[cells]]
        T = np.transpose(x[:, 1:] - x[:, :1], (0, 2, 1))
        lam = np.linalg.solve(T, (points - x[:, 0])[..., None])[..., 0]
        return np.column_stack([1.0 - lam.sum(axis=1), lam])

    def locate(self, points, tol: float = 1e-10):
        """Return (cells, barycentric) for each point; cell is -1 when outside."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if "tree" not in self._locator:
            centroids = self.vertices[self.tets].mean(axis=1)
            self._locator["tree"] = cKDTree(centroids)
        tree = self._locator["tree"]
        cells = np.full(len(points), -1, dtype=np.int64)
        bary = np.zeros((len(points), 4))
        k = min(24, self.n_tets)
        _, cand = tree.query(points, k=k)
        cand = np.asarray(cand).reshape(len(points), k)
        for j in range(k):
            todo = np.nonzero(cells < 0)[0]
            if len(todo) == 0:
                break
            c = cand[todo, j]
            lam = self.barycentric(c, points[todo])
            ok = lam.min(axis=1) >= -tol
            cells[todo[ok]] = c[ok]
            bary[todo[ok]] = lam[ok]
        for i in np.nonzero(cells < 0)[0]:
            for start in range(0, self.n_tets, 20000):
                c = np.arange(start, min(start + 20000, self.n_tets))
                lam = self.barycentric(c, np.repeat(points[i:i + 1], len(c), axis=0))
                hit = np.nonzero(lam.min(axis=1) >= -tol)[0]
                if len(hit):
                    cells[i] = c[hit[0]]
                    bary[i] = lam[hit[0]]
                    break
        return cells, bary

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        return self.locate(points, tol=tol)[0] >= 0


def _match_facets(facets, bfaces, owner):
    key = np.sort(facets, axis=1)
    bkey = np.sort(bfaces, axis=1)
    allkeys = np.vstack([bkey, key])
    _, inv = np.unique(allkeys, axis=0, return_inverse=True)
    inv = inv.ravel()
    binv, finv = inv[: len(bkey)], inv[len(bkey):]
    lookup = np.full(inv.max() + 1, -1, dtype=np.int64)
    lookup[binv] = np.arange(len(bkey))
    pos = lookup[finv]
    if np.any(pos < 0):
        raise MeshError(f"labeled facets not on the boundary: {facets[pos < 0][:5].tolist()}")
    if len(np.unique(pos)) != len(pos):
        raise MeshError("boundary facet labeled more than once")
    missing = np.setdiff1d(np.arange(len(bkey)), pos)
    if len(missing):
        raise MeshError(f"untagged boundary facets: {bfaces[missing][:20].tolist()}"
                        + (" ..." if len(missing) > 20 else ""))
    return owner[pos]


@dataclass(frozen=True)
class Pipe:
    polyline: np.ndarray
    role: PipeRole
    radius: float = 0.05

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.polyline, axis=0), axis=1).sum())


@dataclass(frozen=True)
class PipeNetwork:
    pipes: tuple = ()

    def of_role(self, role: PipeRole) -> list[Pipe]:
        return [p for p in self.pipes if p.role == role]

    @property
    def extractors(self) -> list[Pipe]:
        return self.of_role(PipeRole.EXTRACTOR)

    @property
    def injectors(self) -> list[Pipe]:
        return self.of_role(PipeRole.INJECTOR)

    def __len__(self):
        return len(self.pipes)


@dataclass(frozen=True)
class GeometrySpec:
    """Reverse truncated pyramid alveolus built from a sheared reference cube.

    Pipe levels are fractions of the height. Extractor and injector layers
    alternate from the bottom up.
    """

    base_side: float = 90.0
    height: float = 90.0
    wall_slope: float = math.pi / 6
    shear: tuple = (0.0, 0.0)
    extractor_levels: tuple = (0.2, 0.6)
    injector_levels: tuple = (0.4, 0.8)
    pipes_per_level: int = 10
    pipe_length: float = 25.0
    pipe_radius: float = 0.05
    target_mesh_size: float = 5.0
    divisions: tuple | None = None

    def __post_init__(self):
        if not self.base_side > 0:
            raise MeshError("base_side must be positive")
        if not self.height > 0:
            raise MeshError("height must be positive")
        if not 0 <= self.wall_slope < math.pi / 2:
            raise MeshError("wall_slope must lie in [0, pi/2)")
        if not self.target_mesh_size > 0:
            raise MeshError("target_mesh_size must be positive")
        for lv in tuple(self.extractor_levels) + tuple(self.injector_levels):
            if not 0 < lv < 1:
                raise MeshError(f"pipe level {lv} must be a fraction of the height in (0, 1)")

    @property
    def top_side(self) -> float:
        return self.base_side + 2 * self.height * math.tan(self.wall_slope)

    @property
    def volume(self) -> float:
        a, b = self.base_side**2, self.top_side**2
        return self.height / 3 * (a + b + math.sqrt(a * b))

    def side_at(self, z: float) -> float:
        return self.base_side + 2 * z * math.tan(self.wall_slope)

    def origin_at(self, z: float) -> np.ndarray:
        """Lower (x, y) corner of the horizontal cross-section at height z."""
        t = math.tan(self.wall_slope)
        return np.array([-z * t + self.shear[0] * z, -z * t + self.shear[1] * z])

    def resolve_divisions(self) -> tuple[int, int, int]:
        if self.divisions is not None:
            return tuple(int(d) for d in self.divisions)
        mean_side = 0.5 * (self.base_side + self.top_side)
        nxy = max(1, math.ceil(mean_side / self.target_mesh_size - 1e-9))
        nz = max(1, math.ceil(self.height / self.target_mesh_size - 1e-9))
        return nxy, nxy, nz


def structured_box(nx, ny, nz, lengths=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    """Vertices and Kuhn 6-tet connectivity for an axis-aligned box."""
    xs = np.linspace(0, lengths[0], nx + 1) + origin[0]
    ys = np.linspace(0, lengths[1], ny + 1) + origin[1]
    zs = np.linspace(0, lengths[2], nz + 1) + origin[2]
    Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def vid(i, j, k):
        return (k * (ny + 1) + j) * (nx + 1) + i

    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    steps = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    tets = []
    for perm in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
        a, b = np.array(steps[perm[0]]), np.array(steps[perm[1]])
        tets.append(np.column_stack([
            vid(i, j, k),
            vid(i + a[0], j + a[1], k + a[2]),
            vid(i + a[0] + b[0], j + a[1] + b[1], k + a[2] + b[2]),
            vid(i + 1, j + 1, k + 1),
        ]))
    tets = np.stack(tets, axis=1).reshape(-1, 4)
    return vertices, tets


def unit_cube_mesh(n: int, side: float = 1.0) -> Mesh:
    """Structured cube [0, side]^3 with n cells per edge, labeled by z."""
    vertices, tets = structured_box(n, n, n, (side, side, side))
    raw = Mesh.from_arrays(vertices, tets)
    return classify_boundary(raw, GeometrySpec(base_side=side, height=side, wall_slope=0.0,
                                               target_mesh_size=side / n))


def box_mesh(divisions, lengths, origin=(0.0, 0.0, 0.0)) -> Mesh:
    vertices, tets = structured_box(*divisions, lengths=lengths, origin=origin)
    raw = Mesh.from_arrays(vertices, tets)
    spec = GeometrySpec(base_side=float(lengths[0]), height=float(lengths[2]), wall_slope=0.0,
                        target_mesh_size=float(min(lengths)) / max(divisions))
    return classify_boundary(raw, spec, z_base=origin[2])


def classify_boundary(mesh_raw: Mesh, geometry: GeometrySpec, z_base: float = 0.0) -> Mesh:
    """Label boundary facets TOP/BOTTOM/LATERAL from their z coordinates."""
    tol = 1e-6 * geometry.height
    z = mesh_raw.vertices[mesh_raw.boundary_facets][:, :, 2]
    top = np.all(np.abs(z - (z_base + geometry.height)) <= tol, axis=1)
    bottom = np.all(np.abs(z - z_base) <= tol, axis=1)
    labels = np.full(len(z), int(BoundaryLabel.LATERAL), dtype=np.int64)
    labels[top] = BoundaryLabel.TOP
    labels[bottom] = BoundaryLabel.BOTTOM
    return mesh_raw.with_labels(labels)


def generate_alveolus(spec: GeometrySpec) -> tuple[Mesh, PipeNetwork]:
    """Mesh the sheared reverse pyramid and lay out the pipe grid."""
    nx, ny, nz = spec.resolve_divisions()
    ref, tets = structured_box(nx, ny, nz)
    z = ref[:, 2] * spec.height
    side = spec.base_side + 2 * z * math.tan(spec.wall_slope)
    t = math.tan(spec.wall_slope)
    x = -z * t + ref[:, 0] * side + spec.shear[0] * z
    y = -z * t + ref[:, 1] * side + spec.shear[1] * z
    vertices = np.column_stack([x, y, z])
    flipped = signed_volumes(vertices, tets) * signed_volumes(ref, tets) <= 0
    if np.any(flipped):
        raise MeshError(f"geometry produces {int(flipped.sum())} inverted elements")
    mesh = classify_boundary(Mesh.from_arrays(vertices, tets), spec)
    return mesh, layout_pipes(spec)


def layout_pipes(spec: GeometrySpec) -> PipeNetwork:
    """Horizontal straight pipes on a cartesian grid at each level.

    Extractors run along x, injectors along y. Each level holds
    ``pipes_per_level`` pipes in two columns when the count is even.
    """
    pipes = []
    n = spec.pipes_per_level
    cols = 2 if n % 2 == 0 and n > 1 else 1
    rows = n // cols
    for role, levels, axis in ((PipeRole.EXTRACTOR, spec.extractor_levels, 0),
                               (PipeRole.INJECTOR, spec.injector_levels, 1)):
        for frac in levels:
            z = frac * spec.height
            width = spec.side_at(z)
            lo = spec.origin_at(z)
            if spec.pipe_length > width / cols * (1 - 1e-9):
                raise MeshError(f"{cols} pipes of length {spec.pipe_length} m do not fit "
                                f"in a {width:.3f} m wide section at z = {z:.3f} m")
            other = 1 - axis
            for r in range(rows):
                for c in range(cols):
                    center = np.empty(2)
                    center[axis] = lo[axis] + (c + 0.5) * width / cols
                    center[other] = lo[other] + (r + 0.5) * width / rows
                    a, b = center.copy(), center.copy()
                    a[axis] -= spec.pipe_length / 2
                    b[axis] += spec.pipe_length / 2
                    poly = np.array([[a[0], a[1], z], [b[0], b[1], z]])
                    pipes.append(Pipe(poly, role, spec.pipe_radius))
    return PipeNetwork(tuple(pipes))


# ---------------------------------------------------------------- MSH 2.2 I/O

DEFAULT_TAGS = {1: BoundaryLabel.TOP, 2: BoundaryLabel.BOTTOM, 3: BoundaryLabel.LATERAL}


def write_msh(mesh: Mesh, stream, tags=None) -> None:
    """Write the mesh as ASCII MSH 2.2 (triangles carry the boundary labels)."""
    tags = tags or DEFAULT_TAGS
    to_tag = {int(label): tag for tag, label in tags.items()}
    w = stream.write
    w("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
    w("$PhysicalNames\n%d\n" % (len(tags) + 1))
    for tag, label in sorted(tags.items()):
        w('2 %d "%s"\n' % (tag, BoundaryLabel(label).name))
    w('3 100 "VOLUME"\n$EndPhysicalNames\n')
    w("$Nodes\n%d\n" % mesh.n_vertices)
    for i, (x, y, z) in enumerate(mesh.vertices.tolist(), start=1):
        w(f"{i} {x!r} {y!r} {z!r}\n")
    w("$EndNodes\n")
    nf, nt = len(mesh.boundary_facets), mesh.n_tets
    w("$Elements\n%d\n" % (nf + nt))
    eid = 1
    for tri, label in zip(mesh.boundary_facets.tolist(), mesh.facet_labels.tolist()):
        tag = to_tag[label]
        w("%d 2 2 %d %d %d %d %d\n" % (eid, tag, tag, tri[0] + 1, tri[1] + 1, tri[2] + 1))
        eid += 1
    for tet in mesh.tets.tolist():
        w("%d 4 2 100 1 %d %d %d %d\n" % (eid, tet[0] + 1, tet[1] + 1, tet[2] + 1, tet[3] + 1))
        eid += 1
    w("$EndElements\n")


def read_msh(stream, tags=None) -> Mesh:
    """Parse ASCII MSH 2.2 with tets (type 4) and tagged triangles (type 2).

    ``tags`` maps physical tags to :class:`BoundaryLabel`. Other element
    types (points, lines) are skipped.
    """
    tags = tags or DEFAULT_TAGS
    text = stream.read() if hasattr(stream, "read") else str(stream)
    lines = text.splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines):
            line = lines[pos].strip()
            pos += 1
            if line:
                return line
        raise MshParseError(f"line {pos}: unexpected end of file")

    node_index, coords = {}, []
    tris, tri_tags, tets, tet_lines = [], [], [], []
    seen_format = False
    while pos < len(lines):
        line = lines[pos].strip()
        pos += 1
        if line == "$MeshFormat":
            fields = next_line().split()
            if fields[0] != "2.2":
                raise MshParseError(f"line {pos}: unsupported MSH version {fields[0]} (need 2.2)")
            if len(fields) > 1 and fields[1] != "0":
                raise MshParseError(f"line {pos}: binary MSH files are not supported")
            seen_format = True
        elif line == "$Nodes":
            count = int(next_line())
            for _ in range(count):
                f = next_line().split()
                if len(f) < 4:
                    raise MshParseError(f"line {pos}: malformed node record")
                node_index[int(f[0])] = len(coords)
                coords.append([float(f[1]), float(f[2]), float(f[3])])
        elif line == "$Elements":
            count = int(next_line())
            for _ in range(count):
                f = [int(v) for v in next_line().split()]
                etype, ntags = f[1], f[2]
                phys = f[3] if ntags > 0 else 0
                nodes = f[3 + ntags:]
                if etype == 2:
                    tris.append(nodes[:3])
                    tri_tags.append((phys, pos))
                elif etype == 4:
                    tets.append(nodes[:4])
                    tet_lines.append((f[0], pos))
        elif line.startswith("$") and not line.startswith("$End"):
            name = line[1:]
            while pos < len(lines) and lines[pos].strip() != f"$End{name}":
                pos += 1
            pos += 1
    if not seen_format:
        raise MshParseError("line 1: missing $MeshFormat section")
    if not tets:
        raise MshParseError("no tetrahedra (type 4) found")

    def remap(conn, where):
        out = []
        for nodes, (ident, lineno) in zip(conn, where):
            try:
                out.append([node_index[n] for n in nodes])
            except KeyError as exc:
                raise MeshError(f"line {lineno}: element {ident} references unknown node "
                                f"id {exc.args[0]}") from None
        return np.array(out, dtype=np.int64).reshape(-1, len(conn[0]) if conn else 3)

    tets_arr = remap(tets, tet_lines)
    tri_arr = remap(tris, [(i + 1, ln) for i, (_, ln) in enumerate(tri_tags)]) if tris else \
        np.zeros((0, 3), dtype=np.int64)
    labels = []
    for phys, lineno in tri_tags:
        if phys not in tags:
            raise MshParseError(f"line {lineno}: triangle physical tag {phys} has no boundary label")
        labels.append(int(tags[phys]))
    return Mesh.from_arrays(np.array(coords), tets_arr, tri_arr, np.array(labels, dtype=np.int64))
