"""Triangulated planar parameter domains (square, disk, annulus) and their text format.

Triangles are stored counterclockwise in chart coordinates. Boundary edges are
directed pairs ``(a, b)`` taken in the orientation of their unique incident
triangle, so the domain lies to the left and the outward side to the right.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MeshParseError, MeshValidationError

__all__ = [
    "Mesh",
    "generate_square",
    "generate_disk",
    "generate_annulus",
    "save_mesh",
    "load_mesh",
    "validate_mesh",
]


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices, float).reshape(-1, 2))
        object.__setattr__(self, "triangles", _frozen(self.triangles, np.int64).reshape(-1, 3))
        object.__setattr__(
            self, "boundary_edges", _frozen(self.boundary_edges, np.int64).reshape(-1, 2)
        )

    @classmethod
    def from_triangles(cls, vertices, triangles, reorient=False):
        """Build a mesh, deriving the boundary from the triangle list."""
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.array(triangles, dtype=np.int64)
        if reorient:
            triangles = _reoriented(vertices, triangles)
        mesh = cls(vertices, triangles, _boundary_from_triangles(triangles))
        validate_mesh(mesh)
        return mesh

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def signed_areas(self):
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def area(self):
        return float(np.sum(self.signed_areas()))

    def edges(self):
        """Unique undirected edges as sorted index pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def euler_characteristic(self):
        return self.n_vertices - len(self.edges()) + self.n_triangles

    def boundary_vertices(self):
        return np.unique(self.boundary_edges)

    def boundary_loops(self):
        """Split the directed boundary edges into closed vertex loops."""
        succ = {int(a): int(b) for a, b in self.boundary_edges}
        loops = []
        seen = set()
        for start in sorted(succ):
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            v = succ[start]
            while v != start:
                loop.append(v)
                seen.add(v)
                v = succ[v]
            loops.append(loop)
        return loops

    def permuted(self, perm):
        """Renumber vertices: new vertex ``k`` is old vertex ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return Mesh(self.vertices[perm], inv[self.triangles], inv[self.boundary_edges])

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.boundary_edges, other.boundary_edges)
        )

    __hash__ = None


def _directed_edges(triangles):
    t = np.asarray(triangles)
    return np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])


def _boundary_from_triangles(triangles):
    directed = _directed_edges(triangles)
    counts = Counter(tuple(sorted(e)) for e in directed.tolist())
    return np.array(
        [e for e in directed.tolist() if counts[tuple(sorted(e))] == 1], dtype=np.int64
    ).reshape(-1, 2)


def _reoriented(vertices, triangles):
    p = vertices[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    cw = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] < 0
    out = triangles.copy()
    out[cw] = out[cw][:, [0, 2, 1]]
    return out


def validate_mesh(mesh):
    """Check every structural invariant; raise :class:`MeshValidationError` on the first failure."""
    v, t, b = mesh.vertices, mesh.triangles, mesh.boundary_edges
    nv = len(v)
    if nv == 0 or len(t) == 0:
        raise MeshValidationError("non-empty", "mesh needs vertices and triangles")
    if not np.all(np.isfinite(v)):
        raise MeshValidationError("finite-coordinates")
    if t.min() < 0 or t.max() >= nv or (len(b) and (b.min() < 0 or b.max() >= nv)):
        raise MeshValidationError("index-range", f"indices must lie in [0, {nv})")
    if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
        raise MeshValidationError("distinct-corners")

    areas = mesh.signed_areas()
    bad = np.flatnonzero(areas <= 0)
    if len(bad):
        raise MeshValidationError(
            "positive-orientation",
            f"triangle {int(bad[0])} has signed area {areas[bad[0]]:.3e} (clockwise or degenerate)",
        )

    directed = _directed_edges(t)
    undirected = Counter(tuple(sorted(e)) for e in directed.tolist())
    over = [e for e, c in undirected.items() if c > 2]
    if over:
        raise MeshValidationError(
            "manifold-edge", f"edge {over[0]} is shared by {undirected[over[0]]} triangles"
        )
    directed_count = Counter(map(tuple, directed.tolist()))
    dup = [e for e, c in directed_count.items() if c > 1]
    if dup:
        raise MeshValidationError(
            "consistent-orientation", f"directed edge {dup[0]} appears in two triangles"
        )

    expected = {e for e in directed_count if undirected[tuple(sorted(e))] == 1}
    given = list(map(tuple, b.tolist()))
    if len(set(given)) != len(given):
        raise MeshValidationError("boundary-cover", "duplicate boundary edge")
    if {tuple(sorted(e)) for e in given} != {tuple(sorted(e)) for e in expected}:
        raise MeshValidationError(
            "boundary-cover", "boundary edges must be exactly the edges with one incident triangle"
        )
    flipped = [e for e in given if e not in expected]
    if flipped:
        raise MeshValidationError(
            "boundary-orientation",
            f"boundary edge {flipped[0]} runs against its triangle (outward side undefined)",
        )
    outdeg = Counter(e[0] for e in given)
    indeg = Counter(e[1] for e in given)
    if outdeg != indeg or any(c != 1 for c in outdeg.values()):
        raise MeshValidationError("boundary-loops", "boundary edges do not form simple closed loops")
    return mesh


def generate_square(n):
    """Unit square with ``n`` cells per side, every cell split along its (0,0)-(1,1) diagonal."""
    if int(n) != n or n < 1:
        raise ValueError(f"subdivisions must be a positive integer, got {n!r}")
    n = int(n)
    s = np.arange(n + 1) / n
    x, y = np.meshgrid(s, s)
    vertices = np.column_stack([x.ravel(), y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (i + (n + 1) * j).ravel()
    v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])
    triangles[1::2] = np.column_stack([v00, v11, v01])
    return Mesh.from_triangles(vertices, triangles)


def _ring_start(k):
    # index of the first vertex on ring k (center is vertex 0, ring k holds 6k vertices)
    return 1 + 3 * k * (k - 1)


def generate_disk(rings):
    """Unit disk from concentric rings; ring ``k`` carries ``6k`` equally spaced vertices.

    The connectivity is built sector by sector with integer arithmetic, so the
    triangulation is exactly invariant under rotation by 60 degrees.
    """
    if int(rings) != rings or rings < 1:
        raise ValueError(f"rings must be a positive integer, got {rings!r}")
    rings = int(rings)
    pts = [(0.0, 0.0)]
    for k in range(1, rings + 1):
        theta = 2 * np.pi * np.arange(6 * k) / (6 * k)
        r = k / rings
        pts.extend(zip(r * np.cos(theta), r * np.sin(theta)))
    tris = []
    for j in range(6):
        tris.append((0, 1 + j, 1 + (j + 1) % 6))
    for k in range(2, rings + 1):
        inner0, outer0 = _ring_start(k - 1), _ring_start(k)
        ni, no = 6 * (k - 1), 6 * k
        for s in range(6):
            p, q = 0, 0  # steps taken on inner (k-1 per sector) and outer (k per sector)
            while p < k - 1 or q < k:
                a = inner0 + (s * (k - 1) + p) % ni
                c = outer0 + (s * k + q) % no
                # advance on the ring whose next vertex comes first in angle
                if q < k and (p == k - 1 or (q + 1) * (k - 1) <= (p + 1) * k):
                    tris.append((a, c, outer0 + (s * k + q + 1) % no))
                    q += 1
                else:
                    tris.append((a, c, inner0 + (s * (k - 1) + p + 1) % ni))
                    p += 1
    return Mesh.from_triangles(np.array(pts), np.array(tris))


def generate_annulus(rings, sectors=None, inner_radius=0.5):
    """Annulus ``inner_radius <= r <= 1`` on a polar grid of ``rings`` layers."""
    if int(rings) != rings or rings < 1:
        raise ValueError(f"rings must be a positive integer, got {rings!r}")
    if not 0 < inner_radius < 1:
        raise ValueError("inner_radius must lie in (0, 1)")
    rings = int(rings)
    if sectors is None:
        sectors = max(8, int(round(2 * np.pi / ((1 - inner_radius) / rings))))
    radii = np.linspace(inner_radius, 1.0, rings + 1)
    theta = 2 * np.pi * np.arange(sectors) / sectors
    r, th = np.meshgrid(radii, theta, indexing="ij")
    vertices = np.column_stack([(r * np.cos(th)).ravel(), (r * np.sin(th)).ravel()])
    tris = []
    for k in range(rings):
        for s in range(sectors):
            a = k * sectors + s
            b = k * sectors + (s + 1) % sectors
            c, d = a + sectors, b + sectors
            tris.append((a, d, b))
            tris.append((a, c, d))
    return Mesh.from_triangles(vertices, np.array(tris))


def save_mesh(mesh, path):
    """Write the plain-text format: ``vertices``, ``triangles`` and ``boundary`` sections."""
    lines = ["# triangulated chart domain"]
    lines.append(f"vertices {mesh.n_vertices}")
    lines.extend(f"{x!r} {y!r}" for x, y in mesh.vertices.tolist())
    lines.append(f"triangles {mesh.n_triangles}")
    lines.extend(f"{a} {b} {c}" for a, b, c in mesh.triangles.tolist())
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    lines.extend(f"{a} {b}" for a, b in mesh.boundary_edges.tolist())
    Path(path).write_text("\n".join(lines) + "\n")


_SECTIONS = {"vertices": (2, float), "triangles": (3, int), "boundary": (2, int)}


def load_mesh(path, reorient=False):
    """Parse a mesh file and validate it.

    With ``reorient=True`` clockwise triangles are flipped and boundary
    directions re-derived instead of being rejected.
    """
    data = {}
    section = None
    remaining = 0
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if remaining == 0:
                if tokens[0] not in _SECTIONS:
                    raise MeshParseError(f"expected a section header, got {tokens[0]!r}", lineno)
                if tokens[0] in data:
                    raise MeshParseError(f"duplicate section {tokens[0]!r}", lineno)
                if len(tokens) != 2:
                    raise MeshParseError("section header needs a record count", lineno)
                try:
                    remaining = int(tokens[1])
                except ValueError:
                    raise MeshParseError(f"bad record count {tokens[1]!r}", lineno) from None
                if remaining < 0:
                    raise MeshParseError("negative record count", lineno)
                section = tokens[0]
                data[section] = []
                continue
            width, kind = _SECTIONS[section]
            if len(tokens) != width:
                raise MeshParseError(
                    f"{section} record needs {width} fields, got {len(tokens)}", lineno
                )
            try:
                data[section].append([kind(tok) for tok in tokens])
            except ValueError:
                raise MeshParseError(f"cannot parse {section} record {line!r}", lineno) from None
            remaining -= 1
    if remaining:
        raise MeshParseError(f"section {section!r} is truncated ({remaining} records missing)")
    missing = [s for s in _SECTIONS if s not in data]
    if missing:
        raise MeshParseError(f"missing section(s): {', '.join(missing)}")

    vertices = np.array(data["vertices"], dtype=float).reshape(-1, 2)
    triangles = np.array(data["triangles"], dtype=np.int64).reshape(-1, 3)
    boundary = np.array(data["boundary"], dtype=np.int64).reshape(-1, 2)
    if reorient:
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise MeshValidationError("index-range")
        triangles = _reoriented(vertices, triangles)
        derived = _boundary_from_triangles(triangles)
        if {tuple(sorted(e)) for e in boundary.tolist()} != {
            tuple(sorted(e)) for e in derived.tolist()
        }:
            raise MeshValidationError(
                "boundary-cover", "boundary edges must be exactly the edges with one incident triangle"
            )
        boundary = derived
    return validate_mesh(Mesh(vertices, triangles, boundary))
