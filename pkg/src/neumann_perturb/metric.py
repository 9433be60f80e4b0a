"""Per-vertex metric and symmetric-tensor fields plus the pointwise (0,2)-tensor algebra.

A symmetric 2x2 tensor is stored as three components ``(c11, c12, c22)``.
Pointwise helpers (:func:`inner02`, :func:`sharp`, :func:`volume_density`)
take full ``(..., 2, 2)`` matrices and broadcast over leading axes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SPDError, ValidationError

__all__ = [
    "MetricField",
    "SymTensorField",
    "ScalarField",
    "to_matrix",
    "from_matrix",
    "metric_at_t",
    "inner02",
    "trace_h",
    "sharp",
    "volume_density",
    "TrigTensor",
    "random_perturbation",
    "RHO_PRESETS",
    "analytic_metric",
    "metric_from_descriptor",
    "load_metric_descriptor",
    "field_to_csv",
]


def to_matrix(c):
    """``(..., 3)`` components to ``(..., 2, 2)`` symmetric matrices."""
    c = np.asarray(c, dtype=float)
    m = np.empty(c.shape[:-1] + (2, 2))
    m[..., 0, 0] = c[..., 0]
    m[..., 0, 1] = m[..., 1, 0] = c[..., 1]
    m[..., 1, 1] = c[..., 2]
    return m


def from_matrix(m):
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 0, 0], 0.5 * (m[..., 0, 1] + m[..., 1, 0]), m[..., 1, 1]], axis=-1)


def _as_components(values, n=None):
    values = np.asarray(values, dtype=float)
    if values.shape[-2:] == (2, 2):
        values = from_matrix(values)
    if values.ndim == 1 and values.shape == (3,) and n is not None:
        values = np.tile(values, (n, 1))
    return values.reshape(-1, 3)


class _TensorField:
    def __init__(self, values):
        v = _as_components(values).copy()
        v.setflags(write=False)
        self.values = v

    def __len__(self):
        return len(self.values)

    def matrices(self):
        return to_matrix(self.values)

    def interpolate(self, triangles, bary):
        """Barycentric interpolation: returns ``(n_tri, n_points, 2, 2)``."""
        corner = self.values[np.asarray(triangles)]  # (F, 3, 3)
        return to_matrix(np.einsum("qk,fkc->fqc", np.asarray(bary, float), corner))

    def __eq__(self, other):
        return type(self) is type(other) and np.array_equal(self.values, other.values)

    __hash__ = None


class SymTensorField(_TensorField):
    """Symmetric (0,2)-tensor per vertex, e.g. a metric velocity."""

    def __init__(self, values):
        super().__init__(values)
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("tensor field has non-finite entries")

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, 3)))

    @classmethod
    def constant(cls, n, c11, c12, c22):
        return cls(np.tile([c11, c12, c22], (n, 1)))

    @classmethod
    def from_function(cls, mesh, fn):
        """Sample ``fn(x, y) -> (..., 2, 2)`` at the mesh vertices."""
        x, y = mesh.vertices.T
        return cls(from_matrix(fn(x, y)))

    def __add__(self, other):
        return SymTensorField(self.values + other.values)

    def __sub__(self, other):
        return SymTensorField(self.values - other.values)

    def __mul__(self, s):
        return SymTensorField(float(s) * self.values)

    __rmul__ = __mul__

    def __neg__(self):
        return SymTensorField(-self.values)


class MetricField(SymTensorField):
    """Riemannian metric per vertex; positive definiteness is checked vertex by vertex."""

    def __init__(self, values, t=None):
        super().__init__(values)
        g11, g12, g22 = self.values.T
        bad = np.flatnonzero(~((g11 > 0) & (g11 * g22 - g12 * g12 > 0)))
        if len(bad):
            k = int(bad[0])
            where = f"vertex {k}" + (f" at t={t!r}" if t is not None else "")
            raise SPDError(
                f"metric not positive definite at {where}: "
                f"g11={g11[k]:.6g}, det={g11[k] * g22[k] - g12[k] ** 2:.6g}"
            )

    @classmethod
    def identity(cls, n):
        return cls(np.tile([1.0, 0.0, 1.0], (n, 1)))

    @classmethod
    def from_function(cls, mesh, fn):
        x, y = mesh.vertices.T
        return cls(from_matrix(fn(x, y)))

    def scaled(self, s):
        return MetricField(float(s) * self.values)


@dataclass(frozen=True, eq=False)
class ScalarField:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise ValidationError("scalar field has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return len(self.values)


def metric_at_t(g0, T, t):
    """The metric ``g0 + t T``; raises :class:`SPDError` naming the vertex and ``t``."""
    return MetricField(g0.values + t * T.values, t=t)


def inner02(T, S, g):
    """Tensor inner product ``g^{ik} g^{jl} T_ij S_kl`` of two (0,2)-tensors."""
    gi = np.linalg.inv(np.asarray(g, dtype=float))
    return np.einsum("...ik,...jl,...ij,...kl->...", gi, gi, np.asarray(T, float), np.asarray(S, float))


def trace_h(H, g):
    """Per-vertex trace ``h = g^{ij} H_ij``."""
    if len(H) != len(g):
        raise ValidationError(f"field sizes differ: {len(H)} vs {len(g)}")
    gm = g.matrices()
    return ScalarField(np.einsum("...ij,...ij->...", np.linalg.inv(gm), H.matrices()))


def sharp(df, g):
    """Raise the index of a covector: the vector ``v`` with ``g v = df``."""
    return np.linalg.solve(np.asarray(g, float), np.asarray(df, float)[..., None])[..., 0]


def volume_density(g):
    """``sqrt(det g)``, the Riemannian area density in chart coordinates."""
    return np.sqrt(np.linalg.det(np.asarray(g, float)))


class TrigTensor:
    """Smooth symmetric tensor built from a truncated cosine series with random phases.

    Each component is the average of ``(cap+1)^2`` terms
    ``c * cos(pi*kx*x + a) * cos(pi*ky*y + b)`` with ``c`` uniform in
    ``[-amplitude, amplitude]``, so every entry is bounded by ``amplitude``.
    """

    def __init__(self, seed, amplitude=1.0, frequency_cap=2):
        if amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        rng = np.random.default_rng(seed)
        k = np.arange(frequency_cap + 1)
        self.kx, self.ky = (a.ravel() for a in np.meshgrid(k, k, indexing="ij"))
        nterms = len(self.kx)
        self.coef = rng.uniform(-amplitude, amplitude, size=(3, nterms)) / nterms
        self.phase_x = rng.uniform(0, 2 * np.pi, size=(3, nterms))
        self.phase_y = rng.uniform(0, 2 * np.pi, size=(3, nterms))

    def components(self, x, y):
        x = np.asarray(x, float)[..., None, None]
        y = np.asarray(y, float)[..., None, None]
        terms = (
            self.coef
            * np.cos(np.pi * self.kx * x + self.phase_x)
            * np.cos(np.pi * self.ky * y + self.phase_y)
        )
        return terms.sum(axis=-1)

    def __call__(self, x, y):
        return to_matrix(self.components(x, y))


def random_perturbation(mesh, seed, amplitude=1.0, frequency_cap=2):
    """Seeded smooth perturbation tensor sampled at the mesh vertices."""
    if amplitude == 0:
        return SymTensorField.zeros(mesh.n_vertices)
    x, y = mesh.vertices.T
    return SymTensorField(TrigTensor(seed, amplitude, frequency_cap).components(x, y))


RHO_PRESETS = {
    "zero": lambda x, y, p: 0.0 * x,
    "constant": lambda x, y, p: p.get("c", 0.0) + 0.0 * x,
    "linear_x": lambda x, y, p: p.get("c", 1.0) * x,
    "gaussian": lambda x, y, p: p.get("amp", 0.5)
    * np.exp(-((x - p.get("x0", 0.5)) ** 2 + (y - p.get("y0", 0.5)) ** 2) / p.get("width", 0.1)),
    "cosine": lambda x, y, p: p.get("amp", 0.3) * np.cos(np.pi * x) * np.cos(np.pi * y),
}


def analytic_metric(desc):
    """Turn a JSON-style descriptor into an evaluator ``(x, y) -> (..., 2, 2)``.

    Supported descriptors::

        {"type": "identity"}
        {"type": "diag", "a": 4, "b": 9}
        {"type": "conformal", "rho": "gaussian", "params": {"amp": 0.5}}
    """
    kind = desc.get("type")
    if kind == "identity":
        return lambda x, y: to_matrix(np.stack(np.broadcast_arrays(1.0 + 0 * x, 0 * x, 1.0 + 0 * y), -1))
    if kind == "diag":
        try:
            a, b = float(desc["a"]), float(desc["b"])
        except KeyError as exc:
            raise ValidationError(f"diag metric needs field {exc.args[0]!r}") from None
        return lambda x, y: to_matrix(np.stack(np.broadcast_arrays(a + 0 * x, 0 * x, b + 0 * y), -1))
    if kind == "conformal":
        name = desc.get("rho")
        if name not in RHO_PRESETS:
            raise ValidationError(f"unknown conformal preset {name!r}; known: {sorted(RHO_PRESETS)}")
        rho, params = RHO_PRESETS[name], dict(desc.get("params", {}))

        def fn(x, y):
            e = np.exp(rho(np.asarray(x, float), np.asarray(y, float), params))
            return to_matrix(np.stack([e, 0 * e, e], -1))

        return fn
    raise ValidationError(f"unknown metric type {kind!r}")


def metric_from_descriptor(desc, mesh):
    return MetricField.from_function(mesh, analytic_metric(desc))


def load_metric_descriptor(path):
    return json.loads(Path(path).read_text())


def field_to_csv(field, path):
    """Write ``vertex,c11,c12,c22`` (tensor fields) or ``vertex,value`` (scalar fields)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if isinstance(field, ScalarField):
            w.writerow(["vertex", "value"])
            w.writerows([k, repr(v)] for k, v in enumerate(field.values.tolist()))
        else:
            w.writerow(["vertex", "c11", "c12", "c22"])
            w.writerows([k, repr(a), repr(b), repr(c)] for k, (a, b, c) in enumerate(field.values.tolist()))
