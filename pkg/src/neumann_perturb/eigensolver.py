"""Dense symmetric generalized eigensolver and eigenvalue clustering.

At desk scale (N up to a few thousand) the pencil is solved densely: ``M`` is
Cholesky-factored, the problem reduced to standard symmetric form and the
lowest ``k`` eigenpairs extracted. Eigenvectors come back ``M``-orthonormal
with the largest-magnitude coefficient made positive.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import SolverError

__all__ = [
    "EigenPair",
    "EigenCluster",
    "solve_gevp",
    "solve_window",
    "cluster",
    "m_orthonormalize",
    "fix_signs",
    "spectrum_to_csv",
]

DEFAULT_CLUSTER_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class EigenPair:
    value: float
    vector: np.ndarray


@dataclass(frozen=True, eq=False)
class EigenCluster:
    """A group of nearly equal eigenvalues standing in for one multiple eigenvalue."""

    values: np.ndarray  # member eigenvalues, ascending
    vectors: np.ndarray  # N x m, M-orthonormal columns
    indices: tuple = ()  # positions in the parent spectrum
    cluster_tol: float = DEFAULT_CLUSTER_TOL
    mean: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "vectors", np.asarray(self.vectors, dtype=float).reshape(-1, len(self.values)))
        object.__setattr__(self, "mean", float(np.mean(self.values)))

    @property
    def multiplicity(self):
        return len(self.values)

    def rotated(self, Q):
        """Same eigenspace, basis ``Phi Q`` (``Q`` orthogonal)."""
        return EigenCluster(self.values, self.vectors @ Q, self.indices, self.cluster_tol)


def _dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def fix_signs(vectors):
    """Flip each column so its largest-magnitude entry is positive."""
    vectors = np.array(vectors, dtype=float)
    idx = np.argmax(np.abs(vectors), axis=0)
    s = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    s[s == 0] = 1.0
    return vectors * s


def _eigh(K, M, **subset):
    try:
        w, v = la.eigh(_dense(K), _dense(M), **subset)
    except la.LinAlgError as exc:
        raise SolverError(f"generalized eigensolve failed (mass matrix not positive definite?): {exc}") from exc
    return w, fix_signs(v)


def solve_gevp(K, M, k):
    """The ``k`` smallest eigenpairs of ``K phi = lambda M phi``, ascending."""
    n = K.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    w, v = _eigh(K, M, subset_by_index=[0, k - 1])
    return [EigenPair(float(lam), v[:, i]) for i, lam in enumerate(w)]


def solve_window(K, M, lo, hi):
    """All eigenpairs with eigenvalue in the half-open interval ``(lo, hi]``."""
    w, v = _eigh(K, M, subset_by_value=[lo, hi])
    return [EigenPair(float(lam), v[:, i]) for i, lam in enumerate(w)]


def m_orthonormalize(Phi, M):
    """Orthonormalize the columns of ``Phi`` in the ``M`` inner product (Cholesky QR, twice)."""
    Phi = np.asarray(Phi, dtype=float)
    for _ in range(2):
        G = Phi.T @ (M @ Phi)
        G = 0.5 * (G + G.T)
        try:
            L = np.linalg.cholesky(G)
        except np.linalg.LinAlgError as exc:
            raise SolverError("cluster basis is rank deficient in the M inner product") from exc
        Phi = la.solve_triangular(L, Phi.T, lower=True).T
    return Phi


def cluster(eigenpairs, cluster_tol=DEFAULT_CLUSTER_TOL, M=None):
    """Split an ascending spectrum into maximal runs with relative gaps below ``cluster_tol``.

    A gap between consecutive eigenvalues counts as small when
    ``lam[k+1] - lam[k] < cluster_tol * max(1, |lam[k]|)``. If ``M`` is given
    each cluster basis is re-orthonormalized in the ``M`` inner product.
    """
    values = np.array([p.value for p in eigenpairs])
    if np.any(np.diff(values) < 0):
        raise ValueError("eigenpairs must be sorted ascending")
    vectors = np.column_stack([p.vector for p in eigenpairs])
    groups = [[0]]
    for k in range(1, len(values)):
        if values[k] - values[k - 1] < cluster_tol * max(1.0, abs(values[k - 1])):
            groups[-1].append(k)
        else:
            groups.append([k])
    out = []
    for idx in groups:
        Phi = vectors[:, idx]
        if M is not None:
            Phi = m_orthonormalize(Phi, M)
        out.append(EigenCluster(values[idx], Phi, tuple(idx), cluster_tol))
    return out


def spectrum_to_csv(eigenpairs, clusters, path):
    """Rows ``index,eigenvalue,cluster,multiplicity``."""
    owner = {}
    for cid, c in enumerate(clusters):
        for i in c.indices:
            owner[i] = (cid, c.multiplicity)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "eigenvalue", "cluster", "multiplicity"])
        for i, p in enumerate(eigenpairs):
            cid, m = owner.get(i, (-1, 0))
            w.writerow([i, repr(p.value), cid, m])
