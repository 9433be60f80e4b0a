"""Discrete Liapunov-Schmidt reduction of the perturbed Neumann pencil onto a cluster.

The reference basis ``Phi`` (``M0``-orthonormal eigenvectors at ``t = 0``) is
held fixed. For a metric ``g(t)`` and trial value ``lam`` the correction
``w_j`` solves the bordered system::

    [ K - lam M   M Phi ] [ w  ]   [ -(K - lam M) phi_j ]
    [ Phi^T M       0   ] [ mu ] = [          0         ]

and the reduced matrix ``A_ij = phi_i^T (lam M - K)(phi_j + w_j)`` is singular
exactly when ``lam`` is an eigenvalue of ``(K, M)``. ``dA/dlam`` is positive
definite, so each ordered eigenvalue of ``A(t, .)`` is increasing and crosses
zero once per root.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .errors import BorderedSolveError, WindowError
from .fem import assemble_pencil
from .metric import metric_at_t

__all__ = ["Reduction", "ReducedMatrix", "LiapunovSchmidt"]


@dataclass(frozen=True, eq=False)
class ReducedMatrix:
    matrix: np.ndarray  # symmetrized
    asymmetry: float  # ||A - A^T||_F / ||A||_F before symmetrization


class Reduction:
    """Bordered solves and the reduced matrix for one assembled pencil ``(K, M)``."""

    def __init__(self, K, M, Phi, lam0):
        self.K = sp.csc_matrix(K)
        self.M = sp.csc_matrix(M)
        self.Phi = np.asarray(Phi, dtype=float)
        self.lam0 = float(lam0)
        self.MPhi = self.M @ self.Phi
        self.m = self.Phi.shape[1]

    def _factor(self, lam):
        B = self.K - lam * self.M
        C = sp.csc_matrix(self.MPhi)
        big = sp.bmat([[B, C], [C.T, None]], format="csc")
        return spla.splu(big)

    def complement_solve(self, lam, j=None):
        """Corrections ``w_j`` (all ``j`` when ``j`` is None) with ``Phi^T M w_j = 0``."""
        n = self.K.shape[0]
        cols = range(self.m) if j is None else [j]
        rhs = np.zeros((n + self.m, len(cols)))
        B = self.K - lam * self.M
        rhs[:n] = -(B @ self.Phi[:, list(cols)])
        shift = 0.0
        for attempt in range(2):
            try:
                lu = self._factor(lam + shift)
                break
            except RuntimeError as exc:
                if attempt == 1:
                    raise BorderedSolveError(f"bordered system singular at lam={lam!r}: {exc}") from exc
                shift = 1e-10 * max(1.0, abs(lam))
        sol = lu.solve(rhs)
        W = sol[:n]
        return W[:, 0] if j is not None else W

    def complement_residual(self, lam, W):
        """``max_j ||(I - P)(K - lam M)(phi_j + w_j)||`` with ``P = M Phi (Phi^T M Phi)^{-1} Phi^T``."""
        R = (self.K - lam * self.M) @ (self.Phi + W)
        G = self.Phi.T @ self.MPhi
        R = R - self.MPhi @ np.linalg.solve(G, self.Phi.T @ R)
        return float(np.max(np.linalg.norm(R, axis=0)))

    def reduced_matrix(self, lam):
        W = self.complement_solve(lam)
        A = self.Phi.T @ ((lam * self.M - self.K) @ (self.Phi + W))
        norm = np.linalg.norm(A)
        asym = np.linalg.norm(A - A.T) / norm if norm > 0 else 0.0
        return ReducedMatrix(0.5 * (A + A.T), float(asym))

    def reduced_eigenvalues(self, lam):
        return np.linalg.eigvalsh(self.reduced_matrix(lam).matrix)

    def det_roots(self, window, xtol=1e-13):
        """All ``m`` roots of ``det A(lam) = 0`` inside ``window = (lo, hi)``, ascending.

        The k-th largest eigenvalue of ``A`` vanishes at the k-th smallest root;
        each is bracketed at the window ends and refined with Brent's method.
        """
        lo, hi = window
        a_lo = self.reduced_eigenvalues(lo)
        a_hi = self.reduced_eigenvalues(hi)
        crossing = (a_lo < 0) & (a_hi > 0)
        count = int(np.sum(crossing))
        if count != self.m or not np.all(crossing):
            raise WindowError(
                f"found {count} sign changes of eigenvalues of A in ({lo:.10g}, {hi:.10g}), expected {self.m}"
            )
        roots = []
        for k in range(self.m):
            f = lambda lam, k=k: self.reduced_eigenvalues(lam)[k]
            roots.append(brentq(f, lo, hi, xtol=xtol * max(1.0, abs(hi)), rtol=4 * np.finfo(float).eps))
        return sorted(roots)


class LiapunovSchmidt:
    """Reduction along ``g(t) = g0 + t T`` around a cluster computed at ``t = 0``."""

    def __init__(self, mesh, g0, T, cluster):
        self.mesh = mesh
        self.g0 = g0
        self.T = T
        self.cluster = cluster
        self.lam0 = cluster.mean
        self._pencils = {}

    def pencil(self, t):
        t = float(t)
        if t not in self._pencils:
            g = self.g0 if t == 0 else metric_at_t(self.g0, self.T, t)
            self._pencils[t] = assemble_pencil(self.mesh, g)
        return self._pencils[t]

    def reduction(self, t):
        K, M = self.pencil(t)
        return Reduction(K, M, self.cluster.vectors, self.lam0)

    def complement_solve(self, t, lam, j):
        return self.reduction(t).complement_solve(lam, j)

    def reduced_matrix(self, t, lam):
        return self.reduction(t).reduced_matrix(lam)

    def det_roots(self, t, window):
        """Roots in ``(lam0 - window, lam0 + window)``; ``window`` is the half-width."""
        return self.reduction(t).det_roots((self.lam0 - window, self.lam0 + window))

    def dA_dt(self, lam=None, step=1e-5):
        """Central difference of ``A(., lam)`` at ``t = 0``."""
        lam = self.lam0 if lam is None else lam
        plus = self.reduced_matrix(step, lam).matrix
        minus = self.reduced_matrix(-step, lam).matrix
        return (plus - minus) / (2 * step)

    def dA_dlam(self, t=0.0, lam=None, step=1e-6):
        lam = self.lam0 if lam is None else lam
        red = self.reduction(t)
        h = step * max(1.0, abs(lam))
        return (red.reduced_matrix(lam + h).matrix - red.reduced_matrix(lam - h).matrix) / (2 * h)
