"""P1 finite-element assembly of the Laplace-Neumann pencil for a per-vertex metric.

``K`` discretizes ``-Delta_g`` (positive semidefinite, constants in the kernel)
and ``M`` the ``L^2(dM_g)`` pairing. The Neumann condition is natural: no
boundary rows are touched. Every integral uses the 3-point edge-midpoint rule
with the metric interpolated barycentrically to the midpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError

__all__ = [
    "QUAD_BARY",
    "ElementGeometry",
    "element_geometry",
    "metric_at_quadrature",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_pencil",
    "assemble_derivatives",
    "matrix_to_coo",
]

# edge-midpoint rule, exact for quadratics; equal weights area/3
QUAD_BARY = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


@dataclass(frozen=True)
class ElementGeometry:
    area: np.ndarray  # (F,)
    grads: np.ndarray  # (F, 3, 2) constant gradients of the three hat functions


def element_geometry(mesh):
    p = mesh.vertices[mesh.triangles]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)  # columns are edge vectors
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv = np.linalg.inv(jac)  # rows: gradients of barycentric coordinates 1 and 2
    grads = np.empty((len(p), 3, 2))
    grads[:, 1] = inv[:, 0]
    grads[:, 2] = inv[:, 1]
    grads[:, 0] = -grads[:, 1] - grads[:, 2]
    return ElementGeometry(0.5 * det, grads)


def metric_at_quadrature(mesh, g):
    """Metric matrices at the quadrature points, ``(F, 3, 2, 2)``, SPD-checked per element."""
    gq = g.interpolate(mesh.triangles, QUAD_BARY)
    det = gq[..., 0, 0] * gq[..., 1, 1] - gq[..., 0, 1] * gq[..., 1, 0]
    bad = np.flatnonzero(np.any((gq[..., 0, 0] <= 0) | (det <= 0), axis=1))
    if len(bad):
        raise AssemblyError(f"metric not positive definite at a quadrature point of element {int(bad[0])}")
    return gq


def _scatter(mesh, local):
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _stiffness_local(geom, coeff):
    """Element matrices ``sum_q w_q grad(psi_a)^T C_q grad(psi_b)`` for a per-point 2x2 coefficient."""
    c = (geom.area / 3.0)[:, None, None] * coeff.sum(axis=1)  # (F, 2, 2)
    return np.einsum("fai,fij,fbj->fab", geom.grads, c, geom.grads)


def _mass_local(geom, density):
    w = (geom.area / 3.0)[:, None] * density  # (F, Q)
    return np.einsum("fq,qa,qb->fab", w, QUAD_BARY, QUAD_BARY)


def assemble_stiffness(mesh, g):
    geom = element_geometry(mesh)
    gq = metric_at_quadrature(mesh, g)
    ginv = np.linalg.inv(gq)
    rho = np.sqrt(np.linalg.det(gq))
    return _scatter(mesh, _stiffness_local(geom, ginv * rho[..., None, None]))


def assemble_mass(mesh, g):
    geom = element_geometry(mesh)
    rho = np.sqrt(np.linalg.det(metric_at_quadrature(mesh, g)))
    return _scatter(mesh, _mass_local(geom, rho))


def assemble_pencil(mesh, g):
    return assemble_stiffness(mesh, g), assemble_mass(mesh, g)


def assemble_derivatives(mesh, g0, T):
    """Exact ``d/dt`` at ``t=0`` of ``(K, M)`` along ``g0 + t T``.

    Uses ``d g^{-1} = -g^{-1} T g^{-1}`` and ``d sqrt(det g) = tr(g^{-1} T) sqrt(det g) / 2``
    at every quadrature point.
    """
    geom = element_geometry(mesh)
    gq = metric_at_quadrature(mesh, g0)
    Tq = T.interpolate(mesh.triangles, QUAD_BARY)
    ginv = np.linalg.inv(gq)
    rho = np.sqrt(np.linalg.det(gq))
    half_tr = 0.5 * np.einsum("fqij,fqji->fq", ginv, Tq)
    dcoeff = (-ginv @ Tq @ ginv + half_tr[..., None, None] * ginv) * rho[..., None, None]
    dK = _scatter(mesh, _stiffness_local(geom, dcoeff))
    dM = _scatter(mesh, _mass_local(geom, half_tr * rho))
    return dK, dM


def matrix_to_coo(A, path):
    """Write ``row,col,value`` lines (upper and lower triangle both present)."""
    A = sp.coo_matrix(A)
    order = np.lexsort((A.col, A.row))
    with open(path, "w") as fh:
        fh.write("row,col,value\n")
        for r, c, v in zip(A.row[order].tolist(), A.col[order].tolist(), A.data[order].tolist()):
            fh.write(f"{r},{c},{v!r}\n")
