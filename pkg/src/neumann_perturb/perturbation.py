"""First-order splitting of a multiple Neumann eigenvalue under ``g(t) = g0 + t T``.

Two independent constructions of the branch matrix are provided:

* :func:`hadamard_matrix` integrates the geometric first-variation density
  ``<(1/4) Delta(phi_i phi_j) g - dphi_i (x) dphi_j, H>`` over the mesh, with
  the Laplacian term moved onto ``h = tr_g H`` by parts.
* :func:`discrete_branch_matrix` differentiates the assembled pencil,
  ``Phi^T (K' - lam M') Phi``.

Their eigenvalues are the slopes of the eigenvalue branches at ``t = 0``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .eigensolver import DEFAULT_CLUSTER_TOL, cluster as make_clusters, solve_window
from .errors import ConsistencyError, TrackingError, ValidationError
from .fem import (
    QUAD_BARY,
    assemble_derivatives,
    assemble_mass,
    assemble_pencil,
    element_geometry,
    metric_at_quadrature,
)
from .metric import SymTensorField, metric_at_t, random_perturbation, trace_h

__all__ = [
    "BranchMatrix",
    "BranchCurves",
    "ResidualTensor",
    "GenericityResult",
    "hadamard_matrix",
    "discrete_branch_matrix",
    "boundary_flux",
    "isolation_window",
    "track_branches",
    "residual_tensor",
    "splitting_perturbation",
    "genericity_experiment",
    "min_gap",
]

ORTHO_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class BranchMatrix:
    matrix: np.ndarray
    provenance: str  # "geometric" or "discrete-oracle"

    def eigenvalues(self):
        return np.linalg.eigvalsh(self.matrix)

    def eigh(self):
        return np.linalg.eigh(self.matrix)


def min_gap(values):
    v = np.sort(np.asarray(values, dtype=float))
    return float(np.min(np.diff(v))) if len(v) > 1 else np.inf


def _check_basis(cluster, M):
    Phi = cluster.vectors
    err = np.max(np.abs(Phi.T @ (M @ Phi) - np.eye(cluster.multiplicity)))
    if err > ORTHO_TOL:
        raise ConsistencyError(
            f"cluster basis is not M-orthonormal for this metric (max |Phi^T M Phi - I| = {err:.2e})"
        )


def _element_data(mesh, g, Phi):
    geom = element_geometry(mesh)
    gq = metric_at_quadrature(mesh, g)
    ginv = np.linalg.inv(gq)
    w = (geom.area / 3.0)[:, None] * np.sqrt(np.linalg.det(gq))  # (F, Q) weights incl. density
    corner = Phi[mesh.triangles]  # (F, 3, m)
    phi_q = np.einsum("qa,fam->fqm", QUAD_BARY, corner)
    dphi = np.einsum("fam,fai->fmi", corner, geom.grads)  # (F, m, 2) constant per element
    return geom, ginv, w, phi_q, dphi


def hadamard_matrix(mesh, g, cluster, H, M=None):
    """Geometric branch matrix for the velocity tensor ``H`` at the metric ``g``.

    Entry ``(i, j)`` is ``int [ (1/4) Delta(phi_i phi_j) h - H(grad phi_i, grad phi_j) ] dM``
    with ``int Delta(phi_i phi_j) h dM = -int <d(phi_i phi_j), dh>_g dM``; the
    boundary flux of ``phi_i phi_j`` is dropped (see :func:`boundary_flux`).
    """
    if M is None:
        M = assemble_mass(mesh, g)
    _check_basis(cluster, M)
    geom, ginv, w, phi_q, dphi = _element_data(mesh, g, cluster.vectors)
    Hq = H.interpolate(mesh.triangles, QUAD_BARY)
    h = np.asarray(trace_h(H, g))
    dh = np.einsum("fa,fai->fi", h[mesh.triangles], geom.grads)  # (F, 2)

    grad = np.einsum("fqij,fmj->fqmi", ginv, dphi)  # grad phi at quadrature points
    hess_term = np.einsum("fq,fqmi,fqij,fqnj->mn", w, grad, Hq, grad)
    # d(phi_i phi_j) = phi_i dphi_j + phi_j dphi_i, paired with dh through g^{-1}
    ginv_dh = np.einsum("fqij,fj->fqi", ginv, dh)
    dphi_dh = np.einsum("fmi,fqi->fqm", dphi, ginv_dh)
    lap_term = np.einsum("fq,fqm,fqn->mn", w, phi_q, dphi_dh)
    lap_term = lap_term + lap_term.T
    A = -hess_term - 0.25 * lap_term
    return BranchMatrix(0.5 * (A + A.T), "geometric")


def discrete_branch_matrix(cluster, dK, dM, lam=None):
    """``Phi^T (K' - lam M') Phi`` with ``lam`` defaulting to the cluster mean."""
    lam = cluster.mean if lam is None else lam
    Phi = cluster.vectors
    A = Phi.T @ (dK @ Phi) - lam * (Phi.T @ (dM @ Phi))
    return BranchMatrix(0.5 * (A + A.T), "discrete-oracle")


def boundary_flux(mesh, g, cluster, H):
    """The term ``(1/4) oint h d_nu(phi_i phi_j) ds`` that :func:`hadamard_matrix` drops.

    Evaluated edge by edge with Simpson's rule, using the element gradient of
    the triangle owning each boundary edge and the g-unit outward normal.
    """
    Phi = cluster.vectors
    geom = element_geometry(mesh)
    h = np.asarray(trace_h(H, g))
    gm = g.matrices()
    # owner triangle of each directed boundary edge
    owner = {}
    for f, tri in enumerate(mesh.triangles.tolist()):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            owner[(a, b)] = f
    m = cluster.multiplicity
    out = np.zeros((m, m))
    for a, b in mesh.boundary_edges.tolist():
        f = owner[(a, b)]
        tri = mesh.triangles[f]
        dphi = Phi[tri].T @ geom.grads[f]  # (m, 2)
        e = mesh.vertices[b] - mesh.vertices[a]
        omega = np.array([e[1], -e[0]])  # covector vanishing on the edge, positive outward
        samples = []
        for s, wgt in ((0.0, 1 / 6), (0.5, 4 / 6), (1.0, 1 / 6)):
            gs = (1 - s) * gm[a] + s * gm[b]
            gi = np.linalg.inv(gs)
            nu = gi @ omega / np.sqrt(omega @ gi @ omega)
            ds = np.sqrt(e @ gs @ e)
            phi = (1 - s) * Phi[a] + s * Phi[b]
            dn = dphi @ nu  # (m,)
            hs = (1 - s) * h[a] + s * h[b]
            samples.append(wgt * ds * hs * (np.outer(phi, dn) + np.outer(dn, phi)))
        out += sum(samples)
    return 0.25 * out


def isolation_window(K, M, lam_bar, cluster_tol=DEFAULT_CLUSTER_TOL):
    """Half-width of a window around ``lam_bar`` that holds exactly its cluster.

    Returns ``(cluster, half_width)``; the half-width is half the distance from
    the cluster to the nearest other eigenvalue.
    """
    span = 0.5 * abs(lam_bar) + 1.0
    pairs = solve_window(K, M, lam_bar - span, lam_bar + span)
    if not pairs:
        raise TrackingError(f"no eigenvalue near {lam_bar}")
    clusters = make_clusters(pairs, cluster_tol, M)
    c = min(clusters, key=lambda c: abs(c.mean - lam_bar))
    others = [p.value for k, p in enumerate(pairs) if k not in c.indices]
    lo, hi = c.values.min(), c.values.max()
    dist = min([span - abs(lam_bar - lo), span - abs(hi - lam_bar)]
               + [abs(v - lo) if v < lo else abs(v - hi) for v in others])
    cwin = cluster_tol * max(1.0, abs(c.mean))
    if dist < 5 * cwin:
        raise TrackingError(
            f"cluster at {c.mean:.6g} is not isolated: nearest eigenvalue {dist:.3g} away, "
            f"need at least {5 * cwin:.3g}"
        )
    return c, 0.5 * dist + 0.5 * (hi - lo)


@dataclass(frozen=True, eq=False)
class BranchCurves:
    t: np.ndarray  # (n_t,) ascending
    values: np.ndarray  # (n_t, m) eigenvalue of each branch
    overlaps: np.ndarray  # (n_t, m) |<phi_prev, phi_new>_M| of the accepted match
    reference: np.ndarray = field(repr=False, default=None)  # t=0 basis, N x m

    def slopes(self):
        """Central-difference slopes ``(lam(t) - lam(-t)) / 2t`` for every ``t > 0`` with a mirror."""
        out = {}
        for k, t in enumerate(self.t):
            if t <= 0:
                continue
            mirror = np.flatnonzero(np.isclose(self.t, -t, rtol=0, atol=1e-14 * max(1, t)))
            if len(mirror):
                out[float(t)] = (self.values[k] - self.values[mirror[0]]) / (2 * t)
        return out

    def gaps(self):
        return np.array([min_gap(v) for v in self.values])


def _greedy_match(overlap):
    """Column assignment maximizing overlap greedily: ``perm[branch] = new column``."""
    O = np.abs(overlap).copy()
    m = O.shape[0]
    perm = np.full(m, -1)
    for _ in range(m):
        r, c = np.unravel_index(np.argmax(O), O.shape)
        perm[r] = c
        O[r, :] = -1
        O[:, c] = -1
    return perm


def track_branches(mesh, g0, T, lam_bar, t_grid, cluster_tol=DEFAULT_CLUSTER_TOL, window=None, threads=1):
    """Follow the eigenvalues of the cluster at ``lam_bar`` along ``g0 + t T``.

    The ``t = 0`` basis is rotated to diagonalize the discrete branch matrix
    (ascending slopes), then each grid point is matched to its neighbour
    closer to ``t = 0`` by maximal ``M``-overlap of eigenvectors.
    """
    t_grid = np.unique(np.asarray(t_grid, dtype=float))
    K0, M0 = assemble_pencil(mesh, g0)
    c0, half = isolation_window(K0, M0, lam_bar, cluster_tol)
    if window is not None:
        half = window
    m = c0.multiplicity
    dK, dM = assemble_derivatives(mesh, g0, T)
    _, Q = discrete_branch_matrix(c0, dK, dM).eigh()
    ref = c0.vectors @ Q
    lo, hi = c0.mean - half, c0.mean + half

    def solve(t):
        if t == 0:
            return K0, M0, solve_window(K0, M0, lo, hi)
        K, M = assemble_pencil(mesh, metric_at_t(g0, T, t))
        return K, M, solve_window(K, M, lo, hi)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            solved = list(pool.map(solve, t_grid))
    else:
        solved = [solve(t) for t in t_grid]

    n = len(t_grid)
    values = np.empty((n, m))
    overlaps = np.empty((n, m))
    for k, (_, _, pairs) in enumerate(solved):
        if len(pairs) != m:
            raise TrackingError(
                f"window [{lo:.6g}, {hi:.6g}] holds {len(pairs)} eigenvalues at t={t_grid[k]:g}, expected {m}"
            )

    def march(order):
        prev = ref
        for k in order:
            if t_grid[k] == 0:
                # anchor: the rotated reference basis itself
                values[k] = np.einsum("ia,ia->a", ref, K0 @ ref)
                overlaps[k] = 1.0
                prev = ref
                continue
            _, M, pairs = solved[k]
            V = np.column_stack([p.vector for p in pairs])
            O = prev.T @ (M @ V)
            perm = _greedy_match(O)
            V = V[:, perm]
            signs = np.sign(np.diag(O[:, perm]))
            signs[signs == 0] = 1
            V = V * signs
            values[k] = [pairs[c].value for c in perm]
            overlaps[k] = np.abs(np.diag(O[:, perm]))
            prev = V

    march([k for k in range(n) if t_grid[k] >= 0])
    march([k for k in range(n - 1, -1, -1) if t_grid[k] < 0])
    return BranchCurves(t_grid, values, overlaps, ref)


@dataclass(frozen=True, eq=False)
class ResidualTensor:
    field: SymTensorField
    norm: float  # L^2(g) norm
    laplacian: np.ndarray  # projected Delta(phi_i phi_j) per vertex


def _gradient_recovery(mesh, area, per_element):
    """Area-weighted average of per-element values onto vertices."""
    n = mesh.n_vertices
    acc = np.zeros((n,) + per_element.shape[1:])
    wsum = np.zeros(n)
    for a in range(3):
        np.add.at(acc, mesh.triangles[:, a], area.reshape((-1,) + (1,) * (per_element.ndim - 1)) * per_element)
        np.add.at(wsum, mesh.triangles[:, a], area)
    return acc / wsum.reshape((-1,) + (1,) * (per_element.ndim - 1))


def tensor_l2_norm(mesh, g, field):
    gq = metric_at_quadrature(mesh, g)
    ginv = np.linalg.inv(gq)
    Rq = field.interpolate(mesh.triangles, QUAD_BARY)
    area = element_geometry(mesh).area
    w = (area / 3.0)[:, None] * np.sqrt(np.linalg.det(gq))
    dens = np.einsum("fqik,fqjl,fqij,fqkl->fq", ginv, ginv, Rq, Rq)
    return float(np.sqrt(np.sum(w * dens)))


def residual_tensor(mesh, g, cluster, i, j, M=None):
    """Per-vertex field ``R = (1/4) Delta(phi_i phi_j) g - sym(dphi_i (x) dphi_j)`` and its L^2 norm.

    ``Delta(phi_i phi_j)`` is the lumped-mass projection of the weak Laplacian
    of the (piecewise quadratic) product; ``dphi`` is recovered at vertices by
    area-weighted averaging of element gradients.
    """
    if i == j:
        raise ValidationError("residual tensor needs two distinct cluster members (i != j)")
    if M is None:
        M = assemble_mass(mesh, g)
    Phi = cluster.vectors[:, [i, j]]
    geom, ginv, w, phi_q, dphi = _element_data(mesh, g, Phi)
    dprod = phi_q[..., 0, None] * dphi[:, None, 1] + phi_q[..., 1, None] * dphi[:, None, 0]  # (F, Q, 2)
    flux = np.einsum("fq,fqi,fqij,faj->fa", w, dprod, ginv, geom.grads)
    load = np.zeros(mesh.n_vertices)
    np.add.at(load, mesh.triangles, -flux)
    lumped = np.asarray(M.sum(axis=1)).ravel()
    lap = load / lumped

    sym = 0.5 * (np.einsum("fi,fj->fij", dphi[:, 0], dphi[:, 1]) + np.einsum("fi,fj->fij", dphi[:, 1], dphi[:, 0]))
    S = _gradient_recovery(mesh, geom.area, sym)
    R = 0.25 * lap[:, None, None] * g.matrices() - S
    field = SymTensorField(R)
    return ResidualTensor(field, tensor_l2_norm(mesh, g, field), lap)


def splitting_perturbation(mesh, g, cluster, M=None, threshold=1e-8, fallback_seed=0):
    """A tensor ``T`` along which the cluster splits at first order.

    Returns the residual tensor of the first two basis functions, for which
    the off-diagonal branch-matrix entry equals ``||R||^2 > 0``. Falls back to
    a seeded random perturbation when ``||R||`` is below ``threshold``.
    """
    if cluster.multiplicity < 2:
        raise ValidationError("splitting needs a cluster of multiplicity >= 2")
    res = residual_tensor(mesh, g, cluster, 0, 1, M)
    if res.norm < threshold:
        return random_perturbation(mesh, fallback_seed)
    return res.field


@dataclass(frozen=True)
class GenericityResult:
    split_fraction: float
    slopes: list  # sorted branch-matrix eigenvalues per sample
    gaps: list  # predicted min gap per sample
    split: list  # bool per sample
    probes: list = field(default_factory=list)  # (sample, measured gap at t_probe, confirmed)


def genericity_experiment(
    mesh,
    g,
    cluster,
    samples,
    seed,
    t_probe,
    gap_tol=None,
    amplitude=1.0,
    frequency_cap=2,
    probe_count=5,
    perturbation=None,
    method="discrete",
    cluster_tol=DEFAULT_CLUSTER_TOL,
):
    """Fraction of sampled perturbations whose branch matrix has distinct eigenvalues.

    ``perturbation(k, rng_seed) -> SymTensorField`` overrides the default
    seeded trigonometric sampler. For the first ``probe_count`` split samples
    the pencil is re-solved at ``t_probe`` and the measured gap is required to
    be at least half the first-order prediction ``|t_probe| * gap``.
    """
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    if method not in ("discrete", "geometric"):
        raise ValidationError(f"unknown branch-matrix method {method!r}")
    gap_tol = 1e-6 * max(1.0, abs(cluster.mean)) if gap_tol is None else gap_tol
    K0, M0 = assemble_pencil(mesh, g)
    _, half = isolation_window(K0, M0, cluster.mean, cluster_tol)
    children = np.random.SeedSequence(seed).spawn(samples)

    slopes, gaps, split, probes = [], [], [], []
    for k, child in enumerate(children):
        if perturbation is None:
            T = random_perturbation(mesh, child, amplitude, frequency_cap)
        else:
            T = perturbation(k, child)
        if method == "discrete":
            dK, dM = assemble_derivatives(mesh, g, T)
            B = discrete_branch_matrix(cluster, dK, dM)
        else:
            B = hadamard_matrix(mesh, g, cluster, T, M0)
        ev = B.eigenvalues()
        gap = min_gap(ev)
        slopes.append(ev.tolist())
        gaps.append(gap)
        split.append(bool(gap > gap_tol))
        if split[-1] and len(probes) < probe_count:
            K, M = assemble_pencil(mesh, metric_at_t(g, T, t_probe))
            pairs = solve_window(K, M, cluster.mean - half, cluster.mean + half)
            measured = min_gap([p.value for p in pairs]) if len(pairs) == cluster.multiplicity else 0.0
            probes.append((k, measured, bool(measured >= 0.5 * abs(t_probe) * gap)))
    return GenericityResult(float(np.mean(split)), slopes, gaps, split, probes)
