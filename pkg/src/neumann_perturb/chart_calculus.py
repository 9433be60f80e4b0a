"""Finite-difference Riemannian calculus on one coordinate chart.

Everything here works pointwise on analytic evaluators: a metric is a
callable ``(x, y) -> 2x2``, a metric family ``(t, x, y) -> 2x2``, scalars
``(x, y) -> float`` and vector fields ``(x, y) -> 2-vector`` (contravariant
components). All derivatives are second-order central differences, so every
``check_*`` residual is ``O(h^2)`` in the steps.

Index conventions: ``gamma[k, i, j]`` is the Christoffel symbol with upper
index ``k``; tensors are full 2x2 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateNormalError, DomainError
from .metric import TrigTensor, to_matrix

__all__ = [
    "UNIT_CHART",
    "AnalyticMetricFamily",
    "christoffel",
    "gradient",
    "hessian",
    "laplacian",
    "laplacian_divergence_form",
    "div_tensor",
    "covariant_derivative_vector",
    "check_lemma1",
    "check_P1_P2_P3",
    "check_lemma2",
    "check_prop3",
    "check_htilde",
    "fit_order",
    "CalculusFixture",
    "standard_fixture",
    "run_suite",
    "SUITES",
]

UNIT_CHART = ((0.0, 1.0), (0.0, 1.0))
DEFAULT_STEP = 1e-4
_E = np.eye(2)


def _require_interior(p, h, domain):
    if domain is None:
        return
    (x0, x1), (y0, y1) = domain
    x, y = p
    if not (x0 + 2 * h <= x <= x1 - 2 * h and y0 + 2 * h <= y <= y1 - 2 * h):
        raise DomainError(f"point {tuple(p)} is closer than two steps (h={h:g}) to the chart boundary {domain}")


def _d(fn, p, h, axis):
    """Central difference of ``fn`` (any array-valued function of a point) along ``axis``."""
    e = h * _E[axis]
    return (np.asarray(fn(p + e)) - np.asarray(fn(p - e))) / (2 * h)


def _pt(p):
    return np.asarray(p, dtype=float)


@dataclass(frozen=True)
class AnalyticMetricFamily:
    """A smooth metric family ``t -> g(t)`` with finite-difference steps.

    ``velocity(x, y)`` gives ``d/dt g`` at ``t = 0`` in closed form; when
    omitted it is taken by a central difference in ``t``.
    """

    evaluator: object
    velocity: object = None
    hx: float = DEFAULT_STEP
    ht: float = DEFAULT_STEP
    domain: tuple = UNIT_CHART

    def __post_init__(self):
        if self.hx <= 0 or self.ht <= 0:
            raise ValueError("finite-difference steps must be positive")

    @classmethod
    def linear(cls, g0, T, **kw):
        """``g(t) = g0 + t T`` with exact velocity ``T``."""
        return cls(lambda t, x, y: np.asarray(g0(x, y)) + t * np.asarray(T(x, y)), T, **kw)

    @classmethod
    def static(cls, g0, **kw):
        return cls(lambda t, x, y: np.asarray(g0(x, y)), lambda x, y: np.zeros((2, 2)), **kw)

    def with_steps(self, hx=None, ht=None):
        return replace(self, hx=self.hx if hx is None else hx, ht=self.ht if ht is None else ht)

    def at(self, t):
        return lambda x, y: np.asarray(self.evaluator(t, x, y), dtype=float)

    def H(self, x, y):
        if self.velocity is not None:
            return np.asarray(self.velocity(x, y), dtype=float)
        return (np.asarray(self.evaluator(self.ht, x, y)) - np.asarray(self.evaluator(-self.ht, x, y))) / (2 * self.ht)


def _metric_point_fn(g):
    return lambda q: np.asarray(g(q[0], q[1]), dtype=float)


def christoffel(g, point, h=DEFAULT_STEP, domain=UNIT_CHART):
    """``gamma[k, i, j] = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)``."""
    p = _pt(point)
    _require_interior(p, h, domain)
    G = _metric_point_fn(g)
    dg = np.stack([_d(G, p, h, a) for a in range(2)])  # dg[l, i, j] = d_l g_ij
    lowered = 0.5 * (np.einsum("ijl->lij", dg) + np.einsum("jil->lij", dg) - dg)  # [l, i, j]
    return np.einsum("kl,lij->kij", np.linalg.inv(G(p)), lowered)


def gradient(f, point, h=DEFAULT_STEP):
    """Covector ``df`` by central differences."""
    p = _pt(point)
    F = lambda q: f(q[0], q[1])
    return np.array([_d(F, p, h, a) for a in range(2)], dtype=float)


def _second_derivatives(f, p, h):
    x, y = p
    f0 = f(x, y)
    fxx = (f(x + h, y) - 2 * f0 + f(x - h, y)) / h**2
    fyy = (f(x, y + h) - 2 * f0 + f(x, y - h)) / h**2
    fxy = (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4 * h**2)
    return np.array([[fxx, fxy], [fxy, fyy]], dtype=float)


@dataclass(frozen=True)
class _Jet:
    grad: np.ndarray
    hess: np.ndarray  # plain second partials


def _jet(f, p, h):
    return _Jet(gradient(f, p, h), _second_derivatives(f, p, h))


def hessian(f, g, point, h=DEFAULT_STEP, domain=UNIT_CHART):
    """Covariant Hessian ``d_i d_j f - gamma^k_ij d_k f``."""
    p = _pt(point)
    _require_interior(p, h, domain)
    jet = _jet(f, p, h)
    return jet.hess - np.einsum("kij,k->ij", christoffel(g, p, h, domain), jet.grad)


def laplacian(f, g, point, h=DEFAULT_STEP, domain=UNIT_CHART):
    """``Delta_g f = <Hess f, g>``."""
    p = _pt(point)
    return float(np.sum(np.linalg.inv(g(*p)) * hessian(f, g, p, h, domain)))


def laplacian_divergence_form(f, g, point, h=DEFAULT_STEP, domain=UNIT_CHART):
    """``Delta_g f = |g|^{-1/2} d_i (|g|^{1/2} g^{ij} d_j f)`` with nested central differences."""
    p = _pt(point)
    _require_interior(p, h, domain)

    def flux(q):
        gq = np.asarray(g(*q), dtype=float)
        return np.sqrt(np.linalg.det(gq)) * np.linalg.solve(gq, gradient(f, q, h))

    div = sum(_d(flux, p, h, a)[a] for a in range(2))
    return float(div / np.sqrt(np.linalg.det(g(*p))))


def div_tensor(T, g, point, h=DEFAULT_STEP, domain=UNIT_CHART):
    """``(div T)_j = g^{ik} (d_i T_kj - gamma^l_ik T_lj - gamma^l_ij T_kl)``."""
    p = _pt(point)
    _require_interior(p, h, domain)
    Tf = lambda q: np.asarray(T(q[0], q[1]), dtype=float)
    dT = np.stack([_d(Tf, p, h, a) for a in range(2)])  # dT[i, k, j]
    gam = christoffel(g, p, h, domain)
    T0 = Tf(p)
    nabla = dT - np.einsum("lik,lj->ikj", gam, T0) - np.einsum("lij,kl->ikj", gam, T0)
    return np.einsum("ik,ikj->j", np.linalg.inv(g(*p)), nabla)


def covariant_derivative_vector(Z, g, point, h=DEFAULT_STEP, domain=UNIT_CHART):
    """``(nabla Z)^k_i = d_i Z^k + gamma^k_il Z^l`` as ``out[i, k]``."""
    p = _pt(point)
    Zf = lambda q: np.asarray(Z(q[0], q[1]), dtype=float)
    dZ = np.stack([_d(Zf, p, h, a) for a in range(2)])  # dZ[i, k]
    return dZ + np.einsum("kil,l->ik", christoffel(g, p, h, domain), Zf(p))


def check_lemma1(T, phi, Z, g, point, h=DEFAULT_STEP, domain=UNIT_CHART):
    """Residual of ``div(T(phi Z)) = phi <div T, Z> + phi <nabla Z, T> + T(grad phi, Z)``.

    ``T(phi Z)`` is the vector ``g^{-1} T (phi Z)``; its divergence is taken
    in the form ``|g|^{-1/2} d_a(|g|^{1/2} V^a)``.
    """
    p = _pt(point)
    _require_interior(p, h, domain)

    def weighted(q):
        gq = np.asarray(g(*q), dtype=float)
        V = np.linalg.solve(gq, np.asarray(T(*q), dtype=float) @ (phi(*q) * np.asarray(Z(*q), dtype=float)))
        return np.sqrt(np.linalg.det(gq)) * V

    g0 = np.asarray(g(*p), dtype=float)
    ginv = np.linalg.inv(g0)
    lhs = sum(_d(weighted, p, h, a)[a] for a in range(2)) / np.sqrt(np.linalg.det(g0))

    T0 = np.asarray(T(*p), dtype=float)
    Z0 = np.asarray(Z(*p), dtype=float)
    phi0 = phi(*p)
    divT = div_tensor(T, g, p, h, domain)
    nablaZ = covariant_derivative_vector(Z, g, p, h, domain)  # [i, b]
    grad_phi = ginv @ gradient(phi, p, h)
    rhs = phi0 * divT @ Z0 + phi0 * np.einsum("ia,ib,ab->", ginv, nablaZ, T0) + grad_phi @ T0 @ Z0
    return float(abs(lhs - rhs))


def _unit_normal(df, ginv):
    n2 = df @ ginv @ df
    if not n2 > 1e-24:
        raise DegenerateNormalError("grad f vanishes at the point; the normal nu = grad f / |grad f| is undefined")
    return ginv @ df / np.sqrt(n2)


def check_P1_P2_P3(family, X, Y, f, l, point, l_of_t=None):
    """Residuals of (P1), (P2), (P3) at ``t = 0``.

    ``X`` and ``Y`` are given by covector components ``(t, x, y) -> x_i(t)``.
    (P3) uses ``nu_t = grad_t f / |grad_t f|`` and either the fixed ``l`` or,
    when ``l_of_t(t, x, y)`` is supplied, the moving function ``l(t)``.
    """
    p = _pt(point)
    _require_interior(p, family.hx, family.domain)
    ht, hx = family.ht, family.hx
    ginv_t = lambda t: np.linalg.inv(family.at(t)(*p))
    ginv = ginv_t(0.0)
    H = family.H(*p)
    dt = lambda F: (F(ht) - F(-ht)) / (2 * ht)

    # (P1)
    xc = lambda t: np.asarray(X(t, *p), dtype=float)
    yc = lambda t: np.asarray(Y(t, *p), dtype=float)
    lhs1 = dt(lambda t: xc(t) @ ginv_t(t) @ yc(t))
    Xv, Yv = ginv @ xc(0.0), ginv @ yc(0.0)
    rhs1 = -Xv @ H @ Yv + dt(xc) @ ginv @ yc(0.0) + xc(0.0) @ ginv @ dt(yc)

    # (P2)
    df, dl = gradient(f, p, hx), gradient(l, p, hx)
    lhs2 = dt(lambda t: df @ ginv_t(t) @ dl)
    rhs2 = -(ginv @ df) @ H @ (ginv @ dl)

    # (P3)
    if l_of_t is None:
        dl_t = lambda t: dl
    else:
        dl_t = lambda t: gradient(lambda x, y: l_of_t(t, x, y), p, hx)

    def normal_pairing(t):
        gi = ginv_t(t)
        return df @ gi @ dl_t(t) / np.sqrt(df @ gi @ df)

    nu = _unit_normal(df, ginv)
    grad_l = ginv @ dl_t(0.0)
    lhs3 = dt(normal_pairing)
    rhs3 = -nu @ H @ grad_l + 0.5 * (nu @ H @ nu) * (nu @ dl_t(0.0)) + nu @ dt(dl_t)
    return float(abs(lhs1 - rhs1)), float(abs(lhs2 - rhs2)), float(abs(lhs3 - rhs3))


def check_lemma2(family, f, point):
    """``| d/dt nu(t) - (-H(nu) + H(nu, nu) nu / 2) |`` with ``nu(t) = grad_t f / |grad_t f|``."""
    p = _pt(point)
    _require_interior(p, family.hx, family.domain)
    df = gradient(f, p, family.hx)
    ginv_t = lambda t: np.linalg.inv(family.at(t)(*p))
    ginv = ginv_t(0.0)
    nu = _unit_normal(df, ginv)
    for t in (family.ht, -family.ht):
        _unit_normal(df, ginv_t(t))
    lhs = (_unit_normal(df, ginv_t(family.ht)) - _unit_normal(df, ginv_t(-family.ht))) / (2 * family.ht)
    H = family.H(*p)
    rhs = -ginv @ H @ nu + 0.5 * (nu @ H @ nu) * nu
    return float(np.linalg.norm(lhs - rhs))


def _quadrature_points(mesh):
    p = mesh.vertices[mesh.triangles]  # (F, 3, 2)
    mids = 0.5 * (p + np.roll(p, -1, axis=1))  # edge midpoints
    area = mesh.signed_areas()
    return mids.reshape(-1, 2), np.repeat(area / 3.0, 3)


def check_prop3(family, f, l, quadrature_mesh):
    """``| int l Delta'f dM - int l (dh.df/2 - <div H, df> - <H, Hess f>) dM |``.

    ``Delta'f`` is the central difference in ``t`` of ``Delta_{g(t)} f``, each
    Laplacian built from one fixed finite-difference jet of ``f`` so that
    differencing in ``t`` does not amplify roundoff in the second derivatives.
    """
    hx, ht = family.hx, family.ht
    g0 = family.at(0.0)
    pts, wts = _quadrature_points(quadrature_mesh)
    total = 0.0
    for p, w in zip(pts, wts):
        _require_interior(p, hx, family.domain)
        jet = _jet(f, p, hx)

        def lap(t):
            gt = family.at(t)
            gam = christoffel(gt, p, hx, family.domain)
            hess = jet.hess - np.einsum("kij,k->ij", gam, jet.grad)
            return np.sum(np.linalg.inv(gt(*p)) * hess)

        dlap = (lap(ht) - lap(-ht)) / (2 * ht)

        gm = g0(*p)
        ginv = np.linalg.inv(gm)
        trace = lambda q: np.sum(np.linalg.inv(g0(*q)) * family.H(*q))
        dh = np.array([_d(trace, p, hx, a) for a in range(2)])
        divH = div_tensor(family.H, g0, p, hx, family.domain)
        hess = jet.hess - np.einsum("kij,k->ij", christoffel(g0, p, hx, family.domain), jet.grad)
        Hp = family.H(*p)
        rhs = 0.5 * dh @ ginv @ jet.grad - divH @ ginv @ jet.grad - np.einsum("ik,jl,ij,kl->", ginv, ginv, Hp, hess)
        total += w * np.sqrt(np.linalg.det(gm)) * l(*p) * (dlap - rhs)
    return float(abs(total))


def check_htilde(family, boundary_point, f):
    """``| h~ - h + H(nu, nu) |`` where ``h~`` is the trace of ``H`` on the line ``ker df``."""
    p = _pt(boundary_point)
    df = gradient(f, p, family.hx)
    gm = family.at(0.0)(*p)
    ginv = np.linalg.inv(gm)
    nu = _unit_normal(df, ginv)
    H = family.H(*p)
    tau = np.array([-df[1], df[0]])
    h_tilde = (tau @ H @ tau) / (tau @ gm @ tau)
    h = np.sum(ginv * H)
    return float(abs(h_tilde - h + nu @ H @ nu))


def fit_order(steps, residuals):
    """Least-squares slope of ``log residual`` against ``log step``."""
    steps = np.asarray(steps, dtype=float)
    residuals = np.asarray(residuals, dtype=float)
    if np.any(residuals <= 0):
        return np.nan
    return float(np.polyfit(np.log(steps), np.log(residuals), 1)[0])


# ---------------------------------------------------------------------------
# fixtures shared by the CLI suite and the acceptance tests


def _trig_scalar(seed, amp=1.0):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-amp, amp, size=4)
    kx, ky = rng.integers(1, 3, size=2)
    ph = rng.uniform(0, 2 * np.pi, size=2)

    def s(x, y):
        return (
            a[0] * np.sin(kx * x + ph[0]) * np.cos(ky * y + ph[1])
            + a[1] * np.cos(x - 2 * y)
            + a[2] * x * y
            + a[3] * np.sin(2 * x + y)
        )

    return s


@dataclass(frozen=True)
class CalculusFixture:
    family: AnalyticMetricFamily
    g0: object
    T: object
    f: object
    l: object
    phi: object
    Z: object
    X: object
    Y: object
    l_of_t: object
    points: tuple
    quad_mesh: object


def standard_fixture(seed=0):
    """A curved metric ``g0``, a family ``g0 + t T + t^2 S + t^3 U`` and smooth test fields."""
    from .mesh import generate_square

    rng = np.random.default_rng(seed)
    c = rng.uniform(0.2, 0.4, size=3)

    def g0(x, y):
        return to_matrix(
            np.stack(
                np.broadcast_arrays(
                    1.0 + c[0] * np.sin(x + 2 * y) ** 2,
                    c[1] * np.sin(x) * np.cos(y),
                    1.5 + c[2] * np.cos(2 * x - y),
                ),
                -1,
            )
        )

    T = TrigTensor(seed + 1, amplitude=1.0, frequency_cap=2)
    S = TrigTensor(seed + 11, amplitude=1.0, frequency_cap=2)
    U = TrigTensor(seed + 12, amplitude=1.0, frequency_cap=2)
    # curved in t as well, so t-truncation error dominates roundoff; velocity is exactly T
    family = AnalyticMetricFamily(
        lambda t, x, y: np.asarray(g0(x, y)) + t * T(x, y) + t**2 * S(x, y) + t**3 * U(x, y), T
    )
    f = _trig_scalar(seed + 2)
    l = _trig_scalar(seed + 3)
    phi = _trig_scalar(seed + 4)
    z1, z2 = _trig_scalar(seed + 5), _trig_scalar(seed + 6)
    Z = lambda x, y: np.array([z1(x, y), z2(x, y)])
    xs1, xs2, ys1, ys2 = (_trig_scalar(seed + k) for k in (7, 8, 9, 10))
    X = lambda t, x, y: np.array([xs1(x, y) + t * xs2(x, y) + t**2 * xs1(y, x), xs2(x, y) - t * xs1(x, y)])
    Y = lambda t, x, y: np.array([ys1(x, y) * np.exp(t), ys2(x, y) + np.sin(t) * ys1(x, y)])
    l_of_t = lambda t, x, y: l(x, y) + np.sin(t) * f(y, x) + t**2 * x
    points = ((0.37, 0.42), (0.61, 0.28), (0.45, 0.71))
    quad = generate_square(6)
    quad = type(quad)(0.3 + 0.4 * quad.vertices, quad.triangles, quad.boundary_edges)
    return CalculusFixture(family, g0, T, f, l, phi, Z, X, Y, l_of_t, points, quad)


def _suite_lemma1(fx, h):
    return [("lemma1", p, check_lemma1(fx.T, fx.phi, fx.Z, fx.g0, p, h)) for p in fx.points]


def _suite_lemma2(fx, h):
    fam = fx.family.with_steps(h, h)
    return [("lemma2", p, check_lemma2(fam, fx.f, p)) for p in fx.points]


def _suite_props(fx, h):
    fam = fx.family.with_steps(h, h)
    out = []
    for p in fx.points:
        r1, r2, r3 = check_P1_P2_P3(fam, fx.X, fx.Y, fx.f, fx.l, p)
        _, _, r3t = check_P1_P2_P3(fam, fx.X, fx.Y, fx.f, fx.l, p, l_of_t=fx.l_of_t)
        out += [("P1", p, r1), ("P2", p, r2), ("P3", p, r3), ("P3_moving_l", p, r3t)]
    return out


def _suite_prop3(fx, h):
    fam = fx.family.with_steps(h, h)
    return [("prop3", "quadrature", check_prop3(fam, fx.f, fx.l, fx.quad_mesh))]


def _suite_htilde(fx, h):
    fam = fx.family.with_steps(h, h)
    # points on the chart edges x = 0 and y = 1 (normal from the level function)
    edge_points = ((0.0, 0.35), (0.55, 1.0), (1.0, 0.8))
    return [("htilde", p, check_htilde(fam, p, fx.f)) for p in edge_points]


SUITES = {
    "lemma1": _suite_lemma1,
    "lemma2": _suite_lemma2,
    "props": _suite_props,
    "prop3": _suite_prop3,
    "htilde": _suite_htilde,
}


def run_suite(name, steps, seed=0):
    """Evaluate one identity suite over ``steps``.

    Returns ``(rows, orders)``: rows are ``(identity, point, step, residual)``
    and ``orders`` maps ``(identity, point)`` to the fitted convergence order.
    """
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    fx = standard_fixture(seed)
    rows = []
    for h in steps:
        rows += [(ident, p, h, r) for ident, p, r in SUITES[name](fx, h)]
    orders = {}
    for key in dict.fromkeys((r[0], r[1]) for r in rows):
        data = [(h, r) for ident, p, h, r in rows if (ident, p) == key]
        orders[key] = fit_order(*zip(*data))
    return rows, orders
