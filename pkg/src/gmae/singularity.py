"""Singular set of the front map and classification of its points.

The singularity identifier is

* generic:      ``lam = xi''(t) + K~(s, t)``,  ``K = x (a_q + a a_p)``
* non-generic:  ``lam = L~(s, t) - xi''(t)``,  ``L = a_q + a a_p``

and the null vector field along the singular set is ``d/dt``, so the
directional derivatives used by the criteria are plain t-derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from gmae.characteristics import IntegralSurface, closed_form_tangents, jet_field

EPS_ZERO = 1e-6
LOCATE_TOL = 1e-10
DEDUPE_TOL = 1e-9
# finite-difference steps per derivative order, balancing truncation and roundoff
FD_STEPS = {1: 1e-4, 2: 1e-3, 3: 3e-3}

CUSPIDAL_EDGE = "CuspidalEdge"
SWALLOWTAIL = "Swallowtail"
BUTTERFLY = "Butterfly"
BEAKS = "Beaks"
UNCLASSIFIED = "Unclassified"
CLASSES = (CUSPIDAL_EDGE, SWALLOWTAIL, BUTTERFLY, BEAKS, UNCLASSIFIED)

# 4th-order central stencils: offsets and weights (divide by h^order)
_STENCILS = {
    1: (np.array([-2, -1, 1, 2]), np.array([1, -8, 8, -1]) / 12.0),
    2: (np.array([-2, -1, 0, 1, 2]), np.array([-1, 16, -30, 16, -1]) / 12.0),
    3: (np.array([-3, -2, -1, 1, 2, 3]), np.array([1, -8, 13, -13, 8, -1]) / 8.0),
}


class LambdaField:
    """Numeric singularity identifier on a constructed surface."""

    def __init__(self, surface: IntegralSurface):
        self.surface = surface
        self.field = "K" if surface.mode == "generic" else "L"

    def _combine(self, jet, xi2):
        k = jet_field(self.surface.sys, self.field, jet)
        return xi2 + k if self.surface.mode == "generic" else k - xi2

    def grid(self) -> np.ndarray:
        """Values at the surface nodes (NaN at holes)."""
        t = np.broadcast_to(self.surface.t_grid, self.surface.shape)
        return self._combine(self.surface.jet, self.surface.seed(t, 2))

    def __call__(self, s, t):
        scalar = np.ndim(s) == 0 and np.ndim(t) == 0
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        jet, ok = self.surface.jet_at(s, t)
        out = np.where(ok, self._combine(jet, self.surface.seed(t, 2)), np.nan)
        return float(out) if scalar else out


def lambda_hat(surface: IntegralSurface, s, t):
    """Singularity identifier at parameters ``(s, t)``."""
    return LambdaField(surface)(s, t)


@dataclass
class Derivatives:
    value: float
    ds: float
    dt: float
    dtt: float
    dttt: float
    dss: float
    dst: float

    @property
    def det_hessian(self) -> float:
        return self.dss * self.dtt - self.dst**2


def derivatives(lam: LambdaField, s: float, t: float, step_factor: float = 1.0) -> Derivatives:
    """FD derivatives of lambda at one point, all stencils in a single batch.

    ``step_factor`` rescales every finite-difference step (used to check
    convergence under step halving).
    """
    hs = {k: v * max(1.0, abs(s)) * step_factor for k, v in FD_STEPS.items()}
    ht = {k: v * max(1.0, abs(t)) * step_factor for k, v in FD_STEPS.items()}
    pts = [(s, t)]
    plan = []

    def add(offsets_s, offsets_t, weights, denom):
        start = len(pts)
        pts.extend((s + a, t + b) for a, b in zip(offsets_s, offsets_t))
        plan.append((start, len(offsets_s), weights, denom))

    o1, w1 = _STENCILS[1]
    o2, w2 = _STENCILS[2]
    o3, w3 = _STENCILS[3]
    add(o1 * hs[1], 0 * o1, w1, hs[1])
    add(0 * o1, o1 * ht[1], w1, ht[1])
    add(0 * o2, o2 * ht[2], w2, ht[2] ** 2)
    add(0 * o3, o3 * ht[3], w3, ht[3] ** 3)
    add(o2 * hs[2], 0 * o2, w2, hs[2] ** 2)
    # mixed derivative: tensor product of first-derivative stencils
    a, b = np.meshgrid(o1, o1, indexing="ij")
    add((a * hs[2]).ravel(), (b * ht[2]).ravel(), np.outer(w1, w1).ravel(), hs[2] * ht[2])
    arr = np.array(pts)
    vals = lam(arr[:, 0], arr[:, 1])
    out = [float(vals[0])]
    for start, n, weights, denom in plan:
        out.append(float(weights @ vals[start:start + n] / denom))
    return Derivatives(*out)


@dataclass
class SingularPoint:
    s: float
    t: float
    lambda_hat: float
    grad: tuple[float, float] = (np.nan, np.nan)
    degenerate: bool = False
    cls: str = UNCLASSIFIED
    diagnostics: dict = field(default_factory=dict)
    origin: str = "edge"

    @property
    def location(self) -> tuple[float, float]:
        return self.s, self.t


@dataclass
class SingularityReport:
    points: list[SingularPoint]
    eps_zero: float
    scale: float

    def nearest(self, s: float, t: float) -> SingularPoint | None:
        if not self.points:
            return None
        return min(self.points, key=lambda p: np.hypot(p.s - s, p.t - t))

    def by_class(self, cls: str) -> list[SingularPoint]:
        return [p for p in self.points if p.cls == cls]


# ---------------------------------------------------------------------------
# locating the singular set


def _root(f, a: float, b: float, fa: float, fb: float, tol: float) -> float | None:
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if not (np.isfinite(fa) and np.isfinite(fb)) or fa * fb > 0:
        return None
    try:
        x = brentq(f, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    except (ValueError, RuntimeError):
        return None
    return x


def _edge_roots(lam: LambdaField, grid: np.ndarray, tol: float) -> tuple[list, dict]:
    """Sign changes along s-edges (per t column) and t-edges (per s row)."""
    s_grid, t_grid = lam.surface.s_grid, lam.surface.t_grid
    found = []
    columns = {}
    for j, t in enumerate(t_grid):
        col = grid[:, j]
        roots = []
        for i in range(len(s_grid) - 1):
            if i > 0 and col[i] == 0.0:
                continue  # already taken as the right end of the previous edge
            r = _root(lambda s: lam(s, t), s_grid[i], s_grid[i + 1], col[i], col[i + 1], tol)
            if r is not None:
                roots.append(r)
                found.append((r, t, "s-edge"))
        columns[j] = sorted(set(roots))
    for i, s in enumerate(s_grid):
        row = grid[i, :]
        for j in range(len(t_grid) - 1):
            if row[j] == 0.0 or row[j + 1] == 0.0:
                continue  # exact node zeros are covered by the s-edge scan
            r = _root(lambda t: lam(s, t), t_grid[j], t_grid[j + 1], row[j], row[j + 1], tol)
            if r is not None:
                found.append((s, r, "t-edge"))
    return found, columns


def _newton_critical(lam: LambdaField, s: float, t: float, bounds, iters: int = 30):
    """2D Newton on grad(lambda) = 0 with FD gradient and Hessian."""
    (s_lo, s_hi), (t_lo, t_hi) = bounds
    for _ in range(iters):
        d = derivatives(lam, s, t)
        hess = np.array([[d.dss, d.dst], [d.dst, d.dtt]])
        grad = np.array([d.ds, d.dt])
        if not np.all(np.isfinite(hess)) or abs(np.linalg.det(hess)) < 1e-14:
            return None
        step = np.linalg.solve(hess, grad)
        s, t = s - step[0], t - step[1]
        if not (s_lo <= s <= s_hi and t_lo <= t <= t_hi):
            return None
        if np.max(np.abs(step)) < 1e-13 * (1.0 + abs(s) + abs(t)):
            break
    return s, t


def _degenerate_seeds(lam: LambdaField, grid: np.ndarray, tol: float) -> list:
    s_grid, t_grid = lam.surface.s_grid, lam.surface.t_grid
    if len(s_grid) < 3 or len(t_grid) < 3:
        return []
    hs, ht = s_grid[1] - s_grid[0], t_grid[1] - t_grid[0]
    with np.errstate(all="ignore"):
        gs, gt = np.gradient(grid, hs, ht)
        gss, gst = np.gradient(gs, hs, ht)
        _, gtt = np.gradient(gt, hs, ht)
    gnorm = np.hypot(gs, gt)
    hnorm = np.sqrt(gss**2 + 2 * gst**2 + gtt**2)
    h = max(hs, ht)
    bounds = ((s_grid[0], s_grid[-1]), (t_grid[0], t_grid[-1]))
    found = []
    for i in range(1, len(s_grid) - 1):
        for j in range(1, len(t_grid) - 1):
            g = gnorm[i, j]
            if not (np.isfinite(g) and g <= 2.0 * h * hnorm[i, j]):
                continue
            block = gnorm[i - 1:i + 2, j - 1:j + 2]
            if np.nanmin(block) < g:
                continue  # keep only local minima of |grad|
            if abs(grid[i, j]) > 2.0 * h * (g + h * hnorm[i, j]):
                continue
            sol = _newton_critical(lam, s_grid[i], t_grid[j], bounds)
            if sol is None:
                continue
            value = lam(*sol)
            if np.isfinite(value) and abs(value) < max(tol, 1e-8):
                found.append((sol[0], sol[1], "degenerate"))
    return found


def _s_on_curve(lam: LambdaField, t: float, s_guess: float, width: float, tol: float) -> float | None:
    """Root in s of lambda(., t) bracketed around ``s_guess``."""
    s_lo, s_hi = lam.surface.s_grid[0], lam.surface.s_grid[-1]
    for k in range(1, 6):
        a, b = max(s_lo, s_guess - k * width), min(s_hi, s_guess + k * width)
        fa, fb = lam(a, t), lam(b, t)
        r = _root(lambda s: lam(s, t), a, b, fa, fb, tol)
        if r is not None:
            return r
    return None


def _special_points(lam: LambdaField, columns: dict, tol: float) -> list:
    """Points on the singular curve where lambda_t or lambda_tt vanishes.

    The curve is followed as ``s = sigma(t)`` through the s-edge roots; a sign
    change of ``g(t) = lambda_t(sigma(t), t)`` brackets a swallowtail-type
    point, and a local minimum of ``|g|`` without a sign change brackets a
    zero of ``lambda_tt`` (butterfly-type).
    """
    t_grid = lam.surface.t_grid
    hs = lam.surface.s_grid[1] - lam.surface.s_grid[0] if len(lam.surface.s_grid) > 1 else 1.0
    chains = []
    open_chains = []
    for j in range(len(t_grid)):
        roots = list(columns.get(j, []))
        new_open = []
        for chain in open_chains:
            if not roots:
                continue
            last = chain[-1][0]
            k = int(np.argmin([abs(r - last) for r in roots]))
            chain.append((roots.pop(k), j))
            new_open.append(chain)
        for r in roots:
            chain = [(r, j)]
            chains.append(chain)
            new_open.append(chain)
        open_chains = new_open

    found = []
    for chain in chains:
        if len(chain) < 3:
            continue
        ss = np.array([c[0] for c in chain])
        tt = np.array([t_grid[c[1]] for c in chain])
        g = np.array([derivatives(lam, s, t).dt for s, t in zip(ss, tt)])

        def along(order):
            def fn(t, k):
                s = _s_on_curve(lam, t, np.interp(t, tt, ss), 2 * hs, tol)
                if s is None:
                    raise ValueError("lost the singular curve")
                d = derivatives(lam, s, t)
                return (d.dt if order == 1 else d.dtt), s
            return fn

        for k in range(len(chain) - 1):
            if g[k] * g[k + 1] < 0:
                fn = along(1)
                try:
                    t_star = brentq(lambda t: fn(t, k)[0], tt[k], tt[k + 1], xtol=1e-14, maxiter=200)
                    found.append((fn(t_star, k)[1], t_star, "special"))
                except (ValueError, RuntimeError):
                    pass
        ag = np.abs(g)
        for k in range(1, len(chain) - 1):
            if g[k] == 0.0:
                found.append((ss[k], tt[k], "special"))
                continue
            if not (ag[k] < ag[k - 1] and ag[k] < ag[k + 1]) or g[k - 1] * g[k + 1] < 0:
                continue
            fn = along(2)
            try:
                a, b = fn(tt[k - 1], k)[0], fn(tt[k + 1], k)[0]
                if a * b > 0:
                    continue
                t_star = brentq(lambda t: fn(t, k)[0], tt[k - 1], tt[k + 1], xtol=1e-14, maxiter=200)
                found.append((fn(t_star, k)[1], t_star, "special"))
            except (ValueError, RuntimeError):
                pass
    return found


def singular_set(surface: IntegralSurface, tol: float = LOCATE_TOL, dedupe: float = DEDUPE_TOL) -> list[SingularPoint]:
    """Locate singular points on the surface grid.

    Sign changes of lambda along grid edges are refined by bracketing;
    degenerate points are polished by Newton on grad(lambda) = 0; special
    points of the singular curve are added. Returned sorted by ``(t, s)``.
    """
    lam = LambdaField(surface)
    grid = lam.grid()
    edges, columns = _edge_roots(lam, grid, tol)
    candidates = _degenerate_seeds(lam, grid, tol) + _special_points(lam, columns, tol) + edges
    points: list[SingularPoint] = []
    for s, t, origin in candidates:
        if any(abs(p.s - s) <= dedupe * (1 + abs(s)) and abs(p.t - t) <= dedupe * (1 + abs(t)) for p in points):
            continue
        value = lam(s, t)
        if not np.isfinite(value) or abs(value) >= max(tol, 1e-8 if origin == "degenerate" else tol):
            continue
        points.append(SingularPoint(float(s), float(t), float(value), origin=origin))
    points.sort(key=lambda p: (p.t, p.s))
    return points


# ---------------------------------------------------------------------------
# classification


def front_jacobian(surface: IntegralSurface, s: float, t: float) -> tuple[np.ndarray, np.ndarray]:
    """3x2 front Jacobian and 5x2 jet-surface Jacobian at ``(s, t)``."""
    jet, ok = surface.jet_at(np.array([s]), np.array([t]))
    if not ok[0]:
        raise ArithmeticError(f"chart inverse failed at (s, t) = ({s}, {t})")
    fs, ft = closed_form_tangents(surface.sys, surface.mode, jet, surface.seed(np.array([t]), 2))
    pdot = np.atleast_1d(surface.p_dot(np.array([t])))[0]
    front = np.column_stack([fs[0], ft[0]])
    lift = np.column_stack([np.r_[fs[0], 0.0, 0.0], np.r_[ft[0], pdot, 1.0]])
    return front, lift


def unit_normal(surface: IntegralSurface, s: float, t: float) -> np.ndarray:
    """``(-p, -q, 1)`` normalized, from the lifted jet point."""
    jet, ok = surface.jet_at(np.array([s]), np.array([t]))
    if not ok[0]:
        raise ArithmeticError(f"chart inverse failed at (s, t) = ({s}, {t})")
    p, q = jet[0, 3], jet[0, 4]
    n = np.array([-p, -q, 1.0])
    return n / np.linalg.norm(n)


def degeneracy_test(surface: IntegralSurface, point, eps_zero: float = EPS_ZERO, scale: float = 1.0) -> bool:
    """True if the singular point is degenerate (grad lambda vanishes)."""
    s, t = point.location if isinstance(point, SingularPoint) else point
    d = derivatives(LambdaField(surface), s, t)
    eps = eps_zero * scale
    return not max(abs(d.ds), abs(d.dt)) > eps


def _conditions(d: Derivatives, degenerate: bool, rank_one: bool, eps: float) -> dict:
    nz = lambda v: abs(v) > eps  # noqa: E731
    z = lambda v: abs(v) <= eps  # noqa: E731
    cond = {
        CUSPIDAL_EDGE: (not degenerate) and nz(d.dt),
        SWALLOWTAIL: (not degenerate) and nz(d.ds) and z(d.dt) and nz(d.dtt),
        BUTTERFLY: (not degenerate) and nz(d.ds) and z(d.dt) and z(d.dtt) and nz(d.dttt),
        BEAKS: degenerate and d.det_hessian < -eps and nz(d.dtt) and rank_one,
    }
    return {k: bool(v) for k, v in cond.items()}


def classify_singularity(surface: IntegralSurface, point, eps_zero: float = EPS_ZERO, scale: float = 1.0,
                         lam: LambdaField | None = None) -> SingularPoint:
    """Classify one singular point; diagnostics are attached either way."""
    if not isinstance(point, SingularPoint):
        s, t = point
        point = SingularPoint(float(s), float(t), float(lambda_hat(surface, s, t)))
    lam = lam or LambdaField(surface)
    eps = eps_zero * scale
    try:
        d = derivatives(lam, point.s, point.t)
        front, lift = front_jacobian(surface, point.s, point.t)
    except ArithmeticError as exc:
        point.cls = UNCLASSIFIED
        point.diagnostics = {"reason": str(exc)}
        return point
    values = np.array([d.ds, d.dt, d.dtt, d.dttt, d.dss, d.dst])
    if not np.all(np.isfinite(values)):
        point.cls = UNCLASSIFIED
        point.diagnostics = {"reason": "finite-difference stencil left the chart"}
        return point
    sv_front = np.linalg.svd(front, compute_uv=False)
    sv_lift = np.linalg.svd(lift, compute_uv=False)
    rank_tol = 1e-6 * (1.0 + sv_front[0])
    rank_one = sv_front[0] > rank_tol and sv_front[1] <= rank_tol
    degenerate = not max(abs(d.ds), abs(d.dt)) > eps
    cond = _conditions(d, degenerate, rank_one, eps)
    # the four criteria are applied in order
    cls = next((c for c in (CUSPIDAL_EDGE, SWALLOWTAIL, BUTTERFLY, BEAKS) if cond[c]), UNCLASSIFIED)
    point.grad = (d.ds, d.dt)
    point.degenerate = degenerate
    point.cls = cls
    point.diagnostics = {
        "lambda_eta": d.dt,
        "lambda_etaeta": d.dtt,
        "lambda_etaetaeta": d.dttt,
        "lambda_ss": d.dss,
        "lambda_st": d.dst,
        "det_hessian": d.det_hessian,
        "front_sigma_min": float(sv_front[1]),
        "lift_sigma_min": float(sv_lift[1]),
        "conditions": cond,
    }
    return point


def analyze(surface: IntegralSurface, eps_zero: float = EPS_ZERO, locate_tol: float = LOCATE_TOL) -> SingularityReport:
    """Locate and classify every singular point on the surface."""
    lam = LambdaField(surface)
    grid = lam.grid()
    finite = grid[np.isfinite(grid)]
    scale = 1.0 + (float(np.max(np.abs(finite))) if finite.size else 0.0)
    points = singular_set(surface, locate_tol)
    for p in points:
        classify_singularity(surface, p, eps_zero, scale, lam)
    return SingularityReport(points, eps_zero, scale)
