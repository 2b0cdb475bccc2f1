"""Geometric singular solutions by the method of characteristics.

Along a seed curve ``x4 = t`` the reduced system becomes a scalar ODE for
``mu(t)``:

* generic:      ``x1 = -xi'``, ``x2 = xi``, ``x3 = mu``,
  ``mu' = bar(alpha)(x0_ref, -xi', xi, mu, t)``
* non-generic:  ``x1 = xi'``, ``x3 = xi``, ``x2 = mu``,
  ``mu' = -bar(y + alpha x)(x0_ref, xi', mu, xi, t)``

The integral surface is the chart inverse of ``(s, curve(t))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gmae import symexpr as sx
from gmae.model import AlphaSystem
from gmae.reduction import (
    NEWTON_TOL,
    ChartExitError,
    _check_mode,
    base_function_check,
    phi_inverse,
    phi_inverse_batch,
)

DEFAULT_STEP = 1e-3
DEFAULT_X0_REF = 1.0
SEED_ORDER = 5


class BaseFunctionError(ValueError):
    """The right-hand side depends on the fiber coordinate x0."""


class IntegrationError(ArithmeticError):
    """The ODE right-hand side could not be evaluated."""

    def __init__(self, message: str, last_t: float):
        super().__init__(f"{message} (last valid t = {last_t:.17g})")
        self.last_t = last_t


def jet_field(sys: AlphaSystem, name: str, jet: np.ndarray) -> np.ndarray:
    """Vectorized evaluation of a named field on jet points of shape (..., 5)."""
    jet = np.asarray(jet, dtype=float)
    with np.errstate(all="ignore"):
        return sys.compiled(name, vectorized=True)(*np.moveaxis(jet, -1, 0))


class SeedCurve:
    """The seed function ``xi(t)`` with exact derivatives up to 5th order.

    Parameters
    ----------
    xi : Expr or str
        Expression in ``t`` only.
    t_range : (float, float)
    """

    def __init__(self, xi, t_range=(-1.0, 1.0)):
        xi = sx.parse(xi) if isinstance(xi, str) else sx.as_expr(xi)
        extra = xi.free_vars() - {"t"}
        if extra:
            raise ValueError(f"seed curve may only depend on t (got {sorted(extra)})")
        lo, hi = (float(v) for v in t_range)
        if not lo < hi:
            raise ValueError("t_range must be non-empty")
        self.t_range = (lo, hi)
        self.derivs = [xi]
        for _ in range(SEED_ORDER):
            self.derivs.append(sx.diff(self.derivs[-1], "t"))
        self._fns = [sx.compile_expr(d, ("t",), vectorized=True) for d in self.derivs]
        self._spot_check()

    @property
    def xi(self):
        return self.derivs[0]

    def __repr__(self):
        return f"SeedCurve({str(self.xi)!r}, t_range={self.t_range})"

    def __call__(self, t, order: int = 0):
        """``xi^(order)(t)``; accepts scalars or arrays."""
        if not 0 <= order <= SEED_ORDER:
            raise ValueError(f"order must be in 0..{SEED_ORDER}")
        with np.errstate(all="ignore"):
            out = self._fns[order](np.asarray(t, dtype=float))
        return float(out) if np.ndim(out) == 0 else out

    def _spot_check(self, h: float = 1e-5) -> None:
        lo, hi = self.t_range
        for t in np.linspace(lo, hi, 5)[1:-1]:
            for k in range(2):
                fd = (self(t + h, k) - self(t - h, k)) / (2 * h)
                exact = self(t, k + 1)
                if not np.isfinite(exact):
                    continue
                if abs(fd - exact) > 1e-5 * (1.0 + abs(exact)):
                    raise ArithmeticError(f"seed derivative {k + 1} inconsistent at t={t}")


def _targets(mode: str, x0, t, xi, dxi, mu) -> np.ndarray:
    """Reduced points for curve data, broadcast over arrays."""
    x0, t, xi, dxi, mu = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x0, t, xi, dxi, mu)))
    if mode == "generic":
        cols = (x0, -dxi, xi, mu, t)
    else:
        cols = (x0, dxi, mu, xi, t)
    return np.stack(cols, axis=-1)


class _Rhs:
    """ODE right-hand side ``mu' = f(t, mu)`` at the fiber ``x0_ref``."""

    def __init__(self, sys: AlphaSystem, mode: str, seed: SeedCurve, x0_ref: float, tol: float = NEWTON_TOL):
        self.sys, self.mode, self.seed, self.x0_ref, self.tol = sys, mode, seed, x0_ref, tol
        self.field = "alpha" if mode == "generic" else "beta"
        self.sign = 1.0 if mode == "generic" else -1.0

    def jets(self, t, mu, guess_yz=None):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        targets = _targets(self.mode, self.x0_ref, t, self.seed(t), self.seed(t, 1), mu)
        shape = targets.shape[:-1]
        jets, ok = phi_inverse_batch(self.sys, self.mode, targets.reshape(-1, 5),
                                     None if guess_yz is None else np.asarray(guess_yz).reshape(-1, 2), self.tol)
        return jets.reshape(shape + (5,)), ok.reshape(shape)

    def scalar(self, t: float, mu: float, guess=None):
        """Scalar fast path; returns (value, jet point) or raises."""
        targets = _targets(self.mode, self.x0_ref, t, self.seed(t), self.seed(t, 1), mu)
        pt = phi_inverse(self.sys, self.mode, targets, guess, self.tol)
        try:
            value = self.sign * self.sys.compiled(self.field)(*pt.as_array())
        except (ZeroDivisionError, ValueError, OverflowError) as exc:
            raise sx.DomainError(str(exc), self.sys.field(self.field)) from exc
        return value, pt

    def __call__(self, t, mu, guess_yz=None):
        jets, ok = self.jets(t, mu, guess_yz)
        vals = self.sign * jet_field(self.sys, self.field, jets)
        return vals, jets, ok & np.isfinite(vals)


@dataclass
class MuSolution:
    """Fixed-step RK4 solution of the reduced ODE.

    Calling the object evaluates ``mu`` between nodes by a partial RK4 step
    from the node below, which is smooth inside each cell and carries the
    same local accuracy as the nodes themselves. :meth:`hermite` gives the
    cubic Hermite interpolant of the stored values and slopes.
    """

    nodes: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    step: float
    t0: float
    mu0: float
    mode: str
    x0_ref: float
    node_yz: np.ndarray = field(repr=False)
    rhs: _Rhs = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def t_range(self) -> tuple[float, float]:
        return float(self.nodes[0]), float(self.nodes[-1])

    def _cell(self, t: np.ndarray) -> np.ndarray:
        lo, hi = self.t_range
        if np.any(t < lo - 1e-12) or np.any(t > hi + 1e-12):
            raise ValueError(f"t outside integrated range [{lo}, {hi}]")
        k = np.floor((t - lo) / self.step + 1e-9).astype(int)
        return np.clip(k, 0, len(self.nodes) - 2)

    def __call__(self, t):
        scalar = np.ndim(t) == 0
        if scalar:
            key = float(t)
            hit = self._cache.get(key)
            if hit is not None:
                return hit
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = self._cell(t)
        base_t, base_mu = self.nodes[k], self.values[k]
        h = t - base_t
        out = _rk4_step(self.rhs, base_t, base_mu, h, self.node_yz[k], slope=self.slopes[k])[0]
        if scalar:
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = float(out[0])
            return float(out[0])
        return out

    def derivative(self, t):
        """``mu'(t)`` from the right-hand side at the interpolated value."""
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = self._cell(t)
        vals, _, _ = self.rhs(t, self(t), self.node_yz[k])
        return float(vals[0]) if scalar else vals

    def hermite(self, t):
        t = np.asarray(t, dtype=float)
        k = self._cell(np.atleast_1d(t))
        u = (np.atleast_1d(t) - self.nodes[k]) / self.step
        h00, h10 = 2 * u**3 - 3 * u**2 + 1, u**3 - 2 * u**2 + u
        h01, h11 = -2 * u**3 + 3 * u**2, u**3 - u**2
        out = (h00 * self.values[k] + h10 * self.step * self.slopes[k]
               + h01 * self.values[k + 1] + h11 * self.step * self.slopes[k + 1])
        return float(out[0]) if t.ndim == 0 else out


def _rk4_step(rhs: _Rhs, t, mu, h, guess_yz, slope=None):
    """One classical RK4 step; arrays allowed. Returns (mu_new, ok)."""
    t, mu, h = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (t, mu, h))
    ok = np.ones(t.shape, dtype=bool)
    if slope is None:
        k1, jets, good = rhs(t, mu, guess_yz)
        ok &= good
    else:
        k1 = np.atleast_1d(slope)
    k2, jets, good = rhs(t + h / 2, mu + h / 2 * k1, guess_yz)
    ok &= good
    k3, _, good = rhs(t + h / 2, mu + h / 2 * k2, jets[..., 1:3])
    ok &= good
    k4, _, good = rhs(t + h, mu + h * k3, jets[..., 1:3])
    ok &= good
    return mu + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4), ok


def integrate_mu(sys: AlphaSystem, mode: str, seed: SeedCurve, mu0: float, t0: float = 0.0,
                 step: float = DEFAULT_STEP, t_range=None, x0_ref: float = DEFAULT_X0_REF,
                 check_base: bool = True, newton_tol: float = NEWTON_TOL) -> MuSolution:
    """Integrate the reduced ODE from ``(t0, mu0)`` over ``t_range``.

    Nodes are ``t0 + k * step``; the range is widened to the enclosing
    nodes. The bar-function on the right-hand side is evaluated on the fiber
    ``x0 = x0_ref``, which is legitimate because it does not depend on x0;
    that independence is checked once near the initial point unless
    ``check_base`` is false.

    Raises
    ------
    IntegrationError
        If the right-hand side fails mid-integration.
    """
    _check_mode(mode)
    if not step > 0:
        raise ValueError("step must be positive")
    lo, hi = seed.t_range if t_range is None else (float(t_range[0]), float(t_range[1]))
    if not lo <= t0 <= hi:
        raise ValueError(f"t0={t0} outside t_range [{lo}, {hi}]")
    rhs = _Rhs(sys, mode, seed, float(x0_ref), newton_tol)

    slope0, jets0, ok0 = rhs(t0, mu0)
    if not ok0[0]:
        raise IntegrationError("right-hand side not evaluable at the initial point", t0)
    if check_base:
        _check_base(sys, mode, jets0[0])

    n_fwd = int(np.ceil((hi - t0) / step - 1e-9))
    n_bwd = int(np.ceil((t0 - lo) / step - 1e-9))
    nodes = t0 + step * np.arange(-n_bwd, n_fwd + 1)
    values = np.empty(len(nodes))
    slopes = np.empty(len(nodes))
    node_yz = np.empty((len(nodes), 2))
    values[n_bwd], slopes[n_bwd], node_yz[n_bwd] = mu0, slope0[0], jets0[0, 1:3]

    for direction, indices in ((1, range(n_bwd + 1, len(nodes))), (-1, range(n_bwd - 1, -1, -1))):
        for i in indices:
            prev = i - direction
            t, m, k1 = nodes[prev], values[prev], slopes[prev]
            h = direction * step
            guess = {"x": x0_ref, "y": node_yz[prev, 0], "z": node_yz[prev, 1], "p": 0.0, "q": 0.0}
            try:
                k2, pt = rhs.scalar(t + h / 2, m + h / 2 * k1, guess)
                k3, pt = rhs.scalar(t + h / 2, m + h / 2 * k2, pt)
                k4, pt = rhs.scalar(t + h, m + h * k3, pt)
                new = m + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                slope, pt = rhs.scalar(nodes[i], new, pt)
            except (sx.DomainError, ChartExitError) as exc:
                raise IntegrationError(f"right-hand side not evaluable: {exc}", float(t)) from exc
            values[i], slopes[i], node_yz[i] = new, slope, (pt.y, pt.z)
    return MuSolution(nodes, values, slopes, step, float(t0), float(mu0), mode, float(x0_ref), node_yz, rhs)


def _check_base(sys: AlphaSystem, mode: str, jet: np.ndarray, radius: float = 0.1) -> None:
    box = {v: (c - radius, c + radius) for v, c in zip("xyzpq", jet)}
    f = sys.alpha if mode == "generic" else sys.beta
    if not base_function_check(sys, mode, f, box=box, samples=5):
        raise BaseFunctionError(f"the bar-function of {f} depends on the fiber coordinate; reduction is invalid")


def closed_form_tangents(sys: AlphaSystem, mode: str, jet: np.ndarray, xi2: np.ndarray):
    """Front tangents ``(dF/ds, dF/dt)`` at jet points of shape (..., 5).

    ``xi2`` is ``xi''(t)`` broadcast to the grid. Both vectors come from the
    closed-form derivatives of the chart inverse along the surface.
    """
    _check_mode(mode)
    jet = np.asarray(jet, dtype=float)
    x, p, q = jet[..., 0], jet[..., 3], jet[..., 4]
    zero, one = np.zeros_like(x), np.ones_like(x)
    if mode == "generic":
        a = jet_field(sys, "alpha", jet)
        rho = jet_field(sys, "rho", jet)
        lam = xi2 + jet_field(sys, "K", jet)
        fs = np.stack([one, -a, p - a * q], axis=-1)
        ft = np.stack([zero, -rho * lam, -rho * q * lam], axis=-1)
    else:
        w = x * (jet_field(sys, "alpha_x", jet) + p * jet_field(sys, "alpha_z", jet))
        lam = jet_field(sys, "L", jet) - xi2
        fs = np.stack([one, w, p + q * w], axis=-1)
        ft = np.stack([zero, x * lam, q * x * lam], axis=-1)
    return fs, ft


@dataclass
class IntegralSurface:
    """A discretized integral surface over an ``(s, t)`` grid.

    Attributes
    ----------
    jet : ndarray, shape (n_s, n_t, 5)
        Lifted jet points; NaN where the chart inverse failed.
    mask : ndarray of bool, shape (n_s, n_t)
        True at valid nodes.
    """

    sys: AlphaSystem
    mode: str
    seed: SeedCurve
    mu: MuSolution
    s_grid: np.ndarray
    t_grid: np.ndarray
    jet: np.ndarray
    mask: np.ndarray
    newton_tol: float = NEWTON_TOL

    @property
    def front(self) -> np.ndarray:
        return self.jet[..., :3]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.s_grid), len(self.t_grid)

    @property
    def holes(self) -> int:
        return int((~self.mask).sum())

    def targets(self, s, t) -> np.ndarray:
        """Reduced-coordinate tuples for parameters ``(s, t)``."""
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        return _targets(self.mode, s, t, self.seed(t), self.seed(t, 1), self.mu(t.ravel()).reshape(t.shape))

    def p_dot(self, t) -> np.ndarray:
        """``d p / dt`` along the surface (x3 is mu or xi depending on mode)."""
        return self.mu.derivative(t) if self.mode == "generic" else self.seed(t, 1)

    def tangents(self):
        """Closed-form front tangents on the grid, each of shape (n_s, n_t, 3)."""
        xi2 = np.broadcast_to(self.seed(self.t_grid, 2), self.shape)
        return closed_form_tangents(self.sys, self.mode, self.jet, xi2)

    def jet_tangents(self):
        """5-dimensional tangents of the jet surface (n_s, n_t, 5) each."""
        fs, ft = self.tangents()
        pdot = np.broadcast_to(np.atleast_1d(self.p_dot(self.t_grid)), self.shape)
        ts = np.concatenate([fs, np.zeros(self.shape + (2,))], axis=-1)
        tt = np.concatenate([ft, pdot[..., None], np.ones(self.shape + (1,))], axis=-1)
        return ts, tt

    def nearest_node(self, s, t):
        i = np.clip(np.searchsorted(self.s_grid, s), 0, len(self.s_grid) - 1)
        j = np.clip(np.searchsorted(self.t_grid, t), 0, len(self.t_grid) - 1)
        i_lo, j_lo = np.maximum(i - 1, 0), np.maximum(j - 1, 0)
        i = np.where(np.abs(self.s_grid[i_lo] - s) < np.abs(self.s_grid[i] - s), i_lo, i)
        j = np.where(np.abs(self.t_grid[j_lo] - t) < np.abs(self.t_grid[j] - t), j_lo, j)
        return i, j

    def jet_at(self, s, t):
        """Jet points at arbitrary parameters, warm-started from the nearest
        valid grid node. Returns ``(jet, ok)`` with broadcast shapes."""
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        targets = self.targets(s, t)
        i, j = self.nearest_node(s, t)
        guess = self.jet[i, j][..., 1:3]
        if np.isnan(guess).any():
            fallback, _ = phi_inverse_batch(self.sys, self.mode, targets.reshape(-1, 5), tol=self.newton_tol)
            guess = np.where(np.isnan(guess), fallback.reshape(guess.shape[:-1] + (5,))[..., 1:3], guess)
        guess = np.where(np.isnan(guess), 0.0, guess)
        jets, ok = phi_inverse_batch(self.sys, self.mode, targets.reshape(-1, 5), guess.reshape(-1, 2),
                                     self.newton_tol)
        return jets.reshape(targets.shape), ok.reshape(s.shape)


def build_surface(sys: AlphaSystem, mode: str, seed: SeedCurve, mu: MuSolution, s_grid, t_grid,
                  newton_tol: float = NEWTON_TOL) -> IntegralSurface:
    """Lift the grid ``s_grid x t_grid`` through the chart inverse.

    Columns of fixed ``t`` are solved together, each warm-started from the
    previous column; nodes where Newton fails are masked as holes.
    """
    _check_mode(mode)
    if mode != mu.mode:
        raise ValueError("MuSolution was integrated in a different mode")
    s_grid = np.asarray(s_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    if s_grid.ndim != 1 or t_grid.ndim != 1 or len(s_grid) < 1 or len(t_grid) < 1:
        raise ValueError("grids must be non-empty 1-D arrays")
    lo, hi = mu.t_range
    if t_grid.min() < lo - 1e-12 or t_grid.max() > hi + 1e-12:
        raise ValueError(f"t grid leaves the integrated range [{lo}, {hi}]")
    n_s, n_t = len(s_grid), len(t_grid)
    jet = np.full((n_s, n_t, 5), np.nan)
    mask = np.zeros((n_s, n_t), dtype=bool)
    mu_vals = mu(t_grid)
    prev = None
    for j, t in enumerate(t_grid):
        targets = _targets(mode, s_grid, t, seed(t), seed(t, 1), mu_vals[j])
        guess = None if prev is None else np.where(np.isnan(prev), 0.0, prev)
        col, ok = phi_inverse_batch(sys, mode, targets, guess, newton_tol)
        if guess is not None and not ok.all():
            cold, ok_cold = phi_inverse_batch(sys, mode, targets[~ok], tol=newton_tol)
            col[~ok], ok[~ok] = cold, ok_cold
        jet[:, j], mask[:, j] = col, ok
        if ok.any():
            prev = np.where(ok[:, None], col[:, 1:3], np.nan if prev is None else prev)
    return IntegralSurface(sys, mode, seed, mu, s_grid, t_grid, jet, mask, newton_tol)


def solve_surface(sys: AlphaSystem, mode: str, xi, mu0: float, s_range, t_range, grid,
                  t0: float = 0.0, step: float = DEFAULT_STEP, x0_ref: float = DEFAULT_X0_REF,
                  newton_tol: float = NEWTON_TOL) -> IntegralSurface:
    """Convenience pipeline: seed curve, ODE and surface on a uniform grid."""
    seed = xi if isinstance(xi, SeedCurve) else SeedCurve(xi, t_range)
    lo, hi = t_range
    # margin so finite-difference stencils near the edge stay inside
    pad = 0.02 * (hi - lo) + 0.01
    seed = SeedCurve(seed.xi, (min(lo, t0) - pad, max(hi, t0) + pad))
    mu = integrate_mu(sys, mode, seed, mu0, t0, step, seed.t_range, x0_ref, newton_tol=newton_tol)
    s_grid = np.linspace(s_range[0], s_range[1], grid[0])
    t_grid = np.linspace(lo, hi, grid[1])
    return build_surface(sys, mode, seed, mu, s_grid, t_grid, newton_tol)
