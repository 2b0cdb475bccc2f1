"""Independent numerical checks of constructed solutions.

The primary gate is the discrete pullback residual: both generating
1-forms are evaluated on finite-difference tangents of the lifted jet grid,
so any inconsistency in the stored data shows up directly. Closed-form
tangent residuals and classical PDE residuals on graph patches are reported
alongside.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from gmae import symexpr as sx
from gmae.characteristics import IntegralSurface, SeedCurve, jet_field
from gmae.model import AlphaSystem
from gmae.symexpr import JET_VARS

# central first-derivative stencils by accuracy order
_FIRST = {
    6: (np.arange(-3, 4), np.array([-1, 9, -45, 0, 45, -9, 1]) / 60.0),
    4: (np.arange(-2, 3), np.array([1, -8, 0, 8, -1]) / 12.0),
    2: (np.arange(-1, 2), np.array([-1, 0, 1]) / 2.0),
}


class PreconditionError(ValueError):
    pass


class NotInjectiveError(ValueError):
    """The (X, Y) projection of a patch is not a graph."""


@dataclass
class ResidualSummary:
    max_contact_residual: float
    max_psi_residual: float
    max_fd_mismatch: float = float("nan")
    pde_residuals: tuple[float, float] | None = None
    closed_form_contact: float = float("nan")
    closed_form_psi: float = float("nan")
    nodes_checked: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("max_contact_residual", "max_psi_residual"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def passes(self, gate: float) -> bool:
        return self.max_contact_residual <= gate and self.max_psi_residual <= gate


def grid_derivative(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Central FD derivative along ``axis`` with the highest order the grid
    allows; NaN where the stencil is incomplete or touches a hole."""
    n = values.shape[axis]
    order = next((k for k in (6, 4, 2) if n >= len(_FIRST[k][0])), None)
    out = np.full(values.shape, np.nan)
    if order is None:
        # two nodes: a single forward difference, assigned to both
        if n == 2:
            d = np.diff(values, axis=axis) / h
            return np.concatenate([d, d], axis=axis)
        return out
    offsets, weights = _FIRST[order]
    r = offsets.max()
    acc = 0.0
    for o, w in zip(offsets, weights):
        # w = 0 at the centre, but 0 * NaN keeps holes masked
        acc = acc + w * np.take(values, np.arange(r + o, n - r + o), axis=axis)
    idx = [slice(None)] * values.ndim
    idx[axis] = slice(r, n - r)
    out[tuple(idx)] = acc / h
    return out


def discrete_residuals(sys: AlphaSystem, s_grid, t_grid, jet: np.ndarray) -> tuple[float, float, int]:
    """Max |w0(T)| and |Psi(T)| over FD tangents T of a jet grid."""
    s_grid = np.asarray(s_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    if len(s_grid) < 2 or len(t_grid) < 2 or np.isfinite(jet).all(axis=-1).sum() < 4:
        raise PreconditionError("need at least a 2x2 grid of valid nodes")
    hs, ht = s_grid[1] - s_grid[0], t_grid[1] - t_grid[0]
    alpha = jet_field(sys, "alpha", jet)
    p, q = jet[..., 3], jet[..., 4]
    contact, psi = [], []
    for axis, h in ((0, hs), (1, ht)):
        d = grid_derivative(jet, h, axis)
        contact.append(np.abs(d[..., 2] - p * d[..., 0] - q * d[..., 1]))
        psi.append(np.abs(d[..., 3] - alpha * d[..., 4]))
    c, s = np.stack(contact), np.stack(psi)
    ok = np.isfinite(c) & np.isfinite(s)
    if not ok.any():
        raise PreconditionError("no node has a complete finite-difference stencil")
    return float(c[ok].max()), float(s[ok].max()), int(ok.all(axis=0).sum())


def pullback_residuals(sys: AlphaSystem, surface) -> ResidualSummary:
    """Residuals of w0 and Psi on the tangents of a constructed surface.

    ``surface`` is an :class:`IntegralSurface` or any object with
    ``s_grid``, ``t_grid`` and ``jet`` attributes (e.g. reloaded from CSV).
    """
    contact, psi, nodes = discrete_residuals(sys, surface.s_grid, surface.t_grid, surface.jet)
    summary = ResidualSummary(contact, psi, nodes_checked=nodes)
    if isinstance(surface, IntegralSurface):
        ts, tt = surface.jet_tangents()
        jet = surface.jet
        alpha = jet_field(sys, "alpha", jet)
        p, q = jet[..., 3], jet[..., 4]
        with np.errstate(invalid="ignore"):
            cf_c = np.abs(np.stack([T[..., 2] - p * T[..., 0] - q * T[..., 1] for T in (ts, tt)]))
            cf_p = np.abs(np.stack([T[..., 3] - alpha * T[..., 4] for T in (ts, tt)]))
        summary.closed_form_contact = float(np.nanmax(cf_c))
        summary.closed_form_psi = float(np.nanmax(cf_p))
    return summary


def _patch_indices(grid: np.ndarray, lo: float, hi: float) -> np.ndarray:
    idx = np.flatnonzero((grid >= lo - 1e-12) & (grid <= hi + 1e-12))
    if len(idx) < 5:
        raise PreconditionError(f"patch [{lo}, {hi}] holds fewer than 5 grid lines")
    return idx


def pde_residual_on_graph(sys: AlphaSystem, surface, patch, min_slope: float = 1e-3) -> tuple[float, float]:
    """Max |z_xx - a z_xy| and |z_xy - a z_yy| over a graph patch.

    Parameters
    ----------
    patch : (s_lo, s_hi, t_lo, t_hi)
        Parameter window. Since X = s on both charts, each fixed-s line must
        be monotone in Y; it is resampled by a cubic spline onto a common
        regular y-grid, and second differences are taken on the result.

    Raises
    ------
    NotInjectiveError
        If Y_t changes sign or comes close to zero inside the patch.
    """
    s_lo, s_hi, t_lo, t_hi = patch
    i_idx = _patch_indices(surface.s_grid, s_lo, s_hi)
    j_idx = _patch_indices(surface.t_grid, t_lo, t_hi)
    jet = surface.jet[np.ix_(i_idx, j_idx)]
    if not np.isfinite(jet).all():
        raise PreconditionError("patch contains holes")
    X, Y, Z = jet[..., 0], jet[..., 1], jet[..., 2]
    if np.ptp(X, axis=1).max() > 1e-9 * (1 + np.abs(X).max()):
        raise PreconditionError("X is not constant along t-lines; expected X = s")
    ht = surface.t_grid[1] - surface.t_grid[0]
    dY = np.gradient(Y, ht, axis=1)
    scale = np.abs(dY).max()
    if not (np.all(dY > min_slope * scale) or np.all(dY < -min_slope * scale)) or scale == 0:
        raise NotInjectiveError("Y is not monotone along t inside the patch; the front is not a graph there")

    x = X[:, 0]
    y_lo = np.max(np.min(Y, axis=1))
    y_hi = np.min(np.max(Y, axis=1))
    if not y_lo < y_hi:
        raise NotInjectiveError("fixed-x slices of the patch do not overlap in y")
    ny = len(j_idx)
    y = np.linspace(y_lo, y_hi, ny)
    z = np.empty((len(x), ny))
    for k in range(len(x)):
        order = np.argsort(Y[k])
        z[k] = CubicSpline(Y[k, order], Z[k, order])(y)

    hx, hy = x[1] - x[0], y[1] - y[0]
    zc = z[1:-1, 1:-1]
    z_x = (z[2:, 1:-1] - z[:-2, 1:-1]) / (2 * hx)
    z_y = (z[1:-1, 2:] - z[1:-1, :-2]) / (2 * hy)
    z_xx = (z[2:, 1:-1] - 2 * zc + z[:-2, 1:-1]) / hx**2
    z_yy = (z[1:-1, 2:] - 2 * zc + z[1:-1, :-2]) / hy**2
    z_xy = (z[2:, 2:] - z[2:, :-2] - z[:-2, 2:] + z[:-2, :-2]) / (4 * hx * hy)
    xx, yy = np.meshgrid(x[1:-1], y[1:-1], indexing="ij")
    a = jet_field(sys, "alpha", np.stack([xx, yy, zc, z_x, z_y], axis=-1))
    r1 = np.abs(z_xx - a * z_xy)
    r2 = np.abs(z_xy - a * z_yy)
    return float(r1.max()), float(r2.max())


def fd_crosscheck_suite(sys: AlphaSystem, seed: SeedCurve | None = None, samples: int = 100, box=None,
                        h: float = 1e-5, rng_seed: int = 0) -> float:
    """Worst relative mismatch between cached symbolic derivatives and
    central differences of their antiderivative."""
    rng = np.random.default_rng(rng_seed)
    box = box or sx.DEFAULT_BOX
    pairs = [(sys.alpha, v, sys.first[v]) for v in JET_VARS]
    pairs += [(sys.first[u], v, e) for (u, v), e in sys.second.items()]
    worst = 0.0
    done = 0
    for _ in range(10 * samples):
        if done >= samples:
            break
        pt = sx.sample_point(box, rng)
        try:
            for f, v, df in pairs:
                exact = sx.evaluate(df, pt)
                up, down = dict(pt), dict(pt)
                up[v] += h
                down[v] -= h
                fd = (sx.evaluate(f, up) - sx.evaluate(f, down)) / (2 * h)
                worst = max(worst, abs(fd - exact) / (1.0 + abs(exact)))
        except sx.DomainError:
            continue
        done += 1
    if seed is not None:
        lo, hi = seed.t_range
        for t in rng.uniform(lo + 2 * h, hi - 2 * h, samples):
            for k in range(len(seed.derivs) - 1):
                exact = seed(t, k + 1)
                fd = (seed(t + h, k) - seed(t - h, k)) / (2 * h)
                if np.isfinite(exact) and np.isfinite(fd):
                    worst = max(worst, abs(fd - exact) / (1.0 + abs(exact)))
    return worst
