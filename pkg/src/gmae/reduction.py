"""Cauchy-characteristic reduction: first-integral charts, their local
inverses, bar-functions and the reduced Pfaffian generators.

Two charts are used, both with fiber coordinate ``x0 = x``:

* generic      ``(x, y + a x, z - p x - q y, p, q)``
* non-generic  ``(x, a,       z - p x - q y, p, q)``

Since ``x``, ``p`` and ``q`` are copied verbatim, inversion reduces to a
2x2 Newton solve for ``(y, z)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gmae import symexpr as sx
from gmae.classify import GENERIC, NONGENERIC, genericity_test
from gmae.model import AlphaSystem, JetPoint, _point_dict
from gmae.symexpr import JET_VARS, Expr

MODES = ("generic", "nongeneric")
NEWTON_TOL = 1e-12
MAX_ITER = 50
SINGULAR_DET = 1e-14


class ChartExitError(ArithmeticError):
    """Newton inversion left the chart (divergence or singular Jacobian)."""


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


@dataclass(frozen=True)
class ReducedPoint:
    """Leaf-space coordinates ``x1..x4`` plus the fiber coordinate ``x0``."""

    x0: float
    x1: float
    x2: float
    x3: float
    x4: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError(f"non-finite reduced point {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x0, self.x1, self.x2, self.x3, self.x4], dtype=float)

    @classmethod
    def from_array(cls, a) -> "ReducedPoint":
        return cls(*(float(v) for v in a))


def forward_components(sys: AlphaSystem, mode: str) -> tuple[Expr, ...]:
    """Symbolic components of the chart map."""
    _check_mode(mode)
    x, y, z, p, q = (sx.Var(v) for v in JET_VARS)
    x1 = sys.beta if mode == "generic" else sys.alpha
    return (x, x1, z - p * x - q * y, p, q)


def phi_forward(sys: AlphaSystem, mode: str, pt) -> ReducedPoint:
    _check_mode(mode)
    d = _point_dict(pt)
    a = sx.evaluate(sys.alpha, d)
    x1 = d["y"] + a * d["x"] if mode == "generic" else a
    return ReducedPoint(d["x"], x1, d["z"] - d["p"] * d["x"] - d["q"] * d["y"], d["p"], d["q"])


def forward_jacobian(sys: AlphaSystem, mode: str, pt) -> np.ndarray:
    """5x5 Jacobian of the chart map at ``pt`` (rows x0..x4, columns x..q)."""
    d = _point_dict(pt)
    comps = forward_components(sys, mode)
    return np.array([[sx.evaluate(sx.diff(c, v), d) for v in JET_VARS] for c in comps])


def _as_target(target) -> np.ndarray:
    if isinstance(target, ReducedPoint):
        return target.as_array()
    return np.asarray(target, dtype=float)


def _residual_and_jacobian(sys, mode, x, y, z, p, q, x1, x2):
    """Residual (r1, r2) and 2x2 Jacobian in (y, z); works elementwise on arrays."""
    vec = isinstance(y, np.ndarray)
    try:
        a = sys.compiled("alpha", vec)(x, y, z, p, q)
        ay = sys.compiled("alpha_y", vec)(x, y, z, p, q)
        az = sys.compiled("alpha_z", vec)(x, y, z, p, q)
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        raise sx.DomainError(f"alpha not evaluable at y={y}, z={z}: {exc}", sys.alpha) from exc
    r2 = z - p * x - q * y - x2
    if mode == "generic":
        r1 = y + a * x - x1
        j11, j12 = 1.0 + x * ay, x * az
    else:
        r1 = a - x1
        j11, j12 = ay, az
    # second row is (-q, 1)
    return r1, r2, j11, j12


def phi_inverse(sys: AlphaSystem, mode: str, target, guess=None, tol: float = NEWTON_TOL,
                max_iter: int = MAX_ITER) -> JetPoint:
    """Solve ``phi_forward(pt) = target`` by damped Newton on ``(y, z)``.

    Parameters
    ----------
    target : ReducedPoint or sequence of 5 floats
        ``(x0, x1, x2, x3, x4)``.
    guess : JetPoint, optional
        Warm start. Without one, ``y`` starts at ``x1`` (generic) or 0
        (non-generic) and ``z`` from the linear second equation.

    Raises
    ------
    ChartExitError
        On a singular Jacobian or no convergence within ``max_iter``.
    """
    _check_mode(mode)
    x0, x1, x2, x3, x4 = _as_target(target)
    x, p, q = x0, x3, x4
    if guess is not None:
        y, z = _point_dict(guess)["y"], _point_dict(guess)["z"]
    else:
        y = x1 if mode == "generic" else 0.0
        z = x2 + p * x + q * y
    scale = 1.0 + max(abs(x1), abs(x2))

    def norm(y, z):
        r1, r2, *_ = _residual_and_jacobian(sys, mode, x, y, z, p, q, x1, x2)
        return max(abs(r1), abs(r2)), r1, r2

    try:
        res, r1, r2 = norm(y, z)
        for _ in range(max_iter):
            _, _, j11, j12 = _residual_and_jacobian(sys, mode, x, y, z, p, q, x1, x2)
            det = j11 + q * j12
            if abs(det) < SINGULAR_DET:
                raise ChartExitError(f"singular chart Jacobian (det={det:.3e}) at y={y}, z={z}")
            # [[j11, j12], [-q, 1]] @ (dy, dz) = -(r1, r2)
            dy = (-r1 + j12 * r2) / det
            dz = -r2 + q * dy
            lam = 1.0
            while True:
                yn, zn = y + lam * dy, z + lam * dz
                try:
                    new, r1n, r2n = norm(yn, zn)
                except sx.DomainError:
                    new = np.inf
                if new < res or lam < 1e-4 or new <= tol * scale:
                    break
                lam *= 0.5
            if not np.isfinite(new):
                raise ChartExitError("Newton step left the domain of alpha")
            step = max(abs(yn - y), abs(zn - z))
            y, z, res, r1, r2 = yn, zn, new, r1n, r2n
            if res <= tol * scale and step <= 1e-8 * (1.0 + abs(y) + abs(z)):
                return JetPoint(x, y, z, p, q)
    except sx.DomainError as exc:
        raise ChartExitError(f"alpha not evaluable during inversion: {exc}") from exc
    raise ChartExitError(f"Newton did not converge in {max_iter} iterations (residual {res:.3e})")


def phi_inverse_batch(sys: AlphaSystem, mode: str, targets: np.ndarray, guess_yz: np.ndarray | None = None,
                      tol: float = NEWTON_TOL, max_iter: int = MAX_ITER) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized inversion of ``targets`` with shape (N, 5).

    Returns the jet points (N, 5) and a boolean mask of converged rows.
    Rows that fail are left as NaN rather than extrapolated.
    """
    _check_mode(mode)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    x, x1, x2, p, q = targets.T
    if guess_yz is None:
        y = x1.copy() if mode == "generic" else np.zeros_like(x1)
        z = x2 + p * x + q * y
    else:
        y, z = (np.array(c, dtype=float) for c in np.asarray(guess_yz).T)
    scale = 1.0 + np.maximum(np.abs(x1), np.abs(x2))
    done = np.zeros(len(x), dtype=bool)
    failed = np.zeros(len(x), dtype=bool)
    with np.errstate(all="ignore"):
        for _ in range(max_iter):
            live = ~(done | failed)
            if not live.any():
                break
            r1, r2, j11, j12 = _residual_and_jacobian(sys, mode, x, y, z, p, q, x1, x2)
            res = np.maximum(np.abs(r1), np.abs(r2))
            det = j11 + q * j12
            bad = live & (~np.isfinite(res) | (np.abs(det) < SINGULAR_DET))
            failed |= bad
            live &= ~bad
            dy = np.where(live, (-r1 + j12 * r2) / det, 0.0)
            dz = np.where(live, -r2 + q * dy, 0.0)
            lam = np.ones_like(y)
            for _ in range(14):
                r1n, r2n, *_ = _residual_and_jacobian(sys, mode, x, y + lam * dy, z + lam * dz, p, q, x1, x2)
                new = np.maximum(np.abs(r1n), np.abs(r2n))
                shrink = live & ~((new < res) | (new <= tol * scale)) & (lam >= 1e-4)
                if not shrink.any():
                    break
                lam = np.where(shrink, 0.5 * lam, lam)
            step = lam * np.maximum(np.abs(dy), np.abs(dz))
            y = np.where(live, y + lam * dy, y)
            z = np.where(live, z + lam * dz, z)
            r1, r2, *_ = _residual_and_jacobian(sys, mode, x, y, z, p, q, x1, x2)
            res = np.maximum(np.abs(r1), np.abs(r2))
            conv = live & (res <= tol * scale) & (step <= 1e-8 * (1.0 + np.abs(y) + np.abs(z)))
            done |= conv
            failed |= live & ~np.isfinite(res)
    out = np.column_stack([x, y, z, p, q])
    out[~done] = np.nan
    return out, done


def bar_eval(sys: AlphaSystem, mode: str, f, target, guess=None) -> float:
    """``f`` composed with the chart inverse, evaluated at ``target``."""
    pt = phi_inverse(sys, mode, target, guess)
    return sx.evaluate(sx.as_expr(f), pt.as_dict())


def base_function_check(sys: AlphaSystem, mode: str, f, box=None, samples: int = 20, h: float = 1e-5,
                        tol: float = 1e-6, seed: int = 0) -> bool:
    """True iff the x0-derivative of the bar-function of ``f`` vanishes.

    Targets are generated by pushing random jet points of ``box`` through the
    chart map, so each lies in the chart; the derivative in ``x0`` is a
    central difference with step ``h`` warm-started from that jet point.
    """
    _check_mode(mode)
    f = sx.as_expr(f)
    rng = np.random.default_rng(seed)
    box = box or sx.DEFAULT_BOX
    checked = 0
    for _ in range(10 * samples):
        if checked >= samples:
            break
        d = sx.sample_point(box, rng)
        try:
            target = phi_forward(sys, mode, d).as_array()
            vals = []
            for sign in (1.0, -1.0):
                shifted = target.copy()
                shifted[0] += sign * h
                vals.append(bar_eval(sys, mode, f, shifted, guess=d))
        except (sx.DomainError, ChartExitError):
            continue
        checked += 1
        if abs(vals[0] - vals[1]) / (2 * h) >= tol:
            return False
    if checked == 0:
        raise sx.DomainError("no evaluable samples for the base-function check", f)
    return True


@dataclass(frozen=True)
class ReducedForm:
    """A 1-form ``dx_k + c dx4`` on the leaf space.

    ``kind`` is ``"x1"`` when ``c`` is the leaf coordinate x1, or ``"bar"``
    when ``c`` is the bar-function of ``expr``; ``sign`` multiplies ``c``.
    """

    lead: int
    kind: str
    expr: Expr | None = None
    sign: float = 1.0

    def label(self) -> str:
        if self.kind == "bar":
            coeff = f"bar({self.expr})"
            return f"dx{self.lead} {'+' if self.sign > 0 else '-'} {coeff}*dx4"
        return f"dx{self.lead} {'+' if self.sign > 0 else '-'} x1*dx4"

    def coefficients(self, sys: AlphaSystem, mode: str, target, guess=None) -> np.ndarray:
        """Coefficient vector in the basis dx0..dx4 at ``target``."""
        t = _as_target(target)
        out = np.zeros(5)
        out[self.lead] = 1.0
        if self.kind == "bar":
            out[4] = self.sign * bar_eval(sys, mode, self.expr, t, guess)
        else:
            out[4] = self.sign * t[1]
        return out

    def pullback(self, sys: AlphaSystem, mode: str, pt) -> np.ndarray:
        """Coefficients in dx, dy, dz, dp, dq of the pullback through the chart."""
        d = _point_dict(pt)
        target = phi_forward(sys, mode, d)
        return self.coefficients(sys, mode, target, guess=d) @ forward_jacobian(sys, mode, d)


@dataclass(frozen=True)
class ReducedGenerators:
    mode: str
    xi1: ReducedForm
    xi2: ReducedForm

    def __str__(self):
        return f"{{{self.xi1.label()}, {self.xi2.label()}}}"


def reduced_generators(sys: AlphaSystem, mode: str, box=None, check: bool = True) -> ReducedGenerators:
    """Generators of the reduced Pfaffian system.

    generic: ``dx2 + x1 dx4``, ``dx3 - bar(a) dx4``;
    non-generic: ``dx2 + bar(y + a x) dx4``, ``dx3 - x1 dx4``.
    """
    _check_mode(mode)
    if check:
        found = genericity_test(sys, box).verdict
        expected = GENERIC if mode == "generic" else NONGENERIC
        if found != expected:
            raise ValueError(f"mode {mode!r} does not match the system, which is {found}")
    if mode == "generic":
        return ReducedGenerators(mode, ReducedForm(2, "x1"), ReducedForm(3, "bar", sys.alpha, -1.0))
    return ReducedGenerators(mode, ReducedForm(2, "bar", sys.beta, 1.0), ReducedForm(3, "x1", None, -1.0))
