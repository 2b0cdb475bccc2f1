"""Classification of the GMAS: Cauchy-characteristic dimension, involutive
and generic type, and derived type of the reduced system."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gmae import symexpr as sx
from gmae.model import (
    AlphaSystem,
    ChartError,
    GeneralGmas,
    JetPoint,
    _point_dict,
    constraint_plane,
    exterior_d_contact,
    reduced_derivative,
)
from gmae.symexpr import JET_VARS, Expr

EPS_ZERO = 1e-9

YES, NO, POINTWISE = "yes", "no", "pointwise-only"
GENERIC, NONGENERIC, MIXED = "generic", "non-generic", "mixed"
TYPE_23, TYPE_234, UNDETERMINED = "(2,3)", "(2,3,4)", "undetermined"


class PreconditionError(ValueError):
    """A classification step was asked for outside its domain of validity."""


@dataclass
class GenericityResult:
    verdict: str
    min_abs_G: float
    witnesses: dict = field(default_factory=dict)

    def __eq__(self, other):
        if isinstance(other, str):
            return self.verdict == other
        return NotImplemented

    def __str__(self):
        return self.verdict


@dataclass
class DerivedTypeResult:
    verdict: str
    discriminants: dict  # name -> max |value| over the probes
    values: dict = field(default_factory=dict)  # name -> array of probe values

    def __eq__(self, other):
        if isinstance(other, str):
            return self.verdict == other
        return NotImplemented

    def __str__(self):
        return self.verdict


@dataclass
class ClassificationReport:
    involutive: str
    genericity: GenericityResult
    derived_type: DerivedTypeResult | None
    cauchy_dim_at: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.derived_type is not None and self.derived_type.verdict != UNDETERMINED:
            if self.involutive != YES:
                raise ValueError("derived type requires an involutive system")


# ---------------------------------------------------------------------------
# general system


def cauchy_conditions(g: GeneralGmas, case: str) -> tuple[Expr, Expr]:
    """The two expressions whose simultaneous vanishing gives dim Ch(I) = 1,
    assembled from reduced derivatives in the selected case."""
    A, B, C, D = g.A, g.B, g.C, g.D

    def r(f, which):
        return reduced_derivative(f, g, case, which)

    if case == "A":
        inner = r(B, "y") - r(D, "q") - (r(A, "y") * B - D * r(A, "q")) / A
        c1 = r(B, "x") - r(C, "q") - (r(A, "x") * B - C * r(A, "q")) / A + B / A * inner
        c2 = r(D, "x") - r(C, "y") - (r(A, "x") * D - r(A, "y") * C) / A + D / A * inner
    elif case == "B":
        inner = r(A, "x") - r(C, "p") - (r(B, "x") * A - C * r(B, "p")) / B
        c1 = r(D, "x") - r(C, "y") - (r(B, "x") * D - r(B, "y") * C) / B - C / B * inner
        c2 = r(A, "y") - r(D, "p") - (r(B, "y") * A - D * r(B, "p")) / B + A / B * inner
    elif case == "C":
        # the inner bracket needs D_{q,C}, not C_{q,C}; only this form agrees
        # with the intrinsic oracle
        inner = r(B, "y") - r(D, "q") - (r(C, "y") * B - r(C, "q") * D) / C
        c1 = r(A, "y") - r(D, "p") - (r(C, "y") * A - r(C, "p") * D) / C + D / C * inner
        c2 = r(B, "p") - r(A, "q") - (r(C, "p") * B - r(C, "q") * A) / C - B / C * inner
    elif case == "D":
        inner = r(A, "x") - r(C, "p") - (r(D, "x") * A - r(D, "p") * C) / D
        c1 = r(B, "x") - r(C, "q") - (r(D, "x") * B - r(D, "q") * C) / D + C / D * inner
        c2 = r(B, "p") - r(A, "q") - (r(D, "p") * B - r(D, "q") * A) / D + A / D * inner
    else:
        raise ValueError(f"unknown case {case!r}")
    return c1, c2


def cauchy_dim_general(g: GeneralGmas, case: str, pt, tol: float = EPS_ZERO) -> int:
    """1 if the case's Cauchy condition holds at ``pt`` (scale-aware), else 0."""
    d = _point_dict(pt)
    if sx.evaluate(g.coefficient(case), d) == 0.0:
        raise PreconditionError(f"coefficient {case} vanishes at {d}")
    for c in cauchy_conditions(g, case):
        value, scale = sx.evaluate_with_scale(c, d)
        if abs(value) > tol * (1.0 + scale):
            return 0
    return 1


def cauchy_dim_intrinsic(g: GeneralGmas, pt, tol: float = EPS_ZERO) -> int:
    """Coordinate-free check of dim Ch(I) = 1.

    On the 3-plane P = {w0 = Psi = 0} both dw0 and dPsi restrict to 2-forms;
    a common kernel vector exists iff the restrictions are proportional.
    Used as an independent oracle for :func:`cauchy_dim_general`.
    """
    d = _point_dict(pt)
    plane = constraint_plane(g, d)
    # dPsi = dA^dp + dB^dq + dC^dx + dD^dy
    grads = {n: np.array([sx.evaluate(sx.diff(g.coefficient(n), v), d) for v in JET_VARS]) for n in "ABCD"}
    slot = {"A": 3, "B": 4, "C": 0, "D": 1}

    def dpsi(u, v):
        total = 0.0
        for n, k in slot.items():
            total += (grads[n] @ u) * v[k] - (grads[n] @ v) * u[k]
        return total

    pairs = ((0, 1), (0, 2), (1, 2))
    a = np.array([exterior_d_contact(plane[:, i], plane[:, j]) for i, j in pairs])
    b = np.array([dpsi(plane[:, i], plane[:, j]) for i, j in pairs])
    cross = np.cross(a, b)
    scale = np.linalg.norm(a) * (1.0 + np.linalg.norm(b))
    return int(np.max(np.abs(cross)) <= tol * scale)


# ---------------------------------------------------------------------------
# alpha system


def _samples(box, samples: int, seed: int) -> list[dict]:
    rng = np.random.default_rng(seed)
    box = box or sx.DEFAULT_BOX
    return [sx.sample_point(box, rng) for _ in range(samples)]


def _values(e: Expr, points: list[dict]) -> np.ndarray:
    out = []
    for d in points:
        try:
            out.append(sx.evaluate(e, d))
        except sx.DomainError:
            out.append(np.nan)
    return np.array(out)


def involutive_test(sys: AlphaSystem, box=None, samples: int = 100, tol: float = EPS_ZERO,
                    pinned=None, seed: int = 0) -> str:
    """``yes`` if E_inv vanishes over the box, ``pointwise-only`` if it
    vanishes only at the user-pinned points, ``no`` otherwise."""
    if sx.is_identically_zero(sys.E_inv, box, samples=samples, tol=tol, seed=seed):
        return YES
    if pinned:
        for p in pinned:
            value, scale = sx.evaluate_with_scale(sys.E_inv, _point_dict(p))
            if abs(value) > tol * (1.0 + scale):
                return NO
        return POINTWISE
    return NO


def genericity_test(sys: AlphaSystem, box=None, samples: int = 100, tol: float = EPS_ZERO,
                    seed: int = 0) -> GenericityResult:
    """Generic iff G stays away from zero with a constant sign over the
    samples; non-generic iff G vanishes identically; mixed otherwise."""
    if sx.is_identically_zero(sys.G, box, samples=samples, tol=tol, seed=seed):
        return GenericityResult(NONGENERIC, 0.0)
    points = _samples(box, samples, seed)
    values = _values(sys.G, points)
    ok = np.isfinite(values)
    if not ok.any():
        raise sx.DomainError("G is not evaluable anywhere in the probe box", sys.G)
    values = values[ok]
    points = [p for p, keep in zip(points, ok) if keep]
    min_abs = float(np.min(np.abs(values)))
    if min_abs > tol and (np.all(values > 0) or np.all(values < 0)):
        return GenericityResult(GENERIC, min_abs)
    witnesses = {}
    for label, mask in (("positive", values > tol), ("negative", values < -tol),
                        ("near-zero", np.abs(values) <= tol)):
        idx = np.flatnonzero(mask)
        if idx.size:
            witnesses[label] = points[idx[0]]
    return GenericityResult(MIXED, min_abs, witnesses)


def _require(sys: AlphaSystem, box, samples, tol, seed, expected: str) -> None:
    if involutive_test(sys, box, samples, tol, seed=seed) != YES:
        raise PreconditionError("system is not involutive over the probe box")
    found = genericity_test(sys, box, samples, tol, seed)
    if found.verdict != expected:
        raise PreconditionError(f"system is {found.verdict}, expected {expected}")


def _derived(exprs: dict, box, samples, tol, seed) -> DerivedTypeResult:
    points = _samples(box, samples, seed)
    values = {name: _values(e, points) for name, e in exprs.items()}
    maxima = {name: float(np.nanmax(np.abs(v))) for name, v in values.items()}
    zero = all(sx.is_identically_zero(e, box, samples=samples, tol=tol, seed=seed) for e in exprs.values())
    return DerivedTypeResult(TYPE_23 if zero else TYPE_234, maxima, values)


def derived_type_generic(sys: AlphaSystem, box=None, samples: int = 100, tol: float = EPS_ZERO,
                         seed: int = 0, check: bool = True) -> DerivedTypeResult:
    """(2,3) iff both discriminants D1, D2 vanish over the box."""
    if check:
        _require(sys, box, samples, tol, seed, GENERIC)
    return _derived({"D1": sys.D1, "D2": sys.D2}, box, samples, tol, seed)


def derived_type_nongeneric(sys: AlphaSystem, box=None, samples: int = 100, tol: float = EPS_ZERO,
                            seed: int = 0, check: bool = True) -> DerivedTypeResult:
    """(2,3) iff a_p + x a_z vanishes over the box."""
    if check:
        _require(sys, box, samples, tol, seed, NONGENERIC)
    return _derived({"alpha_p + x*alpha_z": sys.D_nongeneric}, box, samples, tol, seed)


def classify(sys: AlphaSystem, box=None, samples: int = 100, tol: float = EPS_ZERO,
             seed: int = 0, pinned=None) -> ClassificationReport:
    """Run every alpha-system criterion and collect the verdicts."""
    inv = involutive_test(sys, box, samples, tol, pinned=pinned, seed=seed)
    gen = genericity_test(sys, box, samples, tol, seed)
    derived = None
    if inv == YES and gen.verdict == GENERIC:
        derived = derived_type_generic(sys, box, samples, tol, seed, check=False)
    elif inv == YES and gen.verdict == NONGENERIC:
        derived = derived_type_nongeneric(sys, box, samples, tol, seed, check=False)
    g = GeneralGmas.from_alpha(sys.alpha)
    dims = {}
    for d in _samples(box, 3, seed):
        try:
            dims[JetPoint(**d)] = cauchy_dim_general(g, "A", d, tol)
        except (sx.DomainError, ChartError):
            continue
    return ClassificationReport(inv, gen, derived, dims)
