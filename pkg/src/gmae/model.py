"""Jet-chart data model: points, 1-forms and the two GMAE families.

The general system is ``A z_xx + B z_xy + C = 0, A z_xy + B z_yy + D = 0``
with Pfaffian generators ``w0 = dz - p dx - q dy`` and
``Psi = A dp + B dq + C dx + D dy`` (mod w0). The alpha family
``z_xx = a z_xy, z_xy = a z_yy`` is the special case A=1, B=-a, C=D=0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.linalg import null_space

from gmae import symexpr as sx
from gmae.symexpr import Expr, JET_VARS, ONE, ZERO, as_expr

BASIS = ("dx", "dy", "dz", "dp", "dq")
CASES = ("A", "B", "C", "D")

# which reduced derivatives exist in each case
CASE_TAGS = {
    "A": ("x", "y", "q"),
    "B": ("x", "y", "p"),
    "C": ("y", "p", "q"),
    "D": ("x", "p", "q"),
}


class ChartError(ValueError):
    """A point lies outside the region where a construction is valid."""


@dataclass(frozen=True)
class JetPoint:
    x: float
    y: float
    z: float
    p: float
    q: float

    def __post_init__(self):
        for name in JET_VARS:
            object.__setattr__(self, name, float(getattr(self, name)))
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError(f"non-finite jet point {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.p, self.q], dtype=float)

    def as_dict(self) -> dict[str, float]:
        return {"x": self.x, "y": self.y, "z": self.z, "p": self.p, "q": self.q}

    @classmethod
    def from_array(cls, a) -> "JetPoint":
        return cls(*(float(v) for v in a))


def _point_dict(pt) -> dict[str, float]:
    if isinstance(pt, JetPoint):
        return pt.as_dict()
    if isinstance(pt, Mapping):
        return dict(pt)
    return dict(zip(JET_VARS, (float(v) for v in pt)))


@dataclass(frozen=True)
class OneForm:
    """A 1-form ``c_dx dx + c_dy dy + c_dz dz + c_dp dp + c_dq dq``."""

    dx: Expr = ZERO
    dy: Expr = ZERO
    dz: Expr = ZERO
    dp: Expr = ZERO
    dq: Expr = ZERO

    def __post_init__(self):
        for name in BASIS:
            e = as_expr(getattr(self, name))
            object.__setattr__(self, name, e)
            extra = e.free_vars() - set(JET_VARS)
            if extra:
                raise ValueError(f"coefficient of {name} uses non-jet variables {sorted(extra)}")

    @property
    def coefficients(self) -> tuple[Expr, ...]:
        return tuple(getattr(self, name) for name in BASIS)

    def at(self, pt) -> np.ndarray:
        """Coefficient vector at a point, in the basis dx, dy, dz, dp, dq."""
        d = _point_dict(pt)
        return np.array([sx.evaluate(c, d) for c in self.coefficients])

    def __call__(self, pt, vector) -> float:
        return float(self.at(pt) @ np.asarray(vector, dtype=float))

    def __add__(self, other: "OneForm") -> "OneForm":
        return OneForm(*(a + b for a, b in zip(self.coefficients, other.coefficients)))

    def __sub__(self, other: "OneForm") -> "OneForm":
        return OneForm(*(a - b for a, b in zip(self.coefficients, other.coefficients)))

    def scaled(self, f) -> "OneForm":
        f = as_expr(f)
        return OneForm(*(f * c for c in self.coefficients))

    def __str__(self):
        parts = [f"({c})*{n}" for c, n in zip(self.coefficients, BASIS) if c != ZERO]
        return " + ".join(parts) if parts else "0"


def contact_form() -> OneForm:
    return OneForm(dx=-sx.Var("p"), dy=-sx.Var("q"), dz=ONE)


def exterior_d_contact(u, v) -> float:
    """dw0 = dx^dp + dy^dq evaluated on two tangent vectors."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return u[0] * v[3] - u[3] * v[0] + u[1] * v[4] - u[4] * v[1]


def wedge(a: np.ndarray, b: np.ndarray, u, v) -> float:
    """(a ^ b)(u, v) for coefficient vectors ``a`` and ``b``."""
    return float((a @ u) * (b @ v) - (a @ v) * (b @ u))


@dataclass(frozen=True)
class GeneralGmas:
    """Coefficients A, B, C, D of the general system."""

    A: Expr
    B: Expr
    C: Expr = ZERO
    D: Expr = ZERO

    def __post_init__(self):
        for name in CASES:
            object.__setattr__(self, name, as_expr(getattr(self, name)))
        if all(getattr(self, n) == ZERO for n in CASES):
            raise ValueError("A, B, C, D are all zero: Psi vanishes modulo w0")

    @classmethod
    def from_alpha(cls, alpha) -> "GeneralGmas":
        return cls(A=ONE, B=-as_expr(alpha), C=ZERO, D=ZERO)

    def coefficient(self, case: str) -> Expr:
        if case not in CASES:
            raise ValueError(f"unknown case {case!r}")
        return getattr(self, case)

    def psi_form(self) -> OneForm:
        return OneForm(dx=self.C, dy=self.D, dp=self.A, dq=self.B)


def total_dx(f: Expr) -> Expr:
    """d/dx = d/dx + p d/dz on functions of the jet chart."""
    return sx.diff(f, "x") + sx.Var("p") * sx.diff(f, "z")


def total_dy(f: Expr) -> Expr:
    """Total y-derivative: the y-partial plus q times the z-partial."""
    return sx.diff(f, "y") + sx.Var("q") * sx.diff(f, "z")


def reduced_derivative(f, g: GeneralGmas, case: str, which: str) -> Expr:
    """Reduced derivative ``f_{which,case}`` of ``f`` modulo w0 and Psi.

    For case A these are the coefficients in
    ``df = f_{x,A} dx + f_{y,A} dy + f_{q,A} dq  (mod w0, Psi)``, and
    similarly for the other three cases.
    """
    f = as_expr(f)
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}")
    if which not in CASE_TAGS[case]:
        raise ValueError(f"no reduced derivative f_{{{which},{case}}}; case {case} has {CASE_TAGS[case]}")
    A, B, C, D = g.A, g.B, g.C, g.D
    fx, fy = total_dx(f), total_dy(f)
    fp, fq = sx.diff(f, "p"), sx.diff(f, "q")
    if case == "A":
        return {"x": fx - C / A * fp, "y": fy - D / A * fp, "q": fq - B / A * fp}[which]
    if case == "B":
        return {"x": fx - C / B * fq, "y": fy - D / B * fq, "p": fp - A / B * fq}[which]
    if case == "C":
        return {"y": fy - D / C * fx, "p": fp - A / C * fx, "q": fq - B / C * fx}[which]
    return {"x": fx - C / D * fy, "p": fp - A / D * fy, "q": fq - B / D * fy}[which]


def constraint_plane(g: GeneralGmas, pt) -> np.ndarray:
    """Orthonormal basis (columns) of the 3-plane {w0 = Psi = 0} at ``pt``."""
    rows = np.vstack([contact_form().at(pt), g.psi_form().at(pt)])
    basis = null_space(rows)
    if basis.shape[1] != 3:
        raise ChartError("w0 and Psi are linearly dependent at this point")
    return basis


def eta_factorization(g: GeneralGmas, case: str, pt, tol: float = 1e-9) -> tuple[OneForm, OneForm]:
    """1-forms (eta1, eta2) with dw0 = eta1 ^ eta2 modulo w0 and Psi.

    The congruence is verified numerically at ``pt`` by evaluating
    ``dw0 - eta1 ^ eta2`` on a basis of the plane {w0 = Psi = 0}.
    """
    d = _point_dict(pt)
    lead = g.coefficient(case)
    if sx.evaluate(lead, d) == 0.0:
        raise ChartError(f"coefficient {case} vanishes at {d}")
    A, B, C, D = g.A, g.B, g.C, g.D
    if case == "A":
        eta1, eta2 = OneForm(dy=ONE, dx=-(B / A)), OneForm(dq=ONE, dx=D / A)
    elif case == "B":
        eta1, eta2 = OneForm(dx=ONE, dy=-(A / B)), OneForm(dp=ONE, dy=C / B)
    elif case == "C":
        eta1, eta2 = OneForm(dy=ONE, dp=B / C), OneForm(dq=ONE, dp=-(D / C))
    else:
        eta1, eta2 = OneForm(dx=ONE, dq=A / D), OneForm(dp=ONE, dq=-(C / D))
    residual = factorization_residual(g, eta1, eta2, d)
    if residual > tol:
        raise ArithmeticError(f"eta factorization fails at {d}: residual {residual:.3e}")
    return eta1, eta2


def factorization_residual(g: GeneralGmas, eta1: OneForm, eta2: OneForm, pt) -> float:
    plane = constraint_plane(g, pt)
    a, b = eta1.at(pt), eta2.at(pt)
    worst = 0.0
    for i, j in ((0, 1), (0, 2), (1, 2)):
        u, v = plane[:, i], plane[:, j]
        worst = max(worst, abs(exterior_d_contact(u, v) - wedge(a, b, u, v)))
    return worst


class AlphaSystem:
    """The coefficient ``alpha`` of ``z_xx = a z_xy, z_xy = a z_yy`` and the
    scalar fields derived from it.

    Attributes
    ----------
    alpha : Expr
    first : dict
        First partials keyed by variable name.
    second : dict
        Second partials keyed by a sorted pair of variable names.
    E_inv : Expr
        ``a_x + p a_z - a (a_y + q a_z)``; vanishes identically exactly for
        the involutive type.
    G : Expr
        ``1 + x (a_y + q a_z)``; nonzero for the generic type, identically
        zero for the non-generic type.
    rho : Expr
        ``1 / G``.
    beta : Expr
        ``y + a x``.
    K, L : Expr
        ``x (a_q + a a_p)`` and ``a_q + a a_p``, the singular-identifier
        building blocks of the generic and non-generic fronts.
    D1, D2 : Expr
        Derived-type discriminants of the generic reduction.
    D_nongeneric : Expr
        ``a_p + x a_z``, the discriminant of the non-generic reduction.
    """

    def __init__(self, alpha, check_points: int = 3, seed: int = 0):
        self.alpha = as_expr(alpha)
        extra = self.alpha.free_vars() - set(JET_VARS)
        if extra:
            raise ValueError(f"alpha may only depend on x, y, z, p, q (got {sorted(extra)})")
        a = self.alpha
        self.first = {v: sx.diff(a, v) for v in JET_VARS}
        self.second = {}
        for i, u in enumerate(JET_VARS):
            for v in JET_VARS[i:]:
                self.second[(u, v)] = sx.diff(self.first[u], v)
        x, y, p, q = (sx.Var(n) for n in ("x", "y", "p", "q"))
        ax, ay, az, ap, aq = (self.first[v] for v in JET_VARS)
        w = ay + q * az
        self.E_inv = ax + p * az - a * w
        self.G = ONE + x * w
        self.rho = ONE / self.G
        self.beta = y + a * x
        self.L = aq + a * ap
        self.K = x * self.L
        self.D1 = ap * w - a * sx.diff(w, "p") - sx.diff(w, "q") - az
        self.D2 = self.partial("y", "y") + 2.0 * q * self.partial("y", "z") + q * q * self.partial("z", "z")
        self.D_nongeneric = ap + x * az
        self._compiled: dict = {}
        self._spot_check(check_points, seed)

    def __repr__(self):
        return f"AlphaSystem({str(self.alpha)!r})"

    def partial(self, *vs: str) -> Expr:
        if len(vs) == 1:
            return self.first[vs[0]]
        if len(vs) == 2:
            return self.second[tuple(sorted(vs, key=JET_VARS.index))]
        raise ValueError("only first and second partials are cached")

    def field(self, name: str) -> Expr:
        """Look up a derived field (``alpha``, ``E_inv``, ``G``, ``K``...)."""
        if name.startswith("alpha_"):
            return self.partial(*name[len("alpha_"):])
        return getattr(self, name)

    def compiled(self, name: str, vectorized: bool = False):
        """Compiled callable ``f(x, y, z, p, q)`` for a named field."""
        key = (name, vectorized)
        fn = self._compiled.get(key)
        if fn is None:
            fn = self._compiled[key] = sx.compile_expr(self.field(name), JET_VARS, vectorized)
        return fn

    def _spot_check(self, count: int, seed: int) -> None:
        rng = np.random.default_rng(seed)
        checked = 0
        for _ in range(20 * count):
            if checked >= count:
                break
            d = sx.sample_point(sx.DEFAULT_BOX, rng)
            try:
                v = {n: sx.evaluate(self.first[n], d) for n in JET_VARS}
                al = sx.evaluate(self.alpha, d)
                e_inv = sx.evaluate(self.E_inv, d)
                g = sx.evaluate(self.G, d)
                rho = sx.evaluate(self.rho, d)
            except sx.DomainError:
                continue
            checked += 1
            w = v["y"] + d["q"] * v["z"]
            expect_e = v["x"] + d["p"] * v["z"] - al * w
            scale = 1.0 + abs(v["x"]) + abs(d["p"] * v["z"]) + abs(al * w)
            if abs(e_inv - expect_e) > 1e-12 * scale:
                raise ArithmeticError("E_inv inconsistent with the partials of alpha")
            if abs(g - (1.0 + d["x"] * w)) > 1e-12 * (1.0 + abs(d["x"] * w)):
                raise ArithmeticError("G inconsistent with the partials of alpha")
            if abs(rho * g - 1.0) > 1e-12:
                raise ArithmeticError("rho * G != 1")


def canonical_forms(sys: AlphaSystem) -> tuple[OneForm, OneForm]:
    """The generators ``w0 = dz - p dx - q dy`` and ``Psi = dp - a dq``."""
    return contact_form(), OneForm(dp=ONE, dq=-sys.alpha)
