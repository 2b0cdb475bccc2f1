"""Command-line front end.

Usage::

    gmae classify --config run.cfg
    gmae solve    --config run.cfg
    gmae verify   --config run.cfg [--surface out.csv]

Any command accepts ``--tolerance-override key=value`` (repeatable).
Exit codes: 0 ok, 1 usage, 2 math-gate failure, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gmae import symexpr as sx
from gmae.characteristics import BaseFunctionError, IntegrationError, SeedCurve, build_surface, integrate_mu
from gmae.classify import (
    GENERIC,
    MIXED,
    NONGENERIC,
    YES,
    cauchy_dim_general,
    classify,
)
from gmae.model import AlphaSystem, GeneralGmas
from gmae.reduction import ChartExitError
from gmae.singularity import LambdaField, analyze
from gmae.verify import (
    NotInjectiveError,
    PreconditionError,
    ResidualSummary,
    fd_crosscheck_suite,
    pde_residual_on_graph,
    pullback_residuals,
)

EXIT_OK, EXIT_USAGE, EXIT_GATE, EXIT_NUMERIC = 0, 1, 2, 3

TOLERANCE_KEYS = ("eps_zero", "classify_tol", "newton_tol", "locate_tol", "contact_gate", "pde_gate")
CSV_HEADER = "s,t,X,Y,Z,p,q,lambda_hat,is_singular,class"


class UsageError(Exception):
    pass


class GateError(Exception):
    pass


def _fmt(v: float) -> str:
    return "%.17g" % v


# ---------------------------------------------------------------------------
# configuration


def _pair(text: str, cast=float) -> tuple:
    parts = [p for p in text.replace(",", " ").split()]
    if len(parts) != 2:
        raise UsageError(f"expected two values, got {text!r}")
    return tuple(cast(p) for p in parts)


@dataclass
class RunConfig:
    alpha: str | None = None
    general: dict | None = None  # A, B, C, D expression texts
    mode: str = "auto"
    seed_xi: str | None = None
    t0: float = 0.0
    mu0: float = 0.0
    t_range: tuple = (-0.5, 0.5)
    s_range: tuple = (-0.5, 0.5)
    grid: tuple = (51, 51)
    step: float = 1e-3
    eps_zero: float = 1e-6
    classify_tol: float = 1e-9
    newton_tol: float = 1e-12
    locate_tol: float = 1e-10
    contact_gate: float = 1e-6
    pde_gate: float = 1e-3
    x0_ref: float = 1.0
    box: dict = field(default_factory=lambda: dict(sx.DEFAULT_BOX))
    pde_patch: tuple | None = None
    outputs: dict = field(default_factory=dict)
    surface: str | None = None

    def validate(self) -> None:
        if self.mode not in ("auto", "generic", "nongeneric"):
            raise UsageError(f"mode must be auto, generic or nongeneric (got {self.mode!r})")
        for name in ("t_range", "s_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise UsageError(f"{name} must be non-empty")
        if min(self.grid) < 2:
            raise UsageError("grid counts must be >= 2")
        if not self.step > 0:
            raise UsageError("step must be positive")
        for name in TOLERANCE_KEYS:
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive")
        for v, (lo, hi) in self.box.items():
            if not lo < hi:
                raise UsageError(f"box range for {v} must be non-empty")


def parse_config(text: str, base: Path | None = None, stem: str = "run") -> RunConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in raw:
            raise UsageError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    cfg = RunConfig()
    floats = ("t0", "mu0", "step", "x0_ref") + TOLERANCE_KEYS
    try:
        for key, value in raw.items():
            if key == "alpha":
                cfg.alpha = value
            elif key in ("A", "B", "C", "D"):
                cfg.general = cfg.general or {"A": "0", "B": "0", "C": "0", "D": "0"}
                cfg.general[key] = value
            elif key == "mode":
                cfg.mode = value
            elif key in ("xi", "seed_xi"):
                cfg.seed_xi = value
            elif key in floats:
                setattr(cfg, key, float(value))
            elif key in ("t_range", "s_range"):
                setattr(cfg, key, _pair(value))
            elif key == "grid":
                cfg.grid = _pair(value, int)
            elif key.startswith("box_") and key[4:] in sx.JET_VARS:
                cfg.box[key[4:]] = _pair(value)
            elif key == "pde_patch":
                parts = [float(p) for p in value.replace(",", " ").split()]
                if len(parts) != 4:
                    raise UsageError("pde_patch needs s_lo, s_hi, t_lo, t_hi")
                cfg.pde_patch = tuple(parts)
            elif key in ("report", "csv", "obj", "markers"):
                cfg.outputs[key] = value
            elif key == "surface":
                cfg.surface = value
            else:
                raise UsageError(f"unknown key {key!r}")
    except ValueError as exc:
        raise UsageError(f"bad value: {exc}") from exc
    if cfg.alpha is None and cfg.general is None:
        raise UsageError("config needs 'alpha' or coefficients A, B, C, D")
    base = base or Path(".")
    defaults = {"report": f"{stem}_report.txt", "csv": f"{stem}.csv", "obj": f"{stem}.obj",
                "markers": f"{stem}_markers.csv"}
    for key, name in defaults.items():
        cfg.outputs[key] = str(base / cfg.outputs.get(key, name))
    if cfg.surface is not None:
        cfg.surface = str(base / cfg.surface)
    cfg.validate()
    return cfg


def load_config(path: str, overrides=()) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    cfg = parse_config(text, p.parent, p.stem)
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in TOLERANCE_KEYS:
            raise UsageError(f"override key must be one of {TOLERANCE_KEYS}")
        try:
            setattr(cfg, key, float(value))
        except ValueError as exc:
            raise UsageError(f"bad override value {value!r}") from exc
    cfg.validate()
    return cfg


def _alpha_system(text: str) -> AlphaSystem:
    try:
        return AlphaSystem(_parse_expr(text, "alpha"))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _parse_expr(text: str, what: str) -> sx.Expr:
    try:
        return sx.parse(text)
    except sx.ParseError as exc:
        raise UsageError(f"cannot parse {what} {text!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands


def _classification_lines(cfg: RunConfig) -> tuple[list[str], object, object]:
    lines = []
    report = sys_ = None
    if cfg.alpha is not None:
        sys_ = _alpha_system(cfg.alpha)
        report = classify(sys_, cfg.box, tol=cfg.classify_tol)
        lines.append(f"alpha = {cfg.alpha}")
        lines.append(f"involutive: {report.involutive}")
        gen = report.genericity
        lines.append(f"genericity: {gen.verdict} (min |G| over probes = {_fmt(gen.min_abs_G)})")
        for label, pt in gen.witnesses.items():
            coords = ", ".join(f"{k}={_fmt(v)}" for k, v in pt.items())
            lines.append(f"  witness {label}: {coords}")
        if report.derived_type is None:
            reason = "not involutive" if report.involutive != YES else "genericity is mixed"
            lines.append(f"derived type: refused ({reason})")
        else:
            maxima = ", ".join(f"max|{k}| = {_fmt(v)}" for k, v in report.derived_type.discriminants.items())
            lines.append(f"derived type: {report.derived_type.verdict} ({maxima})")
    if cfg.general is not None:
        try:
            g = GeneralGmas(*(_parse_expr(cfg.general[k], k) for k in "ABCD"))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        lines.append("general system: " + ", ".join(f"{k} = {cfg.general[k]}" for k in "ABCD"))
        lines.append("Cauchy dimension by case (1 = line field, 0 = trivial, - = coefficient vanishes):")
        rng = np.random.default_rng(0)
        for _ in range(3):
            pt = sx.sample_point(cfg.box, rng)
            cells = []
            for case in "ABCD":
                try:
                    cells.append(f"{case}:{cauchy_dim_general(g, case, pt, cfg.classify_tol)}")
                except (ValueError, sx.DomainError):
                    cells.append(f"{case}:-")
            coords = ", ".join(f"{k}={v:.6f}" for k, v in pt.items())
            lines.append(f"  at ({coords}): " + " ".join(cells))
    return lines, report, sys_


def _resolve_mode(cfg: RunConfig, report) -> str:
    if report.involutive != YES:
        raise GateError("system is not involutive over the probe box; reduction refused")
    found = report.genericity.verdict
    if found == MIXED:
        raise GateError("genericity is mixed over the probe box; refusing to choose a chart")
    mode = "generic" if found == GENERIC else "nongeneric"
    if cfg.mode != "auto" and cfg.mode != mode:
        raise GateError(f"configured mode {cfg.mode} but the system is {found}")
    return mode


def cmd_classify(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    lines, report, _ = _classification_lines(cfg)
    status = EXIT_OK
    if report is not None and cfg.mode != "auto":
        expected = GENERIC if cfg.mode == "generic" else NONGENERIC
        if report.genericity.verdict != expected:
            lines.append(f"error: configured mode {cfg.mode} does not match genericity {report.genericity.verdict}")
            status = EXIT_GATE
    text = "\n".join(lines) + "\n"
    Path(cfg.outputs["report"]).write_text(text)
    out.write(text)
    return status


def _build(cfg: RunConfig):
    lines, report, sys_ = _classification_lines(cfg)
    if sys_ is None:
        raise UsageError("solve needs 'alpha'")
    if cfg.seed_xi is None:
        raise UsageError("solve needs 'xi'")
    mode = _resolve_mode(cfg, report)
    lo, hi = cfg.t_range
    pad = 0.02 * (hi - lo) + 0.01
    t_lo, t_hi = min(lo, cfg.t0) - pad, max(hi, cfg.t0) + pad
    try:
        seed = SeedCurve(_parse_expr(cfg.seed_xi, "xi"), (t_lo, t_hi))
    except ArithmeticError as exc:
        raise UsageError(str(exc)) from exc
    mu = integrate_mu(sys_, mode, seed, cfg.mu0, cfg.t0, cfg.step, (t_lo, t_hi), cfg.x0_ref,
                      newton_tol=cfg.newton_tol)
    s_grid = np.linspace(cfg.s_range[0], cfg.s_range[1], cfg.grid[0])
    t_grid = np.linspace(lo, hi, cfg.grid[1])
    surface = build_surface(sys_, mode, seed, mu, s_grid, t_grid, cfg.newton_tol)
    return lines, sys_, mode, surface


def _node_flags(lam_grid: np.ndarray, tol: float) -> np.ndarray:
    """Nodes on or next to a sign change of lambda."""
    flags = np.abs(lam_grid) <= tol
    sign = np.sign(lam_grid)
    with np.errstate(invalid="ignore"):
        ds = sign[1:, :] * sign[:-1, :] < 0
        dt = sign[:, 1:] * sign[:, :-1] < 0
    flags[1:, :] |= ds
    flags[:-1, :] |= ds
    flags[:, 1:] |= dt
    flags[:, :-1] |= dt
    return flags


def write_csv(path: str, surface, lam_grid: np.ndarray, flags: np.ndarray, classes: np.ndarray) -> None:
    rows = [CSV_HEADER]
    for i, s in enumerate(surface.s_grid):
        for j, t in enumerate(surface.t_grid):
            jet = surface.jet[i, j]
            vals = [s, t, *jet, lam_grid[i, j]]
            cls = classes[i, j] if surface.mask[i, j] else "Hole"
            rows.append(",".join(_fmt(v) for v in vals) + f",{int(flags[i, j])},{cls}")
    Path(path).write_text("\n".join(rows) + "\n")


def write_obj(path: str, surface) -> None:
    n_s, n_t = surface.shape
    index = -np.ones((n_s, n_t), dtype=int)
    lines = [f"# front mesh {n_s} x {n_t} (row-major in s, then t)"]
    k = 0
    for i in range(n_s):
        for j in range(n_t):
            if surface.mask[i, j]:
                k += 1
                index[i, j] = k
                x, y, z = surface.front[i, j]
                lines.append(f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}")
    for i in range(n_s - 1):
        for j in range(n_t - 1):
            a, b, c, d = index[i, j], index[i + 1, j], index[i + 1, j + 1], index[i, j + 1]
            if min(a, b, c, d) > 0:
                lines.append(f"f {a} {b} {c}")
                lines.append(f"f {a} {c} {d}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_markers(path: str, surface, points) -> None:
    rows = ["s,t,X,Y,Z,class,lambda_hat,lambda_eta,lambda_etaeta,lambda_etaetaeta,det_hessian"]
    if points:
        jet, _ = surface.jet_at(np.array([p.s for p in points]), np.array([p.t for p in points]))
    for k, p in enumerate(points):
        d = p.diagnostics
        diag = [d.get(name, np.nan) for name in ("lambda_eta", "lambda_etaeta", "lambda_etaetaeta", "det_hessian")]
        vals = [p.s, p.t, *jet[k, :3]]
        rows.append(",".join(_fmt(v) for v in vals) + f",{p.cls}," + ",".join(_fmt(v) for v in [p.lambda_hat, *diag]))
    Path(path).write_text("\n".join(rows) + "\n")


def cmd_solve(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    lines, sys_, mode, surface = _build(cfg)
    lines.append(f"mode: {mode}")
    lines.append(f"seed: xi(t) = {cfg.seed_xi}, mu({_fmt(cfg.t0)}) = {_fmt(cfg.mu0)}, step = {_fmt(cfg.step)}")
    lines.append(f"grid: {cfg.grid[0]} x {cfg.grid[1]} over s in [{_fmt(cfg.s_range[0])}, {_fmt(cfg.s_range[1])}], "
                 f"t in [{_fmt(cfg.t_range[0])}, {_fmt(cfg.t_range[1])}]")
    lines.append(f"holes: {surface.holes}")
    result = analyze(surface, cfg.eps_zero, cfg.locate_tol)
    lam_grid = LambdaField(surface).grid()
    flags = _node_flags(lam_grid, cfg.locate_tol) & surface.mask
    classes = np.full(surface.shape, "Regular", dtype=object)
    for i, j in zip(*np.nonzero(flags)):
        s, t = surface.s_grid[i], surface.t_grid[j]
        nearest = result.nearest(s, t)
        classes[i, j] = nearest.cls if nearest is not None else "Unlocated"
    try:
        summary = pullback_residuals(sys_, surface)
        lines.append(f"contact residual: {_fmt(summary.max_contact_residual)}")
        lines.append(f"psi residual: {_fmt(summary.max_psi_residual)}")
    except PreconditionError as exc:
        lines.append(f"residuals unavailable: {exc}")
    if not result.points:
        lines.append("no singular points")
    else:
        counts = {}
        for p in result.points:
            counts[p.cls] = counts.get(p.cls, 0) + 1
        lines.append("singular points: " + ", ".join(f"{k} {v}" for k, v in sorted(counts.items())))
        for p in result.points:
            d = p.diagnostics
            diag = " ".join(f"{k}={_fmt(d[k])}" for k in ("lambda_eta", "lambda_etaeta", "lambda_etaetaeta",
                                                           "det_hessian") if k in d)
            lines.append(f"  {p.cls} at (s, t) = ({_fmt(p.s)}, {_fmt(p.t)}) lambda={_fmt(p.lambda_hat)} "
                         f"degenerate={p.degenerate} {diag}".rstrip())
    write_csv(cfg.outputs["csv"], surface, lam_grid, flags, classes)
    write_obj(cfg.outputs["obj"], surface)
    write_markers(cfg.outputs["markers"], surface, result.points)
    text = "\n".join(lines) + "\n"
    Path(cfg.outputs["report"]).write_text(text)
    out.write(text)
    return EXIT_OK


@dataclass
class JetGrid:
    """Jet points on a parameter grid, as reloaded from a CSV table."""

    s_grid: np.ndarray
    t_grid: np.ndarray
    jet: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return np.isfinite(self.jet).all(axis=-1)


def load_surface_csv(path: str) -> JetGrid:
    try:
        with open(path) as fh:
            header = fh.readline().strip()
        if header != CSV_HEADER:
            raise UsageError(f"{path}: unexpected header {header!r}")
        data = np.genfromtxt(path, delimiter=",", skip_header=1, usecols=range(7), dtype=float)
    except OSError as exc:
        raise UsageError(f"cannot read surface {path}: {exc}") from exc
    data = np.atleast_2d(data)
    s_grid = np.unique(data[:, 0])
    t_grid = np.unique(data[:, 1])
    if len(s_grid) * len(t_grid) != len(data):
        raise UsageError(f"{path}: rows do not form a full s x t grid")
    jet = data[:, 2:7].reshape(len(s_grid), len(t_grid), 5)
    return JetGrid(s_grid, t_grid, jet)


def summary_lines(summary: ResidualSummary) -> list[str]:
    lines = [
        f"max_contact_residual: {_fmt(summary.max_contact_residual)}",
        f"max_psi_residual: {_fmt(summary.max_psi_residual)}",
        f"nodes_checked: {summary.nodes_checked}",
        f"max_fd_mismatch: {_fmt(summary.max_fd_mismatch)}",
    ]
    if np.isfinite(summary.closed_form_contact):
        lines.append(f"closed_form_contact: {_fmt(summary.closed_form_contact)}")
        lines.append(f"closed_form_psi: {_fmt(summary.closed_form_psi)}")
    if summary.pde_residuals is not None:
        r1, r2 = summary.pde_residuals
        lines.append(f"pde_residuals: {_fmt(r1)} {_fmt(r2)}")
    return lines


def cmd_verify(cfg: RunConfig, surface_path: str | None = None, out=None) -> int:
    out = out or sys.stdout
    if cfg.alpha is None:
        raise UsageError("verify needs 'alpha'")
    sys_ = _alpha_system(cfg.alpha)
    path = surface_path or cfg.surface
    if path is not None:
        surface = load_surface_csv(path)
        seed = None
    else:
        _, _, _, surface = _build(cfg)
        seed = surface.seed
    try:
        summary = pullback_residuals(sys_, surface)
    except PreconditionError as exc:
        raise UsageError(str(exc)) from exc
    summary.max_fd_mismatch = fd_crosscheck_suite(sys_, seed, box=cfg.box)
    status = EXIT_OK
    notes = []
    if cfg.pde_patch is not None:
        try:
            summary.pde_residuals = pde_residual_on_graph(sys_, surface, cfg.pde_patch)
            if max(summary.pde_residuals) > cfg.pde_gate:
                notes.append(f"note: PDE residual above {_fmt(cfg.pde_gate)} (soft check)")
        except (NotInjectiveError, PreconditionError) as exc:
            notes.append(f"note: PDE residual skipped: {exc}")
    lines = summary_lines(summary) + notes
    if summary.passes(cfg.contact_gate):
        lines.append(f"gate: pass (contact_gate = {_fmt(cfg.contact_gate)})")
    else:
        lines.append(f"gate: FAIL (contact_gate = {_fmt(cfg.contact_gate)})")
        status = EXIT_GATE
    out.write("\n".join(lines) + "\n")
    return status


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gmae", description="Classify and solve z_xx = a z_xy, z_xy = a z_yy systems.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("classify", "solve", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--tolerance-override", action="append", default=[], metavar="KEY=VALUE")
        if name == "verify":
            p.add_argument("--surface", help="CSV written by 'solve'")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.tolerance_override)
        if args.command == "classify":
            return cmd_classify(cfg)
        if args.command == "solve":
            return cmd_solve(cfg)
        return cmd_verify(cfg, args.surface)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GateError, BaseFunctionError) as exc:
        print(f"gate failure: {exc}", file=sys.stderr)
        return EXIT_GATE
    except (IntegrationError, ChartExitError, sx.DomainError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
