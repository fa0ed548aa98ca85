"""Batch front end: load a JSON problem file, check it, solve it, write traces.

Commands::

    shrinkproj solve <file> [--trace out.csv] [--summary out.txt] [--seed k]
    shrinkproj verify <file> [--seed k]
    shrinkproj validate <file>

Exit codes of ``solve``: 0 converged, 2 iteration cap, 3 infeasible cut
set, 4 diverging mapping, 1 input error. ``verify`` and ``validate`` return
0 when every check passes and 1 otherwise.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .convex import (
    AffineSubspace,
    Ball,
    Box,
    ConvexSet,
    HalfSpace,
    HalfSpaceIntersection,
    WholeSpace,
)
from .equilibrium import (
    Bifunction,
    ConvexDifference,
    MonotoneAffine,
    ZeroBifunction,
    check_bifunction_axioms,
)
from .mapping import (
    CLASSES,
    AffineMap,
    CompositeMap,
    Map,
    MappingSpec,
    NegationMap,
    ProjectionMap,
    Schedule,
    XiFunction,
    verify_class,
)
from .oracle import NoSolutionError, UnsupportedInstanceError, project_target, solve_target_set
from .solver import (
    RESIDUAL_NAMES,
    ProblemInstance,
    RunResult,
    SolverConfig,
    ValidationReport,
    run,
    validate_config,
)
from .space import spectral_bound

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
AUTO_GAMMA_FACTOR = 0.9
EXIT_CODES = {"converged": 0, "max_iter": 2, "infeasible": 3, "diverged": 4}
EXIT_INPUT_ERROR = 1
TRACE_COLUMNS = ("n", *RESIDUAL_NAMES, "theta")


class ProblemFileError(ValueError):
    """A problem file could not be parsed; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ConditionError(ValueError):
    """The file parsed but the parameters fail the admissibility checks."""

    def __init__(self, report: ValidationReport):
        names = ", ".join(c.name for c in report.failures())
        super().__init__(f"parameter conditions violated ({names})\n{report.summary()}")
        self.report = report


@dataclass
class LoadedProblem:
    problem: ProblemInstance
    config: SolverConfig
    x1: np.ndarray
    seed: int = 0
    claims: tuple[str | None, ...] = ()


# -- parsing helpers -----------------------------------------------------------

def _get(d, key, path, default=...):
    if not isinstance(d, dict):
        raise ProblemFileError(path, "expected an object")
    if key not in d:
        if default is ...:
            raise ProblemFileError(f"{path}.{key}", "missing field")
        return default
    return d[key]


def _vec(value, path, dim=None) -> np.ndarray:
    try:
        v = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ProblemFileError(path, f"not a numeric vector ({exc})") from None
    if v.ndim != 1 or (dim is not None and v.size != dim):
        want = f"length {dim}" if dim is not None else "a 1-D array"
        raise ProblemFileError(path, f"expected {want}, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ProblemFileError(path, "entries must be finite")
    return v


def _mat(value, path, shape=None) -> np.ndarray:
    try:
        m = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ProblemFileError(path, f"not a numeric matrix ({exc})") from None
    if m.ndim != 2 or (shape is not None and m.shape != tuple(shape)):
        want = f"shape {tuple(shape)}" if shape is not None else "a 2-D array"
        raise ProblemFileError(path, f"expected {want}, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ProblemFileError(path, "entries must be finite")
    return m


def _num(value, path) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProblemFileError(path, "expected a number")
    return float(value)


def _wrap(path, fn, *args, **kwargs):
    """Run a constructor and re-raise its ``ValueError`` with a field path."""
    try:
        return fn(*args, **kwargs)
    except ProblemFileError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ProblemFileError(path, str(exc)) from None


def parse_set(d, path, dim) -> ConvexSet:
    variant = _get(d, "variant", path)
    if variant == "WholeSpace":
        return WholeSpace(dim)
    if variant == "Box":
        return _wrap(path, Box, _vec(_get(d, "lower", path), f"{path}.lower", dim),
                     _vec(_get(d, "upper", path), f"{path}.upper", dim))
    if variant == "Ball":
        return _wrap(path, Ball, _vec(_get(d, "center", path), f"{path}.center", dim),
                     _num(_get(d, "radius", path), f"{path}.radius"))
    if variant == "HalfSpaceIntersection":
        hs = []
        for j, h in enumerate(_get(d, "halfspaces", path)):
            p = f"{path}.halfspaces[{j}]"
            hs.append(_wrap(p, HalfSpace, _vec(_get(h, "normal", p), f"{p}.normal", dim),
                            _num(_get(h, "offset", p), f"{p}.offset")))
        return HalfSpaceIntersection(tuple(hs), dim)
    if variant == "AffineSubspace":
        basis = np.asarray(_get(d, "basis", path), dtype=float)
        if basis.size == 0:
            basis = np.zeros((dim, 0))
        basis = _mat(basis, f"{path}.basis")
        if basis.shape[0] != dim:
            raise ProblemFileError(f"{path}.basis", f"expected {dim} rows")
        return _wrap(path, AffineSubspace, basis,
                     _vec(_get(d, "offset", path), f"{path}.offset", dim))
    raise ProblemFileError(f"{path}.variant", f"unknown set variant {variant!r}")


def dump_set(S: ConvexSet) -> dict:
    if isinstance(S, WholeSpace):
        return {"variant": "WholeSpace"}
    if isinstance(S, Box):
        return {"variant": "Box", "lower": S.lower.tolist(), "upper": S.upper.tolist()}
    if isinstance(S, Ball):
        return {"variant": "Ball", "center": S.center.tolist(), "radius": S.radius}
    if isinstance(S, HalfSpaceIntersection):
        return {"variant": "HalfSpaceIntersection",
                "halfspaces": [{"normal": h.normal.tolist(), "offset": h.offset}
                               for h in S.halfspaces]}
    if isinstance(S, AffineSubspace):
        return {"variant": "AffineSubspace", "basis": S.basis.tolist(), "offset": S.offset.tolist()}
    raise TypeError(f"cannot serialize set {type(S).__name__}")


def parse_bifunction(d, path, domain: ConvexSet, strict: bool) -> Bifunction:
    family = _get(d, "family", path)
    dim = domain.dim
    if family == "MonotoneAffine":
        M = _mat(_get(d, "M", path), f"{path}.M", (dim, dim))
        q = _vec(_get(d, "q", path), f"{path}.q", dim)
        return _wrap(path, MonotoneAffine, M, q, domain, check=strict)
    if family == "ConvexDifference":
        P = _mat(_get(d, "P", path), f"{path}.P", (dim, dim))
        c = _vec(_get(d, "c", path), f"{path}.c", dim)
        return _wrap(path, ConvexDifference, P, c, domain)
    if family == "Zero":
        return ZeroBifunction(domain)
    raise ProblemFileError(f"{path}.family", f"unknown bifunction family {family!r}")


def dump_bifunction(f: Bifunction) -> dict:
    if isinstance(f, MonotoneAffine):
        return {"family": "MonotoneAffine", "M": f.M.tolist(), "q": f.q.tolist()}
    if isinstance(f, ConvexDifference):
        return {"family": "ConvexDifference", "P": f.P.tolist(), "c": f.c.tolist()}
    if isinstance(f, ZeroBifunction):
        return {"family": "Zero"}
    raise TypeError(f"cannot serialize bifunction {type(f).__name__}")


def parse_map(d, path, dim) -> Map:
    kind = _get(d, "kind", path)
    if kind == "Identity":
        return AffineMap(np.eye(dim), np.zeros(dim))
    if kind == "Affine":
        return _wrap(path, AffineMap, _mat(_get(d, "B", path), f"{path}.B", (dim, dim)),
                     _vec(_get(d, "b", path), f"{path}.b", dim))
    if kind == "ProjectionOnto":
        return ProjectionMap(parse_set(_get(d, "target", path), f"{path}.target", dim))
    if kind == "Negation":
        return NegationMap(dim)
    if kind == "Composite":
        parts = _get(d, "maps", path)
        if not parts:
            raise ProblemFileError(f"{path}.maps", "needs at least one map")
        return CompositeMap(tuple(parse_map(m, f"{path}.maps[{j}]", dim)
                                  for j, m in enumerate(parts)))
    raise ProblemFileError(f"{path}.kind", f"unknown map kind {kind!r}")


def dump_map(m: Map) -> dict:
    if isinstance(m, AffineMap):
        return {"kind": "Affine", "B": m.B.tolist(), "b": m.b.tolist()}
    if isinstance(m, ProjectionMap):
        return {"kind": "ProjectionOnto", "target": dump_set(m.target)}
    if isinstance(m, NegationMap):
        return {"kind": "Negation"}
    if isinstance(m, CompositeMap):
        return {"kind": "Composite", "maps": [dump_map(p) for p in m.maps]}
    raise TypeError(f"cannot serialize map {type(m).__name__}")


def _schedule(d, path, default: Schedule) -> Schedule:
    if d is None:
        return default
    return _wrap(path, Schedule.from_dict, d)


def parse_mapping(d, path, dim) -> tuple[MappingSpec, str | None]:
    m = parse_map(_get(d, "map", path), f"{path}.map", dim)
    k = _num(_get(d, "k", path, 0.0), f"{path}.k")
    lam = _schedule(_get(d, "lambda", path, None), f"{path}.lambda", Schedule.zero())
    mu = _schedule(_get(d, "mu", path, None), f"{path}.mu", Schedule.zero())
    xi_d = _get(d, "xi", path, None)
    xi = XiFunction.linear() if xi_d is None else _wrap(f"{path}.xi", XiFunction.from_dict, xi_d)
    theta = _get(d, "theta", path, None)
    theta = None if theta is None else _num(theta, f"{path}.theta")
    claim = _get(d, "claimed_class", path, None)
    if claim is not None and claim not in CLASSES:
        raise ProblemFileError(f"{path}.claimed_class", f"unknown class {claim!r}")
    spec = _wrap(path, MappingSpec, m, k, lam, mu, xi, theta)
    return spec, claim


def dump_mapping(S: MappingSpec, claim: str | None = None) -> dict:
    d = {"map": dump_map(S.map), "k": S.k, "lambda": S.lambda_schedule.to_dict(),
         "mu": S.mu_schedule.to_dict(), "xi": S.xi.to_dict(), "theta": S.lipschitz_theta}
    if claim is not None:
        d["claimed_class"] = claim
    return d


def parse_config(d, path, problem: ProblemInstance) -> SolverConfig:
    g = _get(d, "gamma", path, "auto")
    if g == "auto":
        L = spectral_bound(problem.A).L
        gamma = AUTO_GAMMA_FACTOR / L if L > 0 else AUTO_GAMMA_FACTOR
    else:
        gamma = _num(g, f"{path}.gamma")
    D = _get(d, "D_bound", path, "auto")
    if D != "auto":
        D = _num(D, f"{path}.D_bound")
    max_iter = _get(d, "max_iter", path, 5000)
    if isinstance(max_iter, bool) or not isinstance(max_iter, int):
        raise ProblemFileError(f"{path}.max_iter", "expected an integer")
    return _wrap(path, SolverConfig, gamma,
                 r_schedule=_schedule(_get(d, "r", path, None), f"{path}.r", Schedule.constant(1.0)),
                 s_schedule=_schedule(_get(d, "s", path, None), f"{path}.s", Schedule.constant(1.0)),
                 alpha_schedule=_schedule(_get(d, "alpha", path, None), f"{path}.alpha",
                                          Schedule.constant(0.5)),
                 D_bound=D,
                 tol_residual=_num(_get(d, "tol", path, 1e-6), f"{path}.tol"),
                 max_iter=max_iter,
                 mode=_get(d, "mode", path, "full"),
                 projection_tol=_num(_get(d, "projection_tol", path, 1e-8), f"{path}.projection_tol"))


def dump_config(cfg: SolverConfig) -> dict:
    return {"gamma": cfg.gamma, "r": cfg.r_schedule.to_dict(), "s": cfg.s_schedule.to_dict(),
            "alpha": cfg.alpha_schedule.to_dict(), "D_bound": cfg.D_bound,
            "tol": cfg.tol_residual, "max_iter": cfg.max_iter, "mode": cfg.mode,
            "projection_tol": cfg.projection_tol}


def parse_problem(doc: dict, strict: bool = True) -> LoadedProblem:
    """Build the problem objects from an already decoded JSON document.

    With ``strict`` the bifunctions are checked for monotonicity on
    construction; ``verify`` turns this off so it can report the violation.
    """
    version = _get(doc, "version", "$")
    if version != FORMAT_VERSION:
        raise ProblemFileError("$.version", f"unsupported version {version!r}")
    dims = _get(doc, "dims", "$")
    n1 = _get(dims, "H1", "$.dims")
    n2 = _get(dims, "H2", "$.dims", n1)
    for key, v in (("H1", n1), ("H2", n2)):
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ProblemFileError(f"$.dims.{key}", "expected a positive integer")
    C = parse_set(_get(doc, "C", "$"), "$.C", n1)
    Q = parse_set(_get(doc, "Q", "$", {"variant": "WholeSpace"}), "$.Q", n2)
    lists = {}
    for key in ("f", "g", "A", "S"):
        v = _get(doc, key, "$")
        if not isinstance(v, list) or not v:
            raise ProblemFileError(f"$.{key}", "expected a non-empty list")
        lists[key] = v
    N = len(lists["f"])
    for key in ("g", "A", "S"):
        if len(lists[key]) != N:
            raise ProblemFileError(f"$.{key}", f"expected {N} entries to match $.f")
    f = [parse_bifunction(d, f"$.f[{i}]", C, strict) for i, d in enumerate(lists["f"])]
    g = [parse_bifunction(d, f"$.g[{i}]", Q, strict) for i, d in enumerate(lists["g"])]
    A = [_mat(a, f"$.A[{i}]", (n2, n1)) for i, a in enumerate(lists["A"])]
    parsed = [parse_mapping(d, f"$.S[{i}]", n1) for i, d in enumerate(lists["S"])]
    problem = _wrap("$", ProblemInstance, C, Q, f, g, A, [p[0] for p in parsed])
    config = parse_config(_get(doc, "config", "$", {}), "$.config", problem)
    seed = _get(doc, "seed", "$", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ProblemFileError("$.seed", "expected an integer")
    config.seed = seed
    x1 = _vec(_get(doc, "x1", "$"), "$.x1", n1)
    if not C.contains(x1, 1e-9):
        raise ProblemFileError("$.x1", "initial point must lie in C")
    return LoadedProblem(problem, config, x1, seed, tuple(p[1] for p in parsed))


def dump_problem(loaded: LoadedProblem) -> dict:
    """Inverse of :func:`parse_problem`; ``gamma`` is written as a number."""
    p = loaded.problem
    claims = loaded.claims or (None,) * p.N
    return {
        "version": FORMAT_VERSION,
        "dims": {"H1": p.dim_H1, "H2": p.dim_H2},
        "C": dump_set(p.C),
        "Q": dump_set(p.Q),
        "f": [dump_bifunction(fi) for fi in p.f],
        "g": [dump_bifunction(gi) for gi in p.g],
        "A": [a.tolist() for a in p.A],
        "S": [dump_mapping(S, c) for S, c in zip(p.S, claims)],
        "config": dump_config(loaded.config),
        "x1": loaded.x1.tolist(),
        "seed": loaded.seed,
    }


def load(path, check: bool = True, strict: bool = True) -> LoadedProblem:
    """Read and validate a problem file.

    Raises
    ------
    ProblemFileError
        Malformed JSON or an invalid field; the message names the field.
    ConditionError
        When ``check`` is set and the parameters fail ``validate_config``.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ProblemFileError("$", f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    loaded = parse_problem(doc, strict=strict)
    if check:
        report = validate_config(loaded.problem, loaded.config)
        if not report.passed:
            raise ConditionError(report)
    return loaded


# -- output ------------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def oracle_limit(problem: ProblemInstance, x1) -> np.ndarray | None:
    """``P_F x1`` from the analytic oracle, or None when it does not apply."""
    try:
        return project_target(solve_target_set(problem), x1)
    except (UnsupportedInstanceError, NoSolutionError):
        return None


def write_trace(stream, result: RunResult, limit: np.ndarray | None = None) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    header = list(TRACE_COLUMNS)
    if limit is not None:
        header.append("oracle_distance")
    writer.writerow(header)
    for rec in result.trace:
        row = [str(rec.n), *(_fmt(v) for v in rec.residuals), _fmt(rec.theta)]
        if limit is not None:
            row.append(_fmt(np.linalg.norm(rec.x_next - limit)))
        writer.writerow(row)


def format_summary(result: RunResult, limit: np.ndarray | None = None) -> str:
    lines = [f"status: {result.status}", f"iterations: {result.iterations}",
             "final: " + " ".join(_fmt(v) for v in result.final)]
    if result.trace:
        for name, v in zip(RESIDUAL_NAMES, result.trace[-1].residuals):
            lines.append(f"{name}: {_fmt(v)}")
    if limit is not None:
        lines.append(f"oracle_distance: {_fmt(np.linalg.norm(result.final - limit))}")
    if result.message:
        lines.append(f"message: {result.message}")
    return "\n".join(lines) + "\n"


def _emit(text: str, target: str | None) -> None:
    if target is None or target == "-":
        sys.stdout.write(text)
    else:
        Path(target).write_text(text, encoding="utf-8")


# -- commands ----------------------------------------------------------------

def solve_command(path, trace_out=None, summary_out=None, seed=None) -> int:
    try:
        loaded = load(path)
    except (ProblemFileError, ConditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    if seed is not None:
        loaded.config.seed = seed
    try:
        result = run(loaded.problem, loaded.config, loaded.x1)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    limit = oracle_limit(loaded.problem, loaded.x1)
    if trace_out is not None:
        buf = io.StringIO()
        write_trace(buf, result, limit)
        _emit(buf.getvalue(), trace_out)
    _emit(format_summary(result, limit), summary_out)
    return EXIT_CODES[result.status]


def verify_command(path, seed=None, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        loaded = load(path, check=False, strict=False)
    except ProblemFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    seed = loaded.seed if seed is None else seed
    p = loaded.problem
    ok = True
    for label, fams in (("f", p.f), ("g", p.g)):
        for i, fi in enumerate(fams):
            report = check_bifunction_axioms(fi, samples=200, seed=seed)
            for c in report.checks:
                print(f"{label}[{i}] {c.name}: worst {_fmt(c.worst)} "
                      f"{'ok' if c.passed else 'FAIL'}", file=out)
            ok &= report.passed
    for i, S in enumerate(p.S):
        classes = ["taspc"]
        claim = loaded.claims[i] if loaded.claims else None
        if claim is not None and claim != "taspc":
            classes.append(claim)
        for cls in classes:
            report = verify_class(S, cls, n_max=16, samples=200, seed=seed, domain=p.C)
            print(f"S[{i}] {cls}: worst slack {_fmt(report.worst)} "
                  f"{'ok' if report.passed else 'FAIL'}", file=out)
            ok &= report.passed
    return 0 if ok else 1


def validate_command(path, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        loaded = load(path, check=False)
    except ProblemFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    report = validate_config(loaded.problem, loaded.config)
    print(report.summary(), file=out)
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shrinkproj",
                                     description="Shrinking projection solver for split equilibrium problems.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", help="run the solver")
    p.add_argument("file")
    p.add_argument("--trace", help="CSV trace output ('-' for stdout)")
    p.add_argument("--summary", help="summary output (default stdout)")
    p.add_argument("--seed", type=int)
    p = sub.add_parser("verify", help="sample the bifunction and mapping assumptions")
    p.add_argument("file")
    p.add_argument("--seed", type=int)
    p = sub.add_parser("validate", help="check the parameter conditions")
    p.add_argument("file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "solve":
        return solve_command(args.file, args.trace, args.summary, args.seed)
    if args.command == "verify":
        return verify_command(args.file, args.seed)
    return validate_command(args.file)


if __name__ == "__main__":
    sys.exit(main())
