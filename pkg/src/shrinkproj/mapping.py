"""Fixed-point mappings and their class predicates.

A :class:`MappingSpec` bundles a concrete map ``S`` with the parameters of a
``(k, {lambda_n}, {mu_n}, xi)``-total asymptotically strict pseudo-contraction:

    ||S^n x - S^n y||^2 <= ||x - y||^2 + k ||(I - S^n) x - (I - S^n) y||^2
                           + lambda_n xi(||x - y||) + mu_n

Sequences are closed-form :class:`Schedule` rules so that summability and
limits can be read off the rule rather than guessed from samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .convex import ConvexSet, WholeSpace, sample_points
from .space import as_operator, as_vector

DIVERGENCE_LIMIT = 1e12
CLASS_TOL = 1e-8
FIXED_POINT_TOL = 1e-9
LIPSCHITZ_HORIZON = 64


class DivergenceError(ArithmeticError):
    """``||S^n x||`` blew past the divergence limit."""


# -- schedules ---------------------------------------------------------------

_RULES = ("zero", "constant", "inverse_square", "geometric", "harmonic", "shifted")


@dataclass(frozen=True)
class Schedule:
    """A sequence ``n -> value`` given by a named closed-form rule.

    ``zero``: 0; ``constant``: c; ``inverse_square``: a/n^2;
    ``geometric``: a*rho^n; ``harmonic``: a/n; ``shifted``: c + a/n.
    """

    rule: str
    a: float = 0.0
    c: float = 0.0
    rho: float = 0.0

    def __post_init__(self):
        if self.rule not in _RULES:
            raise ValueError(f"unknown schedule rule {self.rule!r}; expected one of {_RULES}")
        for name in ("a", "c", "rho"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"schedule parameter {name} must be finite")
            object.__setattr__(self, name, v)
        if self.rule == "geometric" and not 0.0 <= self.rho < 1.0:
            raise ValueError("geometric schedules need 0 <= rho < 1")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def constant(cls, value: float):
        return cls("constant", c=value)

    @classmethod
    def inverse_square(cls, a: float):
        return cls("inverse_square", a=a)

    @classmethod
    def geometric(cls, a: float, rho: float):
        return cls("geometric", a=a, rho=rho)

    @classmethod
    def harmonic(cls, a: float):
        return cls("harmonic", a=a)

    @classmethod
    def shifted(cls, c: float, a: float):
        return cls("shifted", a=a, c=c)

    def __call__(self, n: int) -> float:
        if n < 1:
            raise ValueError("schedules are indexed from n = 1")
        rule = self.rule
        if rule == "zero":
            return 0.0
        if rule == "constant":
            return self.c
        if rule == "inverse_square":
            return self.a / (n * n)
        if rule == "geometric":
            return self.a * self.rho**n
        if rule == "harmonic":
            return self.a / n
        return self.c + self.a / n

    @property
    def is_summable(self) -> bool:
        if self.rule in ("zero", "inverse_square", "geometric"):
            return True
        if self.rule == "constant":
            return self.c == 0.0
        if self.rule == "harmonic":
            return self.a == 0.0
        return self.c == 0.0 and self.a == 0.0

    @property
    def limit(self) -> float:
        return self.c if self.rule in ("constant", "shifted") else 0.0

    @property
    def liminf(self) -> float:
        return self.limit

    @property
    def infimum(self) -> float:
        """Infimum over ``n >= 1`` (possibly a limit that is not attained)."""
        first = self(1)
        return min(first, self.limit)

    @property
    def supremum(self) -> float:
        return max(self(1), self.limit)

    @property
    def nonnegative(self) -> bool:
        return self.infimum >= 0.0

    def to_dict(self) -> dict:
        d: dict = {"rule": self.rule}
        if self.rule in ("constant", "shifted"):
            d["c"] = self.c
        if self.rule in ("inverse_square", "geometric", "harmonic", "shifted"):
            d["a"] = self.a
        if self.rule == "geometric":
            d["rho"] = self.rho
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        extra = set(d) - {"rule", "a", "c", "rho"}
        if extra:
            raise ValueError(f"unknown schedule fields {sorted(extra)}")
        return cls(d["rule"], d.get("a", 0.0), d.get("c", 0.0), d.get("rho", 0.0))


# -- xi functions ------------------------------------------------------------

@dataclass(frozen=True)
class XiFunction:
    """Strictly increasing ``xi`` with ``xi(0) = 0`` and linear growth data.

    ``Linear(c)``: ``xi(t) = c t`` with threshold 0 and slope bound c.
    ``PiecewiseQuad(M)``: ``xi(t) = t^2`` up to ``M`` then ``M t``; threshold
    and slope bound are both ``M``. In both cases ``xi(t) <= slope * t`` for
    ``t >= threshold``.
    """

    variant: str
    param: float

    def __post_init__(self):
        if self.variant not in ("Linear", "PiecewiseQuad"):
            raise ValueError(f"unknown xi variant {self.variant!r}")
        p = float(self.param)
        if not (np.isfinite(p) and p > 0.0):
            raise ValueError("xi parameter must be positive")
        object.__setattr__(self, "param", p)

    @classmethod
    def linear(cls, c: float = 1.0):
        return cls("Linear", c)

    @classmethod
    def piecewise_quad(cls, M: float):
        return cls("PiecewiseQuad", M)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.variant == "Linear":
            out = self.param * t
        else:
            M = self.param
            out = np.where(t <= M, t * t, M * t)
        return float(out) if out.ndim == 0 else out

    @property
    def threshold(self) -> float:
        return 0.0 if self.variant == "Linear" else self.param

    @property
    def slope(self) -> float:
        return self.param

    def to_dict(self) -> dict:
        key = "c" if self.variant == "Linear" else "M"
        return {"variant": self.variant, key: self.param}

    @classmethod
    def from_dict(cls, d: dict) -> "XiFunction":
        variant = d["variant"]
        key = "c" if variant == "Linear" else "M"
        extra = set(d) - {"variant", key}
        if extra:
            raise ValueError(f"unknown xi fields {sorted(extra)}")
        return cls(variant, d[key])


# -- concrete maps -----------------------------------------------------------

class Map:
    kind: str = ""

    def __call__(self, x) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class AffineMap(Map):
    """``x -> B x + b``."""

    B: np.ndarray
    b: np.ndarray
    kind = "Affine"

    def __post_init__(self):
        B = as_operator(self.B)
        if B.shape[0] != B.shape[1]:
            raise ValueError("affine map needs a square matrix")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "b", as_vector(self.b, B.shape[0]))

    @property
    def dim(self) -> int:
        return self.B.shape[0]

    def __call__(self, x) -> np.ndarray:
        return self.B @ x + self.b


def identity_map(dim: int) -> AffineMap:
    return AffineMap(np.eye(dim), np.zeros(dim))


@dataclass(frozen=True, eq=False)
class ProjectionMap(Map):
    target: ConvexSet
    kind = "ProjectionOnto"

    @property
    def dim(self) -> int:
        return self.target.dim

    def __call__(self, x) -> np.ndarray:
        return self.target.project(x)


@dataclass(frozen=True, eq=False)
class NegationMap(Map):
    dim: int | None = None
    kind = "Negation"

    def __call__(self, x) -> np.ndarray:
        return -np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class CompositeMap(Map):
    """Applies ``maps[0]`` first, then ``maps[1]``, and so on."""

    maps: tuple[Map, ...]
    kind = "Composite"

    def __post_init__(self):
        if not self.maps:
            raise ValueError("composite map needs at least one component")
        object.__setattr__(self, "maps", tuple(self.maps))

    @property
    def dim(self) -> int | None:
        for m in self.maps:
            if getattr(m, "dim", None) is not None:
                return m.dim
        return None

    def __call__(self, x) -> np.ndarray:
        for m in self.maps:
            x = m(x)
        return x

    def as_affine(self) -> AffineMap | None:
        """Collapse to a single affine map when every component is linear."""
        dim = self.dim
        if dim is None:
            return None
        B, b = np.eye(dim), np.zeros(dim)
        for m in self.maps:
            if isinstance(m, AffineMap):
                B, b = m.B @ B, m.B @ b + m.b
            elif isinstance(m, NegationMap):
                B, b = -B, -b
            else:
                return None
        return AffineMap(B, b)


class PowerCache:
    """``S^n`` for an affine map via a table of repeated squares.

    The map is embedded as the augmented matrix ``[[B, b], [0, 1]]``; the
    table holds its powers ``2^j`` and grows on demand.
    """

    def __init__(self, affine: AffineMap):
        d = affine.dim
        T = np.zeros((d + 1, d + 1))
        T[:d, :d] = affine.B
        T[:d, d] = affine.b
        T[d, d] = 1.0
        self.dim = d
        self.table = [T]

    def _square(self, j: int) -> np.ndarray:
        while len(self.table) <= j:
            last = self.table[-1]
            self.table.append(last @ last)
        return self.table[j]

    def apply(self, n: int, x) -> np.ndarray:
        v = np.append(np.asarray(x, dtype=float), 1.0)
        j = 0
        while n:
            if n & 1:
                v = self._square(j) @ v
            n >>= 1
            j += 1
        return v[: self.dim]


@dataclass(eq=False)
class MappingSpec:
    """A candidate total asymptotically strict pseudo-contraction.

    Attributes
    ----------
    map : Map
        The concrete mapping ``S``.
    k : float
        Strictness constant in ``[0, 1)``.
    lambda_schedule, mu_schedule : Schedule
        Nonnegative summable sequences.
    xi : XiFunction
    lipschitz_theta : float or None
        Uniform Lipschitz bound for every power ``S^n``. Measured for affine
        maps, 1 for projections and negation, required for composites.
    """

    map: Map
    k: float = 0.0
    lambda_schedule: Schedule = field(default_factory=Schedule.zero)
    mu_schedule: Schedule = field(default_factory=Schedule.zero)
    xi: XiFunction = field(default_factory=XiFunction.linear)
    lipschitz_theta: float | None = None
    _cache: PowerCache | None = field(default=None, init=False, repr=False)
    _affine: AffineMap | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.k = float(self.k)
        if not 0.0 <= self.k < 1.0:
            raise ValueError("k must lie in [0, 1)")
        for name in ("lambda_schedule", "mu_schedule"):
            s = getattr(self, name)
            if not s.nonnegative:
                raise ValueError(f"{name} must be nonnegative")
        m = self.map
        if isinstance(m, AffineMap):
            self._affine = m
        elif isinstance(m, CompositeMap):
            self._affine = m.as_affine()
        if self._affine is not None:
            self._cache = PowerCache(self._affine)
        if self.lipschitz_theta is None:
            self.lipschitz_theta = self._default_theta()
        if not (np.isfinite(self.lipschitz_theta) and self.lipschitz_theta > 0.0):
            raise ValueError("lipschitz_theta must be positive")

    def _default_theta(self) -> float:
        if self._affine is not None:
            B = self._affine.B
            P, best = np.eye(B.shape[0]), 0.0
            for _ in range(LIPSCHITZ_HORIZON):
                P = B @ P
                best = max(best, float(np.linalg.norm(P, 2)))
            return max(best, 1e-12)
        if isinstance(self.map, (ProjectionMap, NegationMap)):
            return 1.0
        raise ValueError("lipschitz_theta must be supplied for composite maps")

    @property
    def dim(self) -> int | None:
        return getattr(self.map, "dim", None)

    @property
    def is_affine(self) -> bool:
        return self._affine is not None

    @property
    def affine(self) -> AffineMap | None:
        return self._affine


def apply(S: MappingSpec, x) -> np.ndarray:
    """Evaluate ``S x`` once."""
    return np.asarray(S.map(as_vector(x)), dtype=float)


def _iterate(S: MappingSpec, n: int, x) -> np.ndarray:
    for _ in range(n):
        x = S.map(x)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_LIMIT:
            raise DivergenceError(f"||S^n x|| exceeded {DIVERGENCE_LIMIT:g}")
    return x


def apply_power(S: MappingSpec, n: int, x, use_cache: bool = True) -> np.ndarray:
    """Evaluate ``S^n x``.

    Affine maps use the repeated-squaring cache; projections are idempotent so
    a single application suffices; everything else is iterated ``n`` times.

    Raises
    ------
    DivergenceError
        If ``||S^n x||`` exceeds ``1e12`` (the map is not admissible).
    """
    if n < 1:
        raise ValueError("power must be at least 1")
    x = as_vector(x)
    if use_cache and S._cache is not None:
        out = S._cache.apply(n, x)
    elif isinstance(S.map, ProjectionMap):
        out = S.map(x)
    elif isinstance(S.map, NegationMap):
        out = -x if n % 2 else x.copy()
    else:
        return _iterate(S, n, x)
    if not np.all(np.isfinite(out)) or np.linalg.norm(out) > DIVERGENCE_LIMIT:
        raise DivergenceError(f"||S^n x|| exceeded {DIVERGENCE_LIMIT:g}")
    return out


def fixed_point_residual(S: MappingSpec, x) -> float:
    x = as_vector(x)
    return float(np.linalg.norm(x - apply(S, x)))


# -- class predicates --------------------------------------------------------

CLASSES = (
    "nonexpansive",
    "firmly_nonexpansive",
    "pseudo_contraction",
    "k_strict",
    "asymptotically_strict",
    "total_asymptotically_nonexpansive",
    "taspc",
)
_ASYMPTOTIC = {"asymptotically_strict", "total_asymptotically_nonexpansive", "taspc"}


def _slack(cls: str, d, Sd, k, lam, mu, xi) -> float:
    """Signed slack of one class inequality for ``d = x - y``, ``Sd = S^n x - S^n y``."""
    dd = float(d @ d)
    ss = float(Sd @ Sd)
    e = d - Sd
    ee = float(e @ e)
    if cls == "nonexpansive":
        return dd - ss
    if cls == "firmly_nonexpansive":
        return dd - ss - ee
    if cls == "pseudo_contraction":
        return dd + ee - ss
    if cls == "k_strict":
        return dd + k * ee - ss
    if cls == "asymptotically_strict":
        # the multiplier sequence (1 + lambda_n) decreases to 1
        return (1.0 + lam) * dd + k * ee - ss
    if cls == "total_asymptotically_nonexpansive":
        r = np.sqrt(dd)
        return r + lam * xi(r) + mu - np.sqrt(ss)
    if cls == "taspc":
        return dd + k * ee + lam * xi(np.sqrt(dd)) + mu - ss
    raise ValueError(f"unknown mapping class {cls!r}")


@dataclass
class ClassReport:
    mapping_class: str
    slacks: dict[int, float]
    tol: float = CLASS_TOL

    @property
    def worst(self) -> float:
        return min(self.slacks.values())

    @property
    def passed(self) -> bool:
        return self.worst >= -self.tol


def _sample_pairs(S: MappingSpec, domain, samples, rng):
    if domain is None:
        dim = S.dim
        if dim is None:
            raise ValueError("a sampling domain is needed for dimension-free maps")
        domain = WholeSpace(dim)
    pts = sample_points(domain, rng, 2 * samples)
    return pts[0::2], pts[1::2]


def verify_class(S: MappingSpec, mapping_class: str, n_max: int = 16, samples: int = 200,
                 seed: int = 0, domain: ConvexSet | None = None, *, k: float | None = None,
                 lambda_schedule: Schedule | None = None, mu_schedule: Schedule | None = None,
                 xi: XiFunction | None = None, tol: float = CLASS_TOL) -> ClassReport:
    """Check a class inequality on sampled pairs for ``n = 1..n_max``.

    Parameters default to those stored on ``S``; pass ``k``, schedules or
    ``xi`` to test against other class parameters. Non-asymptotic classes are
    only checked at ``n = 1``. The report carries the worst signed slack per
    ``n`` and passes iff every slack is at least ``-tol``.
    """
    if mapping_class not in CLASSES:
        raise ValueError(f"unknown mapping class {mapping_class!r}")
    if n_max < 1 or samples < 1:
        raise ValueError("n_max and samples must be positive")
    k = S.k if k is None else k
    lam_s = S.lambda_schedule if lambda_schedule is None else lambda_schedule
    mu_s = S.mu_schedule if mu_schedule is None else mu_schedule
    xi = S.xi if xi is None else xi
    rng = np.random.default_rng(seed)
    X, Y = _sample_pairs(S, domain, samples, rng)
    ns = range(1, n_max + 1) if mapping_class in _ASYMPTOTIC else range(1, 2)
    slacks: dict[int, float] = {}
    for n in ns:
        lam, mu = lam_s(n), mu_s(n)
        worst = np.inf
        for x, y in zip(X, Y):
            try:
                Sd = apply_power(S, n, x) - apply_power(S, n, y)
            except DivergenceError:
                worst = -np.inf
                break
            worst = min(worst, _slack(mapping_class, x - y, Sd, k, lam, mu, xi))
        slacks[n] = float(worst)
    return ClassReport(mapping_class, slacks, tol)


def fixed_point_slacks(S: MappingSpec, p, x, n: int) -> tuple[float, float, float]:
    """Signed slacks of the three equivalent estimates around a fixed point ``p``.

    1. ``||S^n x - p||^2 <= ||x - p||^2 + k||x - S^n x||^2 + lambda_n xi(||x - p||) + mu_n``
    2. ``<x - S^n x, x - p> >= (1-k)/2 ||x - S^n x||^2 - lambda_n/2 xi(.) - mu_n/2``
    3. ``<x - S^n x, p - S^n x> <= (1+k)/2 ||x - S^n x||^2 + lambda_n/2 xi(.) + mu_n/2``

    Raises ``ValueError`` when ``p`` is not a fixed point of ``S``.
    """
    p = as_vector(p)
    x = as_vector(x, p.size)
    if fixed_point_residual(S, p) > FIXED_POINT_TOL:
        raise ValueError("p is not a fixed point of S")
    Snx = apply_power(S, n, x)
    k, lam, mu = S.k, S.lambda_schedule(n), S.mu_schedule(n)
    xi_val = S.xi(float(np.linalg.norm(x - p)))
    e = x - Snx
    ee = float(e @ e)
    extra = lam * xi_val + mu
    s1 = float((x - p) @ (x - p)) + k * ee + extra - float((Snx - p) @ (Snx - p))
    s2 = float(e @ (x - p)) - 0.5 * (1.0 - k) * ee + 0.5 * extra
    s3 = 0.5 * (1.0 + k) * ee + 0.5 * extra - float(e @ (p - Snx))
    return s1, s2, s3


def invariance_violation(S: MappingSpec, domain: ConvexSet, samples: int = 200,
                         seed: int = 0) -> float:
    """Largest distance from ``S(domain)`` to ``domain`` over sampled points."""
    rng = np.random.default_rng(seed)
    pts = sample_points(domain, rng, samples)
    return max(float(np.linalg.norm(Sx - domain.project(Sx)))
               for Sx in (apply(S, z) for z in pts))


def lipschitz_violation(S: MappingSpec, n_max: int = 16, samples: int = 100, seed: int = 0,
                        domain: ConvexSet | None = None) -> float:
    """Worst ``||S^n x - S^n y|| - Theta ||x - y||`` over sampled pairs."""
    rng = np.random.default_rng(seed)
    X, Y = _sample_pairs(S, domain, samples, rng)
    worst = -np.inf
    for n in range(1, n_max + 1):
        for x, y in zip(X, Y):
            gap = np.linalg.norm(apply_power(S, n, x) - apply_power(S, n, y))
            worst = max(worst, gap - S.lipschitz_theta * np.linalg.norm(x - y))
    return float(worst)

