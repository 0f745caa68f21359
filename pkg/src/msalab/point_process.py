"""Poisson and marked Poisson point processes on boxes, with exact tail oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import ValidationError
from .rng import stream


@dataclass(frozen=True)
class Box:
    """Open box ``center + (-side/2, side/2)^d``."""

    center: tuple[float, ...]
    side: float

    def __post_init__(self):
        if not self.side > 0:
            raise ValidationError(f"box side must be positive, got {self.side}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) < 1:
            raise ValidationError("box dimension must be >= 1")

    @classmethod
    def cube(cls, side: float, d: int, center: float = 0.0) -> "Box":
        return cls((center,) * d, side)

    @property
    def dimension(self) -> int:
        return len(self.center)

    @property
    def volume(self) -> float:
        return self.side ** self.dimension

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center) - self.side / 2

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.center) + self.side / 2

    def contains(self, points) -> np.ndarray:
        """Boolean mask of points strictly inside the box."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        off = np.abs(pts - np.asarray(self.center))
        return np.all(off < self.side / 2, axis=1)

    def contains_box(self, other: "Box") -> bool:
        off = np.abs(np.asarray(other.center) - np.asarray(self.center))
        return bool(np.all(off + other.side / 2 <= self.side / 2 + 1e-12))

    def shrink(self, amount: float) -> "Box":
        return Box(self.center, self.side - amount)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "side": self.side}


def _as_points(points, d: int | None = None) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return np.zeros((0, d if d is not None else (arr.shape[-1] if arr.ndim == 2 else 1)))
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if d in (None, 1) else arr.reshape(-1, d)
    return arr


@dataclass(frozen=True)
class Configuration:
    """A finite set of distinct impurity locations, stored as an ``(n, d)`` array."""

    points: np.ndarray
    dimension: int = field(default=0)

    def __post_init__(self):
        d = self.dimension or None
        pts = _as_points(self.points, d)
        if len(pts) > 1 and len(np.unique(pts, axis=0)) != len(pts):
            raise ValidationError("configuration points must be pairwise distinct")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "dimension", pts.shape[1])
        pts.setflags(write=False)

    @classmethod
    def empty(cls, d: int) -> "Configuration":
        return cls(np.zeros((0, d)), d)

    def __len__(self) -> int:
        return self.points.shape[0]

    def count(self, box: Box) -> int:
        """``N_X(box)``."""
        if len(self) == 0:
            return 0
        return int(np.count_nonzero(box.contains(self.points)))

    def restrict(self, box: Box) -> "Configuration":
        if len(self) == 0:
            return self
        return Configuration(self.points[box.contains(self.points)], self.dimension)

    def union(self, other: "Configuration") -> "Configuration":
        return Configuration(np.vstack([self.points, other.points]), self.dimension)

    def is_distinct(self) -> bool:
        return len(np.unique(self.points, axis=0)) == len(self)

    def to_list(self) -> list[list[float]]:
        return self.points.tolist()


@dataclass(frozen=True)
class MarkedConfiguration:
    points: np.ndarray
    marks: np.ndarray
    dimension: int = field(default=0)

    def __post_init__(self):
        pts = _as_points(self.points, self.dimension or None)
        marks = np.asarray(self.marks, dtype=np.int8).reshape(-1)
        if marks.shape[0] != pts.shape[0]:
            raise ValidationError("one mark per point required")
        if np.any((marks != 0) & (marks != 1)):
            raise ValidationError("marks must be 0 or 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "dimension", pts.shape[1])

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def support(self) -> Configuration:
        return Configuration(self.points, self.dimension)


@dataclass(frozen=True)
class PoissonParams:
    density: float
    seed: int = 0

    def __post_init__(self):
        if not (self.density > 0 and math.isfinite(self.density)):
            raise ValidationError(f"density must be positive and finite, got {self.density}")


def _uniform_distinct(rng: np.random.Generator, box: Box, n: int) -> np.ndarray:
    """``n`` i.i.d. uniform points strictly inside ``box``, pairwise distinct."""
    d = box.dimension
    lo, hi = box.lower, box.upper
    pts = rng.uniform(lo, hi, size=(n, d))
    while True:
        bad = ~box.contains(pts) if n else np.zeros(0, bool)
        if n:
            _, first = np.unique(pts, axis=0, return_index=True)
            dup = np.ones(n, bool)
            dup[first] = False
            bad |= dup
        if not bad.any():
            return pts
        pts[bad] = rng.uniform(lo, hi, size=(int(bad.sum()), d))


def sample_poisson(box: Box, params: PoissonParams, *labels: int) -> Configuration:
    """Sample a homogeneous Poisson configuration on ``box``.

    The count is drawn exactly from Poisson(density * |box|) and the points are
    placed i.i.d. uniformly. ``labels`` select an independent sub-stream of
    ``params.seed`` (e.g. a trial index), so identical inputs give identical output.
    """
    rng = stream(params.seed, 0, *labels)
    n = int(rng.poisson(params.density * box.volume))
    return Configuration(_uniform_distinct(rng, box, n), box.dimension)


def sample_marked(box: Box, density2: float, seed: int, *labels: int) -> MarkedConfiguration:
    """Marked Poisson process of density ``density2`` with fair Bernoulli marks."""
    if not (density2 > 0 and math.isfinite(density2)):
        raise ValidationError(f"density must be positive and finite, got {density2}")
    rng = stream(seed, 1, *labels)
    n = int(rng.poisson(density2 * box.volume))
    pts = _uniform_distinct(rng, box, n)
    marks = rng.integers(0, 2, size=n, dtype=np.int8)
    return MarkedConfiguration(pts, marks, box.dimension)


def split_marked(m: MarkedConfiguration) -> tuple[Configuration, Configuration]:
    """Return ``(X, X')``: the points with mark 1 and the points with mark 0."""
    one = m.marks == 1
    return (Configuration(m.points[one], m.dimension),
            Configuration(m.points[~one], m.dimension))


# -- exact Poisson tails ----------------------------------------------------

def _pmf_log(mu: float, j: int) -> float:
    return j * math.log(mu) - mu - math.lgamma(j + 1)


def poisson_tail_exact(mu: float, k: int) -> float:
    """``P{N >= k}`` for ``N ~ Poisson(mu)``, by compensated summation of the pmf.

    Sums whichever side of ``k`` carries less than half of the mass so the
    result keeps full relative precision in both tails.
    """
    if mu < 0 or not math.isfinite(mu):
        raise ValidationError(f"mean must be a nonnegative finite number, got {mu}")
    k = int(k)
    if k < 0:
        raise ValidationError(f"k must be a nonnegative integer, got {k}")
    if k == 0:
        return 1.0
    if mu == 0:
        return 0.0
    lower = math.fsum(math.exp(_pmf_log(mu, j)) for j in range(k))
    if lower <= 0.5:
        return 1.0 - lower
    terms = []
    j = k
    while True:
        t = math.exp(_pmf_log(mu, j))
        terms.append(t)
        j += 1
        if j > mu and (t == 0.0 or t < 1e-18 * terms[0]):
            break
    return math.fsum(terms)


def poisson_lower_exact(mu: float, k: int) -> float:
    """``P{N < k}``."""
    if k <= 0:
        return 0.0
    lower = math.fsum(math.exp(_pmf_log(mu, j)) for j in range(int(k))) if mu > 0 else 1.0
    return min(lower, 1.0)


def deviation_constant(k: int) -> float:
    """``C_k = int_0^inf lambda^(k-1)/(k-1)! e^(-lambda/2) d lambda`` by quadrature."""
    if k < 1:
        raise ValidationError("C_k is defined for k >= 1")
    f = lambda lam: math.exp((k - 1) * math.log(lam) - math.lgamma(k) - lam / 2) if lam > 0 else (
        1.0 if k == 1 else 0.0)
    val, _ = integrate.quad(f, 0, np.inf, limit=200)
    return val


@dataclass
class BoundCheck:
    """One bound evaluation; ``passed`` is decided on logarithms so underflow cannot decide it."""

    name: str
    exact: float | None
    bound: float | None
    asserted: bool
    passed: bool | None
    note: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DeviationReport:
    mu: float
    checks: list[BoundCheck]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks if c.asserted)

    def to_dict(self) -> dict:
        return {"mu": self.mu, "checks": [c.to_dict() for c in self.checks],
                "all_passed": self.all_passed}


def poisson_log_tail_upper(mu: float, k: int) -> float:
    """``log P{N >= k}`` for ``k > mu``, by log-sum-exp of the decreasing pmf terms."""
    if not (mu > 0 and k > mu):
        raise ValidationError("log tail requires 0 < mu < k")
    logs = []
    j = int(k)
    while True:
        logs.append(_pmf_log(mu, j))
        if logs[-1] < logs[0] - 40:
            break
        j += 1
    top = max(logs)
    return top + math.log(math.fsum(math.exp(v - top) for v in logs))


def check_deviation_bounds(mu: float, a: float | None = None, k: int | None = None) -> DeviationReport:
    """Evaluate the large-deviation bound ``P{N >= a mu} < e^(-a mu)`` and the
    lower-tail bound ``P{N < k} < C_k e^(-mu/2)`` against exact tails.

    Parameters outside a bound's validity domain are reported as not asserted.
    """
    if mu < 0:
        raise ValidationError(f"mean must be nonnegative, got {mu}")
    checks = []
    if a is not None:
        if math.e * mu > 1 and a > math.e ** 2:
            k_hi = math.ceil(a * mu)
            exact = poisson_tail_exact(mu, k_hi)
            bound = math.exp(-a * mu)
            passed = poisson_log_tail_upper(mu, k_hi) < -a * mu
            checks.append(BoundCheck("large_deviation", exact, bound, True, passed))
        else:
            checks.append(BoundCheck("large_deviation", None, None, False, None,
                                     "requires e*mu > 1 and a > e^2; bound not asserted"))
    if k is not None:
        if k >= 1:
            exact = poisson_lower_exact(mu, k)
            ck = deviation_constant(k)
            bound = ck * math.exp(-mu / 2)
            checks.append(BoundCheck("lower_tail", exact, bound, True, exact < bound,
                                     f"C_k={ck!r}"))
        else:
            checks.append(BoundCheck("lower_tail", None, None, False, None,
                                     "requires k >= 1; bound not asserted"))
    return DeviationReport(mu, checks)


def bracket_check(mu: float, k: int) -> tuple[float, float, float]:
    """``(mu^k/k! e^-mu, P{N>=k}, mu^k/k!)`` for the two-sided tail bracket."""
    upper = math.exp(k * math.log(mu) - math.lgamma(k + 1))
    return upper * math.exp(-mu), poisson_tail_exact(mu, k), upper
