"""Finite-volume reduction of configurations onto the eta-grid.

Cell membership is decided in exact rational arithmetic: every float is a
dyadic rational, so ``(p - x) / eta`` is computed as a ratio of Python
integers. At ``eta = e^{-32}`` a cell is only a handful of ulps wide near
``|p| ~ 16`` and the boundary strip (width ``eta^2/2``) is far below float
resolution; float arithmetic cannot resolve either.
"""

from __future__ import annotations

import itertools
import math
import sys
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DomainError, ValidationError
from .point_process import Box, Configuration

Site = tuple[int, ...]

# class labels
ACCEPTABLE = "acceptable"
ACCEPTABLE_PRIME = "acceptable'"
NEITHER = "neither"


class RebaseAmbiguityWarning(UserWarning):
    """Parent grid is not fine enough relative to sqrt of the child cell side."""


def eta_of_scale(L: float, kappa: float = 1.0) -> float:
    """Grid cell side ``exp(-L**kappa)``.

    The proof-bookkeeping value uses ``kappa = 10**6 * d``, which underflows for
    any ``L > 1``; the default ``kappa = 1`` keeps eta representable.
    """
    if not L > 1:
        raise ValidationError(f"eta schedule needs L > 1, got {L}")
    if not kappa > 0:
        raise ValidationError(f"kappa must be positive, got {kappa}")
    try:
        expo = L ** kappa
    except OverflowError:
        expo = math.inf
    eta = math.exp(-expo) if math.isfinite(expo) else 0.0
    if eta < sys.float_info.min:
        raise ValidationError(
            f"eta = exp(-{L}^{kappa}) underflows double precision; use a smaller kappa "
            f"(need L^kappa < {-math.log(sys.float_info.min):.0f})")
    return eta


@dataclass(frozen=True)
class DensityParams:
    """Soft exponents: sub-box side ``L^(1-eps_scale)``, count ``L^(d-eps_count)``."""

    eps_scale: float = 0.05
    eps_count: float = 0.05

    def __post_init__(self):
        for name in ("eps_scale", "eps_count"):
            v = getattr(self, name)
            if not 0 < v < 0.25:
                raise ValidationError(f"{name} must lie in (0, 1/4), got {v}")


def _ratio(v) -> tuple[int, int]:
    if isinstance(v, Fraction):
        return v.numerator, v.denominator
    return float(v).as_integer_ratio()


@dataclass(frozen=True)
class EtaGrid:
    """Sites ``j = center + eta*k`` whose cells ``Lambda_eta(j)`` lie inside the box.

    Sites are addressed by integer index tuples ``k`` with ``|k_i| <= half_count``.
    """

    box: Box
    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ValidationError(f"eta must be positive, got {self.eta}")
        if self.eta > self.box.side:
            raise ValidationError("eta exceeds the box side")

    @classmethod
    def for_box(cls, box: Box, kappa: float = 1.0) -> "EtaGrid":
        return cls(box, eta_of_scale(box.side, kappa))

    @property
    def dimension(self) -> int:
        return self.box.dimension

    @property
    def half_count(self) -> int:
        ln, ld = _ratio(self.box.side)
        en, ed = _ratio(self.eta)
        # |k| <= (L/eta - 1)/2
        return (ln * ed - ld * en) // (2 * ld * en)

    @property
    def n_sites(self) -> int:
        return (2 * self.half_count + 1) ** self.dimension

    def site_position(self, site: Site) -> np.ndarray:
        return np.asarray(self.box.center) + self.eta * np.asarray(site, dtype=float)

    def site_positions(self, sites) -> np.ndarray:
        sites = sorted(sites)
        if not sites:
            return np.zeros((0, self.dimension))
        return np.asarray(self.box.center) + self.eta * np.asarray(sites, dtype=float)

    def site_fraction(self, site: Site) -> tuple[Fraction, ...]:
        e = Fraction(self.eta)
        return tuple(Fraction(c) + e * k for c, k in zip(self.box.center, site))

    def locate(self, points) -> "CellLocation":
        return locate_cells(np.atleast_2d(np.asarray(points, float)), self)


@dataclass
class CellLocation:
    """Exact per-point cell data: index, and membership flags."""

    sites: list[Site]           # nearest lattice index (meaningful where in_cell)
    in_box: np.ndarray          # strictly inside the box
    in_cell: np.ndarray         # inside some J-cell (open)
    in_core: np.ndarray         # inside the shrunken cell Lambda_{eta(1-eta)}(j)


def locate_cells(points: np.ndarray, grid: EtaGrid) -> CellLocation:
    n, d = points.shape if points.size else (0, grid.dimension)
    en, em = _ratio(grid.eta)            # eta = en/em
    ln, ld = _ratio(grid.box.side)
    K = grid.half_count
    ks = np.zeros((n, d), dtype=object)
    in_box = np.ones(n, bool)
    in_cell = np.ones(n, bool)
    in_core = np.ones(n, bool)
    for axis in range(d):
        c, e = _ratio(grid.box.center[axis])
        col = points[:, axis].tolist()
        for i, p in enumerate(col):
            a, b = p.as_integer_ratio()
            N = (a * e - c * b) * em     # (p - x)/eta = N/D
            D = b * e * en
            k = (2 * N + D) // (2 * D)
            ks[i, axis] = k
            r2 = abs(2 * N - 2 * k * D)  # = 2 D |r - k|
            # |p - x| < L/2  <=>  |N|/D < L/(2 eta)
            if not abs(N) * 2 * ld * en < ln * em * D:
                in_box[i] = False
            if not (r2 < D and abs(k) <= K):
                in_cell[i] = False
            if not r2 * em < D * (em - en):
                in_core[i] = False
    in_cell &= in_box
    in_core &= in_cell
    sites = [tuple(int(v) for v in row) for row in ks] if n else []
    return CellLocation(sites, in_box, in_cell, in_core)


@dataclass(frozen=True)
class AcceptabilityVerdict:
    total_ok: bool
    cell_ok: bool
    strict_boundary_ok: bool
    loose_boundary_ok: bool
    count: int = 0

    @property
    def klass(self) -> str:
        if self.total_ok and self.cell_ok and self.strict_boundary_ok:
            return ACCEPTABLE
        if self.total_ok and self.cell_ok and self.loose_boundary_ok:
            return ACCEPTABLE_PRIME
        return NEITHER

    @property
    def acceptable(self) -> bool:
        return self.klass == ACCEPTABLE

    @property
    def acceptable_prime(self) -> bool:
        return self.klass in (ACCEPTABLE, ACCEPTABLE_PRIME)

    def to_dict(self) -> dict:
        return {"total_ok": self.total_ok, "cell_ok": self.cell_ok,
                "strict_boundary_ok": self.strict_boundary_ok,
                "loose_boundary_ok": self.loose_boundary_ok, "count": self.count,
                "class": self.klass}


def total_count_threshold(density: float, L: float, d: int) -> float:
    return 16.0 * density * L ** d


def classify_acceptable(cfg: Configuration, grid: EtaGrid, density: float) -> AcceptabilityVerdict:
    """Exact-count acceptability of ``cfg`` on ``grid`` (points outside the box are ignored)."""
    loc = grid.locate(cfg.points) if len(cfg) else None
    if loc is None:
        return AcceptabilityVerdict(True, True, True, True, 0)
    count = int(loc.in_box.sum())
    total_ok = count < total_count_threshold(density, grid.box.side, grid.dimension)
    occupied = [s for s, ok in zip(loc.sites, loc.in_cell) if ok]
    cell_ok = len(set(occupied)) == len(occupied)
    loose_ok = bool(np.all(loc.in_cell[loc.in_box]))
    strict_ok = bool(np.all(loc.in_core[loc.in_box]))
    return AcceptabilityVerdict(bool(total_ok), cell_ok, strict_ok, loose_ok, count)


def acceptability_failure_bound(density: float, L: float, d: int, eta: float) -> float:
    """Union bound on ``P{Y not acceptable}`` assembled from the Poisson tail estimates."""
    return (math.exp(-16 * density * L ** d) + 4 * d * density * (L ** (d - 1) + L ** d) * eta
            + 2 * density ** 2 * L ** d * eta ** d)


@dataclass(frozen=True)
class OccupancyClass:
    """The equivalence class of a configuration: its set of occupied grid sites."""

    grid: EtaGrid
    occupied: frozenset

    def __len__(self):
        return len(self.occupied)

    def positions(self) -> np.ndarray:
        return self.grid.site_positions(self.occupied)


def occupancy_class(cfg: Configuration, grid: EtaGrid, density: float = math.inf) -> OccupancyClass:
    """Occupied-site set of an acceptable' configuration.

    ``density`` only enters the total-count condition; the default disables it.
    """
    if len(cfg) == 0:
        return OccupancyClass(grid, frozenset())
    loc = grid.locate(cfg.points)
    occupied = [s for s, ok in zip(loc.sites, loc.in_cell) if ok]
    if len(set(occupied)) != len(occupied):
        raise DomainError("configuration has two points in one cell (not acceptable')")
    if not np.all(loc.in_cell[loc.in_box]):
        raise DomainError("configuration has a point outside every cell (not acceptable')")
    if not len(occupied) < total_count_threshold(density, grid.box.side, grid.dimension):
        raise DomainError("configuration exceeds the total-count bound (not acceptable')")
    return OccupancyClass(grid, frozenset(occupied))


def snap_representative(occ: OccupancyClass) -> Configuration:
    """One point at the center of each occupied cell."""
    d = occ.grid.dimension
    if not occ.occupied:
        return Configuration.empty(d)
    pts = occ.positions()
    loc = occ.grid.locate(pts)
    if not np.all(loc.in_core) or set(loc.sites) != set(occ.occupied):
        raise DomainError("cell centers are not representable at this eta (cells below float spacing)")
    return Configuration(pts, d)


# -- density condition -------------------------------------------------------

def _axis_positions(lo: float, hi: float, step: float) -> np.ndarray:
    if hi <= lo:
        return np.array([(lo + hi) / 2])
    n = int(math.floor((hi - lo) / step + 1e-9))
    vals = lo + step * np.arange(n + 1)
    if hi - vals[-1] > 1e-9 * max(1.0, abs(hi)):
        vals = np.append(vals, hi)
    return vals


def density_subboxes(box: Box, params: DensityParams) -> tuple[float, list[np.ndarray]]:
    """Sub-box side and the candidate centers (half-step lattice, extremes included)."""
    L, d = box.side, box.dimension
    s = L ** (1 - params.eps_scale)
    axes = [_axis_positions(c - (L - s) / 2, c + (L - s) / 2, s / 2) for c in box.center]
    centers = [np.asarray(t) for t in itertools.product(*axes)]
    return s, centers


def is_dense(S, box: Box, params: DensityParams = DensityParams(), delta_plus: float = 1.0) -> bool:
    """Density condition on the free-site positions ``S``.

    Every sub-box of side ``L^(1-eps)`` inside ``box`` (on a half-step lattice of
    positions) must hold at least ``L^(d-eps')`` points of ``S`` in its interior
    shrunk by ``delta_plus``.
    """
    return density_witness(S, box, params, delta_plus) is None


def density_witness(S, box: Box, params: DensityParams = DensityParams(),
                    delta_plus: float = 1.0) -> np.ndarray | None:
    """A sub-box center violating the density condition, or None."""
    pts = S.points if isinstance(S, Configuration) else np.asarray(S, float).reshape(-1, box.dimension)
    L, d = box.side, box.dimension
    need = L ** (d - params.eps_count)
    s, centers = density_subboxes(box, params)
    half = (s - delta_plus) / 2
    for c in centers:
        if half <= 0:
            n = 0
        else:
            n = int(np.count_nonzero(np.all(np.abs(pts - c) < half, axis=1))) if len(pts) else 0
        if n < need:
            return c
    return None


# -- basic events ------------------------------------------------------------

@dataclass(frozen=True)
class BEvent:
    """Site triple (B, B', S) on one grid: X-occupied, X'-occupied, and free sites."""

    grid: EtaGrid
    B: frozenset
    Bp: frozenset
    S: frozenset

    def __post_init__(self):
        for name in ("B", "Bp", "S"):
            object.__setattr__(self, name, frozenset(tuple(int(v) for v in s) for s in getattr(self, name)))
        if self.B & self.Bp or self.B & self.S or self.Bp & self.S:
            raise ValidationError("B, B', S must be pairwise disjoint")
        K = self.grid.half_count
        for s in self.union:
            if len(s) != self.grid.dimension or any(abs(v) > K for v in s):
                raise ValidationError(f"site {s} is not a grid site")

    @property
    def union(self) -> frozenset:
        return self.B | self.Bp | self.S

    def within_count(self, density: float) -> bool:
        return len(self.union) < total_count_threshold(density, self.grid.box.side, self.grid.dimension)

    def key(self) -> tuple:
        return (tuple(sorted(self.B)), tuple(sorted(self.Bp)), tuple(sorted(self.S)))


def _parent_sites_in_core(child: EtaGrid, site: Site, parent: EtaGrid) -> list[Site]:
    """Parent sites whose centers lie in the shrunken child cell of ``site``."""
    ec, ep = Fraction(child.eta), Fraction(parent.eta)
    half_core = ec * (1 - ec) / 2
    Kp = parent.half_count
    centre = child.site_fraction(site)
    ranges = []
    for axis, a in enumerate(centre):
        x = Fraction(parent.box.center[axis])
        lo = (a - half_core - x) / ep
        hi = (a + half_core - x) / ep
        k_lo = math.floor(lo) + 1
        k_hi = math.ceil(hi) - 1
        ks = [k for k in range(max(k_lo, -Kp), min(k_hi, Kp) + 1)]
        ranges.append(ks)
    return [tuple(t) for t in itertools.product(*ranges)]


def rebase_bevent(be: BEvent, parent: EtaGrid, max_events: int = 100_000) -> list[BEvent]:
    """Re-express a bevent of a sub-box grid as disjoint bevents on the parent grid.

    Each occupied child site is replaced by exactly one parent site whose center
    lies in the child cell's core, so every output realises the same child-scale
    occupancy. Distinct outputs prescribe different parent occupancies and are
    therefore disjoint events.
    """
    child = be.grid
    if not parent.eta < child.eta:
        raise ValidationError(f"parent eta {parent.eta} must be finer than child eta {child.eta}")
    if not parent.box.contains_box(child.box):
        raise ValidationError("child box must lie inside the parent box")
    if parent.eta > 0.1 * math.sqrt(child.eta):
        warnings.warn(f"parent eta {parent.eta:g} is not << sqrt(child eta) = {math.sqrt(child.eta):g}; "
                      "rebased events may be ambiguous", RebaseAmbiguityWarning, stacklevel=2)
    labelled = [(s, "B") for s in sorted(be.B)] + [(s, "Bp") for s in sorted(be.Bp)] + \
               [(s, "S") for s in sorted(be.S)]
    options = [_parent_sites_in_core(child, s, parent) for s, _ in labelled]
    total = math.prod(len(o) for o in options) if options else 1
    if total > max_events:
        raise ValidationError(f"rebasing would produce {total} events (max_events={max_events})")
    out = []
    for choice in itertools.product(*options):
        parts = {"B": [], "Bp": [], "S": []}
        for (_, lab), site in zip(labelled, choice):
            parts[lab].append(site)
        out.append(BEvent(parent, frozenset(parts["B"]), frozenset(parts["Bp"]), frozenset(parts["S"])))
    return out


def bevent_of(X: Configuration, Xp: Configuration, grid: EtaGrid, free=None) -> BEvent:
    """Bevent containing the marked sample ``(X, X')``; ``free`` selects S among X' sites.

    With ``free=None`` every X'-occupied site is a free site and B' is empty.
    """
    B = occupancy_class(X, grid).occupied
    Sp = occupancy_class(Xp, grid).occupied
    if free is None:
        return BEvent(grid, B, frozenset(), Sp)
    S = frozenset(free) & Sp
    return BEvent(grid, B, Sp - S, S)
