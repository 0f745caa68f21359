"""Standard coverings of boxes by overlapping sub-boxes, and scale ladders.

A standard ``ell``-covering of ``Lambda_L(x)`` places sub-box centers on
``x + alpha*ell*Z^d`` inside the box, with overlap ratio
``alpha = (L - ell) / (2 ell n)`` in ``(3/5, 4/5]``. All geometry is checked in
exact rational arithmetic; coverings are products of 1D coverings, so each
property reduces to per-axis interval bookkeeping plus a probe-grid cross-check.
"""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DomainError, IncompatibleScales, ValidationError
from .point_process import Box

ALPHA_LO = Fraction(3, 5)
ALPHA_HI = Fraction(4, 5)
# neighbourhood side (in units of ell) that the definition asks for
STATED_REACH = Fraction(2, 5)
# largest neighbourhood side that alpha <= 4/5 guarantees: ell/2 - alpha*ell/2 >= ell/10
SAFE_REACH = Fraction(1, 5)
SNAP_ALPHAS = (Fraction(4, 5), Fraction(2, 3))


class CoveringError(DomainError):
    """No sub-box of a covering contains the requested neighbourhood."""


def _frac(v) -> Fraction:
    return v if isinstance(v, Fraction) else Fraction(float(v)).limit_denominator(10 ** 9)


def admissible_alphas(L, ell) -> list[tuple[int, Fraction]]:
    """All ``(n, alpha)`` with ``alpha = (L - ell)/(2 ell n)`` in ``(3/5, 4/5]``, by increasing n."""
    L, ell = _frac(L), _frac(ell)
    if not ell > 0 or not L > ell:
        return []
    q = (L - ell) / (2 * ell)
    n_lo = max(1, math.ceil(q / ALPHA_HI))
    out = []
    n = n_lo
    while q / n > ALPHA_LO:
        a = q / n
        if a <= ALPHA_HI:
            out.append((n, a))
        n += 1
    return out


def compatible_side(n: int, alpha: Fraction, ell) -> Fraction:
    return (2 * n * alpha + 1) * _frac(ell)


def nearest_compatible(L, ell) -> Fraction:
    """Nearest side ``(2 n alpha + 1) ell`` with alpha in {4/5, 2/3}."""
    L, ell = _frac(L), _frac(ell)
    best = None
    n_max = max(2, int(L / ell) + 2)
    for n in range(1, n_max + 1):
        for a in SNAP_ALPHAS:
            cand = compatible_side(n, a, ell)
            if best is None or abs(cand - L) < abs(best - L) or (abs(cand - L) == abs(best - L) and cand < best):
                best = cand
    return best


@dataclass(frozen=True)
class CoveringPlan:
    parent: Box
    ell: Fraction
    alpha: Fraction
    n: int
    axis_offsets: tuple[Fraction, ...] = field(default=())   # multiples of alpha*ell, shared by all axes

    @property
    def dimension(self) -> int:
        return self.parent.dimension

    @property
    def side(self) -> Fraction:
        return _frac(self.parent.side)

    def axis_centers(self, axis: int) -> list[Fraction]:
        c = _frac(self.parent.center[axis])
        return [c + o for o in self.axis_offsets]

    @property
    def centers(self) -> np.ndarray:
        axes = [[float(v) for v in self.axis_centers(i)] for i in range(self.dimension)]
        return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, self.dimension)

    def __len__(self) -> int:
        return len(self.axis_offsets) ** self.dimension

    def boxes(self) -> list[Box]:
        return [Box(tuple(c), float(self.ell)) for c in self.centers]

    def to_dict(self) -> dict:
        return {"parent": self.parent.to_dict(), "ell": str(self.ell), "alpha": str(self.alpha),
                "alpha_float": float(self.alpha), "n": self.n, "count": len(self),
                "centers_per_axis": len(self.axis_offsets)}


def _offsets(L: Fraction, ell: Fraction, alpha: Fraction) -> tuple[Fraction, ...]:
    step = alpha * ell
    K = 0
    while (K + 1) * step < L / 2:
        K += 1
    return tuple(step * k for k in range(-K, K + 1))


def standard_covering(parent: Box, ell, validate: bool = True) -> CoveringPlan:
    """Standard ``ell``-covering with the smallest admissible ``n`` (largest alpha)."""
    L, ell = _frac(parent.side), _frac(ell)
    if not ell > 0:
        raise ValidationError("ell must be positive")
    if not ell < L:
        raise ValidationError(f"need ell < L, got ell={ell}, L={L}")
    cands = admissible_alphas(L, ell)
    if not cands:
        near = nearest_compatible(L, ell)
        raise IncompatibleScales(
            f"no alpha in (3/5, 4/5] of the form (L-ell)/(2 ell n) for L={float(L)}, ell={float(ell)}; "
            f"nearest compatible L is {float(near):.6g}", nearest=float(near))
    n, alpha = cands[0]
    plan = CoveringPlan(parent, ell, alpha, n, _offsets(L, ell, alpha))
    if validate:
        rep = verify_plan(plan, reach=SAFE_REACH, probe=False)
        if not (rep.coverage and rep.core_disjoint and rep.cardinality):
            raise DomainError(f"covering construction failed its own checks: {rep.to_dict()}")
    return plan


# -- property checks -----------------------------------------------------------

def _merge_gaps(intervals: list[tuple[Fraction, Fraction]], lo: Fraction, hi: Fraction,
                closed: bool) -> list[tuple[Fraction, Fraction]]:
    """Parts of the open interval ``(lo, hi)`` not covered by the intervals.

    ``closed`` intervals cover their endpoints; open ones leave them uncovered.
    Returned gaps are ``(a, b)`` pairs; ``a == b`` denotes a single uncovered point.
    """
    gaps = []
    pos = lo
    pos_covered = True   # lo itself is outside the open box
    for a, b in sorted(intervals):
        if b <= pos and not (closed and b == pos):
            continue
        if a > pos or (a == pos and not closed and not pos_covered):
            if a > pos:
                gaps.append((pos, min(a, hi)))
            elif pos > lo:
                gaps.append((pos, pos))
        if b > pos:
            pos = b
            pos_covered = closed
        if pos >= hi:
            break
    if pos < hi:
        gaps.append((pos, hi))
    return [(a, b) for a, b in gaps if a < hi and b > lo or a == b and lo < a < hi]


def axis_coverage_gaps(plan: CoveringPlan, axis: int = 0) -> list:
    c = _frac(plan.parent.center[axis])
    lo, hi = c - plan.side / 2, c + plan.side / 2
    iv = [(r - plan.ell / 2, r + plan.ell / 2) for r in plan.axis_centers(axis)]
    return _merge_gaps(iv, lo, hi, closed=False)


def axis_containment_gaps(plan: CoveringPlan, reach=STATED_REACH, axis: int = 0) -> list:
    """Points ``y`` of the axis whose clipped ``reach*ell``-neighbourhood fits in no sub-box."""
    reach = _frac(reach)
    c = _frac(plan.parent.center[axis])
    lo, hi = c - plan.side / 2, c + plan.side / 2
    half_nb = reach * plan.ell / 2
    iv = []
    for r in plan.axis_centers(axis):
        a_box, b_box = r - plan.ell / 2, r + plan.ell / 2
        # need max(y - half_nb, lo) >= a_box and min(y + half_nb, hi) <= b_box
        y_lo = lo if a_box <= lo else a_box + half_nb
        y_hi = hi if b_box >= hi else b_box - half_nb
        if y_lo <= y_hi:
            iv.append((y_lo, y_hi))
    return _merge_gaps(iv, lo, hi, closed=True)


def neighbourhood_contained(plan: CoveringPlan, y, r, reach) -> bool:
    """``Lambda_{reach*ell}(y) cap Lambda_L(x)  subset  Lambda_ell(r)``, exactly."""
    reach = _frac(reach)
    half_nb = reach * plan.ell / 2
    for axis in range(plan.dimension):
        c = _frac(plan.parent.center[axis])
        lo, hi = c - plan.side / 2, c + plan.side / 2
        yy, rr = _frac(y[axis]), _frac(r[axis])
        a = max(yy - half_nb, lo)
        b = min(yy + half_nb, hi)
        if a < rr - plan.ell / 2 or b > rr + plan.ell / 2:
            return False
    return True


@dataclass
class PlanReport:
    coverage: bool
    containment: bool
    core_disjoint: bool
    cardinality: bool
    reach: Fraction
    count: int
    bound: float
    coverage_gaps: list
    containment_gaps: list
    probe_failures: list      # probe points failing containment

    @property
    def all_hold(self) -> bool:
        return self.coverage and self.containment and self.core_disjoint and self.cardinality

    def to_dict(self) -> dict:
        fmt = lambda gaps: [[float(a), float(b)] for a, b in gaps]
        return {"coverage": self.coverage, "containment": self.containment,
                "core_disjoint": self.core_disjoint, "cardinality": self.cardinality,
                "reach": str(self.reach), "count": self.count, "bound": self.bound,
                "coverage_gaps": fmt(self.coverage_gaps),
                "containment_gaps": fmt(self.containment_gaps),
                "probe_failures": [list(map(float, p)) for p in self.probe_failures[:10]]}


def probe_axes(plan: CoveringPlan, spacing_frac=Fraction(1, 10)) -> list[list[Fraction]]:
    """Per-axis probe coordinates of spacing ``spacing_frac*ell``; the boundary faces are
    nudged inside by a tiny exact amount."""
    axes = []
    step = _frac(spacing_frac) * plan.ell
    tiny = plan.ell / 10 ** 6
    for axis in range(plan.dimension):
        c = _frac(plan.parent.center[axis])
        lo, hi = c - plan.side / 2, c + plan.side / 2
        pts = [lo + tiny]
        v = lo + step
        while v < hi:
            pts.append(v)
            v += step
        pts.append(hi - tiny)
        axes.append(pts)
    return axes


def probe_points(plan: CoveringPlan, spacing_frac=Fraction(1, 10)) -> list[tuple[Fraction, ...]]:
    """Full d-dimensional probe grid (product of the per-axis probes)."""
    return list(itertools.product(*probe_axes(plan, spacing_frac)))


def verify_plan(plan: CoveringPlan, reach=STATED_REACH, probe: bool = True) -> PlanReport:
    """Check coverage, neighbourhood containment (side ``reach*ell``), core
    disjointness and the cardinality bound."""
    reach = _frac(reach)
    d = plan.dimension
    cov_gaps, cont_gaps = [], []
    for axis in range(d):
        cov_gaps += axis_coverage_gaps(plan, axis)
        cont_gaps += axis_containment_gaps(plan, reach, axis)
    coverage = not cov_gaps
    containment = not cont_gaps
    # core disjointness: Lambda_{ell/5}(r) cap Lambda_ell(r') empty  <=>  some axis differs by >= 3 ell/5
    sep = Fraction(3, 5) * plan.ell
    offs = plan.axis_offsets
    diffs = [abs(a - b) for a, b in itertools.combinations(offs, 2)]
    core = all(df >= sep for df in diffs)
    centers = plan.centers
    if core and 1 < len(centers) <= 1000:
        diff = np.abs(centers[:, None, :] - centers[None, :, :])
        far = np.any(diff >= float(sep) - 1e-12, axis=2)
        np.fill_diagonal(far, True)
        core = bool(far.all())
    bound = float((2 * plan.side / plan.ell) ** d)
    cardinality = len(plan) <= bound
    failures = []
    if probe:
        # the covering is a product of 1D coverings, so a d-dim probe point passes
        # iff each of its coordinates passes on its axis
        axis_probes = probe_axes(plan)
        bad_axes = []
        for axis in range(d):
            ap = _axis_plan(plan, axis)
            ac = plan.axis_centers(axis)
            near = {y: _nearby(ac, y, plan.ell) for y in axis_probes[axis]}
            bad_cont = [y for y in axis_probes[axis]
                        if not any(neighbourhood_contained(ap, (y,), (r,), reach) for r in near[y])]
            bad_cov = [y for y in axis_probes[axis] if not any(abs(y - r) < plan.ell / 2 for r in near[y])]
            if bad_cov:
                coverage = False
            bad_axes.append(bad_cont)
        for axis, bad in enumerate(bad_axes):
            for y in bad:
                pt = [float(_frac(plan.parent.center[i])) for i in range(d)]
                pt[axis] = y
                failures.append(tuple(pt))
        if failures:
            containment = False
    return PlanReport(coverage, containment, core, cardinality, reach, len(plan), bound,
                      cov_gaps, cont_gaps, failures)


def _nearby(sorted_centers: list[Fraction], y: Fraction, ell: Fraction) -> list[Fraction]:
    """Centers within ``ell`` of ``y`` (the only ones whose sub-box can contain ``y``)."""
    i = bisect.bisect_left(sorted_centers, y - ell)
    j = bisect.bisect_right(sorted_centers, y + ell)
    return sorted_centers[i:j]


def _axis_plan(plan: CoveringPlan, axis: int) -> CoveringPlan:
    return CoveringPlan(Box((plan.parent.center[axis],), plan.parent.side), plan.ell, plan.alpha,
                        plan.n, plan.axis_offsets)


def locate_container(plan: CoveringPlan, y, reach=SAFE_REACH) -> np.ndarray:
    """Center ``r`` whose sub-box contains the clipped ``reach*ell``-neighbourhood of ``y``.

    With the default reach the existence is guaranteed by ``alpha <= 4/5``;
    larger reaches may have no container, which raises CoveringError.
    """
    y = np.atleast_1d(np.asarray(y, float))
    if not plan.parent.contains(y)[0]:
        raise DomainError(f"point {y.tolist()} is outside the parent box")
    r = []
    for axis in range(plan.dimension):
        ap = _axis_plan(plan, axis)
        cands = sorted(plan.axis_centers(axis), key=lambda c: (abs(c - _frac(y[axis])), c))
        hit = next((c for c in cands if neighbourhood_contained(ap, (y[axis],), (c,), reach)), None)
        if hit is None:
            raise CoveringError(f"no sub-box contains the {float(_frac(reach))}*ell neighbourhood of "
                                f"{y.tolist()} (alpha={plan.alpha})")
        r.append(float(hit))
    return np.array(r)


def nested_subcovering(plan: CoveringPlan, y, n: int) -> CoveringPlan:
    """Induced covering of ``Lambda_{(2 n alpha + 1) ell}(y)`` by the plan's own sub-boxes."""
    y = tuple(_frac(v) for v in np.atleast_1d(np.asarray(y, float)))
    if n < 1:
        raise ValidationError("n must be >= 1")
    step = plan.alpha * plan.ell
    for axis, v in enumerate(y):
        k = (v - _frac(plan.parent.center[axis])) / step
        if k.denominator != 1:
            raise ValidationError(f"y={float(v)} is not on the center lattice of axis {axis}")
    side = compatible_side(n, plan.alpha, plan.ell)
    sub = Box(tuple(float(v) for v in y), float(side))
    for axis, v in enumerate(y):
        c = _frac(plan.parent.center[axis])
        if abs(v - c) + side / 2 > plan.side / 2:
            raise DomainError("sub-box is not contained in the parent box")
    offsets = tuple(step * k for k in range(-n, n + 1))
    return CoveringPlan(sub, plan.ell, plan.alpha, n, offsets)


# -- scale ladder --------------------------------------------------------------

@dataclass
class ScaleLadder:
    L0: float
    d: int
    p: float
    rho1: float
    n1: int
    rho2: float
    tau0: float
    m0: float | None
    levels: list[float]
    truncated: list[float]
    min_level: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def ladder_violations(d: int, p: float, rho1: float, rho2: float, tau0: float,
                      m0: float | None = None, L0: float | None = None) -> list[str]:
    out = []
    ratio = d / (d + p)
    if not 8 / 11 < ratio:
        out.append(f"8/11 < d/(d+p) fails: d/(d+p) = {ratio:.6f}")
    if not ratio < rho1:
        out.append(f"d/(d+p) < rho1 fails: {ratio:.6f} >= {rho1}")
    if not rho1 < 0.75:
        out.append(f"rho1 < 3/4 fails: rho1 = {rho1}")
    if not p < d * (rho1 / 2 - rho2):
        out.append(f"p < d(rho1/2 - rho2) fails: {p} >= {d * (rho1 / 2 - rho2):.6f}")
    if not 0 < tau0 < rho2:
        out.append(f"0 < tau0 < rho2 fails: tau0 = {tau0}, rho2 = {rho2:.6g}")
    if m0 is not None and L0 is not None and not m0 >= L0 ** (-tau0):
        out.append(f"m0 >= L0^(-tau0) fails: {m0} < {L0 ** (-tau0):.6g}")
    return out


def scale_ladder(L0: float, d: int, p: float | None = None, rho1: float = 0.74, n1: int | None = None,
                 tau0: float | None = None, m0: float | None = None, min_level: float = 6.0) -> ScaleLadder:
    """Levels ``L_n = L0^(rho1^n)``, ``n = 0..n1``; ``L0`` plays the role of the top box side.

    ``p`` defaults to ``0.36 d`` (the largest round value compatible with
    ``rho1 = 0.74``), ``n1`` to the smallest integer with ``p < d(rho1/2 - rho1^n1)``
    and ``tau0`` to ``rho2/2``. Levels below ``min_level`` are dropped and listed
    in ``truncated``.
    """
    if d < 1:
        raise ValidationError("dimension must be >= 1")
    p = 0.36 * d if p is None else float(p)
    if not L0 >= min_level:
        raise ValidationError(f"L0={L0} is below the minimum level {min_level}")
    if n1 is None:
        if not p < d * rho1 / 2:
            raise ValidationError(f"p < d(rho1/2 - rho2) fails for every n1: p={p} >= d*rho1/2={d * rho1 / 2}")
        if not 0 < rho1 < 1:
            raise ValidationError(f"rho1 < 3/4 fails: rho1 = {rho1}")
        n1 = 1
        while not p < d * (rho1 / 2 - rho1 ** n1):
            n1 += 1
    if n1 < 1:
        raise ValidationError("n1 must be >= 1")
    rho2 = rho1 ** n1
    tau0 = rho2 / 2 if tau0 is None else tau0
    bad = ladder_violations(d, p, rho1, rho2, tau0, m0, L0)
    if bad:
        raise ValidationError("inconsistent ladder: " + "; ".join(bad))
    all_levels = [L0 ** (rho1 ** k) for k in range(n1 + 1)]
    levels = [v for v in all_levels if v >= min_level]
    truncated = [v for v in all_levels if v < min_level]
    return ScaleLadder(L0, d, p, rho1, n1, rho2, tau0, m0, levels, truncated, min_level)
