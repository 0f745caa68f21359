"""Finite-difference Dirichlet Hamiltonians with single-site impurity potentials.

The operator on a box ``Lambda`` of side ``L`` is discretised on the interior
nodes of a grid of spacing ``h`` (``L/h`` must be an integer). Each node carries
the average of the potential over its ``h``-cell; since single-site profiles
are separable products of 1D indicator or trapezoid factors, the averages are
exact and move continuously with the impurity positions.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import DomainError, ResolventBlowUp, SolverError, ValidationError
from .lattice import eta_of_scale
from .point_process import Box, Configuration
from .rng import stream

__all__ = [
    "DENSE_LIMIT",
    "BLOWUP_TOL",
    "FULL_PAIR_MAX_L",
    "PAIR_SUBSAMPLE",
    "SingleSiteProfile",
    "NodeGrid",
    "dirichlet_eigenvalues",
    "impurity_weights",
    "DiscreteHamiltonian",
    "FreeSiteFamily",
    "assemble",
    "GOOD",
    "JGOOD",
    "BAD",
    "GoodnessParams",
    "GoodnessReport",
    "probe_pairs",
    "evaluate_goodness",
    "classify_good",
    "FreeGoodReport",
    "free_good_over_energies",
    "classify_free_good",
    "max_displacement",
    "MovePointReport",
    "in_support_domain",
    "move_point_check",
]

DENSE_LIMIT = 4000
BLOWUP_TOL = 1e-12
FULL_PAIR_MAX_L = 24
PAIR_SUBSAMPLE = 256


@dataclass(frozen=True)
class SingleSiteProfile:
    """Separable bump ``u(x) = u_plus * prod_i g(x_i)``.

    ``indicator``: ``g`` is the indicator of ``|s| < delta_plus/2``.
    ``trapezoid``: ``g = 1`` on ``|s| <= delta_minus/2`` falling linearly to 0 at ``delta_plus/2``.
    Either way ``u_minus * chi_{delta_minus} <= u <= u_plus * chi_{delta_plus}``.
    """

    u_plus: float = 1.0
    u_minus: float = 1.0
    delta_plus: float = 1.0
    delta_minus: float = 1.0
    shape: str = "indicator"

    def __post_init__(self):
        if not (0 < self.u_minus <= self.u_plus):
            raise ValidationError("need 0 < u_minus <= u_plus")
        if not (0 < self.delta_minus <= self.delta_plus):
            raise ValidationError("need 0 < delta_minus <= delta_plus")
        if self.shape not in ("indicator", "trapezoid"):
            raise ValidationError(f"unknown profile shape {self.shape!r}")

    @property
    def sup(self) -> float:
        return self.u_plus

    def antiderivative(self, s: np.ndarray) -> np.ndarray:
        """``G(s) = int_{-inf}^s g``."""
        b = self.delta_plus / 2
        a = self.delta_minus / 2
        if self.shape == "indicator" or a == b:
            return np.clip(s, -b, b) + b
        w = b - a
        out = np.where(s <= -b, 0.0, 0.0)
        out = np.where((s > -b) & (s <= -a), (s + b) ** 2 / (2 * w), out)
        out = np.where((s > -a) & (s <= a), w / 2 + (s + a), out)
        out = np.where((s > a) & (s < b), w + 2 * a - (b - s) ** 2 / (2 * w), out)
        out = np.where(s >= b, w + 2 * a, out)
        return out

    def factor(self, s: np.ndarray) -> np.ndarray:
        """Pointwise 1D factor ``g(s)``."""
        s = np.abs(np.asarray(s, float))
        b = self.delta_plus / 2
        a = self.delta_minus / 2
        if self.shape == "indicator" or a == b:
            return (s < b).astype(float)
        return np.clip((b - s) / (b - a), 0.0, 1.0)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class NodeGrid:
    """Interior nodes ``lower + h*i``, ``i = 1..n-1`` per axis, flattened in C order."""

    box: Box
    h: float

    def __post_init__(self):
        if not self.h > 0:
            raise ValidationError("grid spacing must be positive")
        ratio = self.box.side / self.h
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 2:
            raise ValidationError(f"box side {self.box.side} is not an integer multiple (>=2) of h={self.h}")

    @property
    def n(self) -> int:
        return int(round(self.box.side / self.h))

    @property
    def dimension(self) -> int:
        return self.box.dimension

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n - 1,) * self.dimension

    @property
    def size(self) -> int:
        return (self.n - 1) ** self.dimension

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.box.lower[axis] + self.h * np.arange(1, self.n)

    def coords(self) -> np.ndarray:
        """``(size, d)`` node coordinates in flat order."""
        axes = [self.axis_coords(i) for i in range(self.dimension)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def _axis_range(self, axis: int, lo: float, hi: float) -> np.ndarray:
        """Local node indices (0-based) with coordinate in ``[lo, hi)``."""
        base = self.box.lower[axis]
        i0 = math.ceil((lo - base) / self.h - 1e-9)
        i1 = math.ceil((hi - base) / self.h - 1e-9)
        i0, i1 = max(i0, 1), min(i1, self.n)
        return np.arange(i0, i1) - 1

    def window_indices(self, center) -> np.ndarray:
        """Flat indices of nodes in the half-open unit window ``center + [-1/2, 1/2)^d``."""
        center = np.atleast_1d(np.asarray(center, float))
        per_axis = [self._axis_range(i, c - 0.5, c + 0.5) for i, c in enumerate(center)]
        if any(len(p) == 0 for p in per_axis):
            return np.zeros(0, dtype=int)
        mesh = np.meshgrid(*per_axis, indexing="ij")
        return np.ravel_multi_index(tuple(m.ravel() for m in mesh), self.shape)

    def probe_centers(self) -> np.ndarray:
        """Window centers ``box.center + k`` whose unit windows lie inside the box."""
        K = int(math.floor((self.box.side - 1) / 2 + 1e-12))
        if K < 0:
            return np.zeros((0, self.dimension))
        ks = np.arange(-K, K + 1)
        mesh = np.meshgrid(*([ks] * self.dimension), indexing="ij")
        off = np.stack([m.ravel() for m in mesh], axis=1).astype(float)
        return off + np.asarray(self.box.center)


@functools.lru_cache(maxsize=32)
def _laplacian(n: int, h: float, d: int) -> sparse.csr_matrix:
    m = n - 1
    one = sparse.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1],
                       shape=(m, m), format="csr") / h ** 2
    eye = sparse.identity(m, format="csr")
    out = sparse.csr_matrix((m ** d, m ** d))
    for axis in range(d):
        term = None
        for j in range(d):
            f = one if j == axis else eye
            term = f if term is None else sparse.kron(term, f, format="csr")
        out = out + term
    out = out.tocsr()
    out.sort_indices()
    return out


def dirichlet_eigenvalues(L: float, h: float, d: int) -> np.ndarray:
    """Closed-form spectrum ``(4/h^2) sum_i sin^2(pi k_i h / (2L))`` of the discrete Laplacian."""
    n = int(round(L / h))
    one = 4.0 / h ** 2 * np.sin(np.pi * np.arange(1, n) * h / (2 * L)) ** 2
    total = np.zeros(1)
    for _ in range(d):
        total = (total[:, None] + one[None, :]).ravel()
    return np.sort(total)


def impurity_weights(grid: NodeGrid, points: np.ndarray, profile: SingleSiteProfile) -> sparse.csr_matrix:
    """Sparse ``(n_points, n_nodes)`` matrix of cell-averaged single-site potentials."""
    pts = np.asarray(points, float).reshape(-1, grid.dimension)
    npts = pts.shape[0]
    if npts == 0:
        return sparse.csr_matrix((0, grid.size))
    h, n = grid.h, grid.n
    width = int(math.ceil(profile.delta_plus / h)) + 3
    idx_axes, val_axes = [], []
    for axis in range(grid.dimension):
        base = grid.box.lower[axis]
        p = pts[:, axis]
        i0 = np.floor((p - profile.delta_plus / 2 - h / 2 - base) / h).astype(int)
        idx = i0[:, None] + np.arange(width)[None, :]          # global node index
        z = base + h * idx
        rel_lo = z - h / 2 - p[:, None]
        rel_hi = z + h / 2 - p[:, None]
        val = (profile.antiderivative(rel_hi) - profile.antiderivative(rel_lo)) / h
        ok = (idx >= 1) & (idx <= n - 1)
        val = np.where(ok, val, 0.0)
        idx_axes.append(np.clip(idx - 1, 0, n - 2))
        val_axes.append(val)
    d = grid.dimension
    m = n - 1
    flat = np.zeros((npts, 1), dtype=np.int64)
    vals = np.full((npts, 1), profile.u_plus)
    for axis in range(d):
        flat = (flat[:, :, None] * m + idx_axes[axis][:, None, :]).reshape(npts, -1)
        vals = (vals[:, :, None] * val_axes[axis][:, None, :]).reshape(npts, -1)
    rows = np.repeat(np.arange(npts), flat.shape[1])
    W = sparse.coo_matrix((vals.ravel(), (rows, flat.ravel())), shape=(npts, grid.size)).tocsr()
    W.sum_duplicates()
    W.eliminate_zeros()
    return W


def _points_in_box(cfg, box: Box) -> np.ndarray:
    if cfg is None:
        return np.zeros((0, box.dimension))
    pts = cfg.points if isinstance(cfg, Configuration) else np.asarray(cfg, float).reshape(-1, box.dimension)
    return pts


class DiscreteHamiltonian:
    """``-Delta_h + V`` on the interior nodes of a box; immutable after construction."""

    def __init__(self, grid: NodeGrid, potential: np.ndarray, profile: SingleSiteProfile | None = None):
        pot = np.asarray(potential, float).reshape(-1).copy()
        if pot.shape[0] != grid.size:
            raise ValidationError("potential length does not match node count")
        if np.any(pot < 0):
            raise ValidationError("potential must be nonnegative")
        pot.setflags(write=False)
        self.grid = grid
        self.potential = pot
        self.profile = profile
        self.matrix = (_laplacian(grid.n, grid.h, grid.dimension) + sparse.diags(pot)).tocsr()
        self._eig = None

    @property
    def box(self) -> Box:
        return self.grid.box

    @property
    def dim(self) -> int:
        return self.grid.size

    def shifted(self, c: float) -> "DiscreteHamiltonian":
        return DiscreteHamiltonian(self.grid, self.potential + c, self.profile)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        """Full eigen-decomposition (dense solver; cached)."""
        if self._eig is None:
            if self.dim > DENSE_LIMIT:
                raise SolverError(f"dense eigen-decomposition refused for dimension {self.dim} > {DENSE_LIMIT}")
            w, v = np.linalg.eigh(self.dense())
            w.setflags(write=False)
            v.setflags(write=False)
            self._eig = (w, v)
        return self._eig

    def eigenvalues_near(self, E: float, k: int = 1) -> np.ndarray:
        if self.dim <= DENSE_LIMIT:
            w, _ = self.eigh()
            order = np.argsort(np.abs(w - E))
            return w[order[:k]]
        try:
            w = spla.eigsh(self.matrix, k=k, sigma=E, which="LM", tol=1e-10, return_eigenvectors=False)
        except (spla.ArpackNoConvergence, RuntimeError) as exc:
            raise SolverError(f"shift-invert eigsh failed near E={E}: {exc}") from exc
        return np.sort(w)

    def lowest_eigenvalue(self) -> float:
        if self.dim <= DENSE_LIMIT:
            return float(self.eigh()[0][0])
        try:
            w = spla.eigsh(self.matrix, k=1, sigma=-1.0, which="LM", tol=1e-10,
                           return_eigenvectors=False)
        except (spla.ArpackNoConvergence, RuntimeError) as exc:
            raise SolverError(f"lowest eigenvalue did not converge (dim={self.dim}): {exc}") from exc
        return float(w[0])

    def distance_to_spectrum(self, E: float) -> float:
        return float(np.min(np.abs(self.eigenvalues_near(E, 1) - E)))

    def resolvent_norm(self, E: float) -> float:
        """``1/dist(E, sigma(H))``; raises ResolventBlowUp when E is (numerically) an eigenvalue."""
        dist = self.distance_to_spectrum(E)
        if dist <= BLOWUP_TOL * max(1.0, abs(E)):
            raise ResolventBlowUp(f"E={E} lies within {dist:.2e} of the spectrum")
        return 1.0 / dist

    def resolvent(self, E: float) -> np.ndarray:
        """Dense resolvent matrix ``(H - E)^{-1}`` from the eigen-decomposition."""
        w, v = self.eigh()
        gap = w - E
        if np.min(np.abs(gap)) <= BLOWUP_TOL * max(1.0, abs(E)):
            raise ResolventBlowUp(f"E={E} is an eigenvalue")
        return (v / gap) @ v.T

    def resolvent_block(self, E: float, rows: np.ndarray, cols: np.ndarray, R: np.ndarray | None = None) -> np.ndarray:
        if R is not None:
            return R[np.ix_(rows, cols)]
        if self.dim <= DENSE_LIMIT:
            w, v = self.eigh()
            gap = w - E
            if np.min(np.abs(gap)) <= BLOWUP_TOL * max(1.0, abs(E)):
                raise ResolventBlowUp(f"E={E} is an eigenvalue")
            return (v[rows] / gap) @ v[cols].T
        self.resolvent_norm(E)
        lu = spla.splu((self.matrix - E * sparse.identity(self.dim, format="csr")).tocsc())
        rhs = np.zeros((self.dim, len(cols)))
        rhs[cols, np.arange(len(cols))] = 1.0
        return lu.solve(rhs)[rows]

    def local_decay(self, E: float, x, y, R: np.ndarray | None = None) -> float:
        """``||chi_x R(E) chi_y||`` for unit windows centered at ``x`` and ``y``."""
        rx = self.grid.window_indices(x)
        ry = self.grid.window_indices(y)
        if len(rx) == 0 or len(ry) == 0:
            raise DomainError("window does not meet the box")
        block = self.resolvent_block(E, rx, ry, R)
        return float(np.linalg.norm(block, 2))

    def write_coo(self, path) -> None:
        """Dump the matrix as ``row col value`` lines (0-based)."""
        coo = self.matrix.tocoo()
        with open(path, "w") as fh:
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")


class FreeSiteFamily:
    """The family ``t -> H_{B,(S,t),Lambda}`` over free-site couplings ``t in [0,1]^S``."""

    def __init__(self, box: Box, B=None, S=None, profile: SingleSiteProfile = SingleSiteProfile(),
                 h: float | None = None):
        h = profile.delta_minus / 8 if h is None else h
        if h > profile.delta_minus / 4 + 1e-15:
            raise ValidationError(f"h={h} too coarse to resolve the single-site support (need h <= {profile.delta_minus / 4})")
        self.grid = NodeGrid(box, h)
        self.profile = profile
        b = _points_in_box(B, box)
        s = _points_in_box(S, box)
        if len(b) and len(s):
            common = set(map(tuple, b.tolist())) & set(map(tuple, s.tolist()))
            if common:
                raise ValidationError(f"X and Y overlap in {len(common)} point(s)")
        # only impurities inside the box contribute
        self.B = b[box.contains(b)] if len(b) else b
        self.S_all = s
        self._s_inside = box.contains(s) if len(s) else np.zeros(0, bool)
        wb = impurity_weights(self.grid, self.B, profile)
        self.base_potential = np.asarray(wb.sum(axis=0)).ravel()
        self.W = impurity_weights(self.grid, s[self._s_inside], profile)

    @property
    def n_free(self) -> int:
        return len(self.S_all)

    def at(self, t=None) -> DiscreteHamiltonian:
        pot = self.base_potential.copy()
        if self.n_free:
            t = np.zeros(self.n_free) if t is None else np.asarray(t, float).reshape(-1)
            if t.shape[0] != self.n_free:
                raise ValidationError(f"need {self.n_free} couplings, got {t.shape[0]}")
            if np.any((t < 0) | (t > 1)):
                raise ValidationError("couplings must lie in [0, 1]")
            pot = pot + self.W.T @ t[self._s_inside]
        return DiscreteHamiltonian(self.grid, np.maximum(pot, 0.0), self.profile)


def assemble(box: Box, X=None, Y=None, t=None, profile: SingleSiteProfile = SingleSiteProfile(),
             h: float | None = None) -> DiscreteHamiltonian:
    """``-Delta_Lambda + V_X + sum_{zeta in Y} t_zeta u(. - zeta)`` with Dirichlet truncation."""
    return FreeSiteFamily(box, X, Y, profile, h).at(t)


# -- goodness ----------------------------------------------------------------

GOOD, JGOOD, BAD = "good", "jgood", "bad"
_RANK = {GOOD: 0, JGOOD: 1, BAD: 2}


@dataclass
class GoodnessParams:
    """Finite-scale stand-ins for the asymptotic thresholds.

    ``eps1`` sets the norm threshold ``exp(L^(1-eps1))``; ``kappa`` sets the
    jgood slack ``eta^(1/4)`` with ``eta = exp(-L^kappa)`` unless ``eta`` is given.
    """

    eps1: float = 0.05
    kappa: float = 1.0
    eta: float | None = None
    probe_seed: int = 0

    def slack(self, L: float) -> float:
        eta = self.eta if self.eta is not None else eta_of_scale(L, self.kappa)
        return eta ** 0.25


@dataclass
class GoodnessReport:
    energy: float
    mass: float
    resolvent_norm: float
    norm_threshold: float
    decay_samples: list = field(default_factory=list)   # (x, y, value, bound)
    verdict: str = BAD
    jgood_slack: float = 0.0
    norm_margin: float = 0.0     # log(threshold) - log(norm)
    decay_margin: float = math.inf  # min over pairs of log(bound) - log(value)

    @property
    def is_good(self) -> bool:
        return self.verdict == GOOD

    def to_dict(self, samples: bool = False) -> dict:
        out = {k: getattr(self, k) for k in ("energy", "mass", "resolvent_norm", "norm_threshold",
                                             "verdict", "jgood_slack", "norm_margin", "decay_margin")}
        for k in ("resolvent_norm", "norm_margin", "decay_margin"):
            if not math.isfinite(out[k]):
                out[k] = None if math.isnan(out[k]) else (math.inf if out[k] > 0 else -math.inf)
        out["n_pairs"] = len(self.decay_samples)
        if samples:
            out["decay_samples"] = [[list(map(float, x)), list(map(float, y)), v, b]
                                    for x, y, v, b in self.decay_samples]
        return out


def probe_pairs(grid: NodeGrid, min_sep: float, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Unordered probe pairs with ``|x - y| >= min_sep`` (subsampled for large boxes)."""
    return [(x, y) for x, y, _, _ in _probe_plan(grid, float(min_sep), int(seed))]


@functools.lru_cache(maxsize=64)
def _probe_plan(grid: NodeGrid, min_sep: float, seed: int) -> tuple:
    centers = grid.probe_centers()
    pairs = [(i, j) for i, j in itertools.combinations(range(len(centers)), 2)
             if np.linalg.norm(centers[i] - centers[j]) >= min_sep - 1e-12]
    if grid.box.side > FULL_PAIR_MAX_L and len(pairs) > PAIR_SUBSAMPLE:
        rng = stream(seed, 7, int(round(grid.box.side * 1000)))
        pick = np.sort(rng.choice(len(pairs), PAIR_SUBSAMPLE, replace=False))
        pairs = [pairs[k] for k in pick]
    idx = [grid.window_indices(c) for c in centers]
    return tuple((centers[i], centers[j], idx[i], idx[j]) for i, j in pairs)


def _block_norms(R: np.ndarray, plan: tuple) -> np.ndarray:
    """Spectral norms of the sub-blocks ``R[rows, cols]`` for every probe pair, batched by shape."""
    out = np.empty(len(plan))
    groups: dict = {}
    for k, (_, _, rx, ry) in enumerate(plan):
        groups.setdefault((len(rx), len(ry)), []).append(k)
    for ks in groups.values():
        rows = np.stack([plan[k][2] for k in ks])
        cols = np.stack([plan[k][3] for k in ks])
        blocks = R[rows[:, :, None], cols[:, None, :]]
        out[ks] = np.linalg.svd(blocks, compute_uv=False)[:, 0]
    return out


def evaluate_goodness(H: DiscreteHamiltonian, E: float, m: float,
                      params: GoodnessParams = GoodnessParams()) -> GoodnessReport:
    L = H.box.side
    threshold = math.exp(L ** (1 - params.eps1))
    slack = params.slack(L)
    try:
        norm = H.resolvent_norm(E)
    except ResolventBlowUp:
        return GoodnessReport(E, m, math.inf, threshold, [], BAD, slack, -math.inf, -math.inf)
    plan = _probe_plan(H.grid, float(L / 10), int(params.probe_seed))
    if H.dim <= DENSE_LIMIT:
        vals = _block_norms(H.resolvent(E), plan) if plan else np.zeros(0)
    else:
        vals = np.array([H.local_decay(E, x, y) for x, y, _, _ in plan])
    samples = []
    strict_ok = relaxed_ok = True
    margin = math.inf
    for (x, y, _, _), val in zip(plan, vals):
        val = float(val)
        bound = math.exp(-m * float(np.linalg.norm(x - y)))
        samples.append((x, y, val, bound))
        if val > bound:
            strict_ok = False
        if val > bound + slack:
            relaxed_ok = False
        margin = min(margin, math.log(bound) - math.log(val) if val > 0 else math.inf)
    if norm <= threshold and strict_ok:
        verdict = GOOD
    elif norm <= threshold * math.exp(slack) and relaxed_ok:
        verdict = JGOOD
    else:
        verdict = BAD
    return GoodnessReport(E, m, norm, threshold, samples, verdict, slack,
                          math.log(threshold) - math.log(norm), margin)


def classify_good(box: Box, X, E: float, m: float, params: GoodnessParams = GoodnessParams(),
                  profile: SingleSiteProfile = SingleSiteProfile(), h: float | None = None) -> GoodnessReport:
    """Goodness of ``box`` for configuration ``X`` at energy ``E`` and mass ``m``."""
    return evaluate_goodness(assemble(box, X, None, None, profile, h), E, m, params)


@dataclass
class FreeGoodReport:
    verdict: str
    worst: GoodnessReport
    evidence: list    # (t as list, verdict)
    n_corners: int
    n_interior: int

    @property
    def label(self) -> str:
        return {GOOD: "free-good (sampled)", JGOOD: "free-jgood (sampled)", BAD: "bad"}[self.verdict]

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "label": self.label, "worst": self.worst.to_dict(),
                "n_corners": self.n_corners, "n_interior": self.n_interior,
                "evidence_verdicts": [v for _, v in self.evidence]}


def free_good_over_energies(family: FreeSiteFamily, energies, m: float, n_samples: int = 4,
                            corner_cap: int = 12, seed: int = 0,
                            params: GoodnessParams = GoodnessParams()) -> list[FreeGoodReport]:
    """Sampled free-site goodness at several energies, sharing one solve per coupling ``t``."""
    energies = [float(E) for E in energies]
    k = family.n_free
    if k == 0:
        ts, n_corners, n_interior = [np.zeros(0)], 0, 0
    else:
        if k <= corner_cap:
            corners = [np.array(c, float) for c in itertools.product((0.0, 1.0), repeat=k)]
        else:
            corners = [np.zeros(k), np.ones(k)]
        rng = stream(seed, 11)
        interior = [rng.uniform(0, 1, size=k) for _ in range(n_samples)]
        ts, n_corners, n_interior = corners + interior, len(corners), len(interior)
    evidence = [[] for _ in energies]
    worst: list[GoodnessReport | None] = [None] * len(energies)
    for t in ts:
        H = family.at(t if k else None)
        for i, E in enumerate(energies):
            if worst[i] is not None and worst[i].verdict == BAD:
                continue
            rep = evaluate_goodness(H, E, m, params)
            evidence[i].append((t.tolist(), rep.verdict))
            w = worst[i]
            if w is None or _RANK[rep.verdict] > _RANK[w.verdict] or (
                    rep.verdict == w.verdict and rep.resolvent_norm > w.resolvent_norm):
                worst[i] = rep
        if all(w.verdict == BAD for w in worst):
            break
    return [FreeGoodReport(w.verdict, w, ev, n_corners, n_interior) for w, ev in zip(worst, evidence)]


def classify_free_good(box: Box, B, S, E: float, m: float, n_samples: int = 4, corner_cap: int = 12,
                       seed: int = 0, params: GoodnessParams = GoodnessParams(),
                       profile: SingleSiteProfile = SingleSiteProfile(), h: float | None = None,
                       family: FreeSiteFamily | None = None) -> FreeGoodReport:
    """Sampled check that ``box`` stays good for every coupling ``t in [0,1]^S``.

    All ``2^|S|`` corners are evaluated when ``|S| <= corner_cap``; otherwise
    only ``t = 0`` and ``t = 1``. ``n_samples`` uniform interior draws are added
    whenever ``S`` is non-empty. The verdict is the worst one observed.
    """
    fam = family if family is not None else FreeSiteFamily(box, B, S, profile, h)
    return free_good_over_energies(fam, [E], m, n_samples, corner_cap, seed, params)[0]


# -- moving one impurity -------------------------------------------------------

def max_displacement(E: float, w_sup: float, gamma: float) -> float:
    """Largest admissible ``eta = min((4 sqrt(1+E) ||w|| gamma)^-2, 1/4)``."""
    return min((4 * math.sqrt(1 + E) * w_sup * gamma) ** -2, 0.25)


@dataclass
class MovePointReport:
    gamma: float
    eta: float
    displacement: float
    norm: float
    norm_moved: float
    norm_bound: float
    kernel_excess: float       # max over pairs of ||chi R' chi|| - ||chi R chi||
    kernel_bound: float        # sqrt(eta) * gamma
    beta: float | None = None
    dist_moved: float | None = None
    dist_bound: float | None = None

    @property
    def norm_ratio(self) -> float:
        return self.norm_moved / self.norm_bound

    @property
    def kernel_ratio(self) -> float:
        return self.kernel_excess / self.kernel_bound

    @property
    def dist_ratio(self) -> float | None:
        return None if self.beta is None else self.dist_moved / self.dist_bound

    @property
    def passed(self) -> bool:
        ok = self.norm_moved <= self.norm_bound and self.kernel_excess <= self.kernel_bound
        if self.beta is not None:
            ok = ok and self.dist_moved <= self.dist_bound
        return ok

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.update(norm_ratio=self.norm_ratio, kernel_ratio=self.kernel_ratio,
                 dist_ratio=self.dist_ratio, passed=self.passed)
        return d


def in_support_domain(box: Box, zeta, profile: SingleSiteProfile) -> bool:
    """``supp u(. - zeta)`` inside the box."""
    off = np.abs(np.asarray(zeta, float) - np.asarray(box.center))
    return bool(np.all(off + profile.delta_plus / 2 <= box.side / 2))


def move_point_check(box: Box, W, zeta, zeta_moved, E: float, eta: float | None = None,
                     profile: SingleSiteProfile = SingleSiteProfile(), h: float | None = None) -> MovePointReport:
    """Compare resolvents before and after moving one impurity ``zeta -> zeta_moved``.

    ``gamma = max(1, ||R_zeta(E)||)``. When ``||R_zeta(E)|| >= 2`` the
    spectral-distance bound is also checked with ``beta = ||R_zeta(E)||``.
    ``eta`` defaults to the largest admissible value for ``gamma``.
    """
    zeta = np.atleast_1d(np.asarray(zeta, float))
    zeta_moved = np.atleast_1d(np.asarray(zeta_moved, float))
    for z in (zeta, zeta_moved):
        if not in_support_domain(box, z, profile):
            raise DomainError(f"support of the impurity at {z.tolist()} leaves the box")
    fam = FreeSiteFamily(box, W, np.vstack([zeta, zeta_moved]), profile, h)
    H0, H1 = fam.at([1.0, 0.0]), fam.at([0.0, 1.0])
    norm0 = H0.resolvent_norm(E)
    gamma = max(1.0, norm0)
    eta_max = max_displacement(E, profile.sup, gamma)
    eta = eta_max if eta is None else eta
    if eta > eta_max * (1 + 1e-12):
        raise DomainError(f"eta={eta} exceeds the admissible maximum {eta_max}")
    disp = float(np.linalg.norm(zeta_moved - zeta))
    if disp > eta * (1 + 1e-12):
        raise DomainError(f"displacement {disp} exceeds eta={eta}")
    try:
        norm1 = H1.resolvent_norm(E)
    except ResolventBlowUp:
        norm1 = math.inf
    R0, R1 = (H0.resolvent(E), H1.resolvent(E)) if math.isfinite(norm1) else (None, None)
    excess = -math.inf
    if R0 is not None:
        centers = H0.grid.probe_centers()
        idx = [H0.grid.window_indices(c) for c in centers]
        for a in range(len(centers)):
            for b in range(a, len(centers)):
                v0 = np.linalg.norm(R0[np.ix_(idx[a], idx[b])], 2)
                v1 = np.linalg.norm(R1[np.ix_(idx[a], idx[b])], 2)
                excess = max(excess, v1 - v0)
    else:
        excess = math.inf
    rep = MovePointReport(gamma, eta, disp, norm0, norm1, math.exp(math.sqrt(eta)) * gamma,
                          excess, math.sqrt(eta) * gamma)
    if norm0 >= 2:
        rep.beta = norm0
        rep.dist_moved = H1.distance_to_spectrum(E)
        rep.dist_bound = math.exp(math.sqrt(eta)) / norm0
    return rep
