"""Localization observables on sampled finite-volume operators.

Eigenpairs in a spectral window, exponential decay fits of eigenfunctions on
unit windows, eigenfunction-correlation constants, eigenvalue clusters, and
spatial moments of spectrally filtered time evolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import InsufficientRange, SolverError, ValidationError
from .hamiltonian import DENSE_LIMIT, DiscreteHamiltonian, NodeGrid

RESIDUAL_TOL = 1e-8
SHELL_FLOOR = 1e-14


@dataclass
class SpectralWindow:
    E0: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray      # (n_nodes, k), orthonormal columns
    grid: NodeGrid
    residuals: np.ndarray

    def __len__(self) -> int:
        return len(self.eigenvalues)


def window_eigenpairs(H: DiscreteHamiltonian, E0: float) -> SpectralWindow:
    """All eigenpairs of ``H`` with eigenvalue in ``[0, E0]``."""
    if not E0 > 0:
        raise ValidationError(f"E0 must be positive, got {E0}")
    if H.dim > DENSE_LIMIT:
        raise SolverError(f"window extraction needs a dense solve; dimension {H.dim} > {DENSE_LIMIT}")
    w, v = H.eigh()
    sel = (w >= 0) & (w <= E0)
    lam, vec = np.array(w[sel]), np.array(v[:, sel])
    res = np.linalg.norm(H.matrix @ vec - vec * lam, axis=0) if len(lam) else np.zeros(0)
    if np.any(res > RESIDUAL_TOL):
        raise SolverError(f"eigenpair residual {res.max():.3e} exceeds {RESIDUAL_TOL}")
    return SpectralWindow(float(E0), lam, vec, H.grid, res)


def inertia_count(H: DiscreteHamiltonian, E: float) -> int:
    """Number of eigenvalues below ``E`` from the inertia of an LDL^T factorisation of ``H - E``."""
    A = H.dense() - E * np.eye(H.dim)
    _, D, _ = linalg.ldl(A, lower=True)
    count, i, n = 0, 0, D.shape[0]
    while i < n:
        if i + 1 < n and D[i + 1, i] != 0:
            count += int(np.sum(np.linalg.eigvalsh(D[i:i + 2, i:i + 2]) < 0))
            i += 2
        else:
            count += int(D[i, i] < 0)
            i += 1
    return count


# -- unit windows ------------------------------------------------------------------

def window_partition(grid: NodeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Integer window centers meeting the box and, per node, the index of its window.

    Node ``z`` belongs to the window centered at ``floor(z + 1/2)``, so the
    half-open windows ``k + [-1/2, 1/2)^d`` partition the nodes.
    """
    coords = grid.coords()
    keys = np.floor(coords + 0.5 + 1e-12).astype(np.int64)
    centers, inverse = np.unique(keys, axis=0, return_inverse=True)
    return centers.astype(float), inverse.reshape(-1)


def window_norms(psi: np.ndarray, grid: NodeGrid) -> tuple[np.ndarray, np.ndarray]:
    """``(centers, ||chi_x psi||)`` over the integer unit windows."""
    centers, inv = window_partition(grid)
    mass = np.bincount(inv, weights=np.abs(psi) ** 2, minlength=len(centers))
    return centers, np.sqrt(mass)


@dataclass
class DecayFit:
    mass: float
    intercept: float
    r_squared: float
    shells: list            # (radius, max window norm)
    center: list

    def envelope(self, r) -> np.ndarray:
        """``exp(c - m r)`` with ``c`` raised until it dominates every observed shell."""
        r = np.asarray(r, float)
        return np.exp(self.cover_intercept - self.mass * r)

    @property
    def cover_intercept(self) -> float:
        vals = [math.log(v) + self.mass * rad for rad, v in self.shells if v > 0]
        return max(vals + [self.intercept])

    def to_dict(self) -> dict:
        return {"mass": self.mass, "intercept": self.intercept, "r_squared": self.r_squared,
                "center": self.center, "shells": [[float(a), float(b)] for a, b in self.shells]}


def decay_rate_fit(psi: np.ndarray, grid: NodeGrid, center=None) -> DecayFit:
    """Least-squares fit of ``log max_{|x-c| ~ r} ||chi_x psi||`` against ``r = 1, 2, ...``.

    ``psi`` is normalised first, so the fit is invariant under scalar multiples.
    """
    psi = np.asarray(psi)
    nrm = np.linalg.norm(psi)
    if nrm == 0:
        raise ValidationError("psi must be nonzero")
    centers, norms = window_norms(psi / nrm, grid)
    c = centers[int(np.argmax(norms))] if center is None else np.atleast_1d(np.asarray(center, float))
    radius = np.rint(np.linalg.norm(centers - c, axis=1)).astype(int)
    shells = []
    for r in np.unique(radius):
        if r < 1:
            continue
        v = float(norms[radius == r].max())
        shells.append((int(r), v))
    usable = [(r, v) for r, v in shells if v >= SHELL_FLOOR]
    if len(usable) < 3:
        raise InsufficientRange(f"only {len(usable)} shells above {SHELL_FLOOR}")
    r = np.array([u[0] for u in usable], float)
    y = np.log([u[1] for u in usable])
    slope, icpt = np.polyfit(r, y, 1)
    pred = icpt + slope * r
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot <= 1e-24 else max(0.0, min(1.0, 1 - ss_res / ss_tot))
    return DecayFit(float(-slope), float(icpt), r2, usable, c.tolist())


# -- correlations ----------------------------------------------------------------

@dataclass(frozen=True)
class SudecParams:
    tau: float = 1.5
    s: float = 0.5
    nu: float = 1.0

    def check(self, d: int) -> None:
        if not self.tau > 1:
            raise ValidationError("tau must exceed 1")
        if not 0 < self.s < 1:
            raise ValidationError("s must lie in (0, 1)")
        if not self.nu > d / 2:
            raise ValidationError(f"nu must exceed d/2 = {d / 2}")


def japanese(x: np.ndarray) -> np.ndarray:
    """``<x> = sqrt(1 + |x|^2)`` row-wise."""
    x = np.atleast_2d(x)
    return np.sqrt(1 + np.sum(x ** 2, axis=1))


def multiplicity_histogram(window: SpectralWindow, tol: float | None = None) -> list[dict]:
    """Clusters of eigenvalues within ``tol*max(1, |lambda|)`` of their neighbour."""
    tol = 1e-8 * max(1.0, window.E0) if tol is None else tol
    lam = np.sort(np.asarray(window.eigenvalues))
    out = []
    i = 0
    while i < len(lam):
        j = i + 1
        while j < len(lam) and lam[j] - lam[j - 1] <= tol * max(1.0, abs(lam[j])):
            j += 1
        out.append({"eigenvalue": float(lam[i:j].mean()), "multiplicity": j - i, "indices": list(range(i, j))})
        i = j
    return out


def sudec_probes(grid: NodeGrid, delta_plus: float = 1.0) -> np.ndarray:
    """Integer points strictly inside the box shrunk by ``delta_plus``."""
    box = grid.box
    half = (box.side - delta_plus) / 2
    axes = []
    for c in box.center:
        lo, hi = math.ceil(c - half + 1e-12), math.floor(c + half - 1e-12)
        axes.append(np.arange(lo, hi + 1, dtype=float))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def sudec_constant(psi: np.ndarray, phi: np.ndarray, grid: NodeGrid, params: SudecParams,
                   delta_plus: float = 1.0) -> float:
    """Smallest ``C`` with ``||chi_x psi|| ||chi_y phi|| <= C ||T^-1 psi|| ||T^-1 phi|| e^{<y>^tau} e^{-|x-y|^s}``
    over integer probes; computed in log space. Returns min over the two orientations."""
    params.check(grid.dimension)
    probes = sudec_probes(grid, delta_plus)
    if len(probes) == 0:
        return 0.0
    idx = [grid.window_indices(p) for p in probes]
    nodes = grid.coords()
    tinv = japanese(nodes) ** (-params.nu)

    def wn(f):
        return np.array([np.linalg.norm(f[i]) for i in idx])

    a, b = wn(psi), wn(phi)
    ta, tb = np.linalg.norm(tinv * psi), np.linalg.norm(tinv * phi)
    dist = np.linalg.norm(probes[:, None, :] - probes[None, :, :], axis=2)
    ypow = japanese(probes) ** params.tau

    def orient(u, v, tu, tv):
        with np.errstate(divide="ignore"):
            lu, lv = np.log(u), np.log(v)
        logc = lu[:, None] + lv[None, :] - math.log(tu) - math.log(tv) - ypow[None, :] + dist ** params.s
        return float(np.exp(np.max(logc)))

    return min(orient(a, b, ta, tb), orient(b, a, tb, ta))


def sudec_check(window: SpectralWindow, params: SudecParams = SudecParams(), tol: float | None = None,
                delta_plus: float = 1.0) -> list[dict]:
    """Correlation constant for every same-eigenvalue pair (including each function with itself)."""
    if len(window) == 0:
        raise ValidationError("spectral window is empty")
    out = []
    for cl in multiplicity_histogram(window, tol):
        ids = cl["indices"]
        for a in range(len(ids)):
            for b in range(a, len(ids)):
                i, j = ids[a], ids[b]
                C = sudec_constant(window.eigenvectors[:, i], window.eigenvectors[:, j], window.grid,
                                   params, delta_plus)
                out.append({"eigenvalue": cl["eigenvalue"], "i": i, "j": j, "C": C})
    return out


# -- dynamics ---------------------------------------------------------------------

def default_times(n: int = 64, t_max: float = 1e3) -> np.ndarray:
    """``0`` followed by ``n - 1`` log-spaced times up to ``t_max``."""
    return np.concatenate([[0.0], np.logspace(-2, math.log10(t_max), n - 1)])


@dataclass
class MomentTrace:
    times: np.ndarray
    values: np.ndarray
    p: float

    @property
    def sup(self) -> float:
        return float(self.values.max()) if len(self.values) else 0.0


def origin_window(grid: NodeGrid) -> np.ndarray:
    return grid.window_indices(np.asarray(grid.box.center))


def dynamical_moment(window: SpectralWindow, p: float, times=None) -> MomentTrace:
    """``|| <x>^p exp(-itH) P chi_0 ||_HS^2`` from the window eigenpairs.

    With ``Phi`` the window eigenvectors, ``G = Phi^T <x>^{2p} Phi`` and
    ``C = Phi[chi_0]^T Phi[chi_0]``, the value is ``e^* (G o C) e`` with
    ``e_k = exp(-i t lambda_k)``.
    """
    times = default_times() if times is None else np.asarray(times, float)
    if len(window) == 0:
        return MomentTrace(times, np.zeros(len(times)), p)
    Phi = window.eigenvectors
    wgt = japanese(window.grid.coords()) ** (2 * p)
    G = Phi.T @ (wgt[:, None] * Phi)
    idx0 = origin_window(window.grid)
    C = Phi[idx0].T @ Phi[idx0]
    K = G * C
    E = np.exp(-1j * np.outer(times, window.eigenvalues))
    vals = np.real(np.einsum("tk,kl,tl->t", E.conj(), K, E))
    return MomentTrace(times, np.maximum(vals, 0.0), p)


def moment_at_zero_direct(window: SpectralWindow, p: float) -> float:
    """``|| <x>^p P chi_0 ||_HS^2`` from the explicit projector."""
    Phi = window.eigenvectors
    P = Phi @ Phi.T
    idx0 = origin_window(window.grid)
    wgt = japanese(window.grid.coords()) ** p
    A = wgt[:, None] * P[:, idx0]
    return float(np.sum(A ** 2))


def decay_moment_bound(window: SpectralWindow, p: float, fits: list[DecayFit]) -> float:
    """Upper bound on the moment from decay envelopes.

    Each rank-one term ``<x>^p phi_k (chi_0 phi_k)^T`` has HS norm
    ``||<x>^p phi_k|| ||chi_0 phi_k||``; the first factor is bounded window by
    window by the fitted envelope. The bound is the squared sum of these terms.
    """
    if len(window) == 0:
        return 0.0
    grid = window.grid
    centers, inv = window_partition(grid)
    nodes = grid.coords()
    wmax = np.zeros(len(centers))
    np.maximum.at(wmax, inv, japanese(nodes) ** (2 * p))
    idx0 = origin_window(grid)
    total = 0.0
    for k, fit in enumerate(fits):
        r = np.rint(np.linalg.norm(centers - np.asarray(fit.center), axis=1))
        env = np.minimum(fit.envelope(r), 1.0)
        weighted = math.sqrt(float(np.sum(wmax * env ** 2)))
        total += weighted * float(np.linalg.norm(window.eigenvectors[idx0, k]))
    return total ** 2


@dataclass
class InstanceMeasurement:
    n_window: int
    eigenvalues: list
    fits: list
    multiplicities: list
    moment: MomentTrace
    moment_bound: float
    sudec: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"n_window": self.n_window, "eigenvalues": self.eigenvalues,
                "fits": [f.to_dict() if f is not None else None for f in self.fits],
                "multiplicities": [{k: v for k, v in c.items() if k != "indices"} for c in self.multiplicities],
                "moment_sup": self.moment.sup, "moment_bound": self.moment_bound, "sudec": self.sudec}


def measure_instance(H: DiscreteHamiltonian, E0: float, p: float = 1.0, times=None,
                     sudec: SudecParams | None = None) -> InstanceMeasurement:
    win = window_eigenpairs(H, E0)
    fits = []
    for k in range(len(win)):
        try:
            fits.append(decay_rate_fit(win.eigenvectors[:, k], win.grid))
        except InsufficientRange:
            fits.append(None)
    trace = dynamical_moment(win, p, times)
    bound = decay_moment_bound(win, p, fits) if all(f is not None for f in fits) else math.inf
    corr = sudec_check(win, sudec) if (sudec is not None and len(win)) else []
    return InstanceMeasurement(len(win), win.eigenvalues.tolist(), fits, multiplicity_histogram(win),
                               trace, bound, corr)
