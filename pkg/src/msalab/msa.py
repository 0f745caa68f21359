"""Monte Carlo multiscale driver.

Initial-scale parameters, high-disorder density requirements, empirical
localizing probabilities over a list of scales, defect-region classification
on a ladder of coverings, and the empirical resolvent-norm (Wegner) measurement.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage, stats

from .covering import (SAFE_REACH, CoveringPlan, admissible_alphas, neighbourhood_contained,
                       standard_covering)
from .errors import DomainError, ResolventBlowUp, ValidationError
from .hamiltonian import (BAD, GOOD, JGOOD, FreeSiteFamily, GoodnessParams, SingleSiteProfile,
                          assemble, evaluate_goodness, free_good_over_energies)
from .lattice import (ACCEPTABLE, DensityParams, EtaGrid, classify_acceptable, eta_of_scale,
                      is_dense)
from .point_process import Box, Configuration, deviation_constant, sample_marked, split_marked
from .rng import derive_seed


# -- initial scale -------------------------------------------------------------

@dataclass(frozen=True)
class InitialScaleParams:
    delta_L: float
    E_L: float
    m_L: float
    C_u: float
    window_ok: bool

    def to_dict(self) -> dict:
        return asdict(self)


def density_window(L: float, d: int, eps0: float = 0.05) -> tuple[float, float]:
    """Admissible densities ``[L^-eps0, exp(L^d)]``."""
    hi = math.exp(L ** d) if L ** d < 700 else math.inf
    return L ** (-eps0), hi


def initial_scale_params(d: int, rho: float, p: float, L: float, C_u: float,
                         eps0: float = 0.05) -> InitialScaleParams:
    """``delta_L = 1 + ((p+d+1) log L / rho)^(1/d)``, ``E_L = C_u delta_L^(-2(d+1))``, ``m_L = sqrt(E_L)/2``."""
    if not L > 1:
        raise ValidationError("L must exceed 1")
    if not C_u > 0:
        raise ValidationError("C_u must be positive")
    lo, hi = density_window(L, d, eps0)
    if not lo <= rho <= hi:
        raise ValidationError(f"density {rho} outside the window L^-eps0 <= rho <= exp(L^d) = [{lo:.4g}, {hi:.4g}]")
    delta = 1 + ((p + d + 1) * math.log(L) / rho) ** (1 / d)
    E = C_u * delta ** (-2 * (d + 1))
    return InitialScaleParams(delta, E, 0.5 * math.sqrt(E), C_u, True)


def filled_centers(box: Box, delta0: float, delta_plus: float) -> np.ndarray:
    """Centers ``j in x + 2 delta0 Z^d`` whose ``delta0``-boxes sit inside the box shrunk by ``delta_plus``."""
    inner = (box.side - delta_plus) / 2
    K = int(math.floor((inner - delta0 / 2) / delta0 + 1e-12))
    ks = [k for k in range(-K, K + 1) if k % 2 == 0]
    if not ks:
        return np.zeros((0, box.dimension))
    axes = [c + delta0 * np.array(ks, float) for c in box.center]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass
class Calibration:
    C_u: float
    delta0: list[float]
    lambda1: list[float]
    scaled: list[float]          # lambda1 * delta0^(2(d+1))
    slope: float                 # log lambda1 vs log delta0
    argmin: float
    c_avg: list[float]           # min of averaged potential times delta0^d
    d: int
    L: float

    def to_dict(self) -> dict:
        return asdict(self)


def averaged_potential_min(H, delta0: float) -> float:
    """Minimum over the box of the potential averaged over cubes of side ``6 delta0``."""
    g = H.grid
    V = H.potential.reshape(g.shape)
    size = max(1, int(round(6 * delta0 / g.h)))
    if size % 2 == 0:
        size += 1
    Vbar = ndimage.uniform_filter(V, size=size, mode="constant", cval=0.0)
    return float(Vbar.min())


def calibrate_Cu(d: int = 1, profile: SingleSiteProfile = SingleSiteProfile(),
                 delta0_sweep=(2, 3, 4, 6, 8), L: float = 32.0, h: float | None = None) -> Calibration:
    """Smallest ``lambda1 * delta0^(2(d+1)) / 2`` over filled configurations.

    For each ``delta0`` one impurity sits at every center of ``x + 2 delta0 Z^d``
    whose ``delta0``-box fits in the box shrunk by ``delta_plus``.
    """
    box = Box.cube(L, d)
    lams, scaled, cavg = [], [], []
    for d0 in delta0_sweep:
        if not d0 > profile.delta_plus:
            raise ValidationError(f"sweep value {d0} must exceed delta_plus={profile.delta_plus}")
        X = Configuration(filled_centers(box, d0, profile.delta_plus), d)
        H = assemble(box, X, profile=profile, h=h)
        lam = H.lowest_eigenvalue()
        if not lam > 0:
            raise DomainError(f"lowest eigenvalue {lam} <= 0 for a nonnegative potential")
        lams.append(lam)
        scaled.append(lam * d0 ** (2 * (d + 1)))
        cavg.append(averaged_potential_min(H, d0) * d0 ** d)
    slope = float(np.polyfit(np.log(delta0_sweep), np.log(lams), 1)[0]) if len(lams) > 1 else float("nan")
    i = int(np.argmin(scaled))
    return Calibration(0.5 * scaled[i], list(map(float, delta0_sweep)), lams, scaled, slope,
                       float(delta0_sweep[i]), cavg, d, L)


# -- high disorder -------------------------------------------------------------

@dataclass(frozen=True)
class HighDisorderSetup:
    """Fixed interval ``[0, E0]`` at high disorder.

    ``K0`` impurities in each ``delta0``-box (``delta0 = delta_minus/6``) lift the
    operator above ``2 E0``; ``rho_min(L)`` is the density making that
    configuration event fail with probability at most ``L^-(p+1)``.
    """

    d: int
    E0: float
    p: float
    profile: SingleSiteProfile = SingleSiteProfile()

    @property
    def delta0(self) -> float:
        return self.profile.delta_minus / 6

    @property
    def delta1(self) -> float:
        return self.delta0 / 2

    @property
    def K0(self) -> int:
        return max(1, math.ceil(2 * self.E0 / self.profile.u_minus - 1e-12))

    @property
    def mass(self) -> float:
        return 0.5 * math.sqrt(self.E0)

    def rho_min(self, L: float) -> float:
        d = self.d
        ck = deviation_constant(self.K0)
        return (2 / self.delta1 ** d) * (d * math.log(L / self.delta0) + math.log(ck)
                                         + (self.p + 1) * math.log(L))

    def log_constant(self, scales) -> float:
        """Smallest ``C`` with ``C log L >= rho_min(L)`` on every scale."""
        return max(self.rho_min(L) / math.log(L) for L in scales)

    def failure_bound(self, rho: float, L: float) -> float:
        d = self.d
        return (L / self.delta0) ** d * deviation_constant(self.K0) * math.exp(-0.5 * rho * self.delta1 ** d)


# -- trials --------------------------------------------------------------------

@dataclass
class TrialSettings:
    """Everything a trial needs; plain data so it pickles to worker processes."""

    d: int = 1
    energies: tuple = (0.25,)
    mass: float = 0.25
    profile: dict = field(default_factory=lambda: SingleSiteProfile().to_dict())
    h: float | None = None
    eps1: float = 0.05
    eps2: float = 0.05
    kappa: float = 1.0
    corner_cap: int = 12
    n_samples: int = 4

    @property
    def profile_obj(self) -> SingleSiteProfile:
        return SingleSiteProfile(**self.profile)


@dataclass
class TrialRecord:
    seed: int
    trial: int
    L: float
    rho: float
    E: float
    acceptability: str
    goodness: str | None
    dense: bool | None
    resolvent_norm: float | None
    localizing: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["resolvent_norm"] is not None and not math.isfinite(d["resolvent_norm"]):
            d["resolvent_norm"] = "inf"
        return d


def trial_seed(master: int, L: float, trial: int) -> int:
    return derive_seed(master, int(round(L * 1000)), trial)


def run_trial(L: float, rho: float, seed: int, trial: int, s: TrialSettings) -> list[TrialRecord]:
    """One trial: sample at density ``2 rho``, split by mark, then gate in order
    acceptability -> free-site goodness of X with S from X' -> density of S."""
    box = Box.cube(L, s.d)
    Y = sample_marked(box, 2 * rho, seed)
    X, Xp = split_marked(Y)
    grid = EtaGrid(box, eta_of_scale(L, s.kappa))
    verdict = classify_acceptable(Y.support, grid, rho)
    acc = verdict.klass
    if acc != ACCEPTABLE:
        return [TrialRecord(seed, trial, L, rho, float(E), acc, None, None, None, False) for E in s.energies]
    profile = s.profile_obj
    fam = FreeSiteFamily(box, X, Xp, profile, s.h)
    params = GoodnessParams(eps1=s.eps1, kappa=s.kappa, probe_seed=seed)
    reports = free_good_over_energies(fam, s.energies, s.mass, s.n_samples, s.corner_cap, seed, params)
    dense = is_dense(Xp.restrict(box), box, DensityParams(s.eps1, s.eps2), profile.delta_plus)
    out = []
    for E, rep in zip(s.energies, reports):
        ok = rep.verdict in (GOOD, JGOOD) and dense
        out.append(TrialRecord(seed, trial, L, rho, float(E), acc, rep.verdict, bool(dense),
                               float(rep.worst.resolvent_norm), bool(ok)))
    return out


def _trial_task(args):
    L, rho, master, trial, settings = args
    return run_trial(L, rho, trial_seed(master, L, trial), trial, settings)


def worker_count() -> int:
    env = os.environ.get("MSALAB_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ValidationError(f"MSALAB_THREADS must be an integer, got {env!r}") from exc
        if n < 1:
            raise ValidationError("MSALAB_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def parallel_map(fn, tasks: list, workers: int | None = None) -> list:
    """Ordered map over independent tasks; serial when one worker is requested."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=chunk))


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class ScaleEstimate:
    L: float
    rho: float
    trials: int
    passes: int
    fraction: float
    ci_low: float
    ci_high: float
    target: float
    per_energy: dict
    acceptable_fraction: float
    mass_hat: float | None
    records: list = field(default_factory=list, repr=False)

    @property
    def meets_target(self) -> bool:
        return self.fraction >= self.target

    def summary(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "records"}
        d["meets_target"] = self.meets_target
        return d


def estimate_localizing_probability(L: float, energies, m: float, rho: float, trials: int, seed: int = 0,
                                    p: float = 0.37, settings: TrialSettings | None = None,
                                    workers: int | None = None) -> ScaleEstimate:
    """Fraction of trials whose sample passes every gate at every energy."""
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    if not rho > 0:
        raise ValidationError("density must be positive")
    s = settings if settings is not None else TrialSettings()
    s = TrialSettings(**{**asdict(s), "energies": tuple(float(E) for E in energies), "mass": float(m)})
    tasks = [(float(L), float(rho), int(seed), i, s) for i in range(trials)]
    per_trial = parallel_map(_trial_task, tasks, workers)
    records = [r for rs in per_trial for r in rs]
    passes = sum(all(r.localizing for r in rs) for rs in per_trial)
    acc = sum(rs[0].acceptability == ACCEPTABLE for rs in per_trial)
    per_energy = {}
    for j, E in enumerate(s.energies):
        per_energy[repr(E)] = sum(rs[j].localizing for rs in per_trial) / trials
    lo, hi = wilson_interval(passes, trials)
    return ScaleEstimate(float(L), float(rho), trials, passes, passes / trials, lo, hi,
                         1 - L ** (-p), per_energy, acc / trials, None, records)


def fitted_mass(H, E: float, params: GoodnessParams = GoodnessParams()) -> float | None:
    """Largest ``m`` with ``||chi_x R chi_y|| <= exp(-m |x-y|)`` on every probe pair."""
    rep = evaluate_goodness(H, E, 0.0, params)
    vals = [(-math.log(v) / float(np.linalg.norm(x - y))) for x, y, v, _ in rep.decay_samples if v > 0]
    return min(vals) if vals else None


# -- defect classification -----------------------------------------------------

def snap_scale(parent_side: float, target: float, h: float = 0.125) -> float:
    """Nearest multiple of ``h`` to ``target`` admitting a standard covering of the parent."""
    k0 = max(2, int(round(target / h)))
    for delta in range(0, int(parent_side / h) + 1):
        for k in (k0 - delta, k0 + delta):
            ell = k * h
            if 1 < k and ell < parent_side and admissible_alphas(parent_side, ell):
                return ell
    raise ValidationError(f"no covering-compatible scale near {target} inside {parent_side}")


@dataclass
class DefectMap:
    levels: list[float]
    plans: list[dict]
    flagged: dict                 # level -> list of bad sub-box centers
    uncovered: list               # probe points with no good container
    defect_centers: list          # R' (centers of the 3 ell2 boxes)
    ell2: float
    K2: int

    @property
    def notsobad(self) -> bool:
        return len(self.defect_centers) <= self.K2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["notsobad"] = self.notsobad
        return d


def defect_classify(box: Box, X, E: float, levels, K2: int, m: float = 0.0,
                    params: GoodnessParams = GoodnessParams(), profile: SingleSiteProfile = SingleSiteProfile(),
                    h: float | None = None, probe_spacing: float = 0.5, reach=SAFE_REACH,
                    judge=None) -> DefectMap:
    """Probe points not rescued by any jgood box of any level form the defect region.

    ``levels`` are the sub-box sides ``L_1 > ... > L_n1`` (covering-compatible
    with ``box``). A probe ``x`` is rescued at level n by a sub-box
    ``Lambda_{L_n}(r)`` that is good or jgood and contains the clipped
    ``reach*L_n`` neighbourhood of ``x``. Unrescued probes are assigned to their
    nearest level-n1 center (ties to the smallest), and those centers carry the
    ``3 ell2`` defect boxes. ``judge(sub_box) -> verdict`` overrides the
    goodness computation.
    """
    levels = [float(v) for v in levels]
    if not levels:
        raise ValidationError("need at least one level")
    plans: list[CoveringPlan] = [standard_covering(box, v) for v in levels]
    if judge is None:
        def judge(sub: Box) -> str:
            Xs = X.restrict(sub) if isinstance(X, Configuration) else X
            return evaluate_goodness(assemble(sub, Xs, profile=profile, h=h), E, m, params).verdict
    status = []
    flagged = {}
    for v, plan in zip(levels, plans):
        st = {}
        for c in plan.centers:
            st[tuple(c)] = judge(Box(tuple(c), v)) in (GOOD, JGOOD)
        status.append(st)
        flagged[repr(v)] = [list(c) for c, ok in st.items() if not ok]
    # probe grid
    axes = []
    for c in box.center:
        lo, hi = c - box.side / 2, c + box.side / 2
        n = int(math.floor(box.side / probe_spacing))
        pts = lo + probe_spacing * (np.arange(n + 1))
        pts = np.clip(pts, lo + 1e-9, hi - 1e-9)
        axes.append(np.unique(pts))
    mesh = np.meshgrid(*axes, indexing="ij")
    probes = np.stack([m_.ravel() for m_ in mesh], axis=1)
    uncovered = []
    for x in probes:
        rescued = False
        for plan, st in zip(plans, status):
            for c, ok in st.items():
                if ok and np.all(np.abs(np.asarray(c) - x) < plan.ell / 2 + 1e-12) and \
                        neighbourhood_contained(plan, tuple(x), c, reach):
                    rescued = True
                    break
            if rescued:
                break
        if not rescued:
            uncovered.append(x)
    last = plans[-1]
    centers = last.centers
    R = set()
    for x in uncovered:
        dist = np.max(np.abs(centers - x), axis=1)
        best = np.flatnonzero(dist == dist.min())
        cand = sorted(tuple(centers[i]) for i in best)
        R.add(cand[0])
    return DefectMap(levels, [p.to_dict() for p in plans], flagged, [list(map(float, x)) for x in uncovered],
                     sorted([list(map(float, r)) for r in R]), levels[-1], int(K2))


# -- Wegner ---------------------------------------------------------------------

def wegner_threshold(L: float, C1: float, rho1: float) -> float:
    """``exp(C1 L^(4 rho1 / 3) log L)`` (may be inf)."""
    expo = C1 * L ** (4 * rho1 / 3) * math.log(L)
    return math.exp(expo) if expo < 709 else math.inf


@dataclass
class WegnerRecord:
    seed: int
    trial: int
    acceptable: bool
    resolvent_norm: float | None
    passed: bool


def _wegner_task(args):
    L, E, rho, master, trial, threshold, s = args
    seed = derive_seed(master, int(round(L * 1000)), trial, 1)
    box = Box.cube(L, s.d)
    Y = sample_marked(box, 2 * rho, seed)
    X, _ = split_marked(Y)
    grid = EtaGrid(box, eta_of_scale(L, s.kappa))
    acc = classify_acceptable(Y.support, grid, rho).acceptable
    H = assemble(box, X, profile=s.profile_obj, h=s.h)
    try:
        norm = H.resolvent_norm(E)
    except ResolventBlowUp:
        norm = math.inf
    return WegnerRecord(seed, trial, bool(acc), norm if math.isfinite(norm) else None,
                        bool(acc and norm < threshold))


@dataclass
class WegnerResult:
    L: float
    E: float
    threshold: float
    trials: int
    fraction: float
    target: float
    records: list = field(default_factory=list, repr=False)

    @property
    def meets_target(self) -> bool:
        return self.fraction >= self.target

    def summary(self) -> dict:
        return {"L": self.L, "E": self.E, "threshold": self.threshold, "trials": self.trials,
                "fraction": self.fraction, "target": self.target, "meets_target": self.meets_target}


def wegner_measure(L: float, E: float, rho: float, C1: float, rho1: float, trials: int, seed: int = 0,
                   p: float = 0.37, settings: TrialSettings | None = None,
                   workers: int | None = None) -> WegnerResult:
    """Fraction of trials that are acceptable and have ``||R(E)||`` below the threshold."""
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    if C1 < 0:
        raise ValidationError("C1 must be nonnegative")
    s = settings if settings is not None else TrialSettings()
    thr = wegner_threshold(L, C1, rho1)
    tasks = [(float(L), float(E), float(rho), int(seed), i, thr, s) for i in range(trials)]
    recs = parallel_map(_wegner_task, tasks, workers)
    frac = sum(r.passed for r in recs) / trials
    return WegnerResult(float(L), float(E), thr, trials, frac, 1 - L ** (-p), recs)


# -- full run ------------------------------------------------------------------

@dataclass
class MsaReport:
    scales: list[ScaleEstimate]
    wegner: list[WegnerResult]
    constants: dict
    snaps: list
    m0: float

    @property
    def all_meet_targets(self) -> bool:
        return all(s.meets_target for s in self.scales) and all(w.meets_target for w in self.wegner)

    @property
    def monotone(self) -> bool:
        f = [s.fraction for s in self.scales]
        return all(a <= b + 1e-12 for a, b in zip(f, f[1:]))

    @property
    def mass_ok(self) -> bool | None:
        ms = [s.mass_hat for s in self.scales if s.mass_hat is not None]
        return None if not ms else all(v >= self.m0 / 2 for v in ms)

    def to_dict(self) -> dict:
        return {"scales": [s.summary() for s in self.scales],
                "wegner": [w.summary() for w in self.wegner],
                "constants": self.constants, "snaps": self.snaps, "m0": self.m0,
                "all_meet_targets": self.all_meet_targets, "monotone": self.monotone,
                "mass_ok": self.mass_ok}


def snap_to_unit_covering(L: float, ell: float = 1.0) -> tuple[float, bool]:
    """Return ``(L', snapped)``, ``L'`` covering-compatible with ``ell``-sub-boxes."""
    if admissible_alphas(L, ell):
        return float(L), False
    from .covering import nearest_compatible
    return float(nearest_compatible(L, ell)), True


def median_mass(L: float, rho: float, E: float, master: int, settings: TrialSettings, n: int = 8) -> float | None:
    """Median fitted decay rate at energy ``E`` over ``n`` samples of ``X``."""
    vals = []
    for i in range(n):
        seed = trial_seed(master, L, i)
        box = Box.cube(L, settings.d)
        X, _ = split_marked(sample_marked(box, 2 * rho, seed))
        H = assemble(box, X, profile=settings.profile_obj, h=settings.h)
        try:
            v = fitted_mass(H, E, GoodnessParams(eps1=settings.eps1, kappa=settings.kappa, probe_seed=seed))
        except ResolventBlowUp:
            v = None
        if v is not None:
            vals.append(v)
    return float(np.median(vals)) if vals else None


def run_msa(config, on_scale=None, workers: int | None = None) -> MsaReport:
    """Localizing-probability and Wegner estimates over every scale of ``config``.

    ``config`` is an :class:`msalab.config.ExperimentConfig`. Scales are
    snapped to unit-covering-compatible sides first. ``on_scale(estimate,
    wegner_results)`` is called after each scale so partial results can be
    persisted before a later scale fails.
    """
    settings = config.trial_settings()
    snaps, estimates, wegner = [], [], []
    for L_req in config.resolved_scales():
        L, snapped = snap_to_unit_covering(L_req, 1.0)
        if snapped:
            snaps.append({"requested": float(L_req), "snapped": L})
        rho = config.rho_at(L)
        est = estimate_localizing_probability(L, settings.energies, settings.mass, rho, config.trials,
                                              config.seed, config.p, settings, workers)
        est.mass_hat = median_mass(L, rho, settings.energies[-1], config.seed, settings)
        wl = [wegner_measure(L, E, rho, config.C1, config.rho1, config.wegner_trials or config.trials,
                             config.seed, config.p, settings, workers) for E in settings.energies]
        estimates.append(est)
        wegner.extend(wl)
        if on_scale is not None:
            on_scale(est, wl)
    constants = {"K1": config.K1, "K2": config.resolved_K2(), "Kprime": config.Kprime, "C1": config.C1,
                 "rho1": config.rho1, "p": config.p, "rho_log_constant": config.rho_log_constant()}
    return MsaReport(estimates, wegner, constants, snaps, settings.mass)
