"""Experiment configuration: a single JSON document, validated on load."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from fractions import Fraction
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .covering import STATED_REACH, scale_ladder
from .errors import ValidationError
from .hamiltonian import SingleSiteProfile
from .lattice import DensityParams
from .msa import HighDisorderSetup, TrialSettings

HIGH_DISORDER = "high_disorder"

LADDER_KEYS = {"L0", "rho1", "p", "n1", "tau0", "m0", "min_level"}
MEASURE_DEFAULTS = {"L": 32.0, "rho": 4.0, "E0": 2.0, "instances": 20, "moment_p": 1.0,
                    "n_times": 64, "t_max": 1000.0, "tau": 1.5, "s": 0.5, "nu": 1.0}
COVERING_DEFAULTS = {"dims": [1, 2], "ratio_min": 8, "ratio_max": 40, "ells": [1.0], "reach": str(STATED_REACH)}


def _default_profile() -> dict:
    return SingleSiteProfile().to_dict()


@dataclass
class ExperimentConfig:
    d: int = 1
    rho: float | str = HIGH_DISORDER
    profile: dict = field(default_factory=_default_profile)
    h: float | None = None
    scales: list | None = None
    ladder: dict | None = None
    E0: float = 0.25
    energies: list | None = None
    m: float | None = None
    p: float = 0.37
    eps0: float = 0.05
    eps1: float = 0.05
    eps2: float = 0.05
    kappa: float = 1.0
    K1: int = 8
    K2: int | None = None
    Kprime: int = 4
    C1: float = 1.0
    rho1: float = 0.74
    corner_cap: int = 12
    n_samples: int = 4
    trials: int = 100
    wegner_trials: int | None = None
    seed: int = 0
    out: str = "runs/default"
    measure: dict = field(default_factory=lambda: dict(MEASURE_DEFAULTS))
    covering: dict = field(default_factory=lambda: copy.deepcopy(COVERING_DEFAULTS))

    def __post_init__(self):
        self.validate()

    # -- loading ---------------------------------------------------------------
    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ValidationError("configuration must be a JSON object")
        if "config" in raw and "config_hash" in raw:
            raw = raw["config"]
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValidationError(f"unknown configuration keys: {unknown}")
        raw = copy.deepcopy(raw)
        for key, defaults in (("measure", MEASURE_DEFAULTS), ("covering", COVERING_DEFAULTS)):
            if key in raw:
                if not isinstance(raw[key], dict):
                    raise ValidationError(f"{key} must be an object")
                bad = sorted(set(raw[key]) - set(defaults))
                if bad:
                    raise ValidationError(f"unknown {key} keys: {bad}")
                raw[key] = {**copy.deepcopy(defaults), **raw[key]}
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        text = Path(path).read_text()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(raw)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self

    # -- validation ------------------------------------------------------------
    def validate(self) -> None:
        if not isinstance(self.d, int) or isinstance(self.d, bool) or self.d < 1:
            raise ValidationError(f"d must be a positive integer, got {self.d!r}")
        if isinstance(self.rho, str):
            if self.rho != HIGH_DISORDER:
                raise ValidationError(f"rho must be a positive number or {HIGH_DISORDER!r}")
        elif not (isinstance(self.rho, (int, float)) and self.rho > 0 and math.isfinite(self.rho)):
            raise ValidationError(f"density must be positive, got {self.rho!r}")
        if not isinstance(self.profile, dict):
            raise ValidationError("profile must be an object")
        try:
            prof = SingleSiteProfile(**self.profile)
        except TypeError as exc:
            raise ValidationError(f"profile: {exc}") from exc
        if self.h is not None and not (0 < self.h <= prof.delta_minus / 4):
            raise ValidationError(f"h must lie in (0, delta_minus/4], got {self.h}")
        if self.scales is not None:
            if not self.scales or any(not (isinstance(v, (int, float)) and v >= 2) for v in self.scales):
                raise ValidationError("scales must be a nonempty list of sides >= 2")
        if self.ladder is not None:
            if not isinstance(self.ladder, dict) or "L0" not in self.ladder:
                raise ValidationError("ladder must be an object with at least L0")
            bad = sorted(set(self.ladder) - LADDER_KEYS)
            if bad:
                raise ValidationError(f"unknown ladder keys: {bad}")
            self._ladder()
        if not self.E0 > 0:
            raise ValidationError("E0 must be positive")
        if self.energies is not None and (not self.energies or any(E < 0 for E in self.energies)):
            raise ValidationError("energies must be a nonempty list of nonnegative values")
        if self.m is not None and self.m < 0:
            raise ValidationError("mass m must be nonnegative")
        if not self.p > 0:
            raise ValidationError("p must be positive")
        if not 0 < self.eps0 < 0.25:
            raise ValidationError("eps0 must lie in (0, 1/4)")
        DensityParams(self.eps1, self.eps2)
        if not self.kappa > 0:
            raise ValidationError("kappa must be positive")
        for name in ("K1", "Kprime", "corner_cap"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.K2 is not None and self.K2 < 1:
            raise ValidationError("K2 must be >= 1")
        if self.n_samples < 0:
            raise ValidationError("n_samples must be >= 0")
        if self.C1 < 0:
            raise ValidationError("C1 must be nonnegative")
        if not 0 < self.rho1 < 1:
            raise ValidationError("rho1 must lie in (0, 1)")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ValidationError("trials must be a positive integer")
        if self.wegner_trials is not None and self.wegner_trials < 1:
            raise ValidationError("wegner_trials must be >= 1")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2 ** 64):
            raise ValidationError("seed must be an unsigned 64-bit integer")
        mz = self.measure
        if not (mz["L"] >= 2 and mz["rho"] > 0 and mz["E0"] > 0 and mz["instances"] >= 1
                and mz["n_times"] >= 2 and mz["t_max"] > 0):
            raise ValidationError("measure: need L >= 2, rho > 0, E0 > 0, instances >= 1, n_times >= 2, t_max > 0")
        if not (mz["tau"] > 1 and 0 < mz["s"] < 1 and mz["nu"] > self.d / 2):
            raise ValidationError("measure: need tau > 1, 0 < s < 1, nu > d/2")
        cv = self.covering
        try:
            reach = Fraction(str(cv["reach"]))
        except (ValueError, ZeroDivisionError) as exc:
            raise ValidationError(f"covering.reach must be a number or fraction string, got {cv['reach']!r}") from exc
        if not 0 < reach < 1:
            raise ValidationError("covering.reach must lie in (0, 1)")
        if not (cv["ratio_min"] >= 1 and cv["ratio_max"] >= cv["ratio_min"] and cv["ells"]
                and all(e > 0 for e in cv["ells"]) and all(k >= 1 for k in cv["dims"])):
            raise ValidationError("covering: need 1 <= ratio_min <= ratio_max, positive ells, dims >= 1")

    # -- resolution ------------------------------------------------------------
    def _ladder(self):
        lad = dict(self.ladder)
        L0 = float(lad.pop("L0"))
        lad.setdefault("rho1", self.rho1)
        return scale_ladder(L0, self.d, **lad)

    def resolved_scales(self) -> list[float]:
        if self.ladder is not None:
            return sorted(self._ladder().levels)
        return [float(v) for v in (self.scales if self.scales is not None else [8, 16, 32])]

    def profile_obj(self) -> SingleSiteProfile:
        return SingleSiteProfile(**self.profile)

    def high_disorder(self) -> HighDisorderSetup:
        return HighDisorderSetup(self.d, self.E0, self.p, self.profile_obj())

    def rho_log_constant(self) -> float | None:
        if self.rho != HIGH_DISORDER:
            return None
        return self.high_disorder().log_constant(self.resolved_scales())

    def rho_at(self, L: float) -> float:
        if self.rho == HIGH_DISORDER:
            return self.rho_log_constant() * math.log(L)
        return float(self.rho)

    def resolved_energies(self) -> list[float]:
        if self.energies is not None:
            return [float(E) for E in self.energies]
        return [0.0, self.E0 / 2, self.E0]

    def resolved_mass(self) -> float:
        return float(self.m) if self.m is not None else 0.5 * math.sqrt(self.E0)

    def resolved_K2(self) -> int:
        if self.K2 is not None:
            return int(self.K2)
        try:
            n1 = self._ladder().n1 if self.ladder is not None else scale_ladder(
                max(self.resolved_scales()), self.d, rho1=self.rho1).n1
        except ValidationError:
            n1 = 1
        return (2 * (self.Kprime - 1)) ** n1

    def trial_settings(self) -> TrialSettings:
        return TrialSettings(d=self.d, energies=tuple(self.resolved_energies()), mass=self.resolved_mass(),
                             profile=dict(self.profile_obj().to_dict()), h=self.h, eps1=self.eps1,
                             eps2=self.eps2, kappa=self.kappa, corner_cap=self.corner_cap,
                             n_samples=self.n_samples)

    # -- serialisation ---------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def resolved(self) -> dict:
        out = self.to_dict()
        out["resolved"] = {"scales": self.resolved_scales(), "energies": self.resolved_energies(),
                           "mass": self.resolved_mass(), "K2": self.resolved_K2(),
                           "rho_log_constant": self.rho_log_constant()}
        return out

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of the data-determining fields (``out`` excluded)."""
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()
