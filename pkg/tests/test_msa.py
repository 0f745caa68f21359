import math

import numpy as np
import pytest
from scipy import stats

from msalab.config import ExperimentConfig
from msalab.errors import ValidationError
from msalab.msa import (HighDisorderSetup, TrialSettings, calibrate_Cu, defect_classify, density_window,
                        estimate_localizing_probability, initial_scale_params, run_msa, run_trial, trial_seed,
                        wegner_measure, wegner_threshold, wilson_interval)
from msalab.operator import BAD, GOOD, JGOOD
from msalab.point_process import Box

HD = HighDisorderSetup(1, 0.25, 0.37)
ENERGIES = (0.0, 0.125, 0.25)
SETTINGS = TrialSettings(kappa=1.5)


def test_initial_scale_worked_example():
    r = initial_scale_params(1, 1.0, 0.37, math.e, 1.0)
    assert r.delta_L == pytest.approx(3.37, rel=1e-12)
    assert r.E_L == pytest.approx(3.37 ** -4, rel=1e-12)
    assert r.E_L == pytest.approx(7.753e-3, rel=1e-3)
    assert r.m_L == pytest.approx(0.04403, rel=1e-3)


def test_initial_scale_high_density_limit():
    r = initial_scale_params(1, 2.0e4, 0.37, 10.0, 1.7)
    assert r.delta_L == pytest.approx(1.0, abs=1e-3)
    assert r.E_L == pytest.approx(1.7, rel=2e-3)


def test_initial_scale_window_enforced():
    lo, hi = density_window(math.e, 1)
    assert lo == pytest.approx(math.exp(-0.05)) and hi == pytest.approx(math.exp(math.e))
    with pytest.raises(ValidationError, match="window"):
        initial_scale_params(1, 0.5, 0.37, math.e, 1.0)
    with pytest.raises(ValidationError, match="window"):
        initial_scale_params(1, 20.0, 0.37, math.e, 1.0)
    with pytest.raises(ValidationError):
        initial_scale_params(1, 1.0, 0.37, 1.0, 1.0)


def test_calibration_is_tight_and_positive():
    cal = calibrate_Cu()
    assert all(v > 0 for v in cal.lambda1)
    assert cal.C_u == pytest.approx(0.5 * min(cal.scaled), rel=1e-14)
    # the calibrated constant undercuts every sweep point by the factor 2
    assert all(lam * d0 ** 4 >= 2 * cal.C_u * (1 - 1e-12) for lam, d0 in zip(cal.lambda1, cal.delta0))


def test_high_disorder_failure_bound_at_rho_min():
    for L in (8.0, 16.0, 32.0):
        assert HD.failure_bound(HD.rho_min(L), L) == pytest.approx(L ** -1.37, rel=1e-10)
    C = HD.log_constant([8.0, 16.0, 32.0])
    assert all(C * math.log(L) >= HD.rho_min(L) * (1 - 1e-12) for L in (8.0, 16.0, 32.0))
    assert HD.mass == pytest.approx(0.25)


@pytest.mark.parametrize("k,n", [(0, 10), (7, 10), (10, 10), (480, 500)])
def test_wilson_interval_formula(k, n):
    z = stats.norm.ppf(0.975)
    ph = k / n
    mid = (ph + z * z / (2 * n)) / (1 + z * z / n)
    half = z / (1 + z * z / n) * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n))
    lo, hi = wilson_interval(k, n)
    assert lo == pytest.approx(max(0.0, mid - half), abs=1e-12)
    assert hi == pytest.approx(min(1.0, mid + half), abs=1e-12)


def test_trials_must_be_positive():
    with pytest.raises(ValidationError):
        estimate_localizing_probability(8.0, ENERGIES, 0.25, 100.0, 0)
    with pytest.raises(ValidationError):
        wegner_measure(8.0, 0.1, 100.0, 1.0, 0.74, 0)
    with pytest.raises(ValidationError):
        wegner_measure(8.0, 0.1, 100.0, -1.0, 0.74, 3)


def test_trial_replays_from_seed():
    seed = trial_seed(0, 8.0, 3)
    a = run_trial(8.0, 150.0, seed, 3, TrialSettings(energies=ENERGIES, kappa=1.5))
    b = run_trial(8.0, 150.0, seed, 3, TrialSettings(energies=ENERGIES, kappa=1.5))
    assert [r.to_dict() for r in a] == [r.to_dict() for r in b]


def test_high_disorder_small_scale_localizes():
    L = 8.0
    rho = HD.log_constant([8.0, 16.0, 32.0]) * math.log(L)
    est = estimate_localizing_probability(L, ENERGIES, HD.mass, rho, 10, seed=1, settings=SETTINGS, workers=1)
    assert est.acceptable_fraction == 1.0
    assert est.fraction >= est.target
    assert est.ci_low <= est.fraction <= est.ci_high


def test_worker_count_does_not_change_results():
    a = estimate_localizing_probability(8.0, ENERGIES, 0.25, 150.0, 3, seed=2, settings=SETTINGS, workers=1)
    b = estimate_localizing_probability(8.0, ENERGIES, 0.25, 150.0, 3, seed=2, settings=SETTINGS, workers=2)
    assert [r.to_dict() for r in a.records] == [r.to_dict() for r in b.records]


def test_wegner_threshold_values():
    assert wegner_threshold(8.0, 0.0, 0.74) == 1.0
    assert wegner_threshold(8.0, 1.0, 0.74) == pytest.approx(math.exp(8 ** (4 * 0.74 / 3) * math.log(8)))
    assert wegner_threshold(1e6, 5.0, 0.74) == math.inf


def test_wegner_fraction_monotone_in_C1():
    runs = [wegner_measure(8.0, -0.5, 20.0, c, 0.74, 8, seed=4, settings=SETTINGS, workers=1)
            for c in (0.0, 0.05, 1.0)]
    fr = [w.fraction for w in runs]
    assert fr == sorted(fr)
    # C1 = 0 means threshold 1; below the spectrum the norm is 1/(lambda_1 + 1/2)
    for r in runs[0].records:
        assert r.passed == (r.acceptable and r.resolvent_norm < 1.0)
    # a huge threshold only leaves the acceptability gate
    assert fr[-1] == sum(r.acceptable for r in runs[-1].records) / 8


def _judge_bad_near_origin(radius):
    def judge(sub):
        return BAD if abs(sub.center[0]) < radius else GOOD
    return judge


def test_defect_all_good_is_empty():
    dm = defect_classify(Box.cube(11.0, 1), None, 0.1, [3.0, 1.0], K2=4, judge=lambda b: GOOD)
    assert dm.uncovered == [] and dm.defect_centers == [] and dm.notsobad


def test_defect_jgood_counts_as_rescue():
    dm = defect_classify(Box.cube(11.0, 1), None, 0.1, [3.0, 1.0], K2=4, judge=lambda b: JGOOD)
    assert dm.defect_centers == []


def test_defect_all_bad_exceeds_budget():
    dm = defect_classify(Box.cube(11.0, 1), None, 0.1, [3.0, 1.0], K2=4, judge=lambda b: BAD)
    assert len(dm.defect_centers) > 4 and not dm.notsobad
    assert len(dm.flagged["3.0"]) == dm.plans[0]["count"] == 5


def test_defect_rescued_by_finer_level():
    judge = lambda b: BAD if b.side == 3.0 else GOOD  # noqa: E731
    dm = defect_classify(Box.cube(11.0, 1), None, 0.1, [3.0, 1.0], K2=0, judge=judge)
    assert dm.flagged["3.0"] and not dm.flagged["1.0"]
    assert dm.defect_centers == [] and dm.notsobad


def test_defect_localised_near_bad_boxes():
    dm = defect_classify(Box.cube(11.0, 1), None, 0.1, [3.0, 1.0], K2=4, judge=_judge_bad_near_origin(1.2))
    assert dm.defect_centers and dm.notsobad
    assert all(abs(c[0]) <= 2.0 for c in dm.defect_centers)
    assert all(abs(x[0]) <= 2.0 for x in dm.uncovered)


def test_run_msa_deterministic():
    cfg = ExperimentConfig.from_dict({"scales": [8], "trials": 3, "wegner_trials": 2, "kappa": 1.5})
    a = run_msa(cfg, workers=1).to_dict()
    b = run_msa(cfg, workers=1).to_dict()
    assert a == b
    assert [s["L"] for s in a["scales"]] == [8.0]
    assert len(a["wegner"]) == 3
