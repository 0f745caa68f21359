from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msalab.covering import (SAFE_REACH, STATED_REACH, CoveringError, admissible_alphas, axis_containment_gaps,
                             ladder_violations, locate_container, neighbourhood_contained, nested_subcovering,
                             scale_ladder, standard_covering, verify_plan)
from msalab.errors import DomainError, IncompatibleScales, ValidationError
from msalab.point_process import Box


def _alpha_oracle(L, ell):
    """Brute-force admissible ratios from the definition."""
    out = []
    n = 1
    while True:
        a = Fraction(L - ell) / (2 * ell * n)
        if a <= Fraction(3, 5):
            return out
        if a <= Fraction(4, 5):
            out.append((n, a))
        n += 1


def test_l11_example():
    plan = standard_covering(Box.cube(11.0, 1), 1.0)
    assert plan.alpha == Fraction(5, 7) and plan.n == 7
    assert len(plan) == 15 <= 22
    assert admissible_alphas(11, 1) == _alpha_oracle(11, 1)


@pytest.mark.parametrize("L", [2, 3])
def test_small_ratio_incompatible(L):
    with pytest.raises(IncompatibleScales) as exc:
        standard_covering(Box.cube(float(L), 1), 1.0)
    assert exc.value.nearest is not None and admissible_alphas(exc.value.nearest, 1)


@given(st.integers(8, 40), st.sampled_from([0.5, 1.0, 2.0]))
@settings(max_examples=40, deadline=None)
def test_alphas_match_oracle(r, ell):
    L = r * ell
    assert admissible_alphas(L, ell) == _alpha_oracle(Fraction(L), Fraction(ell))


def test_coverage_core_cardinality_hold_d2():
    plan = standard_covering(Box.cube(13.0, 2), 1.0)
    rep = verify_plan(plan, reach=SAFE_REACH)
    assert rep.coverage and rep.core_disjoint and rep.cardinality and rep.containment


def test_stated_reach_gap_is_exact():
    plan = standard_covering(Box.cube(11.0, 1), 1.0)
    gaps = axis_containment_gaps(plan, STATED_REACH)
    assert gaps
    # a point inside a reported gap has no container; an overlap midpoint between centers has one
    a, b = gaps[0]
    y = (a + b) / 2
    centers = plan.axis_centers(0)
    assert not any(neighbourhood_contained(plan, (y,), (c,), STATED_REACH) for c in centers)
    with pytest.raises(CoveringError):
        locate_container(plan, (float(y),), reach=STATED_REACH)


def test_locate_container_examples():
    for d in (1, 2):
        plan = standard_covering(Box.cube(11.0, d), 1.0)
        r = locate_container(plan, (0.0,) * d)
        assert neighbourhood_contained(plan, (Fraction(0),) * d, tuple(Fraction(v) for v in r), SAFE_REACH)
        face = (5.5 - 1e-9,) + (0.0,) * (d - 1)
        locate_container(plan, face)


def test_safe_reach_probe_grid():
    plan = standard_covering(Box.cube(9.0, 1), 1.0)
    for y in np.arange(-4.49, 4.5, 0.1):
        locate_container(plan, (float(y),))


def test_nested_subcovering_examples():
    plan = standard_covering(Box.cube(11.0, 1), 1.0)
    sub = nested_subcovering(plan, (0.0,), 2)
    assert sub.side == Fraction(27, 7) and len(sub) == 5
    full = nested_subcovering(plan, (0.0,), 7)
    assert full.side == plan.side and np.array_equal(full.centers, plan.centers)
    rep = verify_plan(sub, reach=SAFE_REACH)
    assert rep.core_disjoint and rep.coverage
    parent_centers = {tuple(c) for c in plan.centers}
    assert all(tuple(c) in parent_centers for c in sub.centers)


def test_nested_of_nested_equals_direct():
    plan = standard_covering(Box.cube(21.0, 1), 1.0)
    inner = nested_subcovering(nested_subcovering(plan, (0.0,), 5), (0.0,), 2)
    direct = nested_subcovering(plan, (0.0,), 2)
    assert np.array_equal(inner.centers, direct.centers)


def test_nested_outside_parent_rejected():
    plan = standard_covering(Box.cube(11.0, 1), 1.0)
    with pytest.raises(DomainError):
        nested_subcovering(plan, (5.0,), 3)


def test_deterministic():
    a = standard_covering(Box.cube(17.0, 2), 1.0)
    b = standard_covering(Box.cube(17.0, 2), 1.0)
    assert a.to_dict() == b.to_dict()


def test_ladder_default_constraints_d1():
    # the order constraints hold for p = 0.37, rho1 = 0.74
    assert 8 / 11 < 1 / 1.37 < 0.74 < 0.75
    assert not [v for v in ladder_violations(1, 0.37, 0.74, 1e-9, 5e-10) if "8/11" in v or "rho1 <" in v]
    # the remaining inequality p < d(rho1/2 - rho2) cannot hold at p = 0.37
    assert any("p <" in v for v in ladder_violations(1, 0.37, 0.74, 1e-9, 5e-10))


def test_ladder_levels_and_errors():
    lad = scale_ladder(32.0, 1)
    assert lad.levels == sorted(lad.levels, reverse=True)
    assert lad.levels[0] == 32.0 and lad.n1 >= 1
    assert lad.rho2 == pytest.approx(0.74 ** lad.n1)
    with pytest.raises(ValidationError, match="3/4"):
        scale_ladder(32.0, 1, rho1=0.8)
