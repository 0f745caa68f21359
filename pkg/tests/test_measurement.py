import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msalab.errors import InsufficientRange, SolverError, ValidationError
from msalab.measurement import (SudecParams, decay_moment_bound, decay_rate_fit, default_times, dynamical_moment,
                                inertia_count, measure_instance, moment_at_zero_direct, multiplicity_histogram,
                                sudec_check, sudec_constant, window_eigenpairs, window_norms, window_partition)
from msalab.operator import NodeGrid, assemble, dirichlet_eigenvalues
from msalab.point_process import Box, PoissonParams, sample_poisson


def _random_H(L=16.0, dens=4.0, seed=0, d=1, h=None):
    box = Box.cube(L, d)
    return assemble(box, sample_poisson(box, PoissonParams(dens, seed)), h=h)


def test_windows_partition_nodes():
    grid = NodeGrid(Box.cube(8.0, 2), 0.25)
    centers, inv = window_partition(grid)
    assert np.bincount(inv).sum() == grid.coords().shape[0]
    # each node lies in the half-open unit window of its center
    off = grid.coords() - centers[inv]
    assert np.all((off >= -0.5 - 1e-12) & (off < 0.5))


@given(st.integers(0, 2 ** 31))
@settings(max_examples=20, deadline=None)
def test_window_norms_parseval(seed):
    grid = NodeGrid(Box.cube(8.0, 1), 0.125)
    psi = np.random.default_rng(seed).normal(size=grid.coords().shape[0])
    _, w = window_norms(psi, grid)
    assert np.sum(w ** 2) == pytest.approx(np.sum(psi ** 2), rel=1e-12)


def test_synthetic_exponential_decay():
    grid = NodeGrid(Box.cube(32.0, 1), 0.125)
    x = grid.coords()[:, 0]
    fit = decay_rate_fit(np.exp(-0.5 * np.abs(x)), grid)
    assert fit.mass == pytest.approx(0.5, abs=0.02)
    assert fit.r_squared > 0.99


def test_flat_function_has_no_decay():
    grid = NodeGrid(Box.cube(32.0, 1), 0.125)
    fit = decay_rate_fit(np.ones(grid.coords().shape[0]), grid)
    assert abs(fit.mass) < 0.05


@pytest.mark.parametrize("scale", [1.0, -3.0, 1e-6, 2.5j])
def test_fit_invariant_under_scalar_multiple(scale):
    grid = NodeGrid(Box.cube(24.0, 1), 0.125)
    x = grid.coords()[:, 0]
    psi = np.exp(-0.8 * np.abs(x - 1.3)) * (1 + 0.1 * np.cos(x))
    a = decay_rate_fit(psi, grid)
    b = decay_rate_fit(scale * psi, grid)
    assert b.mass == pytest.approx(a.mass, rel=1e-10)
    assert b.r_squared == pytest.approx(a.r_squared, rel=1e-10)


def test_fit_needs_three_shells():
    grid = NodeGrid(Box.cube(4.0, 1), 0.125)
    with pytest.raises(InsufficientRange):
        decay_rate_fit(np.ones(grid.coords().shape[0]), grid, center=(0.0,))
    with pytest.raises(ValidationError):
        decay_rate_fit(np.zeros(grid.coords().shape[0]), grid)


def test_envelope_covers_observed_shells():
    H = _random_H(seed=3)
    win = window_eigenpairs(H, 2.0)
    for k in range(len(win)):
        fit = decay_rate_fit(win.eigenvectors[:, k], win.grid)
        for r, v in fit.shells:
            assert v <= fit.envelope(r) * (1 + 1e-12)


def test_free_window_eigenvalues():
    h = math.pi / 64
    H = assemble(Box.cube(math.pi, 1), h=h)
    win = window_eigenpairs(H, 5.0)
    exact = dirichlet_eigenvalues(math.pi, h, 1)
    np.testing.assert_allclose(win.eigenvalues, exact[exact <= 5.0], atol=1e-10)
    np.testing.assert_allclose(win.eigenvalues, [1.0, 4.0], atol=5e-3)
    assert np.all(win.residuals <= 1e-8)


def test_empty_window_below_ground_state():
    H = assemble(Box.cube(math.pi, 1), h=math.pi / 32)
    win = window_eigenpairs(H, 0.5)
    assert len(win) == 0
    assert dynamical_moment(win, 1.0).sup == 0.0
    assert decay_moment_bound(win, 1.0, []) == 0.0
    with pytest.raises(ValidationError):
        sudec_check(win)


def test_window_arguments_rejected():
    H = assemble(Box.cube(4.0, 1))
    with pytest.raises(ValidationError):
        window_eigenpairs(H, 0.0)
    big = assemble(Box.cube(16.0, 2), h=0.125)
    with pytest.raises(SolverError):
        window_eigenpairs(big, 1.0)


@pytest.mark.parametrize("seed", range(4))
def test_window_count_matches_inertia(seed):
    H = _random_H(12.0, 3.0, seed)
    E0 = 1.7
    win = window_eigenpairs(H, E0)
    assert len(win) == inertia_count(H, E0) - inertia_count(H, 0.0)
    assert inertia_count(H, E0) == int(np.sum(np.linalg.eigvalsh(H.dense()) < E0))


def test_free_square_double_eigenvalue():
    H = assemble(Box.cube(math.pi, 2), h=math.pi / 16)
    win = window_eigenpairs(H, 6.0)
    hist = multiplicity_histogram(win)
    assert [c["multiplicity"] for c in hist] == [1, 2]
    assert sum(c["multiplicity"] for c in hist) == len(win)
    exact = dirichlet_eigenvalues(math.pi, math.pi / 16, 2)
    assert hist[1]["eigenvalue"] == pytest.approx(exact[1], abs=1e-10)
    assert exact[1] == pytest.approx(exact[2], abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_moment_at_zero_matches_projector(seed):
    win = window_eigenpairs(_random_H(seed=seed), 2.0)
    tr = dynamical_moment(win, 1.0)
    assert tr.times[0] == 0.0
    assert tr.values[0] == pytest.approx(moment_at_zero_direct(win, 1.0), rel=1e-8, abs=1e-14)


def test_single_eigenfunction_moment_is_constant():
    win = window_eigenpairs(assemble(Box.cube(math.pi, 1), h=math.pi / 32), 2.0)
    assert len(win) == 1
    tr = dynamical_moment(win, 1.0)
    np.testing.assert_allclose(tr.values, tr.values[0], rtol=1e-12)


def test_default_times_grid():
    t = default_times()
    assert len(t) == 64 and t[0] == 0 and t[-1] == pytest.approx(1e3)
    assert np.all(np.diff(t) > 0)


@pytest.mark.parametrize("seed", range(5))
def test_moment_never_exceeds_decay_bound(seed):
    # the envelope dominates every window norm, and the sum of HS norms dominates the HS norm
    m = measure_instance(_random_H(seed=seed), 2.0)
    if m.n_window and math.isfinite(m.moment_bound):
        assert m.moment.sup <= m.moment_bound * (1 + 1e-9) + 1e-12


def test_sudec_orientation_symmetric():
    grid = NodeGrid(Box.cube(12.0, 1), 0.125)
    x = grid.coords()[:, 0]
    psi, phi = np.exp(-np.abs(x - 2)), np.exp(-np.abs(x + 3))
    p = SudecParams()
    assert sudec_constant(psi, phi, grid, p) == pytest.approx(sudec_constant(phi, psi, grid, p), rel=1e-12)


def test_sudec_pairs_cover_each_cluster():
    win = window_eigenpairs(assemble(Box.cube(math.pi, 2), h=math.pi / 16), 6.0)
    rows = sudec_check(win, SudecParams(nu=1.5))
    # clusters of sizes 1 and 2 give 1 + 3 unordered pairs
    assert len(rows) == 4
    assert all(np.isfinite(r["C"]) and r["C"] >= 0 for r in rows)


@pytest.mark.parametrize("c", [2.0, 1e-3, -7.0])
def test_sudec_constant_scale_invariant(c):
    grid = NodeGrid(Box.cube(16.0, 1), 0.125)
    x = grid.coords()[:, 0]
    psi, phi = np.exp(-2 * np.abs(x - 5)), np.exp(-np.abs(x + 1))
    p = SudecParams()
    assert sudec_constant(c * psi, phi, grid, p) == pytest.approx(sudec_constant(psi, phi, grid, p), rel=1e-10)


def test_sudec_params_validated():
    with pytest.raises(ValidationError):
        SudecParams(tau=1.0).check(1)
    with pytest.raises(ValidationError):
        SudecParams(nu=0.9).check(2)
