import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracle_impl as oracle
from helpers import random_panel, with_y
from slopehom import (
    KappaGrid,
    PanelData,
    Variant,
    bias_hat,
    bias_hat_pred,
    build_path,
    residual_autocov,
    s_hat,
    s_hat_pred,
)
from slopehom.bias import autocov_table
from slopehom.errors import DegenerateDenominator, SingularGram, WindowTooSmall

KAPPAS = [0.6, 0.7, 0.8, 0.9, 1.0]
GRID = KappaGrid.from_points(KAPPAS)


def noiseless(seed=0, n=3, t=20, k=2):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, t, k))
    return PanelData(y=np.einsum("ntk,nk->nt", x, rng.normal(size=(n, k))), x=x)


def test_autocov_hand_example():
    x = np.arange(1.0, 11.0)
    r = np.random.default_rng(0).normal(size=10)
    r -= x * (x @ r) / (x @ x)
    r *= np.sqrt(4.5 / (r @ r))
    panel = PanelData(y=np.stack([2 * x + r, x]), x=np.stack([x, x]))
    assert residual_autocov(panel, 0, 1.0, 0) == pytest.approx(0.5, rel=1e-12)


def test_autocov_zero_for_exact_fit():
    panel = noiseless()
    for h in range(4):
        assert residual_autocov(panel, 1, 0.6, h) == pytest.approx(0.0, abs=1e-20)


def test_autocov_boundary_lag():
    panel = random_panel(1, n=2, t=10, k=1)
    residual_autocov(panel, 0, 1.0, 8)
    with pytest.raises(DegenerateDenominator):
        residual_autocov(panel, 0, 1.0, 9)  # h = floor(T kappa) - K
    icpt = random_panel(1, n=2, t=10, k=1, intercepts=True)
    with pytest.raises(DegenerateDenominator):
        residual_autocov(icpt, 0, 1.0, 8)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("intercepts", [False, True])
def test_autocov_matches_oracle(seed, intercepts):
    panel = random_panel(seed, n=3, t=20, k=2, intercepts=intercepts)
    for kappa in (0.6, 1.0):
        for h in range(3):
            want = oracle.xi(panel.y[1], panel.x[1], kappa, h, 2, intercepts)
            assert residual_autocov(panel, 1, kappa, h) == pytest.approx(want, rel=1e-10)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), kappa=st.sampled_from(KAPPAS))
def test_lag_zero_nonnegative(seed, kappa):
    panel = random_panel(seed, n=3, t=20, k=2)
    assert np.all(autocov_table(panel, kappa, 3)[:, 0] >= 0.0)


@pytest.mark.parametrize("b", [0, 3])
def test_bias_vanishes(b):
    panel = noiseless()
    assert bias_hat(panel, 0.7, b) == pytest.approx(0.0, abs=1e-20)
    assert bias_hat_pred(panel, 0.7, b) == pytest.approx(0.0, abs=1e-20)
    noisy = random_panel(2)
    if b == 0:
        assert bias_hat(noisy, 0.7, 0) == 0.0 and bias_hat_pred(noisy, 0.7, 0) == 0.0


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("b", [1, 2, 4])
@pytest.mark.parametrize("intercepts", [False, True])
def test_bias_matches_dense_trace(seed, b, intercepts):
    panel = random_panel(seed, n=3, t=20, k=2, intercepts=intercepts)
    y, x = np.asarray(panel.y), np.asarray(panel.x)
    for kappa in (0.6, 0.85, 1.0):
        want = oracle.bias_dense(y, x, kappa, b, 2, intercepts)
        assert bias_hat(panel, kappa, b) == pytest.approx(want, rel=1e-10)
        want = oracle.bias_dense(y, x, kappa, b, 1, intercepts)
        assert bias_hat_pred(panel, kappa, b) == pytest.approx(want, rel=1e-10)


def test_bias_degenerate_bandwidth():
    panel = random_panel(3, n=2, t=10, k=2)
    with pytest.raises(DegenerateDenominator):
        bias_hat(panel, 0.6, 5)  # lag 4 on a window of 6 leaves no dof


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), v=st.lists(st.floats(-3, 3), min_size=2, max_size=2),
       icpt=st.booleans())
def test_bias_slope_shift_invariant(seed, v, icpt):
    panel = random_panel(seed, n=3, t=20, k=2, intercepts=icpt)
    shifted = with_y(panel, panel.y + panel.x @ np.array(v))
    for kappa in (0.6, 1.0):
        assert abs(bias_hat(shifted, kappa, 2) - bias_hat(panel, kappa, 2)) <= 1e-10
        assert abs(bias_hat_pred(shifted, kappa, 2) - bias_hat_pred(panel, kappa, 2)) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(0.1, 10.0))
def test_autocov_scale_equivariance(seed, c):
    panel = random_panel(seed, n=3, t=20, k=2)
    beta = np.linalg.lstsq(panel.x[0], panel.y[0], rcond=None)[0]
    fit = panel.x[0] @ beta
    y = np.array(panel.y)
    y[0] = fit + c * (panel.y[0] - fit)
    scaled = with_y(panel, y)
    for h in range(3):
        assert residual_autocov(scaled, 0, 1.0, h) == pytest.approx(
            c * c * residual_autocov(panel, 0, 1.0, h), rel=1e-9, abs=1e-12)
        assert residual_autocov(scaled, 1, 1.0, h) == residual_autocov(panel, 1, 1.0, h)


def test_path_noiseless_homogeneous_is_zero():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 20, 2))
    panel = PanelData(y=np.einsum("ntk,k->nt", x, [1.0, 0.5]), x=x)
    for variant in Variant:
        path = build_path(panel, GRID, 2, variant)
        np.testing.assert_allclose(path.s_tilde, 0.0, atol=1e-20)


def test_path_single_point_grid():
    panel = random_panel(6, n=5, t=30)
    path = build_path(panel, KappaGrid(p=0.6, points=(1.0,)), 2)
    raw = bias_hat(panel, 1.0, 2)
    assert path.bias_raw[0] == pytest.approx(raw, rel=1e-14)
    n, t = panel.n_units, panel.n_periods
    # the correction in dispersion units is the raw estimate divided by sqrt(NT)
    assert path.s_tilde[0] == pytest.approx(s_hat(panel, 1.0) - raw / np.sqrt(n * t), rel=1e-12)


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("seed", range(3))
def test_path_matches_per_point_oracle(variant, seed):
    panel = random_panel(seed, n=4, t=25, k=2)
    y, x = np.asarray(panel.y), np.asarray(panel.x)
    n, t = panel.n_units, panel.n_periods
    path = build_path(panel, GRID, 2, variant)
    for j, kappa in enumerate(KAPPAS):
        length = oracle.floor_len(t, kappa)
        if variant is Variant.RawSlope:
            s = oracle.s_hat(y, x, kappa)
            b = oracle.bias_dense(y, x, kappa, 2, 2) / (kappa * np.sqrt(n * t))
        else:
            s = oracle.s_hat_pred(y, x, kappa)
            b = oracle.bias_dense(y, x, kappa, 2, 1) / (kappa * np.sqrt(t / n)) / (n * length)
        assert path.s_hat[j] == pytest.approx(s, rel=1e-10)
        assert path.bias[j] == pytest.approx(b, rel=1e-10)
        assert path.s_tilde[j] == path.s_hat[j] - path.bias[j]
        assert path.s_hat[j] >= 0.0


def test_path_determinism_and_dict():
    panel = random_panel(7)
    a, b = build_path(panel, GRID), build_path(panel, GRID)
    assert a.to_dict() == b.to_dict()
    assert a.to_dict()["kappa"] == KAPPAS


def test_path_errors_carry_kappa():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 20, 2))
    x[1, :12, 1] = x[1, :12, 0]  # collinear only inside the kappa=0.6 window
    panel = PanelData(y=rng.normal(size=(2, 20)), x=x)
    with pytest.raises(SingularGram) as info:
        build_path(panel, GRID)
    assert info.value.context["kappa"] == 0.6
    with pytest.raises(WindowTooSmall):
        build_path(random_panel(1, t=4, k=2), GRID)
