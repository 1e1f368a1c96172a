"""
Tests for the empirical risk measures.
"""

import numpy as np
import pytest

from voltrisk.risk import (
    EmptyLossesError,
    RiskError,
    TailTooSmallError,
    cvar,
    cvar_indicator,
    cvar_rockafellar,
    loss_histogram,
    max_abs_deviation,
    risk_report,
    rockafellar_objective,
    smoothed_cvar,
    smoothed_cvar_grad,
    var,
    voltage_risk,
    write_histogram_csv,
)

ONE_TO_TEN = np.arange(1.0, 11.0)


def test_var_order_statistic():
    """VaR is the ceil((1-alpha)K)-th smallest loss."""
    assert var(ONE_TO_TEN, 0.2) == 8.0
    assert var(ONE_TO_TEN, 0.5) == 5.0
    assert var(np.full(7, 3.5), 0.2) == 3.5
    assert var(ONE_TO_TEN, 1.0) == 1.0


def test_var_matches_rockafellar_minimizer():
    """The smallest minimizer of the Rockafellar objective is the VaR."""
    for alpha in (0.1, 0.2, 0.3, 0.5, 1.0):
        assert cvar_rockafellar(ONE_TO_TEN, alpha)[1] == var(ONE_TO_TEN, alpha)


def test_cvar_indicator():
    assert cvar_indicator(ONE_TO_TEN, 0.2) == pytest.approx(9.5, abs=1e-12)
    assert cvar_indicator(np.full(10, 2.0), 0.3) == pytest.approx(2.0, abs=1e-12)
    assert cvar_indicator(ONE_TO_TEN, 1.0) == pytest.approx(5.5, abs=1e-12)


def test_cvar_indicator_needs_a_full_sample():
    with pytest.raises(TailTooSmallError):
        cvar_indicator(ONE_TO_TEN, 0.05)


def test_cvar_rockafellar():
    value, beta = cvar_rockafellar(ONE_TO_TEN, 0.2)

    assert value == pytest.approx(9.5, abs=1e-12)
    assert beta == 8.0
    assert cvar_rockafellar([4.2], 0.3) == (pytest.approx(4.2), 4.2)


def test_cvar_rockafellar_is_the_minimum():
    """No candidate beta does better than the returned value."""
    rng = np.random.default_rng(0)
    losses = rng.exponential(size=37)
    value, beta = cvar_rockafellar(losses, 0.15)

    assert rockafellar_objective(losses, 0.15, beta) == pytest.approx(value, abs=1e-12)
    for candidate in np.linspace(losses.min() - 1.0, losses.max() + 1.0, 501):
        assert rockafellar_objective(losses, 0.15, candidate) >= value - 1e-12


def test_fractional_tail_uses_rockafellar():
    """alpha·K = 2.5 has no indicator form; the minimum still exists."""
    value = cvar_indicator(ONE_TO_TEN, 0.25)

    # beta = 8: 8 + (1 + 2) / 2.5
    assert value == pytest.approx(9.2, abs=1e-12)
    assert value == pytest.approx(cvar(ONE_TO_TEN, 0.25), abs=1e-12)


def test_empty_and_invalid_input():
    with pytest.raises(EmptyLossesError):
        var([], 0.2)
    with pytest.raises(EmptyLossesError):
        cvar_rockafellar([], 0.2)
    with pytest.raises(EmptyLossesError):
        voltage_risk(np.zeros((0, 3)), 0.2)
    with pytest.raises(RiskError):
        cvar(ONE_TO_TEN, 0.0)
    with pytest.raises(RiskError):
        cvar(ONE_TO_TEN, 1.5)
    with pytest.raises(RiskError):
        cvar([1.0, np.nan], 0.5)


def test_random_samples_properties():
    """CVaR bounds VaR and the mean, shrinks with alpha and is translation
    equivariant and positively homogeneous."""
    rng = np.random.default_rng(42)
    alphas = (0.1, 0.2, 0.5, 1.0)
    for _ in range(1000):
        k = int(rng.integers(1, 60))
        losses = rng.normal(size=k) * rng.uniform(0.1, 5.0)
        values = [cvar(losses, alpha) for alpha in alphas]

        for alpha, value in zip(alphas, values):
            assert value >= var(losses, alpha) - 1e-10
            assert value >= losses.mean() - 1e-10
            assert value <= losses.max() + 1e-10
            tail = alpha * k
            if tail >= 1.0 and abs(tail - round(tail)) < 1e-9:
                assert cvar_indicator(losses, alpha) == pytest.approx(value, abs=1e-12)
        assert all(a >= b - 1e-10 for a, b in zip(values, values[1:]))
        assert values[-1] == pytest.approx(losses.mean(), abs=1e-10)

        shift, scale = rng.normal(), rng.uniform(0.1, 10.0)
        assert cvar(losses + shift, 0.2) == pytest.approx(
            cvar(losses, 0.2) + shift, abs=1e-9
        )
        assert cvar(scale * losses, 0.2) == pytest.approx(
            scale * cvar(losses, 0.2), rel=1e-10, abs=1e-12
        )


def test_smoothed_cvar_approaches_exact():
    """The softplus objective bounds the hinge one and the gap closes with tau."""
    exact = rockafellar_objective(ONE_TO_TEN, 0.2, 9.0)
    assert exact == pytest.approx(9.5)

    gaps = []
    for tau in (1e-1, 1e-2, 1e-3):
        value = smoothed_cvar(ONE_TO_TEN, 0.2, 9.0, tau)
        assert value >= exact
        gaps.append(value - exact)
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3


def test_smoothed_cvar_dead_hinge():
    """Losses far below beta leave only beta."""
    assert smoothed_cvar(ONE_TO_TEN, 0.2, 100.0, 1e-2) == pytest.approx(100.0, abs=1e-12)
    result = smoothed_cvar_grad(ONE_TO_TEN, 0.2, 100.0, 1e-2)
    assert result.d_beta == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(result.d_losses, 0.0, atol=1e-12)


def test_smoothed_cvar_derivatives():
    """Analytic derivatives match central differences in beta and every loss."""
    rng = np.random.default_rng(7)
    losses = rng.uniform(0.0, 1.0, size=12)
    alpha, beta, tau, h = 0.25, 0.6, 0.05, 1e-6

    result = smoothed_cvar_grad(losses, alpha, beta, tau)

    numeric = (
        smoothed_cvar(losses, alpha, beta + h, tau)
        - smoothed_cvar(losses, alpha, beta - h, tau)
    ) / (2 * h)
    assert result.d_beta == pytest.approx(numeric, rel=1e-6, abs=1e-8)
    for k in range(losses.size):
        step = np.zeros_like(losses)
        step[k] = h
        numeric = (
            smoothed_cvar(losses + step, alpha, beta, tau)
            - smoothed_cvar(losses - step, alpha, beta, tau)
        ) / (2 * h)
        assert result.d_losses[k] == pytest.approx(numeric, rel=1e-5, abs=1e-9)


def test_smoothed_cvar_does_not_overflow():
    value = smoothed_cvar([1e6, -1e6], 0.5, 0.0, 1e-3)

    assert np.isfinite(value)
    assert value == pytest.approx(1e6)


def test_smoothed_cvar_rejects_bad_tau():
    with pytest.raises(RiskError):
        smoothed_cvar(ONE_TO_TEN, 0.2, 0.0, 0.0)


def test_voltage_risk():
    zero = voltage_risk(np.zeros((4, 3)), 0.5)
    assert zero.var == zero.cvar == zero.mean == 0.0

    np.testing.assert_allclose(max_abs_deviation(np.array([0.03, -0.06])), [0.06])

    samples = np.array([[0.01, 0.0], [0.0, -0.02], [0.03, 0.0], [-0.04, 0.01], [0.05, 0.0]])
    report = voltage_risk(samples, 0.4)
    assert report.cvar == pytest.approx(0.045, abs=1e-12)
    assert report.max == pytest.approx(0.05)
    assert report.n_samples == 5


def test_risk_report_ordering():
    report = risk_report(ONE_TO_TEN, 0.2)

    assert report.var == 8.0
    assert report.cvar == pytest.approx(9.5)
    assert report.mean == pytest.approx(5.5)
    assert report.max == 10.0
    assert report.max >= report.cvar >= report.var
    assert report.cvar >= report.mean
    assert risk_report(ONE_TO_TEN, 1.0).cvar == pytest.approx(report.mean, abs=1e-12)


def test_histogram_csv(tmp_path):
    histogram = loss_histogram(ONE_TO_TEN, bins=5)
    path = write_histogram_csv(histogram, tmp_path / "hist.csv")

    lines = path.read_text().strip().splitlines()
    assert lines[0] == "bin_left,bin_right,count"
    assert len(lines) == 6
    assert histogram.counts.sum() == 10
