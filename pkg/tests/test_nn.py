"""
Tests for the shared policy network and its losses.
"""

import json

import numpy as np
import pytest
from pydantic import ValidationError

from voltrisk.feeder import SensitivityPair, build_sensitivities
from voltrisk.nn import (
    FeatureSet,
    InvalidModeError,
    LossConfig,
    LossMode,
    PolicyError,
    PolicyParams,
    SampleBatch,
    ShapeMismatchError,
    batch_cvar,
    build_features,
    combined_loss_grad,
    cvar_q_loss_grad,
    cvar_v_loss_grad,
    feature_stats,
    forward,
    forward_trace,
    init_policy,
    initial_betas,
    load_policy,
    make_batch,
    mse_loss_grad,
    parse_mode,
    predict_all,
    prediction_errors,
    predicted_voltages,
    save_policy,
    smooth_voltage_losses,
)
from voltrisk.risk import TailTooSmallError, cvar_rockafellar
from tests.conftest import random_conditions


@pytest.fixture
def setup(random_feeder, linear_dataset):
    """A six-bus feeder with three inverters, a 10-sample batch and a policy."""
    model = random_feeder(3, 6, n_der=3)
    s = build_sensitivities(model)
    dataset = linear_dataset(model, n_samples=10, seed=4)
    batch = make_batch(dataset.samples, model, s)
    mean, std = feature_stats(batch.features)
    params = init_policy(hidden=(6,), seed=1, feat_mean=mean, feat_std=std)
    return model, s, batch, params


def _numeric_grad(loss, params, h=1e-6):
    """Central differences of loss(params) over the flat parameter vector."""
    phi = params.to_vector()
    grad = np.zeros_like(phi)
    for i in range(phi.size):
        step = np.zeros_like(phi)
        step[i] = h
        grad[i] = (
            loss(params.with_vector(phi + step)) - loss(params.with_vector(phi - step))
        ) / (2 * h)
    return grad


def _identity_policy(weights, bias):
    """Single affine layer on local features with identity standardization."""
    return PolicyParams(
        widths=(3, 1),
        weights=[np.array([weights], dtype=float)],
        biases=[np.array([bias], dtype=float)],
        feat_mean=np.zeros(3),
        feat_std=np.ones(3),
        feature_set=FeatureSet.LOCAL,
    )


def test_zero_weights_give_zero():
    params = init_policy(seed=0)
    params = params.with_vector(np.zeros(params.n_params))

    outputs = forward(params, np.random.default_rng(0).normal(size=(7, 4, 5)))

    np.testing.assert_array_equal(outputs, np.zeros((7, 4)))


def test_single_layer_passthrough():
    """W = [1, 0, 0] returns the node's own PV output."""
    params = _identity_policy([1.0, 0.0, 0.0], 0.0)
    features = np.array([[0.3, 0.1, 0.2], [0.7, 0.4, 0.0]])

    np.testing.assert_allclose(forward(params, features), [0.3, 0.7])


def test_forward_matches_layer_recursion():
    """Vectorized forward equals the row-by-row layer recursion."""
    rng = np.random.default_rng(5)
    params = init_policy(
        hidden=(8, 4),
        seed=2,
        feat_mean=rng.normal(size=5),
        feat_std=rng.uniform(0.5, 2.0, size=5),
    )
    features = rng.normal(size=(6, 3, 5))

    outputs = forward(params, features)

    for k in range(6):
        for n in range(3):
            a = (features[k, n] - params.feat_mean) / params.feat_std
            for t, (w, b) in enumerate(zip(params.weights, params.biases)):
                a = w @ a + b
                if t < params.n_layers - 1:
                    a = np.maximum(a, 0.0)
            assert outputs[k, n] == pytest.approx(a[0], abs=1e-12)


def test_forward_clamps_to_limit():
    params = _identity_policy([0.0, 0.0, 0.0], 5.0)

    outputs = forward(params, np.zeros((2, 3)), q_limit=np.array([0.1, 0.4]))

    np.testing.assert_allclose(outputs, [0.1, 0.4])


def test_weights_are_shared_across_nodes():
    """Nodes with identical features get identical outputs, and permuting
    node features permutes the outputs."""
    rng = np.random.default_rng(1)
    params = init_policy(hidden=(5,), seed=3)
    row = rng.normal(size=5)
    features = rng.normal(size=(4, 5))
    features[2] = row
    features[3] = row

    outputs = forward(params, features)
    permuted = forward(params, features[[3, 0, 2, 1]])

    assert outputs[2] == pytest.approx(outputs[3], abs=1e-15)
    np.testing.assert_allclose(permuted, outputs[[3, 0, 2, 1]])


def test_build_features():
    p_gen = np.array([0.5, 0.0, 0.2])
    p_load = np.array([0.1, 0.3, 0.4])
    q_load = np.array([0.05, 0.1, 0.2])
    der = np.array([0, 2])

    broadcast = build_features(p_gen, p_load, q_load, der)
    local = build_features(p_gen, p_load, q_load, der, FeatureSet.LOCAL)

    np.testing.assert_allclose(broadcast[0], [0.5, 0.1, 0.05, 0.1, 0.35])
    np.testing.assert_allclose(broadcast[1], [0.2, 0.4, 0.2, 0.1, 0.35])
    np.testing.assert_allclose(local, broadcast[:, :3])


def test_predict_all(two_bus, random_feeder):
    """Non-DER buses stay at zero and clamping uses the reactive limits."""
    params = _identity_policy([0.0, 0.0, 0.0], 5.0)
    (oc,) = random_conditions(two_bus, 1, seed=0, scale=0.1)

    np.testing.assert_allclose(predict_all(params, oc, two_bus), [5.0])
    np.testing.assert_allclose(predict_all(params, oc, two_bus, clamp=True), [0.1])

    model = random_feeder(2, 4, n_der=0)
    (oc,) = random_conditions(model, 1, seed=1)
    np.testing.assert_array_equal(predict_all(init_policy(), oc, model), np.zeros(4))


def test_feature_stats():
    features = np.zeros((4, 2, 3))
    features[..., 0] = np.arange(8).reshape(4, 2)
    features[..., 1] = 2.5

    mean, std = feature_stats(features)

    assert mean[0] == pytest.approx(3.5)
    assert mean[1] == 2.5
    assert std[1] == 1.0
    assert std[2] == 1.0


def test_policy_shape_checks():
    with pytest.raises(ShapeMismatchError):
        PolicyParams(
            widths=(3, 1),
            weights=[np.zeros((1, 3))],
            biases=[np.zeros(1)],
            feat_mean=np.zeros(3),
            feat_std=np.ones(3),
        )
    with pytest.raises(ShapeMismatchError):
        forward(init_policy(), np.zeros((2, 3)))
    with pytest.raises(ShapeMismatchError):
        init_policy().with_vector(np.zeros(3))


def test_save_and_load_policy(tmp_path):
    params = init_policy(hidden=(4,), seed=7).with_betas(0.2, None)
    params.metadata["feeder_hash"] = "abc"

    path = save_policy(params, tmp_path / "model.json")
    loaded = load_policy(path)

    np.testing.assert_array_equal(loaded.to_vector(), params.to_vector())
    assert loaded.widths == (5, 4, 1)
    assert loaded.beta_q == 0.2
    assert loaded.beta_v is None
    assert loaded.metadata == {"feeder_hash": "abc"}


def test_load_policy_errors(tmp_path):
    with pytest.raises(PolicyError):
        load_policy(tmp_path / "missing.json")

    other = tmp_path / "other.json"
    other.write_text(json.dumps({"kind": "feeder"}))
    with pytest.raises(PolicyError):
        load_policy(other)


def test_parse_mode():
    assert parse_mode("mse") is LossMode.MSE
    assert parse_mode("CVaR(qg)") is LossMode.CVAR_Q
    assert parse_mode("MSE + CVaR(qg, dv)") is LossMode.CVAR_QV
    assert parse_mode(LossMode.CVAR_Q) is LossMode.CVAR_Q
    with pytest.raises(InvalidModeError):
        parse_mode("huber")
    with pytest.raises(ValidationError):
        LossConfig(mode="huber")
    with pytest.raises(InvalidModeError):
        init_policy(feature_set="global")


def test_mse_gradient(setup):
    _, _, batch, params = setup

    result = mse_loss_grad(params, batch)
    numeric = _numeric_grad(lambda p: mse_loss_grad(p, batch).loss, params)

    assert result.loss == pytest.approx(np.mean(prediction_errors(params, batch)))
    np.testing.assert_allclose(result.grads, numeric, rtol=1e-4, atol=1e-7)


def test_cvar_q_gradient(setup):
    _, _, batch, params = setup
    params = params.with_betas(float(np.median(prediction_errors(params, batch))), None)

    result = cvar_q_loss_grad(params, batch, 0.2, 0.1)
    numeric = _numeric_grad(lambda p: cvar_q_loss_grad(p, batch, 0.2, 0.1).loss, params)

    np.testing.assert_allclose(result.grads, numeric, rtol=1e-4, atol=1e-7)

    h = 1e-6
    numeric_beta = (
        cvar_q_loss_grad(params.with_betas(params.beta_q + h, None), batch, 0.2, 0.1).loss
        - cvar_q_loss_grad(params.with_betas(params.beta_q - h, None), batch, 0.2, 0.1).loss
    ) / (2 * h)
    assert result.grad_beta == pytest.approx(numeric_beta, rel=1e-5, abs=1e-8)


def test_cvar_v_gradient(setup):
    """The voltage term reaches the shared weights through X."""
    _, s, batch, params = setup
    v = predicted_voltages(params, batch, s)
    beta_v = float(np.median(smooth_voltage_losses(v, 0.01)))
    params = params.with_betas(None, beta_v)

    def loss(p):
        return cvar_v_loss_grad(p, batch, s, 0.2, 0.01, voltage_tau=0.01).loss

    result = cvar_v_loss_grad(params, batch, s, 0.2, 0.01, voltage_tau=0.01)

    np.testing.assert_allclose(result.grads, _numeric_grad(loss, params), rtol=1e-4, atol=1e-7)

    h = 1e-7
    numeric_beta = (
        loss(params.with_betas(None, beta_v + h)) - loss(params.with_betas(None, beta_v - h))
    ) / (2 * h)
    assert result.grad_beta == pytest.approx(numeric_beta, rel=1e-5, abs=1e-8)


def test_combined_gradient(setup):
    _, s, batch, params = setup
    params = initial_betas(params, batch, LossConfig(mode="cvar_qv"), s)
    cfg = LossConfig(mode="cvar_qv", alpha=0.2, lambda_q=0.7, lambda_v=3.0, tau=0.05)

    result = combined_loss_grad(params, batch, cfg, s)
    numeric = _numeric_grad(lambda p: combined_loss_grad(p, batch, cfg, s).loss, params)

    np.testing.assert_allclose(result.grads, numeric, rtol=1e-4, atol=1e-7)
    assert set(result.components) == {"mse", "cvar_q", "cvar_v"}


def test_zero_weights_reduce_to_mse(setup):
    _, s, batch, params = setup
    cfg = LossConfig(mode="cvar_qv", lambda_q=0.0, lambda_v=0.0)

    combined = combined_loss_grad(initial_betas(params, batch, cfg, s), batch, cfg, s)
    mse = mse_loss_grad(params, batch)

    assert combined.loss == pytest.approx(mse.loss, abs=1e-15)
    np.testing.assert_allclose(combined.grads, mse.grads, atol=1e-15)
    assert combined.grad_beta_q == 0.0
    assert combined.grad_beta_v == 0.0


def test_perfect_predictor(chain3, linear_dataset):
    """A policy equal to the labelling rule has zero loss and gradient."""
    s = build_sensitivities(chain3)
    batch = make_batch(linear_dataset(chain3).samples, chain3, s, FeatureSet.LOCAL)
    params = _identity_policy([0.3, -0.2, 0.5], 0.01)

    result = mse_loss_grad(params, batch)

    assert result.loss == pytest.approx(0.0, abs=1e-25)
    np.testing.assert_allclose(result.grads, 0.0, atol=1e-13)


def test_voltage_term_without_reactance(setup):
    """With X = 0 the dispatch cannot move voltages, so φ gets no gradient."""
    _, s, batch, params = setup
    flat = SensitivityPair(R=s.R, X=np.zeros_like(s.X), bus_order=s.bus_order)
    params = params.with_betas(None, 0.01)

    result = cvar_v_loss_grad(params, batch, flat, 0.2, 0.01)

    np.testing.assert_array_equal(result.grads, np.zeros(params.n_params))


def test_cvar_terms_need_a_tail(setup):
    _, s, batch, params = setup

    with pytest.raises(TailTooSmallError):
        cvar_q_loss_grad(params, batch.take(np.arange(1)), 0.5, 0.1)
    with pytest.raises(TailTooSmallError):
        cvar_q_loss_grad(params, batch.take(np.arange(4)), 0.2, 0.1)
    with pytest.raises(PolicyError):
        combined_loss_grad(params, batch, LossConfig(mode="cvar_qv"))


def test_batch_cvar(setup):
    """The gate statistic is the exact CVaR of the active terms."""
    _, s, batch, params = setup
    errors = prediction_errors(params, batch)
    v = predicted_voltages(params, batch, s)
    voltage = smooth_voltage_losses(v, 0.01)

    mse_gate = batch_cvar(params, batch, LossConfig(mode="mse"), s)
    qv_gate = batch_cvar(params, batch, LossConfig(mode="cvar_qv"), s)

    assert mse_gate == pytest.approx(cvar_rockafellar(errors, 0.2)[0])
    assert qv_gate == pytest.approx(
        cvar_rockafellar(errors, 0.2)[0] + cvar_rockafellar(voltage, 0.2)[0]
    )


def test_initial_betas(setup):
    _, s, batch, params = setup

    mse = initial_betas(params, batch, LossConfig(mode="mse"), s)
    both = initial_betas(params, batch, LossConfig(mode="cvar_qv"), s)

    assert mse.beta_q is None and mse.beta_v is None
    assert both.beta_q == pytest.approx(np.mean(prediction_errors(params, batch)))
    assert both.beta_v is not None
    # Already set values are kept
    kept = initial_betas(both.with_betas(1.5, 2.5), batch, LossConfig(mode="cvar_qv"), s)
    assert kept.beta_q == 1.5


@pytest.mark.parametrize("mode", ["mse", "cvar_q", "cvar_qv"])
def test_losses_ignore_inverter_order(setup, mode):
    """Relabelling the inverters changes neither the loss, its gradient nor
    the batch CVaR."""
    _, s, batch, params = setup
    cfg = LossConfig(mode=mode, alpha=0.2, lambda_q=0.7, lambda_v=3.0, tau=0.05)
    params = initial_betas(params, batch, cfg, s)
    order = np.array([2, 0, 1])
    shuffled = SampleBatch(
        features=batch.features[:, order],
        targets=batch.targets[:, order],
        h=batch.h,
        q_limits=batch.q_limits[:, order],
        der=batch.der[order],
    )

    expected = combined_loss_grad(params, batch, cfg, s)
    result = combined_loss_grad(params, shuffled, cfg, s)

    assert result.loss == pytest.approx(expected.loss, rel=1e-12)
    np.testing.assert_allclose(result.grads, expected.grads, rtol=1e-10, atol=1e-14)
    assert result.grad_beta_q == pytest.approx(expected.grad_beta_q, rel=1e-10, abs=1e-14)
    assert result.grad_beta_v == pytest.approx(expected.grad_beta_v, rel=1e-10, abs=1e-14)
    assert batch_cvar(params, shuffled, cfg, s) == pytest.approx(
        batch_cvar(params, batch, cfg, s), rel=1e-12
    )


def _relative_error(analytic, numeric, floor=1e-12):
    analytic, numeric = np.atleast_1d(analytic), np.atleast_1d(numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


def _offset_away_from_kinks(params, batch, s, rng, margin=1e-4):
    """
    Randomly perturb φ until no hidden pre-activation and no voltage the
    dispatch can move lies within margin of 0.
    """
    phi = params.to_vector()
    moving = np.any(s.X[:, batch.der] != 0.0, axis=1)
    while True:
        candidate = params.with_vector(phi + rng.normal(scale=0.1, size=phi.size))
        outputs, cache = forward_trace(candidate, batch.features)
        v = outputs @ s.X[:, batch.der].T + batch.h
        kinks = [np.abs(z) for z in cache.pre_activations[:-1]] + [np.abs(v[:, moving])]
        if all(np.min(values) > margin for values in kinks):
            return candidate


@pytest.mark.parametrize("case", range(50))
@pytest.mark.parametrize("mode", ["mse", "cvar_q", "cvar_qv"])
def test_random_gradients_match_finite_differences(
    random_feeder, linear_dataset, mode, case
):
    """Analytic φ and β derivatives of the combined loss on random nets,
    feeders and batches agree with central differences."""
    rng = np.random.default_rng([17, case])
    n_buses = int(rng.integers(3, 9))
    model = random_feeder(200 + case, n_buses, n_der=int(rng.integers(2, 4)))
    s = build_sensitivities(model)
    dataset = linear_dataset(model, n_samples=int(rng.integers(10, 21)), seed=case)
    batch = make_batch(dataset.samples, model, s)
    mean, std = feature_stats(batch.features)
    hidden = tuple(int(width) for width in rng.integers(2, 7, size=int(rng.integers(1, 3))))
    params = init_policy(hidden=hidden, seed=case, feat_mean=mean, feat_std=std)
    params = _offset_away_from_kinks(params, batch, s, rng)
    cfg = LossConfig(
        mode=mode,
        alpha=0.2,
        lambda_q=float(rng.uniform(0.5, 2.0)),
        lambda_v=float(rng.uniform(0.5, 5.0)),
        tau=0.05,
        voltage_tau=0.01,
    )
    params = initial_betas(params, batch, cfg, s)

    def loss(p):
        return combined_loss_grad(p, batch, cfg, s).loss

    result = combined_loss_grad(params, batch, cfg, s)

    assert _relative_error(result.grads, _numeric_grad(loss, params)) < 1e-5

    h = 1e-6
    if LossMode(mode).uses_q:
        beta = params.beta_q
        numeric = (
            loss(params.with_betas(beta + h, params.beta_v))
            - loss(params.with_betas(beta - h, params.beta_v))
        ) / (2 * h)
        assert _relative_error(result.grad_beta_q, numeric, floor=cfg.lambda_q) < 1e-5
    else:
        assert result.grad_beta_q == 0.0
    if LossMode(mode).uses_v:
        beta = params.beta_v
        numeric = (
            loss(params.with_betas(params.beta_q, beta + h))
            - loss(params.with_betas(params.beta_q, beta - h))
        ) / (2 * h)
        assert _relative_error(result.grad_beta_v, numeric, floor=cfg.lambda_v) < 1e-5
    else:
        assert result.grad_beta_v == 0.0
