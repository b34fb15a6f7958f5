import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collapse_scope.data import Dataset
from collapse_scope.errors import NonFiniteLoss, ShapeError, ValidationError
from collapse_scope.model import (
    ARRAY_FIELDS,
    VaeParams,
    evaluate,
    expected_loss,
    loss_gradients,
    observable_arrays,
    posterior_observables,
    reconstruct_truncated,
    rescale_latents,
)

from oracles import brute_loss, central_difference, one_mode_optimum, random_instance


def one_mode_params(lam, beta):
    a, s2, w = one_mode_optimum(lam, beta)
    return VaeParams([[a]], [0.0], [[0.0]], [np.log(s2)], [[w]], [0.0])


def one_mode_data(lam, n=2):
    # two symmetric points give exact population variance lam
    return Dataset(np.array([[-1.0], [1.0]]) * np.sqrt(lam))


# --- params ---


def test_params_validation():
    with pytest.raises(ShapeError):
        VaeParams(np.zeros((2, 3)), np.zeros(2), np.zeros((2, 3)), np.zeros(2), np.zeros((3, 1)), np.zeros(3))
    with pytest.raises(ValidationError):
        VaeParams.collapsed(2, 2, dec_var=0.0)
    with pytest.raises(ValidationError):
        VaeParams([[np.nan]], [0], [[0]], [0], [[0]], [0])


def test_params_json_roundtrip(tmp_path):
    p, _, _ = random_instance(np.random.default_rng(0), d=3, m=2)
    text = p.to_json()
    doc = json.loads(text)
    assert doc["dec"]["shape"] == [3, 2]
    assert len(doc["dec"]["data"]) == 6
    q = VaeParams.from_json(text)
    for name in ARRAY_FIELDS:
        np.testing.assert_array_equal(getattr(p, name), getattr(q, name))
    p.to_json(tmp_path / "p.json")
    assert VaeParams.load(tmp_path / "p.json").to_json() == text


# --- loss ---


def test_loss_matches_per_sample_oracle():
    rng = np.random.default_rng(42)
    for _ in range(30):
        p, x, beta = random_instance(rng)
        loss = expected_loss(p, x, beta)
        d, r, sq = brute_loss(p, x, beta)
        assert loss.distortion_nats == pytest.approx(d, rel=1e-12)
        assert loss.rate_nats == pytest.approx(r, rel=1e-12, abs=1e-14)
        assert loss.distortion_normalized == pytest.approx(sq / Dataset(x).total_variance, rel=1e-12)
        assert loss.total == pytest.approx(d + beta * r, rel=1e-12)
        assert loss.temperature == pytest.approx(beta * p.dec_var / Dataset(x).total_variance, rel=1e-12)


def test_collapsed_params_unit_distortion():
    x = np.random.default_rng(3).normal(size=(100, 4)) * [1, 2, 3, 4]
    ds = Dataset(x)
    p = VaeParams.collapsed(4, 6, data_mean=ds.mean)
    loss = expected_loss(p, ds, beta=0.7)
    assert loss.distortion_normalized == pytest.approx(1.0, rel=1e-12)
    assert loss.rate_nats == pytest.approx(0.0, abs=1e-15)


def test_identity_reconstruction():
    x = np.random.default_rng(4).normal(size=(50, 3))
    ds = Dataset(x)
    m = 3
    p = VaeParams(np.eye(m), np.zeros(m), np.zeros((m, m)), np.full(m, -20.0), np.eye(m), np.zeros(m))
    loss = expected_loss(p, ds, beta=0.0)
    assert loss.distortion_normalized == pytest.approx(np.exp(-20) * m / ds.total_variance, rel=1e-9)


def test_one_mode_canonical_distortion():
    lam, beta = 1.0, 0.5
    loss = expected_loss(one_mode_params(lam, beta), one_mode_data(lam), beta)
    d0 = lam / 2
    assert loss.distortion_nats / d0 == pytest.approx(0.5, rel=1e-12)


def test_nonfinite_loss():
    p = VaeParams([[0.0]], [0.0], [[0.0]], [0.0], [[1e200]], [0.0])
    with pytest.raises(NonFiniteLoss):
        expected_loss(p, np.array([[1.0], [2.0]]), 1.0)


def test_shape_and_beta_errors():
    p = VaeParams.collapsed(2, 1)
    with pytest.raises(ShapeError):
        expected_loss(p, np.zeros((3, 3)), 1.0)
    with pytest.raises(ValidationError):
        expected_loss(p, np.zeros((3, 2)) + np.arange(3)[:, None], -1.0)


# --- gradients ---


def _fd_check(p, x, beta):
    g = loss_gradients(p, x, beta)

    def f(arrs):
        return expected_loss(p.replace(**arrs), x, beta).total

    fd = central_difference(f, p.arrays(), h=1e-5)
    worst = 0.0
    for name in ARRAY_FIELDS:
        tol = np.maximum(1e-6 * np.abs(g[name]), 1e-9)
        worst = max(worst, float(np.max(np.abs(g[name] - fd[name]) / tol)))
    return worst


def test_gradients_fd_randomized():
    rng = np.random.default_rng(7)
    for i in range(20):
        p, x, beta = random_instance(rng, logvar_shift=-35.0 if i % 5 == 0 else 0.0)
        assert _fd_check(p, x, beta) <= 1.0


def test_gradient_zero_latent_row():
    rng = np.random.default_rng(8)
    p, x, beta = random_instance(rng, d=3, m=3)
    p = p.replace(
        enc_mean=np.vstack([p.enc_mean[:2], np.zeros(3)]),
        enc_mean_bias=np.r_[p.enc_mean_bias[:2], 0.0],
        enc_logvar=np.vstack([p.enc_logvar[:2], np.zeros(3)]),
        enc_logvar_bias=np.r_[p.enc_logvar_bias[:2], 0.0],
        dec=np.column_stack([p.dec[:, :2], np.zeros(3)]),
    )
    g = loss_gradients(p, x, beta)
    assert g["enc_logvar_bias"][2] == pytest.approx(0.0, abs=1e-14)


def test_dec_bias_stationary_at_mean_residual():
    rng = np.random.default_rng(9)
    p, x, beta = random_instance(rng, d=3, m=2, n=6)
    mu = x @ p.enc_mean.T + p.enc_mean_bias
    c = x.mean(axis=0) - p.dec @ mu.mean(axis=0)
    g = loss_gradients(p.replace(dec_bias=c), x, beta)
    np.testing.assert_allclose(g["dec_bias"], 0.0, atol=1e-13)


def test_evaluate_returns_both():
    rng = np.random.default_rng(10)
    p, x, beta = random_instance(rng)
    loss, g = evaluate(p, x, beta)
    assert loss.total == expected_loss(p, x, beta).total
    assert set(g) == set(ARRAY_FIELDS)


# --- observables ---


def _check_identities(p, x):
    obs = posterior_observables(p, x)
    arr = observable_arrays(p, x)
    for o in obs:
        assert 0.0 <= o.signal_fraction <= 1.0
        assert o.signal_fraction == pytest.approx(o.mu_sq / (o.mu_sq + o.var_mean), rel=1e-12)
        assert o.jensen_gap >= -1e-12
        assert o.rate_k == pytest.approx(-0.5 * o.logvar_mean + 0.5 * (o.scale - 1.0), abs=1e-10)
    loss = expected_loss(p, x, 1.0)
    assert loss.rate_nats == pytest.approx(arr["rate_k"].sum(), abs=1e-10)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=100)
def test_observable_identities(seed):
    p, x, _ = random_instance(np.random.default_rng(seed))
    _check_identities(p, x)


def test_collapsed_observables():
    x = np.random.default_rng(0).normal(size=(10, 2))
    for o in posterior_observables(VaeParams.collapsed(2, 3), x):
        assert (o.signal_fraction, o.scale, o.jensen_gap, o.rate_k) == (0.0, 1.0, 0.0, 0.0)


def test_canonical_branch_observables():
    tau = 0.25
    o = posterior_observables(one_mode_params(1.0, tau), one_mode_data(1.0))[0]
    assert o.signal_fraction == pytest.approx(0.75, rel=1e-12)
    assert o.var_mean == pytest.approx(0.25, rel=1e-12)
    assert o.scale == pytest.approx(1.0, rel=1e-12)
    assert o.rate_k == pytest.approx(0.5 * np.log(4), rel=1e-12)


def test_jensen_gap_positive_for_heteroscedastic_encoder():
    x = np.array([[-1.0], [1.0]])
    p = VaeParams([[1.0]], [0.0], [[0.8]], [0.0], [[1.0]], [0.0])
    o = posterior_observables(p, x)[0]
    # two posterior variances e^-0.8 and e^0.8; direct computation
    expected = np.log(np.cosh(0.8))
    assert o.jensen_gap == pytest.approx(expected, rel=1e-12)
    assert o.jensen_gap > 0


# --- rescaling ---


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=50)
def test_latent_rescaling_invariance(seed):
    rng = np.random.default_rng(seed)
    p, x, beta = random_instance(rng)
    s = np.exp(rng.uniform(-2, 2, p.latent_dim))
    q = rescale_latents(p, s)
    a, b = expected_loss(p, x, beta), expected_loss(q, x, beta)
    assert b.distortion_nats == pytest.approx(a.distortion_nats, rel=1e-10)
    ma = observable_arrays(p, x)["signal_fraction"]
    mb = observable_arrays(q, x)["signal_fraction"]
    np.testing.assert_allclose(mb, ma, atol=1e-10)


# --- truncation ---


def test_truncated_keep_all_near_perfect():
    x = np.random.default_rng(0).normal(size=(30, 3))
    p = VaeParams(np.eye(3), np.zeros(3), np.zeros((3, 3)), np.zeros(3), np.eye(3), np.zeros(3))
    assert reconstruct_truncated(p, x, [0, 1, 2]) == pytest.approx(0.0, abs=1e-28)


def test_truncated_keep_none_is_unit():
    x = np.random.default_rng(1).normal(size=(30, 3)) + 5
    p, _, _ = random_instance(np.random.default_rng(2), d=3, m=2)
    p = p.replace(dec_bias=x.mean(axis=0))
    assert reconstruct_truncated(p, x, []) == pytest.approx(1.0, rel=1e-12)


def test_truncated_index_error():
    p = VaeParams.collapsed(2, 2)
    with pytest.raises(IndexError):
        reconstruct_truncated(p, np.zeros((3, 2)) + np.arange(3)[:, None], [2])


def test_truncated_matches_direct():
    rng = np.random.default_rng(5)
    p, x, _ = random_instance(rng, d=3, m=4, n=7)
    keep = [1, 3]
    z = np.zeros((len(x), 4))
    z[:, keep] = (x @ p.enc_mean.T + p.enc_mean_bias)[:, keep]
    err = x - z @ p.dec.T - p.dec_bias
    expected = np.mean(np.sum(err**2, axis=1)) / Dataset(x).total_variance
    assert reconstruct_truncated(p, x, keep) == pytest.approx(expected, rel=1e-12)
