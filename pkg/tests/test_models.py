import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochwave.models import (ModelError, ModelSpec, fhn, nagumo, smooth_cutoff,
                              smooth_cutoff_prime)


@pytest.mark.parametrize("noise", ["nagumo_paper", "proportional", "nagumo_quadratic"])
def test_nagumo_rest_states(noise):
    m = nagumo(0.3, noise=noise)
    for u in m.rest_states:
        assert np.max(np.abs(m.f(u))) <= 1e-12
        assert np.max(np.abs(m.g(u))) <= 1e-12
    m.check_noise_vanishes()


def test_fhn_rest_state_and_shapes():
    m = fhn()
    lo, hi = m.rest_states
    assert np.all(m.f(lo) == 0.0) and np.all(m.g(hi) == 0.0)
    U = np.random.default_rng(0).normal(size=(7, 2))
    assert m.f(U).shape == (7, 2) and m.df(U).shape == (7, 2, 2)
    assert m.n_components == 2 and m.diffusion.rho_array.tolist() == [1.0, 1.0]


@pytest.mark.parametrize("kw", [dict(a=0.0), dict(a=1.5), dict(rho=0.0), dict(noise="white"),
                                dict(kind="brusselator"), dict(noise="fhn_paper")])
def test_model_validation(kw):
    with pytest.raises(ModelError):
        ModelSpec(**kw)


def test_fhn_rejects_nagumo_noise():
    with pytest.raises(ModelError):
        ModelSpec("fhn", noise="nagumo_paper")


@pytest.mark.parametrize("model", [nagumo(0.3), nagumo(0.3, noise="nagumo_quadratic"), fhn()])
def test_jacobians_match_finite_differences(model):
    rng = np.random.default_rng(3)
    n = model.n_components
    U = rng.uniform(-0.5, 1.5, size=(20, n))
    h = 1e-6
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        fd_f = (model.f(U + e) - model.f(U - e)) / (2 * h)
        fd_g = (model.g(U + e) - model.g(U - e)) / (2 * h)
        assert np.allclose(model.df(U)[..., k], fd_f, atol=1e-7)
        assert np.allclose(model.dg(U)[..., k], fd_g, atol=1e-7)


def test_proportional_scale():
    m = nagumo(0.3, rho=2.0, noise="proportional", theta=0.7)
    assert m.g_scale == pytest.approx(0.7 / 2.0)


def test_cutoff_plateaus_and_smoothness():
    assert smooth_cutoff(np.array([0.0, 1.9, -2.0]))[...].tolist() == [1.0, 1.0, 1.0]
    assert smooth_cutoff(np.array([3.0, -4.0])).tolist() == [0.0, 0.0]
    h = 1e-5
    for u0 in (2.0, 3.0, -2.0, -3.0):
        lft = (smooth_cutoff(u0) - smooth_cutoff(u0 - h)) / h
        rgt = (smooth_cutoff(u0 + h) - smooth_cutoff(u0)) / h
        assert abs(lft - rgt) < 1e-6
    u = np.linspace(-3.5, 3.5, 1401)
    fd = np.gradient(smooth_cutoff(u), u)
    assert np.max(np.abs(fd - smooth_cutoff_prime(u))) < 1e-3


def test_K_g_bounds_derivative():
    m = nagumo(0.3, noise="nagumo_quadratic")
    u = np.random.default_rng(1).uniform(-3, 3, 500)
    assert np.max(np.abs(m.dg(u[:, None])[..., 0, 0])) <= m.K_g() + 1e-9


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.floats(0.01, 0.99))
def test_g_bounded_and_vanishes_off_range(u, a):
    m = nagumo(a)
    val = float(m.g(np.array([u]))[0])
    assert abs(val) <= 1.0 * 3 * 4 + 1e-12
    if abs(u) >= 3:
        assert val == 0.0
