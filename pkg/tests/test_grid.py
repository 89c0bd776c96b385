import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochwave.grid import (DiffusionSpec, GridError, GridFn, GridSpec, apply_diffusion,
                            derivative, inner_product_L2, norm_H1, norm_L2, shift, sup_norm,
                            trapezoid_weights)

PI_SPEC = GridSpec(np.pi, 2 * np.pi / 6284)  # dx ~ 1e-3 dividing 2*pi exactly


def test_spec_counts():
    s = GridSpec(10.0, 0.5, 2)
    assert s.n_points == 41
    assert abs((s.n_points - 1) * s.dx - 2 * s.half_width) < 1e-9 * 2 * s.half_width
    assert s.xi[0] == -10.0 and s.xi[-1] == 10.0


@pytest.mark.parametrize("args", [(0.0, 0.1), (1.0, -0.1), (1.0, 0.3), (1.0, 0.1, 0), (0.1, 0.1)])
def test_spec_rejects_bad_input(args):
    with pytest.raises(GridError):
        GridSpec(*args)


def test_gridfn_rejects_nan_and_bad_shape():
    s = GridSpec(1.0, 0.1)
    with pytest.raises(GridError):
        GridFn(s, np.full(s.n_points, np.nan))
    with pytest.raises(GridError):
        GridFn(s, np.zeros(s.n_points + 1))


def test_inner_product_constant():
    s = GridSpec(10.0, 0.1)
    one = GridFn(s, np.ones(s.n_points))
    assert inner_product_L2(one, one) == pytest.approx(20.0, abs=1e-12)


def test_inner_product_sin_cos_odd():
    s = PI_SPEC
    u, v = s.from_callable(np.sin), s.from_callable(np.cos)
    assert abs(inner_product_L2(u, v)) <= 1e-10


def test_inner_product_grid_mismatch():
    a, b = GridSpec(1.0, 0.1), GridSpec(1.0, 0.05)
    with pytest.raises(GridError):
        inner_product_L2(a.zeros(), b.zeros())


def test_trapezoid_gaussian_oracle():
    s = GridSpec(10.0, 0.05)
    u = s.from_callable(lambda x: np.exp(-x ** 2))
    assert inner_product_L2(u, s.from_callable(lambda x: np.ones_like(x))) == pytest.approx(
        np.sqrt(np.pi), abs=1e-12)
    assert trapezoid_weights(s).sum() == pytest.approx(20.0)


def test_norm_H1_examples():
    s = GridSpec(5.0, 0.01)
    assert norm_H1(s.zeros()) == 0.0
    c = GridFn(s, np.full(s.n_points, -3.0))
    assert norm_H1(c) == pytest.approx(3.0 * np.sqrt(10.0), abs=1e-9)
    assert norm_H1(PI_SPEC.from_callable(np.sin)) == pytest.approx(np.sqrt(2 * np.pi), abs=1e-4)


def test_derivative_fourth_order():
    errs = []
    for dx in (0.1, 0.05):
        s = GridSpec(8.0, dx)
        u = s.from_callable(lambda x: np.exp(-x ** 2))
        errs.append(np.max(np.abs(derivative(u).values[:, 0] + 2 * s.xi * np.exp(-s.xi ** 2))))
    assert np.log2(errs[0] / errs[1]) > 3.7


def test_shift_identity_and_edges():
    s = GridSpec(20.0, 0.1)
    phi = s.from_callable(lambda x: 1 / (1 + np.exp(-x / np.sqrt(2))), left=0.0, right=1.0)
    same = shift(phi, 0.0)
    assert np.array_equal(same.values, phi.values)
    far = shift(phi, s.half_width)
    assert abs(far.values[0, 0]) <= 1e-6
    assert far.values[-1, 0] == pytest.approx(phi.values[s.n_points // 2, 0], abs=1e-6)
    huge = shift(phi, 1e6)
    assert np.all(huge.values == 0.0)


def test_shift_matches_translation():
    s = GridSpec(20.0, 0.05)
    f = lambda x: np.exp(-(x - 1.0) ** 2)
    u = s.from_callable(f)
    gam = 0.37
    assert np.max(np.abs(shift(u, gam).values[:, 0] - f(s.xi - gam))) < 1e-5


@pytest.mark.parametrize("gam", [0.1, 0.5])
def test_shift_lipschitz_bound(nag, gam):
    phi = nag.wave.phi0
    lhs = norm_L2(shift(phi, gam) - phi)
    assert lhs <= abs(gam) * norm_L2(derivative(phi))


def test_diffusion_examples():
    s = GridSpec(4.0, 0.01)
    lin = s.from_callable(lambda x: 2 * x + 1, left=-7.0, right=9.0)
    out = apply_diffusion(lin, DiffusionSpec((1.0,)))
    assert np.max(np.abs(out.values[1:-1])) <= 1e-9
    sn = s.from_callable(np.sin, left=np.sin(-4.01), right=np.sin(4.01))
    d1 = apply_diffusion(sn, DiffusionSpec((1.0,)))
    assert np.max(np.abs(d1.values[1:-1, 0] + np.sin(s.xi[1:-1]))) <= 1e-4
    d2 = apply_diffusion(sn, DiffusionSpec((2.0,)))
    assert np.array_equal(d2.values, 2.0 * d1.values)


def test_diffusion_rejects_negative():
    with pytest.raises(GridError):
        DiffusionSpec((-1.0,))


def test_diffusion_self_adjoint_on_compact_support():
    s = GridSpec(10.0, 0.05)
    u = s.from_callable(lambda x: np.exp(-x ** 2))
    v = s.from_callable(lambda x: x * np.exp(-(x - 1) ** 2))
    d = DiffusionSpec((1.0,))
    a = inner_product_L2(apply_diffusion(u, d), v)
    b = inner_product_L2(u, apply_diffusion(v, d))
    assert abs(a - b) <= 1e-10


def test_sup_norm():
    s = GridSpec(1.0, 0.5)
    assert sup_norm(GridFn(s, [0.0, -3.0, 1.0, 2.0, 0.0])) == 3.0


# ------------------------------------------------------------------ properties

_S = GridSpec(6.0, 0.1)
arrays = st.integers(0, 2 ** 32 - 1).map(
    lambda k: GridFn(_S, np.random.default_rng(k).uniform(-5, 5, _S.n_points)))
scalars = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(arrays, arrays, arrays, scalars, scalars)
def test_inner_product_symmetric_bilinear(u, v, w, a, b):
    uv, vu = inner_product_L2(u, v), inner_product_L2(v, u)
    assert abs(uv - vu) <= 1e-12 * (1 + abs(uv))
    lhs = inner_product_L2(a * u + b * v, w)
    rhs = a * inner_product_L2(u, w) + b * inner_product_L2(v, w)
    assert abs(lhs - rhs) <= 1e-9 * (1 + abs(lhs))


@settings(max_examples=40, deadline=None)
@given(arrays, arrays, scalars, scalars)
def test_diffusion_linear(u, v, a, b):
    d = DiffusionSpec((1.3,))
    lhs = apply_diffusion(a * u + b * v, d).values
    rhs = a * apply_diffusion(u, d).values + b * apply_diffusion(v, d).values
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(arrays)
def test_norm_ordering(u):
    assert norm_H1(u) >= norm_L2(u) >= 0.0


@settings(max_examples=30, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(0.5, 2.0))
def test_shift_round_trip(gam, width):
    s = GridSpec(15.0, 0.05)
    u = s.from_callable(lambda x: np.exp(-(x / width) ** 2))
    back = shift(shift(u, gam), -gam)
    inner = np.abs(s.xi) < s.half_width - abs(gam) - 0.5
    assert np.max(np.abs(back.values[inner] - u.values[inner])) < 50 * s.dx ** 3
