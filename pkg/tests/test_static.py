import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sigcov.errors import InvalidInputError
from sigcov.static import (StaticKernelParams, gram, init_lengthscales, kappa, kappa_double_diff,
                           sqdist)

RBF = StaticKernelParams("rbf", (1.0,))
LIN = StaticKernelParams("linear")


def test_rbf_at_zero_distance_is_one():
    assert kappa([0.3, -1.0], [0.3, -1.0], StaticKernelParams("rbf")) == 1.0


def test_rbf_value():
    assert kappa([0.0], [np.sqrt(2)], RBF) == pytest.approx(np.exp(-1.0), rel=1e-14)
    assert kappa([0.0], [np.sqrt(2)], RBF) == pytest.approx(0.367879, abs=1e-6)


def test_linear_is_dot_product():
    assert kappa([1, 2], [3, 4], LIN) == 11.0


def test_rbf_lengthscales_scale_each_dimension():
    p = StaticKernelParams("rbf", (2.0, 0.5))
    assert kappa([0, 0], [2.0, 0.5], p) == pytest.approx(np.exp(-1.0), rel=1e-14)


def test_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        kappa([1, 2], [1, 2, 3], LIN)
    with pytest.raises(InvalidInputError):
        kappa([1, 2], [1, 2], RBF)


def test_invalid_params():
    with pytest.raises(InvalidInputError):
        StaticKernelParams("matern")
    with pytest.raises(InvalidInputError):
        StaticKernelParams("rbf", (1.0, -1.0))
    with pytest.raises(InvalidInputError):
        StaticKernelParams("rbf", (np.inf,))


def test_double_diff_linear_is_increment_product(rng):
    for _ in range(20):
        x0, x1, y0, y1 = rng.standard_normal((4, 3))
        assert kappa_double_diff(x0, x1, y0, y1, LIN) == pytest.approx((x1 - x0) @ (y1 - y0),
                                                                       rel=1e-12, abs=1e-14)


def test_double_diff_vanishes_on_repeated_point(rng):
    x, y0, y1 = rng.standard_normal((3, 2))
    assert kappa_double_diff(x, x, y0, y1, StaticKernelParams("rbf")) == 0.0


def test_double_diff_rbf_value():
    assert kappa_double_diff([0], [1], [0], [1], RBF) == pytest.approx(2 - 2 * np.exp(-0.5), rel=1e-14)
    assert kappa_double_diff([0], [1], [0], [1], RBF) == pytest.approx(0.786939, abs=1e-6)


def test_init_lengthscales_two_point_distribution():
    assert init_lengthscales([[-1.0], [1.0]], d=1)[0] == pytest.approx(np.sqrt(2), rel=1e-14)


def test_init_lengthscales_unit_variance_in_two_dims(rng):
    sample = np.column_stack([rng.choice([-1.0, 1.0], 1000), rng.choice([-1.0, 1.0], 1000)])
    sample = (sample - sample.mean(0)) / sample.std(0)
    np.testing.assert_allclose(init_lengthscales(sample, d=2), [2.0, 2.0], rtol=1e-12)


def test_init_lengthscales_constant_dimension_is_floored():
    with pytest.warns(RuntimeWarning):
        ls = init_lengthscales(np.column_stack([np.ones(5), np.arange(5.0)]), eps=1e-6)
    assert ls[0] == 1e-6 and ls[1] > 1


def test_init_lengthscales_is_deterministic(rng):
    sample = rng.standard_normal((5000, 2))
    np.testing.assert_array_equal(init_lengthscales(sample, seed=3), init_lengthscales(sample, seed=3))


def test_init_lengthscales_needs_two_points():
    with pytest.raises(InvalidInputError):
        init_lengthscales([[1.0]])


def test_sqdist_identical_rows_are_exactly_zero(rng):
    a = torch.from_numpy(rng.standard_normal((7, 3)) * 1e3)
    assert torch.all(torch.diagonal(sqdist(a, a)) == 0)


def test_sqdist_chunked_matches_direct(rng, monkeypatch):
    import sigcov.static as static
    a = torch.from_numpy(rng.standard_normal((5, 3)))
    b = torch.from_numpy(rng.standard_normal((40, 3)))
    full = sqdist(a, b)
    monkeypatch.setattr(static, "_SQDIST_CHUNK", 10)
    np.testing.assert_array_equal(sqdist(a, b).numpy(), full.numpy())


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (6, 2), elements=st.floats(-5, 5)), st.sampled_from(["linear", "rbf"]))
def test_gram_is_symmetric_psd(points, kind):
    x = torch.from_numpy(points)
    K = gram(x, x, kind).numpy()
    np.testing.assert_array_equal(K, K.T)
    eig = np.linalg.eigvalsh(K)
    assert eig[0] >= -1e-10 * max(np.trace(K), 1.0)
