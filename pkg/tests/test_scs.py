import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsrnet.autograd import Tensor
from tsrnet.ops import Conv2dParams, ShapeError
from tsrnet.scs import EPS_RANGE, P_RANGE, ScsParams, ctmb, scs_conv2d


def params(w, p, eps):
    w = np.asarray(w, dtype=np.float64)
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), (w.shape[0],)).copy()
    return ScsParams(Tensor(w), Tensor(p), Tensor(np.array([eps], dtype=np.float64)))


def run(x, w, p, eps):
    return scs_conv2d(Tensor(np.asarray(x, dtype=np.float64)), params(w, p, eps), allow_zero_eps=True).data


def naive_scs(x, w, p, eps):
    n, ci, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((n, w.shape[0], h, wd))
    for i, o, y, xx in itertools.product(range(n), range(w.shape[0]), range(h), range(wd)):
        f = xp[i, :, y:y + 3, xx:xx + 3].ravel()
        k = w[o].ravel()
        d = float(f @ k)
        denom = (np.linalg.norm(f) + eps) * (np.linalg.norm(k) + eps)
        out[i, o, y, xx] = 0.0 if d == 0 else np.sign(d) * (abs(d) / denom) ** p[o]
    return out


def centre_kernel(vec):
    w = np.zeros((1, len(vec), 3, 3))
    w[0, :, 1, 1] = vec
    return w


def test_self_similarity_is_one():
    rng = np.random.default_rng(0)
    x = rng.uniform(0.1, 1, (1, 2, 1, 1))
    w = centre_kernel(x[0, :, 0, 0])
    assert run(x, w, 1.0, 0.0)[0, 0, 0, 0] == pytest.approx(1.0, abs=1e-12)


def test_analytic_cosine_values():
    x = np.array([3.0, 4.0]).reshape(1, 2, 1, 1)
    w = centre_kernel([4.0, 3.0])
    assert run(x, w, 1.0, 0.0)[0, 0, 0, 0] == pytest.approx(0.96, abs=1e-12)
    assert run(x, w, 2.0, 0.0)[0, 0, 0, 0] == pytest.approx(0.9216, abs=1e-12)


def test_orthogonal_is_zero_for_any_p():
    x = np.array([3.0, 4.0]).reshape(1, 2, 1, 1)
    w = centre_kernel([4.0, -3.0])
    for p in (0.3, 1.0, 2.5):
        assert run(x, w, p, 1e-3)[0, 0, 0, 0] == 0.0


def test_opposite_is_minus_one():
    x = np.array([3.0, 4.0]).reshape(1, 2, 1, 1)
    assert run(x, centre_kernel([-3.0, -4.0]), 1.0, 0.0)[0, 0, 0, 0] == pytest.approx(-1.0, abs=1e-12)


def test_matches_naive_loop():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    p = rng.uniform(0.5, 2.5, 3)
    np.testing.assert_allclose(run(x, w, p, 1e-2), naive_scs(x, w, p, 1e-2), atol=1e-6, rtol=0)


def test_matches_naive_loop_small_shapes():
    rng = np.random.default_rng(2)
    for n, ci, co, h, wd in itertools.product((1, 2), (1, 3), (1, 2), (1, 2, 4), (1, 3, 5)):
        x = rng.standard_normal((n, ci, h, wd))
        w = rng.standard_normal((co, ci, 3, 3))
        p = rng.uniform(0.2, 3.0, co)
        np.testing.assert_allclose(run(x, w, p, 0.05), naive_scs(x, w, p, 0.05), atol=1e-9, rtol=0)


def test_grad_check_suite_case():
    from tsrnet.gradcheck_suite import run_case

    r = run_case("scs_conv2d", 0)
    assert r.passed, str(r.report)


def test_zero_input_zero_output_through_ctmb():
    rng = np.random.default_rng(3)
    conv = Conv2dParams(Tensor(rng.standard_normal((4, 4, 3, 3))), Tensor(np.zeros(4)))
    out = ctmb(Tensor(np.zeros((1, 4, 6, 6))), conv, params(rng.standard_normal((4, 4, 3, 3)), 1.0, 1e-3))
    assert np.all(out.data == 0.0)


def test_ctmb_range_and_shape():
    rng = np.random.default_rng(4)
    c = 64
    conv = Conv2dParams(Tensor(rng.standard_normal((c, c, 3, 3), dtype=np.float32)),
                        Tensor(np.zeros(c, dtype=np.float32)))
    s = ScsParams(Tensor(rng.standard_normal((c, c, 3, 3), dtype=np.float32)),
                  Tensor(np.ones(c, dtype=np.float32)), Tensor(np.array([1e-3], dtype=np.float32)))
    out = ctmb(Tensor(rng.standard_normal((1, c, 16, 16), dtype=np.float32)), conv, s)
    assert out.shape == (1, c, 16, 16)
    assert out.data.min() >= 0.0 and out.data.max() < 1.0


def test_eps_validation_and_shape_errors():
    x = Tensor(np.ones((1, 2, 3, 3)))
    with pytest.raises(ValueError):
        scs_conv2d(x, params(np.ones((1, 2, 3, 3)), 1.0, 0.0))
    with pytest.raises(ValueError):
        scs_conv2d(x, params(np.ones((1, 2, 3, 3)), 1.0, -1.0), allow_zero_eps=True)
    with pytest.raises(ShapeError):
        scs_conv2d(x, params(np.ones((1, 3, 3, 3)), 1.0, 0.1))


def test_projection_clamps():
    s = params(np.ones((3, 1, 3, 3)), [0.0, 5.0, 50.0], 5.0)
    s.project()
    np.testing.assert_array_equal(s.p.data, [P_RANGE[0], 5.0, P_RANGE[1]])
    assert s.eps.data[0] == EPS_RANGE[1]
    s.eps.data[0] = 0.0
    s.project()
    assert s.eps.data[0] == EPS_RANGE[0]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.1, 10.0), st.floats(1e-6, 1.0))
def test_magnitude_below_one(seed, p, eps):
    rng = np.random.default_rng(seed)
    out = run(rng.standard_normal((1, 2, 4, 4)), rng.standard_normal((2, 2, 3, 3)), p, eps)
    assert np.all(np.abs(out) < 1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.01, 100.0))
def test_scale_invariance_at_zero_eps(seed, c):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 2, 4, 4))
    w = rng.standard_normal((2, 2, 3, 3))
    p = rng.uniform(0.5, 2.0, 2)
    np.testing.assert_allclose(run(c * x, w, p, 0.0), run(x, w, p, 0.0), rtol=1e-9, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_sign_equivariance(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 3, 4, 5))
    w = rng.standard_normal((2, 3, 3, 3))
    p = rng.uniform(0.3, 3.0, 2)
    np.testing.assert_array_equal(run(-x, w, p, 1e-3), -run(x, w, p, 1e-3))
