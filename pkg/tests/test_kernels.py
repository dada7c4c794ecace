import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svmclt import (InputError, KernelSpec, RkhsFunction, eval_kernel,
                    feature_function, gram, h_distance, rkhs_inner,
                    rkhs_lincomb, sup_norm_kernel)

from conftest import philox


def test_eval_kernel_gaussian_diagonal():
    k = KernelSpec("gaussian_rbf", 2, gamma=1.0)
    assert eval_kernel(k, (0.3, -1.2), (0.3, -1.2)) == 1.0


def test_eval_kernel_linear():
    k = KernelSpec("linear", 2)
    assert eval_kernel(k, (1, 2), (3, 4)) == 11.0


def test_eval_kernel_polynomial():
    k = KernelSpec("polynomial", 2, degree=2, offset=1.0, scale=1.0)
    assert eval_kernel(k, (1, 0), (1, 0)) == 4.0


def test_eval_kernel_dim_mismatch():
    k = KernelSpec("linear", 2)
    with pytest.raises(InputError):
        eval_kernel(k, (1.0,), (1.0,))


def test_gram_duplicate_point():
    k = KernelSpec("gaussian_rbf", 1, gamma=1.0)
    K = gram(k, [[0.7], [0.7]])
    assert np.allclose(K, 1.0)


def test_gram_linear_orthonormal():
    k = KernelSpec("linear", 2)
    K = gram(k, [[1, 0], [0, 1]])
    assert np.allclose(K, np.eye(2))


def test_gram_gaussian_offdiag():
    k = KernelSpec("gaussian_rbf", 1, gamma=1.0)
    K = gram(k, [[0.0], [1.0]])
    assert np.allclose(K, [[1.0, np.exp(-1)], [np.exp(-1), 1.0]])


@pytest.mark.parametrize("family,kw", [
    ("gaussian_rbf", {"gamma": 0.7}),
    ("polynomial", {"degree": 3, "offset": 0.5, "scale": 1.2}),
    ("linear", {}),
    ("exponential", {"scale": 0.4}),
])
def test_kernel_symmetry_and_gram_psd(family, kw):
    rng = philox(42)
    for trial in range(50):
        d = int(rng.integers(1, 4))
        k = KernelSpec(family, d, **kw)
        pts = rng.normal(size=(int(rng.integers(2, 31)), d))
        K = gram(k, pts)
        assert np.allclose(K, K.T)
        evals = np.linalg.eigvalsh(K)
        norm = max(abs(evals[0]), abs(evals[-1]), 1e-30)
        assert evals[0] >= -1e-10 * norm
        a, b = pts[0], pts[-1]
        assert eval_kernel(k, a, b) == pytest.approx(eval_kernel(k, b, a), rel=1e-14)


def test_sup_norm_gaussian_is_one():
    k = KernelSpec("gaussian_rbf", 3, gamma=2.0)
    box = [[-5, 5], [-1, 2], [0, 4]]
    assert sup_norm_kernel(k, box) == 1.0


def test_sup_norm_linear_square_box():
    k = KernelSpec("linear", 2)
    assert sup_norm_kernel(k, [[-1, 1], [-1, 1]]) == pytest.approx(np.sqrt(2))


def test_sup_norm_polynomial():
    k = KernelSpec("polynomial", 1, degree=2, offset=0.0, scale=1.0)
    assert sup_norm_kernel(k, [[-1, 1]]) == pytest.approx(1.0)


def test_sup_norm_rejects_unbounded_box():
    k = KernelSpec("linear", 1)
    with pytest.raises(InputError):
        sup_norm_kernel(k, [[-np.inf, 1]])


def test_rkhs_inner_feature_self():
    k = KernelSpec("gaussian_rbf", 1, gamma=1.0)
    f = feature_function(k, [0.4])
    assert rkhs_inner(f, f) == pytest.approx(1.0)


def test_rkhs_inner_empty_function():
    k = KernelSpec("gaussian_rbf", 1, gamma=1.0)
    z = RkhsFunction(k, np.zeros((0, 1)), np.zeros(0))
    f = feature_function(k, [0.4])
    assert rkhs_inner(z, f) == 0.0


def test_rkhs_inner_orthogonal_linear():
    k = KernelSpec("linear", 2)
    f = feature_function(k, [1.0, 0.0])
    g = RkhsFunction(k, np.array([[0.0, 1.0]]), np.array([2.0]))
    assert rkhs_inner(f, g) == 0.0


def test_rkhs_inner_kernel_mismatch():
    f = feature_function(KernelSpec("linear", 1), [1.0])
    g = feature_function(KernelSpec("gaussian_rbf", 1, gamma=1.0), [1.0])
    with pytest.raises(InputError):
        rkhs_inner(f, g)


def _random_function(rng, k, n=6):
    anchors = rng.normal(size=(n, k.input_dim))
    return RkhsFunction(k, anchors, rng.normal(size=n))


def test_reproducing_property():
    rng = philox(7)
    k = KernelSpec("gaussian_rbf", 2, gamma=0.9)
    for _ in range(50):
        f = _random_function(rng, k)
        x = rng.normal(size=2)
        lhs = rkhs_inner(f, feature_function(k, x))
        val = f.eval(x)
        assert abs(lhs - val) <= 1e-10 * (1.0 + abs(val))


def test_sup_bound_on_grid():
    rng = philox(8)
    k = KernelSpec("gaussian_rbf", 1, gamma=1.3)
    for _ in range(10):
        f = _random_function(rng, k)
        grid = np.linspace(-3, 3, 1000).reshape(-1, 1)
        sup = sup_norm_kernel(k, [[-3, 3]])
        norm = np.sqrt(max(rkhs_inner(f, f), 0.0))
        assert np.max(np.abs(f.eval(grid))) <= sup * norm + 1e-9


def test_eval_matches_direct_sum():
    rng = philox(9)
    k = KernelSpec("polynomial", 2, degree=2, offset=1.0, scale=0.5)
    f = _random_function(rng, k, n=4)
    x = rng.normal(size=2)
    direct = sum(c * eval_kernel(k, x, a) for c, a in zip(f.coefficients, f.anchors))
    assert f.eval(x) == pytest.approx(direct, rel=1e-12)


def test_lincomb_merges_shared_anchors():
    k = KernelSpec("gaussian_rbf", 1, gamma=1.0)
    f = RkhsFunction(k, np.array([[0.0], [1.0]]), np.array([1.0, 2.0]))
    g = RkhsFunction(k, np.array([[1.0], [2.0]]), np.array([0.5, -1.0]))
    h = rkhs_lincomb(k, [(1.0, f), (3.0, g)])
    assert h.n_anchors == 3
    x = np.array([[0.3], [1.7]])
    assert np.allclose(h.eval(x), f.eval(x) + 3.0 * g.eval(x), atol=1e-14)


def test_h_distance_of_near_equal_functions_is_tiny():
    # coefficients must cancel before the quadratic form, not after
    k = KernelSpec("gaussian_rbf", 1, gamma=1.0)
    f = RkhsFunction(k, np.array([[0.0], [1.0]]), np.array([1.0, -0.5]))
    g = RkhsFunction(k, np.array([[0.0], [1.0]]), np.array([1.0, -0.5 + 1e-15]))
    assert h_distance(f, g) < 1e-13
    assert h_distance(f, f) == 0.0


def test_kernel_spec_validation():
    with pytest.raises(InputError):
        KernelSpec("gaussian_rbf", 1, gamma=-1.0)
    with pytest.raises(InputError):
        KernelSpec("polynomial", 1, degree=0)
    with pytest.raises(InputError):
        KernelSpec("nope", 1)
    with pytest.raises(InputError):
        KernelSpec("linear", 0)


@settings(max_examples=60, deadline=None)
@given(
    x=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    y=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    gamma=st.floats(0.1, 3.0),
)
def test_gaussian_kernel_range_property(x, y, gamma):
    k = KernelSpec("gaussian_rbf", 2, gamma=gamma)
    v = eval_kernel(k, x, y)
    assert 0.0 < v <= 1.0
    assert v == pytest.approx(np.exp(-gamma * np.sum((np.array(x) - np.array(y)) ** 2)))
