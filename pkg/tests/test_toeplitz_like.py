import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from ldr.circulant import dense_f_circulant, skew_matvec
from ldr.displacement import GeneratorPair, displacement_rank, extract_generators, toeplitz_like_reconstruct
from ldr.exceptions import DimensionMismatch, IncompatibleDimensions
from ldr.fft_core import audit
from ldr.toeplitz_like import (
    RectangularTransform,
    ToeplitzLikeTransform,
    fast_gradients,
    fast_multiply,
    from_circulant,
    from_dense,
    from_displacement_generators,
    from_toeplitz,
    init_scale,
    jacobian_g,
    jacobian_h,
    load_transform,
    rect_forward,
    rect_gradients,
    rect_transpose,
    save_transform,
    to_dense,
    to_displacement_generators,
    transpose_multiply,
)

from conftest import rel_err


def random_T(rng, n, r):
    return ToeplitzLikeTransform(rng.standard_normal((n, r)), rng.standard_normal((n, r)))


def identity_T(n):
    e1 = np.zeros((n, 1))
    e1[0] = 1
    return ToeplitzLikeTransform(e1, e1)


def loop_dense(T):
    n = T.n
    M = np.zeros((n, n))
    for i in range(T.r):
        C = dense_f_circulant(1.0, T.G[:, i])
        S = dense_f_circulant(-1.0, T.H[:, i])
        for a in range(n):
            for b in range(n):
                M[a, b] += sum(C[a, k] * S[k, b] for k in range(n))
    return M


def test_to_dense_examples(rng):
    g = rng.standard_normal(6)
    e1 = np.zeros(6)
    e1[0] = 1
    assert_allclose(to_dense(ToeplitzLikeTransform(g[:, None], e1[:, None])), dense_f_circulant(1, g))
    assert_allclose(to_dense(ToeplitzLikeTransform(e1[:, None], g[:, None])), dense_f_circulant(-1, g))
    T = random_T(rng, 6, 2)
    assert_allclose(to_dense(T), loop_dense(T), atol=1e-12)


def test_identity_transform(rng, backend):
    X = rng.standard_normal((8, 3))
    assert_allclose(fast_multiply(identity_T(8), X), X, atol=1e-14)
    assert_allclose(transpose_multiply(identity_T(8), X), X, atol=1e-14)


@pytest.mark.parametrize("n", [4, 7, 12, 16])
@pytest.mark.parametrize("r", [1, 2, 4])
@pytest.mark.parametrize("b", [1, 3, 8])
def test_fast_multiply_oracle(rng, backend, n, r, b):
    T = random_T(rng, n, r)
    X = rng.standard_normal((n, b))
    assert rel_err(fast_multiply(T, X), to_dense(T) @ X) < 1e-9
    assert rel_err(transpose_multiply(T, X), to_dense(T).T @ X) < 1e-9


def test_vector_input(rng, backend):
    T = random_T(rng, 9, 2)
    x = rng.standard_normal(9)
    y = fast_multiply(T, x)
    assert y.shape == (9,)
    assert_allclose(y, to_dense(T) @ x, atol=1e-12)
    assert_allclose(T @ x, y)


def test_forward_fft_budget(rng):
    T = random_T(rng, 8, 2)
    X = rng.standard_normal((8, 4))
    with audit.track() as t:
        fast_multiply(T, X)
    assert t.count == 2 * (2 * 4 + 4 + 2) == 28
    T.cache_spectra()
    with audit.track() as t:
        fast_multiply(T, X)
        transpose_multiply(T, X)
    assert t.count == 2 * 2 * (2 * 4 + 4)


def test_gradient_fft_budget(rng):
    T = random_T(rng, 4, 2)
    X, Z = rng.standard_normal((2, 4, 2))
    with audit.track() as t:
        fast_gradients(T, X, Z)
    assert t.count == 4 * 2 * 2 + 4 * 2 + 2 * 2 == 28


def test_spectra_cache_invalidation(rng):
    T = random_T(rng, 6, 2)
    T.cache_spectra()
    Gt, Ht = T.cached_spectra
    fresh = T.compute_spectra()
    assert_allclose(Gt.T, fresh[0], atol=1e-12)
    assert_allclose(Ht.T, fresh[1], atol=1e-12)
    T.apply_update(dG=np.ones((6, 2)), lr=0.1)
    assert T.cached_spectra is None
    T.cache_spectra()
    T.set_generators(H=np.zeros((6, 2)))
    assert T.cached_spectra is None
    assert_array_equal(fast_multiply(T, np.ones(6)), 0)


def test_generators_are_read_only(rng):
    T = random_T(rng, 4, 1)
    with pytest.raises(ValueError):
        T.G[0, 0] = 1.0


def test_symmetric_transpose(rng, backend):
    A = rng.standard_normal((7, 7))
    T = from_dense(A + A.T)
    D = rng.standard_normal((7, 2))
    assert_allclose(transpose_multiply(T, D), fast_multiply(T, D), atol=1e-10)


def test_jacobian_examples(rng):
    T = random_T(rng, 6, 2)
    assert_array_equal(jacobian_g(T, np.zeros(6), 0), 0)
    assert_array_equal(jacobian_h(T, np.zeros(6), 1), 0)
    x = rng.standard_normal(6)
    e1 = np.zeros(6)
    e1[0] = 1
    T1 = ToeplitzLikeTransform(rng.standard_normal((6, 1)), e1[:, None])
    assert_allclose(jacobian_g(T1, x, 0), dense_f_circulant(1, x), atol=1e-13)
    T2 = ToeplitzLikeTransform(e1[:, None], rng.standard_normal((6, 1)))
    assert_allclose(jacobian_h(T2, x, 0), dense_f_circulant(-1, x), atol=1e-13)
    assert_allclose(jacobian_g(T, x, 1), dense_f_circulant(1, skew_matvec(T.H[:, 1], x)))


def _fd_jacobian(T, x, j, which, eps=1e-6):
    n = T.n
    J = np.zeros((n, n))
    for k in range(n):
        G, H = T.G.copy(), T.H.copy()
        P = G if which == "g" else H
        P[k, j] += eps
        plus = fast_multiply(ToeplitzLikeTransform(G, H), x)
        P[k, j] -= 2 * eps
        minus = fast_multiply(ToeplitzLikeTransform(G, H), x)
        J[:, k] = (plus - minus) / (2 * eps)
    return J


@pytest.mark.parametrize("which,fn", [("g", jacobian_g), ("h", jacobian_h)])
def test_jacobians_vs_finite_differences(rng, which, fn):
    T = random_T(rng, 6, 2)
    x = rng.standard_normal(6)
    for j in range(2):
        assert rel_err(fn(T, x, j), _fd_jacobian(T, x, j, which)) < 1e-5


def test_gradients_zero_backward(rng, backend):
    T = random_T(rng, 5, 2)
    gp = fast_gradients(T, rng.standard_normal((5, 3)), np.zeros((5, 3)))
    assert_array_equal(gp.dG, 0)
    assert_array_equal(gp.dH, 0)


@pytest.mark.parametrize("n,r,b", [(10, 2, 3), (4, 1, 1), (16, 4, 8), (7, 3, 2)])
def test_gradients_vs_jacobian_oracle(rng, backend, n, r, b):
    T = random_T(rng, n, r)
    X, Z = rng.standard_normal((2, n, b))
    gp = fast_gradients(T, X, Z)
    dG = np.column_stack([sum(jacobian_g(T, X[:, k], j).T @ Z[:, k] for k in range(b)) for j in range(r)])
    dH = np.column_stack([sum(jacobian_h(T, X[:, k], j).T @ Z[:, k] for k in range(b)) for j in range(r)])
    assert rel_err(gp.dG, dG) < 1e-8
    assert rel_err(gp.dH, dH) < 1e-8


def test_gradients_vs_finite_differences(rng):
    T = random_T(rng, 6, 2)
    X, Z = rng.standard_normal((2, 6, 3))
    gp = fast_gradients(T, X, Z)
    eps = 1e-6

    def loss(G, H):
        return float(np.sum(Z * fast_multiply(ToeplitzLikeTransform(G, H), X)))

    for name, grad in (("G", gp.dG), ("H", gp.dH)):
        for idx in np.ndindex(6, 2):
            G, H = T.G.copy(), T.H.copy()
            P = G if name == "G" else H
            P[idx] += eps
            lp = loss(G, H)
            P[idx] -= 2 * eps
            lm = loss(G, H)
            fd = (lp - lm) / (2 * eps)
            assert abs(fd - grad[idx]) <= 1e-5 * max(1.0, abs(fd))


def test_gradient_shape_mismatch(rng):
    with pytest.raises(DimensionMismatch):
        fast_gradients(random_T(rng, 4, 1), np.ones((4, 2)), np.ones((4, 3)))
    with pytest.raises(DimensionMismatch):
        fast_multiply(random_T(rng, 4, 1), np.ones((5, 2)))


def test_displacement_rank_budget(rng):
    for r in (1, 2, 3):
        assert displacement_rank(to_dense(random_T(rng, 12, r))) <= r


def test_additivity(rng):
    T1, T2 = random_T(rng, 7, 2), random_T(rng, 7, 1)
    both = ToeplitzLikeTransform(np.hstack([T1.G, T2.G]), np.hstack([T1.H, T2.H]))
    assert_allclose(to_dense(both), to_dense(T1) + to_dense(T2), atol=1e-10)


def test_from_circulant(rng):
    e1 = np.zeros(8)
    e1[0] = 1
    assert_array_equal(to_dense(from_circulant(e1)), np.eye(8))
    v = rng.standard_normal(8)
    T = from_circulant(v)
    assert T.r == 1
    assert_array_equal(to_dense(T), dense_f_circulant(1, v))
    assert extract_generators(to_dense(T)).r <= 1


def test_from_toeplitz(rng):
    e1 = np.zeros(6)
    e1[0] = 2.5
    assert_allclose(to_dense(from_toeplitz(e1, e1)), 2.5 * np.eye(6), atol=1e-12)
    c, r = rng.standard_normal((2, 8))
    r[0] = c[0]
    T = from_toeplitz(c, r)
    import scipy.linalg
    assert T.r <= 2
    assert np.max(np.abs(to_dense(T) - scipy.linalg.toeplitz(c, r))) < 1e-9
    one = np.zeros(5)
    one[0] = 1
    I = from_toeplitz(one, one)
    assert I.r <= 2
    assert_allclose(to_dense(I), np.eye(5), atol=1e-12)


def test_product_of_toeplitz_rank(rng):
    c1, r1, c2, r2 = rng.standard_normal((4, 10))
    r1[0], r2[0] = c1[0], c2[0]
    P = to_dense(from_toeplitz(c1, r1)) @ to_dense(from_toeplitz(c2, r2))
    assert extract_generators(P).r <= 4


def test_generator_conversions(rng):
    gen = GeneratorPair(rng.standard_normal((7, 3)), rng.standard_normal((7, 3)))
    T = from_displacement_generators(gen)
    assert_allclose(to_dense(T), toeplitz_like_reconstruct(gen), atol=1e-12)
    back = to_displacement_generators(T)
    assert_allclose(back.G, gen.G)
    assert_allclose(back.H, gen.H)
    zero = from_displacement_generators(GeneratorPair(np.zeros((4, 0)), np.zeros((4, 0))))
    assert_array_equal(to_dense(zero), 0)


def test_serialization(tmp_path, rng):
    T = random_T(rng, 5, 2)
    rec = T.to_record()
    assert rec["n"] == 5 and rec["r"] == 2
    assert rec["G"][:2] == list(T.G[0])
    path = tmp_path / "t.json"
    save_transform(path, T, note="x")
    U = load_transform(path)
    assert_array_equal(U.G, T.G)
    assert_array_equal(U.H, T.H)


def test_init_scale_gives_dense_like_variance():
    n, r, gain = 64, 3, np.sqrt(2)
    rng = np.random.default_rng(0)
    vals = np.concatenate([to_dense(ToeplitzLikeTransform.random(n, r, rng, gain)).ravel() for _ in range(30)])
    assert vals.var() == pytest.approx(gain ** 2 / n, rel=0.15)
    assert init_scale(n, r, gain) > 0


def test_rectangular_rules(rng):
    with pytest.raises(IncompatibleDimensions):
        RectangularTransform(10, 4, [random_T(rng, 4, 1)])
    with pytest.raises(IncompatibleDimensions):
        RectangularTransform(8, 4, [random_T(rng, 4, 1)])
    with pytest.raises(IncompatibleDimensions):
        RectangularTransform.random(6, 4, 1, rng)
    R = RectangularTransform.random(12, 4, 2, rng)
    assert len(R.inner) == 3 and R.parameter_count == 3 * 2 * 4 * 2


def test_rect_forward(rng, backend):
    X = rng.standard_normal((8, 3))
    T = random_T(rng, 8, 2)
    assert_allclose(rect_forward(RectangularTransform(8, 8, [T]), X), fast_multiply(T, X))
    assert_allclose(rect_forward(RectangularTransform(4, 8, [identity_T(8)]), X), X[:4], atol=1e-14)
    R = RectangularTransform.random(16, 8, 2, rng)
    assert rel_err(rect_forward(R, X), R.dense() @ X) < 1e-9


def test_rect_transpose(rng, backend):
    for m in (4, 8, 24):
        R = RectangularTransform.random(m, 8, 2, rng)
        D = rng.standard_normal((m, 3))
        assert rel_err(rect_transpose(R, D), R.dense().T @ D) < 1e-9


def test_rect_gradients(rng, backend):
    X = rng.standard_normal((8, 3))
    R = RectangularTransform.random(4, 8, 2, rng)
    zero = rect_gradients(R, X, np.zeros((4, 3)))
    assert_array_equal(zero[0].dG, 0)
    T = random_T(rng, 8, 2)
    D = rng.standard_normal((8, 3))
    g = rect_gradients(RectangularTransform(8, 8, [T]), X, D)[0]
    ref = fast_gradients(T, X, D)
    assert_allclose(g.dG, ref.dG)
    assert_allclose(g.dH, ref.dH)


@pytest.mark.parametrize("m", [4, 16])
def test_rect_gradients_finite_differences(rng, m):
    n = 8
    R = RectangularTransform.random(m, n, 2, rng)
    X = rng.standard_normal((n, 2))
    D = rng.standard_normal((m, 2))
    grads = rect_gradients(R, X, D)
    eps = 1e-6
    for k, T in enumerate(R.inner):
        for name in ("G", "H"):
            for idx in [(0, 0), (3, 1), (7, 0)]:
                vals = []
                for sgn in (1, -1):
                    G, H = T.G.copy(), T.H.copy()
                    (G if name == "G" else H)[idx] += sgn * eps
                    inner = list(R.inner)
                    inner[k] = ToeplitzLikeTransform(G, H)
                    vals.append(np.sum(D * rect_forward(RectangularTransform(m, n, inner), X)))
                fd = (vals[0] - vals[1]) / (2 * eps)
                an = (grads[k].dG if name == "G" else grads[k].dH)[idx]
                assert abs(fd - an) <= 1e-5 * max(1.0, abs(fd))


def test_overcomplete_rank_allowed(rng, backend):
    T = random_T(rng, 4, 6)
    X = rng.standard_normal((4, 2))
    assert rel_err(fast_multiply(T, X), to_dense(T) @ X) < 1e-9
    assert displacement_rank(to_dense(T)) <= 4
    with pytest.raises(DimensionMismatch):
        ToeplitzLikeTransform(np.zeros((4, 0)), np.zeros((4, 0)))
