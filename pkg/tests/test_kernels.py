import numpy as np
import pytest
from scipy import stats

from errors import ConditioningError, NumericalConsistencyError, RejectedInputError
from scoring.kernels import (
    KernelParams,
    center_gram,
    center_test_kernel,
    condition_number,
    cross_gram,
    gram,
    kernel_mahalanobis_oracle,
    reg_kernel,
    se_kernel,
    select_sigma_reg,
    sigma_reg_ladder,
)
from scoring.mddkm import MddKmModel, TrainingSet


def test_se_kernel_peak_and_symmetry():
    p = KernelParams(sigma=1.5, ell=0.7)
    x, y = np.array([0.1, -0.4, 2.0]), np.array([1.0, 0.3, -0.5])
    assert se_kernel(x, x, p) == pytest.approx(2.25)
    assert se_kernel(x, y, p) == se_kernel(y, x, p)
    expected = 2.25 * np.exp(-np.sum((x - y) ** 2) / 0.49)
    assert se_kernel(x, y, p) == pytest.approx(expected, rel=1e-14)


def test_reg_kernel_adds_offset_everywhere():
    p = KernelParams(sigma=1.0, ell=1.0, sigma_reg=0.2)
    x, y = np.zeros(2), np.array([10.0, 10.0])
    assert reg_kernel(x, y, p) == pytest.approx(0.04)
    assert reg_kernel(x, x, p) == pytest.approx(1.04)


def test_gram_matches_pairwise_loop_exactly(rng):
    X = rng.normal(size=(4, 9))
    p = KernelParams(sigma=0.8, ell=1.3)
    K = gram(X, p).values
    loop = np.array([[se_kernel(X[:, m], X[:, n], p) for n in range(9)] for m in range(9)])
    assert np.array_equal(K, loop)
    assert np.array_equal(K, K.T)


def test_gram_is_permutation_equivariant(rng):
    X = rng.normal(size=(3, 10))
    p = KernelParams(sigma=1.1, ell=0.7, sigma_reg=0.2)
    order = rng.permutation(10)
    for mode in ("offset", "nugget"):
        K = gram(X, p, regularized=True, mode=mode).values
        np.testing.assert_array_equal(gram(X[:, order], p, regularized=True, mode=mode).values, K[np.ix_(order, order)])


def test_condition_number_of_the_regularized_matrix():
    K = np.diag([4.0, 1.0])
    assert condition_number(K, 0.0, "nugget") == pytest.approx(4.0)
    assert condition_number(K, 1.0, "nugget") == pytest.approx(2.5)
    assert condition_number(np.array([[1.0, 2.0], [2.0, 1.0]]), 0.0) == np.inf


def test_gram_regularization_modes(rng):
    X = rng.normal(size=(2, 5))
    p = KernelParams(sigma=1.0, ell=1.0, sigma_reg=0.5)
    plain = gram(X, p).values
    offset = gram(X, p, regularized=True, mode="offset").values
    nugget = gram(X, p, regularized=True, mode="nugget").values
    np.testing.assert_allclose(offset - plain, np.full((5, 5), 0.25))
    np.testing.assert_allclose(nugget - plain, 0.25 * np.eye(5))


def test_gram_rejects_empty():
    with pytest.raises(RejectedInputError):
        gram(np.zeros((3, 0)), KernelParams(sigma=1.0, ell=1.0))


def test_ladder_shape():
    K = 4.0 * np.eye(3)
    ladder = sigma_reg_ladder(K)
    assert ladder[0] == 0.0
    assert ladder[1] == pytest.approx(2e-8)
    assert ladder[2] == pytest.approx(4e-8)
    assert ladder[-1] == pytest.approx(2.0)
    assert all(a < b for a, b in zip(ladder, ladder[1:]))


def test_select_sigma_reg_is_zero_when_already_conditioned():
    X = np.array([[0.0, 10.0, 20.0, 30.0]])
    K = gram(X, KernelParams(sigma=1.0, ell=1.0))
    assert select_sigma_reg(K) == 0.0


def test_select_sigma_reg_nugget_handles_duplicates():
    X = np.array([[0.0, 0.0, 1.0, 1.0, 2.0]])
    K = gram(X, KernelParams(sigma=1.0, ell=1.0)).values
    s = select_sigma_reg(K, 1e8, mode="nugget")
    assert s > 0
    eigs = np.linalg.eigvalsh(K + s**2 * np.eye(5))
    assert eigs[-1] / eigs[0] <= 1e8


def test_select_sigma_reg_offset_cannot_separate_duplicates():
    X = np.array([[0.0, 0.0, 1.0]])
    K = gram(X, KernelParams(sigma=1.0, ell=1.0))
    with pytest.raises(ConditioningError):
        select_sigma_reg(K, 1e8, mode="offset")


def test_select_sigma_reg_rejects_bad_threshold():
    with pytest.raises(RejectedInputError):
        select_sigma_reg(np.eye(2), cond_threshold=1.0)


def test_center_gram_zero_means(rng):
    K = gram(rng.normal(size=(3, 7)), KernelParams(sigma=1.0, ell=2.0))
    Kc = center_gram(K).values
    np.testing.assert_allclose(Kc.sum(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(Kc.sum(axis=1), 0.0, atol=1e-12)


def test_center_gram_refuses_regularized(rng):
    K = gram(rng.normal(size=(2, 3)), KernelParams(sigma=1.0, ell=1.0, sigma_reg=0.1), regularized=True)
    with pytest.raises(RejectedInputError):
        center_gram(K)


def test_ridge_mahalanobis_equals_centered_gp_variance(rng):
    """ridge * kernel Mahalanobis == centered GP variance with a nugget of N * ridge."""
    N, ridge = 8, 1e-2
    p = KernelParams(sigma=1.0, ell=1.5)
    X = rng.normal(size=(3, N))
    K = gram(X, p).values
    Kc = center_gram(K)
    for _ in range(10):
        z = rng.normal(size=3) * 1.5
        k_star = cross_gram(X, z, p)[:, 0]
        kc, kss = center_test_kernel(K, k_star, p.signal_variance)
        oracle = kernel_mahalanobis_oracle(Kc, kc, kss, ridge)
        gp = kss - kc @ np.linalg.solve(Kc + N * ridge * np.eye(N), kc)
        np.testing.assert_allclose(ridge * oracle, gp, rtol=1e-7, atol=1e-9)


def test_oracle_rejects_non_psd():
    bad = np.array([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(NumericalConsistencyError):
        kernel_mahalanobis_oracle(bad, np.zeros(2), 1.0, 0.1)


def test_gp_variance_ranks_like_kernel_mahalanobis(rng):
    """Random clouds: the centered GP variance ranks exactly like the oracle, the
    uncentered score as scored in the pipeline agrees to within a few thousandths."""
    N, ridge = 12, 1e-3
    p = KernelParams(sigma=1.0, ell=1.0, sigma_reg=1e-3)
    for _ in range(5):
        X = rng.normal(size=(3, N))
        Z = rng.normal(scale=1.5, size=(3, 50))

        K = gram(X, p).values
        Kc = center_gram(K)
        kc, kss = center_test_kernel(K, cross_gram(X, Z, p), np.full(50, p.signal_variance))
        oracle = kernel_mahalanobis_oracle(Kc, kc, kss, ridge=ridge)

        centered = kss - np.sum(kc * np.linalg.solve(Kc + N * ridge * np.eye(N), kc), axis=0)
        assert stats.spearmanr(centered, oracle).statistic == pytest.approx(1.0)

        model = MddKmModel.from_training_set(TrainingSet([X], ["c"]), p, mode="nugget")
        assert stats.spearmanr(model.score_batch(Z)[0], oracle).statistic >= 0.99
