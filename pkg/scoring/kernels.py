"""
Squared-exponential kernel machinery shared by MDD-KM training and scoring.

Squared distances are accumulated one input dimension at a time, in the same
order for a single pair and for a whole Gram matrix, so vectorized matrices
are bit-identical to the pairwise double loop.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg

from errors import ConditioningError, DimensionMismatchError, NumericalConsistencyError, RejectedInputError

logger = logging.getLogger(__name__)

RegMode = Literal["offset", "nugget"]


class KernelParams(BaseModel):
    """Hyperparameter set: signal std, length-scale, regularization std."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    sigma: float = Field(gt=0)
    ell: float = Field(gt=0)
    sigma_reg: float = Field(0.0, ge=0)

    @property
    def signal_variance(self) -> float:
        return self.sigma**2

    @property
    def diagonal(self) -> float:
        """Value of every regularized diagonal entry."""
        return self.sigma**2 + self.sigma_reg**2


@dataclass(frozen=True)
class GramMatrix:
    values: np.ndarray
    params: KernelParams
    regularized: bool
    mode: RegMode = "offset"

    @property
    def size(self) -> int:
        return self.values.shape[0]


def as_columns(X) -> np.ndarray:
    """Coerces input to a float64 D x N matrix of column signals."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise RejectedInputError(f"expected a D x N matrix, got shape {X.shape}")
    return X


def squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared distances between the columns of A (D x P) and B (D x Q)."""
    if A.shape[0] != B.shape[0]:
        raise DimensionMismatchError(f"dimension mismatch: {A.shape[0]} vs {B.shape[0]}")
    sq = np.zeros((A.shape[1], B.shape[1]))
    for d in range(A.shape[0]):
        sq += (A[d][:, None] - B[d][None, :]) ** 2
    return sq


def _se_from_sq(sq: np.ndarray, params: KernelParams) -> np.ndarray:
    return params.sigma**2 * np.exp(-sq / params.ell**2)


def se_kernel(x_m, x_n, params: KernelParams) -> float:
    x_m = np.asarray(x_m, dtype=np.float64).reshape(-1, 1)
    x_n = np.asarray(x_n, dtype=np.float64).reshape(-1, 1)
    return float(_se_from_sq(squared_distances(x_m, x_n), params)[0, 0])


def reg_kernel(x_m, x_n, params: KernelParams) -> float:
    """kappa + sigma_reg^2, the constant-offset regularized kernel."""
    return se_kernel(x_m, x_n, params) + params.sigma_reg**2


def cross_gram(X, Z, params: KernelParams) -> np.ndarray:
    """Unregularized kernel between training columns X (D x N) and query columns Z (D x T)."""
    return _se_from_sq(squared_distances(as_columns(X), as_columns(Z)), params)


def regularize(K: np.ndarray, sigma_reg: float, mode: RegMode = "offset") -> np.ndarray:
    """Adds sigma_reg^2 to every entry (offset) or to the diagonal only (nugget)."""
    out = K.copy()
    if mode == "offset":
        out += sigma_reg**2
    elif mode == "nugget":
        out[np.diag_indices_from(out)] += sigma_reg**2
    else:
        raise RejectedInputError(f"unknown regularization mode: {mode}")
    return out


def gram(X, params: KernelParams, regularized: bool = False, mode: RegMode = "offset") -> GramMatrix:
    X = as_columns(X)
    if X.shape[1] == 0:
        raise RejectedInputError("cannot build a Gram matrix of zero signals")
    K = _se_from_sq(squared_distances(X, X), params)
    # mirror the upper triangle
    K = np.triu(K) + np.triu(K, 1).T
    if regularized:
        K = regularize(K, params.sigma_reg, mode)
    return GramMatrix(values=K, params=params, regularized=regularized, mode=mode)


# --- sigma_reg selection ---

def sigma_reg_ladder(K: GramMatrix | np.ndarray) -> list[float]:
    """0, eps, 2 eps, 4 eps, ... capped at sqrt(mean diagonal); eps = 1e-8 * cap."""
    values = K.values if isinstance(K, GramMatrix) else np.asarray(K)
    cap = float(np.sqrt(np.mean(np.diag(values))))
    if cap <= 0:
        raise RejectedInputError("Gram matrix has a non-positive mean diagonal")
    ladder = [0.0]
    step = 1e-8 * cap
    while step < cap:
        ladder.append(step)
        step *= 2.0
    ladder.append(cap)
    return ladder


def condition_number(K: np.ndarray, sigma_reg: float, mode: RegMode = "offset") -> float:
    """2-norm condition number of the regularized matrix; inf when it is not positive definite."""
    eigs = linalg.eigvalsh(regularize(np.asarray(K, dtype=np.float64), sigma_reg, mode))
    if eigs[0] <= 0:
        return float("inf")
    return float(eigs[-1] / eigs[0])


def is_well_conditioned(K: np.ndarray, sigma_reg: float, cond_threshold: float, mode: RegMode = "offset") -> bool:
    """Cholesky succeeds and the 2-norm condition number is within the threshold."""
    M = regularize(K, sigma_reg, mode)
    try:
        linalg.cholesky(M, lower=True)
    except linalg.LinAlgError:
        return False
    return condition_number(K, sigma_reg, mode) <= cond_threshold


def select_sigma_reg(K: GramMatrix | np.ndarray, cond_threshold: float = 1e8, mode: RegMode = "offset") -> float:
    """Smallest ladder rung giving a factorizable, well-conditioned regularized matrix."""
    if cond_threshold <= 1:
        raise RejectedInputError("cond_threshold must exceed 1")
    values = K.values if isinstance(K, GramMatrix) else np.asarray(K, dtype=np.float64)
    ladder = sigma_reg_ladder(values)

    if mode == "nugget":
        # a diagonal shift moves every eigenvalue by sigma_reg^2
        eigs = linalg.eigvalsh(values)
        lo, hi = eigs[0], eigs[-1]
        for s in ladder:
            shifted_lo = lo + s**2
            if shifted_lo > 0 and (hi + s**2) / shifted_lo <= cond_threshold:
                if is_well_conditioned(values, s, cond_threshold, mode):
                    logger.debug("sigma_reg=%g selected (nugget)", s)
                    return s
    else:
        for s in ladder:
            if is_well_conditioned(values, s, cond_threshold, mode):
                logger.debug("sigma_reg=%g selected (offset)", s)
                return s

    raise ConditioningError(
        "no sigma_reg on the ladder makes the Gram matrix well-conditioned",
        diagnostics={"mode": mode, "cond_threshold": cond_threshold, "ladder_top": ladder[-1]},
    )


# --- centering and the kernel Mahalanobis oracle ---

def center_gram(K: GramMatrix | np.ndarray) -> GramMatrix | np.ndarray:
    """Double centering H K H with H = I - (1/N) 11^T."""
    values = K.values if isinstance(K, GramMatrix) else np.asarray(K, dtype=np.float64)
    if isinstance(K, GramMatrix) and K.regularized:
        raise RejectedInputError("center_gram expects an unregularized Gram matrix")
    row_means = values.mean(axis=1, keepdims=True)
    col_means = values.mean(axis=0, keepdims=True)
    centered = values - row_means - col_means + values.mean()
    centered = 0.5 * (centered + centered.T)
    if isinstance(K, GramMatrix):
        return GramMatrix(values=centered, params=K.params, regularized=False, mode=K.mode)
    return centered


def center_test_kernel(K: np.ndarray, k_star: np.ndarray, k_starstar: float | np.ndarray):
    """Centers test-point kernel values with respect to the training mean in feature space.

    k_star is N or N x T; k_starstar is a scalar or length-T vector.
    """
    K = np.asarray(K, dtype=np.float64)
    k_star = np.asarray(k_star, dtype=np.float64)
    train_means = K.mean(axis=1)
    grand = K.mean()
    star_means = k_star.mean(axis=0)
    if k_star.ndim == 1:
        kc = k_star - train_means - star_means + grand
    else:
        kc = k_star - train_means[:, None] - star_means[None, :] + grand
    kss = np.asarray(k_starstar, dtype=np.float64) - 2.0 * star_means + grand
    return kc, kss


def kernel_mahalanobis_oracle(K_centered, k_star_centered, k_starstar_centered, ridge: float, tol: float = 1e-10):
    """Ridge-regularized Mahalanobis distance to the class mean in feature space.

    Built from the eigendecomposition of the centered Gram matrix; the feature
    covariance is (1/N) sum of outer products plus ridge * I.
    """
    if ridge <= 0:
        raise RejectedInputError("ridge must be positive")
    Kc = K_centered.values if isinstance(K_centered, GramMatrix) else np.asarray(K_centered, dtype=np.float64)
    N = Kc.shape[0]
    lam, U = linalg.eigh(Kc)
    scale = max(1.0, float(np.abs(lam).max()))
    if lam[0] < -tol * scale * N:
        raise NumericalConsistencyError(f"centered Gram matrix is not PSD (min eigenvalue {lam[0]:.3e})")
    keep = lam > tol * scale
    lam, U = lam[keep], U[:, keep]

    k = np.asarray(k_star_centered, dtype=np.float64)
    kss = np.asarray(k_starstar_centered, dtype=np.float64)
    proj = U.T @ k
    proj_sq = (proj**2) / (lam if k.ndim == 1 else lam[:, None])
    feature_var = lam / N
    inside = np.sum(proj_sq / ((feature_var + ridge) if k.ndim == 1 else (feature_var + ridge)[:, None]), axis=0)
    residual = kss - np.sum(proj_sq, axis=0)
    return inside + np.maximum(residual, 0.0) / ridge
