"""
Hierarchical linear dynamical system front end.

Stacked random-walk layers, each coarser layer drifting the one below through
a block coupling matrix, observed at the bottom layer through H. The augmented
state is ordered top layer first, so the transition matrix is block
lower-bidiagonal with identity diagonal blocks. Kalman filtering gives one
top-layer posterior mean per sliding window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from config import HldsConfig
from errors import DimensionMismatchError, NumericalConsistencyError, RejectedInputError
from features.audio import preprocess

logger = logging.getLogger(__name__)


def build_coupling(N: int, S: int) -> np.ndarray:
    """N x S stack of S blocks; block s is N/S x S with value 2S/N in column s."""
    if N < 1 or S < 1 or N % S:
        raise RejectedInputError(f"coupling needs S to divide N (got N={N}, S={S})")
    rows = N // S
    B = np.zeros((N, S))
    for s in range(S):
        B[s * rows:(s + 1) * rows, s] = 2.0 * S / N
    return B


@dataclass(frozen=True)
class AugmentedModel:
    F: np.ndarray        # transition
    H: np.ndarray        # (0 ... 0 H)
    Q: np.ndarray        # block-diagonal innovation covariance
    R: np.ndarray        # r_y * I
    layer_dims: tuple[int, ...]    # bottom-to-top
    initial_variance: float = 10.0

    @property
    def state_dim(self) -> int:
        return self.F.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.H.shape[0]

    @property
    def top_slice(self) -> slice:
        """Top layer comes first in the augmented state."""
        return slice(0, self.layer_dims[-1])

    def initial_state(self) -> "HldsState":
        n = self.state_dim
        return HldsState(mean=np.zeros(n), cov=self.initial_variance * np.eye(n), t=0)


def assemble(config: HldsConfig) -> AugmentedModel:
    dims = list(config.layer_dims)
    top_down = dims[::-1]
    n = sum(dims)
    offsets = np.cumsum([0] + top_down)

    F = np.eye(n)
    for i in range(len(top_down) - 1):
        upper, lower = top_down[i], top_down[i + 1]
        # layer below is drifted by the coupled layer above
        F[offsets[i + 1]:offsets[i + 2], offsets[i]:offsets[i + 1]] = build_coupling(lower, upper)

    if config.observation_matrix == "identity":
        H_obs = np.eye(dims[0])
    else:
        H_obs = np.asarray(config.observation_matrix, dtype=np.float64)
    H = np.zeros((H_obs.shape[0], n))
    H[:, offsets[-2]:] = H_obs

    q = np.concatenate([np.full(d, r) for d, r in zip(top_down, config.layer_innovations[::-1])])
    Q = np.diag(q)
    R = config.observation_variance * np.eye(H_obs.shape[0])
    return AugmentedModel(F=F, H=H, Q=Q, R=R, layer_dims=tuple(dims), initial_variance=config.initial_variance)


@dataclass(frozen=True)
class HldsState:
    mean: np.ndarray
    cov: np.ndarray
    t: int = 0


def _predict_cov(model: AugmentedModel, cov: np.ndarray) -> np.ndarray:
    return model.F @ cov @ model.F.T + model.Q


def _gain(model: AugmentedModel, cov_pred: np.ndarray):
    """Kalman gain and Joseph-form posterior covariance from a predicted covariance."""
    PHt = cov_pred @ model.H.T
    S = model.H @ PHt + model.R
    try:
        factor = linalg.cho_factor(S, lower=True)
    except linalg.LinAlgError as e:
        raise NumericalConsistencyError("innovation covariance is not invertible") from e
    K = linalg.cho_solve(factor, PHt.T).T
    I_KH = np.eye(model.state_dim) - K @ model.H
    cov = I_KH @ cov_pred @ I_KH.T + K @ model.R @ K.T
    return K, 0.5 * (cov + cov.T)


def kalman_step(model: AugmentedModel, state: HldsState, y_t) -> HldsState:
    y = np.asarray(y_t, dtype=np.float64)
    if y.shape != (model.obs_dim,):
        raise DimensionMismatchError(f"observation has shape {y.shape}, model expects ({model.obs_dim},)")
    if state.mean.shape != (model.state_dim,):
        raise DimensionMismatchError("state does not match the model's augmented dimension")

    mean_pred = model.F @ state.mean
    K, cov = _gain(model, _predict_cov(model, state.cov))
    mean = mean_pred + K @ (y - model.H @ mean_pred)
    return HldsState(mean=mean, cov=cov, t=state.t + 1)


class HldsFilter:
    """
    Runs the filter over whole observation sequences.
    The covariance recursion does not depend on the data, so gains are
    computed once per model and reused until they stop changing.
    """

    def __init__(self, model: AugmentedModel, gain_tol: float = 1e-12, max_schedule: int = 5000):
        self.model = model
        self.gain_tol = gain_tol
        self.max_schedule = max_schedule
        self._gains: list[np.ndarray] = []
        self._last_cov: np.ndarray | None = None
        self._converged = False

    def _ensure_gains(self, steps: int):
        cov = self.model.initial_state().cov if not self._gains else self._last_cov
        while len(self._gains) < steps and not self._converged:
            K, cov = _gain(self.model, _predict_cov(self.model, cov))
            if self._gains and np.max(np.abs(K - self._gains[-1])) <= self.gain_tol * max(1.0, np.max(np.abs(K))):
                self._converged = True
                logger.debug("HLDS gain converged after %d steps", len(self._gains))
            self._gains.append(K)
            self._last_cov = cov
            if len(self._gains) >= self.max_schedule:
                self._converged = True

    def gain(self, t: int) -> np.ndarray:
        """Gain applied at step t (0-based)."""
        self._ensure_gains(t + 1)
        return self._gains[min(t, len(self._gains) - 1)]

    def filter_means(self, Y: np.ndarray) -> np.ndarray:
        """T x state_dim posterior means for observations Y (T x M)."""
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim != 2 or Y.shape[1] != self.model.obs_dim:
            raise DimensionMismatchError(f"observations must be T x {self.model.obs_dim}, got {Y.shape}")
        self._ensure_gains(Y.shape[0])
        F, H = self.model.F, self.model.H
        mean = np.zeros(self.model.state_dim)
        out = np.empty((Y.shape[0], self.model.state_dim))
        for t, y in enumerate(Y):
            mean_pred = F @ mean
            mean = mean_pred + self.gain(t) @ (y - H @ mean_pred)
            out[t] = mean
        return out


def extract_features(audio, config: HldsConfig | None = None, hlds_filter: HldsFilter | None = None) -> np.ndarray:
    """T x top_dim z-representations, one per sliding window."""
    config = config or HldsConfig()
    Y = preprocess(audio, config.window_len, config.overlap)
    hlds_filter = hlds_filter or HldsFilter(assemble(config))
    means = hlds_filter.filter_means(Y)
    return means[:, hlds_filter.model.top_slice]
