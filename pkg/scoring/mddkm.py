"""
Multiclass data description with an empirical kernel Mahalanobis score.

Training learns one shared (sigma, ell[, sigma_reg]) by minimizing the GP
negative log marginal likelihood of a smooth polynomial target over ALL
training classes jointly. Scoring evaluates, per class, the GP predictive
variance conditioned on that class's signals only. A single class is the
one-class GP special case.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy import linalg, optimize

from config import MddKmConfig
from errors import (
    DimensionMismatchError,
    NumericalConsistencyError,
    RejectedInputError,
    SchemaError,
    TrainingError,
)
from scoring.kernels import (
    KernelParams,
    RegMode,
    as_columns,
    condition_number,
    cross_gram,
    gram,
    is_well_conditioned,
    select_sigma_reg,
    squared_distances,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CLAMP_TOLERANCE = 1e-10

TargetFn = Callable[[np.ndarray], np.ndarray]

TARGETS: dict[str, TargetFn] = {
    "squared_norm": lambda X: np.sum(X * X, axis=0),
    "linear_sum": lambda X: np.sum(X, axis=0),
    "quadratic": lambda X: np.sum(X * X, axis=0) + np.sum(X, axis=0),
}


@dataclass(frozen=True)
class TrainingSet:
    """C labeled blocks of column signals sharing one input dimension."""

    blocks: tuple[np.ndarray, ...]
    labels: tuple[str, ...]

    def __init__(self, blocks, labels):
        blocks = tuple(as_columns(b) for b in blocks)
        labels = tuple(str(label) for label in labels)
        if not blocks:
            raise RejectedInputError("training set needs at least one class")
        if len(blocks) != len(labels):
            raise RejectedInputError("one label per class block")
        if len(set(labels)) != len(labels):
            raise RejectedInputError("class labels must be unique")
        dims = {b.shape[0] for b in blocks}
        if len(dims) != 1:
            raise DimensionMismatchError(f"class blocks disagree on dimension: {sorted(dims)}")
        for label, b in zip(labels, blocks):
            if b.shape[1] < 1:
                raise RejectedInputError(f"class {label} has no signals")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "labels", labels)

    @property
    def n_classes(self) -> int:
        return len(self.blocks)

    @property
    def dim(self) -> int:
        return self.blocks[0].shape[0]

    @property
    def X_train(self) -> np.ndarray:
        return np.concatenate(self.blocks, axis=1)


def target_vector(X, target: str | TargetFn = "squared_norm") -> np.ndarray:
    """y_n = y_target(x_n); the default target is the squared norm."""
    fn = TARGETS[target] if isinstance(target, str) else target
    return np.asarray(fn(as_columns(X)), dtype=np.float64)


# --- cost and gradient ---

def _factor(params: KernelParams, X, mode: RegMode):
    K = gram(X, params, regularized=True, mode=mode).values
    return K, linalg.cholesky(K, lower=True)


def nll_cost(params: KernelParams, X_train, y, mode: RegMode = "offset") -> float:
    """y^T K_reg^-1 y + log|K_reg|; +inf when K_reg does not factorize."""
    y = np.asarray(y, dtype=np.float64)
    try:
        _, L = _factor(params, X_train, mode)
    except linalg.LinAlgError:
        return np.inf
    alpha = linalg.cho_solve((L, True), y)
    return float(y @ alpha + 2.0 * np.sum(np.log(np.diag(L))))


def _cost_and_grad(params: KernelParams, X, y, mode: RegMode, with_sigma_reg: bool):
    try:
        K, L = _factor(params, X, mode)
    except linalg.LinAlgError:
        return np.inf, None
    alpha = linalg.cho_solve((L, True), y)
    cost = float(y @ alpha + 2.0 * np.sum(np.log(np.diag(L))))
    K_inv = linalg.cho_solve((L, True), np.eye(K.shape[0]))

    sq = squared_distances(X, X)
    E = params.sigma**2 * np.exp(-sq / params.ell**2)
    derivs = [
        2.0 * E,                               # d/d log sigma
        E * (2.0 * sq / params.ell**2),        # d/d log ell
    ]
    if with_sigma_reg:
        R = np.ones_like(K) if mode == "offset" else np.eye(K.shape[0])
        derivs.append(2.0 * params.sigma_reg**2 * R)

    grad = np.array([-(alpha @ dK @ alpha) + np.sum(K_inv * dK) for dK in derivs])
    return cost, grad


def nll_grad(params: KernelParams, X_train, y, mode: RegMode = "offset", with_sigma_reg: bool = False) -> np.ndarray:
    """Analytic gradient over (log sigma, log ell[, log sigma_reg])."""
    X = as_columns(X_train)
    cost, grad = _cost_and_grad(params, X, np.asarray(y, dtype=np.float64), mode, with_sigma_reg)
    if grad is None:
        raise NumericalConsistencyError("regularized Gram matrix does not factorize at these parameters")
    return grad


# --- model ---

@dataclass(frozen=True)
class ClassBlock:
    label: str
    X: np.ndarray
    chol: np.ndarray


@dataclass(frozen=True)
class MddKmModel:
    """Learned hyperparameters plus each class's signals and Cholesky factor."""

    params: KernelParams
    classes: tuple[ClassBlock, ...]
    mode: RegMode = "offset"
    metadata: dict = field(default_factory=dict)

    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.classes]

    @property
    def dim(self) -> int:
        return self.classes[0].X.shape[0]

    @classmethod
    def from_training_set(cls, training_set: TrainingSet, params: KernelParams, mode: RegMode = "offset", metadata=None):
        blocks = []
        for label, X_c in zip(training_set.labels, training_set.blocks):
            K_c = gram(X_c, params, regularized=True, mode=mode).values
            try:
                L_c = linalg.cholesky(K_c, lower=True)
            except linalg.LinAlgError as e:
                raise NumericalConsistencyError(f"class {label}: regularized Gram does not factorize") from e
            blocks.append(ClassBlock(label=label, X=X_c.copy(), chol=L_c))
        return cls(params=params, classes=tuple(blocks), mode=mode, metadata=dict(metadata or {}))

    def score(self, x_star) -> np.ndarray:
        x = np.asarray(x_star, dtype=np.float64)
        if x.ndim != 1:
            raise DimensionMismatchError("score expects a single vector; use score_batch for matrices")
        return self.score_batch(x[:, None])[:, 0]

    def score_batch(self, X_test) -> np.ndarray:
        """C x T matrix of raw scores d_c(x_t)."""
        Z = as_columns(X_test)
        if Z.shape[0] != self.dim:
            raise DimensionMismatchError(f"test signals have dimension {Z.shape[0]}, model expects {self.dim}")
        k_ss = self.params.signal_variance
        out = np.empty((len(self.classes), Z.shape[1]))
        for c, block in enumerate(self.classes):
            k_star = cross_gram(block.X, Z, self.params)
            for t in range(Z.shape[1]):
                # column-at-a-time so batch and single calls agree
                v = linalg.solve_triangular(block.chol, k_star[:, t], lower=True)
                out[c, t] = k_ss - v @ v
        return clamp_scores(out)

    # --- serialization ---
    def to_document(self) -> dict:
        return ModelDocument(
            schema_version=SCHEMA_VERSION,
            params=self.params,
            mode=self.mode,
            classes=[
                ClassDocument(label=b.label, X=b.X.tolist(), chol=b.chol.tolist()) for b in self.classes
            ],
            metadata=self.metadata,
        ).model_dump(mode="json")

    @classmethod
    def from_document(cls, document: dict) -> "MddKmModel":
        try:
            doc = ModelDocument.model_validate(document)
        except ValidationError as e:
            raise SchemaError(f"invalid MDD-KM model document: {e}") from e
        classes = []
        for c in doc.classes:
            X = np.asarray(c.X, dtype=np.float64)
            L = np.asarray(c.chol, dtype=np.float64)
            K = gram(X, doc.params, regularized=True, mode=doc.mode).values
            if np.linalg.norm(L @ L.T - K) > 1e-8 * np.linalg.norm(K):
                raise SchemaError(f"class {c.label}: stored factor does not reproduce its regularized Gram matrix")
            classes.append(ClassBlock(label=c.label, X=X, chol=L))
        return cls(params=doc.params, classes=tuple(classes), mode=doc.mode, metadata=doc.metadata)


def clamp_scores(d: np.ndarray) -> np.ndarray:
    """Roundoff negatives in [-1e-10, 0) become 0; anything lower is a bug."""
    if np.any(d < -CLAMP_TOLERANCE):
        raise NumericalConsistencyError(f"negative class score {float(d.min()):.3e} beyond roundoff")
    return np.where(d < 0.0, 0.0, d)


def score(model: MddKmModel, x_star) -> np.ndarray:
    return model.score(x_star)


def score_batch(model: MddKmModel, X_test) -> np.ndarray:
    return model.score_batch(X_test)


class ClassDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    label: str
    X: list[list[float]]
    chol: list[list[float]]


class ModelDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1]
    kind: Literal["mddkm"] = "mddkm"
    params: KernelParams
    mode: Literal["offset", "nugget"]
    classes: list[ClassDocument] = Field(min_length=1)
    metadata: dict = Field(default_factory=dict)


# --- training ---

def median_pairwise_distance(X: np.ndarray) -> float:
    sq = squared_distances(X, X)
    iu = np.triu_indices(X.shape[1], k=1)
    d = np.sqrt(sq[iu])
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


class MddKmTrainer:
    """
    Hyperparameter learning for MDD-KM.
    Multistart L-BFGS-B in log-parameter space from deterministic starts,
    then sigma_reg is re-selected at the learned (sigma, ell) and the best
    start re-optimized until the selection settles.
    """

    def __init__(self, config: MddKmConfig | None = None, target: str | TargetFn | None = None):
        self.config = config or MddKmConfig()
        self.target = target if target is not None else self.config.target

    def _starts(self, X: np.ndarray, y: np.ndarray) -> list[tuple[float, float]]:
        ell0 = median_pairwise_distance(X)
        sig0 = float(np.std(y))
        if sig0 <= 0:
            sig0 = float(np.sqrt(np.mean(np.abs(y)))) or 1.0
        return [(sig0 * fs, ell0 * fl) for fl, fs in self.config.starts]

    def _select(self, X: np.ndarray, sigma: float, ell: float) -> tuple[float, np.ndarray]:
        K = gram(X, KernelParams(sigma=sigma, ell=ell), regularized=False).values
        return select_sigma_reg(K, self.config.cond_threshold, self.config.reg_mode), K

    def _optimize(self, X, y, log_sigma: float, log_ell: float, sigma_reg: float, bounds_around=None):
        """One L-BFGS-B run; returns (trace entry, best theta, best cost)."""
        cfg = self.config
        mode = cfg.reg_mode
        centre = bounds_around if bounds_around is not None else (log_sigma, log_ell)
        theta0 = [log_sigma, log_ell]
        bounds = [
            (centre[0] - cfg.log_bound_width, centre[0] + cfg.log_bound_width),
            (centre[1] - cfg.log_bound_width, centre[1] + cfg.log_bound_width),
        ]
        if cfg.optimize_sigma_reg:
            floor = np.log(max(sigma_reg, 1e-12 * np.exp(log_sigma)))
            theta0.append(floor)
            bounds.append((floor, max(floor, centre[0] + cfg.log_bound_width)))
        theta0 = np.array(theta0)

        visited = {"theta": None, "cost": np.inf}

        def objective(theta):
            params = self._params(theta, sigma_reg)
            cost, grad = _cost_and_grad(params, X, y, mode, cfg.optimize_sigma_reg)
            if grad is None:
                return np.inf, np.zeros_like(theta)
            if cost < visited["cost"]:
                visited["theta"], visited["cost"] = theta.copy(), cost
            return cost, grad

        initial_cost, _ = objective(theta0)
        if not np.isfinite(initial_cost):
            return {"initial_cost": None, "status": "infeasible"}, None, np.inf
        result = optimize.minimize(
            objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": cfg.max_iter},
        )
        entry = {
            "initial_cost": float(initial_cost),
            "final_cost": float(visited["cost"]),
            "iterations": int(result.nit),
            "status": str(result.message),
        }
        return entry, visited["theta"], visited["cost"]

    def train(self, training_set: TrainingSet, seed: int = 0) -> MddKmModel:
        cfg = self.config
        mode = cfg.reg_mode
        X = training_set.X_train
        y = target_vector(X, self.target)
        starts = self._starts(X, y)

        # 1. sigma_reg from the conditioning rule at the central start
        sigma_reg, _ = self._select(X, *starts[0])

        # 2. multistart optimization
        trace = []
        best_theta, best_cost, best_start = None, np.inf, None
        for i, (sigma0, ell0) in enumerate(starts):
            entry, theta, cost = self._optimize(X, y, np.log(sigma0), np.log(ell0), sigma_reg)
            trace.append({"start": i, "sigma": sigma0, "ell": ell0, "sigma_reg": sigma_reg, **entry})
            if entry["status"] == "infeasible":
                logger.debug("start %d infeasible", i)
            elif cost < best_cost:
                best_theta, best_cost, best_start = theta, cost, i

        if best_theta is None:
            raise TrainingError(
                "every multistart initialization was infeasible",
                diagnostics={"sigma_reg": sigma_reg, "starts": trace},
            )
        multistart_cost = best_cost

        # 3. sigma_reg again at the learned (sigma, ell) until the choice settles
        rounds = []
        for round_ in range(1, cfg.max_reg_rounds + 1):
            learned = self._params(best_theta, sigma_reg)
            required, K = self._select(X, learned.sigma, learned.ell)
            if cfg.optimize_sigma_reg:
                settled = is_well_conditioned(K, learned.sigma_reg, cfg.cond_threshold, mode)
                final_reg = learned.sigma_reg if settled else required
            else:
                settled = same_rung(required, sigma_reg)
                final_reg = required
            rounds.append({
                "round": round_,
                "sigma": learned.sigma,
                "ell": learned.ell,
                "sigma_reg": final_reg,
                "condition": condition_number(K, final_reg, mode),
                "cost": float(best_cost),
            })
            if settled or round_ == cfg.max_reg_rounds:
                break
            sigma_reg = final_reg
            start = starts[best_start]
            entry, theta, cost = self._optimize(
                X, y, best_theta[0], best_theta[1], sigma_reg, bounds_around=np.log(start),
            )
            if theta is None:
                break
            best_theta, best_cost = theta, cost
        if not settled:
            logger.warning(
                "sigma_reg did not settle after %d rounds; using %.4g at the last learned parameters",
                len(rounds), final_reg,
            )

        params = KernelParams(
            sigma=float(np.exp(best_theta[0])), ell=float(np.exp(best_theta[1])), sigma_reg=final_reg
        )
        cost = nll_cost(params, X, y, mode)
        logger.info(
            "MDD-KM trained: sigma=%.4g ell=%.4g sigma_reg=%.4g cond=%.3g cost=%.6g",
            params.sigma, params.ell, params.sigma_reg, rounds[-1]["condition"], cost,
        )
        metadata = {
            "seed": seed,
            "cost": float(cost),
            "multistart_cost": float(multistart_cost),
            "optimizer_trace": trace,
            "sigma_reg_rounds": rounds,
            "condition": rounds[-1]["condition"],
            "n_train": int(X.shape[1]),
            "target": self.target if isinstance(self.target, str) else "custom",
        }
        return MddKmModel.from_training_set(training_set, params, mode=mode, metadata=metadata)

    def _params(self, theta, sigma_reg: float) -> KernelParams:
        sr = float(np.exp(theta[2])) if self.config.optimize_sigma_reg else sigma_reg
        return KernelParams(sigma=float(np.exp(theta[0])), ell=float(np.exp(theta[1])), sigma_reg=sr)


def same_rung(a: float, b: float) -> bool:
    """True when two ladder picks are equal or at most one doubling apart."""
    if a == b:
        return True
    if a <= 0 or b <= 0:
        return False
    return abs(np.log2(a / b)) <= 1.0


def train(training_set: TrainingSet, optimizer_config: MddKmConfig | None = None, seed: int = 0) -> MddKmModel:
    return MddKmTrainer(optimizer_config).train(training_set, seed=seed)


def train_one_class(X, label: str = "target", optimizer_config: MddKmConfig | None = None, seed: int = 0) -> MddKmModel:
    """One-class GP: MDD-KM with a single training class."""
    return train(TrainingSet([X], [label]), optimizer_config, seed=seed)
