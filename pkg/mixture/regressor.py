# mixture/regressor.py
"""
Mixture -> validation-loss regression.

The default model is least-squares gradient boosting over depth-1 trees
(stumps) on the raw weight vector; ``kind="ridge"`` swaps in a ridge fit.
Training data is put into a canonical order first, so the fitted state depends
only on the multiset of runs.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Sequence, Tuple

import numpy as np

from mixture.sampling import corners, dirichlet_draws
from mixture.sweep import valid_runs
from schemas.mixture.schemas import MixtureSpec, ProxyRun
from utils.exceptions import LabErrorReason, require
from utils.logger import get_logger

logger = get_logger(__name__)

RIDGE_LAMBDA = 1e-3


@dataclass(frozen=True)
class Stump:
    feature: int
    threshold: float
    left: float
    right: float


@dataclass
class Regressor:
    kind: Literal["stumps", "ridge"]
    n_features: int
    base: float = 0.0
    learning_rate: float = 0.1
    stumps: List[Stump] = field(default_factory=list)
    coef: np.ndarray = None
    train_mse: float = 0.0
    n_runs: int = 0

    def predict(self, weights) -> np.ndarray:
        """Predicted loss for a (n, S) batch or a single weight vector."""
        X = np.atleast_2d(np.asarray(weights, dtype=np.float64))
        require(
            X.shape[1] == self.n_features,
            LabErrorReason.SHAPE_MISMATCH,
            f"regressor fitted on {self.n_features} shards, got {X.shape[1]}",
        )
        if self.kind == "ridge":
            return X @ self.coef + self.base
        out = np.full(X.shape[0], self.base)
        for stump in self.stumps:
            out += np.where(X[:, stump.feature] <= stump.threshold, stump.left, stump.right)
        return out

    def to_dict(self) -> Dict[str, object]:
        return {
            "kind": self.kind,
            "n_features": self.n_features,
            "base": self.base,
            "learning_rate": self.learning_rate,
            "n_trees": len(self.stumps),
            "stumps": [[s.feature, s.threshold, s.left, s.right] for s in self.stumps],
            "coef": None if self.coef is None else self.coef.tolist(),
            "train_mse": self.train_mse,
            "n_runs": self.n_runs,
        }


def canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    # lexsort keys run last-to-first: weight columns in order, then the target
    keys = np.column_stack([X, y]).T[::-1]
    return np.lexsort(keys)


def _best_split(X: np.ndarray, residual: np.ndarray, orders: List[np.ndarray]) -> Tuple[float, int, int]:
    """(gain, feature, position in that feature's order) of the best least-squares split."""
    n = residual.size
    total = residual.sum()
    best = (0.0, -1, -1)
    if n < 2:
        return best
    n_left = np.arange(1, n)
    for j, order in enumerate(orders):
        xs = X[order, j]
        csum = np.cumsum(residual[order])[:-1]
        gain = csum ** 2 / n_left + (total - csum) ** 2 / (n - n_left) - total ** 2 / n
        # only between distinct values
        gain = np.where(xs[1:] > xs[:-1], gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best[0]:
            best = (float(gain[k]), j, k)
    return best


def fit_stumps(X: np.ndarray, y: np.ndarray, n_trees: int, learning_rate: float) -> Regressor:
    n, n_features = X.shape
    base = float(y.mean())
    prediction = np.full(n, base)
    orders = [np.argsort(X[:, j], kind="stable") for j in range(n_features)]
    stumps: List[Stump] = []
    for _ in range(n_trees):
        residual = y - prediction
        gain, j, k = _best_split(X, residual, orders)
        if j < 0 or gain <= 1e-14 * max(1.0, float(residual @ residual)):
            break
        order = orders[j]
        xs = X[order, j]
        threshold = 0.5 * (xs[k] + xs[k + 1])
        go_left = X[:, j] <= threshold
        stump = Stump(
            feature=j,
            threshold=float(threshold),
            left=learning_rate * float(residual[go_left].mean()),
            right=learning_rate * float(residual[~go_left].mean()),
        )
        stumps.append(stump)
        prediction += np.where(go_left, stump.left, stump.right)
    model = Regressor("stumps", n_features, base, learning_rate, stumps)
    model.train_mse = float(np.mean((model.predict(X) - y) ** 2))
    return model


def fit_ridge(X: np.ndarray, y: np.ndarray, lam: float = RIDGE_LAMBDA) -> Regressor:
    x_mean, y_mean = X.mean(axis=0), y.mean()
    Xc = X - x_mean
    coef = np.linalg.solve(Xc.T @ Xc + lam * np.eye(X.shape[1]), Xc.T @ (y - y_mean))
    model = Regressor("ridge", X.shape[1], float(y_mean - x_mean @ coef), coef=coef)
    model.train_mse = float(np.mean((model.predict(X) - y) ** 2))
    return model


def fit_arrays(
    X: np.ndarray,
    y: np.ndarray,
    kind: Literal["stumps", "ridge"] = "stumps",
    n_trees: int = 500,
    learning_rate: float = 0.1,
) -> Regressor:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    require(X.ndim == 2 and X.shape[0] == y.size, LabErrorReason.SHAPE_MISMATCH, "one target per weight row")
    order = canonical_order(X, y)
    X, y = X[order], y[order]
    model = fit_stumps(X, y, n_trees, learning_rate) if kind == "stumps" else fit_ridge(X, y)
    model.n_runs = int(y.size)
    return model


def fit_regressor(
    runs: Sequence[ProxyRun],
    kind: Literal["stumps", "ridge"] = "stumps",
    n_trees: int = 500,
    learning_rate: float = 0.1,
) -> Regressor:
    """Fit on the non-diverged runs; needs at least two runs per shard."""
    usable = valid_runs(runs)
    require(len(usable) >= 1, LabErrorReason.TOO_FEW_RUNS, "no valid proxy runs")
    n_shards = usable[0].mixture.n_shards
    require(
        len(usable) >= 2 * n_shards,
        LabErrorReason.TOO_FEW_RUNS,
        f"{len(usable)} valid runs for {n_shards} shards; need {2 * n_shards}",
        n_runs=len(usable),
    )
    X = np.array([run.mixture.weights for run in usable])
    y = np.array([run.val_loss for run in usable])
    model = fit_arrays(X, y, kind, n_trees, learning_rate)
    logger.info("fitted %s regressor on %d runs, train MSE %.3g", kind, model.n_runs, model.train_mse)
    return model


def r_squared(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    ss_res = float(((y_true - y_pred) ** 2).sum())
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else float(ss_res == 0)


def select_mixture(regressor: Regressor, pool_size: int, rng: np.random.Generator) -> MixtureSpec:
    """Lowest predicted loss over ``pool_size`` fresh Dirichlet draws followed by the corners; first wins ties."""
    pool = dirichlet_draws(regressor.n_features, pool_size, rng) + corners(regressor.n_features)
    predictions = regressor.predict([m.weights for m in pool])
    return pool[int(np.argmin(predictions))]


def loss_percentile(loss: float, losses: Sequence[float]) -> float:
    """Fraction of ``losses`` strictly below ``loss``."""
    losses = np.asarray(losses, dtype=np.float64)
    losses = losses[np.isfinite(losses)]
    require(losses.size > 0, LabErrorReason.EMPTY_INPUT, "no reference losses")
    return float((losses < loss).mean())
