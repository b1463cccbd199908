"""Scikit-learn style estimators wrapping the hand-written MLP.

These give the regression and sign-classification networks the familiar
``fit`` / ``predict`` / ``get_params`` surface so they compose with the
wider ecosystem (cloning, grid search, pipelines operating on arrays).
"""

from __future__ import annotations

import heapq
import logging
from typing import Iterator

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import mlp
from .mlp import MLPParams, TrainConfig, TrainReport

log = logging.getLogger(__name__)


def _train_config(est, max_epochs, patience) -> TrainConfig:
    return TrainConfig(
        learning_rate=est.learning_rate,
        batch_size=est.batch_size,
        max_epochs=max_epochs,
        patience=patience,
        seed=est.seed,
    )


def _split_validation(x, y, fraction, seed):
    n = x.shape[0]
    n_val = max(1, int(round(fraction * n)))
    if n_val >= n:
        raise ValueError("validation fraction leaves no training data")
    order = np.random.default_rng(seed).permutation(n)
    val, tr = order[:n_val], order[n_val:]
    return x[tr], y[tr], x[val], y[val]


class CoefficientRegressor(BaseEstimator, RegressorMixin):
    """MLP regression from expectation vectors to coefficient vectors.

    Predictions are unit-normalized: only the coefficient direction is
    identifiable from eigenstate expectations, and the cosine training loss
    is scale-free to match.

    Parameters
    ----------
    hidden_dims : sizes of the two hidden LeakyReLU layers.
    validation_fraction : rows held out for early stopping when no explicit
        validation set is passed to ``fit``.
    warm_start_params : optional ``MLPParams`` to transfer-initialize from.
    """

    def __init__(
        self,
        hidden_dims=(64, 32),
        learning_rate=1e-3,
        batch_size=32,
        max_epochs=500,
        patience=50,
        validation_fraction=0.1,
        seed=0,
        warm_start_params=None,
    ):
        self.hidden_dims = hidden_dims
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.warm_start_params = warm_start_params

    def fit(self, X, y, *, X_val=None, y_val=None):
        X = check_array(X, dtype=float)
        y = check_array(y, dtype=float)
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y disagree on the number of samples")
        if X_val is None:
            X, y, X_val, y_val = _split_validation(X, y, self.validation_fraction, self.seed)
        else:
            X_val = check_array(X_val, dtype=float)
            y_val = check_array(y_val, dtype=float)
        cfg = _train_config(self, self.max_epochs, self.patience)
        self.params_, self.report_ = mlp.train(
            X,
            y,
            X_val,
            y_val,
            cfg,
            loss="cosine",
            init=self.warm_start_params,
            hidden_dims=tuple(self.hidden_dims),
            output_dim=y.shape[1],
        )
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return mlp.predict_coefficients(self.params_, X)


class SignPatternClassifier(BaseEstimator):
    """Predicts the componentwise signs of the coefficient vector.

    Two heads share the training loop. The joint head is a softmax over all
    2**N patterns and is used while N <= joint_limit; beyond that, N
    independent two-way heads are trained and candidate patterns are ranked
    lazily by best-first search over products of per-coordinate confidences.
    """

    def __init__(
        self,
        hidden_dims=(64, 32),
        learning_rate=1e-3,
        batch_size=32,
        max_epochs=300,
        patience=30,
        validation_fraction=0.1,
        seed=0,
        head="auto",
        joint_limit=12,
    ):
        self.hidden_dims = hidden_dims
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.head = head
        self.joint_limit = joint_limit

    def fit(self, X, y, *, X_val=None, y_val=None):
        """``y``: array of pattern strings, or a (B, N) array whose signs
        define the patterns (zeros count as +)."""
        X = check_array(X, dtype=float)
        patterns = _as_patterns(y)
        if len(patterns) != X.shape[0]:
            raise ValueError("X and y disagree on the number of samples")
        self.n_coefficients_ = len(patterns[0])
        if any(len(p) != self.n_coefficients_ for p in patterns):
            raise ValueError("inconsistent pattern lengths")
        head = self.head
        if head == "auto":
            head = "joint" if self.n_coefficients_ <= self.joint_limit else "factorized"
        if head not in ("joint", "factorized"):
            raise ValueError(f"unknown head {head!r}")
        self.head_kind_ = head

        if head == "joint":
            targets = np.array([pattern_to_index(p) for p in patterns])
            output_dim = 1 << self.n_coefficients_
            loss = "softmax_ce"
            present = np.bincount(targets, minlength=output_dim)
            self.empty_classes_ = int((present == 0).sum())
            if self.empty_classes_:
                log.warning(
                    "%d of %d sign classes have no training samples; classes retained",
                    self.empty_classes_,
                    output_dim,
                )
        else:
            targets = np.array(
                [[1.0 if ch == "-" else 0.0 for ch in p] for p in patterns]
            )
            output_dim = self.n_coefficients_
            loss = "sigmoid_bce"
            self.empty_classes_ = None

        if X_val is None:
            X, targets, X_val, y_val = _split_validation(
                X, targets, self.validation_fraction, self.seed
            )
        else:
            X_val = check_array(X_val, dtype=float)
            y_val = _as_patterns(y_val)
            if head == "joint":
                y_val = np.array([pattern_to_index(p) for p in y_val])
            else:
                y_val = np.array([[1.0 if ch == "-" else 0.0 for ch in p] for p in y_val])
        cfg = _train_config(self, self.max_epochs, self.patience)
        self.params_, self.report_ = mlp.train(
            X,
            targets,
            X_val,
            y_val,
            cfg,
            loss=loss,
            hidden_dims=tuple(self.hidden_dims),
            output_dim=output_dim,
        )
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        return np.array([next(self.rank_patterns(row))[0] for row in X])

    def predict_proba(self, X):
        """Joint head: full softmax over all patterns, ordered by
        :func:`pattern_to_index`. Factorized head: per-coordinate minus-sign
        probabilities."""
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        logits = mlp.forward(self.params_, X)
        if self.head_kind_ == "joint":
            z = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(z)
            return e / e.sum(axis=1, keepdims=True)
        return 1.0 / (1.0 + np.exp(-logits))

    def rank_patterns(self, a) -> Iterator[tuple[str, float]]:
        """Yield (pattern, probability) in non-increasing probability order.

        Ties are broken lexicographically on the pattern string. The
        factorized head enumerates lazily, so taking a few candidates from
        2**N patterns stays cheap.
        """
        check_is_fitted(self, "params_")
        a = np.asarray(a, dtype=float).reshape(-1)
        probs = self.predict_proba(a.reshape(1, -1))[0]
        n = self.n_coefficients_
        if self.head_kind_ == "joint":
            order = sorted(range(probs.size), key=lambda i: (-probs[i], index_to_pattern(i, n)))
            for i in order:
                yield index_to_pattern(i, n), float(probs[i])
            return
        yield from _rank_factorized(probs)


def _rank_factorized(minus_probs: np.ndarray) -> Iterator[tuple[str, float]]:
    """Best-first enumeration over products of independent sign confidences.

    Nodes are sets of coordinates flipped away from their argmax; a node's
    children append or advance its largest flip index, which visits every
    subset exactly once in non-decreasing cost. Items of equal cost are
    drained together and yielded in lexicographic pattern order.
    """
    minus_probs = np.clip(minus_probs, 1e-300, 1 - 1e-16)
    best_signs = np.where(minus_probs > 0.5, "-", "+")
    log_best = np.log(np.maximum(minus_probs, 1 - minus_probs))
    # cost of flipping each coordinate away from its argmax
    flip_cost = log_best - np.log(np.minimum(minus_probs, 1 - minus_probs))
    order = np.argsort(flip_cost, kind="stable")
    costs = flip_cost[order]
    base = float(log_best.sum())

    def to_pattern(flips: tuple[int, ...]) -> str:
        signs = best_signs.copy()
        for pos in flips:
            coord = order[pos]
            signs[coord] = "-" if signs[coord] == "+" else "+"
        return "".join(signs)

    def push(flips: tuple[int, ...]):
        heapq.heappush(heap, (float(costs[list(flips)].sum()), to_pattern(flips), flips))

    heap: list[tuple[float, str, tuple[int, ...]]] = []
    push(())
    while heap:
        cost0 = heap[0][0]
        batch = []
        while heap and heap[0][0] == cost0:
            cost, pattern, flips = heapq.heappop(heap)
            batch.append(pattern)
            last = flips[-1] if flips else -1
            if last + 1 < costs.size:
                push(flips + (last + 1,))
                if flips:
                    push(flips[:-1] + (last + 1,))
        for pattern in sorted(batch):
            yield pattern, float(np.exp(base - cost0))


def _as_patterns(y) -> list[str]:
    arr = np.asarray(y)
    if arr.dtype.kind in ("U", "S"):
        return [str(p) for p in arr]
    arr = np.atleast_2d(arr.astype(float))
    return [signs_to_pattern(row) for row in arr]


def signs_to_pattern(c: np.ndarray) -> str:
    """Componentwise sign string of a coefficient vector; zeros map to +."""
    return "".join("-" if x < 0 else "+" for x in np.asarray(c, dtype=float))


def pattern_to_index(pattern: str) -> int:
    """Binary encoding with the first coordinate as the most significant bit
    and '-' as 1."""
    idx = 0
    for ch in pattern:
        if ch not in "+-":
            raise ValueError(f"bad sign pattern {pattern!r}")
        idx = (idx << 1) | (ch == "-")
    return idx


def index_to_pattern(index: int, n: int) -> str:
    return "".join("-" if (index >> (n - 1 - i)) & 1 else "+" for i in range(n))
