"""Sign-pattern routing for the ill-posed middle-of-spectrum regime.

Pipeline: partition training data by the componentwise signs of the
coefficient vector, train one regressor per non-empty part (walking the
parts in Gray-code order so each can transfer-initialize from its
predecessor), classify an incoming expectation vector into a likelihood
ranking of sign patterns, and verify candidates against the forward map.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import mlp
from .datasets import Dataset
from .errors import IntegrityError, ParseError
from .estimators import SignPatternClassifier, signs_to_pattern
from .mlp import MLPParams, TrainConfig
from .operators import OperatorSet
from .spectral import assemble, eigendecompose, expectation_columns

log = logging.getLogger(__name__)

ROUTER_FORMAT_VERSION = 1


def sign_partition(ds: Dataset) -> dict[str, Dataset]:
    """Split a dataset by the sign pattern of each sample's coefficients."""
    buckets: dict[str, list] = {}
    for s in ds.samples:
        buckets.setdefault(signs_to_pattern(s.c), []).append(s)
    parts = {
        pattern: replace(ds, samples=samples, degenerate_excluded=0)
        for pattern, samples in buckets.items()
    }
    counts = {p: len(d) for p, d in sorted(parts.items())}
    log.info("sign partition: %d parts, sizes %s", len(parts), counts)
    return parts


def gray_order(n: int) -> list[str]:
    """All 2**n sign patterns, consecutive ones differing in exactly one
    sign; starts at the all-plus pattern."""
    out = []
    for i in range(1 << n):
        g = i ^ (i >> 1)
        out.append("".join("-" if (g >> (n - 1 - j)) & 1 else "+" for j in range(n)))
    return out


def train_parts(
    partition: dict[str, Dataset],
    cfg: TrainConfig,
    *,
    hidden_dims: tuple[int, ...] = (64, 32),
    val_fraction: float = 0.1,
    min_part_size: int = 4,
) -> tuple[dict[str, MLPParams | None], dict[str, int]]:
    """Train one regressor per sign part along the Gray-code transfer chain.

    Each part's network starts from the weights of the previous trained part
    (the first from a fresh init). Parts absent from ``partition`` or smaller
    than ``min_part_size`` get an explicit ``None`` marker. Returns the
    trained parts and the epochs each needed (for transfer diagnostics).
    """
    if not partition:
        raise ValueError("empty partition")
    n = len(next(iter(partition)))
    parts: dict[str, MLPParams | None] = {}
    epochs: dict[str, int] = {}
    previous: MLPParams | None = None
    for pattern in gray_order(n):
        ds = partition.get(pattern)
        if ds is None or len(ds) < min_part_size:
            parts[pattern] = None
            continue
        a, c, _ = ds.arrays()
        x_tr, y_tr, x_val, y_val = _split_rows(a, c, val_fraction, cfg.seed)
        params, report = mlp.train(
            x_tr, y_tr, x_val, y_val, cfg,
            loss="cosine", init=previous, hidden_dims=hidden_dims, output_dim=c.shape[1],
        )
        parts[pattern] = params
        epochs[pattern] = report.epochs_run
        previous = params
    if all(p is None for p in parts.values()):
        raise ValueError("no sign part had enough samples to train")
    return parts, epochs


def _split_rows(x, y, fraction, seed):
    n = x.shape[0]
    n_val = max(1, int(round(fraction * n)))
    order = np.random.default_rng(seed).permutation(n)
    val, tr = order[:n_val], order[n_val:]
    return x[tr], y[tr], x[val], y[val]


@dataclass(frozen=True)
class VerificationPolicy:
    """Acceptance rule for routed candidates: smallest relative forward-map
    residual over all levels must not exceed ``residual_tol``."""

    residual_tol: float = 0.05
    max_candidates: int = 8

    def __post_init__(self):
        if self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be >= 1")


@dataclass
class RouterModel:
    classifier: SignPatternClassifier
    parts: dict[str, MLPParams | None]
    ops_hash: str
    n_coefficients: int

    def trained_patterns(self) -> list[str]:
        return [p for p, params in self.parts.items() if params is not None]


@dataclass
class RouteDiagnostics:
    verified: bool
    pattern: str | None = None
    residual: float = np.inf
    level: int = -1
    tried: list[tuple[str, float, float]] = field(default_factory=list)  # (pattern, prob, residual)


def forward_residual(c_hat: np.ndarray, a: np.ndarray, ops: OperatorSet) -> tuple[float, int]:
    """Relative residual ``min_j ||a(psi_j) - a|| / ||a||`` over all levels of
    the candidate Hamiltonian, and the minimizing level."""
    a = np.asarray(a, dtype=float)
    norm = float(np.linalg.norm(a))
    if norm == 0:
        return np.inf, -1
    spectrum = eigendecompose(assemble(c_hat, ops))
    cols = expectation_columns(spectrum.eigenvectors, ops)
    residuals = np.linalg.norm(cols - a[:, None], axis=0) / norm
    j = int(residuals.argmin())
    return float(residuals[j]), j


def route_and_predict(
    router: RouterModel,
    a: np.ndarray,
    ops: OperatorSet,
    policy: VerificationPolicy = VerificationPolicy(),
) -> tuple[np.ndarray, RouteDiagnostics]:
    """Predict coefficients by trying part regressors in likelihood order.

    Accepts the first candidate whose forward-map residual clears the policy
    tolerance; if none does within ``max_candidates`` tried parts, returns
    the best-residual candidate flagged unverified.
    """
    if router.ops_hash != ops.content_hash():
        raise IntegrityError("router was trained on a different operator set")
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.shape[0] != router.n_coefficients:
        raise ValueError(f"expected {router.n_coefficients} expectations, got {a.shape[0]}")
    diag = RouteDiagnostics(verified=False)
    best_c = None
    for pattern, prob in router.classifier.rank_patterns(a):
        params = router.parts.get(pattern)
        if params is None:
            continue
        c_hat = mlp.predict_coefficients(params, a)
        residual, level = forward_residual(c_hat, a, ops)
        diag.tried.append((pattern, float(prob), residual))
        if residual < diag.residual:
            diag.residual = residual
            diag.pattern = pattern
            diag.level = level
            best_c = c_hat
        if residual <= policy.residual_tol:
            diag.verified = True
            return c_hat, diag
        if len(diag.tried) >= policy.max_candidates:
            break
    if best_c is None:
        # no trained part was reachable; fall back to a flat unverified guess
        best_c = np.full(router.n_coefficients, 1.0 / np.sqrt(router.n_coefficients))
    return best_c, diag


def save_router(router: RouterModel, dirpath: str | Path) -> None:
    """Bundle layout: manifest.json, classifier.json, one ``<pattern>.json``
    regressor checkpoint per trained part."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    n = router.n_coefficients
    manifest = {
        "version": ROUTER_FORMAT_VERSION,
        "N": n,
        "head_kind": router.classifier.head_kind_,
        "gray_order": gray_order(n),
        "ops_hash": router.ops_hash,
        "trained_parts": router.trained_patterns(),
    }
    (dirpath / "manifest.json").write_text(json.dumps(manifest, indent=1))
    mlp.save_checkpoint(
        router.classifier.params_,
        dirpath / "classifier.json",
        operator_set_hash=router.ops_hash,
        extra={"head_kind": router.classifier.head_kind_, "n_coefficients": n},
    )
    for pattern in router.trained_patterns():
        mlp.save_checkpoint(
            router.parts[pattern],
            dirpath / f"{pattern}.json",
            operator_set_hash=router.ops_hash,
        )


def load_router(dirpath: str | Path) -> RouterModel:
    dirpath = Path(dirpath)
    manifest_path = dirpath / "manifest.json"
    if not manifest_path.exists():
        raise ParseError(f"{dirpath}: missing manifest.json")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{manifest_path}: invalid JSON: {exc.msg}") from exc
    if manifest.get("version") != ROUTER_FORMAT_VERSION:
        raise ParseError(f"{manifest_path}: unsupported version")
    n = int(manifest["N"])
    cls_params, cls_meta = mlp.load_checkpoint(dirpath / "classifier.json")
    classifier = SignPatternClassifier(head=cls_meta["head_kind"])
    classifier.params_ = cls_params
    classifier.head_kind_ = cls_meta["head_kind"]
    classifier.n_coefficients_ = n
    classifier.n_features_in_ = cls_params.layer_dims[0]
    parts: dict[str, MLPParams | None] = {p: None for p in gray_order(n)}
    for pattern in manifest["trained_parts"]:
        params, _ = mlp.load_checkpoint(dirpath / f"{pattern}.json")
        parts[pattern] = params
    return RouterModel(
        classifier=classifier,
        parts=parts,
        ops_hash=manifest["ops_hash"],
        n_coefficients=n,
    )
