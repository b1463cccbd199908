"""Operator fidelity and per-level evaluation reports.

Fidelity is the normalized Hilbert-Schmidt overlap mapped onto [0, 1]:
``1/2 + Tr(A B) / (2 sqrt(Tr A^2) sqrt(Tr B^2))``. Proportional operators
score 1, anti-proportional 0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datasets import Dataset
from .operators import OperatorSet
from .pauli import hs_inner


def fidelity(h_rec: np.ndarray, h: np.ndarray) -> float:
    """Fidelity between two Hermitian operators via the trace formula."""
    n_rec = hs_inner(h_rec, h_rec)
    n_true = hs_inner(h, h)
    if n_rec <= 0 or n_true <= 0:
        raise ValueError("fidelity is undefined for a zero operator")
    val = 0.5 + hs_inner(h_rec, h) / (2.0 * np.sqrt(n_rec) * np.sqrt(n_true))
    return float(min(1.0, max(0.0, val)))


def gram_matrix(ops: OperatorSet) -> np.ndarray:
    """Pairwise trace inner products Tr(A_i A_j), computed once per set."""
    g = np.einsum("nij,mji->nm", ops.matrices, ops.matrices)
    return np.real_if_close(g, tol=1e6).real


def coefficient_fidelity(
    c_rec: np.ndarray, c: np.ndarray, gram: np.ndarray
) -> np.ndarray:
    """Fidelity on coefficient vectors through the Gram matrix.

    Exactly equal to :func:`fidelity` of the assembled operators, since
    ``Tr(H_rec H) = c_rec^T G c``. Accepts single vectors or (B, N) batches;
    returns a scalar array or a length-B array.
    """
    c_rec = np.atleast_2d(np.asarray(c_rec, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    num = np.einsum("bi,ij,bj->b", c_rec, gram, c)
    nr = np.einsum("bi,ij,bj->b", c_rec, gram, c_rec)
    nt = np.einsum("bi,ij,bj->b", c, gram, c)
    if np.any(nr <= 0) or np.any(nt <= 0):
        raise ValueError("fidelity is undefined for a zero operator")
    vals = 0.5 + num / (2.0 * np.sqrt(nr) * np.sqrt(nt))
    vals = np.clip(vals, 0.0, 1.0)
    return vals[0] if vals.shape == (1,) else vals


@dataclass(frozen=True)
class LevelFidelity:
    level: int
    mean_f: float
    min_f: float
    max_f: float
    count: int


@dataclass
class FidelityReport:
    rows: list[LevelFidelity]
    tag: str = ""
    noise_ratio: float = 0.0

    def mean_by_level(self) -> dict[int, float]:
        return {r.level: r.mean_f for r in self.rows}

    def overall_mean(self) -> float:
        total = sum(r.count for r in self.rows)
        return sum(r.mean_f * r.count for r in self.rows) / total


def evaluate(
    predict: Callable[[np.ndarray], np.ndarray],
    ds: Dataset,
    ops: OperatorSet,
    *,
    tag: str = "",
) -> FidelityReport:
    """Run a batched predictor over a test dataset and aggregate fidelity
    per level (mean/min/max plus sample count)."""
    a, c, k = ds.arrays()
    c_hat = np.asarray(predict(a), dtype=float)
    if c_hat.shape != c.shape:
        raise ValueError(f"predictor returned shape {c_hat.shape}, expected {c.shape}")
    f = np.atleast_1d(coefficient_fidelity(c_hat, c, gram_matrix(ops)))
    rows = []
    for level in sorted(set(int(x) for x in k)):
        sel = f[k == level]
        rows.append(
            LevelFidelity(
                level=level,
                mean_f=float(sel.mean()),
                min_f=float(sel.min()),
                max_f=float(sel.max()),
                count=int(sel.size),
            )
        )
    return FidelityReport(rows=rows, tag=tag, noise_ratio=ds.noise_ratio)


REPORT_CSV_HEADER = ("level", "mean_f", "min_f", "max_f", "count")


def write_report_csv(report: FidelityReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_CSV_HEADER)
        for r in report.rows:
            writer.writerow([r.level, repr(r.mean_f), repr(r.min_f), repr(r.max_f), r.count])


def write_report_json(report: FidelityReport, path: str | Path) -> None:
    doc = {
        "tag": report.tag,
        "noise_ratio": report.noise_ratio,
        "levels": [
            {
                "level": r.level,
                "mean_f": r.mean_f,
                "min_f": r.min_f,
                "max_f": r.max_f,
                "count": r.count,
            }
            for r in report.rows
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def read_report_csv(path: str | Path) -> FidelityReport:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != REPORT_CSV_HEADER:
            raise ValueError(f"unexpected report header {header}")
        for rec in reader:
            rows.append(
                LevelFidelity(int(rec[0]), float(rec[1]), float(rec[2]), float(rec[3]), int(rec[4]))
            )
    return FidelityReport(rows=rows)
