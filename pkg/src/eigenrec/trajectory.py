"""Two-operator sweeps: eigenstate expectation trajectories, energy curves,
and level-crossing detection for H(theta) = cos(theta) A1 + sin(theta) A2.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .operators import OperatorSet
from .spectral import eigendecompose, expectation_columns

DEFAULT_THETA_POINTS = 2000
MIN_THETA_POINTS = 16
CROSSING_REFINE_TOL = 1e-6


@dataclass(frozen=True)
class Crossing:
    theta: float
    level_low: int
    level_high: int
    gap: float


@dataclass
class SweepResult:
    """Per-theta eigenvalues for all levels and (a1, a2) trajectories for the
    requested ones. ``eigenvalues`` has shape (points, dim); ``a1``/``a2``
    have shape (points, len(levels))."""

    ops: OperatorSet
    thetas: np.ndarray
    levels: tuple[int, ...]
    eigenvalues: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    crossings: list[Crossing] = field(default_factory=list)


def hamiltonian_at(theta: float, ops: OperatorSet) -> np.ndarray:
    return np.cos(theta) * ops.matrices[0] + np.sin(theta) * ops.matrices[1]


def sweep(
    ops: OperatorSet,
    *,
    theta_points: int = DEFAULT_THETA_POINTS,
    levels: tuple[int, ...] | None = None,
) -> SweepResult:
    """Diagonalize H(theta) over a uniform grid on [0, 2*pi).

    Requires an operator set with exactly two operators. Eigenvalues are
    recorded for every level; expectation trajectories only for ``levels``
    (default: all of them).
    """
    if ops.n_ops != 2:
        raise ValueError(f"theta sweep needs exactly 2 operators, got {ops.n_ops}")
    if theta_points < MIN_THETA_POINTS:
        raise ValueError(f"theta_points must be >= {MIN_THETA_POINTS}")
    levels = tuple(levels) if levels is not None else tuple(range(ops.dim))
    if any(not 0 <= k < ops.dim for k in levels):
        raise ValueError(f"levels must lie in [0, {ops.dim})")
    thetas = np.linspace(0.0, 2.0 * np.pi, theta_points, endpoint=False)
    eigenvalues = np.empty((theta_points, ops.dim))
    a1 = np.empty((theta_points, len(levels)))
    a2 = np.empty((theta_points, len(levels)))
    for i, theta in enumerate(thetas):
        spectrum = eigendecompose(hamiltonian_at(theta, ops))
        eigenvalues[i] = spectrum.eigenvalues
        cols = expectation_columns(spectrum.eigenvectors[:, levels], ops)
        a1[i] = cols[0]
        a2[i] = cols[1]
    return SweepResult(
        ops=ops, thetas=thetas, levels=levels, eigenvalues=eigenvalues, a1=a1, a2=a2
    )


def detect_crossings(result: SweepResult, gap_tol: float | None = None) -> list[Crossing]:
    """Locate adjacent-level degeneracies along the sweep.

    Grid points where a gap dips below ``gap_tol`` (default
    ``1e-6 * max(1, spectral scale)``) are grouped into runs, and each run's
    minimum is refined by golden-section bracketing to 1e-6 in theta.
    gap_tol = 0 reports nothing (gaps are never negative).
    """
    if gap_tol is None:
        gap_tol = 1e-6 * max(1.0, float(np.abs(result.eigenvalues).max()))
    if gap_tol < 0:
        raise ValueError("gap_tol must be >= 0")
    n_pts, dim = result.eigenvalues.shape
    step = 2.0 * np.pi / n_pts
    crossings: list[Crossing] = []
    gaps = np.diff(result.eigenvalues, axis=1)
    for pair in range(dim - 1):
        below = gaps[:, pair] < gap_tol
        if not below.any():
            continue
        for lo, hi in _circular_runs(below):
            center = result.thetas[lo % n_pts] + ((hi - lo) // 2) * step
            theta_star, gap_star = _refine_minimum(
                lambda t: _pair_gap(t, result.ops, pair),
                center - step,
                center + step,
            )
            crossings.append(
                Crossing(
                    theta=float(theta_star % (2.0 * np.pi)),
                    level_low=pair,
                    level_high=pair + 1,
                    gap=float(gap_star),
                )
            )
    crossings.sort(key=lambda c: (c.theta, c.level_low))
    return crossings


def _pair_gap(theta: float, ops: OperatorSet, pair: int) -> float:
    w = np.linalg.eigvalsh(hamiltonian_at(theta, ops))
    return float(w[pair + 1] - w[pair])


def _circular_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Contiguous True runs of a periodic mask as (start, end) index pairs,
    end exclusive; a run wrapping the origin gets end > len(mask)."""
    n = mask.size
    if mask.all():
        return [(0, n)]
    # rotate so the mask starts on a False element, then scan linearly
    start = int(np.argmin(mask))
    rolled = np.roll(mask, -start)
    runs = []
    i = 0
    while i < n:
        if rolled[i]:
            j = i
            while j < n and rolled[j]:
                j += 1
            runs.append(((i + start), (j + start)))
            i = j
        else:
            i += 1
    return runs


def _refine_minimum(f, lo: float, hi: float, tol: float = CROSSING_REFINE_TOL):
    """Golden-section shrink of the bracketing interval down to ``tol``."""
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    mid = 0.5 * (a + b)
    return mid, f(mid)


def trajectory_self_intersections(
    result: SweepResult, level: int
) -> list[tuple[float, float, float, float]]:
    """Self-intersections of one level's (a1, a2) polyline, as
    ``(theta_i, theta_j, a1, a2)`` tuples.

    Secondary diagnostic: resolution-dependent, counted separately from the
    spectral-gap crossings.
    """
    if level not in result.levels:
        raise ValueError(f"level {level} was not recorded in this sweep")
    col = result.levels.index(level)
    pts = np.stack([result.a1[:, col], result.a2[:, col]], axis=1)
    n = pts.shape[0]
    seg_a = pts
    seg_b = np.roll(pts, -1, axis=0)  # closed polyline
    hits = []
    for i in range(n):
        p, r = seg_a[i], seg_b[i] - seg_a[i]
        # candidate segments strictly after i, excluding shared-endpoint pairs
        js = np.arange(i + 2, n if i > 0 else n - 1)
        if js.size == 0:
            continue
        q = seg_a[js]
        s = seg_b[js] - q
        denom = r[0] * s[:, 1] - r[1] * s[:, 0]
        qp = q - p
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / denom
            u = (qp[:, 0] * r[1] - qp[:, 1] * r[0]) / denom
        ok = (denom != 0) & (t >= 0) & (t < 1) & (u >= 0) & (u < 1)
        for idx in np.nonzero(ok)[0]:
            j = int(js[idx])
            x, y = p + t[idx] * r
            hits.append((float(result.thetas[i]), float(result.thetas[j]), float(x), float(y)))
    return hits


def export_plot_data(result: SweepResult, out_dir: str | Path) -> list[Path]:
    """Write one ``trajectory_level<k>.csv`` per recorded level (columns
    theta, a1, a2, lambda) plus ``crossings.csv``; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for col, level in enumerate(result.levels):
        path = out_dir / f"trajectory_level{level}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("theta", "a1", "a2", "lambda"))
            for i in range(result.thetas.size):
                writer.writerow(
                    [
                        repr(float(result.thetas[i])),
                        repr(float(result.a1[i, col])),
                        repr(float(result.a2[i, col])),
                        repr(float(result.eigenvalues[i, level])),
                    ]
                )
        paths.append(path)
    cpath = out_dir / "crossings.csv"
    with open(cpath, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("theta", "level_low", "level_high", "gap"))
        for c in result.crossings:
            writer.writerow([repr(c.theta), c.level_low, c.level_high, repr(c.gap)])
    paths.append(cpath)
    return paths
