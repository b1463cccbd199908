"""Supervised-learning datasets of (expectations, coefficients, level) triples.

Coefficient draws are the unit of reproducibility and of splitting: every
level sampled from one draw shares the draw's sub-seed, and splits never
separate the levels of a single draw (which would leak one Hamiltonian
across splits).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import IntegrityError, ParseError
from .operators import OperatorSet
from .spectral import assemble, eigendecompose, expectation_columns

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
ENERGY_IDENTITY_TOL = 1e-8


@dataclass
class Sample:
    a: np.ndarray
    c: np.ndarray
    k: int
    degenerate: bool = False
    sample_seed: int = 0


@dataclass
class Dataset:
    samples: list[Sample]
    n_qubits: int
    operator_set_hash: str
    noise_ratio: float = 0.0
    split_tag: str = "unsplit"
    degenerate_excluded: int = field(default=0, compare=False)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n_coefficients(self) -> int:
        if not self.samples:
            raise ValueError("empty dataset has no coefficient length")
        return self.samples[0].c.shape[0]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked (A, C, K) arrays: expectations, coefficients, levels."""
        a = np.stack([s.a for s in self.samples])
        c = np.stack([s.c for s in self.samples])
        k = np.array([s.k for s in self.samples], dtype=int)
        return a, c, k


def default_levels(n_qubits: int) -> range:
    """The lower half of the spectrum: levels 0 .. 2**(n-1) - 1."""
    return range(1 << (n_qubits - 1))


def draw_rng(seed: int, draw_index: int) -> tuple[np.random.Generator, int]:
    ss = np.random.SeedSequence(seed, spawn_key=(draw_index,))
    return np.random.default_rng(ss), int(ss.generate_state(1, np.uint64)[0])


def generate(
    ops: OperatorSet,
    n_sets: int,
    *,
    levels: Iterable[int] | None = None,
    seed: int = 0,
    noise_ratio: float = 0.0,
    keep_degenerate: bool = False,
    orthant: str | None = None,
) -> Dataset:
    """Sample coefficient sets and record every requested eigenstate.

    Each draw takes the coefficients i.i.d. uniform on [-1, 1) (or, when
    ``orthant`` is a sign string like ``"+-+"``, uniform on [0, 1) with the
    given signs applied), diagonalizes once, and emits one sample per level.
    Degenerate levels are flagged and, by default, excluded with a count.
    """
    if n_sets < 1:
        raise ValueError("n_sets must be >= 1")
    if noise_ratio < 0 or not np.isfinite(noise_ratio):
        raise ValueError("noise_ratio must be finite and >= 0")
    levels = list(levels) if levels is not None else list(default_levels(ops.n_qubits))
    if not levels or min(levels) < 0 or max(levels) >= ops.dim:
        raise ValueError(f"levels must be a non-empty subset of [0, {ops.dim})")
    signs = None
    if orthant is not None:
        signs = pattern_signs(orthant, ops.n_ops)

    samples: list[Sample] = []
    excluded = 0
    for i in range(n_sets):
        rng, sub_seed = draw_rng(seed, i)
        if signs is None:
            c = rng.uniform(-1.0, 1.0, size=ops.n_ops)
        else:
            c = signs * rng.uniform(0.0, 1.0, size=ops.n_ops)
        spectrum = eigendecompose(assemble(c, ops))
        a_cols = expectation_columns(spectrum.eigenvectors[:, levels], ops)
        for j, k in enumerate(levels):
            degenerate = spectrum.is_degenerate(k)
            if degenerate and not keep_degenerate:
                excluded += 1
                continue
            a = a_cols[:, j].copy()
            if noise_ratio > 0:
                a = inject_noise(a, noise_ratio, rng)
            samples.append(
                Sample(a=a, c=c.copy(), k=k, degenerate=degenerate, sample_seed=sub_seed)
            )
    if excluded:
        log.info("generated %d samples, excluded %d degenerate", len(samples), excluded)
    return Dataset(
        samples=samples,
        n_qubits=ops.n_qubits,
        operator_set_hash=ops.content_hash(),
        noise_ratio=noise_ratio,
        degenerate_excluded=excluded,
    )


def pattern_signs(pattern: str, n: int) -> np.ndarray:
    if len(pattern) != n or set(pattern) - {"+", "-"}:
        raise ValueError(f"sign pattern {pattern!r} must be length {n} over +/-")
    return np.array([1.0 if ch == "+" else -1.0 for ch in pattern])


def inject_noise(a: np.ndarray, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Add an error of exact relative norm ``ratio``, uniform in direction.

    The perturbation is ``ratio * ||a|| * u`` with ``u`` uniform on the unit
    sphere, so ``||delta a|| / ||a|| == ratio`` up to float rounding.
    """
    a = np.asarray(a, dtype=float)
    if ratio == 0:
        return a.copy()
    if ratio < 0 or not np.isfinite(ratio):
        raise ValueError("noise ratio must be finite and >= 0")
    norm = float(np.linalg.norm(a))
    if norm == 0:
        raise ValueError("cannot apply relative noise to a zero vector")
    u = rng.standard_normal(a.shape[0])
    u /= np.linalg.norm(u)
    return a + ratio * norm * u


def split(
    ds: Dataset, fractions: Sequence[float], seed: int = 0
) -> tuple[Dataset, Dataset, Dataset]:
    """Partition into train/val/test by coefficient draw.

    All levels of one draw land in the same split. Counts follow cumulative
    rounding of the fractions over the number of draws, so (0.8, 0.1, 0.1)
    on 1000 draws gives exactly 800/100/100.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError("need three positive fractions")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)!r}")
    keys: list[int] = []
    seen = set()
    for s in ds.samples:
        if s.sample_seed not in seen:
            seen.add(s.sample_seed)
            keys.append(s.sample_seed)
    rng = np.random.default_rng(seed)
    order = [keys[i] for i in rng.permutation(len(keys))]
    bounds = np.round(np.cumsum(fractions) * len(keys)).astype(int)
    groups = (set(order[: bounds[0]]), set(order[bounds[0] : bounds[1]]), set(order[bounds[1] :]))
    tags = ("train", "val", "test")
    out = []
    for tag, group in zip(tags, groups):
        picked = [s for s in ds.samples if s.sample_seed in group]
        if not picked:
            raise ValueError(f"{tag} split is empty; not enough draws for {fractions}")
        out.append(replace(ds, samples=picked, split_tag=tag, degenerate_excluded=0))
    return tuple(out)


def save_jsonl(ds: Dataset, path: str | Path) -> None:
    """One JSON object per line; the first line is the header."""
    if not ds.samples:
        raise ValueError("refusing to save an empty dataset")
    header = {
        "version": FORMAT_VERSION,
        "operator_set_hash": ds.operator_set_hash,
        "n_qubits": ds.n_qubits,
        "N": ds.n_coefficients,
        "noise_ratio": ds.noise_ratio,
        "split_tag": ds.split_tag,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for s in ds.samples:
            fh.write(
                json.dumps(
                    {
                        "a": s.a.tolist(),
                        "c": s.c.tolist(),
                        "k": s.k,
                        "deg": s.degenerate,
                        "seed": s.sample_seed,
                    }
                )
                + "\n"
            )


def load_jsonl(
    path: str | Path, *, ops: OperatorSet | None = None, verify: bool = False
) -> Dataset:
    """Load a dataset, optionally checking it against its operator set.

    With ``ops`` given, the stored operator-set hash must match. With
    ``verify=True`` (requires ``ops``, noiseless data) every sample is
    re-checked against the energy identity <c, a> = lambda_k.
    """
    path = Path(path)
    with open(path) as fh:
        first = fh.readline()
        if not first:
            raise ParseError(f"{path}: empty file")
        header = _parse_line(path, 1, first)
        for key in ("version", "operator_set_hash", "n_qubits", "N", "noise_ratio", "split_tag"):
            if key not in header:
                raise ParseError(f"{path}: line 1: header missing {key!r}")
        if header["version"] != FORMAT_VERSION:
            raise ParseError(f"{path}: unsupported version {header['version']!r}")
        n_coeff = int(header["N"])
        samples: list[Sample] = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            obj = _parse_line(path, lineno, line)
            try:
                a = np.asarray(obj["a"], dtype=float)
                c = np.asarray(obj["c"], dtype=float)
                sample = Sample(
                    a=a, c=c, k=int(obj["k"]), degenerate=bool(obj["deg"]),
                    sample_seed=int(obj["seed"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}: line {lineno}: bad sample: {exc}") from exc
            if a.shape != (n_coeff,) or c.shape != (n_coeff,):
                raise ParseError(
                    f"{path}: line {lineno}: vector length mismatch (header N={n_coeff})"
                )
            if not (np.all(np.isfinite(a)) and np.all(np.isfinite(c))):
                raise ParseError(f"{path}: line {lineno}: non-finite values")
            samples.append(sample)
    ds = Dataset(
        samples=samples,
        n_qubits=int(header["n_qubits"]),
        operator_set_hash=header["operator_set_hash"],
        noise_ratio=float(header["noise_ratio"]),
        split_tag=header["split_tag"],
    )
    if ops is not None:
        if ops.content_hash() != ds.operator_set_hash:
            raise IntegrityError(
                f"{path}: operator-set hash mismatch "
                f"(file {ds.operator_set_hash[:12]}…, ops {ops.content_hash()[:12]}…)"
            )
        if ops.n_ops != n_coeff:
            raise IntegrityError(f"{path}: header N={n_coeff}, operator set has {ops.n_ops}")
    if verify:
        if ops is None:
            raise ValueError("verify=True requires the operator set")
        if ds.noise_ratio != 0:
            raise ValueError("energy-identity verification applies to noiseless data only")
        verify_energy_identity(ds, ops)
    return ds


def _parse_line(path: Path, lineno: int, line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: line {lineno}: expected a JSON object")
    return obj


def verify_energy_identity(ds: Dataset, ops: OperatorSet, tol: float = ENERGY_IDENTITY_TOL):
    """Check <c, a> = lambda_k for every sample by re-diagonalizing each draw."""
    spectra: dict[bytes, np.ndarray] = {}
    for i, s in enumerate(ds.samples):
        key = s.c.tobytes()
        w = spectra.get(key)
        if w is None:
            w = np.linalg.eigvalsh(assemble(s.c, ops))
            spectra[key] = w
        resid = abs(float(np.dot(s.c, s.a)) - w[s.k])
        if resid > tol:
            raise IntegrityError(
                f"sample {i} (level {s.k}) violates the energy identity by {resid:g}"
            )
