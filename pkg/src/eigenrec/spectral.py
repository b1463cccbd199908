"""Forward map: assemble a Hamiltonian, diagonalize, take eigenstate
expectation values; plus the Gibbs-of-squared density matrix used by the
numerical refiner.

Level index ``k`` is always the position in the ascending eigenvalue order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .operators import OperatorSet

HERMITICITY_RTOL = 1e-9
STATE_NORM_TOL = 1e-10
GAP_TOL_FACTOR = 1e-8


@dataclass(frozen=True)
class Spectrum:
    """Full ordered eigensystem; ``eigenvectors[:, k]`` pairs with
    ``eigenvalues[k]``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    min_gap: float

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def gap_tolerance(self) -> float:
        """Degeneracy threshold: ``1e-8 * max(1, spectral norm)``."""
        return GAP_TOL_FACTOR * max(1.0, float(np.abs(self.eigenvalues).max()))

    def is_degenerate(self, level: int) -> bool:
        """Whether level ``level`` sits closer than the gap tolerance to a
        neighbour, making its eigenvector (and the inverse map) ill-defined."""
        w = self.eigenvalues
        tol = self.gap_tolerance()
        if level > 0 and w[level] - w[level - 1] < tol:
            return True
        if level < self.dim - 1 and w[level + 1] - w[level] < tol:
            return True
        return False


@dataclass(frozen=True)
class ExpectationVector:
    """Measurement vector of one eigenstate: ``a[i] = <psi_k|A_i|psi_k>``."""

    a: np.ndarray
    level: int
    degenerate: bool


def assemble(c: np.ndarray, ops: OperatorSet) -> np.ndarray:
    """Hamiltonian ``sum_i c[i] * A_i`` for a coefficient vector."""
    c = np.asarray(c, dtype=float)
    if c.shape != (ops.n_ops,):
        raise ValueError(f"expected {ops.n_ops} coefficients, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("coefficients must be finite")
    return np.tensordot(c, ops.matrices, axes=1)


def check_hermitian(h: np.ndarray, rtol: float = HERMITICITY_RTOL) -> np.ndarray:
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    scale = max(1.0, float(np.abs(h).max()))
    residual = float(np.abs(h - h.conj().T).max())
    if residual > rtol * scale:
        raise ValueError(f"matrix is not Hermitian (residual {residual:g})")
    return h


def eigendecompose(h: np.ndarray) -> Spectrum:
    """Ascending eigensystem of a Hermitian matrix.

    Eigenvector phases are fixed by rotating the largest-magnitude component
    to the positive real axis, which makes the output deterministic for
    non-degenerate levels.
    """
    h = check_hermitian(h)
    try:
        w, v = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed to converge: {exc}") from exc
    idx = np.abs(v).argmax(axis=0)
    lead = v[idx, np.arange(v.shape[1])]
    mag = np.abs(lead)
    phase = np.where(mag > 0, lead / np.where(mag > 0, mag, 1.0), 1.0)
    v = v * phase.conj()
    min_gap = float(np.diff(w).min()) if w.shape[0] > 1 else np.inf
    return Spectrum(eigenvalues=w, eigenvectors=v, min_gap=min_gap)


def expectations(state: np.ndarray, ops: OperatorSet) -> np.ndarray:
    """Expectation values of every operator on a normalized pure state."""
    state = np.asarray(state, dtype=complex).reshape(-1)
    if state.shape[0] != ops.dim:
        raise ValueError(f"state has dim {state.shape[0]}, operators have {ops.dim}")
    norm = float(np.linalg.norm(state))
    if abs(norm - 1.0) > STATE_NORM_TOL:
        raise ValueError(f"state is not normalized (norm {norm!r})")
    vals = np.einsum("i,nij,j->n", state.conj(), ops.matrices, state)
    return _discard_imag(vals)


def expectation_columns(states: np.ndarray, ops: OperatorSet) -> np.ndarray:
    """Batched expectations for the columns of ``states``; returns (N, L)."""
    vals = np.einsum("ik,nij,jk->nk", states.conj(), ops.matrices, states)
    return _discard_imag(vals)


def _discard_imag(vals: np.ndarray, tol: float = 1e-10):
    resid = float(np.abs(vals.imag).max()) if vals.size else 0.0
    if resid > tol * max(1.0, float(np.abs(vals.real).max())):
        raise NumericError(f"expectation has imaginary residue {resid:g}")
    return vals.real.copy()


def forward_map(c: np.ndarray, ops: OperatorSet, level: int) -> ExpectationVector:
    """The map from coefficients to the expectation vector of eigenstate
    ``level``: assemble, diagonalize, measure."""
    if not (0 <= level < ops.dim):
        raise ValueError(f"level {level} outside [0, {ops.dim})")
    spectrum = eigendecompose(assemble(c, ops))
    a = expectations(spectrum.eigenvectors[:, level], ops)
    return ExpectationVector(a=a, level=level, degenerate=spectrum.is_degenerate(level))


def shifted_hamiltonian(x: np.ndarray, a: np.ndarray, ops: OperatorSet) -> np.ndarray:
    """``sum_i x[i] * (A_i - a[i] I)``: zero on the sought eigenstate when
    ``x`` matches the true coefficients and ``a`` is exact."""
    a = np.asarray(a, dtype=float)
    if a.shape != (ops.n_ops,):
        raise ValueError(f"expected {ops.n_ops} target expectations, got {a.shape}")
    h = assemble(x, ops)
    shift = float(np.dot(np.asarray(x, dtype=float), a))
    h.flat[:: ops.dim + 1] -= shift
    return h


def gibbs_of_squared(
    x: np.ndarray, a: np.ndarray, ops: OperatorSet, beta: float = 100.0
) -> np.ndarray:
    """Density matrix ``exp(-beta * Htilde^2) / Z`` with ``Htilde`` built from
    candidate ``x`` and target expectations ``a``.

    Weights are computed as ``exp(-beta * (lam^2 - min(lam^2)))``, i.e. with
    the common log-sum-exp shift, so the normalization never underflows to
    0/0. This equals the unshifted expression exactly (the shift cancels in
    the quotient).
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    spectrum = eigendecompose(shifted_hamiltonian(x, a, ops))
    lam2 = spectrum.eigenvalues**2
    weights = np.exp(-beta * (lam2 - lam2.min()))
    weights /= weights.sum()
    v = spectrum.eigenvectors
    return (v * weights) @ v.conj().T
