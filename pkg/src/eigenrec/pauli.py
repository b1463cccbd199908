"""Pauli-product basis and dense Hermitian matrix synthesis.

Conventions used throughout the package:

* A Pauli word is a string over ``IXYZ``; position ``p`` (0-based) addresses
  qubit ``p + 1`` and is the ``(p + 1)``-th Kronecker factor, so qubit 1 owns
  the most significant bits of a computational-basis index.
* Coefficients are real; an operator is a list of ``(word, coeff)`` terms.
* Matrices are dense ``complex128`` arrays of shape ``(2**n, 2**n)``.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError

PAULI_LETTERS = "IXYZ"

PAULI_1Q = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "Y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "Z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}


def check_word(word: str, n_qubits: int | None = None) -> str:
    """Validate a Pauli word, returning it unchanged."""
    if not isinstance(word, str) or len(word) == 0:
        raise ValueError("Pauli word must be a non-empty string")
    bad = set(word) - set(PAULI_LETTERS)
    if bad:
        raise ValueError(f"Pauli word {word!r} contains invalid letters {sorted(bad)}")
    if n_qubits is not None and len(word) != n_qubits:
        raise ValueError(
            f"Pauli word {word!r} has length {len(word)}, expected {n_qubits}"
        )
    return word


def pauli_matrix(word: str) -> np.ndarray:
    """Kronecker product of single-qubit Pauli matrices, in word order.

    The result is Hermitian and unitary. This is the transparent reference
    construction; :func:`synthesize` uses a faster index-mask route.
    """
    check_word(word)
    out = PAULI_1Q[word[0]]
    for letter in word[1:]:
        out = np.kron(out, PAULI_1Q[letter])
    return out


def _word_masks(word: str) -> tuple[int, int, int]:
    """Return (xmask, zmask, n_y): bit masks with qubit 1 as the MSB."""
    n = len(word)
    xmask = zmask = n_y = 0
    for pos, letter in enumerate(word):
        bit = 1 << (n - 1 - pos)
        if letter in "XY":
            xmask |= bit
        if letter in "ZY":
            zmask |= bit
        if letter == "Y":
            n_y += 1
    return xmask, zmask, n_y


def synthesize(terms: Iterable[tuple[str, float]], n_qubits: int) -> np.ndarray:
    """Dense matrix of a real linear combination of Pauli words.

    Each word contributes exactly one entry per column (a signed/phased
    permutation), so terms are accumulated without building Kronecker
    products. The output is exactly Hermitian: every word matrix is, and
    entrywise sums preserve that.

    Args:
        terms: iterable of ``(word, coeff)`` with real finite coefficients.
        n_qubits: declared word length; every word must match.

    Raises:
        ValueError: on word-length mismatch or non-finite/complex coeff.
    """
    if n_qubits < 1:
        raise ValueError("n_qubits must be >= 1")
    dim = 1 << n_qubits
    out = np.zeros((dim, dim), dtype=complex)
    cols = np.arange(dim)
    parity_cache: dict[int, np.ndarray] = {}
    phases = (1.0, 1.0j, -1.0, -1.0j)  # i**k
    for word, coeff in terms:
        check_word(word, n_qubits)
        coeff = _check_real_coeff(word, coeff)
        xmask, zmask, n_y = _word_masks(word)
        signs = parity_cache.get(zmask)
        if signs is None:
            parity = np.zeros(dim, dtype=np.int64)
            for q in range(n_qubits):
                if zmask >> q & 1:
                    parity ^= (cols >> q) & 1
            signs = 1.0 - 2.0 * parity
            parity_cache[zmask] = signs
        out[cols ^ xmask, cols] += (coeff * phases[n_y % 4]) * signs
    return out


def _check_real_coeff(word: str, coeff) -> float:
    if isinstance(coeff, complex):
        raise ValueError(f"coefficient of {word!r} must be real, got {coeff!r}")
    coeff = float(coeff)
    if not np.isfinite(coeff):
        raise ValueError(f"coefficient of {word!r} is not finite: {coeff!r}")
    return coeff


def hs_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Trace inner product Tr(A B) of two Hermitian matrices.

    The trace is real for Hermitian inputs; an imaginary residue up to 1e-10
    (relative) is discarded, anything larger raises.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    val = complex(np.einsum("ij,ji->", a, b))
    scale = max(1.0, abs(val))
    if abs(val.imag) > 1e-10 * scale:
        raise ValueError(f"trace inner product has imaginary residue {val.imag:g}")
    return val.real


def format_terms(terms: Sequence[tuple[str, float]]) -> str:
    """Render terms in the one-per-line ``<word> <coeff>`` text format."""
    return "\n".join(f"{word} {coeff!r}" for word, coeff in terms)


def parse_terms(text: str, n_qubits: int | None = None) -> list[tuple[str, float]]:
    """Parse the ``<word> <coeff>`` line format; blank lines are skipped.

    Raises:
        ParseError: with the 1-based line number on any malformed line.
    """
    terms: list[tuple[str, float]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 2:
            raise ParseError(f"line {lineno}: expected '<word> <coeff>', got {line!r}")
        word, raw = fields
        try:
            check_word(word, n_qubits)
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc
        try:
            coeff = float(raw)
        except ValueError as exc:
            raise ParseError(f"line {lineno}: bad coefficient {raw!r}") from exc
        if not np.isfinite(coeff):
            raise ParseError(f"line {lineno}: non-finite coefficient {raw!r}")
        terms.append((word, coeff))
    return terms
