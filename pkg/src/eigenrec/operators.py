"""Random operator families for chain, ring, and fully-connected systems.

An operator set is the tuple of observables whose expectation values feed
the inverse problem. Generation is reproducible: the stream for operator
``i`` is PCG64 seeded through ``SeedSequence(seed, spawn_key=(i,))``, so
operators are independent of generation order.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError
from .pauli import PAULI_LETTERS, check_word, synthesize

PRNG_NAME = "pcg64-seedseq"
MAX_QUBITS = 10

GraphKind = str  # chain | ring | fully_connected | custom


@dataclass(frozen=True)
class InteractionGraph:
    """Pairwise interaction structure on ``n_qubits`` (1-based sites)."""

    n_qubits: int
    edges: tuple[tuple[int, int], ...]
    kind: GraphKind = "custom"

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("graph needs at least one qubit")
        seen = set()
        for a, b in self.edges:
            if not (1 <= a < b <= self.n_qubits):
                raise ValueError(f"invalid edge ({a}, {b}) for n={self.n_qubits}")
            if (a, b) in seen:
                raise ValueError(f"duplicate edge ({a}, {b})")
            seen.add((a, b))
        expected = {
            "chain": self.n_qubits - 1,
            "ring": self.n_qubits,
            "fully_connected": self.n_qubits * (self.n_qubits - 1) // 2,
        }.get(self.kind)
        if expected is not None and len(self.edges) != expected:
            raise ValueError(
                f"{self.kind} graph on {self.n_qubits} qubits needs "
                f"{expected} edges, got {len(self.edges)}"
            )


def chain_graph(n_qubits: int) -> InteractionGraph:
    edges = tuple((i, i + 1) for i in range(1, n_qubits))
    return InteractionGraph(n_qubits, edges, kind="chain")


def ring_graph(n_qubits: int) -> InteractionGraph:
    """Nearest-neighbour edges plus the wrap-around pair, listed last.

    The wrap edge is stored canonically as ``(1, n)`` but keeps its position
    at the end of the edge list, so operator ordering follows the ring.
    """
    if n_qubits < 3:
        raise ValueError("a ring needs at least 3 qubits")
    edges = tuple((i, i + 1) for i in range(1, n_qubits)) + ((1, n_qubits),)
    return InteractionGraph(n_qubits, edges, kind="ring")


def fully_connected_graph(n_qubits: int) -> InteractionGraph:
    edges = tuple(
        (i, j) for i in range(1, n_qubits + 1) for j in range(i + 1, n_qubits + 1)
    )
    return InteractionGraph(n_qubits, edges, kind="fully_connected")


@dataclass
class OperatorSet:
    """Ordered family of Hermitian operators plus its generation provenance.

    ``matrices`` is the stacked ``(N, 2**n, 2**n)`` complex array; ``terms``
    keeps the exact Pauli decomposition each matrix was synthesized from.
    """

    n_qubits: int
    kind: str  # "general" | "two_local"
    terms: tuple[tuple[tuple[str, float], ...], ...]
    seed: int
    graph: InteractionGraph | None = None
    matrices: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.n_ops < 2:
            raise ValueError("an operator set needs at least 2 operators")
        if self.matrices is None:
            self.matrices = np.stack(
                [synthesize(t, self.n_qubits) for t in self.terms]
            )

    @property
    def n_ops(self) -> int:
        return len(self.terms)

    @property
    def dim(self) -> int:
        return 1 << self.n_qubits

    def support(self, index: int) -> tuple[int, int] | str:
        """Edge carried by operator ``index``, or ``"all"`` for general ops."""
        if self.graph is not None and self.kind == "two_local":
            return self.graph.edges[index]
        return "all"

    def content_hash(self) -> str:
        """SHA-256 over the canonical term lists; stable across save/load."""
        payload = json.dumps(
            {
                "kind": self.kind,
                "n_qubits": self.n_qubits,
                "terms": [[[w, repr(c)] for w, c in t] for t in self.terms],
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode()).hexdigest()


def _check_qubit_count(n_qubits: int):
    if not (1 <= n_qubits <= MAX_QUBITS):
        raise ValueError(
            f"n_qubits={n_qubits} outside the supported range 1..{MAX_QUBITS} "
            "(dense synthesis only)"
        )


def operator_rng(seed: int, index: int) -> np.random.Generator:
    """Sub-stream for operator ``index``; independent of generation order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def random_general_operator(
    n_qubits: int, rng: np.random.Generator
) -> tuple[np.ndarray, tuple[tuple[str, float], ...]]:
    """Full-support operator: all 4**n Pauli coefficients i.i.d. on [-1, 1).

    Words are enumerated in lexicographic ``IXYZ`` product order, which pins
    the coefficient-to-word pairing for a given stream.
    """
    _check_qubit_count(n_qubits)
    coeffs = rng.uniform(-1.0, 1.0, size=4**n_qubits)
    words = itertools.product(PAULI_LETTERS, repeat=n_qubits)
    terms = tuple(("".join(w), float(c)) for w, c in zip(words, coeffs))
    return synthesize(terms, n_qubits), terms


def random_local_operator(
    n_qubits: int, edge: tuple[int, int], rng: np.random.Generator
) -> tuple[np.ndarray, tuple[tuple[str, float], ...]]:
    """Two-local operator on ``edge``: 16 coefficients on [-1, 1), identity
    elsewhere. The identity⊗identity pair is included."""
    _check_qubit_count(n_qubits)
    a, b = edge
    if not (1 <= a < b <= n_qubits):
        raise ValueError(f"invalid edge ({a}, {b}) for n={n_qubits}")
    coeffs = rng.uniform(-1.0, 1.0, size=16)
    terms = []
    for (pa, pb), c in zip(itertools.product(PAULI_LETTERS, repeat=2), coeffs):
        word = ["I"] * n_qubits
        word[a - 1] = pa
        word[b - 1] = pb
        terms.append(("".join(word), float(c)))
    terms = tuple(terms)
    return synthesize(terms, n_qubits), terms


def build_operator_set(
    n_qubits: int,
    kind: str = "general",
    *,
    n_ops: int | None = None,
    seed: int = 0,
    graph: InteractionGraph | None = None,
) -> OperatorSet:
    """Build the operator family for one experiment.

    ``kind`` is one of ``general`` (``n_ops`` full-support operators, default
    ``n_qubits``), ``chain``, ``ring``, ``fully_connected``, or ``custom``
    (requires ``graph``). Local kinds create one operator per edge, in edge
    order.
    """
    _check_qubit_count(n_qubits)
    if kind == "general":
        n = n_ops if n_ops is not None else n_qubits
        if n < 2:
            raise ValueError("general operator set needs n_ops >= 2")
        pairs = [random_general_operator(n_qubits, operator_rng(seed, i)) for i in range(n)]
        return OperatorSet(
            n_qubits=n_qubits,
            kind="general",
            terms=tuple(t for _, t in pairs),
            seed=seed,
            matrices=np.stack([m for m, _ in pairs]),
        )
    if kind == "custom":
        if graph is None:
            raise ValueError("kind='custom' requires a graph")
    elif graph is None:
        factory = {
            "chain": chain_graph,
            "ring": ring_graph,
            "fully_connected": fully_connected_graph,
        }.get(kind)
        if factory is None:
            raise ValueError(f"unknown operator-set kind {kind!r}")
        graph = factory(n_qubits)
    if graph.n_qubits != n_qubits:
        raise ValueError("graph qubit count disagrees with n_qubits")
    pairs = [
        random_local_operator(n_qubits, edge, operator_rng(seed, i))
        for i, edge in enumerate(graph.edges)
    ]
    return OperatorSet(
        n_qubits=n_qubits,
        kind="two_local",
        terms=tuple(t for _, t in pairs),
        seed=seed,
        graph=graph,
        matrices=np.stack([m for m, _ in pairs]),
    )


FORMAT_VERSION = 1


def save_operator_set(ops: OperatorSet, path: str | Path) -> None:
    """Write the operator set as JSON; matrices are re-synthesized on load."""
    doc = {
        "version": FORMAT_VERSION,
        "kind": ops.kind,
        "n_qubits": ops.n_qubits,
        "graph": None
        if ops.graph is None
        else {"kind": ops.graph.kind, "edges": [list(e) for e in ops.graph.edges]},
        "seed": ops.seed,
        "prng": PRNG_NAME,
        "operators": [
            {
                "index": i,
                "support": list(ops.support(i)) if ops.support(i) != "all" else "all",
                "terms": [[w, c] for w, c in terms],
            }
            for i, terms in enumerate(ops.terms)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_operator_set(path: str | Path) -> OperatorSet:
    """Load and validate an operator-set file; see :func:`save_operator_set`.

    Raises:
        ParseError: naming the offending operator/field on any violation.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("version") != FORMAT_VERSION:
        raise ParseError(f"{path}: missing or unsupported version (want {FORMAT_VERSION})")
    try:
        kind = doc["kind"]
        n_qubits = int(doc["n_qubits"])
        seed = int(doc["seed"])
        raw_ops = doc["operators"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: missing field {exc}") from exc
    if kind not in ("general", "two_local"):
        raise ParseError(f"{path}: unknown kind {kind!r}")
    graph = None
    if doc.get("graph") is not None:
        g = doc["graph"]
        try:
            graph = InteractionGraph(
                n_qubits, tuple(tuple(int(x) for x in e) for e in g["edges"]), g["kind"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: bad graph: {exc}") from exc
    terms = []
    for i, op in enumerate(raw_ops):
        raw_terms = op.get("terms")
        if not raw_terms:
            raise ParseError(f"{path}: operator {i}: empty term list")
        parsed = []
        for j, pair in enumerate(raw_terms):
            if not (isinstance(pair, list) and len(pair) == 2):
                raise ParseError(f"{path}: operator {i}, term {j}: expected [word, coeff]")
            word, coeff = pair
            try:
                check_word(word, n_qubits)
            except ValueError as exc:
                raise ParseError(f"{path}: operator {i}, term {j}: {exc}") from exc
            if isinstance(coeff, bool) or not isinstance(coeff, (int, float)):
                raise ParseError(
                    f"{path}: operator {i}, term {j}: coefficient must be a real number"
                )
            coeff = float(coeff)
            if not np.isfinite(coeff):
                raise ParseError(f"{path}: operator {i}, term {j}: non-finite coefficient")
            parsed.append((word, coeff))
        terms.append(tuple(parsed))
    try:
        return OperatorSet(
            n_qubits=n_qubits, kind=kind, terms=tuple(terms), seed=seed, graph=graph
        )
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
