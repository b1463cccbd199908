import numpy as np
import pytest

from eigenrec.datasets import generate
from eigenrec.metrics import (
    coefficient_fidelity,
    evaluate,
    fidelity,
    gram_matrix,
    read_report_csv,
    write_report_csv,
    write_report_json,
)
from eigenrec.operators import build_operator_set
from eigenrec.pauli import pauli_matrix
from eigenrec.spectral import assemble


@pytest.fixture(scope="module")
def ops():
    return build_operator_set(3, "chain", seed=4)


class TestFidelity:
    def test_self_is_one(self, ops):
        h = assemble(np.array([0.3, -0.7]), ops)
        assert fidelity(h, h) == 1.0

    def test_negation_is_zero(self, ops):
        h = assemble(np.array([0.3, -0.7]), ops)
        assert fidelity(h, -h) == 0.0

    def test_orthogonal_is_half(self):
        assert fidelity(pauli_matrix("X"), pauli_matrix("Z")) == 0.5

    def test_scale_invariance(self, ops):
        h = assemble(np.array([0.3, -0.7]), ops)
        assert fidelity(h, 2 * h) == pytest.approx(1.0, abs=1e-14)

    def test_symmetry(self, ops):
        rng = np.random.default_rng(1)
        h1 = assemble(rng.uniform(-1, 1, 2), ops)
        h2 = assemble(rng.uniform(-1, 1, 2), ops)
        assert fidelity(h1, h2) == pytest.approx(fidelity(h2, h1), abs=1e-14)

    def test_range_and_extremes(self, ops):
        rng = np.random.default_rng(2)
        for _ in range(50):
            h1 = assemble(rng.uniform(-1, 1, 2), ops)
            h2 = assemble(rng.uniform(-1, 1, 2), ops)
            f = fidelity(h1, h2)
            assert 0.0 <= f <= 1.0

    def test_zero_operator_rejected(self, ops):
        h = assemble(np.array([0.3, -0.7]), ops)
        with pytest.raises(ValueError):
            fidelity(np.zeros_like(h), h)


class TestGramRoute:
    def test_matches_matrix_route(self, ops):
        # dual route: coefficient/Gram formula against the trace formula
        rng = np.random.default_rng(3)
        g = gram_matrix(ops)
        for _ in range(30):
            c1 = rng.uniform(-1, 1, 2)
            c2 = rng.uniform(-1, 1, 2)
            via_gram = float(coefficient_fidelity(c1, c2, g))
            via_trace = fidelity(assemble(c1, ops), assemble(c2, ops))
            assert via_gram == pytest.approx(via_trace, abs=1e-12)

    def test_batched(self, ops):
        rng = np.random.default_rng(4)
        g = gram_matrix(ops)
        c1 = rng.uniform(-1, 1, (6, 2))
        c2 = rng.uniform(-1, 1, (6, 2))
        batch = coefficient_fidelity(c1, c2, g)
        singles = [float(coefficient_fidelity(c1[i], c2[i], g)) for i in range(6)]
        assert np.allclose(batch, singles, atol=1e-14)

    def test_gram_symmetric(self, ops):
        g = gram_matrix(ops)
        assert np.allclose(g, g.T, atol=1e-12)


class TestEvaluate:
    def test_perfect_predictor(self, ops):
        ds = generate(ops, 20, seed=5)
        _, c, _ = ds.arrays()
        lookup = {tuple(np.round(a, 12)): ci for a, ci in zip(ds.arrays()[0], c)}
        report = evaluate(lambda a: np.stack([lookup[tuple(np.round(r, 12))] for r in a]), ds, ops)
        assert all(r.mean_f == pytest.approx(1.0, abs=1e-12) for r in report.rows)

    def test_antipodal_predictor(self, ops):
        ds = generate(ops, 20, seed=6)
        lookup = {tuple(np.round(a, 12)): c for a, c in zip(*ds.arrays()[:2])}
        report = evaluate(
            lambda a: np.stack([-lookup[tuple(np.round(r, 12))] for r in a]), ds, ops
        )
        assert all(r.mean_f == pytest.approx(0.0, abs=1e-12) for r in report.rows)

    def test_grouping_by_level(self, ops):
        ds = generate(ops, 15, seed=7)
        report = evaluate(lambda a: np.ones((a.shape[0], 2)), ds, ops)
        assert [r.level for r in report.rows] == sorted({s.k for s in ds.samples})
        assert sum(r.count for r in report.rows) == len(ds)

    def test_csv_round_trip(self, tmp_path, ops):
        ds = generate(ops, 10, seed=8)
        report = evaluate(lambda a: np.ones((a.shape[0], 2)), ds, ops)
        path = tmp_path / "report.csv"
        write_report_csv(report, path)
        loaded = read_report_csv(path)
        assert loaded.rows == report.rows
        write_report_json(report, tmp_path / "report.json")
