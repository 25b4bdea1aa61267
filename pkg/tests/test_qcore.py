from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from portbased import qcore
from portbased.qcore import HermitianOperator, PureState, SystemLayout

PAIR = SystemLayout.uniform(["A", "B"])


def random_state(layout: SystemLayout, seed: int) -> PureState:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=layout.total_dim) + 1j * rng.normal(size=layout.total_dim)
    return PureState.normalized(layout, v)


def random_density(layout: SystemLayout, seed: int, rank: int = 3) -> HermitianOperator:
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(layout.total_dim, rank)) + 1j * rng.normal(size=(layout.total_dim, rank))
    rho = g @ g.conj().T
    return HermitianOperator(layout, rho / np.trace(rho).real, kind="density")


class TestLayout:
    def test_total_dim(self):
        lay = SystemLayout((("a", 2), ("b", 3)))
        assert lay.total_dim == 6

    def test_duplicate_labels(self):
        with pytest.raises(qcore.LayoutError):
            SystemLayout((("a", 2), ("a", 2)))

    def test_dim_one_rejected(self):
        with pytest.raises(qcore.LayoutError):
            SystemLayout((("a", 1),))

    def test_unnormalized_state_rejected(self):
        with pytest.raises(ValueError):
            PureState(PAIR, np.ones(4, dtype=complex))


class TestResource:
    def test_single_singlet(self):
        state = qcore.build_singlet_resource(1)
        assert state.layout.labels == ("A_1", "B_1")
        np.testing.assert_allclose(state.amplitudes, [0, 1 / np.sqrt(2), -1 / np.sqrt(2), 0])

    def test_two_singlets_alice_marginal(self):
        state = qcore.build_singlet_resource(2)
        assert len(state.amplitudes) == 16
        rho = qcore.partial_trace(state, ["A_1", "A_2"])
        np.testing.assert_allclose(rho.matrix, np.eye(4) / 4, atol=1e-12)

    def test_canonical_mes_qutrit(self):
        state = qcore.build_singlet_resource(1, 3, "canonical-mes")
        expected = np.zeros(9)
        expected[[0, 4, 8]] = 1 / np.sqrt(3)
        np.testing.assert_allclose(state.amplitudes, expected)

    def test_singlet_needs_qubits(self):
        with pytest.raises(qcore.LayoutError):
            qcore.build_singlet_resource(2, 3, "singlet")


class TestPartialTrace:
    def test_singlet_marginal(self):
        rho = qcore.partial_trace(PureState(PAIR, qcore.SINGLET).density(), ["A"])
        np.testing.assert_allclose(rho.matrix, np.eye(2) / 2, atol=1e-12)

    def test_keep_everything(self):
        op = random_density(PAIR, 1)
        assert qcore.partial_trace(op, ["A", "B"]) is op

    def test_product_structure(self):
        state = qcore.build_singlet_resource(2)
        rho = qcore.partial_trace(state.density(), ["A_1", "B_1"])
        np.testing.assert_allclose(rho.matrix, np.outer(qcore.SINGLET, qcore.SINGLET), atol=1e-12)

    def test_unknown_label(self):
        with pytest.raises(qcore.LayoutError):
            qcore.partial_trace(random_density(PAIR, 0), ["C"])


class TestPermute:
    def test_swap_basis(self):
        out = qcore.permute_subsystems(qcore.ket(PAIR, [0, 1]), {"A": "B", "B": "A"})
        np.testing.assert_allclose(out.amplitudes, qcore.ket(PAIR, [1, 0]).amplitudes)

    def test_identity(self):
        state = random_state(PAIR, 3)
        np.testing.assert_allclose(qcore.permute_subsystems(state, {}).amplitudes, state.amplitudes)

    def test_singlet_antisymmetric(self):
        out = qcore.permute_subsystems(PureState(PAIR, qcore.SINGLET), {"A": "B", "B": "A"})
        np.testing.assert_allclose(out.amplitudes, -qcore.SINGLET, atol=1e-15)

    def test_dimension_mismatch(self):
        lay = SystemLayout((("a", 2), ("b", 3)))
        with pytest.raises(qcore.LayoutError):
            qcore.permute_subsystems(random_state(lay, 0), {"a": "b", "b": "a"})


class TestEmbed:
    def test_projector_trace(self):
        pm = HermitianOperator(PAIR, np.outer(qcore.SINGLET, qcore.SINGLET))
        full = SystemLayout.uniform(["A", "B", "C"])
        assert qcore.embed_operator(pm, full).trace() == pytest.approx(2.0)

    def test_identity_embed(self):
        one = HermitianOperator(SystemLayout.uniform(["B"]), np.eye(2))
        full = SystemLayout.uniform(["A", "B", "C"])
        np.testing.assert_allclose(qcore.embed_operator(one, full).matrix, np.eye(8))

    def test_missing_label(self):
        with pytest.raises(qcore.LayoutError):
            qcore.embed_operator(HermitianOperator(PAIR, np.eye(4)), SystemLayout.uniform(["A", "C"]))


class TestFidelity:
    def test_self(self):
        rho = random_density(PAIR, 4)
        assert qcore.uhlmann_fidelity(rho, rho) == pytest.approx(1.0)

    def test_orthogonal(self):
        one = SystemLayout.uniform(["q"])
        assert qcore.uhlmann_fidelity(qcore.ket(one, [0]), qcore.ket(one, [1])) == 0.0

    def test_plus(self):
        one = SystemLayout.uniform(["q"])
        plus = PureState(one, np.array([1, 1]) / np.sqrt(2))
        assert qcore.uhlmann_fidelity(qcore.ket(one, [0]), plus) == pytest.approx(0.5)

    def test_root_convention(self):
        one = SystemLayout.uniform(["q"])
        plus = PureState(one, np.array([1, 1]) / np.sqrt(2))
        assert qcore.uhlmann_fidelity(qcore.ket(one, [0]), plus, squared=False) == pytest.approx(np.sqrt(0.5))

    def test_layout_mismatch(self):
        with pytest.raises(qcore.LayoutError):
            qcore.uhlmann_fidelity(random_state(PAIR, 0), random_state(SystemLayout.uniform(["A", "C"]), 0))


class TestTraceDistance:
    def test_identical(self):
        rho = random_density(PAIR, 2)
        assert qcore.trace_distance(rho, rho) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_pure(self):
        one = SystemLayout.uniform(["q"])
        assert qcore.trace_distance(qcore.ket(one, [0]), qcore.ket(one, [1])) == pytest.approx(2.0)

    def test_against_mixed(self):
        one = SystemLayout.uniform(["q"])
        mixed = HermitianOperator(one, np.eye(2) / 2, kind="density")
        assert qcore.trace_distance(qcore.ket(one, [0]).density(), mixed) == pytest.approx(1.0)


class TestMatrixFunction:
    one = SystemLayout.uniform(["q"])

    def test_sqrt(self):
        out = qcore.matrix_function_on_support(HermitianOperator(self.one, np.diag([4.0, 0.0])), "sqrt")
        np.testing.assert_allclose(out.matrix, np.diag([2.0, 0.0]))

    def test_inv_sqrt_projector(self):
        proj = np.array([[1, 1], [1, 1]]) / 2
        out = qcore.matrix_function_on_support(HermitianOperator(self.one, proj), "inv-sqrt")
        np.testing.assert_allclose(out.matrix, proj, atol=1e-12)

    def test_inv_sqrt(self):
        out = qcore.matrix_function_on_support(HermitianOperator(self.one, np.diag([4.0, 1.0])), "inv-sqrt")
        np.testing.assert_allclose(out.matrix, np.diag([0.5, 1.0]))

    def test_not_psd(self):
        with pytest.raises(qcore.NotPSDError):
            qcore.matrix_function_on_support(HermitianOperator(self.one, np.diag([1.0, -1e-6])), "sqrt")


seeds = st.integers(min_value=0, max_value=2**31 - 1)
TRIPLE = SystemLayout((("a", 2), ("b", 3), ("c", 2)))


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_partial_trace_preserves_trace(seed):
    rho = random_density(TRIPLE, seed)
    assert qcore.partial_trace(rho, ["b"]).trace() == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_embed_then_trace_back(seed):
    op = random_density(SystemLayout((("b", 3),)), seed)
    big = qcore.embed_operator(op, TRIPLE)
    back = qcore.partial_trace(big, ["b"])
    np.testing.assert_allclose(back.matrix / 4, op.matrix, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(seeds, seeds)
def test_permutation_is_unitary(s1, s2):
    lay = SystemLayout.uniform(["a", "b", "c"])
    perm = {"a": "c", "b": "a", "c": "b"}
    x, y = random_state(lay, s1), random_state(lay, s2)
    px, py = qcore.permute_subsystems(x, perm), qcore.permute_subsystems(y, perm)
    assert np.linalg.norm(px.amplitudes) == pytest.approx(1.0, abs=1e-12)
    assert qcore.uhlmann_fidelity(px, py) == pytest.approx(qcore.uhlmann_fidelity(x, y), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_sqrt_and_inverse_sqrt_on_support(seed):
    rho = random_density(TRIPLE, seed, rank=5)
    root = qcore.function_on_support(rho.matrix, "sqrt")
    np.testing.assert_allclose(root @ root, rho.matrix, atol=1e-9)
    inv = qcore.function_on_support(rho.matrix, "inv-sqrt")
    np.testing.assert_allclose(inv @ rho.matrix @ inv, qcore.support_projector(rho.matrix), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seeds, seeds)
def test_fidelity_monotone_under_partial_trace(s1, s2):
    a, b = random_density(TRIPLE, s1), random_density(TRIPLE, s2)
    full = qcore.uhlmann_fidelity(a, b)
    reduced = qcore.uhlmann_fidelity(qcore.partial_trace(a, ["a", "b"]), qcore.partial_trace(b, ["a", "b"]))
    assert reduced >= full - 1e-9
    assert qcore.uhlmann_fidelity(b, a) == pytest.approx(full, abs=1e-9)
