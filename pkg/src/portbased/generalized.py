"""Teleportation driven by an arbitrary set of unitaries on Bob's side.

For a unitary ensemble {U_g} the signals are
``eta_g = Tr_{B_2..B_N}[(1 x U_g) |Psi><Psi| (1 x U_g)^dagger]`` with ``|Psi>`` the N-pair
resource: Bob applies ``U_g`` to his port halves and keeps ``B_1``. Single-qudit
elements act on ``B_1`` alone. Alice's measurement is the PGM over the signals,
and its success probability converts to a teleportation fidelity via ``(K/d**2) p_s``.
"""

from __future__ import annotations

import json
import warnings
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import qcore
from ._parallel import ordered_map
from .qcore import HermitianOperator, ResourceLimitError, SystemLayout

UNITARY_ATOL = 1e-10
SIGNAL_DIM_CAP = 2**12
ENSEMBLE_KINDS = ("pauli", "port-swap", "clifford-1q", "user-supplied")


@dataclass(frozen=True)
class UnitaryEnsemble:
    kind: str
    dim: int
    elements: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not self.elements:
            raise ValueError("an ensemble needs at least one element")
        for u in self.elements:
            if u.shape != (self.dim, self.dim):
                raise ValueError(f"element of shape {u.shape} in a dimension-{self.dim} ensemble")
            err = np.max(np.abs(u.conj().T @ u - np.eye(self.dim)))
            if err > UNITARY_ATOL:
                raise ValueError(f"element is not unitary (deviation {err:.2e})")

    @property
    def K(self) -> int:
        return len(self.elements)


def pauli_matrices(d: int) -> list[np.ndarray]:
    """I, X, Y, Z for d = 2; X**a Z**b (shift and clock) otherwise."""
    if d == 2:
        return [np.eye(2, dtype=complex),
                np.array([[0, 1], [1, 0]], dtype=complex),
                np.array([[0, -1j], [1j, 0]], dtype=complex),
                np.array([[1, 0], [0, -1]], dtype=complex)]
    shift = np.roll(np.eye(d, dtype=complex), 1, axis=0)
    clock = np.diag(np.exp(2j * np.pi * np.arange(d) / d))
    return [np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b)
            for a in range(d) for b in range(d)]


def port_swap_matrices(N: int, d: int = 2) -> list[np.ndarray]:
    """Unitaries on B_1..B_N exchanging B_1 with B_i (identity for i = 1)."""
    layout = SystemLayout.uniform([f"B_{i}" for i in range(1, N + 1)], d)
    dim = layout.total_dim
    out = []
    for i in range(1, N + 1):
        axes = list(range(N))
        axes[0], axes[i - 1] = axes[i - 1], axes[0]
        index = np.arange(dim).reshape([d] * N).transpose(axes).reshape(-1)
        out.append(np.eye(dim, dtype=complex)[index])
    return out


def _canonical_phase(u: np.ndarray) -> bytes:
    flat = u.reshape(-1)
    lead = flat[np.argmax(np.abs(flat) > 1e-9)]
    v = np.round(u * (abs(lead) / lead), 8) + 0.0
    return v.tobytes()


def clifford_matrices() -> list[np.ndarray]:
    """The 24 single-qubit Cliffords modulo phase, by breadth-first closure over H and S."""
    h = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
    s = np.diag([1, 1j])
    start = np.eye(2, dtype=complex)
    seen = {_canonical_phase(start)}
    found = [start]
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for gen in (h, s):
            v = gen @ u
            key = _canonical_phase(v)
            if key not in seen:
                seen.add(key)
                found.append(v)
                queue.append(v)
    return found


def load_ensemble(path: str | Path) -> UnitaryEnsemble:
    """JSON array of K matrices, each a row-major list of rows of [re, im] pairs."""
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, list) or not raw:
        raise ValueError("ensemble file must hold a non-empty array of matrices")
    mats = []
    for m in raw:
        arr = np.asarray(m, dtype=float)
        if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"matrix entry of shape {arr.shape}; expected (n, n, 2)")
        mats.append(arr[..., 0] + 1j * arr[..., 1])
    dims = {m.shape[0] for m in mats}
    if len(dims) != 1:
        raise ValueError(f"matrices of mixed dimensions {sorted(dims)}")
    return UnitaryEnsemble("user-supplied", dims.pop(), tuple(mats))


def make_ensemble(kind: str, *, N: int | None = None, d: int = 2, path: str | Path | None = None) -> UnitaryEnsemble:
    if kind == "pauli":
        return UnitaryEnsemble(kind, d, tuple(pauli_matrices(d)))
    if kind == "port-swap":
        if N is None or N < 1:
            raise ValueError("port-swap needs N >= 1")
        return UnitaryEnsemble(kind, d**N, tuple(port_swap_matrices(N, d)))
    if kind == "clifford-1q":
        return UnitaryEnsemble(kind, 2, tuple(clifford_matrices()))
    if kind == "user-supplied":
        if path is None:
            raise ValueError("user-supplied ensembles need a file path")
        return load_ensemble(path)
    raise ValueError(f"unsupported ensemble kind {kind!r}")


@dataclass(frozen=True)
class SignalEnsemble:
    signals: tuple[HermitianOperator, ...]
    N: int
    d: int
    avg: HermitianOperator
    ranks: tuple[int, ...]

    @property
    def K(self) -> int:
        return len(self.signals)

    @property
    def avg_purity(self) -> float:
        m = self.avg.matrix
        return float(np.real(np.sum(m * m.T)))


def _resource(N: int, d: int) -> qcore.PureState:
    kind = "singlet" if d == 2 else "canonical-mes"
    state = qcore.build_singlet_resource(N, d, kind)
    order = [f"A_{i}" for i in range(1, N + 1)] + [f"B_{i}" for i in range(1, N + 1)]
    return qcore._reorder(state, state.layout.sub(order))


def signals_from_ensemble(ens: UnitaryEnsemble, N: int, d: int = 2, threads: int | None = None) -> SignalEnsemble:
    if ens.dim == d**N:
        acts_on = [f"B_{i}" for i in range(1, N + 1)]
    elif ens.dim == d:
        acts_on = ["B_1"]
    else:
        raise ValueError(f"ensemble dimension {ens.dim} acts on neither B_1 (d={d}) nor B_1..B_N")
    keep = [f"A_{i}" for i in range(1, N + 1)] + ["B_1"]
    if d ** len(keep) > SIGNAL_DIM_CAP:
        raise ResourceLimitError(f"signal dimension {d ** len(keep)} exceeds {SIGNAL_DIM_CAP}")
    psi = _resource(N, d)

    def build(u: np.ndarray) -> HermitianOperator:
        moved = qcore.PureState(psi.layout, qcore.apply_local(psi, acts_on, u))
        eta = qcore.reduced_density(moved, keep)
        return HermitianOperator(eta.layout, eta.matrix, kind="density")

    signals = tuple(ordered_map(build, ens.elements, threads))
    avg_matrix = sum(s.matrix for s in signals) / len(signals)
    avg = HermitianOperator(signals[0].layout, avg_matrix, kind="density")
    ranks = tuple(qcore.numerical_rank(s.matrix) for s in signals)
    out = SignalEnsemble(signals, N, d, avg, ranks)
    floor = 1.0 / avg_matrix.shape[0]
    if out.avg_purity < floor - 1e-12:
        raise ArithmeticError(f"purity {out.avg_purity} below the floor {floor}")
    return out


def lemma1_condition(sig: SignalEnsemble, epsilon: float) -> tuple[bool, float]:
    """Tr(eta_avg**2) <= 1/((1 - epsilon) d**(N+1)); returns (holds, right - left)."""
    if not 0 <= epsilon < 1:
        raise ValueError("epsilon must lie in [0, 1)")
    margin = 1.0 / ((1.0 - epsilon) * sig.d ** (sig.N + 1)) - sig.avg_purity
    return margin >= -1e-12, float(margin)


def pgm_success_lower_bound(sig: SignalEnsemble) -> float:
    """(1/K) [1/mean rank] [1/Tr(eta_avg**2)], clamped to [0, 1]."""
    mean_rank = sum(sig.ranks) / sig.K
    value = 1.0 / (sig.K * mean_rank * sig.avg_purity)
    return float(min(1.0, max(0.0, value)))


def pgm_success_probability(sig: SignalEnsemble) -> float:
    """Exact success probability of the PGM for equiprobable signals."""
    inv_root = qcore.function_on_support(sig.avg.matrix, "inv-sqrt")
    total = 0.0
    for s in sig.signals:
        pi = inv_root @ s.matrix @ inv_root / sig.K
        total += float(np.real(np.sum(pi * s.matrix.T)))
    return total / sig.K


def fidelity_from_success(K: int, d: int, p_s: float) -> float:
    """(K/d**2) p_s, clamped to [0, 1] with a warning when it leaves that range."""
    if not 0 <= p_s <= 1:
        raise ValueError("p_s must lie in [0, 1]")
    value = K * p_s / d**2
    if value > 1:
        warnings.warn(f"fidelity {value} above 1 clamped (K p_s > d^2)", RuntimeWarning, stacklevel=2)
        return 1.0
    return float(value)


def frame_potential(ens: UnitaryEnsemble, order: int = 2, threads: int | None = None) -> float:
    """(1/K**2) sum_{g,h} |Tr(U_g^dagger U_h)|**(2 order)."""
    if order != 2:
        raise ValueError("only the order-2 frame potential is supported")
    stack = np.stack(ens.elements)

    def row(u: np.ndarray) -> float:
        traces = np.einsum("ij,kij->k", u.conj(), stack)
        return float(np.sum(np.abs(traces) ** 4))

    return sum(ordered_map(row, ens.elements, threads)) / ens.K**2
