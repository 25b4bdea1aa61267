"""Port-based teleportation with the pretty good measurement.

Alice's measurement lives on ``A_0 ... A_N`` (2**(N+1) dimensions). Its action on
the full ``2**(2N+2)``-amplitude state is applied by reshaping the amplitudes
into an (Alice x rest) matrix, so no operator on the full space is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np

from . import qcore
from ._parallel import ordered_map
from .qcore import (
    SINGLET,
    HermitianOperator,
    PureState,
    ResourceLimitError,
    SystemLayout,
)

DEFAULT_DENSE_CAP = 9
UNREACHABLE_PROBABILITY = 1e-14

P_MINUS = np.outer(SINGLET, SINGLET.conj())


def make_rng(seed: int | np.random.Generator) -> np.random.Generator:
    """Counter-based generator keyed by ``seed`` (Philox)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(key=int(seed)))


def alice_layout(N: int) -> SystemLayout:
    return SystemLayout.uniform([f"A_{i}" for i in range(N + 1)])


def full_layout(N: int) -> SystemLayout:
    return SystemLayout.uniform([f"A_{i}" for i in range(N + 1)] + [f"B_{i}" for i in range(N + 1)])


def check_dense_cap(N: int, dense_cap: int = DEFAULT_DENSE_CAP) -> None:
    if N > dense_cap:
        raise ResourceLimitError(
            f"N={N} exceeds the dense cap {dense_cap}: the full state would hold "
            f"2^{2 * N + 2} = {2 ** (2 * N + 2)} amplitudes"
        )


def build_sigma(i: int, N: int) -> HermitianOperator:
    """sigma^(i) = P^-_{A_0 A_i} x identity / 2**(N-1) on A_0 ... A_N."""
    if not 1 <= i <= N:
        raise IndexError(f"port index {i} outside 1..{N}")
    pair = SystemLayout.uniform(["A_0", f"A_{i}"])
    embedded = qcore.embed_operator(HermitianOperator(pair, P_MINUS, check=False), alice_layout(N))
    return HermitianOperator(embedded.layout, embedded.matrix / 2 ** (N - 1), kind="density", check=False)


@dataclass(frozen=True)
class PovmSet:
    """PGM elements Pi_1..Pi_N plus the failure element Pi_0 = 1 - sum Pi_i."""

    N: int
    elements: tuple[HermitianOperator, ...]
    failure: HermitianOperator
    factors: tuple[np.ndarray, ...] = field(default=(), repr=False, compare=False)

    @property
    def layout(self) -> SystemLayout:
        return self.failure.layout

    def element(self, port: int) -> HermitianOperator:
        if port == 0:
            return self.failure
        if not 1 <= port <= self.N:
            raise IndexError(f"outcome {port} outside 0..{self.N}")
        return self.elements[port - 1]

    @cached_property
    def sqrt_elements(self) -> tuple[np.ndarray, ...]:
        """sqrt(Pi_0), sqrt(Pi_1), ..., sqrt(Pi_N) as arrays.

        With Pi_i = B B^dagger for a thin factor B, sqrt(Pi_i) = B (B^dagger B)^{-1/2} B^dagger,
        which needs only a rank(sigma)-sized eigenproblem. Pi_0 is a projector.
        """
        roots = [self.failure.matrix]
        if self.factors:
            for b in self.factors:
                inner = qcore.function_on_support(b.conj().T @ b, "inv-sqrt")
                roots.append(b @ inner @ b.conj().T)
        else:
            roots += [qcore.function_on_support(e.matrix, "sqrt") for e in self.elements]
        return tuple(roots)

    def completeness_error(self) -> float:
        total = self.failure.matrix + sum(e.matrix for e in self.elements)
        return float(np.max(np.abs(total - np.eye(total.shape[0]))))

    def validate(self, atol: float = 1e-9) -> None:
        for e in (self.failure, *self.elements):
            lowest = np.linalg.eigvalsh(e.matrix)[0]
            if lowest < qcore.PSD_FLOOR:
                raise qcore.NotPSDError(f"POVM element has eigenvalue {lowest:.3e}")
        err = self.completeness_error()
        if err > atol:
            raise ValueError(f"POVM elements sum to identity only within {err:.3e}")


def build_pgm(N: int) -> PovmSet:
    """Pretty good measurement Pi_i = rho^{-1/2} sigma^(i) rho^{-1/2}, rho = sum sigma^(i)."""
    if N < 1:
        raise ValueError("N must be at least 1")
    return _build_pgm(N)


@lru_cache(maxsize=16)
def _build_pgm(N: int) -> PovmSet:
    layout = alice_layout(N)
    sigmas = [build_sigma(i, N).matrix for i in range(1, N + 1)]
    rho = sum(sigmas)
    # sigma^(i) = V_i V_i^dagger / 2**(N-1) with V_i the singlet on (A_0, A_i) times identity
    ranges = [_singlet_isometry(i, N) for i in range(1, N + 1)]
    w, v = np.linalg.eigh(rho)
    if w[0] < qcore.NOT_PSD_FLOOR:
        raise qcore.NotPSDError(f"rho has eigenvalue {w[0]:.3e}")
    keep = w > qcore.DEFAULT_CUTOFF * w[-1]
    vk = v[:, keep]
    inv_root = (vk / np.sqrt(w[keep])) @ vk.conj().T
    elements = []
    factors = []
    for s, iso in zip(sigmas, ranges):
        pi = inv_root @ s @ inv_root
        elements.append(HermitianOperator(layout, (pi + pi.conj().T) / 2, kind="povm", check=False))
        factors.append(inv_root @ iso / np.sqrt(2.0 ** (N - 1)))
    failure = np.eye(layout.total_dim) - vk @ vk.conj().T
    return PovmSet(
        N, tuple(elements), HermitianOperator(layout, failure, kind="povm", check=False), tuple(factors)
    )


def _singlet_isometry(i: int, N: int) -> np.ndarray:
    """Columns |Psi^->_{A_0 A_i} x |e_k> spanning the range of sigma^(i)."""
    rest = 2 ** (N - 1)
    staged = np.kron(SINGLET.reshape(4, 1), np.eye(rest, dtype=complex))
    tensor = staged.reshape([2] * (N + 1) + [rest])
    order = ["A_0", f"A_{i}"] + [f"A_{j}" for j in range(1, N + 1) if j != i]
    axes = [order.index(f"A_{j}") for j in range(N + 1)]
    return tensor.transpose(axes + [N + 1]).reshape(2 ** (N + 1), rest)


@dataclass(frozen=True)
class TeleportOutcome:
    """One measurement outcome.

    ``ideal_fidelity`` is |<ideal|post>|**2; ``ideal_overlap`` is |<ideal|post>|,
    the root fidelity. Both are 0 for the failure outcome.
    """

    port: int
    probability: float
    post_state: PureState | None
    ideal_fidelity: float
    ideal_overlap: float

    @property
    def reachable(self) -> bool:
        return self.post_state is not None


def protocol_input_state(N: int) -> PureState:
    """Singlets on A_0 B_0 (B_0 is the reference) and on every port A_i B_i."""
    pairs = [(f"A_{i}", f"B_{i}") for i in range(N + 1)]
    return qcore.pair_product_state(full_layout(N), pairs, SINGLET)


def ideal_state(N: int, i: int) -> PureState:
    """Singlets on A_0 A_i, B_0 B_i and A_j B_j for every other port."""
    pairs = [("A_0", f"A_{i}"), ("B_0", f"B_{i}")]
    pairs += [(f"A_{j}", f"B_{j}") for j in range(1, N + 1) if j != i]
    return qcore.pair_product_state(full_layout(N), pairs, SINGLET)


def _alice_probabilities(state: PureState, labels: Sequence[str], povm: PovmSet) -> np.ndarray:
    m = qcore.split_amplitudes(state, labels)
    rho_a = m @ m.conj().T
    probs = [np.real(np.sum(povm.failure.matrix * rho_a.T))]
    probs += [np.real(np.sum(e.matrix * rho_a.T)) for e in povm.elements]
    return np.clip(np.array(probs), 0.0, None)


def _outcome(
    state: PureState,
    povm: PovmSet,
    labels: Sequence[str],
    z: int,
    probability: float,
) -> TeleportOutcome:
    if probability < UNREACHABLE_PROBABILITY:
        return TeleportOutcome(z, probability, None, 0.0, 0.0)
    amps = qcore.apply_local(state, labels, povm.sqrt_elements[z])
    post = PureState.normalized(state.layout, amps)
    if z == 0:
        return TeleportOutcome(0, probability, post, 0.0, 0.0)
    # The undisturbed reference: source and port z of Alice projected onto the singlet.
    ideal = qcore.apply_local(state, [labels[0], labels[z]], P_MINUS)
    norm = np.linalg.norm(ideal)
    overlap = abs(np.vdot(ideal, post.amplitudes)) / norm if norm > 0 else 0.0
    overlap = float(min(overlap, 1.0))
    return TeleportOutcome(z, probability, post, overlap**2, overlap)


def post_measurement_state(state: PureState, povm: PovmSet, port: int) -> TeleportOutcome:
    """Outcome ``port`` of ``povm`` applied on A_0..A_N of ``state``."""
    labels = povm.layout.labels
    povm.element(port)
    m = qcore.split_amplitudes(state, labels)
    probability = float(np.linalg.norm(povm.sqrt_elements[port] @ m) ** 2)
    return _outcome(state, povm, labels, port, probability)


def teleport_once(
    resource: PureState,
    seed: int | np.random.Generator,
    *,
    source: str = "A_0",
    ports: Sequence[int] | None = None,
    povm: PovmSet | None = None,
) -> tuple[TeleportOutcome, PureState]:
    """Measure, sample an outcome, and let Bob (and Alice) swap port z into ``ports[0]``.

    ``ports`` lists the active port numbers (labels ``A_j``/``B_j``); by default all
    ports present in the layout. ``ports[0]`` is the port consumed by this round.
    The returned outcome's ``port`` is the actual port number, 0 on failure; on
    failure no swap happens and the collapsed state is returned.
    """
    if ports is None:
        ports = sorted(
            int(label[2:]) for label in resource.layout.labels
            if label.startswith("A_") and label != source and label[2:].isdigit() and int(label[2:]) >= 1
        )
    ports = list(ports)
    if povm is None:
        povm = build_pgm(len(ports))
    if povm.N != len(ports):
        raise ValueError(f"POVM for {povm.N} ports used with {len(ports)} active ports")
    labels = [source] + [f"A_{p}" for p in ports]
    probs = _alice_probabilities(resource, labels, povm)
    rng = make_rng(seed)
    cdf = np.cumsum(probs)
    z = int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(probs) - 1))
    while probs[z] < UNREACHABLE_PROBABILITY:
        z -= 1
    outcome = _outcome(resource, povm, labels, z, float(probs[z]))
    if z == 0:
        return outcome, outcome.post_state
    actual = ports[z - 1]
    outcome = TeleportOutcome(actual, outcome.probability, outcome.post_state,
                              outcome.ideal_fidelity, outcome.ideal_overlap)
    after = outcome.post_state
    if actual != ports[0]:
        first = ports[0]
        after = qcore.permute_subsystems(after, {
            f"A_{actual}": f"A_{first}", f"A_{first}": f"A_{actual}",
            f"B_{actual}": f"B_{first}", f"B_{first}": f"B_{actual}",
        })
    return outcome, after


def enumerate_outcomes(
    N: int,
    dense_cap: int = DEFAULT_DENSE_CAP,
    keep_states: bool = False,
    threads: int | None = None,
) -> list[TeleportOutcome]:
    """Every outcome 0..N of the PGM on the singlet input, in port order."""
    check_dense_cap(N, dense_cap)
    povm = build_pgm(N)
    state = protocol_input_state(N)

    def run(port: int) -> TeleportOutcome:
        out = post_measurement_state(state, povm, port)
        if not keep_states:
            out = TeleportOutcome(out.port, out.probability, None, out.ideal_fidelity, out.ideal_overlap)
        return out

    povm.sqrt_elements  # computed once before any worker threads start
    return ordered_map(run, range(N + 1), threads)


def exact_protocol_fidelity(
    N: int,
    dense_cap: int = DEFAULT_DENSE_CAP,
    squared: bool = False,
    threads: int | None = None,
) -> float:
    """Average ideal-state fidelity sum_i p_i F_i over all outcomes; failure counts 0.

    ``F_i`` is the root fidelity |<ideal|post>| by default, which is the quantity
    the closed-form recycling bound evaluates; ``squared=True`` uses |<ideal|post>|**2.
    """
    outcomes = enumerate_outcomes(N, dense_cap, threads=threads)
    return float(sum(o.probability * (o.ideal_fidelity if squared else o.ideal_overlap)
                     for o in outcomes if o.port))


def dense_trace_pi1(N: int) -> float:
    return build_pgm(N).elements[0].trace()


def dense_trace_sigma_sqrt_pi1(N: int) -> float:
    povm = build_pgm(N)
    return float(np.real(np.sum(build_sigma(1, N).matrix * povm.sqrt_elements[1].T)))


def exact_entanglement_fidelity(N: int, dense_cap: int = DEFAULT_DENSE_CAP) -> float:
    """sum_i p_i <Psi^-| rho^i_{B_0 B_i} |Psi^->: the teleported half against its reference."""
    total = 0.0
    for out in enumerate_outcomes(N, dense_cap, keep_states=True):
        if out.port == 0 or not out.reachable:
            continue
        m = qcore.split_amplitudes(out.post_state, ["B_0", f"B_{out.port}"])
        v = SINGLET.conj() @ m
        total += out.probability * float(np.real(np.vdot(v, v)))
    return total
