"""Sequential teleportation that reuses one N-port resource.

Each round a fresh singlet ``(C, R)`` is created, Alice teleports ``C`` with the
PGM over the unmarked ports, Bob swaps the receiving port into the first unmarked
slot, and that slot is marked. The twirl over collective Cliffords is unravelled:
each trajectory applies one uniformly sampled Clifford to every unmarked A_j, B_j,
which averages to the exact 24-element twirl. Spent systems are removed by sampling
a computational-basis measurement, which keeps the trajectory pure and leaves the
seed-averaged state of the remaining systems equal to the partial trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import unitary_group

from . import qcore, schur
from ._parallel import ordered_map
from .generalized import clifford_matrices
from .pbt import DEFAULT_DENSE_CAP, build_pgm, check_dense_cap, make_rng, teleport_once
from .qcore import SINGLET, HermitianOperator, PureState, SystemLayout

TWIRL_MODES = ("clifford-tensor", "haar-mc")
CSV_COLUMNS = ("round", "z", "success", "fid_teleported", "fid_resource_est", "lemma2_bound")


def _collective(u: np.ndarray, n: int) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for _ in range(n):
        out = np.kron(out, u)
    return out


def twirl_ports(
    op: HermitianOperator,
    mode: str = "clifford-tensor",
    samples: int = 0,
    seed: int | np.random.Generator | None = None,
) -> HermitianOperator:
    """Average of (U x ... x U) op (U x ... x U)^dagger, the same U on every subsystem.

    ``clifford-tensor`` averages exactly over the 24 single-qubit Cliffords;
    ``haar-mc`` uses ``samples`` Haar-random unitaries drawn with ``seed``.
    """
    n = len(op.layout)
    if any(dim != 2 for dim in op.layout.dims):
        raise ValueError("the twirl is defined for qubit pairs")
    if mode == "clifford-tensor":
        unitaries = clifford_matrices()
    elif mode == "haar-mc":
        if samples < 1:
            raise ValueError("haar-mc needs samples >= 1")
        if seed is None:
            raise ValueError("haar-mc needs a seed")
        draws = unitary_group.rvs(2, size=samples, random_state=make_rng(seed))
        unitaries = list(draws.reshape(samples, 2, 2))
    else:
        raise ValueError(f"unknown twirl mode {mode!r}")
    total = np.zeros_like(op.matrix, dtype=complex)
    for u in unitaries:
        big = _collective(u, n)
        total += big @ op.matrix @ big.conj().T
    total /= len(unitaries)
    return HermitianOperator(op.layout, (total + total.conj().T) / 2, kind=op.kind, check=False)


def singlet_pairs_state(ports: list[int]) -> PureState:
    labels = [lab for j in ports for lab in (f"A_{j}", f"B_{j}")]
    return qcore.pair_product_state(SystemLayout.uniform(labels), [(f"A_{j}", f"B_{j}") for j in ports], SINGLET)


def _singlet_fidelity(m: np.ndarray) -> float:
    """<Psi^-|rho|Psi^-> for a two-qubit rho = m m^dagger given as a (4 x r) factor."""
    v = SINGLET.conj() @ m
    return float(min(1.0, np.real(np.vdot(v, v))))


def port_marginal_fidelity(state: PureState, j: int, marked: set[int] | frozenset[int] = frozenset()) -> float:
    """<Psi^-| rho_{A_j B_j} |Psi^->, the Uhlmann fidelity of port j with a fresh singlet."""
    if j in marked:
        raise ValueError(f"port {j} is marked")
    return _singlet_fidelity(qcore.split_amplitudes(state, [f"A_{j}", f"B_{j}"]))


def _fidelity_and_distance(m: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    """Fidelity and one-norm distance between rho = m m^dagger and |target><target|.

    Both operators live in span(m, target), so a QR basis of that span reduces the
    eigenproblem to (rank + 1) dimensions.
    """
    fid = float(min(1.0, np.real(np.vdot(target.conj() @ m, target.conj() @ m))))
    q, _ = np.linalg.qr(np.column_stack([m, target]))
    a = q.conj().T @ m
    b = q.conj().T @ target
    diff = a @ a.conj().T - np.outer(b, b.conj())
    dist = float(np.sum(np.abs(np.linalg.eigvalsh((diff + diff.conj().T) / 2))))
    return fid, dist


@dataclass(frozen=True)
class RecycleRound:
    round: int
    z: int
    success: bool
    fid_teleported: float
    fid_resource_est: float
    trace_distance_est: float
    port_marginal_mean: float
    lemma2_bound: float
    povm_count: int


@dataclass(frozen=True)
class RecycleTrace:
    N: int
    seed: int
    rounds: tuple[RecycleRound, ...] = field(default=())

    def csv_rows(self) -> list[tuple]:
        return [(r.round, r.z, int(r.success), r.fid_teleported, r.fid_resource_est, r.lemma2_bound)
                for r in self.rounds]


class RecyclingSimulator:
    """Stepwise recycling run; call :meth:`step` once per round."""

    def __init__(self, N: int, seed: int, dense_cap: int = DEFAULT_DENSE_CAP):
        if N < 1:
            raise ValueError("N must be at least 1")
        check_dense_cap(N, dense_cap)
        self.N = N
        self.seed = int(seed)
        self.rng = make_rng(self.seed)
        self.unmarked = list(range(1, N + 1))
        self.marked: list[int] = []
        self.state = singlet_pairs_state(self.unmarked)
        self.rounds: list[RecycleRound] = []
        self._cliffords = clifford_matrices()

    def step(self) -> RecycleRound:
        if len(self.unmarked) < 2:
            raise ValueError("recycling needs at least two unmarked ports per round")
        r = len(self.rounds) + 1
        ports = list(self.unmarked)
        first = ports[0]
        assert not set(ports) & set(self.marked)
        fresh = PureState(SystemLayout.uniform(["C", "R"]), SINGLET)
        state = fresh @ self.state
        povm = build_pgm(len(ports))
        outcome, after = teleport_once(state, self.rng, source="C", ports=ports, povm=povm)
        success = outcome.port != 0
        tele = _singlet_fidelity(qcore.split_amplitudes(after, ["R", f"B_{first}"])) if success else 0.0

        rest = ports[1:]
        keep = [lab for j in rest for lab in (f"A_{j}", f"B_{j}")]
        fid, dist = _fidelity_and_distance(qcore.split_amplitudes(after, keep), singlet_pairs_state(rest).amplitudes)
        marginals = [port_marginal_fidelity(after, j) for j in rest]

        self.state = self._discard(after, ["C", "R", f"A_{first}", f"B_{first}"])
        self.unmarked = rest
        self.marked.append(first)
        self.state = self._twirl(self.state)
        record = RecycleRound(
            round=r,
            z=outcome.port,
            success=success,
            fid_teleported=tele,
            fid_resource_est=fid,
            trace_distance_est=dist,
            port_marginal_mean=float(np.mean(marginals)),
            lemma2_bound=schur.accumulated_error_bound(self.N, r),
            povm_count=povm.N + 1,
        )
        self.rounds.append(record)
        return record

    def _discard(self, state: PureState, labels: list[str]) -> PureState:
        m = qcore.split_amplitudes(state, labels)
        weights = np.sum(np.abs(m) ** 2, axis=1)
        outcome = int(self.rng.choice(len(weights), p=weights / weights.sum()))
        remaining = state.layout.without(labels)
        return PureState.normalized(remaining, m[outcome])

    def _twirl(self, state: PureState) -> PureState:
        u = self._cliffords[int(self.rng.integers(len(self._cliffords)))]
        amps = state.tensor()
        for axis in range(amps.ndim):
            amps = np.moveaxis(np.tensordot(u, amps, axes=([1], [axis])), 0, axis)
        return PureState(state.layout, amps.reshape(-1))

    def trace(self) -> RecycleTrace:
        return RecycleTrace(self.N, self.seed, tuple(self.rounds))


def recycle_protocol_run(N: int, k: int, seed: int, dense_cap: int = DEFAULT_DENSE_CAP) -> RecycleTrace:
    """Run k rounds of the recycling protocol on N ports."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if k >= N:
        raise ValueError(f"need k < N, got k={k}, N={N}")
    sim = RecyclingSimulator(N, seed, dense_cap)
    for _ in range(k):
        sim.step()
    return sim.trace()


@dataclass(frozen=True)
class RoundStatistics:
    round: int
    mean: float
    stderr: float


def run_many(N: int, k: int, seeds, dense_cap: int = DEFAULT_DENSE_CAP, threads: int | None = None) -> list[RecycleTrace]:
    return ordered_map(lambda s: recycle_protocol_run(N, k, s, dense_cap), list(seeds), threads)


def round_statistics(traces: list[RecycleTrace], metric: str = "fid_teleported") -> list[RoundStatistics]:
    """Per-round mean and standard error of ``metric`` across seeds."""
    if not traces:
        return []
    values = np.array([[getattr(r, metric) for r in t.rounds] for t in traces], dtype=float)
    n = values.shape[0]
    err = values.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(values.shape[1])
    return [RoundStatistics(i + 1, float(m), float(e)) for i, (m, e) in enumerate(zip(values.mean(axis=0), err))]
