"""Simultaneous teleportation of k systems through N ports.

A signal ``eta^g`` is labelled by an injection ``g``: teleported system ``j``
lands on port ``g(j)``. On ``A_1..A_N, Bout_1..Bout_k`` it is a canonical MES on
each ``(A_{g(j)}, Bout_j)`` and the maximally mixed state on every untargeted
``A``. Signals are stored sparse (``d**(N+k)`` nonzeros).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import permutations
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import qcore, schur
from ._parallel import ordered_map
from .qcore import HermitianOperator, ResourceLimitError, SystemLayout

DENSE_SIGNAL_CAP = 2**12
SPARSE_SIGNAL_CAP = 2**20
PROTOCOLS = ("rec", "sim", "par")


@dataclass(frozen=True)
class PortInjection:
    N: int
    targets: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if len(set(self.targets)) != len(self.targets):
            raise ValueError(f"targets {self.targets} are not distinct")
        if any(not 1 <= t <= self.N for t in self.targets):
            raise ValueError(f"targets {self.targets} outside 1..{self.N}")

    @property
    def k(self) -> int:
        return len(self.targets)


def injection_count(N: int, k: int) -> int:
    """M = N!/(N-k)!."""
    if k < 0 or k > N:
        raise ValueError(f"need 0 <= k <= N, got k={k}, N={N}")
    return math.perm(N, k)


def all_injections(N: int, k: int) -> list[PortInjection]:
    injection_count(N, k)
    return [PortInjection(N, t) for t in permutations(range(1, N + 1), k)]


def signal_layout(N: int, k: int, d: int) -> SystemLayout:
    return SystemLayout.uniform([f"A_{i}" for i in range(1, N + 1)] + [f"Bout_{j}" for j in range(1, k + 1)], d)


@lru_cache(maxsize=4096)
def _signal_sparse(N: int, targets: tuple[int, ...], d: int) -> sp.csr_matrix:
    k = len(targets)
    dim = d ** (N + k)
    if dim > SPARSE_SIGNAL_CAP:
        raise ResourceLimitError(f"signal dimension d^(N+k) = {dim} exceeds {SPARSE_SIGNAL_CAP}")
    mes = qcore.canonical_mes(d).real
    pair = sp.csr_matrix(np.outer(mes, mes))
    idle = [i for i in range(1, N + 1) if i not in targets]
    staged = sp.identity(1, format="csr")
    for _ in targets:
        staged = sp.kron(staged, pair, format="csr")
    staged = sp.kron(staged, sp.identity(d ** len(idle), format="csr") / d ** len(idle), format="csr")
    order = [lab for j, t in enumerate(targets, 1) for lab in (f"A_{t}", f"Bout_{j}")]
    order += [f"A_{i}" for i in idle]
    target_labels = signal_layout(N, k, d).labels
    axes = [order.index(label) for label in target_labels]
    index_map = np.arange(dim).reshape([d] * (N + k)).transpose(axes).reshape(-1)
    return staged[index_map][:, index_map].tocsr()


def signal_sparse(g: PortInjection, d: int = 2) -> sp.csr_matrix:
    return _signal_sparse(g.N, g.targets, d)


def signal_state(g: PortInjection, N: int, k: int, d: int = 2) -> HermitianOperator:
    """eta^g as a dense density operator on A_1..A_N, Bout_1..Bout_k."""
    if g.N != N or g.k != k:
        raise ValueError("injection does not match (N, k)")
    dim = d ** (N + k)
    if dim > DENSE_SIGNAL_CAP:
        raise ResourceLimitError(f"dense signal of dimension {dim} exceeds {DENSE_SIGNAL_CAP}")
    matrix = signal_sparse(g, d).toarray().astype(complex)
    return HermitianOperator(signal_layout(N, k, d), matrix, kind="density")


def overlap_cycles(g: PortInjection, gp: PortInjection) -> int:
    """Closed cycles of the partial map j -> gp^{-1}(g(j)); fixed points count.

    Each closed cycle glues a set of MES into a loop contributing a factor d**2
    to Tr(eta^g eta^gp) relative to the disjoint case.
    """
    inverse = {t: j for j, t in enumerate(gp.targets)}
    step = {j: inverse[t] for j, t in enumerate(g.targets) if t in inverse}
    cycles = 0
    seen: set[int] = set()
    for start in step:
        if start in seen:
            continue
        path = []
        j = start
        while j in step and j not in seen:
            seen.add(j)
            path.append(j)
            j = step[j]
        if j in path:
            cycles += 1
    return cycles


def same_position_matches(g: PortInjection, gp: PortInjection) -> int:
    """Positions where both injections send the same system to the same port."""
    return sum(a == b for a, b in zip(g.targets, gp.targets))


def pairwise_overlap_trace(
    g: PortInjection,
    gp: PortInjection,
    N: int,
    k: int,
    d: int = 2,
    mode: str = "closed-form",
    rule: str = "cycles",
) -> Fraction | float:
    """Tr(eta^g eta^gp): d**-(N+k-2t) in closed form, or the sparse matrix trace.

    ``rule`` picks how t is counted: ``"cycles"`` (closed MES loops, exact) or
    ``"position"`` (same port with the same system index).
    """
    if mode == "closed-form":
        if rule == "cycles":
            t = overlap_cycles(g, gp)
        elif rule == "position":
            t = same_position_matches(g, gp)
        else:
            raise ValueError(f"unknown rule {rule!r}")
        return Fraction(1, d ** (N + k - 2 * t))
    if mode == "dense":
        a, b = signal_sparse(g, d), signal_sparse(gp, d)
        return float(a.multiply(b.T).sum())
    raise ValueError(f"unknown mode {mode!r}")


def printed_overlap_multiplicity(N: int, k: int, t: int) -> int:
    """L_{N,k,t} = k!(N-t)!/((k-t)!(N-k)!)."""
    if not 1 <= t <= k <= N:
        raise ValueError(f"need 1 <= t <= k <= N, got t={t}, k={k}, N={N}")
    num = math.factorial(k) * math.factorial(N - t)
    den = math.factorial(k - t) * math.factorial(N - k)
    return num // den


@dataclass(frozen=True)
class MultiplicityReport:
    """Printed L_{N,k,t} against exhaustive counts for a fixed g."""

    N: int
    k: int
    t: int
    printed: int
    position_count: int | None = None
    cycle_count: int | None = None

    @property
    def formula_mismatch(self) -> bool | None:
        if self.position_count is None:
            return None
        return self.printed != self.position_count


def overlap_histogram(N: int, k: int, rule: str = "position") -> dict[int, int]:
    """Number of g' with each overlap t, for g the identity injection (1..k)."""
    g = PortInjection(N, tuple(range(1, k + 1)))
    count = overlap_cycles if rule == "cycles" else same_position_matches
    hist = Counter(count(g, gp) for gp in all_injections(N, k))
    return {t: hist.get(t, 0) for t in range(k + 1)}


BRUTE_FORCE_MAX_N = 7


def overlap_multiplicity(N: int, k: int, t: int) -> MultiplicityReport:
    printed = printed_overlap_multiplicity(N, k, t)
    if N > BRUTE_FORCE_MAX_N:
        return MultiplicityReport(N, k, t, printed)
    return MultiplicityReport(
        N, k, t, printed,
        position_count=overlap_histogram(N, k, "position")[t],
        cycle_count=overlap_histogram(N, k, "cycles")[t],
    )


def _geometric(N: int, k: int, d: int) -> Fraction:
    # sum_{t<k} r**t, which equals (1 - r**k)/(1 - r) away from r = 1
    r = Fraction(k * d * d, N)
    return sum((r**t for t in range(k)), Fraction(0))


def avg_signal_purity(
    N: int, k: int, d: int = 2, mode: str = "closed-form", threads: int | None = None
) -> Fraction | float:
    """Tr(eta_avg**2) for the uniform average over all injections.

    ``"closed-form"``: the published geometric-progression expression (exact).
    ``"exact"``: (1/M) sum over g' of d**-(N+k-2C) using closed-cycle counts (exact).
    ``"brute-force"``: (1/M**2) sum of sparse pairwise traces over all M**2 pairs.
    """
    if k < 1 or k > N:
        raise ValueError("need 1 <= k <= N")
    M = injection_count(N, k)
    if mode == "closed-form":
        return Fraction(1, M * d ** (N - k)) + _geometric(N, k, d) / d ** (N + k)
    if mode == "exact":
        g = PortInjection(N, tuple(range(1, k + 1)))
        total = sum((Fraction(1, d ** (N + k - 2 * overlap_cycles(g, gp))) for gp in all_injections(N, k)),
                    Fraction(0))
        return total / M
    if mode == "brute-force":
        injections = all_injections(N, k)
        mats = [signal_sparse(g, d) for g in injections]

        def row(a: sp.csr_matrix) -> float:
            return sum(float(a.multiply(b.T).sum()) for b in mats)

        return float(sum(ordered_map(row, mats, threads))) / M**2
    raise ValueError(f"unknown mode {mode!r}")


def fidelity_from_purity(purity: Fraction | float, N: int, k: int, d: int = 2) -> Fraction | float:
    """Discrimination-based fidelity bound 1/(d**(N+k) Tr(eta_avg**2))."""
    return 1 / (d ** (N + k) * purity)


def simultaneous_fidelity_bound(N: int, k: int, d: int = 2, exact: bool = False) -> float | Fraction:
    """[d**(2k)/M + sum_{t<k} (k d**2/N)**t]**-1."""
    if k < 1 or k > N:
        raise ValueError("need 1 <= k <= N")
    if exact:
        return 1 / (Fraction(d ** (2 * k), injection_count(N, k)) + _geometric(N, k, d))
    r = k * d * d / N
    with np.errstate(over="ignore"):
        geometric = float(k) if r == 1 else float(np.sum(r ** np.arange(k, dtype=float)))
    return 1.0 / (float(Fraction(d ** (2 * k), injection_count(N, k))) + geometric)


def discrimination_fidelity_bound(N: int, d: int = 2) -> Fraction:
    """Single-system PBT fidelity bound from the exact purity of the N port signals."""
    return fidelity_from_purity(avg_signal_purity(N, 1, d, "exact"), N, 1, d)


@dataclass(frozen=True)
class ParallelBound:
    value: float
    linearized: float


def parallel_fidelity_bound(N: int, k: int) -> ParallelBound:
    """(1 - 3k/(4N))**k with its linear lower bound 1 - 3k**2/(4N)."""
    if k < 1 or N < k:
        raise ValueError("need 1 <= k <= N")
    return ParallelBound((1 - 3 * k / (4 * N)) ** k, 1 - 3 * k * k / (4 * N))


def no_signalling_max(N: int) -> int:
    if N < 0:
        raise ValueError("N must be non-negative")
    return N // 2


def protocol_bound(protocol: str, N: int, k: int, d: int = 2) -> float:
    if protocol == "rec":
        return schur.accumulated_error_bound(N, k)
    if protocol == "sim":
        return simultaneous_fidelity_bound(N, k, d)
    if protocol == "par":
        if d != 2:
            raise ValueError("the parallel bound is stated for qubits")
        return parallel_fidelity_bound(N, k).value
    raise ValueError(f"unknown protocol {protocol!r}")


@dataclass(frozen=True)
class ProtocolBoundReport:
    protocol: str
    N: int
    k: int
    d: int
    bound: float
    no_signalling: bool
    Q: int | None = None
    warnings: tuple[str, ...] = field(default=())


def bound_report(protocol: str, N: int, k: int, d: int = 2) -> ProtocolBoundReport:
    value = min(1.0, max(0.0, protocol_bound(protocol, N, k, d)))
    warnings = ("no-signalling",) if k > N / 2 else ()
    return ProtocolBoundReport(protocol, N, k, d, value, k > N / 2, warnings=warnings)


def efficiency_q(protocol: str, delta: float, N: int, d: int = 2) -> int:
    """Largest k <= floor(N/2) with bound(N, k) >= 1 - delta (0 if none).

    Every bound is non-increasing in k, so the scan stops at the first miss.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    best = 0
    for k in range(1, no_signalling_max(N) + 1):
        if protocol_bound(protocol, N, k, d) < 1 - delta:
            break
        best = k
    return best


def efficiency_scan(
    protocol: str, delta: float, grid: Iterable[int], d: int = 2, threads: int | None = None
) -> list[tuple[int, int]]:
    grid = [int(n) for n in grid]
    qs = ordered_map(lambda n: efficiency_q(protocol, delta, n, d), grid, threads)
    return list(zip(grid, qs))


def scan_exponent(scan: Sequence[tuple[int, int]]) -> float:
    """Slope of log Q against log N over the points with Q >= 1."""
    pts = [(n, q) for n, q in scan if q >= 1]
    if len(pts) < 2:
        raise ValueError("need at least two points with Q >= 1")
    n, q = np.array(pts, dtype=float).T
    return float(np.polyfit(np.log(n), np.log(q), 1)[0])


def geometric_grid(lo: int, hi: int, num: int) -> list[int]:
    """``num`` log-spaced integers from lo to hi, duplicates removed."""
    return sorted({int(round(x)) for x in np.geomspace(lo, hi, num)})
