"""Acceptance criteria 1-11.

Each ``criterion_n`` returns ``(passed, detail)`` and is checked at its stated
tolerance. Under pytest every outcome is printed in the terminal summary; run
the file directly to get the same lines on stdout. Criteria 2 and 3 target
coefficients the exact sums do not have; they run as written and are marked
as expected failures.
"""
from __future__ import annotations

import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from portbased import generalized as gen
from portbased import multi, pbt, recycling, schur

LINES: dict[int, str] = {}
ODD_GRID = list(range(101, 1002, 2))


def _record(n: int, passed: bool, detail: str) -> None:
    LINES[n] = f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(LINES[n])


def _fit(grid: list[int], deficit: list[float], powers: tuple[int, ...]) -> np.ndarray:
    """Least squares for 1 - y = sum_p c_p / N**p with the constant term fixed at 1."""
    n = np.asarray(grid, dtype=float)
    cols = np.column_stack([n ** -p for p in powers])
    scale = np.abs(cols).max(axis=0)
    coef, *_ = np.linalg.lstsq(cols / scale, np.asarray(deficit, dtype=float), rcond=None)
    return coef / scale


def criterion_1() -> tuple[bool, str]:
    start = time.perf_counter()
    worst_pi, worst_sig = 0.0, 0.0
    for N in range(2, 9):
        exact = float(schur.trace_pi1_exact_sum(N))
        worst_pi = max(worst_pi, abs(pbt.dense_trace_pi1(N) - exact) / exact)
        value = float(schur.trace_sigma_sqrtpi1_sum(N))
        worst_sig = max(worst_sig, abs(pbt.dense_trace_sigma_sqrt_pi1(N) - value) / value)
    elapsed = time.perf_counter() - start
    ok = worst_pi <= 1e-9 and worst_sig <= 1e-9 and elapsed <= 60
    return ok, f"max rel diff TrPi1 {worst_pi:.2e}, Tr(sigma sqrtPi1) {worst_sig:.2e}, {elapsed:.1f}s"


def criterion_2() -> tuple[bool, str]:
    start = time.perf_counter()
    values = [schur.recycle_fidelity_bound(N) for N in ODD_GRID]
    elapsed = time.perf_counter() - start
    (c1,) = _fit(ODD_GRID, [1 - v for v in values], (1,))
    rel = abs(c1 - 11 / 4) / (11 / 4)
    ok = rel <= 0.02 and elapsed <= 60
    return ok, f"c1 = {c1:.5f} vs 11/4 (rel err {rel:.3f}, tol 0.02), {len(ODD_GRID)} points in {elapsed:.1f}s"


def criterion_3() -> tuple[bool, str]:
    # 1 - N Tr Pi_1 / 2**(N+1), evaluated exactly before rounding
    deficit = [float(1 - schur.trace_pi1_exact_sum(N) * N / 2 ** (N + 1)) for N in ODD_GRID]
    c1, c2 = _fit(ODD_GRID, deficit, (1, 2))
    r1, r2 = abs(c1 - 5.5) / 5.5, abs(c2 - 6) / 6
    ok = r1 <= 0.02 and r2 <= 0.15
    return ok, f"c1 = {c1:.3g} vs 11/2 (rel err {r1:.3f}), c2 = {c2:.3g} vs 6 (rel err {r2:.3f})"


def criterion_4() -> tuple[bool, str]:
    gaps = {N: pbt.exact_protocol_fidelity(N) - schur.recycle_fidelity_bound(N) for N in range(2, 9)}
    outcomes = pbt.enumerate_outcomes(1)
    (teleport,) = [o for o in outcomes if o.port == 1]
    one_port = abs(teleport.probability - 0.25) <= 1e-12 and abs(teleport.ideal_fidelity - 1) <= 1e-12
    ok = all(g >= -1e-12 for g in gaps.values()) and one_port
    worst = min(gaps.values())
    return ok, (f"min(dense - bound) over N=2..8 = {worst:.1e}; "
                f"N=1: p1 = {teleport.probability:.15g}, F = {teleport.ideal_fidelity:.15g}")


def criterion_5() -> tuple[bool, str]:
    N, k, seeds = 6, 3, 1000
    start = time.perf_counter()
    stats = recycling.round_statistics(recycling.run_many(N, k, range(seeds)))
    elapsed = time.perf_counter() - start
    checks = [(s.mean, 1 - 11 * s.round / (2 * N) - 3 * s.stderr) for s in stats]
    ok = len(stats) == k and all(m >= t for m, t in checks) and elapsed <= 600
    body = ", ".join(f"r{r}: {m:.3f} >= {t:.3f}" for r, (m, t) in enumerate(checks, 1))
    return ok, f"{seeds} seeds, {body}, {elapsed:.1f}s"


def criterion_6() -> tuple[bool, str]:
    worst, pairs, patterns = 0.0, 0, set()
    for d in (2, 3):
        for N in range(1, 7):
            for k in (1, 2):
                if k > N:
                    continue
                injections = multi.all_injections(N, k)
                for g in injections:
                    for gp in injections:
                        dense = multi.pairwise_overlap_trace(g, gp, N, k, d, mode="dense")
                        t = multi.overlap_cycles(g, gp)
                        worst = max(worst, abs(dense - d ** -(N + k - 2 * t)))
                        pairs += 1
                        if k == 2:
                            shared = bool(set(g.targets) & set(gp.targets))
                            patterns.add((t, shared))
    # disjoint, shared port at another index, one and two full overlaps
    table = {(0, False), (0, True), (1, True), (2, True)}
    ok = worst <= 1e-12 and table <= patterns
    return ok, f"{pairs} pairs, max |dense - d^-(N+k-2t)| = {worst:.1e}, patterns {sorted(patterns)}"


def criterion_7() -> tuple[bool, str]:
    parts, ok = [], True
    for N, k, d in [(5, 2, 2), (4, 2, 3)]:
        brute = multi.avg_signal_purity(N, k, d, "brute-force")
        exact = multi.avg_signal_purity(N, k, d, "exact")
        closed = multi.avg_signal_purity(N, k, d, "closed-form")
        fid = multi.fidelity_from_purity(brute, N, k, d)
        ok &= abs(brute - float(exact)) <= 1e-12 and fid >= 1 - 4 * k / N - 0.15
        parts.append(f"({N},{k},{d}) purity brute {brute:.6g} closed {float(closed):.6g} F {fid:.4f}")
    rep = multi.overlap_multiplicity(5, 2, 1)
    parts.append(f"L_5,2,1 printed {rep.printed} counted {rep.cycle_count}")
    k1 = all(multi.simultaneous_fidelity_bound(N, 1, 2, exact=True) == Fraction(N, N + 4) for N in range(1, 60))
    ok &= k1
    parts.append(f"k=1 closed form N/(N+4) {'exact' if k1 else 'differs'}")
    return ok, "; ".join(parts)


def criterion_8() -> tuple[bool, str]:
    sig = gen.signals_from_ensemble(gen.make_ensemble("pauli"), 1)
    gram = np.array([[abs(np.trace(a.matrix @ b.matrix)) for b in sig.signals] for a in sig.signals])
    orthogonal = np.allclose(gram, np.eye(4), atol=1e-12)
    holds, margin = gen.lemma1_condition(sig, 0.0)
    fid = gen.fidelity_from_success(sig.K, 2, gen.pgm_success_lower_bound(sig))
    worst = 0.0
    for N in range(2, 7):
        swap = gen.signals_from_ensemble(gen.make_ensemble("port-swap", N=N), N)
        value = gen.fidelity_from_success(N, 2, gen.pgm_success_lower_bound(swap))
        worst = max(worst, abs(value - float(multi.discrimination_fidelity_bound(N))))
    ok = orthogonal and holds and abs(margin) <= 1e-12 and fid == 1.0 and worst <= 1e-9
    return ok, (f"pauli: orthogonal {orthogonal}, margin {margin:.1e}, F {fid!r}; "
                f"port-swap max |F - N/(N+3)| = {worst:.1e}")


def criterion_9() -> tuple[bool, str]:
    cliff = gen.frame_potential(gen.make_ensemble("clifford-1q"))
    pauli = gen.frame_potential(gen.make_ensemble("pauli"))
    ok = abs(cliff - 2) <= 1e-9 and abs(pauli - 4) <= 1e-9
    return ok, f"clifford-1q {cliff:.12f}, pauli {pauli:.12f}"


def criterion_10() -> tuple[bool, str]:
    grid = multi.geometric_grid(64, 4096, 25)
    grids = [grid, list(range(1, 4097, 37)), list(range(1, 40))]
    capped = all(q <= n // 2 for g in grids for p in multi.PROTOCOLS
                 for n, q in multi.efficiency_scan(p, 0.05, g))
    par = multi.scan_exponent(multi.efficiency_scan("par", 0.05, grid))
    sim = multi.scan_exponent(multi.efficiency_scan("sim", 0.05, grid))
    ok = capped and abs(par - 0.5) <= 0.1 and abs(sim - 1.0) <= 0.1
    return ok, f"cap respected {capped}; exponents par {par:.3f}, sim {sim:.3f}"


CLI_RUNS = [
    ("recycle", "--N", "5", "--k", "2", "--seed", "17", "--samples", "8"),
    ("bounds", "--N", "8..64:4", "--k", "1,2"),
    ("simultaneous", "--N", "4", "--k", "2", "--brute-force"),
    ("generalized", "--ensemble", "clifford-1q", "--N", "2"),
    ("compare", "--N", "64..4096:8"),
    ("pgm", "--N", "5"),
]


def _cli(args: tuple[str, ...], fmt: str, threads: int) -> bytes:
    cmd = [sys.executable, "-m", "portbased", *args, "--format", fmt, "--threads", str(threads)]
    proc = subprocess.run(cmd, capture_output=True, check=True)
    return proc.stdout


def criterion_11() -> tuple[bool, str]:
    mismatched = []
    for args in CLI_RUNS:
        for fmt in ("json", "csv"):
            outputs = {_cli(args, fmt, t) for t in (1, 1, 2, 8)}
            if len(outputs) != 1:
                mismatched.append(f"{args[0]}/{fmt}")
    ok = not mismatched
    return ok, f"{len(CLI_RUNS) * 2} config/format pairs x threads 1,1,2,8; mismatches: {mismatched or 'none'}"


CRITERIA = {n: globals()[f"criterion_{n}"] for n in range(1, 12)}
UNATTAINABLE = {
    2: "the exact bound behaves as 1 - 3/(4N)",
    3: "N Tr Pi_1 / 2**(N+1) = 1 - (N+2)/2**(N+1) has no power-law corrections",
}


def _marks(n: int):
    if n in UNATTAINABLE:
        return [pytest.mark.xfail(strict=True, reason=UNATTAINABLE[n])]
    return []


@pytest.mark.parametrize("n", [pytest.param(n, marks=_marks(n), id=f"criterion_{n}") for n in CRITERIA])
def test_criterion(n):
    passed, detail = CRITERIA[n]()
    _record(n, passed, detail)
    assert passed, detail


if __name__ == "__main__":
    outcome = {}
    for n, fn in CRITERIA.items():
        outcome[n], detail = fn()
        _record(n, outcome[n], detail)
    print(f"{sum(outcome.values())}/{len(outcome)} criteria pass")
    sys.exit(0 if all(ok or n in UNATTAINABLE for n, ok in outcome.items()) else 1)
