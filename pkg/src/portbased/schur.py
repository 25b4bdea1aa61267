"""Closed-form spin-block sums for the PGM and their large-N behaviour.

Alice's N+1 qubits decompose by the total spin ``s`` of ``A_2 ... A_N``; inside a
block the singlet on ``A_0 A_1`` overlaps the two eigenspaces of ``rho`` with
weights ``s/(2s+1)`` and ``(s+1)/(2s+1)``. Every trace below is a weighted sum
over these blocks.
"""

from __future__ import annotations

import functools
import threading
from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Sequence

import mpmath
import numpy as np

from ._parallel import ordered_map

DEFAULT_DPS = 50

# mpmath keeps its working precision in process-global state
_MP_LOCK = threading.RLock()


def _serialized(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with _MP_LOCK:
            return fn(*args, **kwargs)
    return wrapper


@dataclass(frozen=True)
class SpinBlock:
    s: Fraction
    g: int
    d: int
    lambda_plus: Fraction
    lambda_minus: Fraction

    @property
    def weight_minus(self) -> Fraction:
        return self.s / (2 * self.s + 1)

    @property
    def weight_plus(self) -> Fraction:
        return (self.s + 1) / (2 * self.s + 1)


@dataclass(frozen=True)
class SpinBlockSpectrum:
    N: int
    rows: tuple[SpinBlock, ...]

    @property
    def s_min(self) -> Fraction:
        return self.rows[0].s


def _spins(N: int):
    """Twice the spin, from 0 (N odd) or 1 (N even) up to N-1."""
    return range(0 if N % 2 else 1, N, 2)


def spin_block_spectrum(N: int) -> SpinBlockSpectrum:
    if N < 1:
        raise ValueError("N must be at least 1")
    rows = []
    for two_s in _spins(N):
        s = Fraction(two_s, 2)
        a = (N - 1 - two_s) // 2
        # (2s+1)(N-1)!/(a!(N-a)!) with a = (N-1)/2 - s
        g_num = (two_s + 1) * comb(N, a)
        if g_num % N:
            raise ArithmeticError(f"non-integral multiplicity at N={N}, s={s}")
        g = g_num // N
        scale = Fraction(1, 2**N)
        rows.append(SpinBlock(
            s=s,
            g=g,
            d=(two_s + 1) * g,
            lambda_plus=scale * (Fraction(N, 2) + s + Fraction(3, 2)),
            lambda_minus=scale * (Fraction(N, 2) - s + Fraction(1, 2)),
        ))
    return SpinBlockSpectrum(N, tuple(rows))


def trace_pi1_exact_sum(N: int) -> Fraction:
    """Tr Pi_1 as an exact rational.

    2 sum_s (s/(N/2-s+1/2) + (s+1)/(N/2+s+3/2)) (2s+1)(N-1)!/(((N-1)/2-s)!((N-1)/2+s+1)!)
    """
    total = Fraction(0)
    for row in spin_block_spectrum(N).rows:
        s = row.s
        total += (s / (Fraction(N, 2) - s + Fraction(1, 2))
                  + (s + 1) / (Fraction(N, 2) + s + Fraction(3, 2))) * row.g
    return 2 * total


def _sigma_sqrt_terms(N: int):
    for row in spin_block_spectrum(N).rows:
        s = mpmath.mpf(row.s.numerator) / row.s.denominator
        weight = mpmath.mpf(row.d) / mpmath.mpf(2) ** (N - 1)
        ell_plus = mpmath.mpf(N) / 2 + s + mpmath.mpf(3) / 2
        ell_minus = mpmath.mpf(N) / 2 - s + mpmath.mpf(1) / 2
        yield s, weight, ell_plus, ell_minus


def _trace_sigma_sqrtpi1(N: int) -> mpmath.mpf:
    # Per block: sigma~ rho^p sigma~ acts as a*lm^p + b*lp^p on the singlet range, and
    # Tr(sigma~ sqrt(rho^-1/2 sigma~ rho^-1/2)) = (a lm^-1/2 + b lp^-1/2)^2 / sqrt(a/lm + b/lp).
    total = mpmath.mpf(0)
    for s, weight, lp, lm in _sigma_sqrt_terms(N):
        a = s / (2 * s + 1)
        b = (s + 1) / (2 * s + 1)
        total += weight * (a / mpmath.sqrt(lm) + b / mpmath.sqrt(lp)) ** 2 / mpmath.sqrt(a / lm + b / lp)
    return mpmath.sqrt(2) * total


def _stable(fn, N: int, dps: int) -> mpmath.mpf:
    """Evaluate at ``dps`` and ``2*dps`` digits; the two must agree to 1e-12."""
    with mpmath.workdps(dps):
        low = fn(N)
    with mpmath.workdps(2 * dps):
        high = fn(N)
    if abs(high - low) > mpmath.mpf("1e-12") * abs(high):
        raise ArithmeticError(f"sum at N={N} not stable at {dps} digits")
    return +low


@_serialized
def trace_sigma_sqrtpi1_sum(N: int, dps: int = DEFAULT_DPS) -> mpmath.mpf:
    """Tr(sigma^(1) sqrt(Pi_1)) from the spin-block sum, in ``dps``-digit arithmetic."""
    if N < 1:
        raise ValueError("N must be at least 1")
    return _stable(_trace_sigma_sqrtpi1, N, dps)


@_serialized
def trace_sigma_sqrtpi1_printed(N: int, dps: int = DEFAULT_DPS) -> dict[str, mpmath.mpf]:
    """The two published closed forms of Tr(sigma^(1) sqrt(Pi_1)), kept for comparison.

    ``"quarter-power"`` is the squared quarter-power sum and ``"c-form"`` the
    c(s, 4)-weighted sum. Neither reproduces the dense value beyond N = 1
    (``"c-form"`` matches at N = 1 only).
    """
    with mpmath.workdps(dps):
        quarter = mpmath.mpf(0)
        cform = mpmath.mpf(0)
        for row in spin_block_spectrum(N).rows:
            s = mpmath.mpf(row.s.numerator) / row.s.denominator
            lp = mpmath.mpf(N) / 2 + s + mpmath.mpf(3) / 2
            lm = mpmath.mpf(N) / 2 - s + mpmath.mpf(1) / 2
            ratio = mpmath.mpf(row.g) / (2 * s + 1)
            quarter += (lp ** -0.25 * (s + 1) + lm ** -0.25 * s) ** 2 * ratio / mpmath.mpf(2) ** (N - 1)
            lam_p = mpmath.mpf(row.lambda_plus.numerator) / row.lambda_plus.denominator
            lam_m = mpmath.mpf(row.lambda_minus.numerator) / row.lambda_minus.denominator
            c = s / (2 * s + 1) * lam_m ** -0.25 + (s + 1) / (2 * s + 1) * lam_p ** -0.25
            cform += c * row.d
        quarter *= 2 * mpmath.sqrt(2)
        cform /= mpmath.mpf(2) ** (N - 1) * mpmath.sqrt(mpmath.mpf(2) ** (N - 1))
        return {"quarter-power": +quarter, "c-form": +cform}


@_serialized
def _recycle_bound_mp(N: int, dps: int = DEFAULT_DPS) -> mpmath.mpf:
    tr_pi = trace_pi1_exact_sum(N)
    tsig = trace_sigma_sqrtpi1_sum(N, dps)
    with mpmath.workdps(dps):
        ratio = mpmath.mpf(tr_pi.numerator) / tr_pi.denominator / mpmath.mpf(2) ** (N - 1)
        return mpmath.mpf(N) / 4 * mpmath.sqrt(ratio) * tsig


def recycle_fidelity_bound(N: int) -> float:
    """(N/4) sqrt(Tr Pi_1 / 2**(N-1)) Tr(sigma^(1) sqrt(Pi_1))."""
    if N < 1:
        raise ValueError("N must be at least 1")
    return float(_recycle_bound_mp(N))


def accumulated_error_bound(N: int, k: int) -> float:
    """max(0, 1 - 11 k / (2 N)) after k recycling rounds."""
    if N < 1 or k < 0:
        raise ValueError("need N >= 1 and k >= 0")
    return max(0.0, 1.0 - 11.0 * k / (2.0 * N))


@dataclass(frozen=True)
class AsymptoticReport:
    """Least-squares fit of ``values`` to c0 + c1/N + c2/N**2."""

    quantity: str
    grid: tuple[int, ...]
    values: tuple[float, ...]
    coefficients: dict[str, float]
    targets: dict[str, float | None]
    residual: float

    def relative_error(self, name: str) -> float | None:
        target = self.targets.get(name)
        if target is None:
            return None
        return abs(self.coefficients[name] - target) / abs(target)


@_serialized
def _normalized_quantity(quantity: str, N: int) -> mpmath.mpf:
    if quantity == "tr-pi1":
        v = trace_pi1_exact_sum(N) * N / 2 ** (N + 1)
        return mpmath.mpf(v.numerator) / v.denominator
    if quantity == "tr-sigma-sqrt":
        return trace_sigma_sqrtpi1_sum(N) * mpmath.sqrt(N) / 2
    if quantity == "recycle-bound":
        return _recycle_bound_mp(N)
    raise ValueError(f"unknown quantity {quantity!r}")


# Large-N forms with the leading order normalized to 1.
PUBLISHED_COEFFICIENTS: dict[str, dict[str, float | None]] = {
    "tr-pi1": {"c0": 1.0, "c1": -11 / 2, "c2": -6.0},
    "tr-sigma-sqrt": {"c0": 1.0, "c1": 39 / 16, "c2": None},
    "recycle-bound": {"c0": 1.0, "c1": -11 / 4, "c2": None},
}


def asymptotic_expansion_check(
    quantity: str, grid: Sequence[int], threads: int | None = None
) -> AsymptoticReport:
    """Fit the normalized quantity on ``grid`` to c0 + c1/N + c2/N**2.

    ``"tr-pi1"`` is N Tr Pi_1 / 2**(N+1), ``"tr-sigma-sqrt"`` is
    sqrt(N) Tr(sigma sqrt(Pi_1)) / 2 and ``"recycle-bound"`` the recycling bound.
    """
    if quantity not in PUBLISHED_COEFFICIENTS:
        raise ValueError(f"unknown quantity {quantity!r}")
    grid = tuple(int(n) for n in grid)
    if len(grid) < 4 or max(grid) < 200:
        raise ValueError("grid needs at least 4 points and a maximum of at least 200")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly increasing")
    values = ordered_map(lambda n: _normalized_quantity(quantity, n), grid, threads)
    n = np.array(grid, dtype=float)
    y = np.array([float(v) for v in values])
    # columns scaled so the design matrix is well conditioned
    scale = float(n.min())
    design = np.column_stack([np.ones_like(n), scale / n, (scale / n) ** 2])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    fitted = {"c0": float(coef[0]), "c1": float(coef[1] * scale), "c2": float(coef[2] * scale**2)}
    residual = float(np.linalg.norm(design @ coef - y))
    return AsymptoticReport(quantity, grid, tuple(float(v) for v in y), fitted,
                            dict(PUBLISHED_COEFFICIENTS[quantity]), residual)
