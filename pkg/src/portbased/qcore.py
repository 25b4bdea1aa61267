"""Dense linear algebra over labeled multipartite systems.

Amplitude and matrix indices follow the layout order: the first label is the
most significant digit of the mixed-radix index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

HERMITIAN_ATOL = 1e-10
PSD_FLOOR = -1e-10
NOT_PSD_FLOOR = -1e-8
NORM_ATOL = 1e-12
DEFAULT_CUTOFF = 1e-12

SINGLET = np.array([0.0, 1.0, -1.0, 0.0], dtype=complex) / np.sqrt(2.0)


class LayoutError(ValueError):
    """Unknown label, duplicate label or mismatched dimensions."""


class NotPSDError(ValueError):
    """An operator expected to be positive semidefinite is not."""


class ResourceLimitError(RuntimeError):
    """A dense computation would exceed the configured size cap."""


@dataclass(frozen=True)
class SystemLayout:
    """Ordered labeled subsystems with their local dimensions."""

    subsystems: tuple[tuple[str, int], ...]

    def __post_init__(self):
        subs = tuple((str(label), int(dim)) for label, dim in self.subsystems)
        object.__setattr__(self, "subsystems", subs)
        labels = [label for label, _ in subs]
        if len(set(labels)) != len(labels):
            raise LayoutError(f"duplicate labels in layout: {labels}")
        for label, dim in subs:
            if dim < 2:
                raise LayoutError(f"subsystem {label!r} has dimension {dim} < 2")

    @classmethod
    def uniform(cls, labels: Iterable[str], dim: int = 2) -> "SystemLayout":
        return cls(tuple((label, dim) for label in labels))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.subsystems)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(dim for _, dim in self.subsystems)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims, dtype=object)) if self.subsystems else 1

    def __len__(self) -> int:
        return len(self.subsystems)

    def __contains__(self, label: object) -> bool:
        return label in self.labels

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LayoutError(f"unknown label {label!r}; layout has {self.labels}") from None

    def dim_of(self, label: str) -> int:
        return self.dims[self.index(label)]

    def sub(self, labels: Iterable[str]) -> "SystemLayout":
        """Sub-layout with ``labels`` in the given order."""
        return SystemLayout(tuple((label, self.dim_of(label)) for label in labels))

    def without(self, labels: Iterable[str]) -> "SystemLayout":
        drop = set(labels)
        for label in drop:
            self.index(label)
        return SystemLayout(tuple(s for s in self.subsystems if s[0] not in drop))

    def __add__(self, other: "SystemLayout") -> "SystemLayout":
        return SystemLayout(self.subsystems + other.subsystems)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=complex, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class PureState:
    layout: SystemLayout
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != self.layout.total_dim:
            raise LayoutError(
                f"{amps.size} amplitudes do not match layout dimension {self.layout.total_dim}"
            )
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_ATOL:
            raise ValueError(f"state norm {norm!r} differs from 1 by more than {NORM_ATOL}")
        object.__setattr__(self, "amplitudes", _frozen(amps))

    @classmethod
    def normalized(cls, layout: SystemLayout, amplitudes: np.ndarray) -> "PureState":
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        return cls(layout, amps / np.linalg.norm(amps))

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.layout.dims)

    def density(self) -> "HermitianOperator":
        return HermitianOperator(
            self.layout, np.outer(self.amplitudes, self.amplitudes.conj()), kind="density", check=False
        )

    def __matmul__(self, other: "PureState") -> "PureState":
        """Tensor product, ``self`` first."""
        return PureState(self.layout + other.layout, np.kron(self.amplitudes, other.amplitudes))


@dataclass(frozen=True)
class HermitianOperator:
    """A Hermitian matrix over a layout.

    ``kind`` is one of ``"operator"``, ``"density"`` or ``"povm"`` and selects
    which extra invariants are checked at construction.
    """

    layout: SystemLayout
    matrix: np.ndarray
    kind: str = "operator"
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        dim = self.layout.total_dim
        if mat.shape != (dim, dim):
            raise LayoutError(f"matrix shape {mat.shape} does not match layout dimension {dim}")
        if self.kind not in ("operator", "density", "povm"):
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.check:
            if np.max(np.abs(mat - mat.conj().T), initial=0.0) > HERMITIAN_ATOL:
                raise ValueError("matrix is not Hermitian")
            if self.kind in ("density", "povm"):
                lowest = np.linalg.eigvalsh(mat)[0]
                if lowest < PSD_FLOOR:
                    raise NotPSDError(f"{self.kind} has eigenvalue {lowest:.3e}")
            if self.kind == "density" and abs(np.trace(mat).real - 1.0) > 1e-10:
                raise ValueError(f"density trace {np.trace(mat).real!r} is not 1")
        object.__setattr__(self, "matrix", _frozen(mat))

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def tensor(self) -> np.ndarray:
        return self.matrix.reshape(self.layout.dims * 2)


State = Union[PureState, HermitianOperator]


def ket(layout: SystemLayout, digits: Sequence[int]) -> PureState:
    """Computational basis state with one digit per subsystem."""
    if len(digits) != len(layout):
        raise LayoutError("one digit per subsystem required")
    index = int(np.ravel_multi_index(tuple(digits), layout.dims))
    amps = np.zeros(layout.total_dim, dtype=complex)
    amps[index] = 1.0
    return PureState(layout, amps)


def canonical_mes(d: int) -> np.ndarray:
    """(1/sqrt(d)) sum_i |ii> as a length d**2 vector."""
    return np.eye(d, dtype=complex).reshape(-1) / np.sqrt(d)


def pair_product_state(
    layout: SystemLayout, pairs: Sequence[tuple[str, str]], pair_vector: np.ndarray
) -> PureState:
    """Product of ``pair_vector`` on every listed pair, reordered to ``layout``.

    Every subsystem of ``layout`` must appear in exactly one pair.
    """
    order = [label for pair in pairs for label in pair]
    if sorted(order) != sorted(layout.labels):
        raise LayoutError("pairs must cover the layout exactly once")
    amps = np.ones(1, dtype=complex)
    for _ in pairs:
        amps = np.kron(amps, pair_vector)
    return _reorder(PureState(layout.sub(order), amps), layout)


def build_singlet_resource(N: int, d: int = 2, kind: str = "singlet") -> PureState:
    """N maximally entangled pairs on A_1 B_1 ... A_N B_N."""
    if N < 1:
        raise ValueError("N must be at least 1")
    if kind == "singlet":
        if d != 2:
            raise LayoutError(f"the singlet is a two-qubit state; got d={d}")
        vec = SINGLET
    elif kind == "canonical-mes":
        vec = canonical_mes(d)
    else:
        raise ValueError(f"unknown resource kind {kind!r}")
    labels = [label for i in range(1, N + 1) for label in (f"A_{i}", f"B_{i}")]
    layout = SystemLayout.uniform(labels, d)
    pairs = [(f"A_{i}", f"B_{i}") for i in range(1, N + 1)]
    return pair_product_state(layout, pairs, vec)


def _reorder(x: State, target: SystemLayout) -> State:
    """Re-express ``x`` in the subsystem order of ``target`` (same label set)."""
    src = x.layout
    if sorted(src.labels) != sorted(target.labels):
        raise LayoutError("layouts hold different labels")
    axes = [src.index(label) for label in target.labels]
    if isinstance(x, PureState):
        amps = x.tensor().transpose(axes).reshape(-1)
        return PureState(target, amps)
    n = len(src)
    tensor = x.tensor().transpose(axes + [n + a for a in axes])
    dim = target.total_dim
    return HermitianOperator(target, tensor.reshape(dim, dim), kind=x.kind, check=False)


def partial_trace(op: State, keep: Iterable[str]) -> HermitianOperator:
    """Trace out every subsystem not in ``keep``; the result keeps layout order."""
    keep = set(keep)
    layout = op.layout
    for label in keep:
        layout.index(label)
    kept = [label for label in layout.labels if label in keep]
    sub = layout.sub(kept)
    if isinstance(op, PureState):
        return reduced_density(op, kept)
    n = len(layout)
    if len(kept) == n:
        return op
    keep_idx = [layout.index(label) for label in kept]
    row = list(range(n))
    col = [i if i not in keep_idx else n + i for i in range(n)]
    out = keep_idx + [n + i for i in keep_idx]
    reduced = np.einsum(op.tensor(), row + col, out)
    dim = sub.total_dim
    return HermitianOperator(sub, reduced.reshape(dim, dim), kind=op.kind, check=False)


def reduced_density(state: PureState, keep: Sequence[str]) -> HermitianOperator:
    """Reduced density operator of a pure state on ``keep`` (in the given order)."""
    matrix = split_amplitudes(state, keep)
    sub = state.layout.sub(keep)
    return HermitianOperator(sub, matrix @ matrix.conj().T, kind="density", check=False)


def split_amplitudes(state: PureState, first: Sequence[str]) -> np.ndarray:
    """Amplitudes as a (dim(first) x dim(rest)) matrix, ``first`` in the given order."""
    layout = state.layout
    first_idx = [layout.index(label) for label in first]
    rest_idx = [i for i in range(len(layout)) if i not in first_idx]
    tensor = state.tensor().transpose(first_idx + rest_idx)
    dim_first = layout.sub(first).total_dim
    return tensor.reshape(dim_first, -1)


def apply_local(state: PureState, labels: Sequence[str], matrix: np.ndarray) -> np.ndarray:
    """Unnormalized amplitudes of ``(matrix on labels) x identity`` applied to ``state``.

    Only the dim(labels)-square matrix is ever formed.
    """
    layout = state.layout
    idx = [layout.index(label) for label in labels]
    rest = [i for i in range(len(layout)) if i not in idx]
    perm = idx + rest
    tensor = state.tensor().transpose(perm)
    shape = tensor.shape
    flat = tensor.reshape(layout.sub(labels).total_dim, -1)
    out = (np.asarray(matrix) @ flat).reshape(shape)
    return out.transpose(np.argsort(perm)).reshape(-1)


def permute_subsystems(x: State, perm: Mapping[str, str]) -> State:
    """Move the content of subsystem ``a`` to subsystem ``perm[a]``.

    Labels absent from ``perm`` stay in place. The layout is unchanged.
    """
    layout = x.layout
    full = {label: label for label in layout.labels}
    full.update(perm)
    if sorted(full.values()) != sorted(full.keys()):
        raise LayoutError("perm is not a bijection on the layout labels")
    for src, dst in full.items():
        if layout.dim_of(src) != layout.dim_of(dst):
            raise LayoutError(f"cannot move {src!r} onto {dst!r}: dimensions differ")
    inverse = {dst: src for src, dst in full.items()}
    axes = [layout.index(inverse[label]) for label in layout.labels]
    if isinstance(x, PureState):
        return PureState(layout, x.tensor().transpose(axes).reshape(-1))
    n = len(layout)
    tensor = x.tensor().transpose(axes + [n + a for a in axes])
    dim = layout.total_dim
    return HermitianOperator(layout, tensor.reshape(dim, dim), kind=x.kind, check=False)


def embed_operator(op: HermitianOperator, full: SystemLayout) -> HermitianOperator:
    """``op`` tensored with the identity on the rest of ``full``."""
    for label in op.layout.labels:
        if label not in full:
            raise LayoutError(f"label {label!r} not present in the target layout")
        if full.dim_of(label) != op.layout.dim_of(label):
            raise LayoutError(f"dimension of {label!r} differs from the target layout")
    rest = full.without(op.layout.labels)
    big = np.kron(op.matrix, np.eye(rest.total_dim, dtype=complex))
    staged = HermitianOperator(op.layout + rest, big, kind="operator", check=False)
    kind = "povm" if op.kind == "povm" else "operator"
    return HermitianOperator(full, _reorder(staged, full).matrix, kind=kind, check=False)


def _as_density(x: State) -> np.ndarray:
    if isinstance(x, PureState):
        return np.outer(x.amplitudes, x.amplitudes.conj())
    return x.matrix


def _same_layout(a: State, b: State) -> None:
    if a.layout != b.layout:
        raise LayoutError(f"layout mismatch: {a.layout.labels} vs {b.layout.labels}")


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(matrix)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def uhlmann_fidelity(a: State, b: State, squared: bool = True) -> float:
    """Uhlmann fidelity; squared convention by default (|<a|b>|**2 for pure states).

    With ``squared=False`` the root fidelity ``Tr|sqrt(a) sqrt(b)|`` is returned.
    """
    _same_layout(a, b)
    if isinstance(a, PureState) and isinstance(b, PureState):
        f = abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2
    elif isinstance(a, PureState) or isinstance(b, PureState):
        pure, mixed = (a, b) if isinstance(a, PureState) else (b, a)
        f = np.vdot(pure.amplitudes, mixed.matrix @ pure.amplitudes).real
    else:
        # nuclear norm of sqrt(a) sqrt(b); singular values avoid square roots of noisy eigenvalues
        sv = np.linalg.svd(_psd_sqrt(a.matrix) @ _psd_sqrt(b.matrix), compute_uv=False)
        f = float(np.sum(sv)) ** 2
    f = float(min(max(f, 0.0), 1.0))
    return f if squared else float(np.sqrt(f))


def trace_distance(a: State, b: State) -> float:
    """One-norm ||a - b||_1 (orthogonal pure states are at distance 2)."""
    _same_layout(a, b)
    diff = _as_density(a) - _as_density(b)
    return float(np.sum(np.abs(np.linalg.eigvalsh((diff + diff.conj().T) / 2))))


_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sqrt": np.sqrt,
    "inv-sqrt": lambda w: 1.0 / np.sqrt(w),
    "inv-quarter-power": lambda w: w ** -0.25,
    "inv": lambda w: 1.0 / w,
}


def function_on_support(matrix: np.ndarray, fn: str, cutoff: float = DEFAULT_CUTOFF) -> np.ndarray:
    """Array-level worker behind :func:`matrix_function_on_support`."""
    try:
        f = _FUNCTIONS[fn]
    except KeyError:
        raise ValueError(f"unknown matrix function {fn!r}") from None
    matrix = np.asarray(matrix)
    w, v = np.linalg.eigh((matrix + matrix.conj().T) / 2)
    if w.size and w[0] < NOT_PSD_FLOOR:
        raise NotPSDError(f"eigenvalue {w[0]:.3e} below {NOT_PSD_FLOOR}")
    top = w[-1] if w.size else 0.0
    keep = w > cutoff * top if top > 0 else np.zeros_like(w, dtype=bool)
    vk = v[:, keep]
    return (vk * f(w[keep])) @ vk.conj().T


def matrix_function_on_support(
    op: HermitianOperator, fn: str, cutoff: float = DEFAULT_CUTOFF
) -> HermitianOperator:
    """Apply ``fn`` to eigenvalues above ``cutoff * lambda_max``; zero elsewhere.

    ``fn`` is one of ``"sqrt"``, ``"inv-sqrt"``, ``"inv-quarter-power"``, ``"inv"``.
    """
    return HermitianOperator(op.layout, function_on_support(op.matrix, fn, cutoff), check=False)


def support_projector(matrix: np.ndarray, cutoff: float = DEFAULT_CUTOFF) -> np.ndarray:
    w, v = np.linalg.eigh(np.asarray(matrix))
    top = w[-1] if w.size else 0.0
    vk = v[:, w > cutoff * top] if top > 0 else v[:, :0]
    return vk @ vk.conj().T


def numerical_rank(matrix: np.ndarray, cutoff: float = DEFAULT_CUTOFF) -> int:
    w = np.linalg.eigvalsh(np.asarray(matrix))
    if not w.size or w[-1] <= 0:
        return 0
    return int(np.sum(w > cutoff * w[-1]))
