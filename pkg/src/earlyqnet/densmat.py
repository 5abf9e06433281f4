"""Few-qubit density matrices, noise channels, fidelity and Bell measurements.

States are plain ``numpy`` complex arrays of shape ``(2**n, 2**n)``. Qubit 0
is the leftmost tensor factor, i.e. the most significant bit of a basis
index: ``|q0 q1 ... q_{n-1}>``. Every function here is pure.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TRACE_ATOL = 1e-12
HERMITIAN_ATOL = 1e-12
PSD_ATOL = 1e-10

_EIG_CUTOFF = 1e-13

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class BellIndex(enum.IntEnum):
    """The four Bell states; ``PSI_PLUS`` is index 0."""

    PSI_PLUS = 0
    PSI_MINUS = 1
    PHI_PLUS = 2
    PHI_MINUS = 3

    @property
    def pauli_frame(self) -> tuple[int, int]:
        """(x, z) bits of the Pauli that maps |Phi+> onto this state."""
        return _FRAMES[self]

    @classmethod
    def from_frame(cls, frame: tuple[int, int]) -> "BellIndex":
        return _FRAME_TO_INDEX[(frame[0] & 1, frame[1] & 1)]

    def compose(self, *others: "BellIndex") -> "BellIndex":
        """Combine Pauli frames, which is how swap outcomes accumulate."""
        x, z = self.pauli_frame
        for other in others:
            ox, oz = other.pauli_frame
            x ^= ox
            z ^= oz
        return BellIndex.from_frame((x, z))

    def vector(self) -> np.ndarray:
        return _BELL_VECTORS[self].copy()


_FRAMES = {
    BellIndex.PSI_PLUS: (1, 0),
    BellIndex.PSI_MINUS: (1, 1),
    BellIndex.PHI_PLUS: (0, 0),
    BellIndex.PHI_MINUS: (0, 1),
}
_FRAME_TO_INDEX = {v: k for k, v in _FRAMES.items()}

_s = 1 / math.sqrt(2)
_BELL_VECTORS = {
    BellIndex.PSI_PLUS: np.array([0, _s, _s, 0], dtype=complex),
    BellIndex.PSI_MINUS: np.array([0, _s, -_s, 0], dtype=complex),
    BellIndex.PHI_PLUS: np.array([_s, 0, 0, _s], dtype=complex),
    BellIndex.PHI_MINUS: np.array([_s, 0, 0, -_s], dtype=complex),
}


def num_qubits(rho: np.ndarray) -> int:
    dim = rho.shape[0]
    n = dim.bit_length() - 1
    if rho.ndim != 2 or rho.shape[1] != dim or (1 << n) != dim:
        raise ValueError(f"not a square power-of-two matrix: shape {rho.shape}")
    return n


def check_density_matrix(rho: np.ndarray) -> None:
    """Raise ``ValueError`` unless ``rho`` is a valid density matrix."""
    num_qubits(rho)
    tr = np.trace(rho)
    if abs(tr - 1) > TRACE_ATOL:
        raise ValueError(f"trace {tr} differs from 1")
    if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_ATOL:
        raise ValueError("matrix is not Hermitian")
    lo = np.linalg.eigvalsh(rho).min()
    if lo < -PSD_ATOL:
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {lo})")


def pure(vec: Sequence[complex]) -> np.ndarray:
    v = np.asarray(vec, dtype=complex)
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())


def bell_state(index: BellIndex = BellIndex.PSI_PLUS) -> np.ndarray:
    return pure(BellIndex(index).vector())


def ghz_state(n: int = 3) -> np.ndarray:
    if n < 2:
        raise ValueError(f"GHZ state needs at least 2 qubits, got {n}")
    v = np.zeros(2**n, dtype=complex)
    v[0] = v[-1] = 1
    return pure(v)


def make_reference_state(kind: str, arg: int | BellIndex = 0) -> np.ndarray:
    """Reference state by name: ``("bell", BellIndex)`` or ``("ghz", n)``."""
    if kind == "bell":
        return bell_state(BellIndex(arg))
    if kind == "ghz":
        return ghz_state(int(arg))
    raise ValueError(f"unknown reference state kind {kind!r}")


def maximally_mixed(n: int) -> np.ndarray:
    d = 2**n
    return np.eye(d, dtype=complex) / d


def tensor(*rhos: np.ndarray) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for r in rhos:
        out = np.kron(out, r)
    return out


def _psd_sqrt(rho: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(rho)
    vals = np.where(vals > _EIG_CUTOFF, vals, 0.0)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Uhlmann fidelity ``(tr sqrt(sqrt(rho) sigma sqrt(rho)))**2``.

    Evaluated as the squared nuclear norm of ``sqrt(rho) @ sqrt(sigma)``,
    which is the same quantity but keeps rank-deficient inputs accurate.
    """
    if rho.shape != sigma.shape:
        raise ValueError(f"dimension mismatch: {rho.shape} vs {sigma.shape}")
    sv = np.linalg.svd(_psd_sqrt(rho) @ _psd_sqrt(sigma), compute_uv=False)
    f = float(np.sum(sv)) ** 2
    return min(max(f, 0.0), 1.0)


def permute(rho: np.ndarray, order: Sequence[int]) -> np.ndarray:
    """Reorder qubits so that new qubit ``k`` is old qubit ``order[k]``."""
    n = num_qubits(rho)
    order = list(order)
    if sorted(order) != list(range(n)):
        raise ValueError(f"{order} is not a permutation of {n} qubits")
    t = rho.reshape((2,) * (2 * n))
    t = t.transpose(order + [n + q for q in order])
    return t.reshape(rho.shape)


def partial_trace(rho: np.ndarray, keep: Sequence[int]) -> np.ndarray:
    """Reduced state on ``keep`` (kept in the given order)."""
    n = num_qubits(rho)
    keep = list(keep)
    _check_targets(keep, n)
    drop = [q for q in range(n) if q not in keep]
    t = permute(rho, keep + drop).reshape(2 ** len(keep), 2 ** len(drop), 2 ** len(keep), 2 ** len(drop))
    return np.einsum("ajbj->ab", t)


def _check_targets(targets: Sequence[int], n: int) -> None:
    if len(set(targets)) != len(targets):
        raise ValueError(f"repeated qubit index in {list(targets)}")
    for q in targets:
        if not 0 <= q < n:
            raise ValueError(f"qubit index {q} outside register of {n} qubits")


def _apply_1q_kraus(rho: np.ndarray, kraus: Sequence[np.ndarray], q: int) -> np.ndarray:
    n = num_qubits(rho)
    t = rho.reshape((2,) * (2 * n))
    out = np.zeros_like(t)
    for k in kraus:
        # K on the ket axis q, K* on the bra axis n+q
        s = np.moveaxis(np.tensordot(k, t, axes=([1], [q])), 0, q)
        s = np.moveaxis(np.tensordot(k.conj(), s, axes=([1], [n + q])), 0, n + q)
        out += s
    return out.reshape(rho.shape)


def apply_pauli(rho: np.ndarray, qubit: int, frame: tuple[int, int]) -> np.ndarray:
    """Conjugate ``qubit`` by X**x Z**z."""
    x, z = frame
    op = _I2
    if z:
        op = _Z @ op
    if x:
        op = _X @ op
    if x or z:
        return _apply_1q_kraus(rho, [op], qubit)
    return rho


class NoiseKind(str, enum.Enum):
    DEPOLARIZING = "depolarizing"
    T1T2 = "t1t2"
    CORRELATED_DEPOLARIZING = "correlated-depolarizing"


@dataclass(frozen=True)
class NoiseSpec:
    """A noise channel and the qubits it acts on.

    ``targets=None`` means the whole register. For ``T1T2`` the ``params``
    are ``(T1, T2, elapsed)`` in seconds; otherwise a single strength.
    ``math.inf`` for T1 or T2 switches that decay off exactly.
    """

    kind: NoiseKind
    params: tuple[float, ...]
    targets: tuple[int, ...] | None = field(default=None)

    def __post_init__(self) -> None:
        if self.kind is NoiseKind.T1T2:
            t1, t2, elapsed = self.params
            if t1 <= 0 or t2 <= 0:
                raise ValueError("T1 and T2 must be positive")
            if elapsed < 0:
                raise ValueError("elapsed time must be non-negative")
            if t2 > 2 * t1:
                raise ValueError(f"T2={t2} exceeds 2*T1={2 * t1}")
        else:
            (s,) = self.params
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"strength {s} outside [0, 1]")

    @classmethod
    def depolarizing(cls, s_q: float, targets: Sequence[int] | None = None) -> "NoiseSpec":
        return cls(NoiseKind.DEPOLARIZING, (s_q,), None if targets is None else tuple(targets))

    @classmethod
    def t1t2(cls, t1: float, t2: float, elapsed: float, targets: Sequence[int] | None = None) -> "NoiseSpec":
        return cls(NoiseKind.T1T2, (t1, t2, elapsed), None if targets is None else tuple(targets))

    @classmethod
    def correlated_depolarizing(cls, weight: float, targets: Sequence[int] | None = None) -> "NoiseSpec":
        return cls(NoiseKind.CORRELATED_DEPOLARIZING, (weight,), None if targets is None else tuple(targets))


def t1t2_kraus(t1: float, t2: float, elapsed: float) -> list[np.ndarray]:
    """Amplitude damping followed by the pure dephasing that makes the
    total coherence decay ``exp(-elapsed/T2)``."""
    gamma = -math.expm1(-elapsed / t1)
    ad = [
        np.array([[1, 0], [0, math.sqrt(1 - gamma)]], dtype=complex),
        np.array([[0, math.sqrt(gamma)], [0, 0]], dtype=complex),
    ]
    lam = math.exp(-elapsed / t2 + elapsed / (2 * t1))
    lam = min(lam, 1.0)
    deph = [math.sqrt((1 + lam) / 2) * _I2, math.sqrt((1 - lam) / 2) * _Z]
    return [d @ a for d in deph for a in ad]


def _depolarize(rho: np.ndarray, s: float, targets: list[int], n: int) -> np.ndarray:
    if s == 1.0:
        return rho
    rest = [q for q in range(n) if q not in targets]
    mixed = tensor(partial_trace(rho, rest) if rest else np.ones((1, 1), complex), maximally_mixed(len(targets)))
    # mixed is ordered (rest..., targets...); undo that ordering
    order = rest + targets
    inverse = [order.index(q) for q in range(n)]
    return s * rho + (1 - s) * permute(mixed, inverse)


def apply_noise(rho: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    n = num_qubits(rho)
    targets = list(range(n)) if spec.targets is None else list(spec.targets)
    _check_targets(targets, n)
    if spec.kind is NoiseKind.T1T2:
        t1, t2, elapsed = spec.params
        if elapsed == 0 or (math.isinf(t1) and math.isinf(t2)):
            return rho
        kraus = t1t2_kraus(t1, t2, elapsed)
        for q in targets:
            rho = _apply_1q_kraus(rho, kraus, q)
        return rho
    return _depolarize(rho, spec.params[0], targets, n)


def bell_outcome_states(rho: np.ndarray, qubit_a: int, qubit_b: int) -> list[np.ndarray]:
    """Unnormalised post-measurement states, one per ``BellIndex``.

    Each entry is ``<B_k|_{ab} rho |B_k>_{ab}`` on the remaining qubits in
    their original order; its trace is the outcome probability.
    """
    n = num_qubits(rho)
    if qubit_a == qubit_b:
        raise ValueError("Bell measurement needs two distinct qubits")
    _check_targets([qubit_a, qubit_b], n)
    rest = [q for q in range(n) if q not in (qubit_a, qubit_b)]
    d = 2 ** len(rest)
    t = permute(rho, [qubit_a, qubit_b] + rest).reshape(4, d, 4, d)
    out = []
    for k in BellIndex:
        v = _BELL_VECTORS[k]
        out.append(np.einsum("i,iajb,j->ab", v.conj(), t, v))
    return out


def bsm_project(rho: np.ndarray, qubit_a: int, qubit_b: int, draw: float) -> tuple[BellIndex, np.ndarray]:
    """Bell-state measurement of ``(qubit_a, qubit_b)``.

    ``draw`` is a uniform number in [0, 1) that selects the outcome by
    inverse CDF over the four outcome probabilities. Returns the outcome and
    the normalised state of the remaining qubits.
    """
    branches = bell_outcome_states(rho, qubit_a, qubit_b)
    probs = np.array([max(np.trace(b).real, 0.0) for b in branches])
    total = probs.sum()
    cum = np.cumsum(probs) / total
    k = int(np.searchsorted(cum, draw, side="right"))
    k = min(k, 3)
    while probs[k] <= 0 and k > 0:
        k -= 1
    if probs[k] <= 0:
        raise RuntimeError("Bell measurement selected a zero-probability outcome")
    post = branches[k] / probs[k]
    return BellIndex(k), (post + post.conj().T) / 2
