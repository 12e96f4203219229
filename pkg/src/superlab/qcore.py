"""
Deterministic complex linear algebra and quantum-state primitives.

Everything downstream (protocol circuits, spin-system dynamics, pulse
optimization, noise channels) is built on the three immutable value types
defined here: ``StateVector``, ``DensityOperator`` and ``Operator``.  All
functions are pure; qubit 1 is always the leftmost tensor factor.

Hamiltonians are expressed in angular-frequency units (rad/s) throughout,
so ``evolve(H, t)`` is exactly ``exp(-i H t)`` with ``t`` in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

# Centralized numerical tolerances.  Validation uses these defaults; every
# check that a caller might legitimately want to loosen takes an ``atol``.
NORM_ATOL = 1e-12
HERM_ATOL = 1e-12
TRACE_ATOL = 1e-10
PSD_ATOL = 1e-10
UNITARY_ATOL = 1e-10
PROJECTION_FLOOR = 1e-12

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"i": PAULI_I, "x": PAULI_X, "y": PAULI_Y, "z": PAULI_Z}


class PostSelectionError(RuntimeError):
    """Raised when a projective post-selection has probability below the floor."""

    def __init__(self, message: str, probability: float = 0.0):
        super().__init__(message)
        self.probability = probability


def _qubit_count(dim: int, what: str) -> int:
    n = int(round(np.log2(dim)))
    if dim < 2 or 2**n != dim:
        raise ValueError(f"{what} dimension {dim} is not a power of two >= 2")
    return n


def _frozen_array(values, shape_check=None) -> np.ndarray:
    arr = np.array(values, dtype=complex)
    if shape_check is not None:
        shape_check(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StateVector:
    """
    A pure state on ``n`` qubits, stored as a unit-norm amplitude vector of
    length ``2**n`` in the computational basis (qubit 1 = leftmost factor,
    so basis index bits read left to right).
    """

    amplitudes: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.amplitudes)
        if arr.ndim != 1:
            raise ValueError("state amplitudes must be a 1-d vector")
        _qubit_count(arr.shape[0], "state")
        norm = float(np.linalg.norm(arr))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"state vector norm {norm!r} is not 1")
        if abs(norm - 1.0) > NORM_ATOL:
            arr = _frozen_array(np.asarray(arr) / norm)
        object.__setattr__(self, "amplitudes", arr)

    @property
    def n(self) -> int:
        return _qubit_count(self.amplitudes.shape[0], "state")

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def density(self) -> "DensityOperator":
        """Return the rank-one physical density operator |psi><psi|."""
        rho = np.outer(self.amplitudes, self.amplitudes.conj())
        return DensityOperator(rho, kind="physical")

    def overlap(self, other: "StateVector") -> complex:
        """Inner product <self|other>."""
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True)
class DensityOperator:
    """
    A Hermitian operator on ``n`` qubits, either a physical state
    (``kind="physical"``: trace 1, positive semidefinite) or a traceless
    NMR deviation matrix (``kind="deviation"``).

    Linear-inversion tomography can legitimately produce indefinite
    trace-one matrices; construct those via :meth:`reconstructed`, which
    skips the positivity check while keeping the Hermiticity/trace
    validation.
    """

    matrix: np.ndarray
    kind: str = "physical"
    _check_psd: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        arr = _frozen_array(self.matrix)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("density matrix must be square")
        _qubit_count(arr.shape[0], "density matrix")
        if self.kind not in ("physical", "deviation"):
            raise ValueError(f"unknown density-operator kind {self.kind!r}")
        herm_err = float(np.max(np.abs(arr - arr.conj().T)))
        if herm_err > HERM_ATOL:
            raise ValueError(f"matrix is not Hermitian (max asymmetry {herm_err:.3e})")
        tr = complex(np.trace(arr))
        target = 1.0 if self.kind == "physical" else 0.0
        if abs(tr - target) > TRACE_ATOL:
            raise ValueError(
                f"{self.kind} density matrix has trace {tr!r}, expected {target}"
            )
        if self.kind == "physical" and self._check_psd:
            lo = float(np.linalg.eigvalsh(arr)[0])
            if lo < -PSD_ATOL:
                raise ValueError(
                    f"physical density matrix has negative eigenvalue {lo:.3e}"
                )
        object.__setattr__(self, "matrix", arr)

    @classmethod
    def reconstructed(cls, matrix: np.ndarray) -> "DensityOperator":
        """Wrap a linear-inversion reconstruction: trace-one, possibly indefinite."""
        return cls(matrix, kind="physical", _check_psd=False)

    @property
    def n(self) -> int:
        return _qubit_count(self.matrix.shape[0], "density matrix")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)

    def is_positive(self, atol: float = PSD_ATOL) -> bool:
        return float(np.linalg.eigvalsh(self.matrix)[0]) >= -atol


@dataclass(frozen=True)
class Operator:
    """A linear operator on ``n`` qubits; set ``unitary=True`` to validate U†U = I."""

    matrix: np.ndarray
    unitary: bool = False

    def __post_init__(self):
        arr = _frozen_array(self.matrix)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("operator matrix must be square")
        _qubit_count(arr.shape[0], "operator")
        if self.unitary:
            err = float(np.max(np.abs(arr.conj().T @ arr - np.eye(arr.shape[0]))))
            if err > UNITARY_ATOL:
                raise ValueError(f"operator flagged unitary but U†U−I = {err:.3e}")
        object.__setattr__(self, "matrix", arr)

    @property
    def n(self) -> int:
        return _qubit_count(self.matrix.shape[0], "operator")

    def is_hermitian(self, atol: float = HERM_ATOL) -> bool:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T))) <= atol


def ket(bits: str) -> StateVector:
    """Computational-basis ket from a bit string, e.g. ``ket("010")``."""
    if not bits or any(b not in "01" for b in bits):
        raise ValueError(f"invalid bit string {bits!r}")
    amps = np.zeros(2 ** len(bits), dtype=complex)
    amps[int(bits, 2)] = 1.0
    return StateVector(amps)


def bloch_ket(theta: float, phi: float) -> StateVector:
    """Single-qubit ket cos(θ/2)|0> + e^{iφ} sin(θ/2)|1>."""
    return StateVector(
        np.array([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)])
    )


def tensor(a, b, *rest):
    """
    Kronecker product of two or more states or operators (all the same kind).

    ``tensor(a, b, c)`` nests left-to-right, so qubit numbering follows the
    argument order.
    """
    factors = (a, b) + rest
    if all(isinstance(f, StateVector) for f in factors):
        amps = factors[0].amplitudes
        for f in factors[1:]:
            amps = np.kron(amps, f.amplitudes)
        return StateVector(amps)
    if all(isinstance(f, Operator) for f in factors):
        mat = factors[0].matrix
        for f in factors[1:]:
            mat = np.kron(mat, f.matrix)
        return Operator(mat, unitary=all(f.unitary for f in factors))
    if all(isinstance(f, DensityOperator) for f in factors):
        kinds = {f.kind for f in factors}
        if kinds != {"physical"}:
            raise ValueError("tensor products of deviation matrices are ambiguous")
        mat = factors[0].matrix
        for f in factors[1:]:
            mat = np.kron(mat, f.matrix)
        return DensityOperator(mat, kind="physical")
    raise TypeError("tensor operands must all be StateVector, Operator, or DensityOperator")


def embed(op: np.ndarray, n: int, qubits: Union[int, Sequence[int]]) -> np.ndarray:
    """
    Raw-matrix helper: place a k-qubit operator on the given (1-based,
    ascending, contiguous-or-not) qubits of an n-qubit register, identity
    elsewhere.  Accepts and returns plain ndarrays; used by the physics
    modules to assemble Hamiltonians without wrapper overhead.
    """
    if isinstance(qubits, (int, np.integer)):
        qubits = (int(qubits),)
    qubits = tuple(int(q) for q in qubits)
    if len(set(qubits)) != len(qubits):
        raise ValueError("embed qubits must be distinct")
    if any(q < 1 or q > n for q in qubits):
        raise ValueError(f"embed qubits {qubits} out of range for n={n}")
    k = len(qubits)
    op = np.asarray(op, dtype=complex)
    if op.shape != (2**k, 2**k):
        raise ValueError("operator shape does not match qubit count")
    op_t = op.reshape((2,) * (2 * k))
    rest = [q for q in range(1, n + 1) if q not in qubits]
    eye_rest = np.eye(2 ** len(rest)).reshape((2,) * (2 * len(rest)))
    # einsum subscripts: operator rows/cols on `qubits`, identity on the rest
    out_idx = list(range(2 * n))
    op_rows = [qubits[i] - 1 for i in range(k)]
    op_cols = [n + qubits[i] - 1 for i in range(k)]
    rest_rows = [q - 1 for q in rest]
    rest_cols = [n + q - 1 for q in rest]
    full_t = np.einsum(
        op_t,
        op_rows + op_cols,
        eye_rest,
        rest_rows + rest_cols,
        out_idx,
    )
    return full_t.reshape(2**n, 2**n)


def partial_trace(rho: DensityOperator, keep: Iterable[int]) -> DensityOperator:
    """
    Trace out all qubits not in ``keep`` (1-based indices, order preserved
    in the output register).
    """
    keep = tuple(int(q) for q in keep)
    n = rho.n
    if not keep:
        raise ValueError("keep set must be non-empty")
    if len(set(keep)) != len(keep) or any(q < 1 or q > n for q in keep):
        raise ValueError(f"invalid keep indices {keep} for n={n}")
    t = rho.matrix.reshape((2,) * (2 * n))
    drop = [q for q in range(1, n + 1) if q not in keep]
    for q in sorted(drop, reverse=True):
        # trace the q-th row index against the q-th column index
        t = np.trace(t, axis1=q - 1, axis2=t.ndim // 2 + q - 1)
        # after tracing, reinterpret remaining axes: numpy moves traced axes out
    k = len(keep)
    mat = t.reshape(2**k, 2**k)
    if keep != tuple(sorted(keep)):
        order = np.argsort(np.argsort(keep))
        perm = list(order) + [k + i for i in order]
        mat = mat.reshape((2,) * (2 * k)).transpose(perm).reshape(2**k, 2**k)
    return DensityOperator(mat, kind=rho.kind, _check_psd=False)


def project_subsystem(state, qubit: int, onto: StateVector, floor: float = PROJECTION_FLOOR):
    """
    Project one qubit of a multi-qubit state onto a single-qubit ket.

    Returns ``(post_state, probability)`` where ``post_state`` lives on the
    same register (the measured qubit left in ``onto``) and is renormalized.
    Works for both ``StateVector`` and ``DensityOperator`` inputs; raises
    :class:`PostSelectionError` when the outcome probability falls below
    ``floor``.
    """
    if onto.n != 1:
        raise ValueError("projection target must be a single-qubit ket")
    if isinstance(state, StateVector):
        n = state.n
        _check_qubit(qubit, n)
        t = state.amplitudes.reshape((2,) * n)
        rest = np.tensordot(onto.amplitudes.conj(), t, axes=([0], [qubit - 1]))
        prob = float(np.sum(np.abs(rest) ** 2))
        if prob < floor:
            raise PostSelectionError(
                f"post-selection failed: outcome probability {prob:.3e} below floor",
                probability=prob,
            )
        post = np.tensordot(onto.amplitudes, rest / np.sqrt(prob), axes=0)
        post = np.moveaxis(post, 0, qubit - 1).reshape(-1)
        return StateVector(post), prob
    if isinstance(state, DensityOperator):
        n = state.n
        _check_qubit(qubit, n)
        proj = embed(np.outer(onto.amplitudes, onto.amplitudes.conj()), n, qubit)
        reduced = proj @ state.matrix @ proj
        prob = float(np.trace(reduced).real)
        if prob < floor:
            raise PostSelectionError(
                f"post-selection failed: outcome probability {prob:.3e} below floor",
                probability=prob,
            )
        return DensityOperator(reduced / prob, kind="physical", _check_psd=False), prob
    raise TypeError("project_subsystem expects a StateVector or DensityOperator")


def _check_qubit(qubit: int, n: int) -> None:
    if not 1 <= qubit <= n:
        raise ValueError(f"qubit index {qubit} out of range for n={n}")


def fidelity(rho_th: DensityOperator, rho_exp: DensityOperator) -> float:
    """
    Correlation fidelity tr(a b) / sqrt(tr(a²) tr(b²)).

    Symmetric, equal to 1 iff the arguments are proportional, and invariant
    under a common rescaling, which is why it extends unchanged to
    deviation matrices (both arguments must share a kind).
    """
    if rho_th.dim != rho_exp.dim:
        raise ValueError("fidelity arguments must have equal dimension")
    if rho_th.kind != rho_exp.kind:
        raise ValueError("fidelity arguments must share a kind")
    a, b = rho_th.matrix, rho_exp.matrix
    pa = float(np.trace(a @ a).real)
    pb = float(np.trace(b @ b).real)
    if pa <= 0.0 or pb <= 0.0:
        raise ValueError("fidelity is undefined for zero-purity arguments")
    return float(np.trace(a @ b).real / np.sqrt(pa * pb))


def evolve(H, t: float) -> Operator:
    """
    Exact unitary propagator U = exp(-i H t) for a Hermitian H in rad/s.

    Uses an eigendecomposition, so the semigroup property
    ``evolve(H, t1) @ evolve(H, t2) == evolve(H, t1 + t2)`` holds to
    rounding for 8x8 problems.
    """
    mat = H.matrix if isinstance(H, Operator) else np.asarray(H, dtype=complex)
    herm_err = float(np.max(np.abs(mat - mat.conj().T)))
    if herm_err > HERM_ATOL * max(1.0, float(np.max(np.abs(mat)))):
        raise ValueError(f"evolve requires a Hermitian generator (asymmetry {herm_err:.3e})")
    w, v = np.linalg.eigh(mat)
    u = (v * np.exp(-1j * w * t)) @ v.conj().T
    return Operator(u, unitary=True)


def unitary_matrix_exp(mat: np.ndarray, t: float = 1.0) -> np.ndarray:
    """Raw-ndarray variant of :func:`evolve` for inner loops."""
    w, v = np.linalg.eigh(mat)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def su2_rotation(axis: str, angle: float) -> np.ndarray:
    """Single-qubit rotation exp(-i angle sigma_axis / 2) as a 2x2 ndarray."""
    try:
        sigma = PAULIS[axis.lower()]
    except KeyError:
        raise ValueError(f"unknown rotation axis {axis!r}") from None
    return np.cos(angle / 2) * PAULI_I - 1j * np.sin(angle / 2) * sigma


def su2_from_zero(target: StateVector) -> np.ndarray:
    """
    A determinant-one unitary taking |0> to the given single-qubit ket
    (the phase of the |1>-image column is fixed by unit determinant).
    """
    if target.n != 1:
        raise ValueError("target must be a single-qubit ket")
    a, b = target.amplitudes
    return np.array([[a, -np.conj(b)], [b, np.conj(a)]], dtype=complex)
