"""
The ideal, gate-level superposition protocol.

Two unknown single-qubit states |phi1>, |phi2> with known nonzero overlaps
onto a referential state |chi> are combined into alpha|phi1> + beta|phi2>
(up to input-dependent phase factors) by one ancilla, one controlled-SWAP
and two post-selected projective measurements:

    ancilla |nu> = alpha|0> + beta|1>   (qubit 1)
    register    |phi1>                  (qubit 2)
    register    |phi2>                  (qubit 3)

    controlled-SWAP (swap 2<->3 when qubit 1 is |1>)
    project qubit 3 onto |chi>, qubit 1 onto |mu>
    qubit 2 then carries the superposition.

Everything here is exact and noiseless; the physical-level counterpart
lives in :mod:`superlab.nmr` and :mod:`superlab.noise`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .qcore import (
    PROJECTION_FLOOR,
    Operator,
    PostSelectionError,
    StateVector,
    bloch_ket,
    ket,
    project_subsystem,
    tensor,
)


class OrthogonalReferenceError(ValueError):
    """Referential state orthogonal to both inputs; |mu> is undefined."""


@dataclass(frozen=True)
class SuperpositionTask:
    """
    One protocol instance: the two input states, the referential state and
    the superposition weights.  Overlaps ``<phi1|chi>`` and ``<phi2|chi>``
    are computed once at construction.
    """

    phi1: StateVector
    phi2: StateVector
    chi: StateVector
    alpha: complex
    beta: complex
    overlap1: complex = field(init=False)
    overlap2: complex = field(init=False)

    def __post_init__(self):
        for name in ("phi1", "phi2", "chi"):
            if getattr(self, name).n != 1:
                raise ValueError(f"{name} must be a single-qubit state")
        weight = abs(self.alpha) ** 2 + abs(self.beta) ** 2
        if abs(weight - 1.0) > 1e-12:
            raise ValueError(f"|alpha|^2 + |beta|^2 = {weight!r}, expected 1")
        object.__setattr__(self, "overlap1", self.phi1.overlap(self.chi))
        object.__setattr__(self, "overlap2", self.phi2.overlap(self.chi))


@dataclass(frozen=True)
class ProtocolOutcome:
    """Post-selected output state (qubit 2) and the joint success probability."""

    output: StateVector
    success_probability: float

    def __post_init__(self):
        if not 0.0 <= self.success_probability <= 1.0 + 1e-12:
            raise ValueError(
                f"success probability {self.success_probability!r} outside [0, 1]"
            )


def ancilla_state(alpha: complex, beta: complex) -> StateVector:
    """The ancilla ket alpha|0> + beta|1>; weights must be normalized."""
    weight = abs(alpha) ** 2 + abs(beta) ** 2
    if abs(weight - 1.0) > 1e-12:
        raise ValueError(f"|alpha|^2 + |beta|^2 = {weight!r}, expected 1")
    return StateVector(np.array([alpha, beta], dtype=complex))


def mu_state(phi1: StateVector, phi2: StateVector, chi: StateVector) -> StateVector:
    """
    The ancilla measurement basis ket

        |mu> ∝ |<phi1|chi>| |0> + |<phi2|chi>| |1>,

    normalized to unit length.  Its coefficients are overlap magnitudes, so
    |mu> is always a real-amplitude ket; it is undefined (raises
    :class:`OrthogonalReferenceError`) when both overlaps vanish.
    """
    m1 = abs(complex(np.vdot(phi1.amplitudes, chi.amplitudes)))
    m2 = abs(complex(np.vdot(phi2.amplitudes, chi.amplitudes)))
    norm = np.hypot(m1, m2)
    if norm < 1e-15:
        raise OrthogonalReferenceError(
            "referential state orthogonal to both inputs; measurement basis undefined"
        )
    return StateVector(np.array([m1 / norm, m2 / norm], dtype=complex))


_CSWAP = np.eye(8, dtype=complex)
_CSWAP[[5, 6]] = _CSWAP[[6, 5]]
_CSWAP.setflags(write=False)


def controlled_swap() -> Operator:
    """
    The 8x8 Fredkin gate: qubit 1 controls, qubits 2 and 3 exchange when the
    control is |1>; |0,a,b> is untouched.  Self-inverse.
    """
    return Operator(_CSWAP, unitary=True)


def run_ideal(task: SuperpositionTask, floor: float = PROJECTION_FLOOR) -> ProtocolOutcome:
    """
    Execute the exact circuit: prepare |nu>|phi1>|phi2>, apply the
    controlled-SWAP, project qubit 3 onto |chi| and qubit 1 onto |mu>, and
    return the residual qubit-2 ket with the joint post-selection
    probability.

    Raises :class:`PostSelectionError` when the joint probability falls
    below ``floor``.
    """
    nu = ancilla_state(task.alpha, task.beta)
    mu = mu_state(task.phi1, task.phi2, task.chi)
    joint = tensor(nu, task.phi1, task.phi2)
    entangled = StateVector(_CSWAP @ joint.amplitudes)
    after_chi, p_chi = project_subsystem(entangled, 3, task.chi, floor=floor)
    after_mu, p_mu = project_subsystem(after_chi, 1, mu, floor=floor / max(p_chi, floor))
    joint_p = p_chi * p_mu
    if joint_p < floor:
        raise PostSelectionError(
            f"post-selection failed: joint probability {joint_p:.3e} below floor",
            probability=joint_p,
        )
    # The post-measurement state is the product |mu> ⊗ |out> ⊗ |chi>;
    # contract the known factors away to read off qubit 2.
    amps = after_mu.amplitudes.reshape(2, 2, 2)
    out = np.einsum("i,ijk,k->j", mu.amplitudes.conj(), amps, task.chi.amplitudes.conj())
    out = out / np.linalg.norm(out)
    return ProtocolOutcome(output=StateVector(out), success_probability=joint_p)


def analytic_superposition(task: SuperpositionTask) -> StateVector:
    """
    Closed-form protocol output

        alpha (<chi|phi2>/|<chi|phi2>|) |phi1> + beta (<chi|phi1>/|<chi|phi1>|) |phi2>,

    renormalized.  The phase factors are undefined when either overlap is
    zero, which raises ``ValueError``.
    """
    o1 = complex(np.conj(task.overlap1))  # <chi|phi1>
    o2 = complex(np.conj(task.overlap2))  # <chi|phi2>
    if abs(o1) < 1e-15 or abs(o2) < 1e-15:
        raise ValueError("zero overlap with the referential state: phase undefined")
    vec = (
        task.alpha * (o2 / abs(o2)) * task.phi1.amplitudes
        + task.beta * (o1 / abs(o1)) * task.phi2.amplitudes
    )
    norm = np.linalg.norm(vec)
    if norm < 1e-15:
        raise ValueError("superposition amplitude cancels exactly")
    return StateVector(vec / norm)


def theory_overlap(group: str, theta: float) -> float:
    """
    Analytic overlap |<output|phi1>|^2 along the two experiment families:

    group A: cos^2(theta/2)
    group B: (1 + 2c + c^2) / (2 + 2c) with c = cos(theta/2)
    """
    if group == "A":
        return float(np.cos(theta / 2) ** 2)
    if group == "B":
        c = np.cos(theta / 2)
        return float((1 + 2 * c + c * c) / (2 + 2 * c))
    raise ValueError(f"unknown experiment group {group!r}")


def group_a_task(theta1: float) -> SuperpositionTask:
    """
    Experiment family A: superpose |+> and |-> with weights
    (cos(theta1/2), sin(theta1/2)); referential state |0>.
    """
    return SuperpositionTask(
        phi1=bloch_ket(np.pi / 2, 0.0),
        phi2=StateVector(np.array([1, -1]) / np.sqrt(2)),
        chi=ket("0"),
        alpha=complex(np.cos(theta1 / 2)),
        beta=complex(np.sin(theta1 / 2)),
    )


def group_b_task(theta2: float) -> SuperpositionTask:
    """
    Experiment family B: fixed ancilla |+>, superpose |0> and
    cos(theta2/2)|0> + i sin(theta2/2)|1>; referential state |0>.
    """
    return SuperpositionTask(
        phi1=ket("0"),
        phi2=bloch_ket(theta2, np.pi / 2),
        chi=ket("0"),
        alpha=complex(1 / np.sqrt(2)),
        beta=complex(1 / np.sqrt(2)),
    )


def task_for_group(group: str, theta: float) -> SuperpositionTask:
    """Dispatch helper used by the noise and CLI layers."""
    if group == "A":
        return group_a_task(theta)
    if group == "B":
        return group_b_task(theta)
    raise ValueError(f"unknown experiment group {group!r}")


def default_theta_grid() -> Tuple[float, ...]:
    """The 12-point sweep k*pi/12, k = 0..11 used by both experiment families."""
    return tuple(k * np.pi / 12 for k in range(12))
