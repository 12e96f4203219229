"""
Error channels and Monte-Carlo machinery for the physical-level protocol.

The realistic pipeline mirrors the experiment: a slightly depolarized
pseudo-pure start, state-preparation rotations, the controlled-SWAP (either
the packaged shaped pulse propagated under the molecule Hamiltonian or a
perturbed ideal gate), gradient-echo measurement emulation, numerical
post-selection, and a linear-inversion tomography with additive Gaussian
noise on every Pauli coefficient.

Post-selection keeps the unnormalized conditional block (its trace is the
success probability p); the tomography stage renormalizes, so readout noise
on the reconstructed coefficients is effectively sigma / p.  Small-overlap
tasks therefore show strongly amplified fidelity uncertainty, which is the
experimentally observed mechanism this module is built to reproduce.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np

from .qcore import (
    DensityOperator,
    StateVector,
    embed,
    fidelity,
    su2_from_zero,
    unitary_matrix_exp,
)
from .protocol import (
    SuperpositionTask,
    analytic_superposition,
    controlled_swap,
    mu_state,
    task_for_group,
)
from .nmr import MAX_NOISE_STEP_S, Molecule
from .grape import ControlPulse, default_cswap_pulse, _segment_unitaries


class AllTrialsFailedError(RuntimeError):
    """Every Monte-Carlo trial failed post-selection."""


@dataclass(frozen=True)
class NoiseModel:
    """
    Error-channel configuration.

    Relaxation rates themselves live on the :class:`~superlab.nmr.Molecule`
    (per-spin T1/T2); this model only switches them on or off.  The
    coherent controlled-SWAP error has three modes: ``"grape_pulse"``
    propagates a shaped pulse (``pulse_file`` or the packaged default)
    under the molecule Hamiltonian, ``"perturbation"`` applies
    exp(-i s H_rand) after the ideal gate with a seed-fixed random
    Hermitian H_rand of unit spectral norm, and ``"none"`` uses the ideal
    gate.  Durations give each pipeline stage its relaxation exposure
    (``echo_duration`` is per echo; the measurement block runs two).
    """

    relaxation_enabled: bool = True
    prep_error: float = 0.01
    coherent_error_mode: str = "grape_pulse"
    perturbation_strength: float = 0.1
    readout_sigma: float = 0.02
    seed: int = 0
    pulse_file: Optional[str] = None
    prep_duration: float = 2e-3
    cswap_duration: float = 28e-3
    echo_duration: float = 3.5e-3
    floor: float = 1e-12

    def __post_init__(self):
        if self.coherent_error_mode not in ("grape_pulse", "perturbation", "none"):
            raise ValueError(f"unknown coherent error mode {self.coherent_error_mode!r}")
        for name in (
            "prep_error",
            "perturbation_strength",
            "readout_sigma",
            "prep_duration",
            "cswap_duration",
            "echo_duration",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 <= self.prep_error <= 1:
            raise ValueError("prep_error is a depolarizing weight in [0, 1]")

    @classmethod
    def disabled(cls, seed: int = 0) -> "NoiseModel":
        """All error channels off; the pipeline becomes the ideal protocol."""
        return cls(
            relaxation_enabled=False,
            prep_error=0.0,
            coherent_error_mode="none",
            readout_sigma=0.0,
            seed=seed,
        )

    def with_seed(self, seed: int) -> "NoiseModel":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return {
            "relaxation": {"enabled": self.relaxation_enabled},
            "prep_error": self.prep_error,
            "coherent_error": {
                "mode": self.coherent_error_mode,
                "strength": self.perturbation_strength,
                "pulse_file": self.pulse_file,
            },
            "readout_sigma": self.readout_sigma,
            "seed": self.seed,
            "durations": {
                "prep_s": self.prep_duration,
                "cswap_s": self.cswap_duration,
                "echo_s": self.echo_duration,
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseModel":
        if not isinstance(doc, dict):
            raise ValueError("noise document must be a JSON object")
        base = cls()
        relax = doc.get("relaxation", {})
        coherent = doc.get("coherent_error", {})
        durations = doc.get("durations", {})
        try:
            return cls(
                relaxation_enabled=bool(relax.get("enabled", base.relaxation_enabled)),
                prep_error=float(doc.get("prep_error", base.prep_error)),
                coherent_error_mode=str(coherent.get("mode", base.coherent_error_mode)),
                perturbation_strength=float(
                    coherent.get("strength", base.perturbation_strength)
                ),
                pulse_file=coherent.get("pulse_file", None),
                readout_sigma=float(doc.get("readout_sigma", base.readout_sigma)),
                seed=int(doc.get("seed", base.seed)),
                prep_duration=float(durations.get("prep_s", base.prep_duration)),
                cswap_duration=float(durations.get("cswap_s", base.cswap_duration)),
                echo_duration=float(durations.get("echo_s", base.echo_duration)),
            )
        except (TypeError, ValueError, AttributeError) as exc:
            raise ValueError(f"malformed noise document: {exc}") from exc


@dataclass(frozen=True)
class TrialResult:
    fidelity: float
    success_probability: float
    overlap: float
    failed: bool = False


@dataclass(frozen=True)
class TrialStatistics:
    """Summary over the successful trials of one Monte-Carlo run."""

    mean_fidelity: float
    std_fidelity: float
    n_trials: int
    mean_success_probability: float
    mean_overlap: float
    std_overlap: float
    failed_trials: int

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("statistics need at least one trial")
        if self.std_fidelity < 0 or self.std_overlap < 0:
            raise ValueError("standard deviations must be >= 0")


@dataclass(frozen=True)
class EchoComparisonRow:
    theta2: float
    mean_with_echo: float
    std_with_echo: float
    mean_without_echo: float
    std_without_echo: float


# ---------------------------------------------------------------------------
# Relaxation channel


def amplitude_damping_kraus(gamma: float) -> list:
    """Kraus pair for decay |1> -> |0> with probability gamma."""
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must be in [0, 1]")
    k0 = np.array([[1, 0], [0, np.sqrt(1 - gamma)]], dtype=complex)
    k1 = np.array([[0, np.sqrt(gamma)], [0, 0]], dtype=complex)
    return [k0, k1]


def phase_flip_kraus(q: float) -> list:
    """Kraus pair for a z flip with probability q (coherence factor 1-2q)."""
    if not 0 <= q <= 0.5:
        raise ValueError("flip probability must be in [0, 0.5]")
    k0 = np.sqrt(1 - q) * np.eye(2, dtype=complex)
    k1 = np.sqrt(q) * np.diag([1.0, -1.0]).astype(complex)
    return [k0, k1]


def _relaxation_factors(dt: float, t1_s: float, t2_s: float) -> Tuple[float, float]:
    """
    (gamma, q) for one step: amplitude damping gamma = 1 - e^{-dt/T1} plus a
    pure-dephasing flip probability q chosen so the composed transverse decay
    is exactly e^{-dt/T2}:  sqrt(1-gamma) (1-2q) = e^{-dt/T2}.
    """
    if t2_s > t1_s:
        raise ValueError("T2 must not exceed T1 in this relaxation model")
    gamma = 1.0 - np.exp(-dt / t1_s)
    pure = 1.0 / t2_s - 1.0 / (2.0 * t1_s)
    q = 0.5 * (1.0 - np.exp(-dt * pure))
    return float(gamma), float(q)


def single_spin_relaxation_kraus(dt: float, t1_s: float, t2_s: float) -> list:
    """The composed per-step channel as an explicit Kraus list (for CP tests)."""
    gamma, q = _relaxation_factors(dt, t1_s, t2_s)
    damp = amplitude_damping_kraus(gamma)
    flip = phase_flip_kraus(q)
    return [f @ d for f in flip for d in damp]


def relaxation_matrix_step(mat: np.ndarray, dt: float, mol: Molecule) -> np.ndarray:
    """
    Raw-matrix relaxation over ``dt`` seconds, spin by spin.

    Implemented elementwise (the composed amplitude-damping + dephasing
    channel acts independently on each spin's 2x2 block structure), which
    is exactly the Kraus composition of :func:`single_spin_relaxation_kraus`
    but much cheaper.  Exact for any dt: populations relax as e^{-dt/T1},
    single-spin coherences as e^{-dt/T2}.
    """
    if dt < 0:
        raise ValueError("relaxation duration must be >= 0")
    n = mol.n
    out = np.array(mat, dtype=complex)
    if dt == 0:
        return out
    tensor_view = out.reshape((2,) * (2 * n))
    for idx, spin in enumerate(mol.spins, start=1):
        gamma, q = _relaxation_factors(dt, spin.t1_s, spin.t2_s)
        coh = np.sqrt(1.0 - gamma) * (1.0 - 2.0 * q)
        view = np.moveaxis(tensor_view, (idx - 1, n + idx - 1), (0, 1))
        view[0, 0] = view[0, 0] + gamma * view[1, 1]
        view[1, 1] = (1.0 - gamma) * view[1, 1]
        view[0, 1] = coh * view[0, 1]
        view[1, 0] = coh * view[1, 0]
    return out


def relaxation_step(rho: DensityOperator, dt: float, mol: Molecule) -> DensityOperator:
    """Apply per-spin T1/T2 relaxation to a state (trace-preserving, CP)."""
    out = relaxation_matrix_step(rho.matrix, dt, mol)
    return DensityOperator(out, kind=rho.kind, _check_psd=False)


# ---------------------------------------------------------------------------
# Tomography


@lru_cache(maxsize=8)
def _pauli_basis(n: int) -> np.ndarray:
    """All 4^n Pauli strings (identity first), stacked (4^n, 2^n, 2^n)."""
    from .qcore import PAULI_I, PAULI_X, PAULI_Y, PAULI_Z

    singles = [PAULI_I, PAULI_X, PAULI_Y, PAULI_Z]
    mats = [np.array([[1.0 + 0j]])]
    for _ in range(n):
        mats = [np.kron(m, s) for m in mats for s in singles]
    return np.array(mats)


def _tomography_matrix(mat: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """
    Linear-inversion reconstruction with additive Gaussian noise of std
    ``sigma`` on every non-identity Pauli coefficient.  The identity
    coefficient (the trace) is kept exact, so the reconstruction's trace
    equals the input's.  No renormalization here.
    """
    n = int(round(np.log2(mat.shape[0])))
    basis = _pauli_basis(n)
    coeffs = np.einsum("pij,ji->p", basis, mat).real
    if sigma > 0:
        coeffs = coeffs.copy()
        coeffs[1:] += rng.normal(0.0, sigma, size=coeffs.size - 1)
    return np.tensordot(coeffs, basis, axes=(0, 0)) / mat.shape[0]


def noisy_tomography(
    rho: DensityOperator, sigma: float, rng: np.random.Generator
) -> DensityOperator:
    """
    Simulate full state tomography: measure all 4^n - 1 non-identity Pauli
    expectation values, add independent zero-mean Gaussian noise of std
    ``sigma``, reconstruct by linear inversion and renormalize the trace
    to 1.  Positivity is deliberately not enforced (linear inversion can
    and does produce indefinite estimates); the result is wrapped via
    :meth:`DensityOperator.reconstructed`.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    recon = _tomography_matrix(rho.matrix, sigma, rng)
    trace = float(np.trace(recon).real)
    if abs(trace) < 1e-12:
        raise ValueError("cannot renormalize a reconstruction with zero trace")
    return DensityOperator.reconstructed(recon / trace)


# ---------------------------------------------------------------------------
# The physical pipeline


def _coherent_perturbation(seed: int, dim: int, strength: float) -> np.ndarray:
    """exp(-i strength H) with H a seed-fixed Hermitian of unit spectral norm."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xC0,)))
    raw = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    herm = (raw + raw.conj().T) / 2
    herm /= float(np.max(np.abs(np.linalg.eigvalsh(herm))))
    return unitary_matrix_exp(herm, strength)


def _cswap_stage(noise: NoiseModel, mol: Molecule) -> list:
    """
    The controlled-SWAP stage as a list of (unitary, duration) chunks, each
    short enough for first-order relaxation interleaving.
    """
    ideal = controlled_swap().matrix
    if noise.coherent_error_mode == "grape_pulse":
        pulse = (
            ControlPulse.load(noise.pulse_file)
            if noise.pulse_file
            else default_cswap_pulse()
        )
        return _chunked_pulse(pulse, mol, chunk=noise.relaxation_enabled)
    if noise.coherent_error_mode == "perturbation":
        gate = (
            _coherent_perturbation(noise.seed, ideal.shape[0], noise.perturbation_strength)
            @ ideal
        )
    else:
        gate = ideal
    return [(gate, noise.cswap_duration)]


def _chunked_pulse(pulse: ControlPulse, mol: Molecule, chunk: bool) -> list:
    from .nmr import control_hamiltonians, internal_hamiltonian

    drift = internal_hamiltonian(mol).matrix
    names, stack = control_hamiltonians(mol)
    index = {nm: k for k, nm in enumerate(names)}
    rows = [index[ch] for ch in pulse.channels]
    unitaries, _, _ = _segment_unitaries(
        pulse.amplitudes, pulse.dt, drift, stack[rows]
    )
    per_chunk = (
        max(1, int(MAX_NOISE_STEP_S // pulse.dt)) if chunk and pulse.dt > 0 else len(unitaries)
    )
    chunks = []
    for start in range(0, len(unitaries), per_chunk):
        block = unitaries[start : start + per_chunk]
        total = np.eye(drift.shape[0], dtype=complex)
        for u in block:
            total = u @ total
        chunks.append((total, pulse.dt * len(block)))
    if not chunks:
        chunks.append((np.eye(drift.shape[0], dtype=complex), 0.0))
    return chunks


def _trial_rng(noise: NoiseModel, trial: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=noise.seed, spawn_key=(int(trial),))
    )


def _run_trial(
    task: SuperpositionTask,
    noise: NoiseModel,
    mode: str,
    mol: Molecule,
    rng: np.random.Generator,
    cswap_chunks: Optional[list] = None,
    reduction: str = "project",
) -> TrialResult:
    if mode not in ("with_echo", "no_echo"):
        raise ValueError(f"unknown measurement mode {mode!r}")
    if reduction not in ("project", "trace_out"):
        raise ValueError(f"unknown reduction {reduction!r}")
    if mol.n != 3:
        raise ValueError("the physical pipeline runs on the three-spin register")
    n, dim = 3, 8
    mu = mu_state(task.phi1, task.phi2, task.chi)
    target = analytic_superposition(task)

    def relax(mat, dt):
        if noise.relaxation_enabled and dt > 0:
            return relaxation_matrix_step(mat, dt, mol)
        return mat

    # Pseudo-pure start with depolarizing preparation error.
    mat = np.zeros((dim, dim), dtype=complex)
    mat[0, 0] = 1.0
    if noise.prep_error:
        mat = (1 - noise.prep_error) * mat + noise.prep_error * np.eye(dim) / dim

    # State-preparation rotations (simultaneous shaped pulses in the lab,
    # modeled as ideal rotations inside a relaxation window).
    prep = np.kron(
        su2_from_zero(StateVector(np.array([task.alpha, task.beta]))),
        np.kron(su2_from_zero(task.phi1), su2_from_zero(task.phi2)),
    )
    mat = relax(mat, noise.prep_duration / 2)
    mat = prep @ mat @ prep.conj().T
    mat = relax(mat, noise.prep_duration / 2)

    # Controlled-SWAP.
    chunks = cswap_chunks if cswap_chunks is not None else _cswap_stage(noise, mol)
    for gate, duration in chunks:
        mat = gate @ mat @ gate.conj().T
        mat = relax(mat, duration)

    bra_mu = mu.amplitudes.conj()
    bra_chi = task.chi.amplitudes.conj()

    def conditional_block(m):
        t = m.reshape((2,) * (2 * n))
        return np.einsum(
            "i,k,ijkabc,a,c->jb", bra_mu, bra_chi, t, bra_mu.conj(), bra_chi.conj()
        )

    if mode == "with_echo":
        for qubit, ket in ((3, task.chi), (1, mu)):
            proj = embed(np.outer(ket.amplitudes, ket.amplitudes.conj()), n, qubit)
            comp = np.eye(dim) - proj
            mat = relax(mat, noise.echo_duration / 2)
            mat = proj @ mat @ proj + comp @ mat @ comp
            mat = relax(mat, noise.echo_duration / 2)
        block = conditional_block(mat)
        p = float(np.trace(block).real)
        if p < noise.floor:
            return TrialResult(np.nan, p, np.nan, failed=True)
        recon = _tomography_matrix(block, noise.readout_sigma, rng)
        out = recon / float(np.trace(recon).real)
    else:
        block_exact = conditional_block(mat)
        p = float(np.trace(block_exact).real)
        recon3 = _tomography_matrix(mat, noise.readout_sigma, rng)
        recon3 /= float(np.trace(recon3).real)
        if reduction == "trace_out":
            t = recon3.reshape((2,) * (2 * n))
            out = np.einsum("ijkibk->jb", t)
        else:
            block = conditional_block(recon3)
            p_est = float(np.trace(block).real)
            if abs(p_est) < noise.floor:
                return TrialResult(np.nan, p, np.nan, failed=True)
            out = block / p_est

    out = (out + out.conj().T) / 2
    rho_out = DensityOperator.reconstructed(out)
    fid = fidelity(target.density(), rho_out)
    phi1 = task.phi1.amplitudes
    overlap = float((phi1.conj() @ out @ phi1).real)
    return TrialResult(fid, p, overlap, failed=False)


def run_noisy_trial(
    group: str,
    theta: float,
    noise: NoiseModel,
    mode: str,
    mol: Molecule,
    rng: Optional[np.random.Generator] = None,
    reduction: str = "project",
) -> TrialResult:
    """
    One realistic protocol execution; returns the correlation fidelity
    against the analytic superposition target, the success probability and
    the simulated overlap with phi1.

    ``mode="with_echo"`` runs the gradient-echo measurement emulation and
    post-selects the exact conditional block before the noisy single-qubit
    tomography; ``mode="no_echo"`` performs a noisy three-qubit tomography
    first and then reduces numerically.  The no-echo reduction defaults to
    projection onto the (mu, chi) outcome; ``reduction="trace_out"``
    discards qubits 1 and 3 unconditionally instead (a diagnostic variant,
    physically questionable but sometimes quoted).
    """
    task = task_for_group(group, theta)
    if rng is None:
        rng = _trial_rng(noise, 0)
    return _run_trial(task, noise, mode, mol, rng, reduction=reduction)


def _monte_carlo_task(
    task: SuperpositionTask,
    noise: NoiseModel,
    n_trials: int,
    mode: str,
    mol: Molecule,
    reduction: str = "project",
) -> TrialStatistics:
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    chunks = _cswap_stage(noise, mol)
    fids, probs, overlaps = [], [], []
    failed = 0
    for trial in range(n_trials):
        result = _run_trial(
            task, noise, mode, mol, _trial_rng(noise, trial), cswap_chunks=chunks,
            reduction=reduction,
        )
        if result.failed:
            failed += 1
            continue
        fids.append(result.fidelity)
        probs.append(result.success_probability)
        overlaps.append(result.overlap)
    if not fids:
        raise AllTrialsFailedError(
            f"all {n_trials} trials failed post-selection (floor {noise.floor})"
        )
    fids, probs, overlaps = map(np.asarray, (fids, probs, overlaps))
    return TrialStatistics(
        mean_fidelity=float(fids.mean()),
        std_fidelity=float(fids.std()),
        n_trials=n_trials,
        mean_success_probability=float(probs.mean()),
        mean_overlap=float(overlaps.mean()),
        std_overlap=float(overlaps.std()),
        failed_trials=failed,
    )


def monte_carlo(
    group: str,
    theta: float,
    noise: NoiseModel,
    n_trials: int,
    mode: str,
    mol: Molecule,
    reduction: str = "project",
) -> TrialStatistics:
    """
    Fidelity statistics over ``n_trials`` independent trials.  Trial ``t``
    draws its randomness from a generator seeded deterministically by
    (master seed, t), so results are bit-reproducible and two runs sharing
    a master seed use common random numbers trial-for-trial.
    """
    return _monte_carlo_task(
        task_for_group(group, theta), noise, n_trials, mode, mol, reduction=reduction
    )


def _overlap_task(o1: float, o2: float) -> SuperpositionTask:
    """A task realizing given overlap magnitudes: chi = |0>, real-amplitude inputs."""
    for o in (o1, o2):
        if not 0 < o <= 1:
            raise ValueError("overlap grid values must lie in (0, 1]")
    s = 1 / np.sqrt(2)
    return SuperpositionTask(
        phi1=StateVector(np.array([o1, np.sqrt(1 - o1 * o1)], dtype=complex)),
        phi2=StateVector(np.array([o2, np.sqrt(1 - o2 * o2)], dtype=complex)),
        chi=StateVector(np.array([1.0, 0.0], dtype=complex)),
        alpha=complex(s),
        beta=complex(s),
    )


def uncertainty_map(
    overlap1_grid: Sequence[float],
    overlap2_grid: Sequence[float],
    noise: NoiseModel,
    n_trials: int,
    mol: Molecule,
    mode: str = "with_echo",
) -> np.ndarray:
    """
    Fidelity-uncertainty landscape: entry [i, j] is the Monte-Carlo std of
    the fidelity for a task with |<phi1|chi>| = overlap1_grid[i] and
    |<phi2|chi>| = overlap2_grid[j].  Small overlaps mean small
    post-selection probability and hence amplified readout noise.
    """
    out = np.empty((len(overlap1_grid), len(overlap2_grid)))
    for i, o1 in enumerate(overlap1_grid):
        for j, o2 in enumerate(overlap2_grid):
            stats = _monte_carlo_task(_overlap_task(o1, o2), noise, n_trials, mode, mol)
            out[i, j] = stats.std_fidelity
    return out


def echo_comparison(
    theta2_grid: Sequence[float],
    noise: NoiseModel,
    n_trials: int,
    mol: Molecule,
) -> Tuple[EchoComparisonRow, ...]:
    """
    Group-B sweep run twice, with and without the echo-based measurement,
    paired trial-for-trial through the shared master seed.
    """
    rows = []
    for theta2 in theta2_grid:
        task = task_for_group("B", theta2)
        with_echo = _monte_carlo_task(task, noise, n_trials, "with_echo", mol)
        without = _monte_carlo_task(task, noise, n_trials, "no_echo", mol)
        rows.append(
            EchoComparisonRow(
                theta2=float(theta2),
                mean_with_echo=with_echo.mean_fidelity,
                std_with_echo=with_echo.std_fidelity,
                mean_without_echo=without.mean_fidelity,
                std_without_echo=without.std_fidelity,
            )
        )
    return tuple(rows)
