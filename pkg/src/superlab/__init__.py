"""
Simulation laboratory for a probabilistic superposition protocol on a
three-spin NMR register.

The package layers four views of the same experiment:

* ``qcore`` -- states, operators and the linear-algebra primitives
* ``protocol`` -- the ideal ancilla/controlled-swap/post-selection circuit
  and its closed-form predictions
* ``nmr`` -- molecule description, pulse programs, pseudo-pure preparation
  and gradient-echo measurement emulation
* ``grape`` -- shaped-pulse synthesis for the entangling gate
* ``noise`` -- relaxation, preparation and readout imperfections, plus the
  Monte-Carlo drivers that tie everything together
"""

from .qcore import (
    DensityOperator,
    Operator,
    PostSelectionError,
    StateVector,
    bloch_ket,
    embed,
    evolve,
    fidelity,
    ket,
    partial_trace,
    project_subsystem,
    tensor,
)
from .protocol import (
    OrthogonalReferenceError,
    ProtocolOutcome,
    SuperpositionTask,
    analytic_superposition,
    controlled_swap,
    default_theta_grid,
    group_a_task,
    group_b_task,
    run_ideal,
    task_for_group,
    theory_overlap,
)
from .nmr import (
    Coupling,
    Molecule,
    MoleculeError,
    PpsFidelityError,
    PulseProgram,
    Spin,
    canned_pps_program,
    default_molecule,
    gradient_echo_measurement,
    pps_fidelity,
    pps_prepare,
)
from .grape import (
    ControlPulse,
    OptimizerConfig,
    OptimizeResult,
    default_cswap_pulse,
    gate_fidelity,
    grape_gradient,
    optimize,
    propagate,
    rf_robustness_scan,
)
from .noise import (
    AllTrialsFailedError,
    NoiseModel,
    TrialResult,
    TrialStatistics,
    echo_comparison,
    monte_carlo,
    noisy_tomography,
    run_noisy_trial,
    uncertainty_map,
)

__version__ = "0.1.0"

__all__ = [
    "AllTrialsFailedError",
    "ControlPulse",
    "Coupling",
    "DensityOperator",
    "Molecule",
    "MoleculeError",
    "NoiseModel",
    "Operator",
    "OptimizeResult",
    "OptimizerConfig",
    "OrthogonalReferenceError",
    "PostSelectionError",
    "PpsFidelityError",
    "ProtocolOutcome",
    "PulseProgram",
    "Spin",
    "StateVector",
    "SuperpositionTask",
    "TrialResult",
    "TrialStatistics",
    "analytic_superposition",
    "bloch_ket",
    "canned_pps_program",
    "controlled_swap",
    "default_cswap_pulse",
    "default_molecule",
    "default_theta_grid",
    "echo_comparison",
    "embed",
    "evolve",
    "fidelity",
    "gate_fidelity",
    "gradient_echo_measurement",
    "grape_gradient",
    "group_a_task",
    "group_b_task",
    "ket",
    "monte_carlo",
    "noisy_tomography",
    "optimize",
    "partial_trace",
    "pps_fidelity",
    "pps_prepare",
    "project_subsystem",
    "propagate",
    "rf_robustness_scan",
    "run_ideal",
    "run_noisy_trial",
    "task_for_group",
    "tensor",
    "theory_overlap",
    "uncertainty_map",
]
