"""
Command-line experiment runner.

Subcommands
-----------
run-group        sweep theta for experiment family A or B, write a CSV row
                 per grid point (and optionally an SVG of theory vs
                 simulation)
uncertainty-map  fidelity-uncertainty landscape over overlap magnitudes
grape            synthesize a shaped pulse for a target gate
pps-check        validate the canned pseudo-pure preparation sequence

Every command accepts ``--config <json>``, ``--out <dir>``, ``--seed``,
``--trials`` and ``--mode``; flags override config values.  Exit codes:
0 success, 1 configuration/validation error, 2 goal or threshold not met,
3 internal error.

Config JSON schema (all keys optional)::

    {
      "molecule": "path/to/molecule.json",   // default: packaged molecule
      "group": "A" | "B",
      "theta_grid": [0.0, ...],              // radians, default k*pi/12
      "noise": { ... },                      // see NoiseModel.from_dict
      "n_trials": 200,
      "mode": "ideal" | "with_echo" | "no_echo",
      "seed": 0,
      "out_dir": ".",
      "overlap1_grid": [0.25, ...],          // uncertainty-map axes
      "overlap2_grid": [0.25, ...]
    }

Molecule JSON schema::

    {"spins": [{"name", "shift_hz", "t1_s", "t2_s", "gyro_rel"}, ...],
     "couplings": [{"i", "j", "j_hz", "regime"}, ...]}

All CSV output uses 10-significant-digit numbers, comma delimiters and LF
line endings, and is byte-identical across reruns with the same seed.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from . import grape as grape_mod
from . import noise as noise_mod
from . import nmr, protocol
from .qcore import Operator, PostSelectionError


class ConfigError(ValueError):
    """Configuration document failed validation."""


EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_GOAL = 2
EXIT_INTERNAL = 3

MODES = ("ideal", "with_echo", "no_echo")
_DEFAULT_OVERLAP_GRID = tuple(round(0.40 + 0.07 * k, 2) for k in range(6))


@dataclass(frozen=True)
class ExperimentConfig:
    molecule: Optional[str] = None
    group: str = "A"
    theta_grid: Tuple[float, ...] = field(default_factory=protocol.default_theta_grid)
    noise: noise_mod.NoiseModel = field(default_factory=noise_mod.NoiseModel)
    n_trials: int = 200
    mode: str = "with_echo"
    out_dir: str = "."
    seed: int = 0
    overlap1_grid: Tuple[float, ...] = _DEFAULT_OVERLAP_GRID
    overlap2_grid: Tuple[float, ...] = _DEFAULT_OVERLAP_GRID

    def __post_init__(self):
        if self.group not in ("A", "B"):
            raise ConfigError(f"group must be 'A' or 'B', got {self.group!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.theta_grid:
            raise ConfigError("theta_grid must be non-empty")
        for t in self.theta_grid:
            if not 0 <= t <= np.pi:
                raise ConfigError(f"theta_grid value {t} outside [0, pi]")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        for name in ("overlap1_grid", "overlap2_grid"):
            grid = getattr(self, name)
            if not grid or any(not 0 < v <= 1 for v in grid):
                raise ConfigError(f"{name} values must lie in (0, 1]")


def load_config(path: Optional[str], overrides: dict) -> ExperimentConfig:
    doc = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"config {path} is not valid JSON (line {exc.lineno}, column {exc.colno}): "
                f"{exc.msg}"
            ) from exc
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
    known = {
        "molecule",
        "group",
        "theta_grid",
        "noise",
        "n_trials",
        "mode",
        "seed",
        "out_dir",
        "overlap1_grid",
        "overlap2_grid",
    }
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        noise = noise_mod.NoiseModel.from_dict(doc.get("noise", {}))
    except ValueError as exc:
        raise ConfigError(f"noise section: {exc}") from exc
    merged = {
        "molecule": doc.get("molecule"),
        "group": str(doc.get("group", "A")),
        "theta_grid": tuple(float(t) for t in doc.get("theta_grid", protocol.default_theta_grid())),
        "noise": noise,
        "n_trials": int(doc.get("n_trials", 200)),
        "mode": str(doc.get("mode", "with_echo")),
        "out_dir": str(doc.get("out_dir", ".")),
        "seed": int(doc.get("seed", noise.seed)),
        "overlap1_grid": tuple(float(v) for v in doc.get("overlap1_grid", _DEFAULT_OVERLAP_GRID)),
        "overlap2_grid": tuple(float(v) for v in doc.get("overlap2_grid", _DEFAULT_OVERLAP_GRID)),
    }
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    config = ExperimentConfig(**merged)
    # one master seed: the noise model follows the experiment seed
    return replace(config, noise=config.noise.with_seed(config.seed))


def _load_molecule(config_molecule: Optional[str], flag: Optional[str] = None) -> nmr.Molecule:
    path = flag or config_molecule
    if path is None:
        return nmr.default_molecule()
    return nmr.Molecule.from_json(path)


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.10g}"


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _plot_setup():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "superlab"
    import matplotlib.pyplot as plt

    return plt


# ---------------------------------------------------------------------------
# run-group


def cmd_run_group(config: ExperimentConfig, plot: bool) -> int:
    mol = _load_molecule(config.molecule)
    rows = []
    for theta in config.theta_grid:
        theory = protocol.theory_overlap(config.group, theta)
        if config.mode == "ideal":
            outcome = protocol.run_ideal(protocol.task_for_group(config.group, theta))
            target = protocol.analytic_superposition(
                protocol.task_for_group(config.group, theta)
            )
            fid = abs(np.vdot(target.amplitudes, outcome.output.amplitudes))
            overlap = abs(np.vdot(outcome.output.amplitudes,
                                  protocol.task_for_group(config.group, theta).phi1.amplitudes)) ** 2
            rows.append(
                (theta, theory, overlap, 0.0, fid, 0.0, outcome.success_probability, 0)
            )
        else:
            stats = noise_mod.monte_carlo(
                config.group, theta, config.noise, config.n_trials, config.mode, mol
            )
            rows.append(
                (
                    theta,
                    theory,
                    stats.mean_overlap,
                    stats.std_overlap,
                    stats.mean_fidelity,
                    stats.std_fidelity,
                    stats.mean_success_probability,
                    stats.failed_trials,
                )
            )
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"group_{config.group}_{config.mode}.csv"
    write_csv(
        csv_path,
        (
            "theta_rad",
            "overlap_theory",
            "overlap_sim_mean",
            "overlap_sim_std",
            "fidelity_mean",
            "fidelity_std",
            "success_prob_mean",
            "failed_trials",
        ),
        rows,
    )
    print(f"wrote {csv_path}")
    if plot:
        plt = _plot_setup()
        dense = np.linspace(0, max(config.theta_grid), 241)
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        ax.plot(
            dense / np.pi,
            [protocol.theory_overlap(config.group, t) for t in dense],
            "-",
            color="#1f77b4",
            label="theory",
        )
        thetas = np.array([r[0] for r in rows]) / np.pi
        ax.errorbar(
            thetas,
            [r[2] for r in rows],
            yerr=[r[3] for r in rows],
            fmt="o",
            ms=4,
            color="#d62728",
            label="simulation",
        )
        ax.set_xlabel(r"$\theta/\pi$")
        ax.set_ylabel("overlap with first input")
        ax.set_title(f"group {config.group}, mode {config.mode}")
        ax.legend(frameon=False)
        fig.tight_layout()
        svg_path = csv_path.with_suffix(".svg")
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
        plt.close(fig)
        print(f"wrote {svg_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# uncertainty-map


def cmd_uncertainty_map(config: ExperimentConfig, plot: bool) -> int:
    mol = _load_molecule(config.molecule)
    mode = config.mode if config.mode != "ideal" else "with_echo"
    grid = noise_mod.uncertainty_map(
        config.overlap1_grid,
        config.overlap2_grid,
        config.noise,
        config.n_trials,
        mol,
        mode=mode,
    )
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "uncertainty_map.csv"
    header = ["overlap1_by_overlap2"] + [_fmt(v) for v in config.overlap2_grid]
    rows = [
        [o1] + list(grid[i]) for i, o1 in enumerate(config.overlap1_grid)
    ]
    write_csv(csv_path, header, rows)
    print(f"wrote {csv_path}")
    if plot:
        plt = _plot_setup()
        fig, ax = plt.subplots(figsize=(4.6, 3.8))
        im = ax.imshow(
            grid,
            origin="lower",
            aspect="auto",
            extent=(
                config.overlap2_grid[0],
                config.overlap2_grid[-1],
                config.overlap1_grid[0],
                config.overlap1_grid[-1],
            ),
            cmap="viridis",
        )
        fig.colorbar(im, ax=ax, label="fidelity std")
        ax.set_xlabel("overlap of second input with reference")
        ax.set_ylabel("overlap of first input with reference")
        fig.tight_layout()
        svg_path = csv_path.with_suffix(".svg")
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
        plt.close(fig)
        print(f"wrote {svg_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# grape


def _parse_target(spec: str, mol: nmr.Molecule) -> Tuple[str, Operator]:
    if spec == "cswap":
        if mol.n != 3:
            raise ConfigError("cswap target needs the three-spin molecule")
        return "cswap", protocol.controlled_swap()
    if spec.startswith("rotation:"):
        try:
            qubit_s, axis, angle_s = spec[len("rotation:"):].split(",")
            qubit, angle = int(qubit_s), float(angle_s)
        except ValueError as exc:
            raise ConfigError(
                "rotation target must look like rotation:<qubit>,<axis>,<angle_rad>"
            ) from exc
        if not 1 <= qubit <= mol.n:
            raise ConfigError(f"rotation qubit {qubit} out of range")
        from .qcore import embed, su2_rotation

        mat = embed(su2_rotation(axis, angle), mol.n, qubit)
        return f"rotation_q{qubit}{axis}", Operator(mat, unitary=True)
    path = Path(spec)
    if not path.exists():
        raise ConfigError(
            f"target {spec!r} is neither 'cswap', 'rotation:...', nor an existing file"
        )
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        mat = np.array(doc["matrix_real"], dtype=float) + 1j * np.array(
            doc["matrix_imag"], dtype=float
        )
        return path.stem, Operator(mat, unitary=True)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed target matrix file {spec}: {exc}") from exc


def cmd_grape(
    config: ExperimentConfig,
    target_spec: str,
    duration_ms: float,
    segments: int,
    goal: float,
) -> int:
    mol = _load_molecule(config.molecule)
    name, target = _parse_target(target_spec, mol)
    opt_config = grape_mod.OptimizerConfig(
        target=target,
        duration_s=duration_ms * 1e-3,
        segment_count=segments,
        fidelity_goal=goal,
        seed=config.seed,
    )
    result = grape_mod.optimize(opt_config, mol)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pulse_path = out_dir / f"pulse_{name}.json"
    result.pulse.save(pulse_path)
    log_path = out_dir / f"iterations_{name}.csv"
    write_csv(
        log_path,
        ("iteration", "fidelity", "gradient_norm"),
        [(r.iteration, r.fidelity, r.gradient_norm) for r in result.iterations],
    )
    print(f"wrote {pulse_path}")
    print(f"wrote {log_path}")
    print(f"fidelity {result.fidelity:.6f} after {result.iterations[-1].iteration} iterations")
    if not result.goal_met:
        print(f"goal {goal} not met", file=sys.stderr)
        return EXIT_GOAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# pps-check


def cmd_pps_check(config: ExperimentConfig, molecule_flag: Optional[str]) -> int:
    mol = _load_molecule(config.molecule, molecule_flag)
    program = nmr.canned_pps_program(mol)
    try:
        state = nmr.pps_prepare(mol, program, fidelity_floor=0.99)
    except nmr.PpsFidelityError as exc:
        print(f"preparation fidelity {exc.fidelity:.6f} below threshold 0.99", file=sys.stderr)
        return EXIT_GOAL
    achieved = nmr.pps_fidelity(state)
    print(f"preparation fidelity {achieved:.6f}")
    print(f"sequence duration {program.duration * 1e3:.4f} ms")
    print(f"crusher count {program.crusher_count()}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="superlab",
        description="Simulation laboratory for the probabilistic superposition protocol "
        "on a three-spin NMR register.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory (default: config out_dir or '.')")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--trials", type=int, help="Monte-Carlo trials per point")
        p.add_argument("--mode", choices=MODES, help="measurement emulation mode")

    p = sub.add_parser("run-group", help="sweep theta for one experiment family")
    common(p)
    p.add_argument("--group", choices=("A", "B"), help="experiment family")
    p.add_argument("--plot", action="store_true", help="also write an SVG plot")

    p = sub.add_parser("uncertainty-map", help="fidelity-uncertainty landscape")
    common(p)
    p.add_argument("--plot", action="store_true", help="also write an SVG heatmap")

    p = sub.add_parser("grape", help="synthesize a shaped pulse")
    common(p)
    p.add_argument(
        "--target",
        default="cswap",
        help="'cswap', 'rotation:<qubit>,<axis>,<angle_rad>', or a JSON matrix file",
    )
    p.add_argument("--duration-ms", type=float, default=28.0)
    p.add_argument("--segments", type=int, default=700)
    p.add_argument("--goal", type=float, default=0.99)

    p = sub.add_parser("pps-check", help="validate the canned preparation sequence")
    common(p)
    p.add_argument("--molecule", help="molecule JSON (overrides config)")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {
            "out_dir": args.out,
            "seed": args.seed,
            "n_trials": args.trials,
            "mode": args.mode,
        }
        if getattr(args, "group", None) is not None:
            overrides["group"] = args.group
        config = load_config(args.config, overrides)
        if args.command == "run-group":
            return cmd_run_group(config, args.plot)
        if args.command == "uncertainty-map":
            return cmd_uncertainty_map(config, args.plot)
        if args.command == "grape":
            return cmd_grape(config, args.target, args.duration_ms, args.segments, args.goal)
        if args.command == "pps-check":
            return cmd_pps_check(config, args.molecule)
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, nmr.MoleculeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (noise_mod.AllTrialsFailedError, PostSelectionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
