"""
Command-line front door.

    main.py <subcommand> [--config FILE] [--out FILE] [overrides...]

Exit codes: 0 success, 2 physics failure or non-converged optimization,
1 usage, configuration or I/O error.
"""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from config import config as runtime
from config import configure_logging
from drive_through_system import DriveThroughSystem
from errors import ConfigError, ConfigValidationError, PhysicsError
from models import OptimizationOptions, PulseShape, SeparationMode
from pydantic import ValidationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PHYSICS = 2

# flag -> PhysicalConfig field
CONFIG_OVERRIDES = {
    "v": "v",
    "d": "d",
    "w": "w",
    "omega_x": "omega_x",
    "omega_y": "omega_y",
    "omega_z": "omega_z",
    "k_eff": "k_eff",
    "ion_mass": "ion_mass",
    "ion_charge": "ion_charge",
}


class UsageError(Exception):
    """Command line could not be parsed"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {e}")


def _common_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="Physical configuration JSON")
    common.add_argument("--out", help="Primary output path (.csv or .json)")
    common.add_argument("--log-level", help="Logging level (default from LOG_LEVEL)")
    for flag in CONFIG_OVERRIDES:
        common.add_argument(
            f"--{flag.replace('_', '-')}",
            dest=flag,
            type=float,
            help=f"Override config field {flag} (SI units)",
        )
    return common


def _pulse_arguments(parser: argparse.ArgumentParser, required: bool) -> None:
    parser.add_argument("--pulse", required=required, help="Pulse JSON")
    parser.add_argument("--mu", type=float, help="Override pulse detuning (rad/s)")
    parser.add_argument(
        "--separation-mode",
        choices=[mode.value for mode in SeparationMode],
        default=SeparationMode.EQUILIBRIUM.value,
    )


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = _Parser(
        prog="drive-through", description="Drive-through gate design and verification"
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    modes = sub.add_parser("modes", parents=[common], help="Mode frequencies over the window")
    modes.add_argument("--samples", type=int, default=201)
    modes.add_argument(
        "--separation-mode",
        choices=[mode.value for mode in SeparationMode],
        default=SeparationMode.EQUILIBRIUM.value,
    )

    transport = sub.add_parser(
        "transport-sweep", parents=[common], help="In-plane oscillation sweep"
    )
    transport.add_argument("--f1-ratios", type=_float_list, required=True)
    transport.add_argument("--f2-ratios", type=_float_list, required=True)
    transport.add_argument("--tol", type=float)
    transport.add_argument("--n-jobs", type=int, default=runtime.N_JOBS)

    equilibrium = sub.add_parser(
        "equilibrium-sweep", parents=[common], help="Equilibrium displacement sweep"
    )
    equilibrium.add_argument("--f2-ratios", type=_float_list, required=True)
    equilibrium.add_argument("--samples", type=int, default=201)
    equilibrium.add_argument("--n-jobs", type=int, default=runtime.N_JOBS)

    gate = sub.add_parser("gate-eval", parents=[common], help="Evaluate a pulse")
    _pulse_arguments(gate, required=True)
    gate.add_argument("--trajectory-out", help="CSV of the mode trajectories")
    gate.add_argument("--error-budget", action="store_true")
    gate.add_argument("--tol", type=float)

    optimize = sub.add_parser("optimize", parents=[common], help="Design a pulse")
    _pulse_arguments(optimize, required=False)
    optimize.add_argument("--options", help="Optimization options JSON")
    optimize.add_argument("--seed", type=int)
    optimize.add_argument("--multistart", type=int)
    optimize.add_argument("--n-jobs", type=int)

    verify = sub.add_parser("verify", parents=[common], help="Fock-space cross-check")
    _pulse_arguments(verify, required=True)
    verify.add_argument("--n-max", type=int)
    verify.add_argument("--tol", type=float)
    verify.add_argument("--n-jobs", type=int, default=runtime.N_JOBS)

    sub.add_parser("describe", parents=[common], help="Derived scales of a config")
    return parser


def _config_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        field: getattr(args, flag)
        for flag, field in CONFIG_OVERRIDES.items()
        if getattr(args, flag, None) is not None
    }


def _with_mu(pulse: Optional[PulseShape], mu: Optional[float]) -> Optional[PulseShape]:
    if pulse is None or mu is None:
        return pulse
    try:
        return PulseShape.model_validate({**pulse.model_dump(), "mu": mu})
    except ValidationError as e:
        raise ConfigValidationError(f"Invalid --mu: {e}") from e


def _merge_options(
    options: Optional[OptimizationOptions], args: argparse.Namespace
) -> OptimizationOptions:
    updates = {
        key: getattr(args, key)
        for key in ("seed", "multistart", "n_jobs")
        if getattr(args, key, None) is not None
    }
    base = options or OptimizationOptions()
    try:
        return OptimizationOptions.model_validate({**base.model_dump(), **updates})
    except ValidationError as e:
        raise ConfigValidationError(f"Invalid optimization options: {e}") from e


def _pipeline_arguments(
    system: DriveThroughSystem, args: argparse.Namespace
) -> Dict[str, Any]:
    command = args.command
    if command == "modes":
        return {"samples": args.samples, "separation_mode": args.separation_mode}
    if command == "transport-sweep":
        return {
            "f1_ratios": args.f1_ratios,
            "f2_ratios": args.f2_ratios,
            "tol": args.tol,
            "n_jobs": args.n_jobs,
        }
    if command == "equilibrium-sweep":
        return {"f2_ratios": args.f2_ratios, "samples": args.samples, "n_jobs": args.n_jobs}
    if command == "describe":
        return {}

    if args.mu is not None and args.pulse is None:
        raise ConfigValidationError("--mu overrides the detuning of --pulse; give both")
    pulse = _with_mu(system.load_pulse(args.pulse), args.mu)
    if command == "gate-eval":
        return {
            "pulse": pulse,
            "separation_mode": args.separation_mode,
            "include_error_budget": args.error_budget,
            "tol": args.tol,
        }
    if command == "optimize":
        return {
            "options": _merge_options(system.load_options(args.options), args),
            "pulse": pulse,
            "separation_mode": args.separation_mode,
        }
    return {
        "pulse": pulse,
        "n_max": args.n_max,
        "tol": args.tol,
        "separation_mode": args.separation_mode,
        "n_jobs": args.n_jobs,
    }


def run(argv: Optional[List[str]] = None) -> int:
    """
    Parse argv, run one pipeline, write its outputs and print a summary line.

    Returns:
        Process exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return EXIT_OK if not e.code else EXIT_USAGE

    configure_logging(args.log_level)
    system = DriveThroughSystem(runtime)
    overrides = _config_overrides(args)
    try:
        physical = system.load_physical_config(args.config, overrides)
        kwargs = _pipeline_arguments(system, args)
        output = system.run(args.command, physical, **kwargs)
        if getattr(args, "mu", None) is not None:
            overrides["mu"] = args.mu
        _, written = system.write_outputs(
            args.command,
            output,
            physical,
            overrides,
            out=args.out,
            table_out=getattr(args, "trajectory_out", None),
        )
    except PhysicsError as e:
        logger.error("Physics failure: %s", e)
        print(f"{args.command}: failed: {e}", file=sys.stderr)
        return EXIT_PHYSICS
    except (ConfigError, OSError) as e:
        logger.error("Configuration or I/O error: %s", e)
        print(f"{args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE

    print(f"{output.summary} -> {written[0]}")
    return EXIT_OK if output.converged else EXIT_PHYSICS
