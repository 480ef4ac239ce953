import argparse
import json
import logging
import sys
import typing as tp
from pathlib import Path

from previewmpc import __version__
from previewmpc.config import SystemConfig, load_mapping, load_system
from previewmpc.console import configure_logging
from previewmpc.controllers import ControllerKind
from previewmpc.errors import (
    CertificationError,
    ConfigError,
    InfeasibleError,
    MaxIterError,
    PreviewMpcError,
)
from previewmpc.harness import Scenario, compare_controllers, simulate
from previewmpc.model import PreviewWindow
from previewmpc.ocp import OcpSpec, solve_ocp
from previewmpc.solvers import Status
from previewmpc.synthesis import TerminalIngredients, synthesize
from previewmpc.tree_object import as_yaml_str

logger = logging.getLogger(__name__)

INGREDIENTS_FILE = "ingredients.json"
CERTIFICATE_FILE = "certificate.yaml"
TERMINAL_SET_FILE = "terminal_set.csv"
SOLUTION_FILE = "solution.json"
TRACE_FILE = "trace.csv"
SUMMARY_FILE = "summary.json"
TABLE_FILE = "table.csv"
TABLE_TEXT_FILE = "table.txt"


# --------------------------------------------------
# helpers
# --------------------------------------------------


def _write_json(path: Path, data: tp.Any) -> Path:
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
        f.write("\n")
    return path


def _out_dir(path: tp.Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory '{path}': {e}")
    return path


def parse_seeds(value: str) -> tp.List[int]:
    """Parses `"0:50"` (half open range) or `"1,2,3"`."""
    try:
        if ":" in value:
            start, stop = value.split(":", 1)
            return list(range(int(start), int(stop)))
        return [int(s) for s in value.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"invalid seeds '{value}', expected 'start:stop' or 'a,b,c'")


def _load_inputs(args: argparse.Namespace) -> tp.Tuple[SystemConfig, TerminalIngredients]:
    system = load_system(args.system)

    if getattr(args, "lam", None) is not None:
        system = system.replace(lam=float(args.lam))

    if args.ingredients is not None:
        ingredients = TerminalIngredients.from_config(
            load_mapping(args.ingredients, "ingredients")
        )
    else:
        logger.info("no ingredients given, synthesizing them")
        ingredients = synthesize(system)

    return system, ingredients


def _raise_for_status(status: Status, what: str) -> None:
    if status == Status.INFEASIBLE:
        raise InfeasibleError(f"{what} is infeasible")
    if status == Status.MAX_ITER:
        raise MaxIterError(f"{what} hit the solver iteration limit")


# --------------------------------------------------
# commands
# --------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    system = load_system(args.system)

    if args.lam is not None:
        system = system.replace(lam=float(args.lam))

    ingredients = synthesize(system)
    certificate = ingredients.certificate
    assert certificate is not None

    out = _out_dir(args.out)
    _write_json(out / INGREDIENTS_FILE, ingredients.to_config())

    report = as_yaml_str(certificate.to_dict())
    (out / CERTIFICATE_FILE).write_text(report)

    if ingredients.Xf.dim == 2 and not ingredients.Xf.empty:
        ingredients.Xf.write_boundary_csv(out / TERMINAL_SET_FILE)

    print(certificate.tabulate(title="terminal certificate"))

    if not certificate.certified:
        raise CertificationError(f"terminal ingredients are not certified:\n{report}")

    return 0


def cmd_solve(args: argparse.Namespace) -> int:
    system, ingredients = _load_inputs(args)
    point = load_mapping(args.point, "point")

    if "x0" not in point:
        raise ConfigError("point file is missing 'x0'")

    spec = OcpSpec.from_system(system, ingredients, N=_horizon(point))
    window = (
        PreviewWindow(point["window"])
        if point.get("window") is not None
        else PreviewWindow.zeros(spec.N, system.model.q)
    )

    solution = solve_ocp(spec, point["x0"], window)

    out = _out_dir(args.out)
    _write_json(
        out / SOLUTION_FILE,
        {
            "u_seq": solution.u_seq.tolist(),
            "x_seq": solution.x_seq.tolist(),
            "value": solution.value,
            "status": solution.status.value,
            "kkt_residual": solution.kkt_residual,
            "iterations": solution.iterations,
        },
    )

    print(json.dumps({"status": solution.status.value, "value": solution.value}))
    _raise_for_status(solution.status, "the OCP")

    return 0


def _horizon(point: tp.Mapping[str, tp.Any]) -> int:
    if "N" in point:
        return int(point["N"])
    if point.get("window") is not None:
        return len(point["window"])
    raise ConfigError("point file needs a 'window' or a horizon 'N'")


def cmd_simulate(args: argparse.Namespace) -> int:
    system, ingredients = _load_inputs(args)
    scenario = Scenario.from_config(load_mapping(args.scenario, "scenario"))

    if args.controller is not None:
        scenario = scenario.replace(controller=ControllerKind.parse(args.controller))

    spec = OcpSpec.from_system(system, ingredients, N=scenario.N)
    trace = simulate(scenario, spec)

    out = _out_dir(args.out)
    trace.to_csv(out / TRACE_FILE)
    _write_json(out / SUMMARY_FILE, trace.summary())

    print(trace.render_summary())

    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    system, ingredients = _load_inputs(args)
    scenario = Scenario.from_config(load_mapping(args.scenario, "scenario"))

    if args.seeds is not None:
        seeds = parse_seeds(args.seeds)
    elif scenario.seeds is not None:
        seeds = scenario.seeds
    else:
        seeds = [int(scenario.disturbance.get("seed", 0))]

    spec = OcpSpec.from_system(system, ingredients, N=scenario.N)
    table = compare_controllers(scenario, spec, seeds, jobs=args.jobs)

    out = _out_dir(args.out)
    table.to_csv(out / TABLE_FILE)
    (out / TABLE_TEXT_FILE).write_text(table.render(color=False))

    traces_dir = _out_dir(out / "traces")
    for seed, per_kind in table.traces.items():
        for kind, trace in per_kind.items():
            trace.to_csv(traces_dir / f"seed_{seed}_{kind}.csv")

    print(table.render())

    return 0


# --------------------------------------------------
# parser
# --------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="previewmpc",
        description="Model predictive control with disturbance preview.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="-v for INFO, -vv for DEBUG (overrides PREVIEW_MPC_LOG)",
    )

    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="compute and certify terminal ingredients")
    synth.add_argument("--system", required=True)
    synth.add_argument("--lambda", dest="lam", type=float, default=None)
    synth.add_argument("--out", default=".")
    synth.set_defaults(func=cmd_synth)

    solve = commands.add_parser("solve", help="solve a single OCP instance")
    solve.add_argument("--system", required=True)
    solve.add_argument("--ingredients", default=None)
    solve.add_argument("--point", required=True)
    solve.add_argument("--lambda", dest="lam", type=float, default=None)
    solve.add_argument("--out", default=".")
    solve.set_defaults(func=cmd_solve)

    sim = commands.add_parser("simulate", help="run a closed loop scenario")
    sim.add_argument("--system", required=True)
    sim.add_argument("--ingredients", default=None)
    sim.add_argument("--scenario", required=True)
    sim.add_argument("--controller", default=None, choices=[k.value for k in ControllerKind])
    sim.add_argument("--lambda", dest="lam", type=float, default=None)
    sim.add_argument("--out", default=".")
    sim.set_defaults(func=cmd_simulate)

    compare = commands.add_parser("compare", help="paired controller comparison over seeds")
    compare.add_argument("--system", required=True)
    compare.add_argument("--ingredients", default=None)
    compare.add_argument("--scenario", required=True)
    compare.add_argument("--seeds", default=None, help="'start:stop' or 'a,b,c'")
    compare.add_argument("--jobs", type=int, default=1)
    compare.add_argument("--lambda", dest="lam", type=float, default=None)
    compare.add_argument("--out", default=".")
    compare.set_defaults(func=cmd_compare)

    return parser


def main(argv: tp.Optional[tp.Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    level = {0: None, 1: "INFO"}.get(args.verbose, "DEBUG")

    try:
        configure_logging(level)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return ConfigError.exit_code

    try:
        return args.func(args)
    except PreviewMpcError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
