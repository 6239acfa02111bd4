"""Command-line entry point: solve, generate, train, evaluate, analyze.

Exit codes: 0 ok, 1 usage or input error, 2 numerical failure, 3 infeasible
input (islanded topology).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import analysis
from .case_io import CaseFormatError, DatasetError, load_case, read_dataset, write_dataset
from .grid import GridError, apply_line_cut
from .scenarios import DatasetGenerationError, SamplingConfig, run_generation
from .solver import IslandedGrid, PowerFlowError, SolverOptions, newton_raphson_solve
from .surrogate import VARIANTS, DimensionError, TrainConfig, TrainingError, load_checkpoint, save_checkpoint, train

log = logging.getLogger("nminus1")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INFEASIBLE = 0, 1, 2, 3
SEED_ENV = "NMINUS1_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _probability(text: str) -> float:
    p = float(text)
    if not 0.0 <= p <= 1.0:
        raise argparse.ArgumentTypeError(f"probability must lie in [0, 1], got {text}")
    return p


def _positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return n


def _case(arg):
    """Load a case file, or a bundled case by name (``case14``, ``case118``)."""
    name = str(arg)
    try:
        return load_case(name)
    except FileNotFoundError:
        raise UsageError(f"case file not found: {name}") from None
    except CaseFormatError as exc:
        raise UsageError(f"{name}: {exc}") from None


def _require(paths: dict[str, Path | None]) -> None:
    missing = [f"{label} ({p})" for label, p in paths.items() if p is None or not Path(p).exists()]
    if missing:
        raise UsageError("missing inputs: " + ", ".join(missing))


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return 0


def cmd_solve(args) -> int:
    case = _case(args.case)
    topo = case.full_topology()
    try:
        for k in args.cut:
            topo = apply_line_cut(topo, k)
    except GridError as exc:
        raise UsageError(str(exc)) from None
    opts = SolverOptions(tolerance=args.tol, max_iterations=args.max_iter)
    try:
        sol = newton_raphson_solve(case, topo, opts)
    except IslandedGrid as exc:
        print(f"infeasible: {exc} (cut {args.cut})", file=sys.stderr)
        return EXIT_INFEASIBLE
    except PowerFlowError as exc:
        print(f"solve failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    print(f"{case.name}: converged in {sol.iterations} iterations, max mismatch {sol.max_mismatch:.3e} pu")
    print(f"  vm range [{sol.state.vm.min():.4f}, {sol.state.vm.max():.4f}] pu, slack P {sol.p[case.slack]:.4f} pu")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "case": case.name,
            "in_service": list(topo.in_service),
            "iterations": sol.iterations,
            "max_mismatch": sol.max_mismatch,
            "bus_vm": sol.state.vm.tolist(),
            "bus_va": sol.state.va.tolist(),
            "bus_p": sol.p.tolist(),
            "bus_q": sol.q.tolist(),
            "inj_current": sol.inj_current.tolist(),
            "br_i_or": sol.br_i_or.tolist(),
            "br_i_ex": sol.br_i_ex.tolist(),
        }
        out.write_text(json.dumps(payload, indent=1), encoding="utf-8")
    return EXIT_OK


def cmd_generate(args) -> int:
    case = _case(args.case)
    cfg = SamplingConfig(
        n_instances=args.n,
        cut_probability=args.p,
        load_sigma=args.sigma,
        seed=_seed(args),
        dirichlet_alpha=args.alpha,
        dispatch=args.dispatch,
    )
    try:
        records, stats = run_generation(case, cfg, jobs=args.jobs)
    except DatasetGenerationError as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(records, out)
    n_cut = sum(r.cut_branch is not None for r in records)
    print(
        f"wrote {len(records)} records ({n_cut} N-1) to {out}; "
        f"discarded {stats.discarded} of {stats.attempts} samples ({stats.discard_rate:.2%})"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    _require({"--data": args.data})
    case = _case(args.case)
    records = read_dataset(args.data)
    cfg = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        scheduler_step=args.scheduler_step,
        scheduler_gamma=args.gamma,
        seed=_seed(args),
        variant=args.variant,
    )
    try:
        result = train(records, case, cfg)
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, result.params, result.codec)
    print(f"trained {args.variant} on {len(records)} records; loss {result.losses[0]:.4g} -> {result.losses[-1]:.4g}")
    print(f"checkpoint: {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _require({"--checkpoint": args.checkpoint, "--data": args.data})
    params, codec = load_checkpoint(args.checkpoint)
    records = read_dataset(args.data)
    mse = analysis.evaluate_mse(params, codec, records)
    row = (str(args.checkpoint), str(args.data), repr(mse))
    w = csv.writer(sys.stdout)
    w.writerow(("checkpoint", "dataset", "mse"))
    w.writerow(row)
    if args.csv:
        path = Path(args.csv)
        new = not path.exists()
        with open(path, "a", newline="", encoding="utf-8") as fh:
            cw = csv.writer(fh)
            if new:
                cw.writerow(("checkpoint", "dataset", "mse"))
            cw.writerow(row)
    return EXIT_OK


def _named(spec: str) -> tuple[str, Path]:
    name, sep, path = spec.partition("=")
    if not sep or not name or not path:
        raise UsageError(f"expected NAME=PATH, got {spec!r}")
    return name, Path(path)


def cmd_analyze(args) -> int:
    models = [_named(s) for s in args.model]
    mixes = []
    for name, p, path in args.mix:
        try:
            mixes.append((name, _probability(p), Path(path)))
        except (ValueError, argparse.ArgumentTypeError):
            raise UsageError(f"--mix probability must be a number in [0, 1], got {p!r}") from None
    needed = {"--n-data": args.n_data, "--n1-data": args.n1_data}
    needed.update({f"--model {n}": p for n, p in models})
    needed.update({f"--mix {n} {p}": path for n, p, path in mixes})
    if not models:
        needed["--model"] = None
    _require(needed)

    case = _case(args.case)
    n_records = read_dataset(args.n_data)
    n1_records = read_dataset(args.n1_data)
    report = analysis.robustness_report(
        case,
        {name: load_checkpoint(path) for name, path in models},
        n_records,
        n1_records,
        [(name, p, load_checkpoint(path)) for name, p, path in mixes],
        dataset=args.dataset or case.name,
    )
    paths = analysis.write_report(report, args.out)
    for r in report.reports:
        print(f"{r.model}: N mse {r.n_mse:.4g}, N-1 mse {r.n1_mse:.4g}, gap ratio {r.gap_ratio:.2f}")
    for name, p, mse in report.mix_rows:
        print(f"{name} mixed p={p:g}: N-1 mse {mse:.4g}")
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nminus1", description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=Path, help="JSON file whose keys mirror the subcommand flags")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="run one Newton-Raphson power flow")
    p.add_argument("--case", required=True, help="MATPOWER .m file, or case14 / case118")
    p.add_argument("--cut", type=int, action="append", default=[], help="branch id to take out of service")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=_positive_int, default=20)
    p.add_argument("--out", help="write the solved state and currents as JSON")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("generate", help="sample and label a scenario dataset")
    p.add_argument("--case", required=True)
    p.add_argument("--n", type=_positive_int, default=10000)
    p.add_argument("--p", type=_probability, default=0.0, help="probability of cutting one line")
    p.add_argument("--sigma", type=float, default=0.01, help="std of load and voltage perturbations, pu")
    p.add_argument("--alpha", type=float, default=1.0, help="Dirichlet concentration")
    p.add_argument("--dispatch", choices=("dirichlet", "nominal"), default="dirichlet")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the residual surrogate")
    p.add_argument("--case", required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--variant", choices=sorted(VARIANTS), default="small")
    p.add_argument("--epochs", type=_positive_int, default=25)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-size", type=_positive_int, default=128)
    p.add_argument("--scheduler-step", type=_positive_int, default=5)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="MSE of a checkpoint on a dataset")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--csv", help="append the result row to this CSV file")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="write table1/2/3 CSVs")
    p.add_argument("--case", required=True)
    p.add_argument("--n-data", type=Path)
    p.add_argument("--n1-data", type=Path)
    p.add_argument("--model", action="append", default=[], metavar="NAME=PATH")
    p.add_argument("--mix", nargs=3, action="append", default=[], metavar=("NAME", "P", "PATH"))
    p.add_argument("--dataset", help="dataset label for table1 (defaults to the case name)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        conf = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        parser.error(f"cannot read config {args.config}: {exc}")
    if not isinstance(conf, dict):
        parser.error("config file must hold a JSON object")
    # flags on the command line win: only fill values the user did not pass
    explicit = {a.split("=")[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    for key, value in conf.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            parser.error(f"unknown config key {key!r} for command {args.command}")
        if dest not in explicit:
            setattr(args, dest, value)
    return args


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = _apply_config(parser, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, DimensionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
