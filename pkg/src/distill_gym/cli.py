"""Command-line entry point: ``distill-gym {train,evaluate,simulate,export-bfd}``.

Problem arguments accept a JSON file path or a bundled name (``btx``,
``hydrocarbon``). Exit codes: 0 success, 1 invalid input, 2 output not
writable, 3 column simulation did not converge.

``DISTILL_GYM_THREADS`` caps the BLAS thread pools used by numpy.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .agent import LOG_COLUMNS, Trainer, evaluate_episode
from .column import ColumnSpec, solve_column
from .config import ConfigError, problem_from_dict, resolve_problem_path
from .economics import SizingError, UtilityError, column_tac
from .env import DistillationEnv
from .flowsheet import PRODUCT, FlowsheetError, export_flowsheet, parse_flowsheet
from .thermo import ATM, ThermoError

log = logging.getLogger("distill_gym")

EXIT_INVALID = 1
EXIT_UNWRITABLE = 2
EXIT_UNCONVERGED = 3

CHECKPOINT = "checkpoint.npz"
LOG_FILE = "train_log.csv"


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _parse_override(text: str):
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise CliError(f"--set expects key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _load(problem: str, overrides=()):
    """Problem file data, ProblemSpec and AgentConfig with ``--set`` overrides applied."""
    try:
        path = resolve_problem_path(problem)
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise CliError(str(exc)) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{problem}: not valid JSON ({exc})") from None
    if overrides:
        data = dict(data)
        data["agent"] = {**data.get("agent", {}), **dict(_parse_override(o) for o in overrides)}
    try:
        spec, cfg = problem_from_dict(data, name=path.stem)
    except ConfigError as exc:
        raise CliError(str(exc)) from None
    return data, spec, cfg


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"output directory {path} is not writable: {exc}", EXIT_UNWRITABLE) from None
    return path


def _format_row(row: dict) -> dict:
    out = {}
    for key in LOG_COLUMNS:
        value = row[key]
        if key == "wall_ms":
            out[key] = f"{value:.3f}"
        elif isinstance(value, float):
            out[key] = repr(value)
        else:
            out[key] = value
    return out


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_UNWRITABLE) from None


def _train_one(problem: str, overrides, seed: int, out_dir: str, episodes: int, checkpoint_every: int, resume: bool, log_every: int) -> dict:
    data, spec, cfg = _load(problem, overrides)
    out = _ensure_dir(Path(out_dir))
    env = DistillationEnv(spec)
    ckpt = out / CHECKPOINT
    log_path = out / LOG_FILE
    if resume and ckpt.exists():
        try:
            trainer = Trainer.load(ckpt, env)
        except (ValueError, KeyError) as exc:
            raise CliError(f"cannot resume from {ckpt}: {exc}") from None
        if trainer.seed != seed:
            raise CliError(f"checkpoint was trained with seed {trainer.seed}, not {seed}")
        kept = []
        if log_path.exists():
            with open(log_path, newline="") as fh:
                kept = [r for r in csv.DictReader(fh) if int(r["episode"]) < trainer.summary.episodes]
        mode = "w"
    else:
        trainer = Trainer(env, cfg, seed)
        kept = []
        mode = "w"

    meta = {
        "version": version_string(),
        "seed": seed,
        "episodes": episodes,
        "checkpoint_every": checkpoint_every,
        "problem_source": str(problem),
        "problem": data,
        "agent": trainer.config.to_dict(),
        "command": "train",
    }
    _write_text(out / "run_meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")

    try:
        fh = open(log_path, mode, newline="")
    except OSError as exc:
        raise CliError(f"cannot write {log_path}: {exc}", EXIT_UNWRITABLE) from None
    with fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\r\n")
        writer.writeheader()
        writer.writerows(kept)

        def sink(row):
            writer.writerow(_format_row(row))
            ep = row["episode"] + 1
            if log_every and ep % log_every == 0:
                log.info("seed %d episode %d return %.4f best %.4f", seed, ep, row["return"], row["best_return_so_far"])
            if checkpoint_every and ep % checkpoint_every == 0:
                fh.flush()
                trainer.save(ckpt)

        remaining = max(0, episodes - trainer.summary.episodes)
        summary = trainer.run(remaining, [sink])
    trainer.save(ckpt)

    best = summary.best_flowsheet
    if best is not None:
        _write_text(out / "best.json", export_flowsheet(best, "json"))
        _write_text(out / "best.dot", export_flowsheet(best, "dot"))
    return {"seed": seed, "out": str(out), "episodes": summary.episodes, "best_return": summary.best_return}


def cmd_train(args) -> int:
    seeds = args.seeds if args.seeds else [args.seed]
    if len(set(seeds)) != len(seeds):
        raise CliError("seeds must be distinct")
    _load(args.problem, args.set)  # fail fast on a bad config
    root = _ensure_dir(Path(args.out))
    jobs = []
    for seed in seeds:
        out = root if len(seeds) == 1 else root / f"seed_{seed}"
        jobs.append((args.problem, tuple(args.set), seed, str(out), args.episodes, args.checkpoint_every, args.resume, args.log_every))
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_train_star, jobs))
    else:
        results = [_train_one(*job) for job in jobs]
    for r in results:
        print(f"seed {r['seed']}: {r['episodes']} episodes, best return {r['best_return']:.6g} -> {r['out']}")
    return 0


def _train_star(job):
    return _train_one(*job)


def flowsheet_report(fs) -> dict:
    names = fs.component_names
    feed = fs.feed.flows
    columns = []
    for node in fs.columns():
        s = node.spec
        columns.append(
            {
                "column": int(node.summary.get("column_index", 0)),
                "pressure_atm": s.pressure / ATM,
                "n_stages": int(s.n_stages),
                "reflux_ratio": s.reflux_ratio,
                "boilup_ratio": s.boilup_ratio,
                "tac_usd_per_yr": node.summary.get("tac"),
            }
        )
    products = []
    for leaf in fs.leaves():
        if leaf.label != PRODUCT:
            continue
        i = int(np.argmax(leaf.stream.flows))
        products.append(
            {
                "component": names[i],
                "purity": float(leaf.stream.composition[i]),
                "flow_mol_s": leaf.stream.total,
                "recovery": float(leaf.stream.flows[i] / feed[i]) if feed[i] > 0 else 0.0,
                "revenue_usd_per_yr": leaf.revenue,
            }
        )
    return {
        "columns": columns,
        "products": products,
        "recoveries": dict(zip(names, (float(r) for r in fs.recoveries()))),
        "total_revenue_usd_per_yr": fs.total_revenue,
        "total_tac_usd_per_yr": fs.total_tac,
        "episode_return": fs.episode_return,
    }


def _print_report(report: dict) -> None:
    print("Columns:")
    if not report["columns"]:
        print("  (none)")
    for c in report["columns"]:
        print(
            f"  COL {c['column']}: P = {c['pressure_atm']:.3f} atm, N = {c['n_stages']}, "
            f"R = {c['reflux_ratio']:.4g}, s = {c['boilup_ratio']:.4g}, TAC = ${c['tac_usd_per_yr'] / 1e6:.3f}M/yr"
        )
    print("Products:")
    if not report["products"]:
        print("  (none)")
    for p in report["products"]:
        print(f"  {p['component']:<12} purity {100 * p['purity']:6.2f}%  recovery {100 * p['recovery']:6.2f}%  {p['flow_mol_s']:.4g} mol/s")
    print(f"Total revenue: ${report['total_revenue_usd_per_yr'] / 1e6:.3f}M/yr")
    print(f"Total TAC:     ${report['total_tac_usd_per_yr'] / 1e6:.3f}M/yr")
    print(f"Return:        {report['episode_return']:.6g}")


def cmd_evaluate(args) -> int:
    _, spec, _ = _load(args.problem)
    env = DistillationEnv(spec)
    try:
        trainer = Trainer.load(args.checkpoint, env)
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {args.checkpoint}") from None
    except (ValueError, KeyError, OSError) as exc:
        raise CliError(f"incompatible checkpoint {args.checkpoint}: {exc}") from None
    fs = evaluate_episode(env, trainer.agent)
    report = flowsheet_report(fs)
    _print_report(report)
    if args.out:
        out = Path(args.out)
        _ensure_dir(out.parent if str(out.parent) else Path("."))
        _write_text(out, json.dumps(report, indent=2, sort_keys=True) + "\n")
    if args.flowsheet:
        _write_text(Path(args.flowsheet), export_flowsheet(fs, "json"))
    return 0


def cmd_simulate(args) -> int:
    _, spec, _ = _load(args.problem)
    try:
        col = ColumnSpec(args.pressure_atm * ATM, args.stages, args.reflux, args.boilup)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    feed = spec.feed
    res = solve_column(spec.components, feed, col)
    names = spec.component_names
    payload = {
        "spec": col.to_dict(),
        "converged": res.converged,
        "iterations": res.iterations,
        "max_delta_t": res.max_delta_t,
        "message": res.message,
        "components": list(names),
        "feed": feed.to_dict(),
    }
    width = max(12, *(len(n) + 2 for n in names))
    header = "stream".ljust(12) + "".join(n.rjust(width) for n in names) + "total".rjust(14) + "T [K]".rjust(10)
    rows = [("feed", feed)]
    if res.converged:
        rows += [("distillate", res.distillate), ("bottoms", res.bottoms)]
        payload.update(
            distillate=res.distillate.to_dict(),
            bottoms=res.bottoms.to_dict(),
            condenser_duty_w=res.condenser_duty,
            reboiler_duty_w=res.reboiler_duty,
            condenser_temperature_k=res.condenser_temperature,
            reboiler_temperature_k=res.reboiler_temperature,
        )
        try:
            payload["tac_usd_per_yr"] = column_tac(spec.components, res, col, spec.economics)
        except (SizingError, UtilityError, ThermoError) as exc:
            payload["tac_usd_per_yr"] = None
            payload["costing_error"] = str(exc)
    print(f"Column: P = {args.pressure_atm:g} atm, N = {col.n_stages}, R = {col.reflux_ratio:g}, s = {col.boilup_ratio:g}")
    print(header)
    for label, s in rows:
        print(label.ljust(12) + "".join(f"{f:{width}.6g}" for f in s.flows) + f"{s.total:14.6g}" + f"{s.temperature:10.2f}")
    if res.converged:
        print(f"Condenser duty: {res.condenser_duty / 1e6:.4f} MW   Reboiler duty: {res.reboiler_duty / 1e6:.4f} MW")
        if payload.get("tac_usd_per_yr") is not None:
            print(f"TAC: ${payload['tac_usd_per_yr'] / 1e6:.4f}M/yr")
        else:
            print(f"TAC: not costed ({payload['costing_error']})")
        print(f"Converged in {res.iterations} sweeps (max dT {res.max_delta_t:.2e} K)")
    else:
        print(f"NOT CONVERGED after {res.iterations} sweeps (max dT {res.max_delta_t:.3g} K): {res.message}", file=sys.stderr)
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True, default=float))
    return 0 if res.converged else EXIT_UNCONVERGED


def cmd_export_bfd(args) -> int:
    try:
        text = Path(args.flowsheet).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {args.flowsheet}: {exc}") from None
    try:
        dot = export_flowsheet(parse_flowsheet(text), "dot")
    except FlowsheetError as exc:
        raise CliError(f"{args.flowsheet}: {exc}") from None
    if args.output:
        _write_text(Path(args.output), dot)
    else:
        sys.stdout.write(dot)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distill-gym", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the agent on a problem")
    p.add_argument("--problem", required=True, help="problem JSON path or bundled name")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--episodes", type=int, default=1000, help="total episode count (including resumed ones)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, nargs="+", help="several seeds, one subdirectory each")
    p.add_argument("--workers", type=int, default=1, help="parallel processes for multiple seeds")
    p.add_argument("--checkpoint-every", type=int, default=100, help="episodes between checkpoints (0: only at the end)")
    p.add_argument("--log-every", type=int, default=100, help="episodes between progress messages (0: none)")
    p.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.npz if present")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="agent config override")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run one deterministic episode from a checkpoint")
    p.add_argument("--problem", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="write the report as JSON")
    p.add_argument("--flowsheet", help="write the evaluated flowsheet as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="simulate one column on the problem feed")
    p.add_argument("--problem", required=True)
    p.add_argument("--pressure-atm", type=float, required=True)
    p.add_argument("--stages", type=int, required=True)
    p.add_argument("--reflux", type=float, required=True)
    p.add_argument("--boilup", type=float, required=True)
    p.add_argument("--json", action="store_true", help="also print a JSON block")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export-bfd", help="convert a flowsheet JSON to Graphviz DOT")
    p.add_argument("flowsheet")
    p.add_argument("-o", "--output", help="output file (default: stdout)")
    p.set_defaults(func=cmd_export_bfd)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = os.environ.get("DISTILL_GYM_THREADS")
    try:
        limit = threadpool_limits(limits=int(threads)) if threads else nullcontext()
    except ValueError:
        print(f"error: DISTILL_GYM_THREADS must be an integer, got {threads!r}", file=sys.stderr)
        return EXIT_INVALID
    with limit:
        try:
            return args.func(args)
        except CliError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return exc.code


if __name__ == "__main__":
    sys.exit(main())
