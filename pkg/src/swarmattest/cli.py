"""Command-line entry point: run scenarios, sweep grids, check crypto vectors.

Exit status is 0 on success, 1 for an unreadable or invalid configuration
(the failing field is named on stderr) and 2 when a run breaks a protocol
invariant: a missed compromise, a tracker authenticating traffic after the
secrets were rotated, or a conformance vector mismatch.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

from .config import ScenarioConfig, build, parse_config, set_path
from .errors import ConfigError, InvariantViolation
from .simnet.scenario import ScenarioMetrics, run_scenario
from .simnet.topology import KARY_TREE
from .vectors import check_all

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2

CSV_COLUMNS = ["scenario_id", "seed", "epoch", "n", "topology", "mode", "simulated_runtime_ms",
               "false_pos_raw", "false_pos_recovered", "detected_remote", "detected_physical",
               "unverifiable", "messages", "bytes", "config_digest"]
SWEEP_COLUMNS = CSV_COLUMNS + ["runtime_s"]

BUNDLED = {"demo": "demo.json", "fig2a-sweep": "fig2a_sweep.json"}


def _bundled_text(name: str) -> str:
    return resources.files("swarmattest").joinpath("data", BUNDLED[name]).read_text()


def _read_json(arg: str, what: str) -> dict:
    if arg in BUNDLED and not Path(arg).exists():
        text = _bundled_text(arg)
    else:
        try:
            text = Path(arg).read_text()
        except OSError as exc:
            raise ConfigError("<file>", f"cannot read {what} {arg}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("<root>", f"{what} must be a JSON object")
    return data


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(round(v, 6))
    return str(v)


def topology_label(cfg: ScenarioConfig) -> str:
    t = cfg.topology
    return f"{t.k}-ary_tree" if t.kind == KARY_TREE else t.kind


def epoch_rows(cfg: ScenarioConfig, scenario_id: str, metrics: ScenarioMetrics) -> list[dict]:
    digest = cfg.digest()
    rows = []
    for e in metrics.epochs:
        rows.append({
            "scenario_id": scenario_id, "seed": cfg.seed, "epoch": e.epoch, "n": cfg.topology.devices,
            "topology": topology_label(cfg), "mode": e.mode, "simulated_runtime_ms": e.runtime_ms,
            "false_pos_raw": e.false_pos_raw, "false_pos_recovered": e.false_pos_recovered,
            "detected_remote": e.detected_remote, "detected_physical": e.detected_physical,
            "unverifiable": e.unverifiable, "messages": e.messages, "bytes": e.bytes, "config_digest": digest,
            "runtime_s": e.runtime_ms / 1000.0,
        })
    return rows


def write_csv(path: Path, rows: list[dict], columns: list[str]):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    path.write_text(buf.getvalue())


def simulate(cfg: ScenarioConfig) -> ScenarioMetrics:
    built = build(cfg)
    return run_scenario(built.topology, **built.run_kwargs())


def invariant_problems(metrics: ScenarioMetrics) -> list[str]:
    out = []
    if metrics.false_negatives:
        out.append(f"{metrics.false_negatives} compromised device(s) went undetected")
    if metrics.post_rotation_authenticated:
        out.append(f"captured secrets authenticated {metrics.post_rotation_authenticated} packet(s) "
                   "after rotation")
    return out


# ------------------------------------------------------------------ commands

def cmd_run(args) -> int:
    source = args.config or args.config_pos
    if source is None:
        raise ConfigError("<args>", "run needs a configuration (positional or --config)")
    cfg = parse_config(_read_json(source, "config"))
    cfg = cfg.with_overrides(seed=args.seed, epochs=args.epochs)
    metrics = simulate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "epochs.csv", epoch_rows(cfg, cfg.name, metrics), CSV_COLUMNS)
    summary = {"scenario_id": cfg.name, "seed": cfg.seed, "config_digest": cfg.digest(),
               "config": cfg.to_json(), "metrics": metrics.to_json()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    problems = invariant_problems(metrics)
    for p in problems:
        print(f"invariant violated: {p}", file=sys.stderr)
    return EXIT_INVARIANT if problems else EXIT_OK


def sweep_points(spec: dict, seed=None, epochs=None) -> list[tuple[str, ScenarioConfig]]:
    """Expand ``{"base": config, "grid": {dotted.path: [values]}}`` in grid order."""
    if "base" not in spec or not isinstance(spec["base"], dict):
        raise ConfigError("base", "sweep needs a base configuration object")
    grid = spec.get("grid", {})
    if not isinstance(grid, dict) or any(not isinstance(v, list) or not v for v in grid.values()):
        raise ConfigError("grid", "grid must map dotted field paths to non-empty lists")
    extra = set(spec) - {"base", "grid"}
    if extra:
        raise ConfigError(sorted(extra)[0], "unknown sweep key")
    base = spec["base"]
    name = base.get("name", "sweep")
    keys = list(grid)
    points = []
    for values in itertools.product(*(grid[k] for k in keys)):
        data = base
        for k, v in zip(keys, values):
            data = set_path(data, k, v)
        label = ";".join(f"{k}={v}" for k, v in zip(keys, values))
        try:
            cfg = parse_config(data).with_overrides(seed=seed, epochs=epochs)
        except ConfigError as exc:
            raise ConfigError(f"grid[{label}].{exc.field}", str(exc)) from None
        points.append((f"{name}[{label}]" if label else name, cfg))
    return points


def _run_point(item):
    scenario_id, cfg_json = item
    cfg = parse_config(cfg_json)
    metrics = simulate(cfg)
    return epoch_rows(cfg, scenario_id, metrics), invariant_problems(metrics)


def cmd_sweep(args) -> int:
    source = args.config or args.config_pos
    if source is None:
        raise ConfigError("<args>", "sweep needs a grid file (positional or --config)")
    points = sweep_points(_read_json(source, "sweep"), args.seed, args.epochs)
    for _, cfg in points:
        build(cfg)  # fail fast on cross-field errors before any simulation starts
    items = [(sid, cfg.to_json()) for sid, cfg in points]
    if args.parallelism > 1:
        with ProcessPoolExecutor(max_workers=args.parallelism) as pool:
            results = list(pool.map(_run_point, items))  # map keeps grid order
    else:
        results = [_run_point(it) for it in items]
    rows, problems = [], []
    for r, p in results:
        rows.extend(r)
        problems.extend(p)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "sweep.csv", rows, SWEEP_COLUMNS)
    for p in problems:
        print(f"invariant violated: {p}", file=sys.stderr)
    return EXIT_INVARIANT if problems else EXIT_OK


def cmd_verify_vectors(args) -> int:
    failed = 0
    for name, ok in check_all():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
        failed += not ok
    return EXIT_INVARIANT if failed else EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not invariant failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="swarmattest", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, what in (("run", cmd_run, "scenario config (or a bundled name: demo)"),
                           ("sweep", cmd_sweep, "sweep grid file (or a bundled name: fig2a-sweep)")):
        p = sub.add_parser(name)
        p.add_argument("config_pos", nargs="?", metavar="CONFIG", help=what)
        p.add_argument("--config", help=what)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--epochs", type=int, help="override the epoch count")
        p.add_argument("--parallelism", type=int, default=1, help="worker processes for sweeps")
        p.set_defaults(fn=fn)
    p = sub.add_parser("verify-vectors")
    p.set_defaults(fn=cmd_verify_vectors)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
