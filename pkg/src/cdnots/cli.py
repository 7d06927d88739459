"""Command line front end: discover / benchmark / diagnose / simulate.

All randomness hangs off --seed, so reruns with the same flags produce
byte-identical graph files for the deterministic tests. On any error the
command removes whatever outputs it had already written and exits nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from .assumptions import linearity_test, stationarity_report
from .dataset import lag_embed, load_csv, save_csv, standardize
from .discovery import CI_TESTS, DiscoveryConfig, discover
from .graph import MixedGraph
from .simbench import SimSpec, generate, run_benchmark

AUTO_TEST_MIN_ROWS = 200


def _read_config_file(path) -> dict:
    """key=value lines, # comments; keys use the flag names."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_").lstrip("_")] = value.strip().strip('"')
    return out


def _apply_config_defaults(args: argparse.Namespace, argv) -> None:
    if not getattr(args, "config", None):
        return
    file_values = _read_config_file(args.config)
    argv_keys = set()
    for token in argv:
        if token.startswith("--"):
            argv_keys.add(token[2:].split("=")[0].replace("-", "_"))
    for key, value in file_values.items():
        if key in argv_keys or not hasattr(args, key):
            continue  # explicit flags win; unknown keys are ignored
        current = getattr(args, key)
        if isinstance(current, bool):
            setattr(args, key, value.lower() in ("1", "true", "on", "yes"))
        elif isinstance(current, int):
            setattr(args, key, int(value))
        elif isinstance(current, float):
            setattr(args, key, float(value))
        else:
            setattr(args, key, value)


class _OutputTracker:
    def __init__(self):
        self.paths = []

    def path(self, p):
        self.paths.append(p)
        return p

    def cleanup(self):
        for p in self.paths:
            try:
                if os.path.exists(p):
                    os.remove(p)
            except OSError:
                pass


def _resolve_test(name: str, n_rows: int) -> str:
    if name != "auto":
        return name
    return "kcit-hbe" if n_rows >= AUTO_TEST_MIN_ROWS else "parcorr"


def _write_text(path, text) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _write_json(path, obj) -> None:
    _write_text(path, json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _summary_entry(graph: MixedGraph, edge) -> dict:
    def label(u):
        return "T" if u.is_time else f"{graph.names[u.var]}[t-{u.lag}]"

    return {
        "from": label(edge.src),
        "to": label(edge.dst),
        "lag": edge.lag,
        "mark": edge.mark,
        "max_p": edge.max_p,
    }


def _cmd_discover(args, out: _OutputTracker) -> int:
    ds = load_csv(args.input, delimiter=args.delimiter, max_lag=args.max_lag)
    test = _resolve_test(args.ci_test, ds.n_rows - args.max_lag)
    alphas = (
        [float(a) for a in args.alpha_sweep.split(",")] if args.alpha_sweep else [args.alpha]
    )
    os.makedirs(args.out_dir, exist_ok=True)
    sweep_rows: dict = {}
    for alpha in alphas:
        cfg = DiscoveryConfig(
            max_lag=args.max_lag,
            alpha=alpha,
            ci_test=test,
            max_cond_size=args.max_cond_size,
            seed=args.seed,
            stage4_enabled=args.stage4 == "on",
        )
        result = discover(ds, cfg)
        suffix = "" if len(alphas) == 1 else f"_a{alpha:g}"
        _write_text(out.path(os.path.join(args.out_dir, f"graph{suffix}.json")),
                    result.graph.to_json() + "\n")
        _write_text(out.path(os.path.join(args.out_dir, f"graph{suffix}.dot")),
                    result.graph.to_dot())
        _write_json(
            out.path(os.path.join(args.out_dir, f"stationarity{suffix}.json")),
            [{"variable": name, "nonstationary": flag}
             for name, flag in stationarity_report(result.graph)],
        )
        _write_json(
            out.path(os.path.join(args.out_dir, f"testlog{suffix}.json")),
            {
                "ci_test": test,
                "alpha": alpha,
                "n_tests": result.log.n_tests,
                "counters": result.log.counters(),
                "warnings": result.log.warnings,
            },
        )
        for edge in result.graph.summary_edges():
            entry = _summary_entry(result.graph, edge)
            sweep_rows.setdefault((entry["from"], entry["to"], entry["lag"]), {})[alpha] = True
    if len(alphas) > 1:
        table = out.path(os.path.join(args.out_dir, "alpha_stability.csv"))
        with open(table, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["from", "to", "lag"] + [f"alpha_{a:g}" for a in alphas])
            for key in sorted(sweep_rows):
                present = sweep_rows[key]
                writer.writerow(list(key) + [int(bool(present.get(a))) for a in alphas])
    return 0


def _cmd_simulate(args, out: _OutputTracker) -> int:
    spec = SimSpec(
        n_nodes=args.nodes,
        n_samples=args.samples,
        max_lag=args.max_lag,
        edge_density=args.density,
        mechanisms=tuple(args.mechanisms.split(",")),
        noise_scale=args.noise_scale,
        seed=args.seed,
    )
    instance = generate(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    save_csv(instance.data, out.path(os.path.join(args.out_dir, "sim_data.csv")))
    _write_text(out.path(os.path.join(args.out_dir, "sim_truth.json")),
                instance.truth.to_json() + "\n")
    return 0


def _cmd_benchmark(args, out: _OutputTracker) -> int:
    nodes = [int(v) for v in args.nodes.split(",")]
    samples = [int(v) for v in args.samples.split(",")]
    tests = [t for t in args.tests.split(",")]
    alphas = [float(a) for a in args.alphas.split(",")]
    for t in tests:
        if t not in CI_TESTS:
            raise ValueError(f"unknown test {t!r}")
    specs = [
        SimSpec(
            n_nodes=n,
            n_samples=s,
            max_lag=args.max_lag,
            edge_density=args.density,
            noise_scale=args.noise_scale,
            seed=args.seed * 100003 + 1009 * n + 7 * s + g,
        )
        for n in nodes
        for s in samples
        for g in range(args.graphs_per_cell)
    ]
    run_benchmark(
        specs,
        tests,
        alphas,
        args.out,
        max_cond_size=args.max_cond_size,
        stage4=args.stage4 == "on",
    )
    return 0


def _cmd_diagnose(args, out: _OutputTracker) -> int:
    with open(args.graph, "r", encoding="utf-8") as fh:
        graph = MixedGraph.from_json(fh.read())
    ds = load_csv(args.input, delimiter=args.delimiter, max_lag=graph.max_lag)
    if tuple(ds.names) != tuple(graph.names):
        raise ValueError("graph and dataset variable names differ")
    design = lag_embed(standardize(ds), graph.max_lag)
    reports = []
    for edge in graph.summary_edges():
        if edge.mark != "directed" or edge.src.is_time or edge.dst.is_time:
            continue
        child = edge.dst
        parent = edge.src
        others = [
            w for w in graph.directed_parents(child) if not w.is_time and w != parent
        ]
        report = linearity_test(
            design.column(child),
            design.column(parent),
            design.columns(sorted(others, key=lambda w: w.sort_key())),
            alpha=args.alpha,
            ci_test=args.ci_test if args.ci_test != "auto" else "kcit-hbe",
            seed=args.seed,
            target=design.node_label(child),
            tested_parent=design.node_label(parent),
            conditioning=tuple(design.node_label(w) for w in others),
        )
        reports.append(report)
    with open(out.path(args.out), "w", encoding="utf-8") as fh:
        for rep in reports:
            fh.write(
                json.dumps(
                    {
                        "target": rep.target,
                        "tested_parent": rep.tested_parent,
                        "conditioning": list(rep.conditioning),
                        "p_value": rep.p_value,
                        "alpha": rep.alpha,
                        "verdict": "reject" if rep.reject else "fail-to-reject",
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdnots",
        description="Constraint-based causal discovery for nonstationary time series",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None, help="key=value file mirroring the flags")

    p_disc = sub.add_parser("discover", help="discover a causal graph from a CSV")
    p_disc.add_argument("--input", required=True)
    p_disc.add_argument("--out-dir", required=True)
    p_disc.add_argument("--max-lag", type=int, default=1)
    p_disc.add_argument("--alpha", type=float, default=0.05)
    p_disc.add_argument("--ci-test", default="auto", choices=("auto",) + CI_TESTS)
    p_disc.add_argument("--max-cond-size", type=int, default=None)
    p_disc.add_argument("--stage4", default="on", choices=("on", "off"))
    p_disc.add_argument("--alpha-sweep", default=None, help="comma separated alpha list")
    p_disc.add_argument("--delimiter", default=",")
    common(p_disc)

    p_sim = sub.add_parser("simulate", help="emit a synthetic instance (data + truth)")
    p_sim.add_argument("--out-dir", required=True)
    p_sim.add_argument("--nodes", type=int, default=5)
    p_sim.add_argument("--samples", type=int, default=500)
    p_sim.add_argument("--max-lag", type=int, default=1)
    p_sim.add_argument("--density", type=float, default=0.2)
    p_sim.add_argument("--noise-scale", type=float, default=1.0)
    p_sim.add_argument("--mechanisms", default="linear,quadratic,exponential,sine")
    common(p_sim)

    p_bench = sub.add_parser("benchmark", help="run the synthetic benchmark grid")
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--nodes", default="3,5,8")
    p_bench.add_argument("--samples", default="50,1000")
    p_bench.add_argument("--graphs-per-cell", type=int, default=10)
    p_bench.add_argument("--tests", default="parcorr,kcit-hbe")
    p_bench.add_argument("--alphas", default="0.05")
    p_bench.add_argument("--max-lag", type=int, default=1)
    p_bench.add_argument("--density", type=float, default=0.15)
    p_bench.add_argument("--noise-scale", type=float, default=1.0)
    p_bench.add_argument("--max-cond-size", type=int, default=2)
    p_bench.add_argument("--stage4", default="off", choices=("on", "off"))
    common(p_bench)

    p_diag = sub.add_parser("diagnose", help="linearity reports for directed pairs of a graph")
    p_diag.add_argument("--input", required=True)
    p_diag.add_argument("--graph", required=True)
    p_diag.add_argument("--out", required=True)
    p_diag.add_argument("--alpha", type=float, default=0.05)
    p_diag.add_argument("--ci-test", default="kcit-hbe", choices=("auto",) + CI_TESTS)
    p_diag.add_argument("--delimiter", default=",")
    common(p_diag)

    return parser


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = _build_parser()
    args = parser.parse_args(argv)
    tracker = _OutputTracker()
    try:
        _apply_config_defaults(args, argv)
        handler = {
            "discover": _cmd_discover,
            "simulate": _cmd_simulate,
            "benchmark": _cmd_benchmark,
            "diagnose": _cmd_diagnose,
        }[args.command]
        return handler(args, tracker)
    except Exception as exc:
        tracker.cleanup()
        print(f"cdnots {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
