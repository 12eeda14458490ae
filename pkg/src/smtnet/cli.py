"""Command line interface.

Exit codes: 0 success, 2 input error, 3 SMT found no acceptable k,
64 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend
from .graph import BlockModel, GraphError, read_edge_list, sample_sbm, write_edge_list
from .simbench import (
    InfeasibleScenario,
    PowerScenario,
    SmtEstimator,
    expand_grid,
    planted_params,
    power_type1_study,
    run_metadata,
    run_scenario,
    write_accuracy_csv,
    write_accuracy_json,
    write_power_csv,
)
from .smt import SmtConfig, estimate_k

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_ACCEPT = 3
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _alpha(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid alpha {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {v}")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _threads(args) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


def _manifest(command: str, args, extra=None) -> dict:
    import scipy
    import sklearn

    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    doc = {
        "command": command,
        "flags": flags,
        "versions": {
            "smtnet": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__,
        },
        "kernel_backend": backend(),
        "defaults": {
            "smt": asdict(SmtConfig()),
            "p_hat_clamp": "[1/(N(N-1)), 1 - 1/(N(N-1))]",
            "likelihood_eps": 1e-9,
            "dense_eigen_cutoff": 64,
            "eigen_tol": 1e-10,
        },
    }
    if extra:
        doc.update(extra)
    return doc


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path}: expected a JSON object")
    return doc


def _strict(doc: dict, allowed, where: str) -> None:
    unknown = set(doc) - set(allowed)
    if unknown:
        raise UsageError(f"unknown keys in {where}: {', '.join(sorted(unknown))}")


# -- subcommands ------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        p_in, p_out = planted_params(args.n, args.k, args.out_in, args.degree)
    except InfeasibleScenario as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    model = BlockModel.planted(args.n, args.k, p_in, p_out)
    a = sample_sbm(model, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_edge_list(a, out)
    sidecar = {
        "n": args.n,
        "k": args.k,
        "out_in_ratio": args.out_in,
        "degree": args.degree,
        "seed": args.seed,
        "p_in": p_in,
        "p_out": p_out,
        "n_edges": a.n_edges,
        "membership": model.membership.tolist(),
        "smtnet_version": __version__,
    }
    _write_json(out.with_name(out.name + ".json"), sidecar)
    return EXIT_OK


def cmd_estimate_k(args) -> int:
    try:
        a = read_edge_list(args.graph)
    except (OSError, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    max_k = args.max_k
    if a.n < 3 * max_k:
        print(f"error: graph has {a.n} nodes; max-k {max_k} needs at least {3 * max_k}", file=sys.stderr)
        return EXIT_INPUT
    cfg = SmtConfig(alpha=args.alpha, max_k=max_k, seed=args.seed)
    res = estimate_k(a, cfg)
    doc = res.to_dict()
    doc["config"] = asdict(cfg)
    doc["n"] = a.n
    doc["n_edges"] = a.n_edges
    if args.out:
        _write_json(Path(args.out), doc)
    else:
        json.dump(doc, sys.stdout)
        sys.stdout.write("\n")
    if res.k_hat is None:
        print(f"no acceptance up to k={max_k}", file=sys.stderr)
        return EXIT_NO_ACCEPT
    print(f"k_hat={res.k_hat}", file=sys.stderr)
    return EXIT_OK


BENCH_KEYS = {"alpha", "max_k", "seed", "scenarios", "power_type1", "timing"}
POWER_KEYS = {"n", "k_true", "regime", "trials", "seed"}


def cmd_benchmark(args) -> int:
    cfg = _load_json(args.config)
    _strict(cfg, BENCH_KEYS, "benchmark config")
    try:
        alpha = _alpha(str(cfg.get("alpha", 0.05)))
    except argparse.ArgumentTypeError as exc:
        raise UsageError(str(exc)) from None
    estimator = SmtEstimator(alpha=alpha, max_k=cfg.get("max_k"))
    scenarios = []
    for i, spec in enumerate(cfg.get("scenarios", [])):
        if not isinstance(spec, dict):
            raise UsageError(f"scenarios[{i}] must be an object")
        if "seed" not in spec and "seed" in cfg:
            spec = {**spec, "seed": cfg["seed"]}
        try:
            scenarios.extend(expand_grid(spec))
        except InfeasibleScenario as exc:
            raise InputError(f"scenarios[{i}]: {exc}") from None
        except (ValueError, TypeError) as exc:
            raise UsageError(f"scenarios[{i}]: {exc}") from None
    power_specs = []
    for i, spec in enumerate(cfg.get("power_type1", [])):
        if not isinstance(spec, dict):
            raise UsageError(f"power_type1[{i}] must be an object")
        _strict(spec, POWER_KEYS, f"power_type1[{i}]")
        if "seed" not in spec and "seed" in cfg:
            spec = {**spec, "seed": cfg["seed"]}
        try:
            power_specs.append(PowerScenario(**spec))
        except (ValueError, TypeError) as exc:
            raise UsageError(f"power_type1[{i}]: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    workers = _threads(args)
    timing = bool(cfg.get("timing", True))
    outcomes = [run_scenario(s, estimator, workers=workers) for s in scenarios]
    files = []
    if outcomes:
        write_accuracy_csv(outcomes, out / "accuracy.csv", timing=timing)
        write_accuracy_json(outcomes, out / "accuracy.json", run_metadata(estimator), timing=timing)
        files += ["accuracy.csv", "accuracy.json"]
        for o in outcomes:
            print(
                f"N={o.scenario.n} K={o.scenario.k_true} r={o.scenario.out_in_ratio} d={o.scenario.degree}: "
                f"accuracy={o.accuracy:.2f} ({o.n_trials} trials)",
                file=sys.stderr,
            )
    if power_specs:
        rows = power_type1_study(power_specs, alpha=alpha, workers=workers)
        write_power_csv(rows, out / "power_type1.csv")
        _write_json(out / "power_type1.json", {"metadata": run_metadata(estimator), "rows": rows})
        files += ["power_type1.csv", "power_type1.json"]
    _write_json(out / "manifest.json", _manifest("benchmark", args, {"config": cfg, "outputs": files}))
    return EXIT_OK


def cmd_net_extract(args) -> int:
    from .scnet import ExpressionError, ExtractionGrid, grid_select, load_expression

    grid_doc = _load_json(args.grid) if args.grid else {}
    smt_keys = {"max_k", "seed"}
    _strict(grid_doc, set(ExtractionGrid.__dataclass_fields__) | smt_keys, "grid config")
    smt_opts = {k: grid_doc.pop(k) for k in list(grid_doc) if k in smt_keys}
    try:
        grid = ExtractionGrid.from_dict(grid_doc)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"grid config: {exc}") from None
    try:
        x = load_expression(args.counts)
        res = grid_select(x, grid, SmtConfig(**smt_opts))
    except (OSError, ExpressionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "extraction.json", res.to_dict())
    _write_json(
        out / "manifest.json",
        _manifest("net-extract", args, {"grid": asdict(grid), "smt": smt_opts, "outputs": ["extraction.json"]}),
    )
    print(f"k_hat={res.k_hat} chosen={res.chosen}", file=sys.stderr)
    return EXIT_OK


def _read_membership(path):
    path = Path(path)
    if path.suffix == ".json":
        doc = _load_json(path)
        if "membership" not in doc:
            raise InputError(f"{path}: no 'membership' field")
        return np.asarray(doc["membership"]), doc.get("cells")
    labels, cells = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            try:
                if len(parts) == 1:
                    labels.append(int(parts[0]))
                elif len(parts) == 2:
                    cells.append(parts[0])
                    labels.append(int(parts[1]))
                else:
                    raise ValueError
            except ValueError:
                raise InputError(f"{path} line {lineno}: expected 'label' or 'cell label'") from None
    return np.asarray(labels), (cells or None)


def cmd_markers(args) -> int:
    from .scnet import ExpressionError, gene_markers, load_expression

    try:
        x = load_expression(args.counts)
        membership, cells = _read_membership(args.membership)
        if cells is not None:
            index = {c: i for i, c in enumerate(x.cells)}
            missing = [c for c in cells if c not in index]
            if missing:
                raise InputError(f"{len(missing)} cells in membership not found in counts, e.g. {missing[0]!r}")
            mask = np.zeros(x.n_cells, dtype=bool)
            order = np.array([index[c] for c in cells])
            mask[order] = True
            x = x.subset(cell_mask=mask)
            pos = {c: i for i, c in enumerate(x.cells)}
            aligned = np.empty(len(cells), dtype=membership.dtype)
            for c, lab in zip(cells, membership):
                aligned[pos[c]] = lab
            membership = aligned
        table = gene_markers(x, membership, max_p_adjusted=args.max_p_adjusted)
    except (OSError, ExpressionError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out, index=False, float_format="%.6g")
    _write_json(out.with_name(out.name + ".manifest.json"), _manifest("markers", args, {"rows": int(len(table))}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smtnet", description="Estimate SBM community counts by sequential multiple testing.")
    p.add_argument("--version", action="version", version=f"smtnet {__version__}")
    p.add_argument("--threads", type=_positive_int, default=None, help="worker processes (default: available cores)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="sample a planted partition SBM to an edge list")
    s.add_argument("--n", type=_positive_int, required=True, help="number of nodes")
    s.add_argument("--k", type=_positive_int, required=True, help="number of blocks")
    s.add_argument("--out-in", type=float, default=0.0, help="between/within edge probability ratio in [0, 1)")
    s.add_argument("--degree", type=float, required=True, help="expected average degree")
    s.add_argument("--seed", type=int, default=0, help="random seed")
    s.add_argument("--out", required=True, help="edge list path; membership goes to PATH.json")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate-k", help="run SMT on an edge list")
    e.add_argument("--graph", required=True, help="edge list file")
    e.add_argument("--alpha", type=_alpha, default=0.05, help="significance level in (0, 1)")
    e.add_argument("--max-k", type=_positive_int, default=20, help="largest candidate k")
    e.add_argument("--seed", type=int, default=0, help="clustering seed")
    e.add_argument("--out", default=None, help="result JSON path (default: stdout)")
    e.set_defaults(func=cmd_estimate_k)

    b = sub.add_parser("benchmark", help="Monte Carlo accuracy and power/type-I tables")
    b.add_argument("--config", required=True, help="JSON config with scenarios and/or power_type1 lists")
    b.add_argument("--out", required=True, help="output directory")
    b.set_defaults(func=cmd_benchmark)

    n = sub.add_parser("net-extract", help="select a cell network from counts by SBM likelihood")
    n.add_argument("--counts", required=True, help=".mtx (with genes/barcodes tsv) or dense .csv")
    n.add_argument("--grid", default=None, help="JSON grid config (ExtractionGrid fields plus max_k, seed)")
    n.add_argument("--out", required=True, help="output directory")
    n.set_defaults(func=cmd_net_extract)

    m = sub.add_parser("markers", help="binomial marker-gene test per cluster")
    m.add_argument("--counts", required=True, help=".mtx or .csv counts")
    m.add_argument("--membership", required=True, help="extraction.json or text file of labels")
    m.add_argument("--out", required=True, help="marker CSV path")
    m.add_argument("--max-p-adjusted", type=float, default=None, help="drop rows above this adjusted p-value")
    m.set_defaults(func=cmd_markers)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"smtnet: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
