"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .anatomy import anatomize, read_tables, verify_l_diversity, verify_tables, write_partition, write_tables
from .data import DataError, load_csv, load_schema, write_csv
from .experiments import ExperimentConfig, emit_report, run_bounds_sim, run_convergence, run_cv
from .generalize import default_hierarchies, generalize, load_hierarchies, verify_k_anonymity, write_anonymized
from .knn import KnnModel, error_rate, predict

log = logging.getLogger("anatknn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _names(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


# subcommand -> defaults; every key is also a flag (underscores become dashes)
DEFAULTS: dict[str, dict[str, Any]] = {
    "anatomize": {"in": None, "schema": None, "l": 2, "missing": "drop_row"},
    "generalize": {"in": None, "schema": None, "k": 2, "hierarchies": None, "max_suppression": 0.0, "missing": "drop_row"},
    "classify": {
        "train": None, "test": None, "schema": None, "k": 1, "l": 0, "anon_k": 0, "hierarchies": None,
        "tie_policy": "lowest_row_id", "missing": "drop_row",
    },
    "cv": {
        "in": None, "schema": None, "variants": ["original", "anatomized"], "k": [1], "l": [2], "anon_k": [2],
        "folds": 10, "hierarchies": None, "tie_policy": "lowest_row_id", "jobs": 1,
    },
    "convergence": {
        "in": None, "schema": None, "variants": ["original", "anatomized"], "l": [2, 3], "partitions": 5,
        "tie_policy": "lowest_row_id", "jobs": 1, "fit_asymptote": False,
    },
    "bounds-sim": {"n": 50_000, "n_test": 10_000, "l": [1, 2, 3], "k": [1, 3], "separation": 2.0, "tolerance": 0.01},
    "verify": {"it": None, "st": None, "l": 2, "schema": None},
}
GLOBAL_DEFAULTS = {"seed": 0, "out": None, "format": None}
REQUIRED = {
    "anatomize": ("in", "schema", "out"),
    "generalize": ("in", "schema", "out"),
    "classify": ("train", "test", "schema"),
    "cv": ("in", "schema"),
    "convergence": ("in", "schema"),
    "bounds-sim": (),
    "verify": ("it", "st"),
}
LIST_INTS = {"cv": ("k", "l", "anon_k"), "convergence": ("l",), "bounds-sim": ("l", "k")}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (default 0)")
    g.add_argument("--config", default=argparse.SUPPRESS, help="JSON file with flag values; flags override it")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    g.add_argument("--format", choices=("json", "csv"), default=argparse.SUPPRESS, help="report format (default both)")
    g.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="anatknn", description="k-NN classification on anatomized training data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    S = argparse.SUPPRESS

    p = sub.add_parser("anatomize", parents=[common], help="split a table into l-diverse IT/ST tables and join them")
    p.add_argument("--in", dest="in", default=S)
    p.add_argument("--schema", default=S)
    p.add_argument("--l", type=int, default=S)
    p.add_argument("--missing", choices=("drop_row", "error"), default=S)

    p = sub.add_parser("generalize", parents=[common], help="k-anonymize by hierarchy generalization")
    p.add_argument("--in", dest="in", default=S)
    p.add_argument("--schema", default=S)
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--hierarchies", default=S)
    p.add_argument("--max-suppression", dest="max_suppression", type=float, default=S)
    p.add_argument("--missing", choices=("drop_row", "error"), default=S)

    p = sub.add_parser("classify", parents=[common], help="train k-NN (optionally on anatomized data) and label a test file")
    p.add_argument("--train", default=S)
    p.add_argument("--test", default=S)
    p.add_argument("--schema", default=S)
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--l", type=int, default=S, help="anatomize the training data first (0: no)")
    p.add_argument("--anon-k", dest="anon_k", type=int, default=S, help="k-anonymize the training data first (0: no)")
    p.add_argument("--hierarchies", default=S)
    p.add_argument("--tie-policy", dest="tie_policy", choices=("lowest_row_id", "seeded_random"), default=S)
    p.add_argument("--missing", choices=("drop_row", "error"), default=S)

    p = sub.add_parser("cv", parents=[common], help="k-fold cross-validated error comparison")
    p.add_argument("--in", dest="in", default=S)
    p.add_argument("--schema", default=S)
    p.add_argument("--variants", type=_names, default=S, help="comma list of original,anatomized,anonymized")
    p.add_argument("--k", type=_ints, default=S)
    p.add_argument("--l", type=_ints, default=S)
    p.add_argument("--anon-k", dest="anon_k", type=_ints, default=S)
    p.add_argument("--folds", type=int, default=S)
    p.add_argument("--hierarchies", default=S)
    p.add_argument("--tie-policy", dest="tie_policy", choices=("lowest_row_id", "seeded_random"), default=S)
    p.add_argument("--jobs", type=int, default=S)

    p = sub.add_parser("convergence", parents=[common], help="incremental training-size runs and fitted curves")
    p.add_argument("--in", dest="in", default=S)
    p.add_argument("--schema", default=S)
    p.add_argument("--variants", type=_names, default=S)
    p.add_argument("--l", type=_ints, default=S)
    p.add_argument("--partitions", type=int, default=S)
    p.add_argument("--tie-policy", dest="tie_policy", choices=("lowest_row_id", "seeded_random"), default=S)
    p.add_argument("--jobs", type=int, default=S)
    p.add_argument("--fit-asymptote", dest="fit_asymptote", action="store_true", default=S)

    p = sub.add_parser("bounds-sim", parents=[common], help="synthetic Gaussian check of the error bounds")
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--n-test", dest="n_test", type=int, default=S)
    p.add_argument("--l", type=_ints, default=S)
    p.add_argument("--k", type=_ints, default=S)
    p.add_argument("--separation", type=float, default=S)
    p.add_argument("--tolerance", type=float, default=S)

    p = sub.add_parser("verify", parents=[common], help="check published IT/ST tables for l-diversity")
    p.add_argument("--it", default=S)
    p.add_argument("--st", default=S)
    p.add_argument("--l", type=int, default=S)
    p.add_argument("--schema", default=S)
    return parser


def resolve(args: argparse.Namespace) -> dict[str, Any]:
    """Defaults, then the --config file, then explicit flags."""
    given = vars(args).copy()
    command = given.pop("command")
    verbose = given.pop("verbose", False)
    resolved = {**GLOBAL_DEFAULTS, **DEFAULTS[command]}
    if "config" in given:
        path = given.pop("config")
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
        raw = {k.replace("-", "_"): v for k, v in raw.items()}
        unknown = set(raw) - set(resolved)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
        resolved.update(raw)
    resolved.update(given)
    for key in LIST_INTS.get(command, ()):
        if isinstance(resolved[key], int):
            resolved[key] = [resolved[key]]
    missing = [k for k in REQUIRED[command] if resolved.get(k) in (None, "")]
    if missing:
        raise UsageError(f"{command}: missing required option(s) " + ", ".join("--" + m.replace("_", "-") for m in missing))
    resolved["command"] = command
    resolved["verbose"] = bool(verbose)
    return resolved


def _out_dir(cfg: dict[str, Any]) -> Path | None:
    if cfg["out"] is None:
        return None
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(cfg: dict[str, Any], out: Path | None) -> None:
    if out is not None:
        (out / "config.json").write_text(json.dumps(_public(cfg), indent=2, sort_keys=True) + "\n")


def _public(cfg: dict[str, Any]) -> dict[str, Any]:
    return {k: v for k, v in cfg.items() if k != "verbose"} | {"version": __version__}


def cmd_anatomize(cfg: dict[str, Any]) -> int:
    loaded = load_csv(cfg["in"], load_schema(cfg["schema"]), cfg["missing"])
    partition, it, st, joined = anatomize(loaded.dataset, cfg["l"], cfg["seed"])
    out = _out_dir(cfg)
    write_tables(it, st, out / "it.csv", out / "st.csv")
    write_csv(joined.data, out / "anatomized.csv")
    write_partition(partition, out / "partition.json")
    _echo(cfg, out)
    report = verify_l_diversity(partition, loaded.dataset)
    print(
        f"groups={len(partition.groups)} suppressed={len(partition.suppressed)} "
        f"dropped={loaded.dropped} joined_rows={len(joined)} l_diverse={report.ok}"
    )
    return 0


def _hierarchies(cfg: dict[str, Any], data):
    return load_hierarchies(cfg["hierarchies"]) if cfg["hierarchies"] else default_hierarchies(data)


def cmd_generalize(cfg: dict[str, Any]) -> int:
    data = load_csv(cfg["in"], load_schema(cfg["schema"]), cfg["missing"]).dataset
    anon = generalize(data, cfg["k"], _hierarchies(cfg, data), cfg["max_suppression"])
    out = _out_dir(cfg)
    write_anonymized(anon, out / "anonymized.csv")
    _echo(cfg, out)
    report = verify_k_anonymity(anon)
    print(f"levels={json.dumps(anon.levels, sort_keys=True)} suppressed={len(anon.suppressed)} k_anonymous={report.ok}")
    return 0


def cmd_classify(cfg: dict[str, Any]) -> int:
    schema = load_schema(cfg["schema"])
    train = load_csv(cfg["train"], schema, cfg["missing"]).dataset
    test = load_csv(cfg["test"], schema, cfg["missing"]).dataset
    if cfg["l"] and cfg["anon_k"]:
        raise UsageError("--l and --anon-k are mutually exclusive")
    source = train
    if cfg["l"]:
        source = anatomize(train, cfg["l"], cfg["seed"])[3]
    elif cfg["anon_k"]:
        source = generalize(train, cfg["anon_k"], _hierarchies(cfg, train))
    model = KnnModel(source, cfg["k"], tie_policy=cfg["tie_policy"], seed=cfg["seed"])
    labels = predict(model, test)
    err = error_rate(model, test)
    out = _out_dir(cfg)
    if out is not None:
        with open(out / "predictions.csv", "w") as fh:
            fh.write("row_id,predicted,actual\n")
            for rid, p, a in zip(test.row_ids, labels, test.labels):
                fh.write(f"{int(rid)},{p},{a}\n")
        _echo(cfg, out)
    print(f"error={err!r} n_test={len(test)}")
    return 0


def _experiment_config(cfg: dict[str, Any], protocol: str) -> ExperimentConfig:
    return ExperimentConfig(
        data=cfg["in"],
        schema=cfg["schema"],
        protocol=protocol,
        variants=tuple(cfg["variants"]),
        k_values=tuple(cfg.get("k", [1])),
        l_values=tuple(cfg["l"]),
        anonymity_k_values=tuple(cfg.get("anon_k", [2])),
        folds=cfg.get("folds", 10),
        partitions=cfg.get("partitions", 5),
        seed=cfg["seed"],
        out=cfg["out"],
        hierarchies=cfg.get("hierarchies"),
        tie_policy=cfg["tie_policy"],
        jobs=cfg["jobs"],
    )


def _print_json(obj: Any) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_cv(cfg: dict[str, Any]) -> int:
    report = run_cv(_experiment_config(cfg, "cv"))
    out = _out_dir(cfg)
    if out is not None:
        emit_report(report, out, cfg["format"])
    for s in report.summaries:
        print(f"{s.label}: mean={s.mean:.4f} sd={s.sd:.4f} folds={s.n}")
    for c in report.comparisons:
        levels = [lvl for lvl, sig in c.significant.items() if sig]
        print(f"{c.a} - {c.b}: diff={c.mean_diff:+.4f} t={c.t:.3f} significant at {levels or 'none'}")
    return 0


def cmd_convergence(cfg: dict[str, Any]) -> int:
    result = run_convergence(_experiment_config(cfg, "convergence"), fit_asymptote=cfg["fit_asymptote"])
    out = _out_dir(cfg)
    if out is not None:
        emit_report(result, out, cfg["format"])
    for c in result.curves:
        pts = ", ".join(f"{n}:{e:.4f}" for n, e in c.measured)
        print(f"{c.label}: {pts} | asymptote={c.model.asymptote:.4f} c={c.model.constant:.4g} max_residual={c.max_residual:.4f}")
    return 0


def cmd_bounds_sim(cfg: dict[str, Any]) -> int:
    report = run_bounds_sim(cfg["n"], cfg["l"], cfg["k"], cfg["separation"], cfg["seed"], cfg["n_test"], cfg["tolerance"])
    out = _out_dir(cfg)
    if out is not None:
        emit_report(report, out)
    print(f"R*={report.r_star:.4f} interval=[{report.lower:.4f}, {report.upper:.4f}] 2R*(1-R*)={report.asymptotic_1nn:.4f}")
    for e in report.entries:
        print(f"l={e.l} k={e.k}: error={e.error:.4f} within={e.within}")
    return 0 if report.ok else 2


def cmd_verify(cfg: dict[str, Any]) -> int:
    schema = load_schema(cfg["schema"]) if cfg["schema"] else None
    it, st = read_tables(cfg["it"], cfg["st"], schema)
    report = verify_tables(it, st, cfg["l"])
    bad = report.violations
    print(f"groups={len(report.groups)} l={cfg['l']} l_diverse={report.ok}" + (f" violating_gids={bad[:20]}" if bad else ""))
    return 0 if report.ok else 2


COMMANDS = {
    "anatomize": cmd_anatomize,
    "generalize": cmd_generalize,
    "classify": cmd_classify,
    "cv": cmd_cv,
    "convergence": cmd_convergence,
    "bounds-sim": cmd_bounds_sim,
    "verify": cmd_verify,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if cfg["verbose"] else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    _print_json(_public(cfg))
    try:
        return COMMANDS[cfg["command"]](cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
