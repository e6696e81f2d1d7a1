"""Command-line entry point: ``infoflow <subcommand> ...``.

Exit codes: 0 success, 1 analysis error, 2 input/output error, 3 bad
configuration. Errors are reported on stderr as one JSON object naming the
failing step. Every file is written to a temporary name and renamed into
place, so an interrupted run never leaves a half-written output.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dcg import FeatureGroup, build_ultrametric_tree, feature_tree, l1_distances, synergistic_groups
from .entropy import EntropyMatrix, entropy_matrix
from .errors import ConfigError, DatasetUnavailable, IngestError, InfoflowError, UnknownDataset
from .flow import serial_flow
from .ingest import BUILTIN_DATASETS, available_datasets
from .mechanics import CouplingGeometry, data_mechanics
from .pipeline import (
    DEFAULT_SEED,
    STREAM_FLOW,
    CASESTUDIES,
    PipelineResult,
    RunConfig,
    load_input,
    run_casestudy,
    run_pipeline,
)
from .render import render_flow, render_geometry, render_histogram
from .renorm import DigitalCodedMatrix, renormalize_matrix

OUTPUT_DIR_ENV = "INFOFLOW_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "infoflow-output"
EXIT_OK, EXIT_ANALYSIS, EXIT_IO, EXIT_CONFIG = 0, 1, 2, 3
_SIDECARS = (".coding.json", ".meta.json")


class StepError(Exception):
    def __init__(self, step: str, exc: BaseException):
        self.step = step
        self.exc = exc
        super().__init__(f"{step}: {exc}")


@contextmanager
def _step(name: str):
    try:
        yield
    except StepError:
        raise
    except (InfoflowError, OSError, ValueError) as exc:
        raise StepError(name, exc) from exc


# ---------------------------------------------------------------- writing


def _tmp_for(path: Path) -> Path:
    return path.with_name(f".{path.name}.tmp{os.getpid()}")


@contextmanager
def atomic_path(path):
    """Yield a temporary path; on success rename it (and any sidecars) to ``path``."""
    path = Path(path)
    tmp = _tmp_for(path)
    try:
        yield tmp
        for suffix in _SIDECARS:
            side = Path(str(tmp) + suffix)
            if side.exists():
                os.replace(side, Path(str(path) + suffix))
        os.replace(tmp, path)
    finally:
        for p in [tmp, *(Path(str(tmp) + s) for s in _SIDECARS)]:
            if p.exists():
                p.unlink()


def write_text(path, text: str) -> Path:
    with atomic_path(path) as tmp:
        tmp.write_text(text, encoding="utf-8")
    return Path(path)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path, obj) -> Path:
    return write_text(path, json.dumps(_jsonable(obj), indent=1, sort_keys=False) + "\n")


def write_geometry(outdir: Path, name: str, geom: CouplingGeometry) -> None:
    write_json(outdir / f"geometry_{name}.json", geom.to_dict())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subject", *[geom.col_ids[j] for j in geom.col_order]])
    for rid, row in zip(geom.row_tree.leaves, geom.matrix):
        w.writerow([rid, *(f"{v:g}" for v in row)])
    write_text(outdir / f"geometry_{name}.csv", buf.getvalue())


def histogram_dump(coded: DigitalCodedMatrix) -> dict:
    return {c.source_feature: c.histogram.to_dict() for c in coded.columns if c.histogram is not None}


def _group_counts(coded: DigitalCodedMatrix, feature: str, resp_codes) -> np.ndarray | None:
    col = coded.column(feature)
    if col.histogram is None or resp_codes is None:
        return None
    labels = np.unique(resp_codes)
    out = np.zeros((col.histogram.k, labels.size), dtype=int)
    for code, r in zip(col.codes, resp_codes):
        out[code, np.searchsorted(labels, r)] += 1
    return out


def write_pipeline(result: PipelineResult, outdir: Path, name: str) -> list[str]:
    """Write every export and figure of a pipeline run; return the file names."""
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    with atomic_path(outdir / "coded.csv") as tmp:
        result.coded.to_csv(tmp)
    write_json(outdir / "histograms.json", histogram_dump(result.coded))
    with atomic_path(outdir / "xi_response.csv") as tmp:
        result.xi_response.to_csv(tmp)
    with atomic_path(outdir / "xi_covariate.csv") as tmp:
        result.xi_covariate.to_csv(tmp)
    write_json(outdir / "covariate_groups.json", [g.to_dict() for g in result.cov_groups])
    write_geometry(outdir, "response", result.resp_geometry)
    write_geometry(outdir, "all", result.all_geometry)
    for i, geom in enumerate(result.stage_geometries, start=1):
        write_geometry(outdir, f"stage{i}", geom)
    write_json(outdir / "flow.json", result.flow.to_dict())
    write_json(outdir / "reports.json", {str(k): r.to_dict() for k, r in result.reports.items()})
    write_json(outdir / "config.json", result.config.to_dict())
    write_json(outdir / "summary.json", result.summary())

    truth = result.flow.truth
    resp_codes = None
    if len(result.resp_features) == 1 and result.coded.column(result.resp_features[0]).histogram is None:
        resp_codes = result.coded.codes(result.resp_features[0])
    for c in result.coded.columns:
        if c.histogram is not None:
            svg = render_histogram(c.histogram, _group_counts(result.coded, c.source_feature, resp_codes), title=c.source_feature)
            write_text(outdir / f"{name}_histogram_{c.source_feature}.svg", svg)
    cfg = result.config
    write_text(
        outdir / f"{name}_geometry_all.svg",
        render_geometry(result.all_geometry, cfg.cov_k[0], 1, row_labels=truth, title=f"{name}: all covariates",
                        extra_row_levels=cfg.report_k),
    )
    for i, (geom, st) in enumerate(zip(result.stage_geometries, result.flow.stages), start=1):
        write_text(
            outdir / f"{name}_geometry_stage{i}.svg",
            render_geometry(geom, st.cov_k, 1, row_labels=truth, title=f"{name}: stage {i}"),
        )
    write_text(outdir / f"{name}_flow_all.svg", render_flow(result.flow, title=f"{name}: information flow"))
    written.extend(sorted(p.name for p in outdir.iterdir() if not p.name.startswith(".")))
    return written


# ---------------------------------------------------------------- config


def _parse_int_list(text: str | None):
    if text is None:
        return None
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from None


def _config_from_args(args) -> RunConfig:
    doc = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = yaml.safe_load(fh) or {}
        except OSError:
            raise
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a mapping")
    flags = {
        "dataset": args.dataset,
        "csv": args.csv,
        "manifest": args.manifest,
        "log_base": args.log_base,
        "max_bins": args.max_bins,
        "gap_factor": args.gap_factor,
        "scale_count": args.scale_count,
        "ce_threshold": args.ce_threshold,
        "resp_k": getattr(args, "resp_k", None),
        "cov_k": _parse_int_list(getattr(args, "cov_k", None)),
        "report_k": _parse_int_list(getattr(args, "report_k", None)),
        "n_sims": getattr(args, "n_sims", None),
        "seed": args.seed,
        "max_iter": getattr(args, "max_iter", None),
    }
    if getattr(args, "resp_feature", None):
        flags["resp_features"] = [v for v in args.resp_feature.split(",") if v]
    serial = getattr(args, "serial", None)
    if serial is not None:
        flags["serial"] = "all" if serial == "all" else _parse_int_list(serial)
    for k, v in flags.items():
        if v is not None:
            doc[k] = v
    if doc.get("csv") is not None and "dataset" in doc and args.dataset is None:
        doc.pop("dataset")
    return RunConfig.from_dict(doc)


def resolve_output_dir(args, config: RunConfig | None = None) -> Path:
    """``--output-dir``, then ``$INFOFLOW_OUTPUT_DIR``, then the config, then a default."""
    if getattr(args, "output_dir", None):
        return Path(args.output_dir)
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env)
    if config is not None and config.output_dir:
        return Path(config.output_dir)
    return Path(DEFAULT_OUTPUT_DIR)


def _ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path} is not writable")
    return path


def _dataset_name(config: RunConfig) -> str:
    return config.dataset if config.dataset else Path(config.csv).stem


# ---------------------------------------------------------------- commands


def cmd_ingest_check(args) -> int:
    with _step("config"):
        config = _config_from_args(args)
    with _step("ingest"):
        table = load_input(config)
    info = {
        "n": table.n,
        "m": table.m,
        "response": table.names_with_role("response"),
        "covariate": table.names_with_role("covariate"),
        "dtypes": {f.name: f.dtype for f in table.manifest},
    }
    print(json.dumps(info, indent=1))
    return EXIT_OK


def cmd_renorm(args) -> int:
    with _step("config"):
        config = _config_from_args(args)
    with _step("ingest"):
        table = load_input(config)
    with _step("renormalize"):
        coded = renormalize_matrix(table, config.max_bins, config.gap_factor, config.log_base)
    with _step("write"):
        out = _ensure_dir(resolve_output_dir(args, config))
        with atomic_path(out / "coded.csv") as tmp:
            coded.to_csv(tmp)
        write_json(out / "histograms.json", histogram_dump(coded))
        if args.figures:
            for c in coded.columns:
                if c.histogram is not None:
                    write_text(out / f"{_dataset_name(config)}_histogram_{c.source_feature}.svg",
                               render_histogram(c.histogram, title=c.source_feature))
    print(out / "coded.csv")
    return EXIT_OK


def cmd_xi(args) -> int:
    with _step("ingest"):
        coded = DigitalCodedMatrix.from_csv(args.coded)
    with _step("entropy"):
        names = coded.feature_names if args.side == "all" else coded.names_with_role(args.side)
        if args.features:
            names = [v for v in args.features.split(",") if v]
        xi = entropy_matrix(coded, names, args.log_base or "natural")
    with _step("write"):
        out = _ensure_dir(resolve_output_dir(args))
        target = out / f"xi_{args.side if not args.features else 'custom'}.csv"
        with atomic_path(target) as tmp:
            xi.to_csv(tmp)
    print(target)
    return EXIT_OK


def cmd_tree(args) -> int:
    with _step("ingest"):
        if args.xi:
            xi = EntropyMatrix.from_csv(args.xi)
        else:
            coded = DigitalCodedMatrix.from_csv(args.coded)
    scale = None if args.scale_count == 0 else args.scale_count
    with _step("tree"):
        if args.xi:
            tree = feature_tree(xi, scale)
            groups = synergistic_groups(xi, tree, args.ce_threshold)
            stem = Path(args.xi).stem
        else:
            names = [v for v in args.features.split(",")] if args.features else coded.feature_names
            tree = build_ultrametric_tree(l1_distances(coded.matrix(names)), scale, args.seed, ids=coded.subjects)
            groups = None
            stem = "subjects"
    with _step("write"):
        out = _ensure_dir(resolve_output_dir(args))
        with atomic_path(out / f"tree_{stem}.json") as tmp:
            tree.to_json(tmp)
        if groups is not None:
            write_json(out / f"groups_{stem}.json", [g.to_dict() for g in groups])
    print(out / f"tree_{stem}.json")
    return EXIT_OK


def cmd_dm(args) -> int:
    with _step("ingest"):
        coded = DigitalCodedMatrix.from_csv(args.coded)
    with _step("mechanics"):
        if args.features:
            names = [v for v in args.features.split(",") if v]
        else:
            names = coded.names_with_role(args.side) if args.side != "all" else coded.feature_names
        scale = None if args.scale_count == 0 else args.scale_count
        geom = data_mechanics(
            coded.matrix(names), args.max_iter, scale, args.seed or DEFAULT_SEED,
            row_ids=coded.subjects, col_ids=names, row_levels=_parse_int_list(args.row_levels) or (),
        )
    with _step("write"):
        out = _ensure_dir(resolve_output_dir(args))
        write_geometry(out, args.name, geom)
        if args.figure:
            rk = (_parse_int_list(args.row_levels) or [2])[0]
            write_text(out / f"geometry_{args.name}.svg", render_geometry(geom, rk, 1))
    print(out / f"geometry_{args.name}.json")
    return EXIT_OK


def cmd_flow(args) -> int:
    with _step("ingest"):
        resp_geom = CouplingGeometry.from_json(args.response)
        geoms = [CouplingGeometry.from_json(p) for p in args.geometry]
    with _step("config"):
        cov_k = _parse_int_list(args.cov_k) or [3]
        if len(cov_k) == 1:
            cov_k = cov_k * len(geoms)
        if len(cov_k) != len(geoms):
            raise ConfigError("give one --cov-k per geometry, or a single value")
    with _step("flow"):
        stages = [(FeatureGroup(tuple(g.col_ids), i, float("nan")), g, k) for i, (g, k) in enumerate(zip(geoms, cov_k), start=1)]
        flow = serial_flow(resp_geom.row_tree, args.resp_k, stages, args.log_base or "natural",
                           args.n_sims, args.seed or DEFAULT_SEED, stream=(STREAM_FLOW,))
    with _step("write"):
        out = _ensure_dir(resolve_output_dir(args))
        write_json(out / "flow.json", flow.to_dict())
        write_text(out / f"{args.name}.svg", render_flow(flow))
    print(out / "flow.json")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    with _step("config"):
        config = _config_from_args(args)
    with _step("write"):
        out = _ensure_dir(resolve_output_dir(args, config))
    with _step("pipeline"):
        result = run_pipeline(config)
    with _step("write"):
        write_pipeline(result, out, _dataset_name(config))
    print(out / "summary.json")
    return EXIT_OK


def cmd_casestudy(args) -> int:
    with _step("config"):
        if args.name not in CASESTUDIES:
            raise UnknownDataset(f"unknown case study {args.name!r}; choose from {', '.join(CASESTUDIES)}")
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.n_sims is not None:
            overrides["n_sims"] = args.n_sims
    with _step("write"):
        out = _ensure_dir(resolve_output_dir(args))
    with _step("casestudy"):
        summary, results = run_casestudy(args.name, overrides)
    with _step("write"):
        for run_name, res in results.items():
            write_pipeline(res, out / run_name, args.name)
        write_json(out / "summary.json", summary)
    for c in summary["checks"]:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status} {c['label']}: computed={_short(c['computed'])} expected={c['expected']}")
    print(out / "summary.json")
    return EXIT_OK


def _short(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    if isinstance(v, dict):
        return json.dumps(_jsonable({k: w for k, w in v.items() if k not in ("p_values", "purity_table", "all_entropies")}))
    return str(v)


# ---------------------------------------------------------------- parser


def _add_input(p):
    p.add_argument("--config", help="YAML file with run-configuration keys")
    p.add_argument("--dataset", choices=BUILTIN_DATASETS)
    p.add_argument("--csv")
    p.add_argument("--manifest")
    p.add_argument("--log-base", choices=("natural", "two"))
    p.add_argument("--max-bins", type=int)
    p.add_argument("--gap-factor", type=float)
    p.add_argument("--scale-count", type=int)
    p.add_argument("--ce-threshold", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="infoflow", description="Information flows between response and covariate matrices.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-check", help="load a table and print its shape and roles")
    _add_input(p)
    p.set_defaults(func=cmd_ingest_check)

    p = sub.add_parser("renorm", help="digitally code every feature")
    _add_input(p)
    p.add_argument("--figures", action="store_true", help="also draw one histogram per continuous feature")
    p.set_defaults(func=cmd_renorm)

    p = sub.add_parser("xi", help="mutual conditional-entropy matrix of coded features")
    p.add_argument("--coded", required=True)
    p.add_argument("--side", choices=("response", "covariate", "all"), default="covariate")
    p.add_argument("--features", help="comma-separated feature names (overrides --side)")
    p.add_argument("--log-base", choices=("natural", "two"))
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_xi)

    p = sub.add_parser("tree", help="feature tree and synergistic groups from a Xi matrix, or a subject tree")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--xi")
    src.add_argument("--coded")
    p.add_argument("--features")
    p.add_argument("--scale-count", type=int, default=3, help="0 keeps every merge level")
    p.add_argument("--ce-threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_tree)

    p = sub.add_parser("dm", help="seriate coded features into a coupling geometry")
    p.add_argument("--coded", required=True)
    p.add_argument("--features")
    p.add_argument("--side", choices=("response", "covariate", "all"), default="covariate")
    p.add_argument("--name", default="geometry")
    p.add_argument("--row-levels", help="comma-separated cluster counts to keep in the row tree")
    p.add_argument("--max-iter", type=int, default=10)
    p.add_argument("--scale-count", type=int, default=3)
    p.add_argument("--seed", type=int)
    p.add_argument("--figure", action="store_true")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_dm)

    p = sub.add_parser("flow", help="link a response geometry to covariate geometries")
    p.add_argument("--response", required=True, help="response geometry JSON")
    p.add_argument("--geometry", required=True, action="append", help="covariate geometry JSON (repeat for serial stages)")
    p.add_argument("--resp-k", type=int, default=2)
    p.add_argument("--cov-k")
    p.add_argument("--n-sims", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--log-base", choices=("natural", "two"))
    p.add_argument("--name", default="flow")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("pipeline", help="run every step and write all reports and figures")
    _add_input(p)
    p.add_argument("--resp-feature", help="comma-separated response features (default: every response)")
    p.add_argument("--resp-k", type=int)
    p.add_argument("--cov-k", help="comma-separated cluster counts, one per stage or one for all")
    p.add_argument("--report-k", help="extra cluster counts reported on the all-covariate geometry")
    p.add_argument("--serial", help="'all', or comma-separated synergistic group ids in stage order")
    p.add_argument("--n-sims", type=int)
    p.add_argument("--max-iter", type=int)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("casestudy", help="run a bundled case study and compare with reference values")
    p.add_argument("name", help=f"one of {', '.join(CASESTUDIES)}")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-sims", type=int)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_casestudy)

    sub.add_parser("datasets", help="list built-in datasets available here").set_defaults(
        func=lambda args: print("\n".join(available_datasets())) or EXIT_OK
    )
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, UnknownDataset)):
        return EXIT_CONFIG
    if isinstance(exc, (OSError, IngestError, DatasetUnavailable)):
        return EXIT_IO
    return EXIT_ANALYSIS


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StepError as err:
        code = _exit_code(err.exc)
        report = {"error": type(err.exc).__name__, "step": err.step, "message": str(err.exc), "exit_code": code}
        print(json.dumps(report), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
