"""``semgsvm`` command-line entry point.

Exit codes: 0 success, 2 invalid input, 3 partial experiment failure,
4 missing input, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import DEFAULT_SEED, RunConfig
from .errors import PlanError, SemgError
from .features import FeatureKind, FeatureSet
from .harness import (
    SmoothingConfig,
    accuracy,
    acquisition_features,
    confusion,
    load_features,
    missing_acquisitions,
    per_class_recall,
    preprocess,
    rank_movements,
    run_protocol,
    smooth_predictions,
)
from .ingest import VALID_ACQUISITION_IDS, diagnose_file, load_acquisition
from .report import FIGURES, write_report
from .svm import DEFAULT_CACHE_BYTES, SvmModel, evaluate_grid, train_multiclass, KernelParams
from .synth import SynthConfig, generate_dataset, label_path, signal_path

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL, EXIT_MISSING, EXIT_IO = 0, 2, 3, 4, 5

log = logging.getLogger("semgsvm")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s level=%(levelname)s %(message)s"))
    root = logging.getLogger("semgsvm")
    root.handlers[:] = [handler]
    root.setLevel(getattr(logging, level.upper()))
    root.propagate = False


def _run_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {
        "seed": getattr(args, "seed", None),
        "part": getattr(args, "part", None),
        "features": getattr(args, "feature", None),
        "smoothing": getattr(args, "smoothing", None),
        "workers": getattr(args, "workers", None),
        "data_dir": getattr(args, "data_dir", None),
        "out_dir": getattr(args, "out_dir", None),
    }
    return cfg.override(**overrides)


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"missing input: {p}", EXIT_MISSING)
    return p


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def _ensure_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
        probe = p / ".semgsvm-write-probe"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"output directory {p} is not writable: {exc}", EXIT_IO) from exc
    return p


def _load_raw(args):
    return load_acquisition(_require_file(args.signal), _require_file(args.labels), args.acq)


# --------------------------------------------------------------------------
# commands


def _file_kind(path: Path) -> str:
    return "labels" if "label" in path.name.lower() else "signal"


def cmd_validate(args) -> int:
    paths: list[tuple[Path, str]] = []
    if args.data_dir:
        data = Path(args.data_dir)
        missing = missing_acquisitions(data, VALID_ACQUISITION_IDS)
        if missing:
            raise CliError(f"missing input: acquisition {missing[0]} in {data}", EXIT_MISSING)
        for acq in VALID_ACQUISITION_IDS:
            paths += [(signal_path(data, acq), "signal"), (label_path(data, acq), "labels")]
    for p in args.paths:
        paths.append((_require_file(p), args.kind or _file_kind(Path(p))))
    if not paths:
        raise CliError("nothing to validate: give files or --data-dir", EXIT_INVALID)

    bad = 0
    for path, kind in paths:
        try:
            d = diagnose_file(path, kind)
        except OSError as exc:
            raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
        extra = f"channels={d.channels}" if kind == "signal" else f"labels={d.label_min}..{d.label_max}"
        status = "ok" if d.ok else "invalid"
        print(f"{path}: {status} kind={kind} rows={d.rows} {extra} monotonic={'yes' if d.monotonic else 'no'}")
        for e in d.errors:
            print(f"  {path}: {e}")
        bad += not d.ok
    return EXIT_INVALID if bad else EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = _run_config(args)
    raw = _load_raw(args)
    pre = preprocess(raw, cfg.pipeline)
    out = _ensure_dir(args.out_dir)
    sig = pre.signal
    body = np.column_stack([sig.times, sig.channels, sig.labels])
    lines = ["# time " + " ".join(f"ch{c + 1}" for c in range(sig.channels.shape[1])) + " label"]
    lines += [" ".join(repr(float(v)) for v in row[:-1]) + f" {int(row[-1])}" for row in body]
    _write_text(out / f"acq_{args.acq:02d}_preprocessed.txt", "\n".join(lines) + "\n")
    _write_text(out / f"acq_{args.acq:02d}_var.json", pre.var_model.to_json() + "\n")
    _write_text(out / f"acq_{args.acq:02d}_filter.json", json.dumps(pre.filter.to_dict(), sort_keys=True) + "\n")
    log.info("stage=preprocess cell=acq%d samples=%d", args.acq, len(sig.labels))
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = _run_config(args)
    raw = _load_raw(args)
    sets = acquisition_features(raw, cfg.pipeline, cfg.feature_kinds)
    out = _ensure_dir(args.out_dir)
    for kind, fs in sets.items():
        path = out / f"acq_{args.acq:02d}_{kind.value}.csv"
        try:
            fs.save(path)
        except OSError as exc:
            raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc
        print(f"{path}: {len(fs)} windows")
    return EXIT_OK


def _load_sets(paths) -> FeatureSet:
    sets = [FeatureSet.load(_require_file(p)) for p in paths]
    return sets[0] if len(sets) == 1 else FeatureSet.concat(sets)


def cmd_train(args) -> int:
    cfg = _run_config(args)
    train = _load_sets(args.train)
    if args.c is not None and args.gamma is not None:
        c, g, vacc = args.c, args.gamma, None
    else:
        if not args.validation:
            raise CliError("--validation is required unless both --c and --gamma are given", EXIT_INVALID)
        result = evaluate_grid(train, {"validation": _load_sets(args.validation)}, cfg.grid, workers=cfg.workers)
        c, g, vacc = result.best("validation")
    model = train_multiclass(train, c, KernelParams(g), cache_bytes=DEFAULT_CACHE_BYTES)
    _write_text(Path(args.out), model.to_json() + "\n")
    shown = "n/a" if vacc is None else f"{vacc:.4f}"
    print(f"C={c!r} gamma={g!r} validation_accuracy={shown} machines={len(model.machines)}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = SvmModel.from_json(_require_file(args.model).read_text(encoding="utf-8"))
    test = _load_sets(args.features)
    raw_pred = model.predict(test.vectors)
    options = {"off": [False], "on": [True], "both": [False, True]}[args.smoothing]
    results = []
    for flag in options:
        pred = smooth_predictions(raw_pred, SmoothingConfig(flag, args.smoothing_k))
        cm = confusion(pred, test.labels)
        acc = accuracy(pred, test.labels)
        recall = per_class_recall(cm)
        results.append({
            "smoothing": flag,
            "accuracy": acc,
            "confusion": cm.tolist(),
            "recall": [None if np.isnan(r) else float(r) for r in recall],
            "ranking": rank_movements(cm),
        })
        print(f"smoothing={'on' if flag else 'off'} accuracy={acc:.4f} windows={len(pred)}")
    if args.out:
        _write_text(Path(args.out), json.dumps({"results": results}, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def _input_digest(data_dir: Path, acquisitions) -> str:
    h = hashlib.sha256()
    for acq in acquisitions:
        for path in (signal_path(data_dir, acq), label_path(data_dir, acq)):
            with open(path, "rb") as fh:
                for block in iter(lambda: fh.read(1 << 20), b""):
                    h.update(block)
    return h.hexdigest()


def cmd_repro(args) -> int:
    cfg = _run_config(args)
    if not cfg.data_dir or not cfg.out_dir:
        raise CliError("repro needs --data-dir and --out-dir (or data_dir/out_dir in the config)", EXIT_INVALID)
    data = Path(cfg.data_dir)
    missing = missing_acquisitions(data, VALID_ACQUISITION_IDS)
    if missing:
        raise CliError(f"missing input: acquisition {missing[0]} has no signal/label file pair in {data}", EXIT_MISSING)
    out = _ensure_dir(cfg.out_dir)

    try:
        features = load_features(data, VALID_ACQUISITION_IDS, cfg.pipeline, cfg.feature_kinds)
    except PlanError as exc:
        raise CliError(f"missing input: {exc}", EXIT_MISSING) from exc
    echo = cfg.to_dict(include_paths=False)
    echo["input_sha256"] = _input_digest(data, VALID_ACQUISITION_IDS)
    report = run_protocol(
        features,
        cfg.seed,
        parts=cfg.parts,
        kinds=cfg.feature_kinds,
        smoothing=cfg.smoothing_options,
        grid=cfg.grid,
        fraction=cfg.train_fraction,
        workers=cfg.workers,
        config_echo=echo,
    )
    figures = args.emit_figure_data if args.emit_figure_data is not None else FIGURES
    try:
        written = write_report(report, out, figures)
        _write_text(out / "run.cfg", cfg.to_text())
    except OSError as exc:
        raise CliError(f"cannot write reports to {out}: {exc}", EXIT_IO) from exc
    for path in written:
        log.info("stage=report cell=- wrote %s", path)
    ok = sum(c.status == "ok" for c in report.cells)
    print(f"{ok}/{len(report.cells)} cells ok; reports in {out}")
    for c in report.failed:
        print(f"failed part={c.part} train={c.train_acq} test={c.test_acq} feature={c.feature}: {c.reason}")
    return EXIT_PARTIAL if report.failed else EXIT_OK


def cmd_synth(args) -> int:
    cfg = SynthConfig(seed=args.seed if args.seed is not None else DEFAULT_SEED, drift=not args.no_drift)
    out = _ensure_dir(args.out_dir)
    try:
        manifest = generate_dataset(out, cfg)
    except OSError as exc:
        raise CliError(f"cannot write synthetic data to {out}: {exc}", EXIT_IO) from exc
    print(f"wrote {2 * len(manifest['acquisitions'])} data files and manifest.json to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="commented key = value run configuration")
    p.add_argument("--seed", type=int, help=f"split seed (default {DEFAULT_SEED})")
    p.add_argument("--workers", type=int, help="grid-search threads")


def _add_acquisition_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--signal", required=True, help="EMG file")
    p.add_argument("--labels", required=True, help="label file")
    p.add_argument("--acq", type=int, default=0, help="acquisition id")
    p.add_argument("--out-dir", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semgsvm", description="sEMG movement classification pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check signal and label files")
    p.add_argument("paths", nargs="*", help="files to check")
    p.add_argument("--data-dir", help="check every acquisition pair in a directory")
    p.add_argument("--kind", choices=["signal", "labels"], help="force the file kind")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("preprocess", help="synchronize, relabel, whiten and filter one acquisition")
    _add_acquisition_options(p)
    _add_run_options(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("features", help="window features for one acquisition")
    _add_acquisition_options(p)
    _add_run_options(p)
    p.add_argument("--feature", choices=["mav", "wl", "both"])
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="grid-search and fit a multiclass model")
    p.add_argument("--train", nargs="+", required=True, help="training feature CSVs")
    p.add_argument("--validation", nargs="+", help="validation feature CSVs")
    p.add_argument("--c", type=float, help="skip the grid and use this C")
    p.add_argument("--gamma", type=float, help="skip the grid and use this gamma")
    p.add_argument("--out", required=True, help="model JSON")
    _add_run_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a model on a feature CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--features", nargs="+", required=True)
    p.add_argument("--smoothing", choices=["on", "off", "both"], default="both")
    p.add_argument("--smoothing-k", type=int, default=5)
    p.add_argument("--out", help="JSON with confusion matrices and rankings")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("repro", help="run the full two-part protocol")
    p.add_argument("--data-dir")
    p.add_argument("--out-dir")
    _add_run_options(p)
    p.add_argument("--part", choices=["1", "2", "both"])
    p.add_argument("--feature", choices=["mav", "wl", "both"])
    p.add_argument("--smoothing", choices=["on", "off", "both"])
    p.add_argument("--emit-figure-data", type=int, nargs="*", choices=FIGURES,
                   help="plot-data CSVs to write (default: all)")
    p.set_defaults(func=cmd_repro)

    p = sub.add_parser("synth", help="write a seeded synthetic dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-drift", action="store_true", help="disable between-session drift")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.log_level)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"semgsvm: {exc}", file=sys.stderr)
        return exc.code
    except SemgError as exc:
        print(f"semgsvm: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"semgsvm: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
