"""Config-driven command line tying the suite together.

Subcommands: synth, preprocess, train, finetune, bench, scale, report.
Every command reads a JSON config of flat dotted keys (``{"train.epochs": 5}``)
plus ``--set key=value`` overrides, writes its artifacts under ``--out``, and
drops a ``run_manifest.json`` echoing the fully-resolved spec together with
SHA-256 hashes of every input and output, so any run can be replayed and
verified from its manifest alone.

Exit codes: 0 success, 2 usage or data error, 3 recorded training failure
(results are still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .backbones import (
    ConfigError,
    ModelConfig,
    SequenceLengthError,
    default_config,
    param_count,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .datapipe import (
    PipelineConfig,
    SessionFormatError,
    SynthConfig,
    generate_synthetic_session,
    load_session,
    prepare_session,
    save_session,
)
from .harness import (
    DivergenceError,
    HarnessError,
    Strategy,
    TrainConfig,
    finetune_new_session,
    scaling_sweep,
    train_multi_session,
    train_single_session,
)
from .metrics import (
    EvaluationError,
    MetricsRecord,
    NOT_RECOVERED,
    UndefinedR2Error,
    bench_latency,
    read_metrics_csv,
    write_metrics_csv,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_TRAINING = 3

LATENCY_COLUMNS = ("model", "row_type", "s", "window_ms", "samples", "median_s", "p95_s", "threads", "ratio")
SCALE_COLUMNS = ("model", "layers", "params", "r2_mean", "r2_stderr", "n_converged", "n_seeds", "status")
CURVE_COLUMNS = ("seconds", "r2_avg")


class CliError(Exception):
    """A usage or data problem the caller can fix; maps to exit code 2."""


# -- run specs ---------------------------------------------------------------------


class RunSpec:
    """Fully-resolved flat dotted-key configuration for one command."""

    def __init__(self, command: str, values: dict):
        self.command = command
        self.values = dict(values)

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def require(self, key: str):
        if key not in self.values:
            raise CliError(f"config is missing required key {key!r}")
        return self.values[key]

    def to_dict(self) -> dict:
        return {k: self.values[k] for k in sorted(self.values)}


def _resolve_spec(command: str, config_path, overrides, out_dir) -> RunSpec:
    values: dict = {}
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise CliError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise CliError(f"{path}: invalid JSON: {err}") from err
        if not isinstance(data, dict):
            raise CliError(f"{path}: config must be a JSON object of flat dotted keys")
        for key, value in data.items():
            if isinstance(value, dict):
                raise CliError(f"{path}: key {key!r} is nested; use flat dotted keys")
            values[key] = value
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise CliError(f"--set expects key=value, got {item!r}")
        try:
            values[key] = json.loads(raw)
        except json.JSONDecodeError:
            values[key] = raw
    if out_dir is not None:
        values["out"] = out_dir
    return RunSpec(command, values)


# Namespaces that are not backed by a dataclass (those are checked field-by-field in
# _collect_fields) accept exactly these keys; anything else is a typo worth rejecting.
_FREEFORM_KEYS = {
    "data": {"paths", "dir"},
    "finetune": {"base", "max_increments", "threshold"},
    "bench": {"checkpoints", "checkpoint", "s_list", "warmup", "samples", "seed"},
    "scale": {"layer_counts", "seeds"},
    "report": {"dir"},
}


def _check_namespaces(spec: RunSpec, allowed: set) -> None:
    for key in spec.values:
        if key == "out":
            continue
        namespace, dot, field_name = key.partition(".")
        if not dot or not field_name:
            raise CliError(f"config keys must look like 'namespace.field', got {key!r}")
        if namespace not in allowed:
            raise CliError(
                f"unknown config key {key!r} for {spec.command!r} "
                f"(allowed namespaces: {sorted(allowed)})"
            )
        known = _FREEFORM_KEYS.get(namespace)
        if known is not None and field_name not in known:
            options = sorted(f"{namespace}.{k}" for k in known)
            raise CliError(f"unknown config key {key!r} (expected one of: {options})")


def _collect_fields(spec: RunSpec, prefix: str, cls, skip=()) -> dict:
    valid = {f.name for f in fields(cls)} - set(skip)
    out = {}
    for key, value in spec.values.items():
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1 :]
        if name in skip:
            continue
        if name not in valid:
            raise CliError(f"unknown config key {key!r} (no such {cls.__name__} field)")
        out[name] = value
    return out


def _out_dir(spec: RunSpec) -> Path:
    out = spec.get("out")
    if out is None:
        raise CliError("an output directory is required (--out or the 'out' config key)")
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as err:
        raise CliError(f"output directory {path} is not writable: {err}") from err
    return path


# -- hashing and manifests ------------------------------------------------------------


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_path(path: Path) -> str:
    """Hash a file, or a directory tree by relative names + contents."""
    if path.is_file():
        return _sha256_file(path)
    h = hashlib.sha256()
    for child in sorted(p for p in path.rglob("*") if p.is_file()):
        h.update(str(child.relative_to(path)).encode())
        h.update(bytes.fromhex(_sha256_file(child)))
    return h.hexdigest()


def _write_manifest(out: Path, spec: RunSpec, inputs: dict, outputs: list, extra: dict | None = None) -> Path:
    manifest = {
        "command": spec.command,
        "spec": spec.to_dict(),
        "version": f"ndbench-{__version__}",
        "inputs": {str(label): _hash_path(Path(p)) for label, p in sorted(inputs.items())},
        "outputs": {
            str(Path(p).relative_to(out)): _sha256_file(Path(p)) for p in sorted(outputs, key=str)
        },
    }
    if extra:
        manifest.update(extra)
    path = out / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# -- shared loading helpers --------------------------------------------------------------


def _data_paths(spec: RunSpec) -> list:
    paths = spec.get("data.paths")
    if paths is None:
        root = spec.get("data.dir")
        if root is None:
            raise CliError("config needs data.paths (list of bundles) or data.dir")
        root = Path(root)
        if not root.is_dir():
            raise CliError(f"data.dir does not exist: {root}")
        paths = sorted(p for p in root.iterdir() if p.is_dir() and (p / "manifest.json").exists())
        if not paths:
            raise CliError(f"no session bundles found under {root}")
        return paths
    if isinstance(paths, str):
        paths = [paths]
    resolved = [Path(p) for p in paths]
    for p in resolved:
        if not (p / "manifest.json").exists():
            raise CliError(f"not a session bundle (no manifest.json): {p}")
    return resolved


def _pipeline_config(spec: RunSpec) -> PipelineConfig:
    return PipelineConfig(**_collect_fields(spec, "pipeline", PipelineConfig))


def _load_prepared(spec: RunSpec):
    paths = _data_paths(spec)
    pcfg = _pipeline_config(spec)
    preps = [prepare_session(load_session(p), pcfg) for p in paths]
    channels = {p.x.shape[1] for p in preps}
    if len(channels) != 1:
        raise CliError(f"sessions disagree on channel count: {sorted(channels)}")
    return paths, preps


def _model_config(spec: RunSpec, input_channels: int) -> ModelConfig:
    kind = spec.require("model.kind")
    overrides = _collect_fields(spec, "model", ModelConfig, skip=("kind",))
    overrides.setdefault("input_channels", input_channels)
    try:
        return default_config(kind, **overrides)
    except ConfigError as err:
        raise CliError(str(err)) from err


def _train_config(spec: RunSpec, multi: bool) -> TrainConfig:
    overrides = _collect_fields(spec, "train", TrainConfig, skip=("strategy",))
    if "train.strategy" in spec.values:
        overrides["strategy"] = Strategy.from_name(spec.values["train.strategy"])
    cfg = TrainConfig.multi_session(**overrides) if multi else TrainConfig.single_session(**overrides)
    cfg.validate()
    return cfg


def _failed_record(experiment: str, kind: str, params: int, seed: int) -> MetricsRecord:
    nan = float("nan")
    return MetricsRecord(
        experiment=experiment,
        model=kind,
        session="not_converged",
        date_index=-1,
        r2_x=nan,
        r2_y=nan,
        r2_avg=nan,
        params=params,
        seed=seed,
    )


# -- commands ---------------------------------------------------------------------------


def cmd_synth(spec: RunSpec) -> int:
    _check_namespaces(spec, {"synth"})
    out = _out_dir(spec)
    days = int(spec.get("synth.days", 1))
    if days < 1:
        raise CliError(f"synth.days must be >= 1, got {days}")
    kwargs = _collect_fields(spec, "synth", SynthConfig, skip=("days",))
    if kwargs.get("preferred_directions") is not None:
        kwargs["preferred_directions"] = tuple(kwargs["preferred_directions"])
    cfg = SynthConfig(**kwargs)
    try:
        cfg.validate()
    except ValueError as err:
        raise CliError(str(err)) from err

    outputs = []
    for day in range(days):
        raw = generate_synthetic_session(cfg, day=day)
        bundle = save_session(raw, out / f"day_{day:03d}")
        outputs.extend(sorted(p for p in bundle.rglob("*") if p.is_file()))
    _write_manifest(out, spec, inputs={}, outputs=outputs)
    print(f"wrote {days} synthetic session bundle(s) under {out}")
    return EXIT_OK


def cmd_preprocess(spec: RunSpec) -> int:
    _check_namespaces(spec, {"data", "pipeline"})
    out = _out_dir(spec)
    paths, preps = _load_prepared(spec)
    outputs = []
    for prep in preps:
        summary = {
            "session_id": prep.session_id,
            "date_index": prep.date_index,
            "n_bins": prep.n_bins,
            "channels": prep.x.shape[1],
            "train_bins": [prep.train.start, prep.train.stop],
            "test_bins": [prep.test.start, prep.test.stop],
            "bin_ms": prep.bin_ms,
            "stats": prep.stats.to_dict(),
        }
        path = out / f"{prep.session_id}.json"
        path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        outputs.append(path)
    _write_manifest(out, spec, inputs={str(p): p for p in paths}, outputs=outputs)
    print(f"preprocessed {len(preps)} session(s) into {out}")
    return EXIT_OK


def cmd_train(spec: RunSpec) -> int:
    _check_namespaces(spec, {"data", "model", "train", "pipeline"})
    out = _out_dir(spec)
    paths, preps = _load_prepared(spec)
    mcfg = _model_config(spec, preps[0].x.shape[1])
    tcfg = _train_config(spec, multi=len(preps) > 1)
    experiment = "multi_session" if len(preps) > 1 else "single_session"
    inputs = {str(p): p for p in paths}

    try:
        if len(preps) == 1:
            result = train_single_session(preps[0], mcfg, tcfg)
        else:
            result = train_multi_session(preps, mcfg, tcfg)
    except DivergenceError as err:
        metrics_path = write_metrics_csv(
            [_failed_record(experiment, mcfg.kind, param_count(mcfg), tcfg.seed)], out / "metrics.csv"
        )
        _write_manifest(
            out, spec, inputs=inputs, outputs=[metrics_path],
            extra={"status": "not_converged", "error": str(err)},
        )
        print(f"training failed to converge: {err}", file=sys.stderr)
        return EXIT_TRAINING

    ckpt_path = save_checkpoint(result.checkpoint, out / "checkpoint.ckpt")
    records = [result.record, *result.per_session]
    metrics_path = write_metrics_csv(records, out / "metrics.csv")
    history_path = out / "history.json"
    history_path.write_text(
        json.dumps(
            {
                "loss_per_epoch": result.history,
                "epochs_run": result.epochs_run,
                "retries": result.retries,
                "learning_rate": result.learning_rate,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    _write_manifest(out, spec, inputs=inputs, outputs=[ckpt_path, metrics_path, history_path])
    print(
        f"trained {mcfg.kind} on {len(preps)} session(s): r2_avg={result.record.r2_avg:.4f} "
        f"after {result.epochs_run} epoch(s); artifacts in {out}"
    )
    return EXIT_OK


def cmd_finetune(spec: RunSpec) -> int:
    _check_namespaces(spec, {"data", "train", "finetune", "pipeline"})
    out = _out_dir(spec)
    base_path = spec.get("finetune.base")
    if base_path is None:
        raise CliError("finetune needs finetune.base (path to the base checkpoint)")
    base_path = Path(base_path)
    if not base_path.exists():
        raise CliError(f"base checkpoint not found: {base_path}")
    base = load_checkpoint(base_path)

    paths, preps = _load_prepared(spec)
    if len(preps) != 1:
        raise CliError(f"finetune expects exactly one new session, got {len(preps)}")
    tcfg = _train_config(spec, multi=False)
    max_increments = spec.get("finetune.max_increments")
    threshold = float(spec.get("finetune.threshold", 0.7))
    inputs = {str(base_path): base_path, **{str(p): p for p in paths}}

    try:
        result = finetune_new_session(
            base,
            preps[0],
            tcfg,
            max_increments=None if max_increments is None else int(max_increments),
            threshold=threshold,
        )
    except DivergenceError as err:
        metrics_path = write_metrics_csv(
            [_failed_record("finetune", base.config.kind, param_count(base.config), tcfg.seed)],
            out / "metrics.csv",
        )
        _write_manifest(
            out, spec, inputs=inputs, outputs=[metrics_path],
            extra={"status": "not_converged", "error": str(err)},
        )
        print(f"fine-tuning failed to converge: {err}", file=sys.stderr)
        return EXIT_TRAINING

    ckpt_path = save_checkpoint(result.checkpoint, out / "checkpoint.ckpt")
    metrics_path = write_metrics_csv([result.record], out / "metrics.csv")
    curve_path = out / "curve.csv"
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for seconds, r2 in result.curve:
            writer.writerow([repr(float(seconds)), repr(float(r2))])
    _write_manifest(out, spec, inputs=inputs, outputs=[ckpt_path, metrics_path, curve_path])
    recovery = result.record.recovery_s
    recovery_text = "never" if recovery is NOT_RECOVERED else (f"{recovery:g}s" if recovery else "n/a")
    print(
        f"fine-tuned {base.config.kind} on {preps[0].session_id}: zero-shot "
        f"r2={result.zero_shot_r2:.4f}, final r2={result.record.r2_avg:.4f}, recovery={recovery_text}"
    )
    return EXIT_OK


def cmd_bench(spec: RunSpec) -> int:
    _check_namespaces(spec, {"bench"})
    out = _out_dir(spec)
    ckpt_paths = spec.get("bench.checkpoints")
    if ckpt_paths is None:
        single = spec.get("bench.checkpoint")
        if single is None:
            raise CliError("bench needs bench.checkpoint or bench.checkpoints")
        ckpt_paths = [single]
    if isinstance(ckpt_paths, str):
        ckpt_paths = [ckpt_paths]
    ckpt_paths = [Path(p) for p in ckpt_paths]
    for p in ckpt_paths:
        if not p.exists():
            raise CliError(f"checkpoint not found: {p}")
    s_list = [int(s) for s in spec.get("bench.s_list", [128, 1024])]
    if not s_list or s_list != sorted(s_list):
        raise CliError(f"bench.s_list must be ascending window lengths, got {s_list}")
    warmup = int(spec.get("bench.warmup", 10))
    samples = int(spec.get("bench.samples", 100))
    seed = int(spec.get("bench.seed", 0))

    rows = []
    ratio_rows = []
    for path in ckpt_paths:
        ckpt = load_checkpoint(path)
        reports = {}
        for s in s_list:
            rep = bench_latency(ckpt, s, warmup=warmup, samples=samples, seed=seed)
            reports[s] = rep
            rows.append(
                [ckpt.config.kind, "latency", rep.s, rep.window_ms, rep.samples,
                 repr(rep.median_s), repr(rep.p95_s), rep.threads, ""]
            )
        if len(s_list) >= 2:
            ratio = reports[s_list[-1]].median_s / reports[s_list[0]].median_s
            ratio_rows.append(
                [ckpt.config.kind, "ratio", f"{s_list[-1]}/{s_list[0]}", "", samples,
                 "", "", reports[s_list[0]].threads, repr(ratio)]
            )

    latency_path = out / "latency.csv"
    with open(latency_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LATENCY_COLUMNS)
        writer.writerows(rows)
        writer.writerows(ratio_rows)
    _write_manifest(out, spec, inputs={str(p): p for p in ckpt_paths}, outputs=[latency_path])
    print(f"benchmarked {len(ckpt_paths)} checkpoint(s) at S={s_list}; wrote {latency_path}")
    return EXIT_OK


def cmd_scale(spec: RunSpec) -> int:
    _check_namespaces(spec, {"data", "model", "train", "scale", "pipeline"})
    out = _out_dir(spec)
    layer_counts = spec.require("scale.layer_counts")
    if not isinstance(layer_counts, (list, tuple)):
        raise CliError("scale.layer_counts must be a list of layer counts")
    seeds = spec.get("scale.seeds", [0, 1, 2])
    if not isinstance(seeds, (list, tuple)):
        raise CliError("scale.seeds must be a list of seeds")
    paths, preps = _load_prepared(spec)
    mcfg = _model_config(spec, preps[0].x.shape[1])
    tcfg = _train_config(spec, multi=len(preps) > 1)

    points = scaling_sweep(mcfg, layer_counts, preps, tcfg, seeds=tuple(seeds))

    scale_path = out / "scale.csv"
    with open(scale_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCALE_COLUMNS)
        for pt in points:
            writer.writerow(
                [mcfg.kind, pt.layers, pt.params, repr(pt.r2_mean), repr(pt.r2_stderr),
                 pt.n_converged, pt.n_seeds, "converged" if pt.converged else "not_converged"]
            )
    _write_manifest(out, spec, inputs={str(p): p for p in paths}, outputs=[scale_path])
    failed = [pt.layers for pt in points if not pt.converged]
    if failed:
        print(f"scaling sweep recorded non-convergence at layer count(s) {failed}", file=sys.stderr)
        return EXIT_TRAINING
    print(f"scaling sweep over layers {list(layer_counts)} complete; wrote {scale_path}")
    return EXIT_OK


def _mean_stderr(values) -> tuple[float, float, int]:
    arr = np.asarray([v for v in values if v is not None and not math.isnan(v)], dtype=np.float64)
    if arr.size == 0:
        return float("nan"), float("nan"), 0
    stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return float(arr.mean()), stderr, int(arr.size)


def cmd_report(spec: RunSpec) -> int:
    _check_namespaces(spec, {"report", "data"})
    out = _out_dir(spec)
    src = spec.get("report.dir", spec.get("data.dir"))
    if src is None:
        raise CliError("report needs report.dir (directory containing metrics CSVs)")
    src = Path(src)
    if not src.is_dir():
        raise CliError(f"report.dir does not exist: {src}")

    records = []
    scale_rows = []
    for path in sorted(src.rglob("*.csv")):
        try:
            records.extend(read_metrics_csv(path))
            continue
        except (EvaluationError, ValueError):
            pass
        try:
            with open(path, newline="") as fh:
                reader = csv.reader(fh)
                header = next(reader, None)
                if header is not None and tuple(header) == SCALE_COLUMNS:
                    scale_rows.extend(dict(zip(SCALE_COLUMNS, row)) for row in reader)
        except OSError:
            continue
    if not records and not scale_rows:
        raise CliError(f"no metrics rows found under {src}")

    # numeric indicators aggregated as mean +/- standard error across rows
    indicators = ("r2_avg", "r2_x", "r2_y", "latency_median_s", "zero_shot_r2")
    cells: dict = {}
    models = sorted({r.model for r in records})
    experiments = sorted({r.experiment for r in records})
    for experiment in experiments:
        for model in models:
            group = [r for r in records if r.experiment == experiment and r.model == model]
            if not group:
                continue
            for indicator in indicators:
                mean, stderr, n = _mean_stderr(getattr(r, indicator) for r in group)
                if n:
                    cells[(experiment, model, indicator)] = (mean, stderr, n)
            recoveries = [r.recovery_s for r in group if r.recovery_s is not None]
            numeric = [r for r in recoveries if r is not NOT_RECOVERED]
            if recoveries:
                if numeric:
                    mean, stderr, n = _mean_stderr(numeric)
                    cells[(experiment, model, "recovery_s")] = (mean, stderr, n)
                else:
                    cells[(experiment, model, "recovery_s")] = (float("nan"), float("nan"), 0)

    summary_path = out / "summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["experiment", "model", "indicator", "mean", "stderr", "n"])
        for (experiment, model, indicator), (mean, stderr, n) in sorted(cells.items()):
            writer.writerow([experiment, model, indicator, repr(mean), repr(stderr), n])

    lines = []
    for experiment in experiments:
        block_indicators = sorted({ind for (exp, _, ind) in cells if exp == experiment})
        if not block_indicators:
            continue
        lines.append(f"== {experiment} ==")
        header = ["indicator".ljust(18)] + [m.ljust(22) for m in models]
        lines.append("  ".join(header).rstrip())
        for indicator in block_indicators:
            row = [indicator.ljust(18)]
            for model in models:
                cell = cells.get((experiment, model, indicator))
                if cell is None:
                    row.append("-".ljust(22))
                else:
                    mean, stderr, n = cell
                    text = "never" if math.isnan(mean) and indicator == "recovery_s" else f"{mean:.4f} +/- {stderr:.4f} (n={n})"
                    row.append(text.ljust(22))
            lines.append("  ".join(row).rstrip())
        lines.append("")
    text_path = out / "summary.txt"
    text_path.write_text("\n".join(lines) + "\n")

    outputs = [summary_path, text_path]
    if scale_rows:
        series_path = out / "scaling_series.csv"
        with open(series_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["model", "params", "r2_mean", "r2_stderr", "status"])
            ordered = sorted(scale_rows, key=lambda r: (r["model"], int(r["params"])))
            for row in ordered:
                writer.writerow([row["model"], row["params"], row["r2_mean"], row["r2_stderr"], row["status"]])
        outputs.append(series_path)

    _write_manifest(out, spec, inputs={str(src): src}, outputs=outputs)
    print(f"report over {len(records)} metrics row(s) written to {out}")
    return EXIT_OK


_HANDLERS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "bench": cmd_bench,
    "scale": cmd_scale,
    "report": cmd_report,
}

_DESCRIPTIONS = {
    "synth": "generate daily synthetic session bundles",
    "preprocess": "run the binning/smoothing/normalization pipeline and summarize",
    "train": "train one model on one or more sessions",
    "finetune": "fine-tune a checkpoint on a new session and trace the recovery curve",
    "bench": "measure inference latency for trained checkpoints",
    "scale": "sweep model depth and record (params, R²) rows",
    "report": "aggregate metrics CSVs into summary tables and plot-ready series",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ndbench",
        description="Neural decoding benchmark: data synthesis, training, and benchmarking.",
    )
    parser.add_argument("--version", action="version", version=f"ndbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler in _HANDLERS.items():
        cmd = sub.add_parser(name, help=_DESCRIPTIONS[name])
        cmd.add_argument("--config", help="JSON config file of flat dotted keys")
        cmd.add_argument(
            "--set",
            dest="overrides",
            action="append",
            metavar="KEY=VALUE",
            help="override one config key (value parsed as JSON, else string)",
        )
        cmd.add_argument("--out", help="output directory for artifacts")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        spec = _resolve_spec(args.command, args.config, args.overrides, args.out)
        return _HANDLERS[args.command](spec)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (
        ConfigError,
        HarnessError,
        SessionFormatError,
        CheckpointError,
        EvaluationError,
        UndefinedR2Error,
        SequenceLengthError,
        FileNotFoundError,
        OSError,
    ) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
