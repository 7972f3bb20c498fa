"""Command-line surface: synth, prepare, train, eval, disaggregate, gradcheck.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training
divergence.  Diagnostics go to stderr; results go to files and stdout.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, fields, asdict

import numpy as np

from . import __version__, data, gradcheck, metrics
from .checkpoint import checkpoint_load, checkpoint_save
from .errors import (CheckpointError, ConfigError, DivergenceError, DomainError,
                     ParseError, ShapeError, TrainingError)
from .model import ModelConfig, fit, predict_batches


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Fully-resolved run settings: model hyperparameters plus pipeline knobs."""

    # model defaults: 20 epochs, MSE, Adam, 1 conv / 2 BiLSTM / 1 attention /
    # 2 dropout / 1 dense
    n_appliances: int = 1
    window_len: int = 64
    conv_filters: int = 16
    conv_kernel: int = 5
    conv_stride: int = 1
    pool: int = 2
    hidden: int = 64
    bilstm_layers: int = 2
    attention_width: int = 0
    dropout_rate: float = 0.25
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 64
    seed: int = 42
    on_threshold: float = 0.05
    # pipeline
    data: str | None = None
    redd_dir: str | None = None
    out_dir: str = "run"
    window_stride: int = 4
    split_ratio: float = 0.8
    downsample_method: str = "mean"
    downsample_factor: int = 10
    threads: int = 1

    def model_config(self, n_appliances: int | None = None) -> ModelConfig:
        return ModelConfig(
            n_appliances=n_appliances if n_appliances is not None else self.n_appliances,
            window_len=self.window_len, conv_filters=self.conv_filters,
            conv_kernel=self.conv_kernel, conv_stride=self.conv_stride,
            pool=self.pool, hidden=self.hidden, bilstm_layers=self.bilstm_layers,
            attention_width=self.attention_width, dropout_rate=self.dropout_rate,
            learning_rate=self.learning_rate, epochs=self.epochs,
            batch_size=self.batch_size, seed=self.seed, on_threshold=self.on_threshold)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value, expected: str):
    if expected == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key '{key}' expects an integer, got {value!r}")
        return value
    if expected == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key '{key}' expects a number, got {value!r}")
        return float(value)
    # strings (including optional paths)
    if value is not None and not isinstance(value, str):
        raise ConfigError(f"config key '{key}' expects a string, got {value!r}")
    return value


def load_config(path: str | None) -> RunConfig:
    """Load a strict JSON run config; unspecified keys take the defaults."""
    raw = {}
    if path is not None:
        if not os.path.isfile(path):
            raise DomainError(f"config file not found: {path}")
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a JSON object")
    kwargs = {}
    for key, value in raw.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key '{key}'")
        expected = _FIELD_TYPES[key]
        if expected in ("int", int):
            kwargs[key] = _coerce(key, value, "int")
        elif expected in ("float", float):
            kwargs[key] = _coerce(key, value, "float")
        else:
            kwargs[key] = _coerce(key, value, "str")
    return RunConfig(**kwargs)


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "out", None) is not None:
        config.out_dir = args.out
    if getattr(args, "threads", None) is not None:
        config.threads = args.threads
    if getattr(args, "threshold", None) is not None:
        config.on_threshold = args.threshold
    if getattr(args, "downsample", None) is not None:
        config.downsample_method = args.downsample
    if getattr(args, "epochs", None) is not None:
        config.epochs = args.epochs
    return config


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out_dir: str, config: RunConfig, command: str, inputs: list[str]) -> None:
    manifest = {
        "toolkit_version": __version__,
        "command": command,
        "seed": config.seed,
        "config": asdict(config),
        "inputs": {p: _sha256(p) for p in inputs},
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)


def _require_data(config: RunConfig) -> str:
    if not config.data:
        raise DomainError("no input data path configured (config key 'data')")
    if not os.path.isfile(config.data):
        raise DomainError(f"input data file not found: {config.data}")
    return config.data


# ---------------------------------------------------------------------------
# Scene preparation helpers shared by train/eval
# ---------------------------------------------------------------------------

def _load_normalized_scene(config: RunConfig):
    """Read the scene CSV, split chronologically, normalize on train stats."""
    path = _require_data(config)
    aggregate, appliances, names = data.read_scene_csv(path)
    if not names:
        raise DomainError(f"scene {path} has no appliance columns")
    n = len(aggregate)
    train_slice, test_slice = data.split_train_test(n, config.split_ratio, config.window_len)

    agg_stats = data.compute_norm_stats(aggregate.values[train_slice])
    app_stats = [data.compute_norm_stats(app.values[train_slice]) for app in appliances]

    agg_norm = data.TimeSeries(aggregate.timestamps, data.normalize(aggregate.values, agg_stats))
    apps_norm = [data.TimeSeries(a.timestamps, data.normalize(a.values, s))
                 for a, s in zip(appliances, app_stats)]
    return agg_norm, apps_norm, names, agg_stats, app_stats, train_slice, test_slice


def _slice_series(series: data.TimeSeries, sl: slice) -> data.TimeSeries:
    return data.TimeSeries(series.timestamps[sl], series.values[sl])


def _stats_payload(names, agg_stats, app_stats) -> dict:
    return {
        "aggregate": {"vmin": agg_stats.vmin, "vmax": agg_stats.vmax},
        "appliances": {name: {"vmin": s.vmin, "vmax": s.vmax}
                       for name, s in zip(names, app_stats)},
        "names": names,
    }


def _load_stats(path: str):
    with open(path) as fh:
        payload = json.load(fh)
    names = payload["names"]
    agg_stats = data.NormStats(**payload["aggregate"])
    app_stats = [data.NormStats(**payload["appliances"][name]) for name in names]
    return names, agg_stats, app_stats


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    if not os.path.isfile(args.spec):
        raise DomainError(f"synth spec not found: {args.spec}")
    with open(args.spec) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"synth spec is not valid JSON: {exc}") from exc
    allowed = {"appliances", "noise_std", "duration_s", "sample_period_s", "seed"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown synth spec key '{sorted(unknown)[0]}'")
    sig_fields = {f.name for f in fields(data.ApplianceSig)}
    sigs = []
    for entry in raw.get("appliances", []):
        bad = set(entry) - sig_fields
        if bad:
            raise ConfigError(f"unknown appliance key '{sorted(bad)[0]}'")
        sigs.append(data.ApplianceSig(**entry))
    spec = data.SynthSpec(appliances=sigs,
                          noise_std=raw.get("noise_std", 0.0),
                          duration_s=raw.get("duration_s", 86400.0),
                          sample_period_s=raw.get("sample_period_s", 10),
                          seed=args.seed if args.seed is not None else raw.get("seed", 0))
    aggregate, appliances, meta = synth_scene(spec)
    data.write_scene_csv(args.out, aggregate, appliances, [m.label for m in meta])
    print(f"wrote {len(aggregate)} samples x {len(appliances)} appliances to {args.out}")
    return 0


def synth_scene(spec: data.SynthSpec):
    return data.synth_generate(spec)


def cmd_prepare(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    if not config.redd_dir:
        raise DomainError("no REDD house directory configured (config key 'redd_dir')")
    if not os.path.isdir(config.redd_dir):
        raise DomainError(f"REDD house directory not found: {config.redd_dir}")
    os.makedirs(config.out_dir, exist_ok=True)
    stats = data.CleaningStats()
    aggregate, appliances, names = data.load_redd_house(config.redd_dir, stats=stats)
    aggregate = data.downsample(aggregate, config.downsample_factor, config.downsample_method)
    appliances = [data.downsample(a, config.downsample_factor, config.downsample_method)
                  for a in appliances]
    out_path = os.path.join(config.out_dir, "scene.csv")
    data.write_scene_csv(out_path, aggregate, appliances, names)
    _write_json(os.path.join(config.out_dir, "config.json"), asdict(config))
    _write_manifest(config.out_dir, config, "prepare",
                    [os.path.join(config.redd_dir, "labels.dat")])
    print(f"prepared {len(aggregate)} samples, {len(names)} appliances -> {out_path}",
          file=sys.stderr)
    print(f"cleaning: {stats}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    os.makedirs(config.out_dir, exist_ok=True)
    agg, apps, names, agg_stats, app_stats, train_slice, test_slice = \
        _load_normalized_scene(config)
    config.n_appliances = len(names)
    model_config = config.model_config(len(names))

    train_batch = data.make_windows(_slice_series(agg, train_slice),
                                    [_slice_series(a, train_slice) for a in apps],
                                    config.window_len, config.window_stride)
    val_batch = data.make_windows(_slice_series(agg, test_slice),
                                  [_slice_series(a, test_slice) for a in apps],
                                  config.window_len, config.window_stride)

    params, report = fit(train_batch, val_batch, model_config)

    ckpt_path = os.path.join(config.out_dir, "checkpoint.bin")
    checkpoint_save(params, model_config, ckpt_path)
    _write_json(os.path.join(config.out_dir, "norm_stats.json"),
                _stats_payload(names, agg_stats, app_stats))
    with open(os.path.join(config.out_dir, "loss.csv"), "w", newline="") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for epoch, (tl, vl) in enumerate(zip(report.train_loss, report.val_loss), start=1):
            fh.write(f"{epoch},{tl:.17g},{vl:.17g}\n")
    _write_json(os.path.join(config.out_dir, "config.json"), asdict(config))
    _write_manifest(config.out_dir, config, "train", [config.data])
    print(f"trained {model_config.epochs} epochs "
          f"({report.train_ms_per_step:.1f} ms/step, "
          f"inference {report.infer_ms_per_window:.3f} ms/window); "
          f"final val loss {report.val_loss[-1]:.6g}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    ckpt_path = os.path.join(config.out_dir, "checkpoint.bin")
    stats_path = os.path.join(config.out_dir, "norm_stats.json")
    for path in (ckpt_path, stats_path):
        if not os.path.isfile(path):
            raise DomainError(f"missing training artifact: {path}")
    params, model_config = checkpoint_load(ckpt_path)
    names, agg_stats_saved, app_stats_saved = _load_stats(stats_path)

    agg, apps, scene_names, _, _, train_slice, test_slice = _load_normalized_scene(config)
    if scene_names != names:
        raise DomainError(
            f"scene appliances {scene_names} do not match trained appliances {names}")

    test_batch = data.make_windows(_slice_series(agg, test_slice),
                                   [_slice_series(a, test_slice) for a in apps],
                                   model_config.window_len, stride=1)
    predictions = predict_batches(test_batch.inputs, params, model_config,
                                  chunk=model_config.batch_size)
    predictions = np.clip(predictions, 0.0, 1.0)

    reports = []
    for j, name in enumerate(names):
        est = predictions[:, j]
        truth = test_batch.targets[:, j]
        reports.append(metrics.evaluate_appliance(name, est, truth, app_stats_saved[j],
                                                  config.on_threshold))
        metrics.write_plot_csv(
            os.path.join(config.out_dir, f"plot_{_safe_name(name)}.csv"),
            test_batch.midpoints,
            data.denormalize(truth, app_stats_saved[j]),
            data.denormalize(est, app_stats_saved[j]))

    report_csv = metrics.render_report(reports, "csv")
    with open(os.path.join(config.out_dir, "report.csv"), "w", newline="") as fh:
        fh.write(report_csv)
    print(metrics.render_report(reports, "table"), end="")
    _write_manifest(config.out_dir, config, "eval", [config.data, ckpt_path])
    return 0


def _safe_name(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)


def cmd_disaggregate(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    ckpt_path = args.checkpoint or os.path.join(config.out_dir, "checkpoint.bin")
    stats_path = args.stats or os.path.join(config.out_dir, "norm_stats.json")
    for path in (ckpt_path, stats_path):
        if not os.path.isfile(path):
            raise DomainError(f"missing training artifact: {path}")
    if not os.path.isfile(args.input):
        raise DomainError(f"aggregate input not found: {args.input}")
    params, model_config = checkpoint_load(ckpt_path)
    names, agg_stats, app_stats = _load_stats(stats_path)

    if args.input.endswith(".csv"):
        aggregate, _, _ = data.read_scene_csv(args.input)
    else:
        with open(args.input) as fh:
            aggregate = data.parse_channel(fh)
    if len(aggregate) < model_config.window_len:
        raise DomainError(
            f"aggregate has {len(aggregate)} samples; need >= {model_config.window_len}")
    agg_norm = data.TimeSeries(aggregate.timestamps,
                               data.normalize(aggregate.values, agg_stats))
    batch = data.make_windows(agg_norm, [], model_config.window_len, stride=1)
    predictions = np.clip(predict_batches(batch.inputs, params, model_config,
                                          chunk=model_config.batch_size), 0.0, 1.0)
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    for j, name in enumerate(names):
        watts = data.denormalize(predictions[:, j], app_stats[j])
        out_path = os.path.join(out_dir, f"estimate_{_safe_name(name)}.csv")
        with open(out_path, "w", newline="") as fh:
            fh.write("timestamp,estimate_watts\n")
            for t, w in zip(batch.midpoints, watts):
                fh.write(f"{int(t)},{w:.6f}\n")
    print(f"wrote {len(names)} estimate files to {out_dir}", file=sys.stderr)
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_battery(range(args.seeds))
    ok = True
    for name, err in results.items():
        status = "PASS" if err <= gradcheck.TOLERANCE else "FAIL"
        ok &= err <= gradcheck.TOLERANCE
        print(f"{name:<10} max_rel_err={err:.3e}  {status}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="wattsplit",
                     description="Low-frequency NILM toolkit (CNN-BiLSTM-attention)")
    sub = parser.add_subparsers(dest="command")

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON run config path")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--threads", type=int,
                       help="worker hint; numerical results are independent of this value")
        p.add_argument("--threshold", type=float, help="on/off threshold (normalized)")
        p.add_argument("--downsample", choices=["mean", "decimate"],
                       help="downsampling method")

    p_synth = sub.add_parser("synth", help="generate a synthetic household scene")
    p_synth.add_argument("--spec", required=True, help="JSON scene spec")
    p_synth.add_argument("--out", required=True, help="output scene CSV")
    p_synth.add_argument("--seed", type=int, help="override the scene seed")

    for name, want_epochs in (("prepare", False), ("train", True), ("eval", False)):
        p = sub.add_parser(name)
        common(p)
        if want_epochs:
            p.add_argument("--epochs", type=int, help="override the epoch count")

    p_dis = sub.add_parser("disaggregate", help="estimate appliances for an aggregate file")
    common(p_dis)
    p_dis.add_argument("--input", required=True, help="aggregate CSV or channel .dat file")
    p_dis.add_argument("--checkpoint", help="checkpoint path (default: <out>/checkpoint.bin)")
    p_dis.add_argument("--stats", help="norm stats path (default: <out>/norm_stats.json)")

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_gc.add_argument("--seeds", type=int, default=10, help="number of seeds per op")
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "disaggregate": cmd_disaggregate,
    "gradcheck": cmd_gradcheck,
}


def dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 3
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 3
    except (DomainError, ParseError, ShapeError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
