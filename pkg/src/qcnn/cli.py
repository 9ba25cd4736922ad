"""Command-line entry point: ``python -m qcnn <command> ...``.

Every command accepts its options either as flags or from a ``key=value``
file passed with the global ``--config``; flags win. The effective options,
including the seed, are written as ``<output>.config`` next to the main
output, and that file alone reproduces the run::

    python -m qcnn --config results.csv.config sweep
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import evaluation as ev
from .checkpoint import load_checkpoint, save_checkpoint
from .network import Profile, build_backbone, build_model
from .qttention import (
    Aggregation,
    GradMode,
    export_map,
    layer_qttention,
    layer_saliency,
    load_map,
    upsample_map,
)
from .signals import (
    CWRU_6205,
    DEFAULT_CLASSES,
    WINDOW_LEN,
    Split,
    characteristic_frequencies,
    load_dataset,
    make_synthetic_dataset,
    save_dataset,
    with_noise,
)
from .spectrum import envelope_spectrum, match_peaks
from .tensor import get_num_threads, set_num_threads
from .training import TrainConfig, predict, train

log = logging.getLogger("qcnn")

ABLATION_PROFILES = ("wdcnn", "qcnn-aq", "qcnn-np", "qcnn-ng", "qcnn")
SPLITS = {"train": Split.TRAIN, "val": Split.VAL, "test": Split.TEST}


class UsageError(Exception):
    """Bad command line or configuration file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- helpers


def _floats(text: str) -> list[float]:
    return [float(t) for t in str(text).split(",") if t.strip()]


def _names(text: str) -> list[str]:
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _optional_float(text):
    return None if str(text).lower() in ("", "none") else float(text)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("QD_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"QD_SEED must be an integer, got {env!r}") from None


def _train_config(args, seed: int) -> TrainConfig:
    return TrainConfig(args.gamma_r, args.alpha, args.batch_size, args.epochs, seed)


def _sample(ds, split_name: str, idx: int):
    part = ds.subset(SPLITS[split_name])
    if not 0 <= idx < len(part):
        raise IndexError(f"sample-idx {idx} out of range for {split_name} split of size {len(part)}")
    return part.windows[idx].astype(np.float64), int(part.labels[idx])


def _write_snapshot(args, seed: int, output: Path) -> Path:
    snap = Path(f"{output}.config")
    lines = [f"command={args.command}", f"seed={seed}"]
    for key in sorted(vars(args)):
        if key in _GLOBAL_KEYS or key in ("command", "seed", "func"):
            continue
        value = getattr(args, key)
        if value is None:
            continue
        if isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key}={value}")
    snap.write_text("\n".join(lines) + "\n")
    return snap


# --------------------------------------------------------------- commands


def cmd_synth(args, seed):
    if args.classes.isdigit():
        n = int(args.classes)
        if not 1 <= n <= len(DEFAULT_CLASSES):
            raise ValueError(f"classes must be 1..{len(DEFAULT_CLASSES)}, got {n}")
        classes = DEFAULT_CLASSES[:n]
    else:
        classes = _names(args.classes)
    ds = make_synthetic_dataset(args.per_class, args.fs, args.rpm, args.duration, seed,
                                classes, win_len=args.win_len)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} windows x {ds.win_len} ({ds.num_classes} classes) to {args.out}")
    return args.out


def cmd_train(args, seed):
    ds = with_noise(load_dataset(args.data), args.snr, seed=seed)
    model = build_model(args.profile, ds.win_len, ds.num_classes, seed=seed)
    model, hist = train(model, ds.train, ds.val, _train_config(args, seed))
    save_checkpoint(model, args.out_ckpt, args.dtype)
    history = args.history or Path(f"{args.out_ckpt}.history.csv")
    hist.to_csv(history)
    last = hist.records[-1]
    print(f"epochs={len(hist.records)} val_acc={last.val_acc:.4f} checkpoint={args.out_ckpt} "
          f"history={history}")
    return args.out_ckpt


def cmd_eval(args, seed):
    model = load_checkpoint(args.ckpt)
    ds = load_dataset(args.data)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    snrs = [None] if args.snr is None else _floats(args.snr)
    rows = []
    for snr in snrs:
        part = with_noise(ds, snr, seed=seed).subset(SPLITS[args.split])
        preds = predict(model, part.windows)
        acc = ev.accuracy(preds, part.labels)
        tag = "clean" if snr is None else f"{snr:g}dB"
        cm = ev.confusion(preds, part.labels, ds.num_classes)
        cm.to_csv(args.out_dir / f"confusion_{tag}.csv")
        rows.append({"model": model.spec.profile, "snr_db": "" if snr is None else snr,
                     "seed": seed, "accuracy": acc})
        print(f"snr={tag} accuracy={acc:.4f} fault_judged_healthy={cm.fault_judged_healthy()}")
    out = ev.write_results_csv(rows, args.out_dir / "accuracy.csv")
    return out


def _sweep_rows(args, seed, profiles, snrs):
    ds = load_dataset(args.data)
    rows = ev.noise_sweep(profiles, ds, snrs, args.runs, _train_config(args, seed), base_seed=seed)
    ev.write_results_csv(rows, args.out)
    for (model, snr), (mean, std) in ev.summarize(rows).items():
        tag = "clean" if snr is None else f"{snr:+g}dB"
        print(f"{model:8s} snr={tag} accuracy={mean:.4f}+-{std:.4f}")
    return args.out


def cmd_sweep(args, seed):
    return _sweep_rows(args, seed, _names(args.profiles), _floats(args.snrs))


def cmd_ablate(args, seed):
    return _sweep_rows(args, seed, ABLATION_PROFILES, [args.snr])


def cmd_qttention(args, seed):
    model = load_checkpoint(args.ckpt)
    ds = with_noise(load_dataset(args.data), args.snr, seed=seed)
    x, label = _sample(ds, args.split, args.sample_idx)
    kw = dict(layer_index=args.layer, aggregation=Aggregation(args.aggregation),
              grad_mode=GradMode(args.grad_mode))
    conventional = Profile.parse(model.spec.profile) is Profile.WDCNN
    qmap = layer_saliency(model, x, **kw) if conventional else layer_qttention(model, x, **kw)
    if args.upsample_to_input:
        qmap = upsample_map(qmap, model.spec.input_len)
    export_map(qmap, args.out)
    kind = "saliency" if conventional else "qttention"
    print(f"{kind} map of conv{args.layer} for {args.split}[{args.sample_idx}] "
          f"(class {ds.class_names[label]}), {len(qmap)} points -> {args.out}")
    if args.saliency_out and not conventional:
        sal = layer_saliency(model, x, **kw)
        if args.upsample_to_input:
            sal = upsample_map(sal, model.spec.input_len)
        export_map(sal, args.saliency_out)
        print(f"saliency comparison -> {args.saliency_out}")
    return args.out


def _targets(spec: str, rpm: float) -> list[tuple[str, float]]:
    freqs = characteristic_frequencies(CWRU_6205, rpm / 60.0)._asdict()
    freqs["fr"] = rpm / 60.0
    out = []
    for name in _names(spec):
        if name.lower() in freqs:
            out.append((name.lower(), float(freqs[name.lower()])))
        else:
            try:
                out.append((name, float(name)))
            except ValueError:
                raise ValueError(f"unknown target {name!r}; use {sorted(freqs)} or a frequency in Hz") from None
    return out


def cmd_envelope(args, seed):
    path = args.input
    with path.open("rb") as fh:
        is_dataset = fh.read(4) == b"QBRG"
    if is_dataset:
        ds = load_dataset(path)
        x, _ = _sample(ds, args.split, args.sample_idx)
        fs = args.fs or ds.sample_rate_hz
    else:
        x = load_map(path).values
        if not args.fs:
            raise UsageError("--fs is required for a map CSV input")
        fs = args.fs
    spec = envelope_spectrum(x, fs, None if args.window == "none" else args.window)
    spec.to_csv(args.out)
    targets = _targets(args.targets, args.rpm)
    matches = match_peaks(spec, [f for _, f in targets], tol_bins=args.tol_bins)
    report = Path(f"{args.out}.peaks.csv")
    with report.open("w") as fh:
        fh.write("name,target_hz,found,peak_hz,magnitude,prominence\n")
        for (name, _), m in zip(targets, matches):
            fh.write(f"{name},{m.target:.6g},{int(m.found)},{m.freq:.6g},{m.magnitude:.6g},{m.prominence:.6g}\n")
            print(f"{name:6s} {m.target:9.3f} Hz  {'found' if m.found else 'absent':6s} "
                  f"peak={m.freq:9.3f} Hz magnitude={m.magnitude:.4g}")
    print(f"spectrum -> {args.out}, peaks -> {report}")
    return args.out


def cmd_params(args, seed):
    profiles = _names(args.profile)
    wd = ev.count_params(build_model("wdcnn", args.input_len, args.num_classes))
    lines = ["profile,total,conv_weights,conv_weight_ratio_vs_wdcnn"]
    for name in profiles:
        counts = ev.count_params(build_model(name, args.input_len, args.num_classes))
        ratio = counts["conv_weights"] / wd["conv_weights"]
        lines.append(f"{Profile.parse(name).value},{counts['total']},{counts['conv_weights']},{ratio:g}")
    lines.append("")
    lines.append("layer,C,H,W,attention_mlp,channel_attention,qttention")
    for row in ev.backbone_attention_table(build_backbone("qcnn", args.input_len, args.num_classes), args.r):
        lines.append(f"{row['layer']},{row['C']},{row['H']},{row['W']},{row['attention_mlp']:g},"
                     f"{row['channel_attention']:g},{row['qttention']}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        args.out.write_text(text)
    return args.out


# ----------------------------------------------------------------- parser

_GLOBAL_KEYS = {"config", "threads", "verbose"}


def _training_flags(p, epochs=50):
    p.add_argument("--gamma-r", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=1e-2)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--epochs", type=int, default=epochs)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qcnn", description="Quadratic-neuron CNN for bearing fault diagnosis.")
    parser.add_argument("--config", type=Path, help="key=value file; flags override it")
    parser.add_argument("--threads", type=int, help="worker thread cap (default: all cores)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, help="default: $QD_SEED, else 0")
        return p

    p = command("synth", cmd_synth, "build the synthetic bearing dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--classes", default=str(len(DEFAULT_CLASSES)),
                   help="number of classes or comma-separated class names")
    p.add_argument("--fs", type=float, default=12000.0)
    p.add_argument("--rpm", type=float, default=1800.0)
    p.add_argument("--duration", type=float, default=561152 / 12000.0)
    p.add_argument("--per-class", type=int, default=1000)
    p.add_argument("--win-len", type=int, default=WINDOW_LEN)

    p = command("train", cmd_train, "train a model and write a checkpoint plus history CSV")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--profile", default="qcnn", choices=[x.value for x in Profile])
    _training_flags(p)
    p.add_argument("--snr", type=_optional_float, help="inject noise at this SNR (dB) first")
    p.add_argument("--out-ckpt", type=Path, required=True)
    p.add_argument("--history", type=Path)
    p.add_argument("--dtype", default="f64", choices=["f64", "f32"])

    p = command("eval", cmd_eval, "accuracy and confusion CSVs for a checkpoint")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--snr", help="comma-separated SNRs in dB (default: clean)")
    p.add_argument("--split", default="test", choices=sorted(SPLITS))
    p.add_argument("--out-dir", type=Path, default=Path("."))

    p = command("sweep", cmd_sweep, "noise sweep over profiles, SNRs and seeds")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--profiles", default="qcnn,wdcnn")
    p.add_argument("--snrs", default=",".join(str(s) for s in ev.NOISE_SWEEP_SNRS))
    p.add_argument("--runs", type=int, default=10)
    _training_flags(p)
    p.add_argument("--out", type=Path, default=Path("sweep.csv"))

    p = command("qttention", cmd_qttention, "qttention (or saliency) map of one sample")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--sample-idx", type=int, default=0)
    p.add_argument("--split", default="test", choices=sorted(SPLITS))
    p.add_argument("--snr", type=_optional_float)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--grad-mode", default=GradMode.TEMPORAL_DIFF.value, choices=[g.value for g in GradMode])
    p.add_argument("--aggregation", default=Aggregation.MEAN_ABS_CHANNELS.value,
                   choices=[a.value for a in Aggregation])
    p.add_argument("--upsample-to-input", "--upsample", action="store_true")
    p.add_argument("--saliency-out", type=Path, help="also write the conventional saliency map here")
    p.add_argument("--out", type=Path, default=Path("qttention.csv"))

    p = command("envelope", cmd_envelope, "envelope spectrum and characteristic-frequency peaks")
    p.add_argument("--input", type=Path, required=True, help="dataset file or map CSV")
    p.add_argument("--sample-idx", type=int, default=0)
    p.add_argument("--split", default="test", choices=sorted(SPLITS))
    p.add_argument("--fs", type=float, help="sample rate (default: the dataset's)")
    p.add_argument("--rpm", type=float, default=1800.0)
    p.add_argument("--targets", default="bpfo,bpfi,bsf", help="names (bpfo,bpfi,ftf,bsf,fr) or Hz")
    p.add_argument("--tol-bins", type=int, default=1)
    p.add_argument("--window", default="hann", choices=["hann", "none"])
    p.add_argument("--out", type=Path, default=Path("envelope.csv"))

    p = command("ablate", cmd_ablate, "compare WDCNN and the four QCNN variants")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--snr", type=_optional_float)
    p.add_argument("--runs", type=int, default=1)
    _training_flags(p)
    p.add_argument("--out", type=Path, default=Path("ablation.csv"))

    p = command("params", cmd_params, "parameter counts and the attention comparison")
    p.add_argument("--profile", default=",".join(x.value for x in Profile))
    p.add_argument("--input-len", type=int, default=WINDOW_LEN)
    p.add_argument("--num-classes", type=int, default=10)
    p.add_argument("--r", type=float, default=16.0, help="attention reduction ratio")
    p.add_argument("--out", type=Path)
    return parser


def _subcommands(parser) -> dict[str, argparse.ArgumentParser]:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return dict(action.choices)
    return {}


def _config_tokens(path: Path, command: str, sub: argparse.ArgumentParser) -> list[str]:
    """Translate ``key=value`` lines into flags of ``sub``; unknown keys are errors."""
    actions = {}
    for a in sub._actions:
        for opt in a.option_strings:
            if opt.startswith("--"):
                actions[opt[2:].replace("-", "_")] = a
    tokens = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "command":
            if value != command:
                raise UsageError(f"{path}:{n}: config is for command {value!r}, not {command!r}")
            continue
        if key not in actions:
            raise UsageError(f"{path}:{n}: unknown key {key!r} for {command}")
        action = actions[key]
        flag = action.option_strings[-1] if len(action.option_strings) == 1 else \
            next(o for o in action.option_strings if o.startswith("--"))
        if action.nargs == 0:
            if value.lower() in ("1", "true", "yes", "on"):
                tokens.append(flag)
            elif value.lower() not in ("0", "false", "no", "off"):
                raise UsageError(f"{path}:{n}: {key} expects true/false, got {value!r}")
        else:
            tokens.append(f"{flag}={value}")
    return tokens


def _command_index(argv: list[str], commands) -> int | None:
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in commands:
            return i
        i += 2 if tok in ("--config", "--threads") else 1
    return None


def _config_path(argv: list[str]) -> Path | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return Path(argv[i + 1])
        if tok.startswith("--config="):
            return Path(tok.split("=", 1)[1])
    return None


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    commands = _subcommands(parser)
    at = _command_index(argv, commands)
    cfg = _config_path(argv[:at] if at is not None else argv)
    if cfg is not None and at is not None:
        cfg = cfg.expanduser().resolve()
        if not cfg.is_file():
            raise UsageError(f"config file {cfg} not found")
        # config values go first so that explicit flags override them
        tokens = _config_tokens(cfg, argv[at], commands[argv[at]])
        argv = argv[: at + 1] + tokens + argv[at + 1 :]
    args = parser.parse_args(argv)
    for key, value in vars(args).items():
        if isinstance(value, Path):
            setattr(args, key, value.expanduser().resolve())
    for key in ("data", "ckpt", "input"):
        path = getattr(args, key, None)
        if path is not None and not path.is_file():
            raise FileNotFoundError(f"--{key.replace('_', '-')} {path} does not exist")
    return args


def _error_line(command, exc) -> str:
    return "error " + json.dumps({"command": command, "type": type(exc).__name__, "message": str(exc)})


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    at = _command_index(argv, _subcommands(build_parser()))
    command = argv[at] if at is not None else None
    try:
        args = parse_args(argv)
        command = args.command
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        seed = _seed(args)
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        previous = get_num_threads()
        set_num_threads(args.threads)
        try:
            with threadpool_limits(limits=args.threads):
                output = args.func(args, seed)
        finally:
            set_num_threads(previous)
        if output is not None:
            _write_snapshot(args, seed, Path(output))
        return 0
    except UsageError as exc:
        print(_error_line(command, exc), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a machine-parseable line
        print(_error_line(command, exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
