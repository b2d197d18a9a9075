"""Command-line entry point: data generation, training, evaluation, fusion.

Five subcommands cover the whole experiment surface:

    gen-data   synthesize a train/test dataset pair
    train      run one training recipe (or a range of seeds)
    eval       score a saved checkpoint on a dataset split
    fuse       late-fuse several checkpoints' activation maps
    report     re-emit a finished run's products as JSON + CSV

Exit codes: 0 success, 1 validation problem (single-line diagnostic on
stderr), 2 broken or unreadable files.  Every successful invocation leaves
a config.json under --out sufficient to reproduce it.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .checkpoint import load_checkpoint
from .crossform import AcflConfig, Channel
from .datagen import default_generator_spec, generate_dataset
from .dataio import save_dataset
from .errors import AcflError, ConfigError, FormatError, ValidationError
from .skeleton import FORMS, Form
from .training import (
    TEST_FILE,
    TRAIN_FILE,
    TrainConfig,
    confidence_weights,
    config_from_dict,
    evaluate_checkpoint,
    fuse_streams,
    per_class_report,
    read_jsonl,
    train_acfl_offline,
    train_acfl_online,
    train_sfrl,
)


class _CliParser(argparse.ArgumentParser):
    """argparse that raises instead of calling sys.exit, so run() owns codes."""

    def error(self, message):
        raise ConfigError(message)


def _int_pair(text: str) -> tuple[int, int]:
    lo, hi = (int(v) for v in text.split(","))
    return lo, hi


def _float_pair(text: str) -> tuple[float, float]:
    lo, hi = (float(v) for v in text.split(","))
    return lo, hi


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",")) if text else ()


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _seed_range(text: str) -> tuple[int, ...]:
    """Either 'a..b' (inclusive) or a comma list."""
    if ".." in text:
        lo, hi = text.split("..")
        a, b = int(lo), int(hi)
        if b < a:
            raise ValueError(f"empty seed range {text!r}")
        return tuple(range(a, b + 1))
    return tuple(int(v) for v in text.split(","))


def build_parser() -> _CliParser:
    parser = _CliParser(prog="acfl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize a dataset pair")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--classes", type=int, default=None)
    g.add_argument("--per-class", type=int, default=None)
    g.add_argument("--split-fraction", type=float, default=None)
    g.add_argument("--frames", type=int, default=None)
    g.add_argument("--raw-frames", type=_int_pair, default=None, metavar="LO,HI")
    g.add_argument("--noise-sigma", type=float, default=None)
    g.add_argument("--drift-sigma", type=float, default=None)
    g.add_argument("--drift-velocity-sigma", type=float, default=None)
    g.add_argument("--freq-jitter", type=float, default=None)
    g.add_argument("--phase-jitter", type=float, default=None)
    g.add_argument("--wander-amp", type=_float_pair, default=None, metavar="LO,HI")
    g.add_argument("--wander-freq", type=_float_pair, default=None, metavar="LO,HI")
    g.add_argument("--config", default=None, help="JSON file; explicit flags override it")

    t = sub.add_parser("train", help="run one training recipe")
    t.add_argument("--out", required=True)
    t.add_argument("--data", default=None)
    t.add_argument("--mode", choices=("sfrl", "acfl-online", "acfl-offline"), default=None)
    t.add_argument("--form", choices=[f.value for f in FORMS], default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--seeds", type=_seed_range, default=None, metavar="A..B")
    t.add_argument("--source-dir", default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--lr-drop-epochs", type=_int_list, default=None, metavar="E1,E2")
    t.add_argument("--lr-drop-factor", type=float, default=None)
    t.add_argument("--momentum", type=float, default=None)
    t.add_argument("--weight-decay", type=float, default=None)
    t.add_argument("--squash", choices=("sigmoid", "softmax"), default=None)
    t.add_argument("--channels", default=None, help="comma list: feature,catmap")
    t.add_argument("--source-mask", default=None, help="comma triple of 0/1 per form")
    t.add_argument("--beta-disabled", action="store_const", const=True, default=None)
    t.add_argument("--beta-override", type=_float_list, default=None, metavar="B1,B2,B3")
    t.add_argument("--mimic-weight", type=float, default=None)
    t.add_argument("--detach-complementary", action="store_const", const=True, default=None)
    t.add_argument("--config", default=None, help="JSON file; explicit flags override it")

    e = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    e.add_argument("--out", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "test"), default="test")

    f = sub.add_parser("fuse", help="late-fuse checkpoint predictions")
    f.add_argument("--out", required=True)
    f.add_argument("--checkpoints", nargs="+", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--split", choices=("train", "test"), default="test")
    f.add_argument(
        "--weights",
        default="confidence",
        help="comma floats, or 'confidence' (mean peak activation) or 'equal'",
    )

    r = sub.add_parser("report", help="re-emit a run's products as JSON + CSV")
    r.add_argument("--run", required=True)
    r.add_argument("--out", default=None, help="defaults to the run directory")

    return parser


# ---------------------------------------------------------------------------
# subcommand bodies


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_per_class_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "support", "accuracy"])
        for row in rows:
            acc = "" if row["accuracy"] is None else repr(float(row["accuracy"]))
            writer.writerow([row["class"], row["support"], acc])


_GEN_SCALARS = {
    "frames": "frames_out",
    "raw_frames": "raw_frame_range",
    "noise_sigma": "noise_sigma",
    "drift_sigma": "drift_sigma",
    "drift_velocity_sigma": "drift_velocity_sigma",
    "freq_jitter": "freq_jitter",
    "phase_jitter": "phase_jitter",
    "wander_amp": "wander_amp_range",
    "wander_freq": "wander_freq_range",
}


def _cmd_gen_data(args) -> int:
    base: dict = {}
    if args.config is not None:
        with open(args.config) as fh:
            base = json.load(fh)
    take = lambda flag, key: flag if flag is not None else base.get(key)

    seed = take(args.seed, "seed")
    if seed is None:
        raise ConfigError("gen-data needs --seed (or a config with one)")
    classes = take(args.classes, "classes") or 8
    per_class = take(args.per_class, "per_class")
    if per_class is None:
        raise ConfigError("gen-data needs --per-class (or a config with one)")
    split = take(args.split_fraction, "split_fraction")

    spec = default_generator_spec(int(classes))
    overrides = {}
    for flag_name, field in _GEN_SCALARS.items():
        value = getattr(args, flag_name)
        if value is None and field in base:
            raw = base[field]
            value = tuple(raw) if isinstance(raw, list) else raw
        if value is not None:
            overrides[field] = value
    if overrides:
        spec = replace(spec, **overrides)

    kwargs = {} if split is None else {"split_fraction": float(split)}
    train, test = generate_dataset(spec, seed=int(seed), samples_per_class=int(per_class), **kwargs)
    os.makedirs(args.out, exist_ok=True)
    save_dataset(train, os.path.join(args.out, TRAIN_FILE))
    save_dataset(test, os.path.join(args.out, TEST_FILE))
    payload = {
        "command": "gen-data",
        "seed": int(seed),
        "classes": int(classes),
        "per_class": int(per_class),
        "split_fraction": float(split) if split is not None else 0.75,
        **{field: getattr(spec, field) for field in _GEN_SCALARS.values()},
    }
    payload = json.loads(json.dumps(payload))  # tuples -> lists for a stable file
    _write_json(os.path.join(args.out, "config.json"), payload)
    print(f"wrote {len(train)} train / {len(test)} test samples to {args.out}")
    return 0


_TRAIN_SCALARS = ("epochs", "batch_size", "lr", "lr_drop_factor", "momentum", "weight_decay")


def _train_config_from_args(args) -> tuple[dict, str | None]:
    """Merge --config payload with explicit flags; flags win."""
    payload: dict = {}
    if args.config is not None:
        with open(args.config) as fh:
            payload = json.load(fh)

    if args.data is not None:
        payload["data_dir"] = args.data
    if "data_dir" not in payload:
        raise ConfigError("train needs --data (or a config carrying data_dir)")
    for key in _TRAIN_SCALARS:
        value = getattr(args, key)
        if value is not None:
            payload[key] = value
    if args.lr_drop_epochs is not None:
        payload["lr_drop_epochs"] = list(args.lr_drop_epochs)
    if args.seed is not None:
        payload["seed"] = args.seed
    if args.source_dir is not None:
        payload["source_dir"] = args.source_dir
    if args.squash is not None:
        payload.setdefault("backbone", {})["squash"] = args.squash

    mode = args.mode if args.mode is not None else payload.get("mode")
    if mode is None:
        raise ConfigError("train needs --mode (sfrl | acfl-online | acfl-offline)")
    payload["mode"] = mode

    acfl_flags = {
        "channels": None
        if args.channels is None
        else [Channel(c.strip()).value for c in args.channels.split(",")],
        "source_mask": None
        if args.source_mask is None
        else [bool(int(v)) for v in args.source_mask.split(",")],
        "beta_enabled": None if args.beta_disabled is None else False,
        "beta_override": None if args.beta_override is None else list(args.beta_override),
        "mimic_weight": args.mimic_weight,
        "detach_complementary": args.detach_complementary,
    }
    touched = {k: v for k, v in acfl_flags.items() if v is not None}
    if mode == "sfrl":
        if touched:
            raise ConfigError(f"mimic flags are meaningless under sfrl: {sorted(touched)}")
        payload["acfl"] = None
    else:
        acfl = payload.get("acfl") or {}
        acfl["mode"] = mode.removeprefix("acfl-")
        acfl.update(touched)
        payload["acfl"] = acfl

    form = args.form
    if form is None and mode == "sfrl":
        forms = payload.get("forms", [])
        if len(forms) == 1:
            form = forms[0]
        else:
            raise ConfigError("sfrl training needs --form")
    if form is not None and mode != "sfrl":
        raise ConfigError("--form only applies to sfrl; acfl trains all forms")
    payload["forms"] = [form] if form else [f.value for f in FORMS]
    return payload, form


def _cmd_train(args) -> int:
    if args.seed is not None and args.seeds is not None:
        raise ConfigError("--seed and --seeds are mutually exclusive")
    payload, form = _train_config_from_args(args)

    def run_one(seed: int | None, out_dir: str):
        local = dict(payload)
        if seed is not None:
            local["seed"] = seed
        local["out_dir"] = out_dir
        cfg, mode, _ = config_from_dict(local)
        if mode == "sfrl":
            result = train_sfrl(cfg, Form(form))
        elif mode == "acfl-online":
            result = train_acfl_online(cfg)
        else:
            result = train_acfl_offline(cfg)
        accs = " ".join(f"{f.value}={a:.4f}" for f, a in sorted(result.final_test_acc.items()))
        print(f"{mode} seed={cfg.seed} out={out_dir} test: {accs}")

    if args.seeds is None:
        run_one(args.seed, args.out)
    else:
        os.makedirs(args.out, exist_ok=True)
        fan = dict(payload)
        fan["seeds"] = list(args.seeds)
        fan["out_dir"] = args.out
        _write_json(os.path.join(args.out, "config.json"), fan)
        for seed in args.seeds:
            run_one(seed, os.path.join(args.out, f"seed_{seed}"))
    return 0


def _cmd_eval(args) -> int:
    out = evaluate_checkpoint(args.checkpoint, args.data, split=args.split)
    os.makedirs(args.out, exist_ok=True)
    report = {
        "command": "eval",
        "checkpoint": args.checkpoint,
        "data": args.data,
        "split": out["split"],
        "form": out["form"],
        "accuracy": out["accuracy"],
        "per_class": out["per_class"],
    }
    _write_json(os.path.join(args.out, "report.json"), report)
    _write_per_class_csv(os.path.join(args.out, "per_class.csv"), out["per_class"])
    _write_json(
        os.path.join(args.out, "config.json"),
        {k: report[k] for k in ("command", "checkpoint", "data", "split")},
    )
    print(f"{out['form']} {out['split']} accuracy {out['accuracy']:.4f}")
    return 0


def _cmd_fuse(args) -> int:
    streams = [evaluate_checkpoint(p, args.data, split=args.split) for p in args.checkpoints]
    catmaps = [s["catmaps"] for s in streams]
    if args.weights == "confidence":
        weights = confidence_weights(catmaps)
    elif args.weights == "equal":
        weights = [1.0] * len(catmaps)
    else:
        weights = list(_float_list(args.weights))
    predictions = fuse_streams(catmaps, weights)

    from .training import load_split_arrays

    data = load_split_arrays(args.data, ())
    y = data.train_y if args.split == "train" else data.test_y
    per_class: dict[int, tuple[int, int]] = {}
    for c in range(data.class_count):
        sel = y == c
        per_class[c] = (int(sel.sum()), int((predictions[sel] == c).sum()))
    accuracy = float((predictions == y).mean())
    rows = per_class_report(per_class)

    os.makedirs(args.out, exist_ok=True)
    report = {
        "command": "fuse",
        "checkpoints": list(args.checkpoints),
        "data": args.data,
        "split": args.split,
        "weights": [float(w) for w in weights],
        "weighting": args.weights,
        "streams": [
            {"form": s["form"], "accuracy": s["accuracy"]} for s in streams
        ],
        "accuracy": accuracy,
        "per_class": rows,
    }
    _write_json(os.path.join(args.out, "report.json"), report)
    _write_per_class_csv(os.path.join(args.out, "per_class.csv"), rows)
    _write_json(
        os.path.join(args.out, "config.json"),
        {k: report[k] for k in ("command", "checkpoints", "data", "split", "weighting")},
    )
    single = ", ".join(f"{s['form']}={s['accuracy']:.4f}" for s in report["streams"])
    print(f"fused {len(streams)} streams ({single}) -> {accuracy:.4f}")
    return 0


def _cmd_report(args) -> int:
    run_dir = args.run
    report_path = os.path.join(run_dir, "report.json")
    if not os.path.isfile(report_path):
        raise FormatError(f"no report.json under {run_dir}")
    with open(report_path) as fh:
        report = json.load(fh)
    out = args.out if args.out is not None else run_dir
    os.makedirs(out, exist_ok=True)
    if os.path.abspath(out) != os.path.abspath(run_dir):
        _write_json(os.path.join(out, "report.json"), report)

    per_class = report.get("per_class")
    if per_class is None:
        raise FormatError("report.json carries no per_class section")
    if isinstance(per_class, list):  # eval/fuse product: one flat table
        tables = {None: per_class}
    else:
        order = [f.value for f in FORMS if f.value in per_class]
        order += [k for k in per_class if k not in order]
        tables = {k: per_class[k] for k in order}
    first = next(iter(tables))
    for name, rows in tables.items():
        suffix = "" if name == first else f"_{name}"
        _write_per_class_csv(os.path.join(out, f"per_class{suffix}.csv"), rows)
    forms = ", ".join(tables) if first is not None else "1 table"
    print(f"wrote per-class CSV ({forms}) to {out}")
    return 0


# ---------------------------------------------------------------------------
# dispatch


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "gen-data":
            return _cmd_gen_data(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "fuse":
            return _cmd_fuse(args)
        return _cmd_report(args)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (AcflError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))
