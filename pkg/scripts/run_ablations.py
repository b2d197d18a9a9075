#!/usr/bin/env python3
"""Ablation studies over the cross-form training lab.

Four studies, each a small table on stdout plus a row in ablations.json:

  modes     single-form baselines vs frozen-source vs co-trained cross-form
  channels  which representation channel carries the mimic signal
  beta      source-quality scaling on, off, and pinned to all-ones
  masks     which source forms are allowed to teach (frozen-source mode)

Every run uses the shipped default recipe unless --epochs shrinks it; with
the defaults the full set takes roughly twenty minutes on one core per run.
"""

import argparse
import json
import os
import shutil
import time

from acfl.crossform import AcflConfig, Channel
from acfl.datagen import default_generator_spec, generate_dataset
from acfl.dataio import save_dataset
from acfl.skeleton import Form
from acfl.training import (
    TEST_FILE,
    TRAIN_FILE,
    TrainConfig,
    train_acfl_offline,
    train_acfl_online,
    train_sfrl,
)

STUDIES = ("modes", "channels", "beta", "masks")


def ensure_data(data_dir: str, seed: int) -> str:
    if os.path.exists(os.path.join(data_dir, TRAIN_FILE)):
        return data_dir
    os.makedirs(data_dir, exist_ok=True)
    spec = default_generator_spec(8)
    train, test = generate_dataset(spec, seed=seed, samples_per_class=40)
    save_dataset(train, os.path.join(data_dir, TRAIN_FILE))
    save_dataset(test, os.path.join(data_dir, TEST_FILE))
    print(f"generated default dataset ({len(train)} train / {len(test)} test) in {data_dir}")
    return data_dir


def base_config(args, out_dir: str, **kw) -> TrainConfig:
    fields = dict(data_dir=args.data_dir, out_dir=out_dir, seed=args.seed)
    if args.epochs is not None:
        drops = tuple(d for d in (args.epochs * 5 // 9, args.epochs * 5 // 6) if d > 0)
        fields.update(epochs=args.epochs, lr_drop_epochs=drops)
    fields.update(kw)
    return TrainConfig(**fields)


def train_sources(args, root: str) -> str:
    """Single-form baselines double as the frozen teachers for later studies."""
    src = os.path.join(root, "sources")
    os.makedirs(src, exist_ok=True)
    done = all(
        os.path.exists(os.path.join(src, f"checkpoint_{f.value}.ckpt")) for f in Form
    )
    if done:
        return src
    for form in Form:
        cfg = base_config(args, os.path.join(root, f"sfrl_{form.value}"))
        result = train_sfrl(cfg, form)
        print(f"  sfrl {form.value:7s} test acc {result.final_test_acc[form]:.4f}")
        shutil.copy(
            os.path.join(cfg.out_dir, f"checkpoint_{form.value}.ckpt"),
            os.path.join(src, f"checkpoint_{form.value}.ckpt"),
        )
    return src


def joint_acc(result) -> float:
    return result.final_test_acc[Form.JOINT]


def study_modes(args, root: str, rows: list) -> None:
    print("\n== training modes (joint-form test accuracy) ==")
    src = train_sources(args, root)
    for form in Form:
        report = json.load(
            open(os.path.join(root, f"sfrl_{form.value}", "report.json"))
        )
        rows.append({"study": "modes", "variant": f"sfrl_{form.value}",
                     "acc": report["acc_test"][form.value]})
    cfg = base_config(args, os.path.join(root, "offline"),
                      acfl=AcflConfig(mode="offline"), source_dir=src)
    off = train_acfl_offline(cfg)
    cfg = base_config(args, os.path.join(root, "online"), acfl=AcflConfig(mode="online"))
    on = train_acfl_online(cfg)
    print(f"  frozen-source cross-form  {joint_acc(off):.4f}")
    print(f"  co-trained cross-form     {joint_acc(on):.4f}")
    rows.append({"study": "modes", "variant": "offline", "acc": joint_acc(off)})
    rows.append({"study": "modes", "variant": "online", "acc": joint_acc(on)})


def study_channels(args, root: str, rows: list) -> None:
    print("\n== mimic channel (co-trained, joint-form test accuracy) ==")
    variants = {
        "catmap": (Channel.CATMAP,),
        "feature": (Channel.FEATURE,),
        "both": (Channel.FEATURE, Channel.CATMAP),
    }
    for name, channels in variants.items():
        cfg = base_config(args, os.path.join(root, f"ch_{name}"),
                          acfl=AcflConfig(mode="online", channels=channels))
        acc = joint_acc(train_acfl_online(cfg))
        print(f"  {name:8s} {acc:.4f}")
        rows.append({"study": "channels", "variant": name, "acc": acc})
    print("  (feature-channel mimicry fights the classifier at this scale;")
    print("   the class-activation channel is the shipped default)")


def study_beta(args, root: str, rows: list) -> None:
    print("\n== source-quality scaling (co-trained, joint-form test accuracy) ==")
    variants = {
        "adaptive": AcflConfig(mode="online", beta_enabled=True),
        "disabled": AcflConfig(mode="online", beta_enabled=False),
        "all_ones": AcflConfig(mode="online", beta_override=(1.0, 1.0, 1.0)),
    }
    for name, acfl in variants.items():
        cfg = base_config(args, os.path.join(root, f"beta_{name}"), acfl=acfl)
        acc = joint_acc(train_acfl_online(cfg))
        print(f"  {name:8s} {acc:.4f}")
        rows.append({"study": "beta", "variant": name, "acc": acc})


def study_masks(args, root: str, rows: list) -> None:
    print("\n== source masking (frozen-source, joint-form test accuracy) ==")
    src = train_sources(args, root)
    variants = {
        "all_sources": (True, True, True),
        "no_hybrid": (True, True, False),
        "no_bone": (True, False, True),
        "joint_only": (True, False, False),
    }
    for name, mask in variants.items():
        cfg = base_config(args, os.path.join(root, f"mask_{name}"),
                          acfl=AcflConfig(mode="offline", source_mask=mask),
                          source_dir=src)
        acc = joint_acc(train_acfl_offline(cfg))
        print(f"  {name:12s} {acc:.4f}")
        rows.append({"study": "masks", "variant": name, "acc": acc})


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="out/ablations", help="run directory root")
    parser.add_argument("--data-dir", default=None,
                        help="dataset directory (default: <out>/data, generated if absent)")
    parser.add_argument("--data-seed", type=int, default=101)
    parser.add_argument("--seed", type=int, default=3, help="training seed for every run")
    parser.add_argument("--epochs", type=int, default=None,
                        help="shrink every run to this many epochs (default: full recipe)")
    parser.add_argument("--studies", default=",".join(STUDIES),
                        help=f"comma-separated subset of {','.join(STUDIES)}")
    args = parser.parse_args(argv)

    chosen = [s.strip() for s in args.studies.split(",") if s.strip()]
    unknown = [s for s in chosen if s not in STUDIES]
    if unknown:
        parser.error(f"unknown studies {unknown}; pick from {STUDIES}")

    os.makedirs(args.out, exist_ok=True)
    args.data_dir = ensure_data(args.data_dir or os.path.join(args.out, "data"),
                                args.data_seed)

    t0 = time.perf_counter()
    rows: list[dict] = []
    runner = {"modes": study_modes, "channels": study_channels,
              "beta": study_beta, "masks": study_masks}
    for study in STUDIES:
        if study in chosen:
            runner[study](args, args.out, rows)

    summary = {"seed": args.seed, "epochs": args.epochs, "rows": rows,
               "wall_seconds": round(time.perf_counter() - t0, 1)}
    path = os.path.join(args.out, "ablations.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)
    print(f"\nwrote {path} ({summary['wall_seconds']}s)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
