#!/usr/bin/env python3
"""Multi-stream fusion study: single-form baselines vs cross-form streams.

For each seed this trains the three single-form baselines, reuses them as
frozen sources for a cross-form run, then fuses class-activation maps across
streams (1s = bone, 2s = joint+bone, 3s = all three).  The table contrasts
fusing baseline streams against fusing cross-form streams under the same
weighting, which is where the complementarity of the cross-form objective
shows up at this scale.

Seeds run in parallel processes; five full-size seeds take a few minutes.
"""

import argparse
import concurrent.futures
import json
import os
import shutil
import time

from acfl.crossform import AcflConfig
from acfl.datagen import default_generator_spec, generate_dataset
from acfl.dataio import save_dataset
from acfl.skeleton import Form
from acfl.training import (
    TEST_FILE,
    TRAIN_FILE,
    TrainConfig,
    confidence_weights,
    evaluate_checkpoint,
    fuse_streams,
    load_split_arrays,
    train_acfl_offline,
    train_sfrl,
)

FORMS = ("joint", "bone", "hybrid")


def ensure_data(data_dir: str, seed: int) -> str:
    if os.path.exists(os.path.join(data_dir, TRAIN_FILE)):
        return data_dir
    os.makedirs(data_dir, exist_ok=True)
    spec = default_generator_spec(8)
    train, test = generate_dataset(spec, seed=seed, samples_per_class=40)
    save_dataset(train, os.path.join(data_dir, TRAIN_FILE))
    save_dataset(test, os.path.join(data_dir, TEST_FILE))
    return data_dir


def _fuse_family(checkpoint_dir: str, prefix: str, data_dir: str, y_true, weighting: str):
    """Singles plus 2s/3s fusion accuracies for one family of checkpoints."""
    evals = {
        form: evaluate_checkpoint(
            os.path.join(checkpoint_dir, f"{prefix}{form}.ckpt"), data_dir
        )
        for form in FORMS
    }
    catmaps = {form: evals[form]["catmaps"] for form in FORMS}

    def fused(forms):
        stack = [catmaps[f] for f in forms]
        if weighting == "equal":
            weights = [1.0] * len(stack)
        else:
            weights = confidence_weights(stack)
        pred = fuse_streams(stack, weights)
        return float((pred == y_true).mean())

    out = {form: evals[form]["accuracy"] for form in FORMS}
    out["fuse2"] = fused(("joint", "bone"))
    out["fuse3"] = fused(FORMS)
    return out


def _pipeline(job):
    """One seed: three baselines, one frozen-source run, fusion for both."""
    seed, data_dir, root, epochs, weighting = job
    base = os.path.join(root, f"seed_{seed}")
    src = os.path.join(base, "sources")
    os.makedirs(src, exist_ok=True)
    extra = {}
    if epochs is not None:
        drops = tuple(d for d in (epochs * 5 // 9, epochs * 5 // 6) if d > 0)
        extra = dict(epochs=epochs, lr_drop_epochs=drops)
    for form in Form:
        cfg = TrainConfig(
            data_dir=data_dir, out_dir=os.path.join(base, f"sfrl_{form.value}"),
            seed=seed, **extra,
        )
        train_sfrl(cfg, form)
        shutil.copy(
            os.path.join(cfg.out_dir, f"checkpoint_{form.value}.ckpt"),
            os.path.join(src, f"checkpoint_{form.value}.ckpt"),
        )
    cfg = TrainConfig(
        data_dir=data_dir, out_dir=os.path.join(base, "offline"), seed=seed,
        acfl=AcflConfig(mode="offline"), source_dir=src, **extra,
    )
    train_acfl_offline(cfg)

    y_true = load_split_arrays(data_dir, ()).test_y
    return {
        "seed": seed,
        "baseline": _fuse_family(src, "checkpoint_", data_dir, y_true, weighting),
        "crossform": _fuse_family(
            os.path.join(base, "offline"), "checkpoint_", data_dir, y_true, weighting
        ),
    }


def print_family(name: str, rows: list[dict]) -> dict:
    mean = lambda key: sum(r[key] for r in rows) / len(rows)
    cells = {k: mean(k) for k in ("joint", "bone", "hybrid", "fuse2", "fuse3")}
    cells["best_single"] = sum(
        max(r["joint"], r["bone"], r["hybrid"]) for r in rows
    ) / len(rows)
    print(
        f"  {name:10s} joint {cells['joint']:.4f}  bone {cells['bone']:.4f}  "
        f"hybrid {cells['hybrid']:.4f} | 2s {cells['fuse2']:.4f}  "
        f"3s {cells['fuse3']:.4f} | best single {cells['best_single']:.4f}"
    )
    return cells


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="out/fusion", help="run directory root")
    parser.add_argument("--data-dir", default=None,
                        help="dataset directory (default: <out>/data, generated if absent)")
    parser.add_argument("--data-seed", type=int, default=101)
    parser.add_argument("--seeds", default="3,5,7,11,13", help="comma-separated seeds")
    parser.add_argument("--weights", choices=("confidence", "equal"), default="confidence")
    parser.add_argument("--epochs", type=int, default=None,
                        help="shrink every run to this many epochs (default: full recipe)")
    parser.add_argument("--jobs", type=int, default=0,
                        help="parallel seed pipelines (default: one per seed)")
    args = parser.parse_args(argv)

    seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
    if not seeds:
        parser.error("need at least one seed")
    os.makedirs(args.out, exist_ok=True)
    data_dir = ensure_data(args.data_dir or os.path.join(args.out, "data"), args.data_seed)

    jobs = [(s, data_dir, args.out, args.epochs, args.weights) for s in seeds]
    workers = args.jobs or min(len(seeds), os.cpu_count() or 1)
    t0 = time.perf_counter()
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_pipeline, jobs))
    wall = time.perf_counter() - t0

    print(f"\n== stream fusion over seeds {seeds} ({args.weights} weights) ==")
    base = print_family("baseline", [r["baseline"] for r in results])
    cross = print_family("crossform", [r["crossform"] for r in results])
    gain_base = base["fuse2"] - base["best_single"]
    gain_cross = cross["fuse2"] - cross["best_single"]
    print(
        f"  2s fusion gain over best single: baseline {gain_base:+.4f}, "
        f"cross-form {gain_cross:+.4f}"
    )

    summary = {
        "seeds": list(seeds), "weighting": args.weights, "epochs": args.epochs,
        "means": {"baseline": base, "crossform": cross},
        "per_seed": results, "wall_seconds": round(wall, 1),
    }
    path = os.path.join(args.out, "fusion.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)
    print(f"wrote {path} ({wall:.0f}s)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
