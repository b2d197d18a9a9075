"""Acceptance gate: one test per stated guarantee, one verdict line each.

Each criterion prints a single ``[criterion N] PASS/FAIL ...`` line with the
measured quantity, its tolerance, and its runtime budget.  Run with ``-s``
to watch the lines appear; the summary test at the end reprints them all.

The multi-seed protocol (criterion 4) trains fifteen full-size runs, so this
file takes several minutes; everything else is seconds.
"""

import concurrent.futures
import json
import math
import os
import shutil
import time

import numpy as np
import pytest

from acfl import tensor as T
from acfl.backbone import BackboneConfig
from acfl.checkpoint import load_checkpoint, save_checkpoint
from acfl.crossform import (
    AcflConfig,
    Channel,
    MimicHead,
    RepresentationSet,
    Role,
    classification_loss,
    complementary_chain,
    compute_attention,
    compute_complementary,
    compute_gate,
    compute_reference,
    mimic_loss,
    total_loss,
)
from acfl.datagen import default_generator_spec, generate_dataset
from acfl.dataio import load_dataset, save_dataset
from acfl.gradcheck import gradcheck
from acfl.skeleton import Form, default_topology, derive_bone
from acfl.tensor import Tensor
from acfl.training import (
    TEST_FILE,
    TRAIN_FILE,
    TrainConfig,
    confidence_weights,
    evaluate_checkpoint,
    fuse_streams,
    load_split_arrays,
    train_acfl_offline,
    train_acfl_online,
    train_sfrl,
)

SEEDS = (3, 5, 7, 11, 13)
VERDICTS: list[str] = []


def verdict(number: int, ok: bool, text: str) -> None:
    line = f"[criterion {number}] {'PASS' if ok else 'FAIL'} {text}"
    VERDICTS.append(line)
    print(line, flush=True)
    assert ok, line


def rng_for(seed):
    return np.random.default_rng(np.random.SeedSequence(seed))


# ---------------------------------------------------------------------------
# criterion 1: gradient correctness


def _fix(rng):
    """Scalarize with a random cotangent, frozen on first use.

    gradcheck re-evaluates the function many times, so the cotangent must not
    be redrawn per call; freezing it keeps f pure while every output entry
    still matters to the scalar.
    """
    cache = {}

    def wrap(out):
        if "w" not in cache:
            cache["w"] = Tensor(rng.normal(size=out.shape))
        return T.sum_all(T.mul(out, cache["w"]))

    return wrap


def _primitive_cases(rng):
    """One gradcheck instance per differentiable primitive."""
    n = lambda *s: Tensor(rng.normal(size=s), requires_grad=True)
    pos = lambda *s: Tensor(rng.uniform(0.2, 2.5, s), requires_grad=True)
    kinkfree = lambda *s: Tensor(
        rng.uniform(0.05, 2.0, s) * np.where(rng.random(s) < 0.5, -1.0, 1.0),
        requires_grad=True,
    )
    onehot = np.eye(4)[rng.integers(0, 4, size=3)]
    mask = np.array([True, False, True, True])

    return {
        "add": (lambda p, q, w=_fix(rng): w(T.add(p, q)), [n(3, 4), n(3, 4)]),
        "sub": (lambda p, q, w=_fix(rng): w(T.sub(p, q)), [n(3, 4), n(3, 4)]),
        "mul": (lambda p, q, w=_fix(rng): w(T.mul(p, q)), [n(3, 4), n(3, 4)]),
        "scale": (lambda p, w=_fix(rng): w(T.scale(p, -1.7)), [n(3, 4)]),
        "add_scalar": (lambda p, w=_fix(rng): w(T.add_scalar(p, 0.9)), [n(3, 4)]),
        "relu": (lambda p, w=_fix(rng): w(T.relu(p)), [kinkfree(3, 4)]),
        "sigmoid": (lambda p, w=_fix(rng): w(T.sigmoid(p)), [n(3, 4)]),
        "log": (lambda p, w=_fix(rng): w(T.log(p)), [pos(2, 3)]),
        "pow_scalar": (lambda p, w=_fix(rng): w(T.pow_scalar(p, 1.3)), [pos(2, 3)]),
        "reshape": (lambda p, w=_fix(rng): w(T.reshape(p, (4, 3))), [n(3, 4)]),
        "transpose": (lambda p, w=_fix(rng): w(T.transpose(p)), [n(3, 4)]),
        "sum_axes": (lambda p, w=_fix(rng): w(T.sum_axes(p, (0, 2))), [n(2, 3, 4)]),
        "mean_axes": (lambda p, w=_fix(rng): w(T.mean_axes(p, (1,))), [n(2, 3, 4)]),
        "sum_all": (lambda p: T.sum_all(p), [n(3, 4)]),
        "matmul": (lambda p, q, w=_fix(rng): w(T.matmul(p, q)), [n(3, 4), n(4, 2)]),
        "softmax_rows": (lambda p, w=_fix(rng): w(T.softmax_rows(p)), [n(3, 4)]),
        "softmax_rows_masked": (
            lambda p, w=_fix(rng): w(T.softmax_rows(p, mask=mask)),
            [n(3, 4)],
        ),
        "broadcast_mul_row": (
            lambda p, r, w=_fix(rng): w(T.broadcast_mul_row(p, r)),
            [n(4, 3), n(1, 3)],
        ),
        "broadcast_add_row": (
            lambda p, r, w=_fix(rng): w(T.broadcast_add_row(p, r)),
            [n(4, 3), n(1, 3)],
        ),
        "slice_row": (lambda p, w=_fix(rng): w(T.slice_row(p, 1)), [n(3, 4)]),
        "stack_rows": (
            lambda p, w=_fix(rng): w(
                T.stack_rows([T.slice_row(p, i) for i in (2, 0, 1)])
            ),
            [n(3, 4)],
        ),
        "temporal_conv": (
            lambda p, k, w=_fix(rng): w(T.temporal_conv(p, k, 2)),
            [n(2, 1, 7, 3, 2), n(2, 3)],
        ),
        "batch_norm_train": (
            lambda p, g, c, w=_fix(rng): w(T.batch_norm_train(p, g, c)),
            [n(4, 1, 3, 2, 3), pos(3), n(3)],
        ),
        "sigmoid_bce_rows": (lambda p: T.sigmoid_bce_rows(p, onehot), [n(3, 4)]),
        "softmax_ce_rows": (lambda p: T.softmax_ce_rows(p, onehot), [n(3, 4)]),
    }


def _composite_objective_case(rng):
    """The complete training objective: attention chain plus both loss kinds."""
    forms, d = 3, 8
    beta = rng.uniform(0.2, 1.0, (1, forms))
    onehot = np.eye(d)[rng.integers(0, d, size=forms)]

    def f(et, es, wq, wk, wv, logits):
        head = MimicHead(query_proj=wq, key_proj=wk, value_proj=wv, beta=beta)
        targets = RepresentationSet(et, Channel.FEATURE, Role.TARGET)
        sources = RepresentationSet(es, Channel.FEATURE, Role.SOURCE)
        attention = compute_attention(targets, sources, head)
        reference = compute_reference(attention, sources, head)
        gate = compute_gate(targets, reference, head)
        comp = compute_complementary(gate, reference)
        probs = T.sigmoid(logits)
        ce, mimic = [], []
        for i in range(forms):
            row = T.reshape(T.slice_row(probs, i), (1, d))
            ce.append(classification_loss(row, onehot[i : i + 1]))
            mimic.append(mimic_loss(T.slice_row(comp, i), T.slice_row(et, i)))
        return total_loss(ce, {Channel.FEATURE: mimic}, mimic_weight=1.0)

    leaves = [
        Tensor(rng.normal(size=(forms, d)), requires_grad=True),
        Tensor(rng.normal(size=(forms, d)), requires_grad=True),
        Tensor(rng.normal(size=(d, d)) * 0.5, requires_grad=True),
        Tensor(rng.normal(size=(d, d)) * 0.5, requires_grad=True),
        Tensor(rng.normal(size=(d, d)) * 0.5, requires_grad=True),
        Tensor(rng.normal(size=(forms, d)), requires_grad=True),
    ]
    return f, leaves


def test_criterion_1_gradient_correctness():
    t0 = time.perf_counter()
    worst, worst_name = 0.0, ""
    failures = []
    for seed in range(100):
        rng = rng_for((1, seed))
        cases = _primitive_cases(rng)
        f, leaves = _composite_objective_case(rng)
        cases["composite objective"] = (f, leaves)
        for name, (fn, inputs) in cases.items():
            report = gradcheck(fn, inputs)
            if report.max_rel_err > worst:
                worst, worst_name = report.max_rel_err, name
            if not report.passed:
                failures.append(f"{name}@seed{seed}")
    wall = time.perf_counter() - t0
    verdict(
        1,
        not failures and worst < 1e-4 and wall < 120,
        f"gradcheck, 25 primitives + composite objective x 100 seeds: "
        f"max rel err {worst:.2e} ({worst_name}) vs 1e-4"
        + (f", failures {failures[:5]}" if failures else "")
        + f", {wall:.1f}s < 120s",
    )


# ---------------------------------------------------------------------------
# criterion 2: algebraic loop oracles


def _loop_mimic_chain(t, s, wq, wk, wv, beta, mask):
    """Attention, reference, gate, complementary in explicit Python loops."""
    L, Ls, d = len(t), len(s), len(t[0])

    def matvec(w, v):
        return [math.fsum(w[r][c] * v[c] for c in range(d)) for r in range(d)]

    q = [matvec(wq, row) for row in t]
    k = [matvec(wk, row) for row in s]
    logits = [
        [math.fsum(q[i][r] * k[j][r] for r in range(d)) / math.sqrt(d) for j in range(Ls)]
        for i in range(L)
    ]
    attn = []
    for row in logits:
        kept = [v if mask[j] else None for j, v in enumerate(row)]
        top = max(v for v in kept if v is not None)
        exps = [math.exp(v - top) if v is not None else 0.0 for v in kept]
        z = math.fsum(exps)
        attn.append([e / z for e in exps])
    ref = [
        [math.fsum(attn[i][j] * beta[j] * s[j][c] for j in range(Ls)) for c in range(d)]
        for i in range(L)
    ]
    gate = [matvec(wv, [t[i][c] - ref[i][c] for c in range(d)]) for i in range(L)]
    gate = [[1.0 / (1.0 + math.exp(-v)) for v in row] for row in gate]
    comp = [[gate[i][c] * ref[i][c] for c in range(d)] for i in range(L)]
    return attn, ref, gate, comp


def test_criterion_2_algebraic_oracles():
    t0 = time.perf_counter()
    worst, worst_at = 0.0, -1
    for instance in range(1000):
        rng = rng_for((2, instance))
        L = int(rng.integers(2, 5))
        d = int(rng.integers(2, 9))
        t = rng.normal(size=(L, d))
        s = rng.normal(size=(L, d))
        wq, wk, wv = (rng.normal(size=(d, d)) for _ in range(3))
        beta = rng.uniform(0.1, 1.0, (1, L))
        mask = np.ones(L, dtype=bool)
        if instance % 3 == 0 and L > 2:
            mask[int(rng.integers(0, L))] = False

        head = MimicHead(
            query_proj=Tensor(wq), key_proj=Tensor(wk), value_proj=Tensor(wv), beta=beta
        )
        out = complementary_chain(
            RepresentationSet(Tensor(t), Channel.FEATURE, Role.TARGET),
            RepresentationSet(Tensor(s), Channel.FEATURE, Role.SOURCE),
            head,
            source_mask=mask,
        )
        la, lr, lg, lc = _loop_mimic_chain(
            t.tolist(), s.tolist(), wq.tolist(), wk.tolist(), wv.tolist(),
            beta[0].tolist(), mask.tolist(),
        )
        for got, want in (
            (out.attention.data, la),
            (out.reference.data, lr),
            (out.gate.data, lg),
            (out.complementary.data, lc),
        ):
            err = float(np.abs(got - np.array(want)).max())
            if err > worst:
                worst, worst_at = err, instance
    wall = time.perf_counter() - t0
    verdict(
        2,
        worst < 1e-12 and wall < 60,
        f"attention/reference/gate/complementary vs loop oracle, 1000 instances: "
        f"max abs err {worst:.2e} (instance {worst_at}) vs 1e-12, {wall:.1f}s < 60s",
    )


# ---------------------------------------------------------------------------
# criterion 3: invariant suite


@pytest.fixture(scope="module")
def tiny_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("acc_tiny")
    spec = default_generator_spec(4)
    train, test = generate_dataset(spec, seed=400, samples_per_class=8)
    save_dataset(train, os.path.join(root, TRAIN_FILE))
    save_dataset(test, os.path.join(root, TEST_FILE))
    return str(root)


TINY_BACKBONE = BackboneConfig(
    class_count=4, stage_widths=(4, 4), blocks_per_stage=(1, 1), temporal_strides=(2, 2)
)


def _tiny_cfg(data_dir, out_dir, **kw):
    base = dict(
        data_dir=data_dir, out_dir=str(out_dir), epochs=2, batch_size=8,
        lr_drop_epochs=(1,), seed=11, backbone=TINY_BACKBONE,
    )
    base.update(kw)
    return TrainConfig(**base)


def _tiny_sources(data_dir, root):
    src = os.path.join(root, "sources")
    os.makedirs(src, exist_ok=True)
    for form in Form:
        cfg = _tiny_cfg(data_dir, os.path.join(root, f"src_{form.value}"))
        train_sfrl(cfg, form)
        shutil.copy(
            os.path.join(cfg.out_dir, f"checkpoint_{form.value}.ckpt"),
            os.path.join(src, f"checkpoint_{form.value}.ckpt"),
        )
    return src


def test_criterion_3_invariants(tiny_dir, tmp_path):
    t0 = time.perf_counter()
    checks = []

    rng = rng_for(3)
    worst_row, nonneg = 0.0, True
    for _ in range(200):
        rows, cols = int(rng.integers(1, 6)), int(rng.integers(2, 6))
        x = Tensor(rng.normal(size=(rows, cols)) * rng.uniform(1, 50))
        mask = None
        if rng.random() < 0.5:
            mask = np.ones(cols, dtype=bool)
            mask[int(rng.integers(0, cols))] = False
        p = T.softmax_rows(x, mask=mask).data
        nonneg &= bool((p >= 0).all())
        worst_row = max(worst_row, float(np.abs(p.sum(axis=1) - 1.0).max()))
    checks.append(("softmax rows sum to 1 within 1e-9", worst_row < 1e-9 and nonneg))

    s = T.sigmoid(Tensor(np.concatenate([rng.normal(size=500) * 10, [-30.0, 30.0]]))).data
    checks.append(("sigmoid strictly inside (0,1)", bool((s > 0).all() and (s < 1).all())))

    zero_ok, nonneg_ok = True, True
    for _ in range(100):
        x = rng.normal(size=(3, 5))
        y = rng.normal(size=(3, 5))
        zero_ok &= mimic_loss(Tensor(x), Tensor(x.copy())).item() == 0.0
        nonneg_ok &= mimic_loss(Tensor(x), Tensor(y)).item() >= 0.0
    checks.append(("mimic distance zero at identity", zero_ok))
    checks.append(("mimic distance nonnegative", nonneg_ok))

    topo = default_topology()
    depth = []
    for v in range(topo.joint_count):
        d, node = 0, v
        while topo.parent[node] != node:
            node = topo.parent[node]
            d += 1
        depth.append(d)
    order = sorted(range(topo.joint_count), key=lambda v: depth[v])
    recon_err = 0.0
    for _ in range(50):
        ds, _ = generate_dataset(
            default_generator_spec(4), seed=int(rng.integers(1 << 20)), samples_per_class=2
        )
        sample = ds.samples[int(rng.integers(0, len(ds.samples)))]
        joint = sample.data
        bone = derive_bone(sample, topo).data
        rebuilt = np.zeros_like(joint)
        for v in order:
            parent = topo.parent[v]
            if parent == v:
                rebuilt[..., v, :] = joint[..., v, :]
            else:
                rebuilt[..., v, :] = rebuilt[..., parent, :] + bone[..., v, :]
        recon_err = max(recon_err, float(np.abs(rebuilt - joint).max()))
    checks.append(("bone-to-joint reconstruction under 1e-12", recon_err < 1e-12))

    train_path = os.path.join(tiny_dir, TRAIN_FILE)
    reloaded = load_dataset(train_path)
    copy_path = str(tmp_path / "copy.ds")
    save_dataset(reloaded, copy_path)
    checks.append(
        ("dataset round-trip byte-exact",
         open(train_path, "rb").read() == open(copy_path, "rb").read())
    )

    src = _tiny_sources(tiny_dir, str(tmp_path))
    ck_path = os.path.join(src, "checkpoint_joint.ckpt")
    bundle = load_checkpoint(ck_path)
    ck_copy = str(tmp_path / "copy.ckpt")
    save_checkpoint(ck_copy, bundle.model, heads=bundle.heads, metadata=bundle.metadata)
    checks.append(
        ("checkpoint round-trip byte-exact",
         open(ck_path, "rb").read() == open(ck_copy, "rb").read())
    )

    pre = {
        f: load_checkpoint(os.path.join(src, f"checkpoint_{f.value}.ckpt")).model.byte_hash()
        for f in Form
    }
    cfg = _tiny_cfg(tiny_dir, tmp_path / "off", acfl=AcflConfig(mode="offline"), source_dir=src)
    result = train_acfl_offline(cfg)
    report = json.load(open(os.path.join(result.run_dir, "report.json")))
    post = {
        f: load_checkpoint(os.path.join(src, f"checkpoint_{f.value}.ckpt")).model.byte_hash()
        for f in Form
    }
    hash_ok = all(pre[f] == post[f] == report["source_hashes"][f.value] for f in Form)
    checks.append(("frozen source hash unchanged across training", hash_ok))

    wall = time.perf_counter() - t0
    failed = [name for name, ok in checks if not ok]
    verdict(
        3,
        not failed,
        f"invariants, {len(checks)} checks "
        f"(softmax row dev {worst_row:.1e}, reconstruction {recon_err:.1e}): "
        + (f"failed {failed}, " if failed else "all hold, ")
        + f"{wall:.1f}s",
    )


# ---------------------------------------------------------------------------
# criterion 4: paired multi-seed protocol on the default dataset


def _seed_pipeline(job):
    """One seed's full pipeline: 3 baselines, frozen-source run, co-trained run."""
    seed, data_dir, root = job
    base = os.path.join(root, f"s{seed}")
    src = os.path.join(base, "sources")
    os.makedirs(src, exist_ok=True)
    out = {"seed": seed, "base": base}
    for form in Form:
        cfg = TrainConfig(
            data_dir=data_dir, out_dir=os.path.join(base, f"src_{form.value}"), seed=seed
        )
        r = train_sfrl(cfg, form)
        out[f"sfrl_{form.value}"] = r.final_test_acc[form]
        shutil.copy(
            os.path.join(cfg.out_dir, f"checkpoint_{form.value}.ckpt"),
            os.path.join(src, f"checkpoint_{form.value}.ckpt"),
        )
    cfg = TrainConfig(
        data_dir=data_dir, out_dir=os.path.join(base, "offline"), seed=seed,
        acfl=AcflConfig(mode="offline"), source_dir=src,
    )
    r = train_acfl_offline(cfg)
    out["offline"] = {f.value: a for f, a in r.final_test_acc.items()}
    cfg = TrainConfig(
        data_dir=data_dir, out_dir=os.path.join(base, "online"), seed=seed,
        acfl=AcflConfig(mode="online"),
    )
    r = train_acfl_online(cfg)
    out["online"] = {f.value: a for f, a in r.final_test_acc.items()}
    return out


@pytest.fixture(scope="module")
def paired_runs(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("acc_protocol"))
    data_dir = os.path.join(root, "data")
    os.makedirs(data_dir)
    spec = default_generator_spec(8)
    train, test = generate_dataset(spec, seed=101, samples_per_class=40)
    assert len(train) == 240 and len(test) == 80
    save_dataset(train, os.path.join(data_dir, TRAIN_FILE))
    save_dataset(test, os.path.join(data_dir, TEST_FILE))

    t0 = time.perf_counter()
    jobs = [(seed, data_dir, root) for seed in SEEDS]
    with concurrent.futures.ProcessPoolExecutor(max_workers=len(SEEDS)) as pool:
        results = {r["seed"]: r for r in pool.map(_seed_pipeline, jobs)}
    return {"results": results, "wall": time.perf_counter() - t0, "data_dir": data_dir}


def test_criterion_4_paired_protocol(paired_runs):
    results, wall = paired_runs["results"], paired_runs["wall"]
    sfrl = [results[s]["sfrl_joint"] for s in SEEDS]
    off = [results[s]["offline"]["joint"] for s in SEEDS]
    on = [results[s]["online"]["joint"] for s in SEEDS]
    mean = lambda v: sum(v) / len(v)
    for s in SEEDS:
        r = results[s]
        print(
            f"  seed {s}: sfrl={r['sfrl_joint']:.4f} "
            f"offline={r['offline']['joint']:.4f} online={r['online']['joint']:.4f}"
        )
    ok = mean(off) >= mean(sfrl) and mean(off) >= mean(on) - 0.03 and wall < 900
    verdict(
        4,
        ok,
        f"paired protocol, seeds {SEEDS}: mean joint test acc "
        f"offline {mean(off):.4f} >= sfrl {mean(sfrl):.4f} and "
        f">= online {mean(on):.4f} - 0.03, {wall:.0f}s < 900s",
    )


# ---------------------------------------------------------------------------
# criterion 5: source-quality scaling ablation


def test_criterion_5_beta_ablation(paired_runs, tmp_path):
    t0 = time.perf_counter()
    data_dir = paired_runs["data_dir"]
    recipe = dict(epochs=6, lr_drop_epochs=(4, 5), seed=3)

    accs, blobs = {}, {}
    for name, acfl in (
        ("enabled", AcflConfig(mode="online", beta_enabled=True)),
        ("disabled", AcflConfig(mode="online", beta_enabled=False)),
        ("all_ones", AcflConfig(mode="online", beta_override=(1.0, 1.0, 1.0))),
    ):
        cfg = TrainConfig(data_dir=data_dir, out_dir=str(tmp_path / name), acfl=acfl, **recipe)
        r = train_acfl_online(cfg)
        accs[name] = r.final_test_acc[Form.JOINT]
        blobs[name] = open(os.path.join(cfg.out_dir, "metrics.jsonl"), "rb").read()
    print(
        f"  side by side (joint test acc): scaling on {accs['enabled']:.4f} | "
        f"scaling off {accs['disabled']:.4f} | fixed all-ones {accs['all_ones']:.4f}"
    )
    wall = time.perf_counter() - t0
    verdict(
        5,
        blobs["all_ones"] == blobs["disabled"] and wall < 300,
        f"source-quality scaling ablation: all-ones override bitwise equal to "
        f"disabled path, enabled run completes alongside, {wall:.1f}s < 300s",
    )


# ---------------------------------------------------------------------------
# criterion 6: stream fusion on the protocol's artifacts


def test_criterion_6_fusion(paired_runs):
    t0 = time.perf_counter()
    results = paired_runs["results"]
    data_dir = paired_runs["data_dir"]
    y_true = load_split_arrays(data_dir, ()).test_y
    ones, twos, threes, maxes = [], [], [], []
    for s in SEEDS:
        base = results[s]["base"]
        streams = {
            form: evaluate_checkpoint(
                os.path.join(base, "offline", f"checkpoint_{form}.ckpt"), data_dir
            )
            for form in ("joint", "bone", "hybrid")
        }
        kj, kb, kh = (streams[f]["catmaps"] for f in ("joint", "bone", "hybrid"))
        two = fuse_streams([kj, kb], confidence_weights([kj, kb]))
        three = fuse_streams([kj, kb, kh], confidence_weights([kj, kb, kh]))
        ones.append(streams["bone"]["accuracy"])
        twos.append(float((two == y_true).mean()))
        threes.append(float((three == y_true).mean()))
        maxes.append(max(streams["joint"]["accuracy"], streams["bone"]["accuracy"]))
    mean = lambda v: sum(v) / len(v)
    print(
        f"  1s (bone) {mean(ones):.4f} | 2s (joint+bone) {mean(twos):.4f} | "
        f"3s {mean(threes):.4f} | best single of the pair {mean(maxes):.4f}"
    )
    wall = time.perf_counter() - t0
    verdict(
        6,
        mean(twos) >= mean(maxes) - 0.02 and wall < 300,
        f"two-stream fusion {mean(twos):.4f} >= best single {mean(maxes):.4f} - 0.02 "
        f"over {len(SEEDS)} seeds, {wall:.1f}s < 300s",
    )


# ---------------------------------------------------------------------------
# criterion 7: byte-level determinism


def test_criterion_7_determinism(tiny_dir, tmp_path):
    t0 = time.perf_counter()
    src = _tiny_sources(tiny_dir, str(tmp_path / "prep"))

    def sfrl_run(out):
        cfg = _tiny_cfg(tiny_dir, out, epochs=4, lr_drop_epochs=(3,))
        return train_sfrl(cfg, Form.JOINT)

    def online_run(out):
        cfg = _tiny_cfg(
            tiny_dir, out,
            backbone=BackboneConfig(
                class_count=4, stage_widths=(4, 4), blocks_per_stage=(1, 1),
                temporal_strides=(2, 2), squash="softmax",
            ),
            acfl=AcflConfig(mode="online", channels=(Channel.FEATURE, Channel.CATMAP)),
        )
        return train_acfl_online(cfg)

    def offline_run(out):
        cfg = _tiny_cfg(
            tiny_dir, out,
            acfl=AcflConfig(
                mode="offline", source_mask=(True, True, False),
                beta_override=(0.9, 0.7, 0.0),
            ),
            source_dir=src,
        )
        return train_acfl_offline(cfg)

    mismatches = []
    for name, runner in (("sfrl", sfrl_run), ("online", online_run), ("offline", offline_run)):
        blobs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{name}_{rep}"
            runner(out)
            blobs.append(open(out / "metrics.jsonl", "rb").read())
        if blobs[0] != blobs[1]:
            mismatches.append(name)
    wall = time.perf_counter() - t0
    verdict(
        7,
        not mismatches and wall < 600,
        f"determinism, 3 configs x 2 runs: metrics byte-identical"
        + (f" except {mismatches}" if mismatches else "")
        + f", {wall:.1f}s < 600s",
    )


def test_acceptance_summary():
    print()
    for line in VERDICTS:
        print(line)
    assert len(VERDICTS) == 7, f"expected 7 verdicts, saw {len(VERDICTS)}"
    assert all(" PASS " in line for line in VERDICTS)
