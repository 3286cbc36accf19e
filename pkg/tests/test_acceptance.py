"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (see conftest.py) that is echoed in the
terminal summary. Criteria 6 and 7 share the trained models of one fixture;
the whole module takes about 25 minutes on a single CPU core.
"""
import io
import json
import time

import numpy as np
import pytest
from conftest import record

from artifact.autodiff import Tensor, no_grad, ops
from artifact.autodiff.gradcheck import max_relative_error
from artifact.autodiff.ops import BatchNormState
from artifact.cli import main
from artifact.evaluation import ProbeConfig, extract_features, linear_probe
from artifact.io import (
    load_checkpoint,
    load_dataset,
    make_synthetic_shapes,
    read_ppm,
    save_checkpoint,
    write_dataset,
)
from artifact.masking import CorruptionConfig, MaskGrid, corrupt_feature, sample_mask
from artifact.networks import (
    Network,
    RepairTrace,
    build_models,
    empirical_receptive_field,
    encoder_spec,
    forward_autoencode,
    forward_damage_repair,
)
from artifact.training import (
    TrainConfig,
    build_adversarial,
    build_autoencoder,
    evaluate_discriminator,
    load_adversarial,
    load_autoencoder,
    loss_auto,
    loss_discriminator_class,
    loss_mask,
    loss_repair_class,
    pretrain_autoencoder,
    reconstruction_mse,
    stream,
    train_adversarial,
)

PAPER_ENCODER = "(32)3c1-(64)2c2-(128)2c2-(256)2c2-(512)2c2"
OVERLAP_ENCODER = "(32)3c1-(64)3c2-(128)3c2-(256)3c2-(512)3c2"


def cli(argv):
    out = io.StringIO()
    return main(argv, out=out), out.getvalue()


# --------------------------------------------------------------------------
# 1. gradient suite
def _away_from_zero(rng, *shape):
    # keeps finite differences off the kinks of piecewise-linear ops
    return Tensor(rng.choice([-1.0, 1.0], shape) * rng.uniform(0.05, 2.0, shape), requires_grad=True)


def _normal(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _project(out, rng):
    return ops.sum(ops.mul(out, Tensor(rng.standard_normal(out.shape))))


def _bn_case(rng, training):
    x = _normal(rng, 4, 2, 3, 3)
    st = BatchNormState.create(2, dtype=np.float64)
    st.gamma.data[:] = rng.uniform(0.5, 1.5, 2)
    st.beta.data[:] = rng.standard_normal(2)
    st.running_mean[:] = rng.standard_normal(2)
    st.running_var[:] = rng.uniform(0.5, 2.0, 2)
    w = Tensor(rng.standard_normal(x.shape))
    return (lambda: ops.sum(ops.mul(ops.batch_norm(x, st, training, update_stats=False), w))), [x, st.gamma, st.beta]


def _case(name, rng):
    """Scalar-valued closure plus its inputs for one random instance."""
    if name in ("add", "sub", "mul"):
        a, b = _normal(rng, 3, 4), _normal(rng, 1, 4)  # broadcasting on the second operand
        fn = getattr(ops, name)
        w = Tensor(rng.standard_normal((3, 4)))
        return (lambda: ops.sum(ops.mul(fn(a, b), w))), [a, b]
    if name in ("square", "sigmoid", "softplus"):
        x = _normal(rng, 3, 5)
        w = Tensor(rng.standard_normal((3, 5)))
        fn = getattr(ops, name)
        return (lambda: ops.sum(ops.mul(fn(x), w))), [x]
    if name in ("leaky_relu", "relu"):
        x = _away_from_zero(rng, 3, 5)
        w = Tensor(rng.standard_normal((3, 5)))
        fn = getattr(ops, name)
        return (lambda: ops.sum(ops.mul(fn(x), w))), [x]
    if name == "reshape":
        x = _normal(rng, 2, 6)
        w = Tensor(rng.standard_normal((3, 4)))
        return (lambda: ops.sum(ops.mul(ops.reshape(x, (3, 4)), w))), [x]
    if name == "flatten":
        x = _normal(rng, 2, 2, 3)
        w = Tensor(rng.standard_normal((2, 6)))
        return (lambda: ops.sum(ops.mul(ops.flatten(x), w))), [x]
    if name == "sum":
        x = _normal(rng, 3, 3)
        return (lambda: ops.sum(ops.square(ops.sum(x)))), [x]
    if name == "mean":
        x = _normal(rng, 3, 3)
        return (lambda: ops.square(ops.mean(x))), [x]
    if name == "concat":
        a, b = _normal(rng, 2, 1, 3), _normal(rng, 2, 2, 3)
        w = Tensor(rng.standard_normal((2, 3, 3)))
        return (lambda: ops.sum(ops.mul(ops.concat([a, b], axis=1), w))), [a, b]
    if name == "slice_batch":
        x = _normal(rng, 4, 3)
        w = Tensor(rng.standard_normal((2, 3)))
        return (lambda: ops.sum(ops.mul(ops.slice_batch(x, 1, 3), w))), [x]
    if name.startswith("conv2d"):
        k, s = {"conv2d_3x1": (3, 1), "conv2d_2x2": (2, 2), "conv2d_3x2": (3, 2)}[name]
        x, w, b = _normal(rng, 1, 2, 5, 5), _normal(rng, 3, 2, k, k), _normal(rng, 3)
        proj = Tensor(rng.standard_normal(ops.conv2d(x, w, b, s).shape))
        return (lambda: ops.sum(ops.mul(ops.conv2d(x, w, b, s), proj))), [x, w, b]
    if name == "resize_bilinear":
        x = _normal(rng, 1, 2, 3, 3)
        w = Tensor(rng.standard_normal((1, 2, 6, 5)))
        return (lambda: ops.sum(ops.mul(ops.resize_bilinear(x, 6, 5), w))), [x]
    if name == "upsample_nearest":
        x = _normal(rng, 1, 2, 2, 3)
        w = Tensor(rng.standard_normal((1, 2, 4, 6)))
        return (lambda: ops.sum(ops.mul(ops.upsample_nearest(x, 4, 6), w))), [x]
    if name == "resize_nearest":
        x = _normal(rng, 1, 2, 4, 4)
        w = Tensor(rng.standard_normal((1, 2, 3, 5)))
        return (lambda: ops.sum(ops.mul(ops.resize_nearest(x, 3, 5), w))), [x]
    if name == "avg_pool3":
        x = _normal(rng, 1, 2, 4, 3)
        return (lambda: _project_fixed(ops.avg_pool3(x), 7)), [x]
    if name == "adaptive_avg_pool":
        x = _normal(rng, 1, 2, 5, 4)
        return (lambda: _project_fixed(ops.adaptive_avg_pool(x, 2, 3), 8)), [x]
    if name == "batch_norm_train":
        return _bn_case(rng, True)
    if name == "batch_norm_eval":
        return _bn_case(rng, False)
    if name == "dense":
        x, w, b = _normal(rng, 3, 4), _normal(rng, 4, 2), _normal(rng, 2)
        return (lambda: _project_fixed(ops.dense(x, w, b), 9)), [x, w, b]
    if name.startswith("corrupt"):
        phi = _normal(rng, 2, 3, 3, 3)
        mask = [sample_mask(3, 3, CorruptionConfig(0.5), rng) for _ in range(2)]
        mode = "noise" if name.endswith("noise") else "average"
        cfg = CorruptionConfig(0.5, mode)
        seed = int(rng.integers(1 << 30))
        return (lambda: _project_fixed(corrupt_feature(phi, mask, cfg, np.random.default_rng(seed)), 10)), [phi]
    if name == "loss_auto":
        a, b = _normal(rng, 2, 3, 2, 2), _normal(rng, 2, 3, 2, 2)
        return (lambda: loss_auto(a, b)), [a, b]
    if name == "loss_discriminator_class":
        r, f = _normal(rng, 5, 1), _normal(rng, 5, 1)
        return (lambda: loss_discriminator_class(r, f)), [r, f]
    if name.startswith("loss_repair_class"):
        f = _normal(rng, 5, 1)
        variant = name.split(":")[1]
        return (lambda: loss_repair_class(f, variant)), [f]
    if name == "loss_mask":
        logits = _normal(rng, 3, 2, 2)
        bits = rng.integers(0, 2, (3, 2, 2))
        return (lambda: loss_mask(logits, bits)), [logits]
    raise KeyError(name)


def _project_fixed(out, seed):
    return ops.sum(ops.mul(out, Tensor(np.random.default_rng(seed).standard_normal(out.shape))))


GRAD_CASES = [
    "add", "sub", "mul", "square", "reshape", "flatten", "sum", "mean", "concat", "slice_batch",
    "leaky_relu", "relu", "sigmoid", "softplus", "conv2d_3x1", "conv2d_2x2", "conv2d_3x2",
    "resize_bilinear", "upsample_nearest", "resize_nearest", "avg_pool3", "adaptive_avg_pool",
    "batch_norm_train", "batch_norm_eval", "dense", "corrupt_average", "corrupt_noise",
    "loss_auto", "loss_discriminator_class", "loss_repair_class:saturating",
    "loss_repair_class:non-saturating", "loss_mask",
]


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {}
    for name in GRAD_CASES:
        errs = []
        for _ in range(20):
            f, inputs = _case(name, rng)
            errs.append(max_relative_error(f, inputs, h=1e-5, samples=None))
        worst[name] = max(errs)
    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if not v < 1e-3}
    ok = not bad and elapsed < 60
    record(1, "gradient suite", ok, f"{len(GRAD_CASES)} ops/losses x 20 instances, worst rel err {max(worst.values()):.1e}, {elapsed:.1f}s")
    assert not bad, bad
    assert elapsed < 60


# --------------------------------------------------------------------------
# 2. gating identity
def test_criterion_2_gating_identity():
    enc, dec, rep, _ = build_models("desk-32", np.random.default_rng(7))
    rng = np.random.default_rng(8)
    x_all = rng.random((50, 3, 32, 32)).astype(np.float32)
    masks = [sample_mask(2, 2, CorruptionConfig(0.5), rng) for _ in range(50)]
    ones = [MaskGrid(np.ones((2, 2), np.uint8), 0.0)] * 5
    kept_nonzero, identical = 0, True
    for b in range(10):
        x = Tensor(x_all[5 * b : 5 * b + 5])
        trace = RepairTrace([], [])
        with no_grad():
            forward_damage_repair(enc, dec, rep, x, masks[5 * b : 5 * b + 5], "full", trace=trace)
            ae = forward_autoencode(enc, dec, x).data
            full = forward_damage_repair(enc, dec, rep, x, ones, "full").data
        for corr, om in zip(trace.corrections, trace.masks):
            kept_nonzero += int(np.count_nonzero(corr[np.broadcast_to(om, corr.shape) == 1]))
        identical &= bool(np.array_equal(ae, full))
    ok = kept_nonzero == 0 and identical
    record(2, "gating identity", ok, f"50 inputs, nonzero corrections at kept sites={kept_nonzero}, all-ones output bit-identical={identical}")
    assert kept_nonzero == 0
    assert identical


# --------------------------------------------------------------------------
# 3. receptive field
def _perturbation_extent(enc, size, site):
    """Rows/cols of input whose perturbation changes bottleneck ``site``."""
    base = np.random.default_rng(0).random((1, 3, size, size)).astype(np.float32)
    batch = np.repeat(base, 2 * size, axis=0)
    for r in range(size):
        batch[r, :, r, :] += 1.0
        batch[size + r, :, :, r] += 1.0
    with no_grad():
        ref = enc(Tensor(base), training=False).data[0, :, site[0], site[1]]
        out = enc(Tensor(batch), training=False).data[:, :, site[0], site[1]]
    hit = np.abs(out - ref).sum(axis=1) > 0
    rows, cols = np.where(hit[:size])[0], np.where(hit[size:])[0]
    return rows, cols


def test_criterion_3_receptive_field():
    code_a, out_a = cli(["rf-analyze", "--spec", PAPER_ENCODER])
    code_b, out_b = cli(["rf-analyze", "--spec", OVERLAP_ENCODER])
    analytic_ok = code_a == 0 and out_a.splitlines()[0] == "rf=18 stride=16 overlap=2"
    analytic_ok &= code_b == 0 and out_b.splitlines()[0] == "rf=33 stride=16 overlap=17"
    note_ok = len(out_b.splitlines()) == 2 and "17" in out_b.splitlines()[1] and "15" in out_b.splitlines()[1]
    empirical = {}
    for kernel, (rf, stride) in ((2, (18, 16)), (3, (33, 16))):
        enc = Network(encoder_spec("desk-64", kernel=kernel), np.random.default_rng(1))
        rows, cols = _perturbation_extent(enc, 64, (1, 1))
        _, cols_next = _perturbation_extent(enc, 64, (1, 2))
        size = max(rows.max() - rows.min() + 1, cols.max() - cols.min() + 1)
        shift = cols_next.min() - cols.min()
        grad = empirical_receptive_field(enc, 64, site=(1, 1))
        empirical[kernel] = (int(size), int(shift), grad.receptive_field, grad.effective_stride)
        assert abs(size - rf) <= 1 and abs(shift - stride) <= 1, (kernel, size, shift)
        assert abs(grad.receptive_field - rf) <= 1 and abs(grad.effective_stride - stride) <= 1
    ok = analytic_ok and note_ok
    record(3, "receptive field", ok, f"rf-analyze (18,16,2) and (33,16,17) with note; perturbation (rf,stride) k2={empirical[2][:2]} k3={empirical[3][:2]}")
    assert analytic_ok and note_ok


# --------------------------------------------------------------------------
# 4. mask statistics
def test_criterion_4_mask_statistics():
    rng = np.random.default_rng(44)
    details, ok = [], True
    for theta in (0.3, 0.5, 0.7):
        cfg = CorruptionConfig(theta)
        drops = sum(int((sample_mask(8, 8, cfg, rng).bits == 0).sum()) for _ in range(10_000))
        n = 10_000 * 64
        frac = drops / n
        sigma = np.sqrt(theta * (1 - theta) / n)
        z = (frac - theta) / sigma
        ok &= abs(z) <= 3
        details.append(f"theta={theta} frac={frac:.4f} z={z:+.2f}")
    record(4, "mask statistics", ok, ", ".join(details))
    assert ok


# --------------------------------------------------------------------------
# 5. autoencoder overfit
def test_criterion_5_autoencoder_overfit():
    data = make_synthetic_shapes(16, 3, 32, seed=0)
    cfg = TrainConfig(seed=0, augment=False, ae_epochs=2000, ae_lr=1e-3)
    start = time.perf_counter()
    # with one full batch per step the running BN statistics settle on the
    # batch statistics, so the training loss is a faithful stopping proxy;
    # the inference-mode MSE below is what the criterion is judged on
    check = lambda step, loss: step >= 100 and loss < 0.005

    bundle = pretrain_autoencoder(data, cfg, max_steps=2000, on_step=check)
    enc, dec = load_autoencoder(bundle, cfg)
    mse = reconstruction_mse(enc, dec, data.images())
    elapsed = time.perf_counter() - start
    ok = mse < 0.01 and bundle.step <= 2000 and elapsed < 300
    record(5, "autoencoder overfit", ok, f"MSE {mse:.4f} after {bundle.step} steps, {elapsed:.0f}s")
    assert mse < 0.01 and bundle.step <= 2000
    assert elapsed < 300


# --------------------------------------------------------------------------
# 6 + 7. adversarial training and transfer rank order
SEEDS = (0, 1, 2)
PROBE = ProbeConfig(layer=4, target_dim=64)
PROBE_IMAGES = 1200


def _smoke_config(seed):
    return TrainConfig(seed=seed, theta=0.5, ae_epochs=10, adv_epochs=30, ae_lr=1e-3)


@pytest.fixture(scope="module")
def trained():
    runs = {}
    for seed in SEEDS:
        cfg = _smoke_config(seed)
        train = make_synthetic_shapes(500, 3, 32, seed=100 + seed)
        start = time.perf_counter()
        ae = pretrain_autoencoder(train, cfg)
        full = train_adversarial(train, ae, cfg)
        full_time = time.perf_counter() - start
        no_repair_cfg = cfg.with_changes(repair=False)
        no_repair = train_adversarial(train, ae, no_repair_cfg)
        runs[seed] = {
            "config": cfg,
            "full": load_adversarial(full, cfg),
            "no_repair": load_adversarial(no_repair, no_repair_cfg),
            "random": build_adversarial(cfg, *build_autoencoder(cfg)),
            "seconds": full_time,
        }
    return runs


def test_criterion_6_adversarial_smoke(trained):
    run = trained[0]
    start = time.perf_counter()
    heldout = make_synthetic_shapes(200, 3, 32, seed=300)
    stats = evaluate_discriminator(run["full"], heldout, run["config"])
    elapsed = run["seconds"] + time.perf_counter() - start
    ok = stats["class_acc"] >= 0.75 and stats["mask_acc"] >= 0.60 and elapsed < 1800
    record(6, "adversarial smoke", ok, f"held-out real/corrupt acc {stats['class_acc']:.3f}, mask acc {stats['mask_acc']:.3f}, {elapsed:.0f}s")
    assert stats["class_acc"] >= 0.75
    assert stats["mask_acc"] >= 0.60
    assert elapsed < 1800


def test_criterion_7_transfer_rank_order(trained):
    acc = {"full": [], "no_repair": [], "random": []}
    for seed in SEEDS:
        probe = make_synthetic_shapes(PROBE_IMAGES, 3, 32, seed=200 + seed)
        for kind in acc:
            feats = extract_features(trained[seed][kind].disc, probe.images(), PROBE)
            acc[kind].append(100 * linear_probe(feats, probe.labels, PROBE).mean)
    mean = {k: float(np.mean(v)) for k, v in acc.items()}
    margin_random = mean["full"] - mean["random"]
    margin_repair = mean["full"] - mean["no_repair"]
    ok = margin_random >= 5 and margin_repair >= 5
    per_seed = "; ".join(f"seed {s}: " + "/".join(f"{acc[k][i]:.1f}" for k in acc) for i, s in enumerate(SEEDS))
    record(
        7,
        "transfer rank order",
        ok,
        f"full {mean['full']:.1f} vs random {mean['random']:.1f} (+{margin_random:.1f}) vs no-repair {mean['no_repair']:.1f} (+{margin_repair:.1f}) [{per_seed}]",
    )
    assert margin_random >= 5
    assert margin_repair >= 5


# --------------------------------------------------------------------------
# 8. ablation harness
ABLATE = "a,g,i,j,k,theta=0.1,theta=0.5,theta=0.7"


def test_criterion_8_ablation_harness(tmp_path):
    write_dataset(tmp_path / "train.imgb", *_raw(make_synthetic_shapes(32, 3, 32, seed=5)))
    write_dataset(tmp_path / "probe.imgb", *_raw(make_synthetic_shapes(60, 3, 32, seed=6)))
    (tmp_path / "run.cfg").write_text(
        "dataset = train.imgb\nprobe_dataset = probe.imgb\nseed = 3\nbatch_size = 8\n"
        "ae_epochs = 2\nadv_epochs = 2\nbuffer_capacity = 16\nprobe_layer = 3\nprobe_target_dim = 64\n"
        "probe_epochs = 20\nprobe_folds = 3\n"
    )
    start = time.perf_counter()
    outputs = []
    for attempt in ("first", "second"):
        code, _ = cli(["ablate", "--config", str(tmp_path / "run.cfg"), "--experiments", ABLATE, "--out-dir", str(tmp_path / attempt)])
        assert code == 0
        outputs.append((tmp_path / attempt / "ablation.jsonl").read_bytes())
    rows = [json.loads(line) for line in outputs[0].decode().splitlines()]
    ids = [r["experiment"] for r in rows]
    identical = outputs[0] == outputs[1]
    ok = identical and ids == ["baseline"] + ABLATE.split(",") and all(r["seed"] == 3 for r in rows)
    record(8, "ablation harness", ok, f"{len(rows)} rows run twice, identical accuracies={identical}, {time.perf_counter() - start:.0f}s")
    assert ids == ["baseline"] + ABLATE.split(",")
    assert identical


def _raw(ds):
    return ds.raw, ds.labels


# --------------------------------------------------------------------------
# 9. rendering
def test_criterion_9_rendering(tmp_path):
    train = make_synthetic_shapes(32, 3, 32, seed=9)
    cfg = TrainConfig(seed=1, batch_size=8, ae_epochs=3, adv_epochs=2, buffer_capacity=16)
    save_checkpoint(train_adversarial(train, pretrain_autoencoder(train, cfg), cfg), tmp_path / "m.spot")
    panels = {}
    for mode in ("full", "no-repair", "ungated", "double-pass"):
        code, _ = cli(["render", "--ckpt", str(tmp_path / "m.spot"), "--mode", mode, "--out", str(tmp_path / f"{mode}.ppm"), "--n", "5", "--seed", "4"])
        assert code == 0
        panels[mode] = read_ppm(tmp_path / f"{mode}.ppm").astype(int)
    tile = 36
    shapes_ok = all(p.shape == (2 * tile, 5 * tile, 3) for p in panels.values())
    # every mode draws its masks from the same keyed stream
    dropped_diff, double_diff = 0, 0
    stream_masks = _render_masks(5, cfg.theta, 4)
    for i, bits in enumerate(stream_masks):
        drop = np.kron(1 - bits, np.ones((16, 16), int)).astype(bool)
        drop[-8:, :8] = False  # the mask inset
        r0, c0 = tile + 2, i * tile + 2
        full = panels["full"][r0 : r0 + 32, c0 : c0 + 32]
        none = panels["no-repair"][r0 : r0 + 32, c0 : c0 + 32]
        twice = panels["double-pass"][r0 : r0 + 32, c0 : c0 + 32]
        dropped_diff += int(np.count_nonzero(np.abs(full - none).sum(axis=2)[drop]))
        double_diff += int(np.count_nonzero(np.abs(full - twice).sum(axis=2)))
    real_rows_equal = all(np.array_equal(panels["full"][:tile], p[:tile]) for p in panels.values())
    any_dropped = any((b == 0).any() for b in stream_masks)
    ok = shapes_ok and any_dropped and dropped_diff > 0 and double_diff > 0 and real_rows_equal
    record(9, "rendering", ok, f"4 modes rendered; no-repair vs full differs at {dropped_diff} dropped pixels, double-pass vs full at {double_diff} pixels")
    assert shapes_ok and real_rows_equal and any_dropped
    assert dropped_diff > 0
    assert double_diff > 0


def _render_masks(n, theta, seed):
    rng = stream(seed, "render")
    return [sample_mask(2, 2, CorruptionConfig(theta), rng).bits for _ in range(n)]


# --------------------------------------------------------------------------
# 10. persistence
def test_criterion_10_persistence(tmp_path):
    data = make_synthetic_shapes(24, 3, 32, seed=10)
    write_dataset(tmp_path / "a.imgb", data.raw, data.labels)
    again = load_dataset(tmp_path / "a.imgb")
    write_dataset(tmp_path / "b.imgb", again.raw, again.labels)
    dataset_ok = (tmp_path / "a.imgb").read_bytes() == (tmp_path / "b.imgb").read_bytes()

    cfg = TrainConfig(seed=2, batch_size=8, ae_epochs=2, adv_epochs=3, buffer_capacity=16)
    ae = pretrain_autoencoder(data, cfg)
    losses = {}
    whole = train_adversarial(data, ae, cfg, on_step=lambda r: losses.setdefault(r["step"], r))
    save_checkpoint(whole, tmp_path / "w.spot")
    save_checkpoint(load_checkpoint(tmp_path / "w.spot"), tmp_path / "w2.spot")
    ckpt_ok = (tmp_path / "w.spot").read_bytes() == (tmp_path / "w2.spot").read_bytes()

    half = train_adversarial(data, ae, cfg, stop_after=4)
    save_checkpoint(half, tmp_path / "h.spot")
    resumed = {}
    train_adversarial(data, ae, cfg, resume=load_checkpoint(tmp_path / "h.spot"), on_step=lambda r: resumed.setdefault(r["step"], r))
    nxt = min(resumed)
    keys = ("loss_disc", "loss_mask", "loss_repair")
    gap = max(abs(resumed[nxt][k] - losses[nxt][k]) for k in keys)
    ok = dataset_ok and ckpt_ok and gap <= 1e-6
    record(10, "persistence", ok, f"dataset bytes equal={dataset_ok}, checkpoint bytes equal={ckpt_ok}, resumed step {nxt} loss gap {gap:.1e}")
    assert dataset_ok and ckpt_ok
    assert gap <= 1e-6
