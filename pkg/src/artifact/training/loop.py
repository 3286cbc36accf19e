"""Autoencoder pretraining and the adversarial damage & repair phase.

All randomness is drawn from ``stream(seed, purpose, step)`` so that a run
resumed from a checkpoint replays the exact draws of an uninterrupted run.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from ..autodiff import Adam, Tensor, backward, no_grad, ops
from ..io.augment import augment_batch
from ..io.checkpoint import CheckpointBundle, CheckpointError
from ..io.dataset import ImageDataset
from ..masking import CorruptionConfig, sample_mask, stack_masks
from ..networks.layers import Module
from ..networks.model import Discriminator, Generator, Network, RepairNetwork, forward_damage_repair
from ..networks.spec import decoder_spec, discriminator_spec, encoder_spec, get_preset
from .buffer import HistoryBuffer, mix_batch
from .config import TrainConfig, stream
from .losses import (
    class_accuracy,
    loss_auto,
    loss_discriminator_class,
    loss_mask,
    loss_repair_class,
    mask_accuracy,
)

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    """Raised on a non-finite loss; carries the last finite-state checkpoint."""

    def __init__(self, message: str, checkpoint: CheckpointBundle):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class Models:
    encoder: Network
    decoder: Network
    repair: Optional[RepairNetwork] = None
    disc: Optional[Discriminator] = None
    generator: Optional[Generator] = None

    def modules(self) -> Dict[str, Module]:
        named = {"E": self.encoder, "D": self.decoder, "R": self.repair, "C": self.disc, "G": self.generator}
        return {k: v for k, v in named.items() if v is not None}


def build_autoencoder(config: TrainConfig):
    rng = stream(config.seed, "init", "ae")
    enc = Network(encoder_spec(config.preset, config.encoder_kernel, config.encoder or None), rng)
    dec = Network(decoder_spec(config.preset, enc.out_channels, config.decoder or None), rng)
    return enc, dec


def build_adversarial(config: TrainConfig, enc: Network, dec: Network) -> Models:
    rng = stream(config.seed, "init", "adv")
    p = get_preset(config.preset)
    mask_hw = enc.out_hw(p.image_size, p.image_size)
    disc = Discriminator(discriminator_spec(config.preset, config.discriminator or None), p.image_size, mask_hw, p.disc_hidden, rng)
    models = Models(enc, dec, disc=disc)
    if config.adversary == "gan":
        bottleneck = (enc.out_channels,) + mask_hw
        models.generator = Generator(config.noise_dim, bottleneck, dec.spec, rng)
    else:
        models.repair = RepairNetwork(enc.out_channels, dec, rng, layout=config.repair_layout)
    return models


def steps_per_epoch(n: int, batch: int) -> int:
    return max(1, n // batch)


def lr_schedule(step: int, total: int, lr_start: float, lr_end: float) -> float:
    """Linear decay; step 0 gets ``lr_start`` and the last step ``lr_end``."""
    if total <= 1:
        return lr_end
    frac = min(max(step, 0), total - 1) / (total - 1)
    return lr_start + (lr_end - lr_start) * frac


def batch_images(dataset: ImageDataset, config: TrainConfig, purpose: str, step: int) -> np.ndarray:
    """The (augmented) image batch consumed at ``step``."""
    n = len(dataset)
    spe = steps_per_epoch(n, config.batch_size)
    epoch, j = divmod(step, spe)
    perm = stream(config.seed, purpose, "perm", epoch).permutation(n)
    idx = np.sort(perm[j * config.batch_size : (j + 1) * config.batch_size])
    x = dataset.images(idx)
    size = get_preset(config.preset).image_size
    if config.augment:
        return augment_batch(x, size, stream(config.seed, purpose, "aug", step), (1.0, config.max_scale)).astype(np.float32)
    return center_crop(x, size)


def center_crop(x: np.ndarray, size: int) -> np.ndarray:
    h, w = x.shape[2:]
    if h < size or w < size:
        raise ValueError(f"images of {h}x{w} are smaller than the {size}x{size} preset input")
    top, left = (h - size) // 2, (w - size) // 2
    return x[:, :, top : top + size, left : left + size]


def _finite(*values: float) -> bool:
    return all(np.isfinite(v) for v in values)


# ---------------------------------------------------------------------------
# phase 1: autoencoder
# ---------------------------------------------------------------------------
def _ae_bundle(enc: Network, dec: Network, opt: Adam, config: TrainConfig, step: int, curve: List[float]) -> CheckpointBundle:
    tensors = {}
    tensors.update({f"E.{k}": v.copy() for k, v in enc.state_dict().items()})
    tensors.update({f"D.{k}": v.copy() for k, v in dec.state_dict().items()})
    tensors.update({f"opt.ae.{k}": v.copy() for k, v in opt.state_arrays().items()})
    meta = {"phase": "autoencoder", "loss_curve": list(curve), "opt_steps": {"ae": opt.state.step}}
    return CheckpointBundle(tensors, config.ae_text(), step, meta)


def pretrain_autoencoder(
    dataset: ImageDataset,
    config: TrainConfig,
    max_steps: Optional[int] = None,
    on_step: Optional[Callable[[int, float], bool]] = None,
) -> CheckpointBundle:
    """Train E and D on the reconstruction loss; returns their checkpoint.

    ``max_steps`` caps the run (it otherwise lasts ``ae_epochs`` epochs);
    ``on_step(step, loss)`` returning True ends it early.
    """
    if len(dataset) == 0:
        raise ValueError("cannot pretrain on an empty dataset")
    enc, dec = build_autoencoder(config)
    params = {f"E.{k}": p for k, p in enc.named_parameters()}
    params.update({f"D.{k}": p for k, p in dec.named_parameters()})
    opt = Adam(params, lr=config.ae_lr, beta1=config.beta1)
    total = config.ae_epochs * steps_per_epoch(len(dataset), config.batch_size)
    if max_steps is not None:
        total = min(total, max_steps)
    curve: List[float] = []
    for t in range(total):
        x = Tensor(batch_images(dataset, config, "ae", t))
        opt.zero_grad()
        loss = loss_auto(dec(enc(x, training=True), training=True), x)
        value = float(loss.data)
        if not _finite(value):
            raise TrainingDiverged(f"autoencoder loss is {value} at step {t}", _ae_bundle(enc, dec, opt, config, t, curve))
        backward(loss)
        opt.step()
        curve.append(value)
        if on_step is not None and on_step(t, value):
            return _ae_bundle(enc, dec, opt, config, t + 1, curve)
    return _ae_bundle(enc, dec, opt, config, total, curve)


def load_autoencoder(bundle: CheckpointBundle, config: TrainConfig):
    enc, dec = build_autoencoder(config)
    try:
        enc.load_state_dict(bundle.subset("E."))
        dec.load_state_dict(bundle.subset("D."))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"autoencoder checkpoint does not fit the {config.preset} preset: {exc}") from None
    return enc, dec


def reconstruction_mse(enc: Network, dec: Network, images: np.ndarray, batch: int = 64) -> float:
    """Per-pixel MSE of inference-mode reconstructions."""
    total = 0.0
    with no_grad():
        for i in range(0, len(images), batch):
            x = images[i : i + batch]
            x_hat = dec(enc(Tensor(x), training=False), training=False).data
            total += float(np.sum((x_hat.astype(np.float64) - x) ** 2))
    return total / images.size


# ---------------------------------------------------------------------------
# phase 2: adversarial
# ---------------------------------------------------------------------------
class AdversarialRun:
    """State of the adversarial phase: networks, optimizers, buffer, step."""

    def __init__(self, config: TrainConfig, enc: Network, dec: Network, n_images: int):
        self.config = config
        self.models = build_adversarial(config, enc, dec)
        enc.freeze()
        dec.freeze()
        self.opt_c = Adam({f"C.{k}": p for k, p in self.models.disc.named_parameters()}, config.lr_start, config.beta1)
        actor = self.models.generator if config.adversary == "gan" else self.models.repair
        prefix = "G" if config.adversary == "gan" else "R"
        self.opt_r = Adam({f"{prefix}.{k}": p for k, p in actor.named_parameters()}, config.lr_start, config.beta1)
        self.buffer = HistoryBuffer(config.buffer_capacity if config.history else 0)
        self.corruption = CorruptionConfig(config.theta, config.replacement, config.noise_scale)
        self.step = 0
        self.total = config.adv_epochs * steps_per_epoch(n_images, config.batch_size)
        self.curve: List[dict] = []

    # -- persistence -------------------------------------------------------
    def bundle(self) -> CheckpointBundle:
        tensors: Dict[str, np.ndarray] = {}
        for prefix, mod in self.models.modules().items():
            tensors.update({f"{prefix}.{k}": v.copy() for k, v in mod.state_dict().items()})
        tensors.update({f"opt.C.{k}": v.copy() for k, v in self.opt_c.state_arrays().items()})
        tensors.update({f"opt.R.{k}": v.copy() for k, v in self.opt_r.state_arrays().items()})
        tensors.update({f"buffer.{k}": v.copy() for k, v in self.buffer.state_arrays().items()})
        meta = {
            "phase": "adversarial",
            "total_steps": self.total,
            "opt_steps": {"C": self.opt_c.state.step, "R": self.opt_r.state.step},
            "buffer_next_slot": self.buffer.next_slot,
            "rng": {"seed": self.config.seed, "scheme": "keyed-streams"},
            "loss_curve": list(self.curve),
        }
        return CheckpointBundle(tensors, self.config.to_text(), self.step, meta)

    def restore(self, bundle: CheckpointBundle) -> None:
        if bundle.meta.get("phase") != "adversarial":
            raise CheckpointError("resume checkpoint is not from the adversarial phase")
        for prefix, mod in self.models.modules().items():
            try:
                mod.load_state_dict(bundle.subset(f"{prefix}."))
            except (KeyError, ValueError) as exc:
                raise CheckpointError(f"checkpoint does not fit network {prefix}: {exc}") from None
        steps = bundle.meta["opt_steps"]
        self.opt_c.load_state_arrays(bundle.subset("opt.C."), steps["C"])
        self.opt_r.load_state_arrays(bundle.subset("opt.R."), steps["R"])
        self.buffer.load_state_arrays(bundle.subset("buffer."), bundle.meta["buffer_next_slot"])
        self.step = bundle.step
        self.curve = list(bundle.meta.get("loss_curve", []))

    # -- one step ----------------------------------------------------------
    def real_images(self, x: np.ndarray) -> np.ndarray:
        if self.config.raw_real:
            return x
        m = self.models
        with no_grad():
            return m.decoder(m.encoder(Tensor(x), training=False), training=False).data

    def masks(self, batch: int, step: int, purpose: str = "mask") -> np.ndarray:
        m, n = self.models.disc.mask_hw
        rng = stream(self.config.seed, purpose, step)
        return stack_masks([sample_mask(m, n, self.corruption, rng) for _ in range(batch)])

    def fake_images(self, x: np.ndarray, omega: np.ndarray, step: int, grad: bool) -> Tensor:
        cfg, m = self.config, self.models
        if cfg.adversary == "gan":
            z = stream(cfg.seed, "noise", step).standard_normal((len(x), cfg.noise_dim)).astype(np.float32)
            return m.generator(Tensor(z), training=True)
        noise_rng = stream(cfg.seed, "replace", step)
        args = (m.encoder, m.decoder, m.repair, Tensor(x), omega, cfg.repair_mode, self.corruption, noise_rng)
        if grad:
            return forward_damage_repair(*args, repair_training=True)
        with no_grad():
            return forward_damage_repair(*args, repair_training=True)

    def train_step(self, dataset: ImageDataset) -> dict:
        cfg, m, t = self.config, self.models, self.step
        lr = lr_schedule(t, self.total, cfg.lr_start, cfg.lr_end)
        x = batch_images(dataset, cfg, "adv", t)
        b = len(x)
        real = self.real_images(x)
        omega = self.masks(b, t)
        train_actor = cfg.adversary == "gan" or cfg.repair
        fake = self.fake_images(x, omega, t, grad=train_actor)
        mixed, mixed_masks, n_old = mix_batch(fake.data, omega, self.buffer, cfg.mix_fraction, stream(cfg.seed, "mix", t))

        # discriminator: class loss on real + corrupt, mask loss on corrupt only
        self.opt_c.zero_grad()
        out = m.disc(Tensor(np.concatenate([real, mixed.astype(real.dtype)])), training=True)
        real_logits = ops.slice_batch(out.class_logit, 0, b)
        fake_logits = ops.slice_batch(out.class_logit, b, 2 * b)
        l_class = loss_discriminator_class(real_logits, fake_logits)
        use_mask = cfg.mask_prediction and cfg.adversary != "gan"
        l_mask = loss_mask(ops.slice_batch(out.mask_logits, b, 2 * b), mixed_masks) if use_mask else None
        loss_c = ops.add(l_class, ops.mul(l_mask, cfg.mask_loss_weight)) if use_mask else l_class
        record = {"step": t, "lr": lr, "loss_disc": float(l_class.data), "loss_mask": float(l_mask.data) if use_mask else 0.0}
        if not _finite(float(loss_c.data)):
            raise TrainingDiverged(f"discriminator loss is {float(loss_c.data)} at step {t}", self.bundle())
        record["disc_acc"] = class_accuracy(real_logits.data, fake_logits.data)
        record["mask_acc"] = mask_accuracy(out.mask_logits.data[b:], mixed_masks) if use_mask else 0.0
        record["buffer_items"] = n_old
        backward(loss_c)
        self.opt_c.step(lr)

        # repair (or generator): fool the updated discriminator; its running
        # statistics are left to the discriminator step
        if train_actor:
            self.opt_r.zero_grad()
            out = m.disc(ops.concat([Tensor(real), fake], axis=0), training=True, update_stats=False)
            l_rep = loss_repair_class(ops.slice_batch(out.class_logit, b, 2 * b), cfg.repair_loss)
            if not _finite(float(l_rep.data)):
                raise TrainingDiverged(f"repair loss is {float(l_rep.data)} at step {t}", self.bundle())
            backward(l_rep)
            self.opt_c.zero_grad()
            self.opt_r.step(lr)
            record["loss_repair"] = float(l_rep.data)
        else:
            record["loss_repair"] = 0.0
        self.step += 1
        self.curve.append(record)
        return record


def train_adversarial(
    dataset: ImageDataset,
    ae_checkpoint: Optional[CheckpointBundle],
    config: TrainConfig,
    resume: Optional[CheckpointBundle] = None,
    stop_after: Optional[int] = None,
    metrics_path=None,
    on_step: Optional[Callable[[dict], None]] = None,
) -> CheckpointBundle:
    """Adversarial phase with E and D frozen.

    ``resume`` continues a run from its checkpoint (``ae_checkpoint`` may then
    be None); ``stop_after`` ends the run once that global step is reached.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    source = resume if resume is not None else ae_checkpoint
    if source is None:
        raise ValueError("need an autoencoder checkpoint or a checkpoint to resume from")
    enc, dec = load_autoencoder(source, config)
    run = AdversarialRun(config, enc, dec, len(dataset))
    if resume is not None:
        run.restore(resume)
    end = run.total if stop_after is None else min(run.total, stop_after)
    sink = open(metrics_path, "a", encoding="utf-8") if metrics_path else None
    try:
        while run.step < end:
            record = run.train_step(dataset)
            if sink is not None:
                sink.write(json.dumps(record, sort_keys=True) + "\n")
            if on_step is not None:
                on_step(record)
    finally:
        if sink is not None:
            sink.close()
    return run.bundle()


def load_adversarial(bundle: CheckpointBundle, config: TrainConfig) -> Models:
    """Networks of a finished (or partial) adversarial-phase checkpoint."""
    enc, dec = load_autoencoder(bundle, config)
    models = build_adversarial(config, enc, dec)
    for prefix, mod in models.modules().items():
        if prefix in ("E", "D"):
            continue
        try:
            mod.load_state_dict(bundle.subset(f"{prefix}."))
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"checkpoint does not fit network {prefix}: {exc}") from None
    return models


def evaluate_discriminator(models: Models, dataset: ImageDataset, config: TrainConfig, batch: int = 50, seed_key: str = "heldout") -> dict:
    """Held-out real/corrupt accuracy and per-site mask accuracy.

    Corrupt examples come from the full damage & repair path with masks drawn
    from a dedicated stream; everything runs in inference mode.
    """
    size = get_preset(config.preset).image_size
    corruption = CorruptionConfig(config.theta, config.replacement, config.noise_scale)
    m, n = models.disc.mask_hw
    rng = stream(config.seed, seed_key)
    hits_real = hits_fake = sites = mask_hits = 0
    count = len(dataset)
    mode = config.repair_mode if models.repair is not None else "no-repair"
    with no_grad():
        for i in range(0, count, batch):
            x = center_crop(dataset.images(slice(i, i + batch)), size)
            omega = stack_masks([sample_mask(m, n, corruption, rng) for _ in range(len(x))])
            if config.raw_real:
                real = x
            else:
                real = models.decoder(models.encoder(Tensor(x)), training=False).data
            fake = forward_damage_repair(models.encoder, models.decoder, models.repair, Tensor(x), omega, mode, corruption, rng)
            out_r = models.disc(Tensor(real), training=False)
            out_f = models.disc(fake, training=False)
            hits_real += int(np.sum(out_r.class_logit.data > 0))
            hits_fake += int(np.sum(out_f.class_logit.data < 0))
            mask_hits += int(np.sum((out_f.mask_logits.data > 0) == (omega[:, 0] > 0.5)))
            sites += omega[:, 0].size
    return {
        "class_acc": (hits_real + hits_fake) / (2 * count),
        "real_acc": hits_real / count,
        "fake_acc": hits_fake / count,
        "mask_acc": mask_hits / sites,
    }
