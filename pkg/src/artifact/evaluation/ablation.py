"""Ablation harness: train each variant, probe its discriminator, tabulate."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

from ..io.dataset import ImageDataset
from ..training.config import TrainConfig
from ..training.loop import load_adversarial, pretrain_autoencoder, train_adversarial
from .probe import ProbeConfig, extract_features, linear_probe

EXPERIMENTS: Dict[str, tuple] = {
    "a": ("real images not autoencoded", {"raw_real": True}),
    "b": ("repair blocks stacked at the bottleneck", {"repair_layout": "local"}),
    "c": ("dropping rate 0.1", {"theta": 0.1}),
    "d": ("dropping rate 0.3", {"theta": 0.3}),
    "e": ("dropping rate 0.7", {"theta": 0.7}),
    "f": ("dropping rate 0.9", {"theta": 0.9}),
    "g": ("no mask prediction", {"mask_prediction": False}),
    "h": ("3x3 encoder convolutions", {"encoder_kernel": 3}),
    "i": ("no gating of repair corrections", {"gating": False}),
    "j": ("no history buffer", {"history": False}),
    "k": ("no repair network", {"repair": False}),
    "l": ("GAN instead of damage & repair", {"adversary": "gan"}),
}


def resolve_experiment(token: str) -> tuple:
    """(id, description, config delta) for ``a``..``l`` or ``theta=X``."""
    token = token.strip()
    if token in EXPERIMENTS:
        desc, delta = EXPERIMENTS[token]
        return token, desc, dict(delta)
    if token.startswith("theta="):
        try:
            theta = float(token.split("=", 1)[1])
        except ValueError:
            raise ValueError(f"bad dropping rate in experiment {token!r}") from None
        return token, f"dropping rate {theta:g}", {"theta": theta}
    raise ValueError(f"unknown experiment id {token!r}; expected one of {sorted(EXPERIMENTS)} or theta=X")


@dataclass
class AblationRow:
    experiment: str
    description: str
    delta: dict
    seed: int
    accuracy: float
    sd: float
    fold_accuracies: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "description": self.description,
            "delta": self.delta,
            "seed": self.seed,
            "accuracy": self.accuracy,
            "sd": self.sd,
            "fold_accuracies": self.fold_accuracies,
        }


@dataclass
class AblationReport:
    rows: List[AblationRow]
    probe: dict = field(default_factory=dict)

    def to_table(self) -> str:
        head = ("id", "variant", "delta", "seed", "accuracy", "sd")
        body = [
            (
                r.experiment,
                r.description,
                ",".join(f"{k}={v}" for k, v in r.delta.items()) or "-",
                str(r.seed),
                f"{100 * r.accuracy:.2f}",
                f"{100 * r.sd:.2f}",
            )
            for r in self.rows
        ]
        widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in [head] + body]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def to_jsonl(self) -> str:
        return "".join(json.dumps(dict(r.to_dict(), probe=self.probe), sort_keys=True) + "\n" for r in self.rows)

    def write(self, table_path, jsonl_path) -> None:
        with open(table_path, "w", encoding="utf-8") as fh:
            fh.write(self.to_table())
        with open(jsonl_path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())


def run_ablation(
    base_config: TrainConfig,
    experiments: Sequence[str],
    dataset: ImageDataset,
    probe_dataset: ImageDataset,
    probe_config: ProbeConfig,
    progress: Optional[Callable[[str], None]] = None,
) -> AblationReport:
    """Baseline row first, then one row per experiment, in the given order.

    Autoencoders are shared between variants whose autoencoder settings
    agree. Each variant is trained from the same seed.
    """
    plan = [("baseline", "baseline", {})] + [resolve_experiment(t) for t in experiments]
    ae_cache: dict = {}
    images, labels = probe_dataset.images(), probe_dataset.labels
    rows = []
    for exp_id, desc, delta in plan:
        cfg = base_config.with_changes(**delta)
        key = cfg.ae_text()
        if key not in ae_cache:
            ae_cache[key] = pretrain_autoencoder(dataset, cfg)
        bundle = train_adversarial(dataset, ae_cache[key], cfg)
        disc = load_adversarial(bundle, cfg).disc
        result = linear_probe(extract_features(disc, images, probe_config), labels, probe_config)
        rows.append(AblationRow(exp_id, desc, delta, cfg.seed, result.mean, result.sd, result.fold_accuracies))
        if progress is not None:
            progress(f"{exp_id}: {result}")
    return AblationReport(rows, probe_config.to_dict())
