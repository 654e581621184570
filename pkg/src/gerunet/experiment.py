"""Desk-scale experiment: GER-UNet vs the regular R-UNet on synthetic blobs.

Both models train under one protocol.  The test set is scored twice, as
generated and with every image (and its mask) put through a random D4 element.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import group as G
from .data import Dataset, SynthSpec, generate
from .metrics import evaluate
from .models import ModelConfig, build_model, count_parameters
from .training import TrainConfig, model_from_checkpoint, snapshot, train

log = logging.getLogger(__name__)


@dataclass
class DeskConfig:
    n_trainval: int = 250
    n_test: int = 50
    size: int = 64
    data_seed: int = 1
    test_seed: int = 2
    transform_seed: int = 3
    base_channels: int = 16
    archs: tuple[str, ...] = ("ger-unet", "r-unet")
    skip_mode: str = "add"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs_max=30))


def random_transform(ds: Dataset, seed: int) -> tuple[Dataset, list[int]]:
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, G.ORDER, size=len(ds)).tolist()
    imgs = np.stack([G.transform_plane(G.element(i), im) for i, im in zip(picks, ds.images)])
    msks = np.stack([G.transform_plane(G.element(i), m) for i, m in zip(picks, ds.masks)])
    return Dataset(imgs, msks, dict(ds.manifest, transformed=picks)), picks


def run(cfg: DeskConfig) -> dict:
    trainval = generate(SynthSpec(seed=cfg.data_seed, count=cfg.n_trainval, size=cfg.size))
    test = generate(SynthSpec(seed=cfg.test_seed, count=cfg.n_test, size=cfg.size))
    test_t, picks = random_transform(test, cfg.transform_seed)
    train_ds, val_ds = trainval.split(cfg.train.val_fraction, cfg.train.seed)

    results = {"config": asdict(cfg), "splits": [len(train_ds), len(val_ds), len(test)], "models": {}}
    for arch in cfg.archs:
        model = build_model(arch, ModelConfig(base_channels=cfg.base_channels, skip_mode=cfg.skip_mode))
        t0 = time.perf_counter()
        ckpt, history = train(model, train_ds, cfg.train, val=val_ds)
        seconds = time.perf_counter() - t0
        # score at f64 so argmax ties cannot flip between a map and its transform
        m64 = model_from_checkpoint(snapshot(model, ckpt.adam, ckpt.epoch, ckpt.best_val_dice,
                                             ckpt.config)).astype(np.float64)
        plain = evaluate(m64.predict(test.images.astype(np.float64)), test.masks)
        moved = evaluate(m64.predict(test_t.images.astype(np.float64)), test_t.masks)
        results["models"][arch] = {
            "params": count_parameters(model)[0],
            "train_seconds": seconds,
            "epochs_run": len(history),
            "best_epoch": ckpt.epoch,
            "best_val_dice": ckpt.best_val_dice,
            "history": history,
            "test": plain,
            "test_transformed": moved,
        }
        results["models"][arch]["_model"] = model
        log.info("%s: test dice %.4f, transformed %.4f, %.0fs", arch, plain["dice"], moved["dice"], seconds)
    return results
