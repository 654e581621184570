"""Cross-entropy, Adam, the early-stopping training loop and the GERU checkpoint format.

Checkpoint layout (little endian)::

    b"GERU" | u32 version=1 | u64 header length | UTF-8 JSON header | raw arrays

The header lists every array (name, dims, dtype, offset, nbytes) in payload order.
"""
from __future__ import annotations

import copy
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import FormatError, IncompatibleCheckpoint, InvalidArgument, ShapeMismatch
from .models import Model, ModelConfig, build_model
from .tensor import Tape, Tensor, as_tensor, backward, record

log = logging.getLogger(__name__)


def cross_entropy(logits, target, class_weights=None) -> Tensor:
    """Mean over pixels of -log softmax(logits)[target]; logits B x K x H x W, target B x H x W."""
    logits = as_tensor(logits)
    target = np.asarray(target).astype(np.int64)
    if logits.ndim != 4 or target.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ShapeMismatch(f"logits {logits.shape} vs target {target.shape}")
    K = logits.shape[1]
    if target.size and (target.min() < 0 or target.max() >= K):
        raise InvalidArgument(f"target classes must lie in [0, {K})")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    s = e.sum(axis=1, keepdims=True)
    logp = z - zmax - np.log(s)
    onehot = (np.arange(K)[None, :, None, None] == target[:, None]).astype(z.dtype)
    nll = -np.sum(logp * onehot, axis=1)
    if class_weights is None:
        wpix = np.ones_like(nll)
    else:
        wpix = np.asarray(class_weights, dtype=z.dtype)[target]
    norm = wpix.sum()
    loss = np.sum(nll * wpix) / norm

    def vjp(g):
        prob = e / s
        return ((prob - onehot) * (wpix / norm)[:, None] * g,)

    return record("cross_entropy", np.asarray(loss, dtype=z.dtype).reshape(()), (logits,), vjp)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update.  Returns new parameter arrays; ``state`` advances in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1 - b1 ** state.t, 1 - b2 ** state.t
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        out[name] = (p - lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype)
    return out


@dataclass
class TrainConfig:
    batch_size: int = 4
    lr: float = 2e-4
    epochs_max: int = 30
    early_stop_patience: int = 20
    lr_decay: str = "step"
    lr_decay_factor: float = 0.5
    lr_decay_every: int = 50
    seed: int = 0
    val_fraction: float = 0.2
    class_weights: list[float] | None = None
    loss: str = "cross_entropy"

    def validate(self):
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")
        if self.lr <= 0:
            raise InvalidArgument("lr must be > 0")
        if self.epochs_max < 0 or self.early_stop_patience < 1:
            raise InvalidArgument("epochs_max must be >= 0 and early_stop_patience >= 1")
        if self.lr_decay not in ("none", "step"):
            raise InvalidArgument(f"lr_decay must be none or step, got {self.lr_decay!r}")
        if self.lr_decay_every < 1:
            raise InvalidArgument("lr_decay_every must be >= 1")
        if self.loss != "cross_entropy":
            raise InvalidArgument("only cross_entropy is supported")
        return self

    def lr_at(self, epoch: int) -> float:
        if self.lr_decay == "none":
            return self.lr
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_every)


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    adam: AdamState
    epoch: int
    best_val_dice: float | None
    config: dict


def mean_dice(model: Model, data: Dataset, batch_size: int = 8) -> float:
    from .metrics import confusion, scalar_metrics

    if len(data) == 0:
        return 0.0
    pred = model.predict(data.images, batch_size)
    return float(np.mean([scalar_metrics(confusion(p, g)).dice for p, g in zip(pred, data.masks)]))


def snapshot(model: Model, adam: AdamState, epoch: int, best: float | None, config: dict) -> Checkpoint:
    return Checkpoint(
        params={n: p.data.copy() for n, p in model.named_parameters()},
        buffers={n: b.copy() for n, b in model.named_buffers()},
        adam=copy.deepcopy(adam),
        epoch=epoch,
        best_val_dice=best,
        config=copy.deepcopy(config),
    )


def run_config(model: Model, cfg: TrainConfig | None = None) -> dict:
    d = {"arch": model.arch, "model": asdict(model.cfg)}
    if cfg is not None:
        d["train"] = asdict(cfg)
    return d


def train(model: Model, data: Dataset, cfg: TrainConfig, val: Dataset | None = None):
    """Adam on cross-entropy with per-epoch validation Dice and early stopping.

    Without ``val`` the data is split 4:1 (seeded).  Returns the best checkpoint
    (also loaded into ``model``) and the per-epoch history.
    """
    cfg.validate()
    if len(data) == 0:
        raise InvalidArgument("cannot train on an empty dataset")
    if val is None:
        data, val = data.split(cfg.val_fraction, cfg.seed)
    config = run_config(model, cfg)
    adam = AdamState()
    named = list(model.named_parameters())
    params = [p for _, p in named]
    dtype = params[0].dtype
    rng = np.random.default_rng(cfg.seed)

    best = snapshot(model, adam, 0, None, config)
    best_dice = -np.inf
    history: list[dict] = []
    wait = 0
    for epoch in range(cfg.epochs_max):
        lr = cfg.lr_at(epoch)
        model.train()
        perm = rng.permutation(len(data))
        losses = []
        for i in range(0, len(perm), cfg.batch_size):
            idx = np.sort(perm[i:i + cfg.batch_size])
            x = Tensor(data.images[idx].astype(dtype))
            with Tape() as tape:
                loss = cross_entropy(model(x), data.masks[idx], cfg.class_weights)
            grads = backward(loss, tape, wrt=params)
            new = adam_step({n: p.data for n, p in named}, {n: grads[p] for n, p in named}, adam, lr)
            for n, p in named:
                p.data = new[n]
            losses.append(float(loss.data))
        dice = mean_dice(model, val)
        history.append({"epoch": epoch + 1, "loss": float(np.mean(losses)), "val_dice": dice, "lr": lr})
        log.info("epoch %3d  loss %.5f  val_dice %.4f  lr %.2e", epoch + 1, history[-1]["loss"], dice, lr)
        if dice > best_dice:
            best_dice = dice
            best = snapshot(model, adam, epoch + 1, dice, config)
            wait = 0
        else:
            wait += 1
            if wait >= cfg.early_stop_patience:
                log.info("early stop after epoch %d (best %.4f at epoch %d)", epoch + 1, best_dice, best.epoch)
                break
    restore(model, best)
    return best, history


def restore(model: Model, ckpt: Checkpoint) -> Model:
    """Load parameters and buffers by name; raises IncompatibleCheckpoint on any mismatch."""
    want_p = dict(model.named_parameters())
    want_b = dict(model.named_buffers())
    missing = [n for n in want_p if n not in ckpt.params] + [n for n in want_b if n not in ckpt.buffers]
    unexpected = [n for n in ckpt.params if n not in want_p] + [n for n in ckpt.buffers if n not in want_b]
    if missing or unexpected:
        raise IncompatibleCheckpoint(missing, unexpected)
    for n, p in want_p.items():
        if ckpt.params[n].shape != p.shape:
            raise IncompatibleCheckpoint([f"{n} (shape {p.shape})"])
    for n, p in want_p.items():
        p.data = ckpt.params[n].copy()
    for name, mod in model.named_modules():
        prefix = f"{name}." if name else ""
        for k in list(mod._buffers):
            mod._set_buffer(k, ckpt.buffers[prefix + k].copy())
    return model


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    cfg = ModelConfig(**ckpt.config["model"])
    return restore(build_model(ckpt.config["arch"], cfg), ckpt)


# -- checkpoint file ---------------------------------------------------------

CKPT_MAGIC = b"GERU"
CKPT_VERSION = 1
_DT = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DT_NAME = {np.dtype("float32"): "f32", np.dtype("float64"): "f64"}


def _entries(ckpt: Checkpoint):
    for n, a in ckpt.params.items():
        yield f"param:{n}", a
    for n, a in ckpt.buffers.items():
        yield f"buffer:{n}", a
    for n, a in ckpt.adam.m.items():
        yield f"adam.m:{n}", a
    for n, a in ckpt.adam.v.items():
        yield f"adam.v:{n}", a


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    arrays, entries, offset = [], [], 0
    for name, a in _entries(ckpt):
        a = np.asarray(a)
        if a.dtype not in _DT_NAME:
            raise FormatError(f"{name}: unsupported dtype {a.dtype}")
        raw = np.ascontiguousarray(a, dtype=_DT[_DT_NAME[a.dtype]]).tobytes()
        entries.append({"name": name, "dims": list(a.shape), "dtype": _DT_NAME[a.dtype],
                        "offset": offset, "nbytes": len(raw)})
        arrays.append(raw)
        offset += len(raw)
    header = {
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "best_val_dice": ckpt.best_val_dice,
        "adam": {"t": ckpt.adam.t, "beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2,
                 "eps": ckpt.adam.eps},
        "entries": entries,
    }
    hb = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<IQ", CKPT_VERSION, len(hb)))
        fh.write(hb)
        for raw in arrays:
            fh.write(raw)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a GERU checkpoint")
    version, hlen = struct.unpack_from("<IQ", raw, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if len(raw) < 16 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
        entries = header["entries"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as e:
        raise FormatError(f"{path}: corrupt header ({e})") from e
    base = 16 + hlen
    total = sum(e["nbytes"] for e in entries)
    if len(raw) != base + total:
        raise FormatError(f"{path}: payload is {len(raw) - base} bytes, expected {total}")
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "buffer": {}, "adam.m": {}, "adam.v": {}}
    for e in entries:
        kind, _, name = e["name"].partition(":")
        if kind not in groups or e["dtype"] not in _DT:
            raise FormatError(f"{path}: bad entry {e['name']!r}")
        dt = _DT[e["dtype"]]
        arr = np.frombuffer(raw, dtype=dt, count=e["nbytes"] // dt.itemsize, offset=base + e["offset"])
        groups[kind][name] = arr.reshape(e["dims"]).astype(dt.newbyteorder("="))
    a = header.get("adam", {})
    adam = AdamState(groups["adam.m"], groups["adam.v"], a.get("t", 0),
                     a.get("beta1", 0.9), a.get("beta2", 0.999), a.get("eps", 1e-8))
    return Checkpoint(groups["param"], groups["buffer"], adam, header.get("epoch", 0),
                      header.get("best_val_dice"), header.get("config", {}))
