"""Measure equivariance of a model by transforming inputs and comparing outputs."""
from __future__ import annotations

import numpy as np

from . import group as G
from .models import Model
from .tensor import DTYPES, Tensor, rel_error


def _expected(g, t: np.ndarray, grouped: bool) -> np.ndarray:
    if grouped and t.ndim == 5 and t.shape[2] == G.ORDER:
        return G.transform_group_feature(g, t)
    return G.transform_plane(g, t)


def equivariance_errors(model: Model, x: np.ndarray, per_layer: bool = True) -> dict[int, dict[str, float]]:
    """For each group element, relative error of every traced stage and the output.

    Model is evaluated in eval mode.  Keys of the inner dict are stage names
    plus ``"output"``.
    """
    was = model.training
    model.eval()
    ref_trace: list = []
    ref = model(Tensor(x), trace=ref_trace if per_layer else None).data
    out: dict[int, dict[str, float]] = {}
    for g in G.ELEMENTS:
        trace: list = []
        y = model(Tensor(G.transform_plane(g, x)), trace=trace if per_layer else None).data
        errs = {}
        for (name, a), (_, b) in zip(ref_trace, trace):
            errs[name] = rel_error(b.data, _expected(g, a.data, model.grouped))
        errs["output"] = rel_error(y, G.transform_plane(g, ref))
        out[g.index] = errs
    model.train(was)
    return out


def equicheck(model: Model, trials: int = 3, size: int = 64, dtype: str = "f64", seed: int = 0,
              batch: int = 1) -> dict:
    """Worst error over ``trials`` random inputs, per group element and per stage."""
    model.astype(DTYPES[dtype])
    rng = np.random.default_rng(seed)
    worst: dict[int, dict[str, float]] = {}
    for _ in range(trials):
        x = rng.uniform(0, 1, size=(batch, model.cfg.in_channels, size, size)).astype(DTYPES[dtype])
        for gi, errs in equivariance_errors(model, x).items():
            w = worst.setdefault(gi, {})
            for k, v in errs.items():
                w[k] = max(w.get(k, 0.0), v)
    return {
        "arch": model.arch,
        "dtype": dtype,
        "trials": trials,
        "size": size,
        "elements": {f"{G.ELEMENTS[gi].reflect},{G.ELEMENTS[gi].rot}": e for gi, e in worst.items()},
        "max_output_error": max(e["output"] for e in worst.values()),
        "max_error": max(max(e.values()) for e in worst.values()),
    }
