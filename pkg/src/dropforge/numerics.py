"""Dense forward kernels shared by the prediction heads.

Everything here is forward-only numpy.  Inputs are promoted to float64 for
accumulation; weights are stored as float32 on disk (see :func:`save_tensors`).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Dict, Mapping, Union

import numpy as np
from scipy.special import erf

__all__ = [
    "FFNWeights",
    "softmax",
    "gelu",
    "layer_norm",
    "ffn",
    "attention_pool",
    "save_tensors",
    "load_tensors",
]

LAYER_NORM_EPS = 1e-12


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def softmax(v, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``.

    Entries equal to ``-inf`` receive exactly zero mass, which is how the span
    heads mask marker positions.
    """
    v = _as_array(v)
    if v.size == 0 or v.shape[axis] == 0:
        raise ValueError("softmax of an empty vector")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def gelu(x):
    """Exact GeLU, ``x * Phi(x)`` with the erf-based normal CDF."""
    x = _as_array(x)
    out = 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))
    return float(out) if out.ndim == 0 else out


def layer_norm(v, gamma, beta, eps: float = LAYER_NORM_EPS) -> np.ndarray:
    """Normalize over the last axis with the population variance."""
    v, gamma, beta = _as_array(v), _as_array(gamma), _as_array(beta)
    if v.shape[-1] != gamma.shape[-1] or gamma.shape != beta.shape:
        raise ValueError(
            f"layer_norm length mismatch: v={v.shape[-1]}, gamma={gamma.shape}, beta={beta.shape}"
        )
    if eps <= 0:
        raise ValueError("eps must be positive")
    mean = v.mean(axis=-1, keepdims=True)
    var = ((v - mean) ** 2).mean(axis=-1, keepdims=True)
    return (v - mean) / np.sqrt(var + eps) * gamma + beta


@dataclass(frozen=True)
class FFNWeights:
    """Two projections with GeLU and layer norm in between.

    ``w1`` is ``(d_in, d_hidden)`` and ``w2`` is ``(d_hidden, d_out)``; rows
    are multiplied from the left (``x @ w1``).
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2", "gamma", "beta"):
            object.__setattr__(self, name, _as_array(getattr(self, name)))
        d_in, d_hidden = self.w1.shape
        if self.b1.shape != (d_hidden,):
            raise ValueError(f"b1 shape {self.b1.shape} != ({d_hidden},)")
        if self.w2.ndim != 2 or self.w2.shape[0] != d_hidden:
            raise ValueError(f"w2 shape {self.w2.shape} does not chain with d_hidden={d_hidden}")
        if self.b2.shape != (self.w2.shape[1],):
            raise ValueError(f"b2 shape {self.b2.shape} != ({self.w2.shape[1]},)")
        if self.gamma.shape != (d_hidden,) or self.beta.shape != (d_hidden,):
            raise ValueError("gamma/beta length must equal d_hidden")

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def d_hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def d_out(self) -> int:
        return self.w2.shape[1]

    @classmethod
    def zeros(cls, d_in: int, d_hidden: int, d_out: int) -> "FFNWeights":
        return cls(
            np.zeros((d_in, d_hidden)),
            np.zeros(d_hidden),
            np.zeros((d_hidden, d_out)),
            np.zeros(d_out),
            np.ones(d_hidden),
            np.zeros(d_hidden),
        )

    def tensors(self, prefix: str) -> Dict[str, np.ndarray]:
        return {
            f"{prefix}.{k}": getattr(self, k) for k in ("w1", "b1", "w2", "b2", "gamma", "beta")
        }

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray], prefix: str) -> "FFNWeights":
        return cls(*(tensors[f"{prefix}.{k}"] for k in ("w1", "b1", "w2", "b2", "gamma", "beta")))


def ffn(x, w: FFNWeights) -> np.ndarray:
    """``W2 . layer_norm(gelu(W1 x + b1)) + b2``; works row-wise on 2-D input."""
    x = _as_array(x)
    if x.shape[-1] != w.d_in:
        raise ValueError(f"ffn input width {x.shape[-1]} != {w.d_in}")
    hidden = gelu(x @ w.w1 + w.b1)
    hidden = layer_norm(hidden, w.gamma, w.beta)
    return hidden @ w.w2 + w.b2


Scorer = Union[np.ndarray, FFNWeights]


def attention_pool(X, scorer: Scorer):
    """Softmax-weighted average of the rows of ``X``.

    ``scorer`` is either a linear weight vector of length ``X.shape[1]`` or
    an :class:`FFNWeights` mapping each row to a single score.

    Returns ``(alpha, h)``.
    """
    X = _as_array(X)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("attention_pool needs a non-empty 2-D matrix")
    if isinstance(scorer, FFNWeights):
        if scorer.d_out != 1:
            raise ValueError("FFN scorer must produce one score per row")
        scores = ffn(X, scorer)[:, 0]
    else:
        w = _as_array(scorer)
        if w.shape != (X.shape[1],):
            raise ValueError(f"linear scorer shape {w.shape} != ({X.shape[1]},)")
        scores = X @ w
    alpha = softmax(scores)
    return alpha, alpha @ X


# -- weight container --------------------------------------------------------
# A directory with manifest.json plus one little-endian float32 file per tensor.

MANIFEST = "manifest.json"


def _tensor_file(name: str) -> str:
    return name.replace("/", "__") + ".f32"


def save_tensors(path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    entries = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"tensor {name!r} has non-finite entries")
        fname = _tensor_file(name)
        with open(os.path.join(path, fname), "wb") as fh:
            fh.write(arr.tobytes(order="C"))
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32", "file": fname})
    manifest = {"format": "dropforge-tensors/1", "tensors": entries}
    if meta:
        manifest["meta"] = dict(meta)
    with open(os.path.join(path, MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def load_tensors(path):
    """Load a tensor directory; returns ``(tensors, meta)``."""
    with open(os.path.join(path, MANIFEST), encoding="utf-8") as fh:
        manifest = json.load(fh)
    tensors = {}
    for entry in manifest["tensors"]:
        if entry.get("dtype", "float32") != "float32":
            raise ValueError(f"unsupported dtype {entry['dtype']!r} for {entry['name']}")
        shape = tuple(entry["shape"])
        raw = np.fromfile(os.path.join(path, entry["file"]), dtype="<f4")
        expected = int(np.prod(shape)) if shape else 1
        if raw.size != expected:
            raise ValueError(f"{entry['name']}: {raw.size} values on disk, shape needs {expected}")
        tensors[entry["name"]] = raw.reshape(shape).astype(np.float64)
    return tensors, manifest.get("meta", {})
