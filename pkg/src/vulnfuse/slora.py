"""Sparse low-rank adapter over a frozen quantized base, trained with BCE.

The adapter output is x*W_q + (x*U)*V + x*(S (.) M) where M keeps the
k = floor((1-alpha)*d^2) largest-magnitude entries of S. Only U, V, S and the
sigmoid readout head receive gradient updates; W_q is bit-frozen. At desk
scale this powers a multi-label contract classifier over hashed token
features.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .corpus import Dataset, LabelVector
from .errors import EmptyDataset, InvalidParameter, ShapeError

_TOKEN_RE = re.compile(r"[a-z0-9]+")

BCE_EPS = 1e-7


# ---------------------------------------------------------------------------
# adapter pieces
# ---------------------------------------------------------------------------

def quantize_base(w: np.ndarray) -> np.ndarray:
    """Symmetric 8-bit per-tensor quantize-dequantize; result is read-only."""
    w = np.asarray(w, dtype=np.float64)
    scale = np.abs(w).max() / 127.0
    if scale == 0.0:
        quantized = np.zeros_like(w)
    else:
        quantized = np.round(w / scale) * scale
    quantized.setflags(write=False)
    return quantized


@dataclass
class AdapterLayer:
    w_q: np.ndarray          # frozen d x d
    u: np.ndarray            # trainable d x r
    v: np.ndarray            # trainable r x d
    s: np.ndarray            # trainable d x d
    alpha: float
    rank: int

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]


def init_adapter(dim: int, rank: int, alpha: float, seed: int = 0) -> AdapterLayer:
    """Fresh layer: quantized random base, small U, zero V, tiny uniform S."""
    if not 1 <= rank <= dim:
        raise InvalidParameter(f"rank must be in [1, {dim}], got {rank}")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidParameter(f"sparsity level must be in [0, 1], got {alpha}")
    rng = np.random.default_rng(seed)
    w_q = quantize_base(rng.normal(0.0, 1.0 / math.sqrt(dim), (dim, dim)))
    return AdapterLayer(
        w_q=w_q,
        u=rng.normal(0.0, 0.01, (dim, rank)),
        v=np.zeros((rank, dim)),  # zero initial increment, LoRA convention
        s=rng.uniform(-0.01, 0.01, (dim, dim)),
        alpha=float(alpha),
        rank=rank,
    )


def active_entry_count(alpha: float, d2: int) -> int:
    """k = floor((1-alpha)*d^2), evaluated exactly to dodge float rounding."""
    return math.floor((Fraction(1) - Fraction(alpha)) * d2)


def sparsify(s: np.ndarray, alpha: float) -> tuple[np.ndarray, int]:
    """Mask keeping the k = floor((1-alpha)*d^2) largest |S| entries.

    Magnitude ties break by row-major position, so the mask is deterministic.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InvalidParameter(f"sparsity level must be in [0, 1], got {alpha}")
    k = active_entry_count(alpha, s.size)
    mask = np.zeros(s.shape, dtype=np.uint8)
    if k > 0:
        order = np.argsort(-np.abs(s).ravel(), kind="stable")
        mask.ravel()[order[:k]] = 1
    return mask, k


def lowrank_forward(x: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """x*(U*V) computed as (x*U)*V, cost n*d*r + n*r*d."""
    if x.shape[1] != u.shape[0] or u.shape[1] != v.shape[0]:
        raise ShapeError(f"shapes do not conform: x{x.shape} u{u.shape} v{v.shape}")
    return (x @ u) @ v


def sparse_forward(x: np.ndarray, s: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """x*(S (.) M) touching only the active entries of the mask."""
    if x.shape[1] != s.shape[0] or s.shape != mask.shape:
        raise ShapeError(f"shapes do not conform: x{x.shape} s{s.shape} mask{mask.shape}")
    rows, cols = np.nonzero(mask)
    out = np.zeros((x.shape[0], s.shape[1]))
    _kernels.sparse_accumulate(out, rows, cols, s[rows, cols], x)
    return out


def adapter_forward(x: np.ndarray, layer: AdapterLayer) -> np.ndarray:
    """Base output plus the low-rank and sparse increments."""
    mask, _ = sparsify(layer.s, layer.alpha)
    return x @ layer.w_q + lowrank_forward(x, layer.u, layer.v) \
        + sparse_forward(x, layer.s, mask)


def increment_forward_counted(x: np.ndarray, layer: AdapterLayer) -> tuple[np.ndarray, int]:
    """Incremental (adapter-only) forward plus its exact multiply count."""
    n, d = x.shape
    r = layer.rank
    mask, _ = sparsify(layer.s, layer.alpha)
    rows, cols = np.nonzero(mask)
    count = n * d * r        # x @ U
    count += n * r * d       # (xU) @ V
    count += n * rows.size   # one multiply per sample per active entry
    out = lowrank_forward(x, layer.u, layer.v)
    _kernels.sparse_accumulate(out, rows, cols, layer.s[rows, cols], x)
    return out, count


def flop_count(layer: AdapterLayer, n: int) -> int:
    """Multiply count n*(2*d*r + k) of the incremental forward paths."""
    d = layer.dim
    k = active_entry_count(layer.alpha, d * d)
    return n * (2 * d * layer.rank + k)


# ---------------------------------------------------------------------------
# loss and head
# ---------------------------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(y, yhat) -> float:
    """Multi-label binary cross-entropy, mean over labels."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ShapeError(f"label/prediction length mismatch: {y.shape} vs {yhat.shape}")
    p = np.clip(yhat, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


@dataclass
class ReadoutHead:
    w: np.ndarray  # d x L
    b: np.ndarray  # L


def init_head(dim: int, num_labels: int, seed: int = 0) -> ReadoutHead:
    rng = np.random.default_rng(seed)
    return ReadoutHead(w=rng.normal(0.0, 0.01, (dim, num_labels)), b=np.zeros(num_labels))


def classifier_probs(x: np.ndarray, layer: AdapterLayer, head: ReadoutHead) -> np.ndarray:
    return _sigmoid(adapter_forward(x, layer) @ head.w + head.b)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 8
    epochs: int = 5
    patience: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidParameter("learning rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidParameter("batch size and epochs must be at least 1")


@dataclass
class TrainResult:
    loss_trace: list[float] = field(default_factory=list)
    val_trace: list[float] = field(default_factory=list)
    epochs_run: int = 0


def batch_loss_and_grads(x, y, layer: AdapterLayer, head: ReadoutHead, mask: np.ndarray):
    """Mean BCE over the batch and gradients for U, V, S, head.

    Masked S entries get exactly zero gradient; W_q gets none at all.
    """
    n, num_labels = y.shape
    h = x @ layer.w_q + lowrank_forward(x, layer.u, layer.v) \
        + sparse_forward(x, layer.s, mask)
    probs = _sigmoid(h @ head.w + head.b)
    p = np.clip(probs, BCE_EPS, 1.0 - BCE_EPS)
    loss = float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))

    dz = (probs - y) / (n * num_labels)
    grad_head_w = h.T @ dz
    grad_head_b = dz.sum(axis=0)
    g = dz @ head.w.T
    grad_u = x.T @ (g @ layer.v.T)
    grad_v = (x @ layer.u).T @ g
    grad_s = (x.T @ g) * mask
    return loss, {"u": grad_u, "v": grad_v, "s": grad_s,
                  "head_w": grad_head_w, "head_b": grad_head_b}


def train(layer: AdapterLayer, head: ReadoutHead, features: np.ndarray,
          labels: np.ndarray, config: TrainConfig,
          val: Optional[tuple[np.ndarray, np.ndarray]] = None) -> TrainResult:
    """Mini-batch gradient descent on U, V, S and the head; W_q stays frozen.

    The mask is recomputed from |S| before every batch. With a validation
    pair and a patience setting, training stops once validation loss fails
    to improve for that many consecutive epochs.
    """
    n = features.shape[0]
    if n == 0:
        raise EmptyDataset("no training samples")
    if labels.shape[0] != n:
        raise ShapeError("features and labels must have the same sample count")
    rng = np.random.default_rng(config.seed)
    eta = config.learning_rate
    result = TrainResult()
    best_val = math.inf
    stale = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = features[idx], labels[idx]
            mask, _ = sparsify(layer.s, layer.alpha)
            loss, grads = batch_loss_and_grads(xb, yb, layer, head, mask)
            total += loss * len(idx)
            layer.u -= eta * grads["u"]
            layer.v -= eta * grads["v"]
            layer.s -= eta * grads["s"]
            head.w -= eta * grads["head_w"]
            head.b -= eta * grads["head_b"]
        result.loss_trace.append(total / n)
        result.epochs_run += 1
        if val is not None:
            probs = classifier_probs(val[0], layer, head)
            vloss = bce_loss(val[1].ravel(), probs.ravel())
            result.val_trace.append(vloss)
            if config.patience is not None:
                if vloss < best_val - 1e-12:
                    best_val = vloss
                    stale = 0
                else:
                    stale += 1
                    if stale >= config.patience:
                        break
    return result


# ---------------------------------------------------------------------------
# contract features
# ---------------------------------------------------------------------------

class HashedFeatureExtractor:
    """Bag of hashed tokens, L2-normalized; keyed by seed for reproducibility."""

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise InvalidParameter("feature dimension must be positive")
        self.dim = dim
        self.seed = seed
        self._key = (seed % (1 << 64)).to_bytes(8, "big")

    def extract(self, source: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for token in _TOKEN_RE.findall(source.lower()):
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest()
            h = int.from_bytes(digest, "big")
            sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
            vec[h % self.dim] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


def features_from_dataset(dataset: Dataset, extractor: HashedFeatureExtractor):
    """(X, Y) arrays for contracts that carry ground-truth labels."""
    labeled = [c for c in dataset if c.labels is not None]
    if not labeled:
        raise EmptyDataset("dataset has no labeled contracts")
    x = np.stack([extractor.extract(c.source) for c in labeled])
    y = np.array([c.labels.bits for c in labeled], dtype=np.float64)
    return x, y


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, layer: AdapterLayer, head: ReadoutHead,
                    extractor: HashedFeatureExtractor, taxonomy: Sequence[str]) -> None:
    np.savez(
        path,
        w_q=layer.w_q, u=layer.u, v=layer.v, s=layer.s,
        alpha=np.float64(layer.alpha), rank=np.int64(layer.rank),
        head_w=head.w, head_b=head.b,
        feat_dim=np.int64(extractor.dim), feat_seed=np.int64(extractor.seed),
        taxonomy=np.frombuffer(json.dumps(list(taxonomy)).encode("utf-8"), dtype=np.uint8),
    )


def load_checkpoint(path):
    with np.load(path) as data:
        w_q = data["w_q"].copy()
        w_q.setflags(write=False)
        layer = AdapterLayer(
            w_q=w_q, u=data["u"].copy(), v=data["v"].copy(), s=data["s"].copy(),
            alpha=float(data["alpha"]), rank=int(data["rank"]),
        )
        head = ReadoutHead(w=data["head_w"].copy(), b=data["head_b"].copy())
        extractor = HashedFeatureExtractor(dim=int(data["feat_dim"]), seed=int(data["feat_seed"]))
        taxonomy = tuple(json.loads(bytes(data["taxonomy"]).decode("utf-8")))
    return layer, head, extractor, taxonomy
