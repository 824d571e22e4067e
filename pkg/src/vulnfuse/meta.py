"""Meta-learning verification: weighted fusion of base detectors plus MLP gate.

One shared learner is applied independently to every (contract, label) cell:
the base detectors' probabilities for that label are fused elementwise with a
learnable weight vector and pushed through a two-hidden-layer ReLU MLP ending
in a sigmoid. A proximal adaptation step is exposed for tuning the fusion
weights toward a new task while staying anchored to the trained values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import LabelVector
from .detectors import DetectionResult
from .errors import AllDetectorsFailed, EmptyDataset, InvalidParameter, NumericError, ShapeError

DEFAULT_HIDDEN1 = 16
DEFAULT_HIDDEN2 = 8
DEFAULT_THRESHOLD = 0.5
DEFAULT_LAMBDA = 1.0
IMPUTED_PROBABILITY = 0.5  # stands in for a failed detector


@dataclass
class MetaLearner:
    w: np.ndarray   # fusion weights, length psi
    w1: np.ndarray  # h1 x psi
    b1: np.ndarray
    w2: np.ndarray  # h2 x h1
    b2: np.ndarray
    w3: np.ndarray  # 1 x h2
    b3: np.ndarray

    @property
    def psi(self) -> int:
        return self.w.size

    @property
    def hidden(self) -> tuple[int, int]:
        return self.w1.shape[0], self.w2.shape[0]


def init_meta(psi: int = 3, h1: int = DEFAULT_HIDDEN1, h2: int = DEFAULT_HIDDEN2,
              seed: int = 0) -> MetaLearner:
    if psi < 1 or h1 < 1 or h2 < 1:
        raise InvalidParameter("psi and hidden sizes must be positive")
    rng = np.random.default_rng(seed)
    return MetaLearner(
        w=np.ones(psi),
        w1=rng.normal(0.0, np.sqrt(2.0 / psi), (h1, psi)),
        b1=np.zeros(h1),
        w2=rng.normal(0.0, np.sqrt(2.0 / h1), (h2, h1)),
        b2=np.zeros(h2),
        w3=rng.normal(0.0, np.sqrt(2.0 / h2), (1, h2)),
        b3=np.zeros(1),
    )


def fuse(w: np.ndarray, yhat: np.ndarray) -> np.ndarray:
    """Elementwise product of fusion weights and base predictions."""
    w = np.asarray(w, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if w.shape != yhat.shape:
        raise ShapeError(f"weight/prediction length mismatch: {w.shape} vs {yhat.shape}")
    return w * yhat


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def meta_forward(learner: MetaLearner, x) -> float:
    """relu -> relu -> sigmoid on a fused length-psi input; output in (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    h1 = np.maximum(learner.w1 @ x + learner.b1, 0.0)
    h2 = np.maximum(learner.w2 @ h1 + learner.b2, 0.0)
    return float(_sigmoid(learner.w3 @ h2 + learner.b3)[0])


def meta_forward_counted(learner: MetaLearner, x) -> tuple[float, int]:
    """Forward pass plus its exact multiply count psi*h1 + h1*h2 + h2."""
    h1, h2 = learner.hidden
    count = learner.psi * h1 + h1 * h2 + h2 * 1
    return meta_forward(learner, x), count


def _forward_batch(learner: MetaLearner, raw: np.ndarray):
    fused = raw * learner.w
    z1 = fused @ learner.w1.T + learner.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ learner.w2.T + learner.b2
    a2 = np.maximum(z2, 0.0)
    z3 = a2 @ learner.w3.T + learner.b3
    return fused, z1, a1, z2, a2, _sigmoid(z3)[:, 0]


def predict_batch(learner: MetaLearner, raw: np.ndarray) -> np.ndarray:
    """Probabilities for an (n, psi) matrix of raw base predictions."""
    return _forward_batch(learner, raw)[-1]


@dataclass
class MetaTrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 32
    epochs: int = 300
    seed: int = 0


@dataclass
class MetaTrainResult:
    loss_trace: list[float] = field(default_factory=list)


def _batch_grads(learner: MetaLearner, raw, y):
    n = raw.shape[0]
    fused, z1, a1, z2, a2, p = _forward_batch(learner, raw)
    eps = 1e-7
    pc = np.clip(p, eps, 1.0 - eps)
    loss = float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))
    d3 = ((p - y) / n)[:, None]                      # n x 1
    gw3 = d3.T @ a2
    gb3 = d3.sum(axis=0)
    d2 = (d3 @ learner.w3) * (z2 > 0.0)              # n x h2
    gw2 = d2.T @ a1
    gb2 = d2.sum(axis=0)
    d1 = (d2 @ learner.w2) * (z1 > 0.0)              # n x h1
    gw1 = d1.T @ fused
    gb1 = d1.sum(axis=0)
    gw = ((d1 @ learner.w1) * raw).sum(axis=0)       # fusion weights
    return loss, {"w": gw, "w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2,
                  "w3": gw3, "b3": gb3}


def train_meta(rows: np.ndarray, targets: np.ndarray,
               config: MetaTrainConfig = MetaTrainConfig(),
               learner: Optional[MetaLearner] = None) -> tuple[MetaLearner, MetaTrainResult]:
    """Fit the learner by mini-batch gradient descent on BCE; seed-deterministic.

    `rows` holds one length-psi base-prediction vector per (contract, label)
    pair; `targets` the matching truth bits.
    """
    rows = np.asarray(rows, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if rows.size == 0:
        raise EmptyDataset("no meta-training rows")
    if rows.shape[0] != targets.shape[0]:
        raise ShapeError("rows and targets must have the same length")
    if learner is None:
        learner = init_meta(psi=rows.shape[1], seed=config.seed)
    rng = np.random.default_rng(config.seed)
    n = rows.shape[0]
    result = MetaTrainResult()
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = _batch_grads(learner, rows[idx], targets[idx])
            total += loss * len(idx)
            eta = config.learning_rate
            learner.w -= eta * grads["w"]
            learner.w1 -= eta * grads["w1"]
            learner.b1 -= eta * grads["b1"]
            learner.w2 -= eta * grads["w2"]
            learner.b2 -= eta * grads["b2"]
            learner.w3 -= eta * grads["w3"]
            learner.b3 -= eta * grads["b3"]
        result.loss_trace.append(total / n)
    return learner, result


def adapt_to_task(w: np.ndarray, task_loss_and_grad: Callable, lam: float,
                  tol: float = 1e-6, max_iter: int = 100000) -> np.ndarray:
    """Minimize task loss plus (lam/2)*||v - w||^2 by backtracking gradient descent.

    `task_loss_and_grad(v)` must return the pair (loss, gradient). Iterates
    until the proximal objective's gradient norm drops to `tol`.
    """
    if lam < 0:
        raise InvalidParameter("regularization coefficient must be non-negative")
    w = np.asarray(w, dtype=np.float64)
    v = w.copy()

    def objective(point):
        loss, grad = task_loss_and_grad(point)
        if not np.all(np.isfinite(np.atleast_1d(loss))):
            raise NumericError("task loss is not finite")
        diff = point - w
        return loss + 0.5 * lam * float(diff @ diff), np.asarray(grad) + lam * diff

    step = 1.0
    value, grad = objective(v)
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            break
        while True:
            candidate = v - step * grad
            cand_value, cand_grad = objective(candidate)
            if cand_value <= value - 0.5 * step * gnorm * gnorm:
                break
            step *= 0.5
            if step < 1e-18:
                return v
        v, value, grad = candidate, cand_value, cand_grad
        step *= 2.0  # probe a larger step again after a success
    return v


def verify(learner: MetaLearner, results: Sequence[DetectionResult],
           threshold: float = DEFAULT_THRESHOLD,
           num_labels: Optional[int] = None) -> tuple[LabelVector, tuple[float, ...]]:
    """Fuse per-label base predictions into final labels and probabilities.

    Failed detectors contribute the uninformative probability 0.5. A label is
    set when the meta probability reaches the threshold (>= rule).
    """
    ok = [r for r in results if r.ok]
    if not ok:
        raise AllDetectorsFailed("no successful detector results to verify")
    if num_labels is None:
        num_labels = len(ok[0].probabilities)
    raw = np.full((len(results), num_labels), IMPUTED_PROBABILITY)
    for i, r in enumerate(results):
        if r.ok:
            if len(r.probabilities) != num_labels:
                raise ShapeError(
                    f"detector {r.detector_name!r} returned {len(r.probabilities)} "
                    f"probabilities, expected {num_labels}"
                )
            raw[i] = r.probabilities
    if raw.shape[0] != learner.psi:
        raise ShapeError(f"learner expects {learner.psi} detectors, got {raw.shape[0]}")
    probs = tuple(meta_forward(learner, fuse(learner.w, raw[:, j])) for j in range(num_labels))
    bits = tuple(1 if p >= threshold else 0 for p in probs)
    return LabelVector(bits=bits), probs


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_meta(path, learner: MetaLearner, threshold: float = DEFAULT_THRESHOLD) -> None:
    np.savez(
        path,
        w=learner.w, w1=learner.w1, b1=learner.b1, w2=learner.w2, b2=learner.b2,
        w3=learner.w3, b3=learner.b3, threshold=np.float64(threshold),
    )


def load_meta(path) -> tuple[MetaLearner, float]:
    with np.load(path) as data:
        learner = MetaLearner(
            w=data["w"].copy(), w1=data["w1"].copy(), b1=data["b1"].copy(),
            w2=data["w2"].copy(), b2=data["b2"].copy(),
            w3=data["w3"].copy(), b3=data["b3"].copy(),
        )
        threshold = float(data["threshold"])
    return learner, threshold


def export_rows_csv(path, rows: np.ndarray, targets: np.ndarray,
                    detector_names: Sequence[str]) -> None:
    """Audit dump of the meta-training matrix."""
    header = ",".join(list(detector_names) + ["truth"])
    lines = [header]
    for row, t in zip(rows, targets):
        lines.append(",".join(f"{v:.6f}" for v in row) + f",{int(t)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def rows_from_results(per_contract_results: Sequence[Sequence[DetectionResult]],
                      truths: Sequence[LabelVector]) -> tuple[np.ndarray, np.ndarray]:
    """Build (rows, targets): one row per (contract, label) cell."""
    if len(per_contract_results) != len(truths):
        raise ShapeError("results and truths must align")
    rows, targets = [], []
    for results, truth in zip(per_contract_results, truths):
        num_labels = len(truth)
        raw = np.full((len(results), num_labels), IMPUTED_PROBABILITY)
        for i, r in enumerate(results):
            if r.ok:
                raw[i] = r.probabilities
        for j in range(num_labels):
            rows.append(raw[:, j])
            targets.append(truth.bits[j])
    if not rows:
        raise EmptyDataset("no meta-training rows")
    return np.stack(rows), np.asarray(targets, dtype=np.float64)
