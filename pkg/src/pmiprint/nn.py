"""One-hidden-layer ReLU classifier: training with Adam, inference, attacks, file I/O."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .dataset import SplitPools
from .errors import ConfigError, DivergenceError, FormatError

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"PMIMLP\x00\x00"
MODEL_VERSION = 1
_HEADER = struct.Struct("<8sI3i")


@dataclass(frozen=True, eq=False)
class MlpModel:
    W1: np.ndarray  # (h, d)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (c, h)
    b2: np.ndarray  # (c,)

    def __post_init__(self):
        params = [np.array(p, dtype=np.float64) for p in (self.W1, self.b1, self.W2, self.b2)]
        W1, b1, W2, b2 = params
        h, d = W1.shape
        c = W2.shape[0]
        if b1.shape != (h,) or W2.shape != (c, h) or b2.shape != (c,):
            raise ValueError(
                f"inconsistent shapes W1{W1.shape} b1{b1.shape} W2{W2.shape} b2{b2.shape}")
        for name, p in zip(("W1", "b1", "W2", "b2"), params):
            if not np.all(np.isfinite(p)):
                raise ValueError(f"{name} contains non-finite values")
            p.setflags(write=False)
            object.__setattr__(self, name, p)

    @property
    def d(self) -> int:
        return self.W1.shape[1]

    @property
    def h(self) -> int:
        return self.W1.shape[0]

    @property
    def c(self) -> int:
        return self.W2.shape[0]

    @property
    def params(self) -> tuple[np.ndarray, ...]:
        return self.W1, self.b1, self.W2, self.b2

    @property
    def n_weights(self) -> int:
        return self.W1.size + self.W2.size

    def equals(self, other: MlpModel) -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.params, other.params))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    epochs: int = 300
    seed: int = 0
    hidden: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    selection: str = "best"  # "best" holdout accuracy, or "last" epoch

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.hidden < 1:
            raise ConfigError(f"hidden must be >= 1, got {self.hidden}")
        if self.selection not in ("best", "last"):
            raise ConfigError(f"selection must be 'best' or 'last', got {self.selection!r}")


def init_model(d: int, h: int, c: int, rng: np.random.Generator) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    lim1 = math.sqrt(6.0 / (d + h))
    lim2 = math.sqrt(6.0 / (h + c))
    return MlpModel(rng.uniform(-lim1, lim1, (h, d)), np.zeros(h),
                    rng.uniform(-lim2, lim2, (c, h)), np.zeros(c))


def _check_dim(model: MlpModel, X: np.ndarray) -> None:
    if X.shape[-1] != model.d:
        raise ValueError(f"input dimension {X.shape[-1]} does not match model d = {model.d}")


def logits(model: MlpModel, x) -> np.ndarray:
    """Pre-softmax outputs; accepts one vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    _check_dim(model, x)
    hidden = np.maximum(x @ model.W1.T + model.b1, 0.0)
    return hidden @ model.W2.T + model.b2


def predict(model: MlpModel, x) -> np.ndarray | int:
    # np.argmax returns the first maximal index, which is the documented tie-break
    z = logits(model, x)
    out = np.argmax(z, axis=-1)
    return int(out) if z.ndim == 1 else out


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def accuracy(model: MlpModel, X: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(predict(model, X) == y))


def loss_and_grads(model: MlpModel, X: np.ndarray, y: np.ndarray):
    """Mean softmax cross-entropy and its gradients w.r.t. (W1, b1, W2, b2)."""
    pre = X @ model.W1.T + model.b1
    hidden = np.maximum(pre, 0.0)
    z = hidden @ model.W2.T + model.b2
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    N = len(y)
    loss = float(np.mean(logsum - z[np.arange(N), y]))

    dz = np.exp(z - logsum[:, None])
    dz[np.arange(N), y] -= 1.0
    dz /= N
    gW2 = dz.T @ hidden
    gb2 = dz.sum(axis=0)
    dpre = (dz @ model.W2) * (pre > 0)
    gW1 = dpre.T @ X
    gb1 = dpre.sum(axis=0)
    return loss, (gW1, gb1, gW2, gb2)


class Adam:
    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> list[np.ndarray]:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            out.append(p - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return out


def _run_adam(model: MlpModel, X, y, cfg: TrainConfig, rng, X_val=None, y_val=None,
              history: list | None = None) -> MlpModel:
    opt = Adam(model.params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon)
    params = list(model.params)
    best, best_acc = None, -1.0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            current = MlpModel(*params)
            loss, grads = loss_and_grads(current, X[rows], y[rows])
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}")
            total += loss * len(rows)
            params = opt.step(params, grads)
        try:
            current = MlpModel(*params)
        except ValueError as exc:
            raise DivergenceError(f"parameters diverged at epoch {epoch + 1}: {exc}") from exc
        train_loss = total / len(y)
        val_acc = accuracy(current, X_val, y_val) if y_val is not None else float("nan")
        if history is not None:
            history.append({"epoch": epoch + 1, "loss": train_loss, "holdout_accuracy": val_acc})
        logger.debug("epoch %d loss %.6f holdout acc %.4f", epoch + 1, train_loss, val_acc)
        if y_val is None or math.isnan(val_acc) or cfg.selection == "last":
            best = current
        elif val_acc > best_acc:
            best, best_acc = current, val_acc
    return best


def train(data: SplitPools, cfg: TrainConfig, history: list | None = None) -> MlpModel:
    """Fit on the train split and keep the epoch with the best holdout accuracy.

    Per-epoch ``{"epoch", "loss", "holdout_accuracy"}`` rows are appended to
    ``history`` when given.
    """
    if len(data.train) == 0:
        raise ConfigError("train split is empty")
    rng = np.random.default_rng(cfg.seed)
    model = init_model(data.train.d, cfg.hidden, data.c, rng)
    hold = data.holdout
    return _run_adam(model, data.train.X, data.train.y, cfg, rng,
                     hold.X if len(hold) else None, hold.y if len(hold) else None, history)


def finetune_config(cfg: TrainConfig) -> TrainConfig:
    """Default fine-tuning schedule: a tenth of the original epochs."""
    return replace(cfg, epochs=max(1, cfg.epochs // 10))


def fine_tune(model: MlpModel, pools: SplitPools, fraction: float = 0.2,
              cfg: TrainConfig | None = None, seed: int = 0,
              min_pool: int = 1) -> tuple[MlpModel, SplitPools]:
    """Continue training on a random ``fraction`` of the unconsumed holdout.

    The chosen samples become training members, so the returned pools exclude
    them from every non-member pool. Member pools are unchanged.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"fine-tune fraction must lie in (0, 1), got {fraction}")
    cfg = cfg or finetune_config(TrainConfig())
    if cfg.epochs < 1:
        raise ConfigError("fine-tuning needs epochs >= 1")
    hold = pools.holdout
    available = np.flatnonzero(~np.isin(hold.ids, np.fromiter(pools.consumed, np.int64)))
    k = int(math.floor(fraction * len(available) + 1e-9))
    if k < 1:
        raise ConfigError("fine-tune fraction selects no holdout samples")
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(available, size=k, replace=False))
    tuned = _run_adam(model, hold.X[rows], hold.y[rows], cfg, rng)
    new_pools = pools.with_consumed(hold.ids[rows])
    short = [r for r in range(pools.c) if len(new_pools.nonmember_pool(r)) < min_pool]
    if short:
        logger.warning("fine-tuning left non-member pools of classes %s below %d samples",
                       short, min_pool)
    return tuned, new_pools


def prune_count(rate: float, n_weights: int) -> int:
    return int(math.floor(rate * n_weights + 1e-9))


def prune(model: MlpModel, rate: float) -> MlpModel:
    """Zero the ``floor(rate * N_w)`` smallest-magnitude weights across W1 and W2."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"pruning rate must lie in [0, 1), got {rate}")
    k = prune_count(rate, model.n_weights)
    flat = np.concatenate([model.W1.ravel(), model.W2.ravel()])
    # stable sort: equal magnitudes are pruned in parameter order
    drop = np.argsort(np.abs(flat), kind="stable")[:k]
    flat[drop] = 0.0
    n1 = model.W1.size
    return MlpModel(flat[:n1].reshape(model.W1.shape), model.b1,
                    flat[n1:].reshape(model.W2.shape), model.b2)


def model_to_bytes(model: MlpModel) -> bytes:
    header = _HEADER.pack(MODEL_MAGIC, MODEL_VERSION, model.d, model.h, model.c)
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.params)
    return header + body


def model_from_bytes(raw: bytes) -> MlpModel:
    if len(raw) < _HEADER.size:
        raise FormatError("model file truncated in header")
    magic, version, d, h, c = _HEADER.unpack_from(raw)
    if magic != MODEL_MAGIC:
        raise FormatError("not a model file (bad magic)")
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model format version {version}")
    if min(d, h, c) < 1:
        raise FormatError(f"invalid architecture d={d} h={h} c={c}")
    shapes = [(h, d), (h,), (c, h), (c,)]
    expected = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(raw) != expected:
        raise FormatError(f"model file has {len(raw)} bytes, expected {expected}")
    params, off = [], _HEADER.size
    for s in shapes:
        count = int(np.prod(s))
        params.append(np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(s))
        off += 8 * count
    try:
        return MlpModel(*params)
    except ValueError as exc:
        raise FormatError(f"corrupt model parameters: {exc}") from exc


def save_model(model: MlpModel, path) -> None:
    with open(path, "wb") as f:
        f.write(model_to_bytes(model))


def load_model(path) -> MlpModel:
    with open(path, "rb") as f:
        return model_from_bytes(f.read())
