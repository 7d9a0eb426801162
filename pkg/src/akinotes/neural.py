"""Dual-channel text CNN (words + CUIs) in numpy with explicit backprop.

Each channel embeds its id sequence, applies 1-D valid convolutions of
several widths followed by ReLU, and max-pools over time.  Pooled features
from both channels are concatenated and fed to a single sigmoid unit.

Id 0 is padding: its embedding is fixed at zero and any window touching a
pad position is masked out of the pooling, so appending padding never
changes the output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

PAD = 0
CHANNELS = ("word", "cui")


@dataclass(frozen=True)
class CnnConfig:
    embed_dim: int = 100
    filter_widths: tuple[int, ...] = (3, 4, 5)
    filters_per_width: int = 100
    word_vocab_size: int = 1          # including the pad id
    cui_vocab_size: int = 1
    max_seq_len: int = 4000
    dropout_rate: float = 0.5
    lr: float = 0.05
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    channels: tuple[str, ...] = CHANNELS

    def __post_init__(self):
        object.__setattr__(self, "filter_widths", tuple(int(w) for w in self.filter_widths))
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.embed_dim < 1 or self.filters_per_width < 1:
            raise ValueError("embed_dim and filters_per_width must be >= 1")
        if not self.filter_widths or any(w < 1 or w > self.max_seq_len for w in self.filter_widths):
            raise ValueError("filter widths must lie in [1, max_seq_len]")
        if not self.channels or any(c not in CHANNELS for c in self.channels):
            raise ValueError(f"channels must be a non-empty subset of {CHANNELS}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must be in [0, 1)")

    def vocab_size(self, channel: str) -> int:
        return self.word_vocab_size if channel == "word" else self.cui_vocab_size


@dataclass
class CnnModel:
    config: CnnConfig
    params: dict[str, np.ndarray]

    def copy(self) -> "CnnModel":
        return CnnModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        return {"config": cfg, "params": {k: v.tolist() for k, v in self.params.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "CnnModel":
        return cls(CnnConfig(**d["config"]), {k: np.array(v, dtype=np.float64) for k, v in d["params"].items()})

    def predict_proba(self, word_ids, cui_ids) -> np.ndarray:
        return forward_batch(self, word_ids, cui_ids)


def init_model(config: CnnConfig, seed: Optional[int] = None, embeddings: Optional[dict] = None) -> CnnModel:
    """Random initialization; ``embeddings`` may supply pre-trained tables."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    d, F = config.embed_dim, config.filters_per_width
    params: dict[str, np.ndarray] = {}
    for ch in config.channels:
        table = rng.uniform(-0.25, 0.25, size=(config.vocab_size(ch), d))
        if embeddings and ch in embeddings:
            given = np.asarray(embeddings[ch], dtype=np.float64)
            if given.shape != table.shape:
                raise ValueError(f"{ch} embeddings have shape {given.shape}, expected {table.shape}")
            table = given.copy()
        table[PAD] = 0.0
        params[f"emb.{ch}"] = table
        for w in config.filter_widths:
            bound = np.sqrt(6.0 / (w * d + F))
            params[f"conv.{ch}.{w}.W"] = rng.uniform(-bound, bound, size=(w, d, F))
            params[f"conv.{ch}.{w}.b"] = np.zeros(F)
    n_pooled = len(config.channels) * len(config.filter_widths) * F
    params["dense.w"] = rng.uniform(-0.1, 0.1, size=n_pooled)
    params["dense.b"] = np.zeros(1)
    return CnnModel(config, params)


def pad_batch(seqs: Sequence[Sequence[int]], max_len: int) -> np.ndarray:
    """Truncate to ``max_len`` and right-pad with id 0 to a common length."""
    seqs = [list(s)[:max_len] for s in seqs]
    L = max((len(s) for s in seqs), default=0)
    out = np.zeros((len(seqs), max(L, 1)), dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def _as_ids(model: CnnModel, ids, channel: str) -> np.ndarray:
    if isinstance(ids, np.ndarray) and ids.ndim == 2:
        arr = ids.astype(np.int64)
    else:
        arr = pad_batch(ids, model.config.max_seq_len)
    arr = arr[:, :model.config.max_seq_len]
    V = model.config.vocab_size(channel)
    if arr.size and (arr.min() < 0 or arr.max() >= V):
        raise ValueError(f"{channel} id out of range [0, {V})")
    return arr


@dataclass
class _Cache:
    ids: dict = field(default_factory=dict)
    pooled_parts: list = field(default_factory=list)   # (channel, width, H, valid, argmax)
    pooled: Optional[np.ndarray] = None
    keep: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None


def _channel_forward(model, ch, ids, cache):
    cfg = model.config
    E = model.params[f"emb.{ch}"][ids]                   # (B, L, d)
    B, L = ids.shape
    is_pad = ids == PAD
    outs = []
    for w in cfg.filter_widths:
        W = model.params[f"conv.{ch}.{w}.W"]
        b = model.params[f"conv.{ch}.{w}.b"]
        T = L - w + 1
        F = W.shape[2]
        if T <= 0:
            pooled = np.zeros((B, F))
            cache.pooled_parts.append((ch, w, None, None, None))
            outs.append(pooled)
            continue
        H = np.empty((B, T, F))
        H[:] = b
        pad_in_window = np.zeros((B, T), dtype=bool)
        for i in range(w):
            H += E[:, i:i + T, :] @ W[i]
            pad_in_window |= is_pad[:, i:i + T]
        valid = ~pad_in_window
        A = np.maximum(H, 0.0) * valid[:, :, None]
        arg = A.argmax(axis=1)                           # (B, F)
        pooled = np.take_along_axis(A, arg[:, None, :], axis=1)[:, 0, :]
        cache.pooled_parts.append((ch, w, H, valid, arg))
        outs.append(pooled)
    return outs


def _forward(model: CnnModel, word_ids, cui_ids, train=False, rng=None):
    cache = _Cache()
    parts = []
    for ch, ids in (("word", word_ids), ("cui", cui_ids)):
        if ch not in model.config.channels:
            continue
        arr = _as_ids(model, ids, ch)
        cache.ids[ch] = arr
        parts.extend(_channel_forward(model, ch, arr, cache))
    pooled = np.concatenate(parts, axis=1)
    cache.pooled = pooled
    if train and model.config.dropout_rate > 0.0:
        keep_p = 1.0 - model.config.dropout_rate
        cache.keep = (rng.random(pooled.shape) < keep_p) / keep_p
        pooled = pooled * cache.keep
    z = pooled @ model.params["dense.w"] + model.params["dense.b"][0]
    cache.z = z
    return z, cache


def forward_batch(model: CnnModel, word_ids, cui_ids) -> np.ndarray:
    z, _ = _forward(model, word_ids, cui_ids)
    return expit(z)


def forward(model: CnnModel, word_ids: Sequence[int], cui_ids: Sequence[int]) -> float:
    """Probability for a single example (inference mode)."""
    return float(forward_batch(model, [word_ids], [cui_ids])[0])


def bce_loss(z, y) -> np.ndarray:
    """Per-example binary cross-entropy of logits ``z``."""
    s = 2.0 * np.asarray(y, dtype=np.float64) - 1.0
    return np.logaddexp(0.0, -s * z)


def _backward(model: CnnModel, cache: _Cache, y) -> dict[str, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    B = y.size
    dz = (expit(cache.z) - y) / B
    pooled_used = cache.pooled if cache.keep is None else cache.pooled * cache.keep
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    grads["dense.w"] = pooled_used.T @ dz
    grads["dense.b"] = np.array([dz.sum()])
    dpooled = dz[:, None] * model.params["dense.w"][None, :]
    if cache.keep is not None:
        dpooled = dpooled * cache.keep

    col = 0
    rows = np.arange(B)[:, None]
    for ch, w, H, valid, arg in cache.pooled_parts:
        W = model.params[f"conv.{ch}.{w}.W"]
        F = W.shape[2]
        g = dpooled[:, col:col + F]
        col += F
        if H is None:
            continue
        h_at = np.take_along_axis(H, arg[:, None, :], axis=1)[:, 0, :]
        v_at = valid[rows, arg]
        g = g * ((h_at > 0.0) & v_at)                    # (B, F)
        grads[f"conv.{ch}.{w}.b"] += g.sum(axis=0)
        ids = cache.ids[ch]
        E = model.params[f"emb.{ch}"]
        dW = grads[f"conv.{ch}.{w}.W"]
        dE = grads[f"emb.{ch}"]
        for i in range(w):
            tok = ids[rows, arg + i]                     # (B, F)
            x = E[tok]                                   # (B, F, d)
            dW[i] += np.einsum("bfd,bf->df", x, g)
            np.add.at(dE, tok.ravel(), (g[:, :, None] * W[i].T[None, :, :]).reshape(-1, E.shape[1]))
    for ch in model.config.channels:
        grads[f"emb.{ch}"][PAD] = 0.0
    return grads


def loss_and_grads(model: CnnModel, word_ids, cui_ids, y, train=False, rng=None):
    z, cache = _forward(model, word_ids, cui_ids, train=train, rng=rng)
    loss = float(bce_loss(z, y).mean())
    return loss, _backward(model, cache, y)


def dataset_loss(model: CnnModel, word_ids, cui_ids, y) -> float:
    z, _ = _forward(model, word_ids, cui_ids)
    return float(bce_loss(z, y).mean())


@dataclass
class CnnDataset:
    word_ids: list[list[int]]
    cui_ids: list[list[int]]
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.word_ids) == len(self.cui_ids) == len(self.labels)):
            raise ValueError("dataset fields differ in length")

    def __len__(self):
        return int(self.labels.size)


def train_cnn(model: CnnModel, data: CnnDataset, config: Optional[CnnConfig] = None):
    """Mini-batch gradient descent on mean binary cross-entropy.

    Returns the trained copy and the per-epoch loss over the whole
    training set, evaluated without dropout after each epoch.
    """
    cfg = config or model.config
    if len(data) == 0:
        raise ValueError("empty dataset")
    if data.labels.min() == data.labels.max():
        raise ValueError("labels must contain both classes")
    model = CnnModel(replace(model.config, dropout_rate=cfg.dropout_rate), model.copy().params)
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            w = pad_batch([data.word_ids[i] for i in idx], cfg.max_seq_len)
            c = pad_batch([data.cui_ids[i] for i in idx], cfg.max_seq_len)
            loss, grads = loss_and_grads(model, w, c, data.labels[idx], train=True, rng=rng)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {bi}")
            for k, g in grads.items():
                model.params[k] -= cfg.lr * g
        curve.append(dataset_loss(model, data.word_ids, data.cui_ids, data.labels))
        if not np.isfinite(curve[-1]):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
    return model, curve


def _near_kink(model: CnnModel, word_ids, cui_ids, margin: float) -> bool:
    _, cache = _forward(model, [word_ids], [cui_ids])
    for _, _, H, valid, _ in cache.pooled_parts:
        if H is None:
            continue
        Hv = H[0][valid[0]]
        if Hv.size == 0:
            continue
        if np.any(np.abs(Hv) < margin):
            return True
        # ties for the max among active windows
        act = np.where(Hv > 0, Hv, -np.inf)
        if act.shape[0] >= 2:
            top2 = np.sort(act, axis=0)[-2:]
            both = np.isfinite(top2).all(axis=0)
            gap = np.where(both, top2[1] - np.where(both, top2[0], 0.0), np.inf)
            if np.any(gap < margin):
                return True
    return False


def gradient_check(model: CnnModel, example, epsilon: float = 1e-5, max_retries: int = 10,
                   seed: int = 0) -> float:
    """Max relative error between backprop and central-difference gradients.

    ``example`` is ``(word_ids, cui_ids, label)``.  Dropout is disabled.  If
    any ReLU input or pooling tie lies within ``100 * epsilon`` of a kink,
    the embeddings are jittered and the check retried.
    """
    word_ids, cui_ids, label = example
    model = CnnModel(replace(model.config, dropout_rate=0.0), model.copy().params)
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        if not _near_kink(model, word_ids, cui_ids, 100 * epsilon):
            break
        for ch in model.config.channels:
            E = model.params[f"emb.{ch}"]
            E[1:] += rng.normal(scale=1e-3, size=E[1:].shape)
    y = np.array([label])
    _, grads = loss_and_grads(model, [word_ids], [cui_ids], y)
    worst = 0.0
    for name, P in model.params.items():
        G = grads[name]
        flat = P.reshape(-1)
        gflat = G.reshape(-1)
        for j in range(flat.size):
            if name.startswith("emb.") and j < P.shape[1]:
                continue                                 # pad row is frozen
            orig = flat[j]
            flat[j] = orig + epsilon
            lp = dataset_loss(model, [word_ids], [cui_ids], y)
            flat[j] = orig - epsilon
            lm = dataset_loss(model, [word_ids], [cui_ids], y)
            flat[j] = orig
            num = (lp - lm) / (2 * epsilon)
            ana = gflat[j]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


def load_embeddings(path, token_index: dict[str, int], dim: int, vocab_size: int, seed: int = 0) -> np.ndarray:
    """Read ``token v1 .. vd`` lines into a table indexed by ``token_index``.

    Tokens absent from the file keep a seeded uniform initialization; row 0
    (padding) is zero.
    """
    rng = np.random.default_rng(seed)
    table = rng.uniform(-0.25, 0.25, size=(vocab_size, dim))
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            if len(parts) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            idx = token_index.get(parts[0])
            if idx is not None:
                table[idx] = [float(x) for x in parts[1:]]
    table[PAD] = 0.0
    return table
