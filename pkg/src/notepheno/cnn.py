"""Multi-width convolutional text classifier with from-scratch backpropagation.

Embedding lookup -> per-width convolution filter banks -> max-over-time
pooling -> (inverted dropout) -> per-head sigmoid output. Training runs
adadelta over all parameters, fine-tunes the embedding table, and re-applies
an L2 max-norm constraint to the embedding rows after every step.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import PAD_ID, Vocabulary
from .embeddings import EmbeddingMatrix
from .metrics import confusion, f1
from .optim import AdadeltaState, adadelta_step

PROB_CLAMP = 1e-7
INIT_BOUND = 0.01
CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class CnnConfig:
    filter_widths: tuple[int, ...] = (2, 3, 4, 5)
    filters_per_width: int = 100
    dropout_p: float = 0.5
    max_norm: float = 3.0
    epochs: int = 20
    batch_size: int = 50
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    threshold: float = 0.5
    n_heads: int = 1
    activation: str = "tanh"
    seed: int = 0

    def validate(self):
        widths = tuple(self.filter_widths)
        if not widths or len(set(widths)) != len(widths) or any(w < 1 for w in widths):
            raise ValueError(f"filter widths must be distinct and >= 1, got {widths}")
        if self.filters_per_width < 1:
            raise ValueError("filters_per_width must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.max_norm <= 0:
            raise ValueError("max_norm must be > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 < self.adadelta_rho < 1.0 or self.adadelta_eps <= 0:
            raise ValueError("adadelta_rho must be in (0, 1) and adadelta_eps > 0")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.n_heads < 1:
            raise ValueError("n_heads must be >= 1")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"activation must be 'tanh' or 'relu', got {self.activation!r}")


@dataclass
class CnnModel:
    embeddings: EmbeddingMatrix
    conv_weights: dict[int, np.ndarray]  # width -> (filters, width, dim)
    conv_biases: dict[int, np.ndarray]  # width -> (filters,)
    output_weights: np.ndarray  # (heads, total filters)
    output_bias: np.ndarray  # (heads,)
    config: CnnConfig

    @property
    def total_filters(self) -> int:
        return len(self.config.filter_widths) * self.config.filters_per_width

    def parameters(self) -> dict[str, np.ndarray]:
        params = {"embeddings": self.embeddings.vectors}
        for w in self.config.filter_widths:
            params[f"conv_w{w}"] = self.conv_weights[w]
            params[f"conv_b{w}"] = self.conv_biases[w]
        params["output_weights"] = self.output_weights
        params["output_bias"] = self.output_bias
        return params


@dataclass
class Activations:
    """Everything the forward pass computes, cached for backprop and saliency."""

    padded_ids: list[int]
    embedded: np.ndarray  # (length, dim)
    grids: dict[int, np.ndarray]  # width -> (positions, filters) post-activation
    argmax: dict[int, np.ndarray]  # width -> (filters,) winning positions
    pooled: np.ndarray  # (total filters,) pre-dropout
    dropout_mask: np.ndarray | None  # (total filters,) keep mask, train mode only
    dropped: np.ndarray  # (total filters,) vector fed to the output layer
    probs: np.ndarray  # (heads,)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_f1: list[list[float | None]] = field(default_factory=list)


def init_model(config: CnnConfig, embeddings: EmbeddingMatrix) -> CnnModel:
    """Fresh model around a (copied) embedding table; uniform [-0.01, 0.01] weights."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    dim = embeddings.dim
    conv_weights = {}
    conv_biases = {}
    for w in config.filter_widths:
        conv_weights[w] = rng.uniform(
            -INIT_BOUND, INIT_BOUND, size=(config.filters_per_width, w, dim)
        )
        conv_biases[w] = np.zeros(config.filters_per_width)
    total = len(config.filter_widths) * config.filters_per_width
    output_weights = rng.uniform(-INIT_BOUND, INIT_BOUND, size=(config.n_heads, total))
    output_bias = np.zeros(config.n_heads)
    return CnnModel(
        embeddings=embeddings.copy(),
        conv_weights=conv_weights,
        conv_biases=conv_biases,
        output_weights=output_weights,
        output_bias=output_bias,
        config=config,
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _windows(embedded: np.ndarray, width: int) -> np.ndarray:
    """All contiguous width-long stacks of rows: (positions, width, dim)."""
    positions = embedded.shape[0] - width + 1
    return np.stack([embedded[i : positions + i] for i in range(width)], axis=1)


def pad_ids(token_ids: list[int], max_width: int) -> list[int]:
    """Pad with PAD up to the largest filter width so every bank sees >= 1 window."""
    if len(token_ids) >= max_width:
        return list(token_ids)
    return list(token_ids) + [PAD_ID] * (max_width - len(token_ids))


def forward(
    model: CnnModel,
    token_ids: list[int],
    train_mode: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> Activations:
    """Run the network on one id sequence.

    In train mode, inverted dropout (scaled by 1/(1-p)) is applied to the
    pooled vector using the supplied generator. Ties in max pooling resolve to
    the first position.
    """
    if not token_ids:
        raise ValueError("cannot run the model on an empty token sequence")
    cfg = model.config
    ids = pad_ids(token_ids, max(cfg.filter_widths))
    embedded = model.embeddings.vectors[ids]

    grids: dict[int, np.ndarray] = {}
    argmax: dict[int, np.ndarray] = {}
    pooled_parts = []
    for w in cfg.filter_widths:
        windows = _windows(embedded, w)  # (P, w, dim)
        p = windows.shape[0]
        flat = windows.reshape(p, -1)
        z = flat @ model.conv_weights[w].reshape(cfg.filters_per_width, -1).T
        z += model.conv_biases[w]
        a = np.tanh(z) if cfg.activation == "tanh" else np.maximum(z, 0.0)
        grids[w] = a
        argmax[w] = np.argmax(a, axis=0)
        pooled_parts.append(a[argmax[w], np.arange(cfg.filters_per_width)])
    pooled = np.concatenate(pooled_parts)

    if train_mode and cfg.dropout_p > 0.0:
        if dropout_rng is None:
            raise ValueError("train-mode forward with dropout needs a dropout_rng")
        mask = (dropout_rng.random(pooled.shape[0]) >= cfg.dropout_p).astype(float)
        dropped = pooled * mask / (1.0 - cfg.dropout_p)
    else:
        mask = None
        dropped = pooled

    logits = model.output_weights @ dropped + model.output_bias
    probs = _sigmoid(logits)
    return Activations(
        padded_ids=ids,
        embedded=embedded,
        grids=grids,
        argmax=argmax,
        pooled=pooled,
        dropout_mask=mask,
        dropped=dropped,
        probs=probs,
    )


def loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean over heads of binary cross-entropy, with probabilities clamped."""
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(labels, dtype=float)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def backward(
    model: CnnModel, acts: Activations, labels: np.ndarray
) -> dict[str, np.ndarray]:
    """Analytic gradients of loss() wrt every trainable parameter.

    Gradient flows only through each filter's argmax window, so embedding
    gradients accumulate only at token positions inside winning windows.
    """
    cfg = model.config
    n_heads = cfg.n_heads
    y = np.asarray(labels, dtype=float)
    d_logits = (acts.probs - y) / n_heads

    grads: dict[str, np.ndarray] = {
        "output_weights": np.outer(d_logits, acts.dropped),
        "output_bias": d_logits.copy(),
    }

    d_dropped = model.output_weights.T @ d_logits
    if acts.dropout_mask is not None:
        d_pooled = d_dropped * acts.dropout_mask / (1.0 - cfg.dropout_p)
    else:
        d_pooled = d_dropped

    d_embedded = np.zeros_like(acts.embedded)
    nf = cfg.filters_per_width
    offset = 0
    for w in cfg.filter_widths:
        d_pool_w = d_pooled[offset : offset + nf]
        offset += nf
        starts = acts.argmax[w]
        a_star = acts.grids[w][starts, np.arange(nf)]
        if cfg.activation == "tanh":
            dz = d_pool_w * (1.0 - a_star * a_star)
        else:
            dz = d_pool_w * (a_star > 0.0)
        idx = starts[:, None] + np.arange(w)[None, :]  # (filters, width) row indices
        grads[f"conv_w{w}"] = dz[:, None, None] * acts.embedded[idx]
        grads[f"conv_b{w}"] = dz
        np.add.at(d_embedded, idx, dz[:, None, None] * model.conv_weights[w])

    d_emb_table = np.zeros_like(model.embeddings.vectors)
    np.add.at(d_emb_table, acts.padded_ids, d_embedded)
    d_emb_table[PAD_ID] = 0.0
    grads["embeddings"] = d_emb_table
    return grads


def apply_max_norm(emb: EmbeddingMatrix, max_norm: float) -> EmbeddingMatrix:
    """Rescale rows whose L2 norm exceeds max_norm back to exactly max_norm.

    Mutates and returns the given matrix; the PAD row is never touched.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be > 0")
    vectors = emb.vectors
    norms = np.linalg.norm(vectors, axis=1)
    over = norms > max_norm
    over[PAD_ID] = False
    if np.any(over):
        vectors[over] *= (max_norm / norms[over])[:, None]
    return emb


def _zero_grads_like(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def train(
    model: CnnModel,
    train_data: list[tuple[list[int], np.ndarray]],
    val_data: list[tuple[list[int], np.ndarray]] | None = None,
    step_callback=None,
) -> tuple[CnnModel, TrainHistory]:
    """Mini-batch adadelta training; mutates and returns the model.

    train_data and val_data hold (token id sequence, per-head 0/1 label
    vector) pairs. Batches reshuffle every epoch under the config seed; after
    every optimizer step the embedding max-norm constraint is re-applied and
    step_callback(model, epoch, step) fires if given. History records the
    mean train loss and per-head validation F1 of each epoch. The final-epoch
    model is returned (no early stopping).
    """
    cfg = model.config
    cfg.validate()
    for ids, labels in train_data:
        if len(labels) != cfg.n_heads:
            raise ValueError(
                f"example has {len(labels)} labels but the model has {cfg.n_heads} heads"
            )
    order_rng = np.random.default_rng([cfg.seed, 0xD47A])
    dropout_rng = np.random.default_rng([cfg.seed, 0xD407])
    params = model.parameters()
    state = AdadeltaState.for_params(params)
    history = TrainHistory()

    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(train_data))
        epoch_losses = []
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[start : start + cfg.batch_size]
            grad_sum = _zero_grads_like(params)
            for i in batch:
                ids, labels = train_data[i]
                acts = forward(model, ids, train_mode=True, dropout_rng=dropout_rng)
                epoch_losses.append(loss(acts.probs, labels))
                for name, g in backward(model, acts, labels).items():
                    grad_sum[name] += g
            for name in grad_sum:
                grad_sum[name] /= len(batch)
            adadelta_step(params, grad_sum, state, cfg.adadelta_rho, cfg.adadelta_eps)
            apply_max_norm(model.embeddings, cfg.max_norm)
            if step_callback is not None:
                step_callback(model, epoch, step)
        history.train_loss.append(float(np.mean(epoch_losses)))
        history.val_f1.append(_validation_f1(model, val_data) if val_data else None)
    return model, history


def _validation_f1(model, val_data) -> list[float | None]:
    preds = np.array([predict(model, ids)[1] for ids, _ in val_data])
    labels = np.array([y for _, y in val_data])
    return [
        f1(confusion([int(p) for p in preds[:, h]], [int(y) for y in labels[:, h]]))
        for h in range(model.config.n_heads)
    ]


def predict(
    model: CnnModel, token_ids: list[int], threshold: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Per-head (probability, binary label) with dropout off; label = prob >= threshold.

    Probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP], matching the
    loss convention, so a threshold of 1.0 can never fire.
    """
    if threshold is None:
        threshold = model.config.threshold
    acts = forward(model, token_ids, train_mode=False)
    probs = np.clip(acts.probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    labels = (probs >= threshold).astype(int)
    return probs, labels


def save_checkpoint(
    model: CnnModel, vocab: Vocabulary, phenotypes: list[str], path: str | Path
):
    """Self-describing JSON checkpoint; save -> load round-trips bit-exactly."""
    config = asdict(model.config)
    config["filter_widths"] = list(model.config.filter_widths)
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "cnn",
        "config": config,
        "phenotypes": list(phenotypes),
        "vocabulary": vocab.to_dict(),
        "vocab_sha256": vocab.sha256(),
        "params": {
            "embeddings": model.embeddings.vectors.tolist(),
            "conv_weights": {str(w): model.conv_weights[w].tolist() for w in model.config.filter_widths},
            "conv_biases": {str(w): model.conv_biases[w].tolist() for w in model.config.filter_widths},
            "output_weights": model.output_weights.tolist(),
            "output_bias": model.output_bias.tolist(),
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> tuple[CnnModel, Vocabulary, list[str]]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("kind") != "cnn":
        raise ValueError(f"{path}: not a CNN checkpoint (kind={doc.get('kind')!r})")
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format version")
    raw = dict(doc["config"])
    raw["filter_widths"] = tuple(raw["filter_widths"])
    config = CnnConfig(**raw)
    config.validate()
    params = doc["params"]
    model = CnnModel(
        embeddings=EmbeddingMatrix(vectors=np.array(params["embeddings"], dtype=float)),
        conv_weights={
            w: np.array(params["conv_weights"][str(w)], dtype=float)
            for w in config.filter_widths
        },
        conv_biases={
            w: np.array(params["conv_biases"][str(w)], dtype=float)
            for w in config.filter_widths
        },
        output_weights=np.array(params["output_weights"], dtype=float),
        output_bias=np.array(params["output_bias"], dtype=float),
        config=config,
    )
    vocab = Vocabulary.from_dict(doc["vocabulary"])
    if vocab.sha256() != doc["vocab_sha256"]:
        raise ValueError(f"{path}: vocabulary hash mismatch inside checkpoint")
    return model, vocab, list(doc["phenotypes"])
