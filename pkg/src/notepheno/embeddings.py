"""Skip-gram word-embedding pretraining with negative sampling.

Trains dense per-token vectors on an unlabeled token corpus so that words
appearing in similar contexts (synonyms, abbreviations, misspellings) end up
with similar vectors. The PAD row stays exactly zero throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import PAD_ID, PAD_TOKEN, Vocabulary

NEGATIVE_SAMPLING_POWER = 0.75
MIN_LR_FRACTION = 1e-4


@dataclass
class PretrainConfig:
    dim: int = 100
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 0

    def validate(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.negatives < 1:
            raise ValueError(f"negatives must be >= 1, got {self.negatives}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class EmbeddingMatrix:
    """One dense vector per vocabulary id; row 0 (PAD) is all-zero and frozen."""

    vectors: np.ndarray  # (vocab_size, dim) float64

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.vectors.shape[0]

    def copy(self) -> "EmbeddingMatrix":
        return EmbeddingMatrix(vectors=self.vectors.copy())


def init_embeddings(vocab_size: int, dim: int, seed: int) -> EmbeddingMatrix:
    """Seeded uniform init in [-0.5/dim, +0.5/dim] with a zeroed PAD row."""
    rng = np.random.default_rng(seed)
    bound = 0.5 / dim
    vectors = rng.uniform(-bound, bound, size=(vocab_size, dim))
    vectors[PAD_ID] = 0.0
    return EmbeddingMatrix(vectors=vectors)


def _log_sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return -np.logaddexp(0.0, -x)


def sgns_loss(center: np.ndarray, context: np.ndarray, negatives: np.ndarray) -> float:
    """Negative-sampling loss for one (center, context) pair.

    -log(sigmoid(u_ctx . v)) - sum_j log(sigmoid(-u_j . v))
    """
    pos = _log_sigmoid(float(context @ center))
    neg = _log_sigmoid(-(negatives @ center)) if len(negatives) else 0.0
    return float(-pos - np.sum(neg))


def sgns_gradients(
    center: np.ndarray, context: np.ndarray, negatives: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Loss plus analytic gradients wrt the center, context, and negative vectors."""
    score_pos = float(context @ center)
    s_pos = 1.0 / (1.0 + np.exp(-score_pos))
    loss = -float(_log_sigmoid(score_pos))
    d_center = (s_pos - 1.0) * context
    d_context = (s_pos - 1.0) * center
    if len(negatives):
        scores_neg = negatives @ center
        s_neg = 1.0 / (1.0 + np.exp(-scores_neg))
        loss -= float(np.sum(_log_sigmoid(-scores_neg)))
        d_center = d_center + s_neg @ negatives
        d_negatives = s_neg[:, None] * center[None, :]
    else:
        d_negatives = np.zeros((0, center.shape[0]))
    return loss, d_center, d_context, d_negatives


def _negative_sampling_cdf(id_sequences: list[list[int]], vocab_size: int):
    counts = np.zeros(vocab_size)
    for ids in id_sequences:
        for i in ids:
            counts[i] += 1
    weights = counts**NEGATIVE_SAMPLING_POWER
    weights[PAD_ID] = 0.0
    total = weights.sum()
    if total == 0:
        return None
    return np.cumsum(weights / total)


def pretrain_embeddings(
    corpus: list[list[str]],
    vocab: Vocabulary,
    cfg: PretrainConfig,
    loss_history: list[float] | None = None,
) -> EmbeddingMatrix:
    """Train skip-gram-with-negative-sampling embeddings; deterministic under seed.

    Stochastic gradient steps with a linearly decaying learning rate; the
    context window per center position is sampled uniformly in [1, window]
    (word2vec convention). With epochs=0 the seeded random initialization is
    returned unchanged. An optional loss_history list receives the mean
    per-pair loss of each epoch.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    bound = 0.5 / cfg.dim
    w_in = rng.uniform(-bound, bound, size=(len(vocab), cfg.dim))
    w_in[PAD_ID] = 0.0
    w_out = np.zeros((len(vocab), cfg.dim))

    id_sequences = [vocab.resolve(tokens) for tokens in corpus]
    cdf = _negative_sampling_cdf(id_sequences, len(vocab))
    total_centers = cfg.epochs * sum(len(ids) for ids in id_sequences)
    if cfg.epochs == 0 or total_centers == 0 or cdf is None:
        return EmbeddingMatrix(vectors=w_in)

    ids_array = np.arange(len(vocab))
    processed = 0
    for _ in range(cfg.epochs):
        epoch_loss = 0.0
        epoch_pairs = 0
        for ids in id_sequences:
            n = len(ids)
            for t in range(n):
                lr = max(
                    cfg.learning_rate * (1.0 - processed / total_centers),
                    cfg.learning_rate * MIN_LR_FRACTION,
                )
                processed += 1
                b = int(rng.integers(1, cfg.window + 1))
                center = ids[t]
                for offset in range(-b, b + 1):
                    pos = t + offset
                    if offset == 0 or pos < 0 or pos >= n:
                        continue
                    context = ids[pos]
                    draws = ids_array[np.searchsorted(cdf, rng.random(cfg.negatives))]
                    negs = draws[draws != context]
                    v = w_in[center]
                    u_ctx = w_out[context]
                    u_negs = w_out[negs]
                    loss, d_v, d_ctx, d_negs = sgns_gradients(v, u_ctx, u_negs)
                    w_in[center] = v - lr * d_v
                    w_out[context] = u_ctx - lr * d_ctx
                    if len(negs):
                        np.subtract.at(w_out, negs, lr * d_negs)
                    epoch_loss += loss
                    epoch_pairs += 1
        if loss_history is not None:
            loss_history.append(epoch_loss / max(epoch_pairs, 1))

    w_in[PAD_ID] = 0.0  # never touched, but make the contract explicit
    return EmbeddingMatrix(vectors=w_in)


def nearest_neighbors(
    emb: EmbeddingMatrix, vocab: Vocabulary, token: str, k: int
) -> list[tuple[str, float]]:
    """Top-k cosine neighbors of a token among real vocabulary words.

    The query resolves to UNK when out of vocabulary. PAD, UNK, and the query
    itself are never candidates; ties break by ascending id. A zero-norm query
    yields an empty list with a warning.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query_id = vocab.lookup(token)
    query = emb.vectors[query_id]
    query_norm = np.linalg.norm(query)
    if query_norm == 0:
        warnings.warn(f"token {token!r} has a zero embedding; cosine undefined")
        return []

    candidates = [i for i in range(2, emb.vocab_size) if i != query_id]
    scored = []
    for i in candidates:
        norm = np.linalg.norm(emb.vectors[i])
        if norm == 0:
            continue
        cos = float(emb.vectors[i] @ query / (norm * query_norm))
        scored.append((i, cos))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return [(vocab.id_to_token[i], cos) for i, cos in scored[:k]]


def save_embeddings(emb: EmbeddingMatrix, vocab: Vocabulary, path: str | Path):
    """Text format: a 'dim N' header, then one 'token v1 ... vN' line per token."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim {emb.dim}\n")
        for i, token in enumerate(vocab.id_to_token):
            values = " ".join(repr(float(x)) for x in emb.vectors[i])
            fh.write(f"{token} {values}\n")


def load_embeddings(path: str | Path) -> tuple[list[str], EmbeddingMatrix]:
    """Read the text format back; returns the token order and the matrix."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "dim":
            raise ValueError(f"{path}: expected 'dim N' header, got {header!r}")
        dim = int(header[1])
        tokens = []
        rows = []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected token plus {dim} floats")
            tokens.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    matrix = np.array(rows) if rows else np.zeros((0, dim))
    if tokens and tokens[0] == PAD_TOKEN and np.any(matrix[0] != 0):
        raise ValueError(f"{path}: PAD row must be all-zero")
    return tokens, EmbeddingMatrix(vectors=matrix)
