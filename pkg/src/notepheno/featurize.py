"""Sparse feature extraction: n-gram counts and smoothed TF-IDF vectors.

Feature keys are hashable objects: n-gram tuples of tokens, or
(concept_id, negated) pairs coming out of the concept matcher. A feature
vector is a plain {column index: value} dict with no explicit zeros.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

FeatureKey = tuple
FeatureVector = dict[int, float]

IDF_VARIANT = "smooth-ln((1+N)/(1+df))+1, l2-normalized documents"


def extract_ngrams(tokens: list[str], n: int) -> dict[tuple, int]:
    """Counts of every contiguous n-token window; empty for short inputs."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    counts: dict[tuple, int] = {}
    for i in range(len(tokens) - n + 1):
        key = tuple(tokens[i : i + n])
        counts[key] = counts.get(key, 0) + 1
    return counts


@dataclass
class FeatureSpace:
    """Column assignment for feature keys, with per-column smoothed IDF."""

    feature_to_index: dict[FeatureKey, int]
    idf: list[float] | None = None
    variant: str = IDF_VARIANT
    index_to_feature: list[FeatureKey] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.index_to_feature:
            self.index_to_feature = [None] * len(self.feature_to_index)
            for key, idx in self.feature_to_index.items():
                self.index_to_feature[idx] = key

    @property
    def n_features(self) -> int:
        return len(self.feature_to_index)


def fit_feature_space(corpus_counts: list[dict[FeatureKey, int]]) -> FeatureSpace:
    """Assign columns in first-seen order and fit the smoothed IDF.

    idf(t) = ln((1 + N) / (1 + df(t))) + 1 with N documents and df(t) the
    number of documents containing feature t.
    """
    if not corpus_counts:
        raise ValueError("cannot fit a feature space on an empty corpus")
    feature_to_index: dict[FeatureKey, int] = {}
    df: dict[FeatureKey, int] = {}
    for counts in corpus_counts:
        for key in counts:
            if key not in feature_to_index:
                feature_to_index[key] = len(feature_to_index)
            df[key] = df.get(key, 0) + 1
    n_docs = len(corpus_counts)
    idf = [0.0] * len(feature_to_index)
    for key, idx in feature_to_index.items():
        idf[idx] = math.log((1 + n_docs) / (1 + df[key])) + 1.0
    return FeatureSpace(feature_to_index=feature_to_index, idf=idf)


def count_transform(counts: dict[FeatureKey, int], space: FeatureSpace) -> FeatureVector:
    """Raw count vector over the fitted columns; unseen features are dropped."""
    vec: FeatureVector = {}
    for key, count in counts.items():
        idx = space.feature_to_index.get(key)
        if idx is not None and count:
            vec[idx] = float(count)
    return vec


def tfidf_transform(counts: dict[FeatureKey, int], space: FeatureSpace) -> FeatureVector:
    """count * idf per column, then L2-normalized (the zero vector stays zero)."""
    if space.idf is None:
        raise ValueError("feature space has no fitted idf")
    vec: FeatureVector = {}
    for key, count in counts.items():
        idx = space.feature_to_index.get(key)
        if idx is not None and count:
            vec[idx] = count * space.idf[idx]
    norm = math.sqrt(sum(v * v for v in vec.values()))
    if norm > 0:
        vec = {idx: v / norm for idx, v in vec.items()}
    return vec


def feature_key_to_json(key: FeatureKey) -> list:
    """Stable JSON encoding for the two key kinds used by the pipelines."""
    if len(key) == 2 and isinstance(key[1], bool):
        return ["concept", key[0], key[1]]
    return ["ngram", list(key)]


def feature_key_from_json(data: list) -> FeatureKey:
    kind = data[0]
    if kind == "concept":
        return (data[1], bool(data[2]))
    if kind == "ngram":
        return tuple(data[1])
    raise ValueError(f"unknown feature key kind {kind!r}")
