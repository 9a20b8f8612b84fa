"""Salient-phrase extraction from the convolutional layer.

Every width-w window of a document gets a score. The default "weighted"
scorer approximates how much the window contributed to the prediction:
activation times the head's output weight, summed over the filters whose
pooling argmax is this window. The alternative "norm" scorer is the plain L2
norm of the w-width filter bank's activations at the position; it is local to
the window but blind to what the output layer actually uses. Reports
aggregate the top-scoring phrases globally over positively-predicted
documents or locally per document.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cnn import CnnModel, forward, predict
from .corpus import PAD_TOKEN, Vocabulary

VARIANTS = ("weighted", "norm")


@dataclass
class PhraseScore:
    phrase: tuple[str, ...]
    width: int
    position: int
    score: float
    note_id: str = ""

    @property
    def text(self) -> str:
        return " ".join(self.phrase)


@dataclass
class SaliencyReport:
    scope: str  # "global" or "local"
    phenotype: str
    entries: list[PhraseScore] = field(default_factory=list)
    flagged_negative: bool = False  # local scope only: prediction was negative


def _sort_entries(entries: list[PhraseScore]) -> list[PhraseScore]:
    return sorted(entries, key=lambda e: (-e.score, e.width, e.position, e.note_id))


def _dedup_top_k(entries: list[PhraseScore], k: int) -> list[PhraseScore]:
    """Keep the best-scoring entry per exact phrase string, then the top k.

    Windows that reach into the padding are dropped: reports list real
    phrases only.
    """
    best: dict[str, PhraseScore] = {}
    for entry in _sort_entries(entries):
        if PAD_TOKEN in entry.phrase:
            continue
        best.setdefault(entry.text, entry)
    return _sort_entries(list(best.values()))[:k]


def phrase_scores(
    model: CnnModel,
    vocab: Vocabulary,
    tokens: list[str],
    note_id: str = "",
    variant: str = "weighted",
    head: int = 0,
) -> list[PhraseScore]:
    """Score every (width, position) window of one document.

    The "weighted" variant sums activation times the head's output weight
    over the filters whose argmax is this window, clipped at zero; it
    approximates the window's contribution to the prediction. The "norm"
    variant is the L2 norm across the same-width filters' activations at the
    window, regardless of pooling.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if not tokens:
        raise ValueError("cannot score an empty token sequence")
    ids = vocab.resolve(tokens)
    acts = forward(model, ids, train_mode=False)
    display = list(tokens) + [PAD_TOKEN] * (len(acts.padded_ids) - len(tokens))

    cfg = model.config
    nf = cfg.filters_per_width
    scores: list[PhraseScore] = []
    offset = 0
    for w in cfg.filter_widths:
        grid = acts.grids[w]  # (positions, filters)
        if variant == "norm":
            values = np.linalg.norm(grid, axis=1)
        else:
            head_w = model.output_weights[head, offset : offset + nf]
            values = np.zeros(grid.shape[0])
            for f in range(nf):
                pos = acts.argmax[w][f]
                values[pos] += grid[pos, f] * head_w[f]
            values = np.maximum(values, 0.0)
        for i in range(grid.shape[0]):
            scores.append(
                PhraseScore(
                    phrase=tuple(display[i : i + w]),
                    width=w,
                    position=i,
                    score=float(values[i]),
                    note_id=note_id,
                )
            )
        offset += nf
    return scores


def global_top_phrases(
    model: CnnModel,
    vocab: Vocabulary,
    documents: list[tuple[str, list[str]]],
    phenotype: str,
    head: int,
    k: int,
    variant: str = "weighted",
) -> SaliencyReport:
    """Top-k deduplicated phrases pooled over positively-predicted documents.

    documents holds (note_id, tokens) pairs; only documents the model labels
    positive for the given head contribute. Duplicate phrase strings keep
    their maximum score.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    pooled: list[PhraseScore] = []
    any_positive = False
    for note_id, tokens in documents:
        if not tokens:
            continue
        _, labels = predict(model, vocab.resolve(tokens))
        if labels[head] != 1:
            continue
        any_positive = True
        pooled.extend(phrase_scores(model, vocab, tokens, note_id, variant, head))
    if not any_positive:
        warnings.warn(
            f"no document was predicted positive for {phenotype!r}; empty saliency report"
        )
    entries = _dedup_top_k(pooled, k)
    if entries and entries[0].score == 0.0:
        warnings.warn(f"all phrase scores for {phenotype!r} are zero")
    return SaliencyReport(scope="global", phenotype=phenotype, entries=entries)


def local_salient_phrases(
    model: CnnModel,
    vocab: Vocabulary,
    note_id: str,
    tokens: list[str],
    phenotype: str,
    head: int,
    k: int,
    variant: str = "weighted",
) -> SaliencyReport:
    """Top-k deduplicated phrases of a single document, whatever its prediction."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    _, labels = predict(model, vocab.resolve(tokens))
    flagged = bool(labels[head] != 1)
    if flagged:
        warnings.warn(
            f"note {note_id!r} is predicted negative for {phenotype!r}; "
            "report flagged accordingly"
        )
    entries = _dedup_top_k(phrase_scores(model, vocab, tokens, note_id, variant, head), k)
    if entries and entries[0].score == 0.0:
        warnings.warn(f"all phrase scores for {phenotype!r} are zero")
    return SaliencyReport(
        scope="local",
        phenotype=phenotype,
        entries=entries,
        flagged_negative=flagged,
    )


def report_to_tsv(report: SaliencyReport) -> str:
    lines = ["rank\tphrase\twidth\tscore"]
    for rank, entry in enumerate(report.entries, start=1):
        lines.append(f"{rank}\t{entry.text}\t{entry.width}\t{entry.score!r}")
    return "\n".join(lines) + "\n"


def report_to_json(report: SaliencyReport) -> dict:
    return {
        "format_version": 1,
        "scope": report.scope,
        "phenotype": report.phenotype,
        "flagged_negative": report.flagged_negative,
        "entries": [
            {
                "rank": rank,
                "phrase": entry.text,
                "width": entry.width,
                "position": entry.position,
                "score": entry.score,
                "note_id": entry.note_id,
            }
            for rank, entry in enumerate(report.entries, start=1)
        ],
    }


def save_report(report: SaliencyReport, tsv_path: str | Path, json_path: str | Path | None = None):
    Path(tsv_path).write_text(report_to_tsv(report), encoding="utf-8")
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(report_to_json(report), fh, sort_keys=True, indent=2)
            fh.write("\n")
