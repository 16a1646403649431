"""MAP and NDCG@k over per-topic ranked post lists."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MAX_LABEL = 4


@dataclass(frozen=True)
class RankedList:
    """Posts of one topic in descending predicted-score order (stable ties)."""

    order: tuple[int, ...]  # original post indices, best first
    scores: tuple[float, ...]  # predicted scores, indexed like the original posts
    labels: tuple[int, ...]  # ground-truth labels, indexed like the original posts
    post_ids: tuple | None = None

    def __post_init__(self):
        if not self.labels:
            raise ValueError("RankedList needs at least one post")
        if len(self.scores) != len(self.labels) or sorted(self.order) != list(range(len(self.labels))):
            raise ValueError("order, scores and labels disagree in length")
        for lab in self.labels:
            if int(lab) != lab or not 0 <= lab <= MAX_LABEL:
                raise ValueError(f"label {lab} outside 0..{MAX_LABEL}")

    @classmethod
    def from_scores(cls, scores: Sequence[float], labels: Sequence[int], post_ids=None) -> "RankedList":
        s = np.asarray(scores, dtype=np.float64)
        order = np.argsort(-s, kind="stable")
        ids = None if post_ids is None else tuple(post_ids)
        return cls(tuple(int(i) for i in order), tuple(float(x) for x in s), tuple(int(x) for x in labels), ids)

    @property
    def ranked_labels(self) -> list[int]:
        return [self.labels[i] for i in self.order]

    def __len__(self) -> int:
        return len(self.labels)


def _labels_of(rl) -> list[int]:
    return rl.ranked_labels if isinstance(rl, RankedList) else list(rl)


def dcg_at_k(ranked_labels: Sequence[int], k: int) -> float:
    return sum((2.0 ** lab - 1.0) / math.log2(i + 2) for i, lab in enumerate(ranked_labels[:k]))


def ndcg_at_k(rl, k: int) -> float:
    """NDCG@k with gain 2^label - 1; 1.0 when no post has a positive label.

    ``rl`` is a RankedList or a sequence of labels already in predicted order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    labels = _labels_of(rl)
    ideal = dcg_at_k(sorted(labels, reverse=True), k)
    if ideal == 0:
        return 1.0
    return dcg_at_k(labels, k) / ideal


def average_precision(rl, rel_threshold: int = 3) -> float:
    rel = [lab >= rel_threshold for lab in _labels_of(rl)]
    hits, total = 0, 0.0
    for rank, r in enumerate(rel, start=1):
        if r:
            hits += 1
            total += hits / rank
    return total / hits if hits else 0.0


def mean_average_precision(lists: Iterable, rel_threshold: int = 3) -> float:
    if not 1 <= rel_threshold <= MAX_LABEL:
        raise ValueError(f"relevance threshold must be in 1..{MAX_LABEL}")
    aps = [average_precision(rl, rel_threshold) for rl in lists]
    if not aps:
        raise ValueError("mean_average_precision of an empty collection")
    return sum(aps) / len(aps)


def summarize(lists: Sequence, rel_threshold: int = 3) -> dict[str, float]:
    lists = list(lists)
    return {
        "MAP": mean_average_precision(lists, rel_threshold),
        "NDCG@3": float(np.mean([ndcg_at_k(rl, 3) for rl in lists])),
        "NDCG@5": float(np.mean([ndcg_at_k(rl, 5) for rl in lists])),
    }


def format_report(m: dict[str, float]) -> str:
    """Tab-separated MAP, NDCG@3, NDCG@5 as percentages with two decimals."""
    return "\t".join(f"{100 * m[k]:.2f}" for k in ("MAP", "NDCG@3", "NDCG@5"))


def random_ranker_baseline(label_lists: Sequence[Sequence[int]], k: int = 3, draws: int = 2000, rng=None) -> float:
    """Monte-Carlo mean NDCG@k of uniformly random orderings of each list."""
    rng = np.random.default_rng(0) if rng is None else rng
    vals = []
    for labels in label_lists:
        labels = np.asarray(labels)
        total = 0.0
        for _ in range(draws):
            total += ndcg_at_k(labels[rng.permutation(len(labels))].tolist(), k)
        vals.append(total / draws)
    return float(np.mean(vals))
