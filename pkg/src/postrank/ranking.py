"""Pair sampling, Adam, the pairwise-hinge training loop and list ranking."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .data import TopicPostRecord
from .metrics import RankedList, summarize
from .model import FULL, AblationMask, Batch, ModelConfig, ModelParams, init_params, pairwise_hinge_loss, score_batch
from .rng import stream

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    gamma: float = 1.0
    lr: float = 1e-3
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rel_threshold: int = 3

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam moments")


def topic_pairs(labels: Sequence[int]) -> list[tuple[int, int]]:
    """Every (better, worse) post pair with strictly different labels."""
    pairs = []
    for i in range(len(labels)):
        for j in range(i + 1, len(labels)):
            if labels[i] > labels[j]:
                pairs.append((i, j))
            elif labels[j] > labels[i]:
                pairs.append((j, i))
    return pairs


def sample_pairs(records: Sequence[TopicPostRecord], rng: np.random.Generator | None = None) -> list[tuple[int, int, int]]:
    """(topic index, positive post, negative post), enumerated then shuffled by ``rng``."""
    out = [(t, i, j) for t, rec in enumerate(records) for i, j in topic_pairs(rec.labels)]
    if rng is not None and out:
        out = [out[k] for k in rng.permutation(len(out))]
    return out


def pair_batch(records: Sequence[TopicPostRecord], pairs: Sequence[tuple[int, int, int]]) -> Batch:
    """Positives first, then negatives: score[:n] vs score[n:]."""
    tops = [records[t] for t, _, _ in pairs] * 2
    posts = [records[t].posts[i] for t, i, _ in pairs] + [records[t].posts[j] for t, _, j in pairs]
    return Batch(
        np.stack([r.topic_tokens for r in tops]),
        np.stack([r.topic_image for r in tops]),
        np.stack([p.tokens for p in posts]),
        np.stack([p.image for p in posts]),
    )


class Adam:
    def __init__(self, params: dict[str, nx.Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros(p.shape) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def batch_loss(params: ModelParams, records, pairs, gamma: float) -> nx.Tensor:
    s = score_batch(params, pair_batch(records, pairs))
    n = len(pairs)
    pos = nx.slice_axis(s, 0, n, axis=0)
    neg = nx.slice_axis(s, n, 2 * n, axis=0)
    return nx.sum_all(pairwise_hinge_loss(pos, neg, gamma))


def rank_posts(topic: TopicPostRecord, params: ModelParams, mask: AblationMask | None = None) -> RankedList:
    scores = score_batch(params, topic.batch(), mask).data
    return RankedList.from_scores(scores, topic.labels, topic.post_ids())


def evaluate(records: Sequence[TopicPostRecord], params: ModelParams, rel_threshold: int = 3) -> dict[str, float]:
    return summarize([rank_posts(r, params) for r in records], rel_threshold)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    MAP: float
    ndcg3: float
    ndcg5: float

    def row(self) -> list:
        return [self.epoch, self.loss, self.MAP, self.ndcg3, self.ndcg5]


LOG_COLUMNS = ["epoch", "loss", "MAP", "NDCG@3", "NDCG@5"]


@dataclass
class TrainResult:
    params: ModelParams  # best epoch by validation NDCG@3
    log: list[EpochLog]
    best_epoch: int
    final_params: ModelParams


def train(
    train_records: Sequence[TopicPostRecord],
    val_records: Sequence[TopicPostRecord],
    model_config: ModelConfig,
    config: TrainConfig,
    mask: AblationMask = FULL,
    params: ModelParams | None = None,
) -> TrainResult:
    """Adam on mini-batches of summed pairwise hinge losses, fixed epoch count."""
    pairs = sample_pairs(train_records)
    if not pairs:
        raise TrainingError("no sampleable pairs: every training topic has uniform labels")
    params = init_params(model_config, config.seed, mask) if params is None else params
    active = {k: params[k] for k in params.active_paths()}
    opt = Adam(active, config.lr, config.beta1, config.beta2, config.eps)
    shuffle = stream(config.seed, "shuffle")
    history: list[EpochLog] = []
    best, best_epoch, best_score = None, 0, -math.inf
    for epoch in range(1, config.epochs + 1):
        epoch_pairs = sample_pairs(train_records, shuffle)
        total = 0.0
        for start in range(0, len(epoch_pairs), config.batch_size):
            chunk = epoch_pairs[start : start + config.batch_size]
            opt.zero_grad()
            with nx.GradTape() as tape:
                loss = batch_loss(params, train_records, chunk, config.gamma)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, pairs {chunk}")
            tape.backward(loss)
            opt.step()
            total += value
        metrics = evaluate(val_records, params, config.rel_threshold) if val_records else {"MAP": float("nan"), "NDCG@3": float("nan"), "NDCG@5": float("nan")}
        entry = EpochLog(epoch, total / len(epoch_pairs), metrics["MAP"], metrics["NDCG@3"], metrics["NDCG@5"])
        history.append(entry)
        log.info("epoch %d loss %.4f MAP %.4f NDCG@3 %.4f NDCG@5 %.4f", *entry.row())
        if best is None or entry.ndcg3 > best_score:
            best, best_epoch, best_score = params.copy(), epoch, entry.ndcg3
    return TrainResult(best, history, best_epoch, params)
