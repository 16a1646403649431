"""Synthetic topic/post corpora with a planted quality signal, JSONL I/O, splits.

A post with label ``s`` copies a fraction ``overlap[s]`` of its topic's key
tokens and gets image features ``topic + noise[s] * N(0, 1)``, so quality is
visible only through how the post relates to its topic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoders import PAD, UNK
from .metrics import MAX_LABEL
from .model import Batch
from .rng import stream

FORMAT_VERSION = 1


class DatasetError(ValueError):
    pass


@dataclass
class Post:
    tokens: np.ndarray  # (l_D,) int
    image: np.ndarray  # (l_I, d_I)
    label: int
    id: str | None = None


@dataclass
class TopicPostRecord:
    id: object
    topic_tokens: np.ndarray
    topic_image: np.ndarray
    posts: list[Post] = field(default_factory=list)

    @property
    def labels(self) -> list[int]:
        return [p.label for p in self.posts]

    def post_ids(self) -> list:
        return [p.id if p.id is not None else j for j, p in enumerate(self.posts)]

    def batch(self, indices: Sequence[int] | None = None) -> Batch:
        """All (or selected) posts paired with this topic."""
        idx = range(len(self.posts)) if indices is None else indices
        n = len(idx)
        return Batch(
            np.repeat(self.topic_tokens[None], n, axis=0),
            np.repeat(self.topic_image[None], n, axis=0),
            np.stack([self.posts[j].tokens for j in idx]),
            np.stack([self.posts[j].image for j in idx]),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, TopicPostRecord):
            return NotImplemented
        if self.id != other.id or len(self.posts) != len(other.posts):
            return False
        if not (np.array_equal(self.topic_tokens, other.topic_tokens) and np.array_equal(self.topic_image, other.topic_image)):
            return False
        return all(
            a.label == b.label and a.id == b.id and np.array_equal(a.tokens, b.tokens) and np.array_equal(a.image, b.image)
            for a, b in zip(self.posts, other.posts)
        )


@dataclass(frozen=True)
class SynthConfig:
    vocab_size: int = 100
    l_D: int = 16
    l_I: int = 8
    d_I: int = 16
    topics: int = 125
    posts_per_topic: int = 8
    key_tokens: int | None = None  # defaults to l_D
    overlap: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    noise: tuple[float, ...] = (2.0, 1.5, 1.0, 0.5, 0.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "overlap", tuple(float(x) for x in self.overlap))
        object.__setattr__(self, "noise", tuple(float(x) for x in self.noise))
        validate_synth(self)

    @property
    def n_keys(self) -> int:
        return self.l_D if self.key_tokens is None else self.key_tokens


def validate_synth(cfg: SynthConfig) -> None:
    levels = MAX_LABEL + 1
    if len(cfg.overlap) != levels or len(cfg.noise) != levels:
        raise ValueError(f"overlap and noise need one value per label 0..{MAX_LABEL}")
    if any(b <= a for a, b in zip(cfg.overlap, cfg.overlap[1:])):
        raise ValueError("overlap rates must be strictly increasing in label")
    if any(b >= a for a, b in zip(cfg.noise, cfg.noise[1:])):
        raise ValueError("noise scales must be strictly decreasing in label")
    if not all(0.0 <= x <= 1.0 for x in cfg.overlap) or min(cfg.noise) < 0:
        raise ValueError("overlap must lie in [0, 1] and noise must be non-negative")
    if cfg.posts_per_topic < 2:
        raise ValueError("every topic needs at least 2 posts")
    if cfg.topics < 1:
        raise ValueError("topics must be positive")
    if not 1 <= cfg.n_keys <= cfg.l_D:
        raise ValueError("key_tokens must be in 1..l_D")
    if cfg.vocab_size - 2 < cfg.n_keys:
        raise ValueError("vocabulary too small for the key-token count")
    for name in ("l_D", "l_I", "d_I"):
        if getattr(cfg, name) < 1:
            raise ValueError(f"{name} must be positive")


def _draw_labels(rng, n: int) -> np.ndarray:
    # uniform over levels, redrawn until at least two distinct labels appear
    while True:
        labels = rng.integers(0, MAX_LABEL + 1, size=n)
        if len(set(labels.tolist())) >= 2:
            return labels


def make_post(rng, cfg: SynthConfig, topic_tokens: np.ndarray, topic_image: np.ndarray, label: int) -> tuple[np.ndarray, np.ndarray]:
    """Copied key tokens keep their topic positions; every other slot is random."""
    n_keys = cfg.n_keys
    n_copy = int(round(cfg.overlap[label] * n_keys))
    tokens = rng.integers(2, cfg.vocab_size, size=cfg.l_D).astype(np.int64)
    pos = rng.choice(n_keys, size=n_copy, replace=False)
    tokens[pos] = topic_tokens[pos]
    image = topic_image + cfg.noise[label] * rng.standard_normal(topic_image.shape)
    return tokens, image


def generate_synthetic(cfg: SynthConfig) -> list[TopicPostRecord]:
    rng = stream(cfg.seed, "synth")
    records = []
    for t in range(cfg.topics):
        keys = rng.choice(np.arange(2, cfg.vocab_size), size=cfg.n_keys, replace=False).astype(np.int64)
        filler = rng.integers(2, cfg.vocab_size, size=cfg.l_D - cfg.n_keys)
        topic_tokens = np.concatenate([keys, filler]).astype(np.int64)
        topic_image = rng.standard_normal((cfg.l_I, cfg.d_I))
        posts = []
        for j, label in enumerate(_draw_labels(rng, cfg.posts_per_topic)):
            tokens, image = make_post(rng, cfg, topic_tokens, topic_image, int(label))
            posts.append(Post(tokens, image, int(label), f"{t}-{j}"))
        records.append(TopicPostRecord(t, topic_tokens, topic_image, posts))
    return records


def key_overlap(record: TopicPostRecord, post: Post, n_keys: int) -> int:
    keys = set(record.topic_tokens[:n_keys].tolist())
    return sum(1 for tok in post.tokens.tolist() if tok in keys)


# --------------------------------------------------------------------------
# JSON Lines I/O
# --------------------------------------------------------------------------


def _header(records: Sequence[TopicPostRecord], vocab_size: int) -> dict:
    first = records[0]
    l_I, d_I = first.topic_image.shape
    return {"vocab_size": vocab_size, "l_D": len(first.topic_tokens), "l_I": l_I, "d_I": d_I, "version": FORMAT_VERSION}


def _record_json(r: TopicPostRecord) -> dict:
    return {
        "id": r.id,
        "topic_tokens": r.topic_tokens.tolist(),
        "topic_image": r.topic_image.reshape(-1).tolist(),
        "posts": [
            {"id": p.id, "tokens": p.tokens.tolist(), "image": p.image.reshape(-1).tolist(), "label": p.label}
            for p in r.posts
        ],
    }


def save_dataset(records: Sequence[TopicPostRecord], path, vocab_size: int) -> None:
    if not records:
        raise DatasetError("refusing to write an empty dataset")
    lines = [json.dumps(_header(records, vocab_size), sort_keys=True)]
    lines += [json.dumps(_record_json(r)) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _tokens(raw, l_D: int, vocab_size: int, where: str) -> np.ndarray:
    if not isinstance(raw, list) or len(raw) != l_D or not all(isinstance(t, int) for t in raw):
        raise DatasetError(f"{where}: expected {l_D} integer token ids")
    arr = np.asarray(raw, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= vocab_size):
        raise DatasetError(f"{where}: token id outside vocabulary of size {vocab_size}")
    return arr


def _image(raw, l_I: int, d_I: int, where: str) -> np.ndarray:
    if not isinstance(raw, list) or len(raw) != l_I * d_I:
        raise DatasetError(f"{where}: expected {l_I * d_I} image floats")
    arr = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DatasetError(f"{where}: non-finite image value")
    return arr.reshape(l_I, d_I)


def parse_topic(obj: dict, header: dict, where: str = "topic", labeled: bool = True) -> TopicPostRecord:
    """``labeled=False`` accepts posts without a label (they get 0), for ranking unseen topics."""
    l_D, l_I, d_I, vocab = header["l_D"], header["l_I"], header["d_I"], header["vocab_size"]
    try:
        posts = []
        for j, p in enumerate(obj["posts"]):
            label = p["label"] if labeled or "label" in p else 0
            if not isinstance(label, int) or isinstance(label, bool) or not 0 <= label <= MAX_LABEL:
                raise DatasetError(f"{where}, post {j}: label {label!r} outside 0..{MAX_LABEL}")
            posts.append(
                Post(
                    _tokens(p["tokens"], l_D, vocab, f"{where}, post {j}"),
                    _image(p["image"], l_I, d_I, f"{where}, post {j}"),
                    label,
                    p.get("id"),
                )
            )
        rec = TopicPostRecord(
            obj["id"],
            _tokens(obj["topic_tokens"], l_D, vocab, where),
            _image(obj["topic_image"], l_I, d_I, where),
            posts,
        )
    except KeyError as e:
        raise DatasetError(f"{where}: missing key {e}") from None
    except TypeError as e:
        raise DatasetError(f"{where}: malformed record ({e})") from None
    if not posts:
        raise DatasetError(f"{where}: topic has no posts")
    return rec


def load_dataset(path) -> tuple[dict, list[TopicPostRecord]]:
    """Returns (header, records). Errors name the offending 1-based line."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetError(f"{path}: empty dataset file")
    objs = []
    for no, line in enumerate(lines, start=1):
        try:
            objs.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise DatasetError(f"{path}: line {no}: malformed JSON ({e.msg})") from None
    header = objs[0]
    required = {"vocab_size", "l_D", "l_I", "d_I", "version"}
    if not isinstance(header, dict) or not required <= header.keys():
        raise DatasetError(f"{path}: line 1: header must carry {sorted(required)}")
    if header["version"] != FORMAT_VERSION:
        raise DatasetError(f"{path}: line 1: unsupported version {header['version']}")
    records = [parse_topic(o, header, f"{path}: line {no}") for no, o in enumerate(objs[1:], start=2)]
    return header, records


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    val: tuple
    test: tuple

    def select(self, records: Sequence[TopicPostRecord], name: str) -> list[TopicPostRecord]:
        ids = set(getattr(self, name))
        return [r for r in records if r.id in ids]


def split_dataset(records: Sequence[TopicPostRecord], seed: int) -> DatasetSplit:
    """Shuffle topics, hold out 20% for test, then 20% of the rest for validation."""
    n = len(records)
    if n < 5:
        raise DatasetError(f"need at least 5 topics to split, got {n}")
    ids = [r.id for r in records]
    if len(set(map(repr, ids))) != n:
        raise DatasetError("topic ids must be unique")
    perm = stream(seed, "split").permutation(n)
    shuffled = [ids[i] for i in perm]
    n_test = int(round(0.2 * n))
    n_val = int(round(0.2 * (n - n_test)))
    test = shuffled[:n_test]
    val = shuffled[n_test : n_test + n_val]
    train = shuffled[n_test + n_val :]
    return DatasetSplit(tuple(train), tuple(val), tuple(test))


__all__ = [
    "DatasetError",
    "DatasetSplit",
    "PAD",
    "Post",
    "SynthConfig",
    "TopicPostRecord",
    "UNK",
    "generate_synthetic",
    "load_dataset",
    "save_dataset",
    "split_dataset",
]
