import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from postrank.data import (
    DatasetError,
    SynthConfig,
    generate_synthetic,
    key_overlap,
    load_dataset,
    make_post,
    parse_topic,
    save_dataset,
    split_dataset,
)
from postrank.metrics import RankedList, summarize


SMALL = SynthConfig(topics=6, posts_per_topic=4, l_D=6, l_I=3, d_I=4, vocab_size=30, seed=3)


def test_extreme_labels():
    cfg = SynthConfig(seed=1)
    rng = np.random.default_rng(0)
    topic_tokens = rng.choice(np.arange(2, cfg.vocab_size), size=cfg.l_D, replace=False)
    topic_image = rng.standard_normal((cfg.l_I, cfg.d_I))
    tokens, image = make_post(rng, cfg, topic_tokens, topic_image, 4)
    assert set(topic_tokens.tolist()) <= set(tokens.tolist())
    np.testing.assert_array_equal(image, topic_image)


def test_label_zero_overlap_matches_chance():
    # each of l_D uniform draws from vocab ids 2..V-1 hits one of n_keys keys
    cfg = SynthConfig(seed=1)
    expected = cfg.l_D * cfg.n_keys / (cfg.vocab_size - 2)
    rng = np.random.default_rng(5)
    topic_tokens = rng.choice(np.arange(2, cfg.vocab_size), size=cfg.l_D, replace=False)
    keys = set(topic_tokens.tolist())
    counts = []
    for _ in range(10_000):
        tokens, _ = make_post(rng, cfg, topic_tokens, np.zeros((cfg.l_I, cfg.d_I)), 0)
        counts.append(sum(t in keys for t in tokens.tolist()))
    counts = np.array(counts)
    assert abs(counts.mean() - expected) < 4 * counts.std() / np.sqrt(len(counts))


def test_overlap_and_noise_monotone_in_label():
    recs = generate_synthetic(SynthConfig(seed=2, topics=40))
    by_label = {s: [] for s in range(5)}
    for r in recs:
        for p in r.posts:
            by_label[p.label].append((key_overlap(r, p, 16), np.abs(p.image - r.topic_image).mean()))
    means = [np.mean(by_label[s], axis=0) for s in range(5)]
    assert all(means[s][0] < means[s + 1][0] for s in range(4))
    assert all(means[s][1] > means[s + 1][1] for s in range(4))


def test_oracle_rankers_see_the_signal():
    recs = generate_synthetic(SynthConfig(seed=0))
    text = [RankedList.from_scores([key_overlap(r, p, 16) for p in r.posts], r.labels) for r in recs]
    image = [RankedList.from_scores([-np.sum((p.image - r.topic_image) ** 2) for p in r.posts], r.labels) for r in recs]
    assert summarize(text)["NDCG@3"] > 0.95
    assert summarize(image)["NDCG@3"] > 0.95


def test_same_seed_same_data():
    assert generate_synthetic(SMALL) == generate_synthetic(SMALL)
    other = SynthConfig(**{**SMALL.__dict__, "seed": 4})
    assert generate_synthetic(SMALL) != generate_synthetic(other)


def test_every_topic_has_two_labels():
    for r in generate_synthetic(SynthConfig(topics=50, posts_per_topic=2, seed=9)):
        assert len(set(r.labels)) == 2


@pytest.mark.parametrize(
    "kw",
    [
        {"overlap": (0.0, 0.5, 0.5, 0.75, 1.0)},
        {"noise": (2.0, 1.5, 1.5, 0.5, 0.0)},
        {"overlap": (0.0, 0.25, 0.5)},
        {"posts_per_topic": 1},
        {"key_tokens": 17},
    ],
)
def test_invalid_synth_config(kw):
    with pytest.raises(ValueError):
        SynthConfig(**kw)


def test_round_trip_is_exact(tmp_path):
    recs = generate_synthetic(SMALL)
    path = tmp_path / "d.jsonl"
    save_dataset(recs, path, SMALL.vocab_size)
    header, back = load_dataset(path)
    assert header == {"vocab_size": 30, "l_D": 6, "l_I": 3, "d_I": 4, "version": 1}
    assert back == recs
    for a, b in zip(recs, back):
        assert a.topic_image.tobytes() == b.topic_image.tobytes()


def _write(tmp_path, lines):
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(lines) + "\n")
    return path


def _lines(tmp_path):
    path = tmp_path / "d.jsonl"
    save_dataset(generate_synthetic(SMALL), path, SMALL.vocab_size)
    return path.read_text().splitlines()


def test_label_out_of_range_rejected(tmp_path):
    lines = _lines(tmp_path)
    obj = json.loads(lines[2])
    obj["posts"][0]["label"] = 7
    lines[2] = json.dumps(obj)
    with pytest.raises(DatasetError, match="line 3.*label 7"):
        load_dataset(_write(tmp_path, lines))


def test_truncated_line_names_line(tmp_path):
    lines = _lines(tmp_path)
    lines[-1] = lines[-1][: len(lines[-1]) // 2]
    with pytest.raises(DatasetError, match=f"line {len(lines)}"):
        load_dataset(_write(tmp_path, lines))


def test_wrong_token_count_rejected(tmp_path):
    lines = _lines(tmp_path)
    obj = json.loads(lines[1])
    obj["topic_tokens"] = obj["topic_tokens"][:-1]
    lines[1] = json.dumps(obj)
    with pytest.raises(DatasetError, match="line 2"):
        load_dataset(_write(tmp_path, lines))


def test_unlabeled_topic_parse():
    header = {"vocab_size": 5, "l_D": 2, "l_I": 1, "d_I": 2}
    obj = {"id": "x", "topic_tokens": [2, 3], "topic_image": [0.0, 1.0], "posts": [{"id": "a", "tokens": [0, 4], "image": [1.0, 1.0]}]}
    with pytest.raises(DatasetError):
        parse_topic(obj, header)
    rec = parse_topic(obj, header, labeled=False)
    assert rec.post_ids() == ["a"]


def test_split_sizes():
    recs = generate_synthetic(SynthConfig(topics=100, posts_per_topic=2, seed=0))
    sp = split_dataset(recs, 0)
    assert (len(sp.train), len(sp.val), len(sp.test)) == (64, 16, 20)
    assert split_dataset(recs, 0) == sp
    assert split_dataset(recs, 1) != sp


def test_split_needs_five_topics():
    with pytest.raises(DatasetError):
        split_dataset(generate_synthetic(SynthConfig(topics=4, posts_per_topic=2)), 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 60), st.integers(0, 10_000))
def test_split_is_partition(n, seed):
    recs = generate_synthetic(SynthConfig(topics=n, posts_per_topic=2, l_D=2, l_I=1, d_I=1, vocab_size=10, seed=1))
    sp = split_dataset(recs, seed)
    ids = list(sp.train) + list(sp.val) + list(sp.test)
    assert sorted(ids) == list(range(n))
