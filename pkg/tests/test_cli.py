import json
import time

import numpy as np
import pytest

from postrank.checkpoint import save_checkpoint
from postrank.cli import main
from postrank.config import build_config
from postrank.data import generate_synthetic, load_dataset, split_dataset
from postrank.metrics import random_ranker_baseline
from postrank.model import init_params

MICRO_CFG = """\
vocab_size = 30
l_D = 6
l_I = 3
d_I = 4
topics = 5
posts_per_topic = 4
embed_dim = 8
text_dim = 6
d_c = 8
epochs = 2
"""


@pytest.fixture
def micro(tmp_path):
    cfg = tmp_path / "micro.cfg"
    cfg.write_text(MICRO_CFG)
    data = tmp_path / "micro.jsonl"
    assert main(["gen-data", "--config", str(cfg), "--seed", "1", "--out", str(data)]) == 0
    return cfg, data


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_gen_data_default(tmp_path, capsys):
    out = tmp_path / "d.jsonl"
    code, stdout, stderr = run(capsys, "gen-data", "--out", str(out))
    assert code == 0
    header, recs = load_dataset(out)
    assert header["version"] == 1 and len(recs) == 125
    assert "# effective config" in stderr
    assert stdout.splitlines()[1].split()[:3] == ["all", "125", "1000"]


def test_gen_data_counts_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    code, stdout, _ = run(capsys, "gen-data", "--topics", "100", "--posts", "8", "--seed", "3", "--out", str(a))
    assert code == 0
    rows = {line.split()[0]: line.split()[1:3] for line in stdout.splitlines()[1:]}
    assert rows == {"all": ["100", "800"], "train": ["64", "512"], "val": ["16", "128"], "test": ["20", "160"]}
    run(capsys, "gen-data", "--topics", "100", "--posts", "8", "--seed", "3", "--out", str(b))
    assert a.read_bytes() == b.read_bytes()


def test_invalid_config_writes_nothing(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("overlap = [0.5, 0.25, 0.5, 0.75, 1.0]\n")
    out = tmp_path / "d.jsonl"
    code, _, stderr = run(capsys, "gen-data", "--config", str(cfg), "--out", str(out))
    assert code == 2 and "overlap" in stderr
    assert not out.exists()
    code, _, _ = run(capsys, "train", "--data", str(out), "--checkpoint", str(tmp_path / "c.bin"), "--epochs", "0")
    assert code == 2
    assert not (tmp_path / "c.bin").exists()


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as e:
        main(["train", "--ablate", "wo-everything"])
    assert e.value.code == 2


def test_train_eval_rank(micro, tmp_path, capsys):
    cfg, data = micro
    ckpt, log = tmp_path / "m.bin", tmp_path / "log.csv"
    t0 = time.perf_counter()
    code, _, _ = run(capsys, "train", "--config", str(cfg), "--data", str(data), "--checkpoint", str(ckpt), "--log", str(log), "--seed", "1")
    assert code == 0 and time.perf_counter() - t0 < 30
    lines = log.read_text().splitlines()
    assert lines[0] == "epoch,loss,MAP,NDCG@3,NDCG@5"
    assert [line.split(",")[0] for line in lines[1:]] == ["1", "2"]

    code, out, _ = run(capsys, "eval", "--checkpoint", str(ckpt), "--data", str(data), "--split", "test")
    header, values = out.splitlines()
    assert code == 0 and header == "MAP\tNDCG@3\tNDCG@5"
    test_vals = [float(x) for x in values.split("\t")]
    assert all(0 <= v <= 100 for v in test_vals)
    _, out, _ = run(capsys, "eval", "--checkpoint", str(ckpt), "--data", str(data), "--split", "train")
    assert out.splitlines()[1] != values

    _, recs = load_dataset(data)
    topic = json.loads(data.read_text().splitlines()[1])
    for p in topic["posts"]:
        del p["label"]
    tpath = tmp_path / "topic.json"
    tpath.write_text(json.dumps(topic))
    code, out, _ = run(capsys, "rank", str(tpath), "--checkpoint", str(ckpt))
    assert code == 0
    rows = [line.split("\t") for line in out.splitlines()]
    assert sorted(r[0] for r in rows) == sorted(p["id"] for p in topic["posts"])
    scores = [float(r[1]) for r in rows]
    assert scores == sorted(scores, reverse=True)
    assert run(capsys, "rank", str(tpath), "--checkpoint", str(ckpt))[1] == out

    topic["posts"] = topic["posts"][:1]
    tpath.write_text(json.dumps(topic))
    assert len(run(capsys, "rank", str(tpath), "--checkpoint", str(ckpt))[1].splitlines()) == 1


def test_train_with_ablation_flag(micro, tmp_path, capsys):
    cfg, data = micro
    ckpt = tmp_path / "wo.bin"
    code, _, stderr = run(capsys, "train", "--config", str(cfg), "--data", str(data), "--checkpoint", str(ckpt), "--ablate", "wo-evidence", "--epochs", "1")
    assert code == 0 and 'ablate = "wo-evidence"' in stderr
    from postrank.checkpoint import load_checkpoint

    assert load_checkpoint(ckpt).mask.blocks() == ["semantic"]


def test_train_without_pairs(tmp_path, capsys):
    data = tmp_path / "flat.jsonl"
    lines = []
    header = {"vocab_size": 10, "l_D": 2, "l_I": 1, "d_I": 2, "version": 1}
    lines.append(json.dumps(header))
    for t in range(5):
        posts = [{"id": f"{t}-{j}", "tokens": [2, 3], "image": [0.0, 0.0], "label": 2} for j in range(2)]
        lines.append(json.dumps({"id": t, "topic_tokens": [2, 3], "topic_image": [0.0, 0.0], "posts": posts}))
    data.write_text("\n".join(lines) + "\n")
    code, _, stderr = run(capsys, "train", "--data", str(data), "--checkpoint", str(tmp_path / "c.bin"), "--epochs", "1")
    assert code == 2 and "no sampleable pairs" in stderr


def test_ablate_rows_and_full_row_consistency(micro, tmp_path, capsys):
    cfg, data = micro
    code, out, _ = run(capsys, "ablate", "--config", str(cfg), "--data", str(data), "--seed", "1", "--epochs", "1")
    rows = out.splitlines()
    assert code == 0 and len(rows) == 8
    assert rows[1].startswith("MFTRR\t")
    ckpt = tmp_path / "full.bin"
    run(capsys, "train", "--config", str(cfg), "--data", str(data), "--checkpoint", str(ckpt), "--seed", "1", "--epochs", "1")
    _, ev, _ = run(capsys, "eval", "--checkpoint", str(ckpt), "--data", str(data))
    assert rows[1].split("\t", 1)[1] == ev.splitlines()[1]


def test_grad_check_command(capsys):
    code, out, _ = run(capsys, "grad-check")
    assert code == 0
    assert "PASS\tevidence.sig" in out and "PASS\tsemantic.gate_vw" in out
    assert "worst: " in out


def test_untrained_model_is_near_random(tmp_path, capsys):
    cfg = build_config(None, {"embed_dim": 16, "text_dim": 16, "d_c": 16})
    recs = generate_synthetic(cfg.synth())
    data = tmp_path / "d.jsonl"
    from postrank.data import save_dataset

    save_dataset(recs, data, cfg.vocab_size)
    ckpt = tmp_path / "init.bin"
    save_checkpoint(init_params(cfg.model(), 0), ckpt)
    _, out, _ = run(capsys, "eval", "--checkpoint", str(ckpt), "--data", str(data))
    ndcg3 = float(out.splitlines()[1].split("\t")[1]) / 100
    test = split_dataset(recs, 0).select(recs, "test")
    baseline = random_ranker_baseline([r.labels for r in test], 3)
    assert abs(ndcg3 - baseline) < 0.2
    assert np.isfinite(ndcg3)
