"""``postrank`` command line: gen-data, train, eval, rank, ablate, grad-check.

Exit codes: 0 success, 1 verification failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import numerics as nx
from .checkpoint import CheckpointError, dumps, load_checkpoint
from .config import ConfigError, RunConfig, build_config
from .data import DatasetError, generate_synthetic, load_dataset, parse_topic, save_dataset, split_dataset
from .metrics import format_report
from .model import VARIANT_LABELS, VARIANTS, Batch, ModelConfig, init_params, pairwise_hinge_loss, score_batch
from .ranking import LOG_COLUMNS, TrainingError, evaluate, train
from .rng import stream

log = logging.getLogger("postrank")

SPLITS = ("train", "val", "test")
GRAD_TOL = 1e-4


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _overrides(args, names) -> dict:
    out = {}
    for name in names:
        v = getattr(args, name, None)
        if v is not None:
            out[{"posts": "posts_per_topic"}.get(name, name)] = v
    return out


def _config(args, names=("seed", "topics", "posts", "epochs", "lr", "ablate")) -> RunConfig:
    return build_config(args.config, _overrides(args, names))


def echo_config(cfg: RunConfig, out=None) -> None:
    out = out or sys.stderr
    out.write("# effective config\n")
    out.write("".join(f"#   {line}\n" for line in cfg.to_text().splitlines()))


def _with_header(cfg: RunConfig, header: dict) -> RunConfig:
    """Dataset dimensions win over config dimensions."""
    return replace(cfg, vocab_size=header["vocab_size"], l_D=header["l_D"], l_I=header["l_I"], d_I=header["d_I"]).validate()


def split_records(records, seed: int) -> dict:
    sp = split_dataset(records, seed)
    return {name: sp.select(records, name) for name in SPLITS}


def count_table(parts: dict) -> str:
    """Topic and post counts per split, one row each."""
    rows = [("split", "#topics", "#posts", "posts/topic")]
    for name, recs in parts.items():
        n_posts = sum(len(r.posts) for r in recs)
        rows.append((name, str(len(recs)), str(n_posts), f"{n_posts / max(1, len(recs)):.2f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def epoch_log_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for e in history:
        w.writerow([e.epoch] + [repr(float(x)) for x in e.row()[1:]])
    return buf.getvalue()


def fit(cfg: RunConfig, records) -> tuple:
    parts = split_records(records, cfg.seed)
    result = train(parts["train"], parts["val"], cfg.model(), cfg.train(), VARIANTS[cfg.ablate])
    return result, parts


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    echo_config(cfg)
    if not args.out:
        raise UsageError("gen-data needs --out")
    records = generate_synthetic(cfg.synth())
    save_dataset(records, args.out, cfg.vocab_size)
    parts = {"all": records, **split_records(records, cfg.seed)}
    print(count_table(parts))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    if not args.data or not args.checkpoint:
        raise UsageError("train needs --data and --checkpoint")
    header, records = load_dataset(args.data)
    cfg = _with_header(cfg, header)
    echo_config(cfg)
    t0 = time.perf_counter()
    result, parts = fit(cfg, records)
    log.info("trained in %.1f s, best epoch %d", time.perf_counter() - t0, result.best_epoch)
    Path(args.checkpoint).write_bytes(dumps(result.params))
    log_path = args.log or str(args.checkpoint) + ".log.csv"
    Path(log_path).write_text(epoch_log_csv(result.log), encoding="utf-8")
    print(count_table(parts))
    print(f"best epoch {result.best_epoch}; checkpoint {args.checkpoint}; log {log_path}")
    return 0


def cmd_eval(args) -> int:
    if not args.data or not args.checkpoint:
        raise UsageError("eval needs --data and --checkpoint")
    params = load_checkpoint(args.checkpoint)
    _, records = load_dataset(args.data)
    seed = args.seed if args.seed is not None else (params.seed or 0)
    subset = split_records(records, seed)[args.split]
    if not subset:
        raise UsageError(f"split {args.split!r} is empty")
    cfg = build_config(args.config, {"seed": seed})
    print("MAP\tNDCG@3\tNDCG@5")
    print(format_report(evaluate(subset, params, cfg.rel_threshold)))
    return 0


def _read_topic(path: str) -> dict:
    text = sys.stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: malformed JSON ({e.msg})") from None


def cmd_rank(args) -> int:
    if not args.checkpoint:
        raise UsageError("rank needs --checkpoint")
    params = load_checkpoint(args.checkpoint)
    c = params.config
    header = {"vocab_size": c.vocab_size, "l_D": c.l_D, "l_I": c.l_I, "d_I": c.d_I}
    topic = parse_topic(_read_topic(args.topic), header, str(args.topic), labeled=False)
    scores = score_batch(params, topic.batch()).data
    ids = topic.post_ids()
    for j in np.argsort(-scores, kind="stable"):
        print(f"{ids[j]}\t{scores[j]:.10f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args, ("seed", "epochs", "lr"))
    if not args.data:
        raise UsageError("ablate needs --data")
    header, records = load_dataset(args.data)
    cfg = _with_header(cfg, header)
    echo_config(cfg)
    print("variant\tMAP\tNDCG@3\tNDCG@5")
    for name, metrics, _ in ablation_rows(cfg, records):
        print(f"{VARIANT_LABELS[name]}\t{format_report(metrics)}", flush=True)
    return 0


def ablation_rows(cfg: RunConfig, records, variants=tuple(VARIANTS)):
    """Yield (variant, test metrics, training seconds), full model first."""
    for name in variants:
        t0 = time.perf_counter()
        result, parts = fit(replace(cfg, ablate=name), records)
        seconds = time.perf_counter() - t0
        yield name, evaluate(parts["test"], result.params, cfg.rel_threshold), seconds


MICRO = dict(vocab_size=12, embed_dim=4, text_dim=6, l_D=2, l_I=2, d_I=3, d_c=8, graph_layers=2)


def micro_batch(config: ModelConfig, seed: int, topics: int = 2, posts: int = 2) -> tuple[Batch, list]:
    """Tiny random batch: row i of the first half and row i of the second half share a topic."""
    rng = stream(seed, "grad-check")
    n = topics * posts
    tt = rng.integers(2, config.vocab_size, size=(topics, config.l_D))
    ti = rng.standard_normal((topics, config.l_I, config.d_I))
    owner = np.tile(np.arange(topics), posts)
    batch = Batch(
        tt[owner],
        ti[owner],
        rng.integers(0, config.vocab_size, size=(n, config.l_D)),
        rng.standard_normal((n, config.l_I, config.d_I)),
    )
    return batch, owner.tolist()


def parameter_group(path: str) -> str:
    parts = path.split(".")
    return ".".join(parts[:2]) if len(parts) > 2 else parts[0] if parts[0] == "head" else path


def grad_check_report(config: ModelConfig, seed: int, h: float = 1e-5) -> tuple[dict[str, float], dict[str, float]]:
    """Per-path and per-group max relative error of the hinge loss gradient."""
    params = init_params(config, seed)
    batch, _ = micro_batch(config, seed)
    half = len(batch) // 2

    def loss():
        s = score_batch(params, batch)
        pos = nx.slice_axis(s, 0, half, axis=0)
        neg = nx.slice_axis(s, half, 2 * half, axis=0)
        return nx.sum_all(pairwise_hinge_loss(pos, neg, 1.0))

    margins = 1.0 - score_batch(params, batch).data[:half] + score_batch(params, batch).data[half:]
    if np.min(np.abs(margins)) < 10 * h:
        log.warning("a hinge margin sits within %g of its kink; finite differences may disagree", 10 * h)
    per_path = nx.grad_check_params(loss, dict(params.items()), h)
    groups: dict[str, float] = {}
    for path, err in per_path.items():
        g = parameter_group(path)
        groups[g] = max(groups.get(g, 0.0), err)
    return per_path, groups


def cmd_grad_check(args) -> int:
    overrides = {"seed": args.seed} if args.seed is not None else {}
    cfg = build_config(args.config, overrides) if args.config else None
    micro = dict(MICRO)
    if cfg is not None:
        micro.update(vocab_size=cfg.vocab_size, l_D=cfg.l_D, l_I=cfg.l_I, d_I=cfg.d_I, d_c=cfg.d_c, graph_layers=cfg.graph_layers)
    config = ModelConfig(**micro)
    seed = args.seed or 0
    print(f"micro model: {json.dumps(micro, sort_keys=True)}")
    t0 = time.perf_counter()
    per_path, groups = grad_check_report(config, seed)
    ok = True
    for g, err in groups.items():
        status = "PASS" if err < GRAD_TOL else "FAIL"
        ok &= status == "PASS"
        print(f"{status}\t{g}\t{err:.3e}")
    worst = max(per_path, key=per_path.get)
    print(f"worst: {worst} {per_path[worst]:.3e} ({time.perf_counter() - t0:.1f} s)")
    print("grad-check passed" if ok else f"grad-check FAILED (tolerance {GRAD_TOL:g})")
    return 0 if ok else 1


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file (JSON values)")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="postrank", description="Multimodal topic-post quality ranking.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic JSONL dataset")
    g.add_argument("--topics", type=int)
    g.add_argument("--posts", type=int, help="posts per topic")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train and write a checkpoint plus epoch log")
    t.add_argument("--data")
    t.add_argument("--checkpoint", help="output checkpoint path")
    t.add_argument("--log", help="epoch log CSV (default: <checkpoint>.log.csv)")
    t.add_argument("--ablate", choices=list(VARIANTS))
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="report MAP, NDCG@3, NDCG@5 on a split")
    e.add_argument("--data")
    e.add_argument("--checkpoint")
    e.add_argument("--split", choices=SPLITS, default="test")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rank", parents=[common], help="rank the posts of one topic JSON")
    r.add_argument("topic", help="topic JSON file, or - for stdin")
    r.add_argument("--checkpoint")
    r.set_defaults(func=cmd_rank)

    a = sub.add_parser("ablate", parents=[common], help="train and test every ablation variant")
    a.add_argument("--data")
    a.add_argument("--epochs", type=int)
    a.add_argument("--lr", type=float)
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("grad-check", parents=[common], help="finite-difference check of a micro model")
    c.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError, DatasetError, CheckpointError, TrainingError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
