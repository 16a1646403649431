"""Full topic-post scorer: encoders -> semantic fusion + evidence graphs -> linear head."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .encoders import (
    ImageFeatures,
    PassthroughBackend,
    RawImage,
    TinyConvBackend,
    encode_text,
    init_text_params,
)
from .evidence import init_evidence_params, multi_level_reasoning
from .numerics import DimensionError, Tensor
from .rng import stream, uniform_init
from .semantic import init_semantic_params, project_latent, semantic_feature


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 500
    embed_dim: int = 128
    text_dim: int = 128
    kernel_sizes: tuple[int, ...] = (1, 3, 5)
    l_D: int = 16
    l_I: int = 8
    d_I: int = 16
    d_c: int = 128
    graph_layers: int = 2
    graph_hidden: int | None = None  # defaults to d_c
    image_backend: str = "passthrough"
    image_size: int = 16
    image_channels: int = 3
    conv_channels: tuple[int, ...] = (8, 8, 8)
    conv_strides: tuple[int, ...] = (2, 2, 2)

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(self.kernel_sizes))
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        object.__setattr__(self, "conv_strides", tuple(self.conv_strides))
        for name in ("vocab_size", "embed_dim", "text_dim", "l_D", "l_I", "d_I", "d_c", "graph_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.vocab_size < 3:
            raise ValueError("vocab_size must leave room beyond PAD and UNK")
        if not self.kernel_sizes or any(c < 1 or c % 2 == 0 for c in self.kernel_sizes):
            raise ValueError(f"kernel sizes must be odd and positive, got {self.kernel_sizes}")
        if self.text_dim < len(self.kernel_sizes):
            raise ValueError("text_dim must give every kernel at least one channel")
        if self.image_backend not in ("passthrough", "tiny-conv"):
            raise ValueError(f"unknown image backend {self.image_backend!r}")
        if self.image_backend == "tiny-conv" and self.backend().out_rows != self.l_I:
            raise ValueError(f"tiny-conv produces {self.backend().out_rows} rows but l_I is {self.l_I}")

    @property
    def hidden(self) -> int:
        return self.graph_hidden or self.d_c

    def backend(self):
        if self.image_backend == "passthrough":
            return PassthroughBackend(self.l_I, self.d_I)
        return TinyConvBackend(
            self.image_size, self.image_channels, self.d_I, self.conv_channels, self.conv_strides
        )


@dataclass(frozen=True)
class AblationMask:
    use_semantic: bool = True
    use_local: bool = True
    use_global: bool = True
    use_evidence: bool = True
    use_sig: bool = True
    use_tpl: bool = True

    def __post_init__(self):
        if not self.use_evidence:
            object.__setattr__(self, "use_sig", False)
            object.__setattr__(self, "use_tpl", False)
        if not self.use_semantic:
            object.__setattr__(self, "use_local", False)
            object.__setattr__(self, "use_global", False)
        if not (self.semantic_on or self.use_sig or self.use_tpl):
            raise ValueError("ablation mask disables every feature source")

    @property
    def semantic_on(self) -> bool:
        return self.use_semantic and (self.use_local or self.use_global)

    def blocks(self) -> list[str]:
        """Score-head input blocks in order, each d_c wide."""
        out = []
        if self.semantic_on:
            out.append("semantic")
        if self.use_evidence and self.use_sig:
            out.append("sig")
        if self.use_evidence and self.use_tpl:
            out.append("tpl")
        return out


FULL = AblationMask()

VARIANTS: dict[str, AblationMask] = {
    "none": FULL,
    "wo-evidence": AblationMask(use_evidence=False),
    "wo-evidence-1": AblationMask(use_sig=False),
    "wo-evidence-2": AblationMask(use_tpl=False),
    "wo-semantic": AblationMask(use_semantic=False),
    "wo-local": AblationMask(use_local=False),
    "wo-global": AblationMask(use_global=False),
}

VARIANT_LABELS = {
    "none": "MFTRR",
    "wo-evidence": "-w/o multi-Level evidence",
    "wo-evidence-1": "-w/o multi-Level evidence I",
    "wo-evidence-2": "-w/o multi-Level evidence II",
    "wo-semantic": "-w/o local-global semantic",
    "wo-local": "-w/o local-global semantic I",
    "wo-global": "-w/o local-global semantic II",
}


@dataclass
class ModelParams:
    """Every trainable tensor keyed by a dotted path, plus how it was built."""

    config: ModelConfig
    tensors: dict[str, Tensor]
    mask: AblationMask = FULL
    seed: int | None = None

    def __getitem__(self, path: str) -> Tensor:
        return self.tensors[path]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def group(self, prefix: str) -> dict[str, Tensor]:
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.tensors.items() if k.startswith(prefix + ".")}

    @property
    def head_width(self) -> int:
        return self["head.weight"].shape[0]

    def copy(self) -> "ModelParams":
        tensors = {k: nx.parameter(v.data.copy()) for k, v in self.tensors.items()}
        return ModelParams(self.config, tensors, self.mask, self.seed)

    def active_paths(self) -> list[str]:
        """Paths that take part in scoring under the current mask."""
        m = self.mask
        keep = []
        for path in self.tensors:
            top = path.split(".")[0]
            if top == "semantic":
                # the latent projections also feed the evidence graphs
                sub = path.split(".")[1]
                if sub.startswith("gate_") and not m.semantic_on:
                    continue
                if sub.startswith("gate_"):
                    r = sub[5:]
                    if (r == "ss" and not m.use_global) or (r != "ss" and not m.use_local):
                        continue
            elif top == "evidence":
                sub = path.split(".")[1]
                if sub == "sig" and not m.use_sig:
                    continue
                if sub in ("topic_graph", "post_graph", "coherence") and not m.use_tpl:
                    continue
            keep.append(path)
        return keep

    def meta(self) -> dict:
        return {"model": _config_to_json(self.config), "mask": asdict(self.mask), "seed": self.seed}


def _config_to_json(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


def config_from_json(d: dict) -> ModelConfig:
    return ModelConfig(**d)


def init_params(config: ModelConfig, seed: int = 0, mask: AblationMask = FULL) -> ModelParams:
    """Seeded uniform(+-1/sqrt(fan_in)) init of the full architecture, then masked head."""
    rng = stream(seed, "init")
    t: dict[str, Tensor] = {}
    for k, v in init_text_params(rng, config.vocab_size, config.embed_dim, config.text_dim, config.kernel_sizes).items():
        t[f"text.{k}"] = v
    for k, v in config.backend().init_params(rng).items():
        t[f"image.{k}"] = v
    for k, v in init_semantic_params(rng, config.text_dim, config.d_I, config.d_c).items():
        t[f"semantic.{k}"] = v
    for k, v in init_evidence_params(rng, config.d_c, config.hidden, config.graph_layers).items():
        t[f"evidence.{k}"] = v
    width = 3 * config.d_c
    t["head.weight"] = nx.parameter(uniform_init(rng, (width, 1), width))
    t["head.bias"] = nx.parameter(uniform_init(rng, (1,), width))
    return apply_ablation(ModelParams(config, t, FULL, seed), mask)


def apply_ablation(params: ModelParams, mask: AblationMask) -> ModelParams:
    """Rebuild the score head for ``mask``; surviving blocks keep their weights,
    newly enabled blocks start at zero."""
    d = params.config.d_c
    old_blocks = params.mask.blocks()
    w_old = params["head.weight"].data
    if w_old.shape[0] != d * len(old_blocks):
        raise DimensionError(f"head width {w_old.shape[0]} does not match mask {params.mask}")
    rows = []
    for blk in mask.blocks():
        if blk in old_blocks:
            i = old_blocks.index(blk)
            rows.append(w_old[i * d : (i + 1) * d])
        else:
            rows.append(np.zeros((d, 1)))
    tensors = dict(params.tensors)
    tensors["head.weight"] = nx.parameter(np.concatenate(rows, axis=0))
    tensors["head.bias"] = nx.parameter(params["head.bias"].data.copy())
    return ModelParams(params.config, tensors, mask, params.seed)


# --------------------------------------------------------------------------
# forward
# --------------------------------------------------------------------------


@dataclass
class Batch:
    """B topic-post pairs. Images are feature rows (passthrough) or pixels (tiny-conv)."""

    topic_tokens: np.ndarray  # (B, l_D) int
    topic_images: np.ndarray  # (B, l_I, d_I) or (B, H, W, C)
    post_tokens: np.ndarray
    post_images: np.ndarray

    def __len__(self) -> int:
        return len(self.post_tokens)


def _image_input(arr: np.ndarray, config: ModelConfig):
    return ImageFeatures(arr) if config.image_backend == "passthrough" else RawImage(arr)


def features(params: ModelParams, batch: Batch, mask: AblationMask | None = None) -> Tensor:
    """Masked score-head input [pool(M_hat), G_SIG, G_TPL], shape (B, width)."""
    mask = params.mask if mask is None else mask
    if mask.blocks() != params.mask.blocks():
        raise DimensionError(f"score head built for {params.mask.blocks()}, asked to score with {mask.blocks()}")
    cfg = params.config
    text_p, image_p = params.group("text"), params.group("image")
    backend = cfg.backend()
    W_t = encode_text(batch.topic_tokens, text_p)
    W_p = encode_text(batch.post_tokens, text_p)
    V_t = backend.encode(_image_input(batch.topic_images, cfg), image_p)
    V_p = backend.encode(_image_input(batch.post_images, cfg), image_p)
    bundle = project_latent(W_t, V_t, W_p, V_p, params.group("semantic"))
    parts = []
    if mask.semantic_on:
        parts.append(semantic_feature(bundle, params.group("semantic"), mask.use_local, mask.use_global))
    if mask.use_sig or mask.use_tpl:
        parts.append(multi_level_reasoning(bundle, params.group("evidence"), mask.use_sig, mask.use_tpl))
    return parts[0] if len(parts) == 1 else nx.concat(parts, axis=-1)


def score_batch(params: ModelParams, batch: Batch, mask: AblationMask | None = None) -> Tensor:
    """F(T, p) = W_p [pool(M_hat), R_MEG] + b_p for each pair, shape (B,)."""
    feats = features(params, batch, mask)
    w = params["head.weight"]
    if feats.shape[-1] != w.shape[0]:
        raise DimensionError(f"features have width {feats.shape[-1]}, head expects {w.shape[0]}")
    s = nx.add(nx.matmul(feats, w), params["head.bias"])
    return nx.reshape(s, s.shape[:-1])


def single_batch(topic_tokens, topic_image, post_tokens, post_image) -> Batch:
    return Batch(
        np.asarray(topic_tokens)[None],
        np.asarray(topic_image, dtype=np.float64)[None],
        np.asarray(post_tokens)[None],
        np.asarray(post_image, dtype=np.float64)[None],
    )


def score(topic, post, params: ModelParams, mask: AblationMask | None = None) -> float:
    """Score one post against its topic. ``topic``/``post`` are (tokens, image) pairs."""
    return score_batch(params, single_batch(topic[0], topic[1], post[0], post[1]), mask).item()


def pairwise_hinge_loss(s_pos, s_neg, gamma: float = 1.0):
    """max(0, gamma - s_pos + s_neg); elementwise for tensors, float for scalars."""
    if gamma <= 0:
        raise ValueError("margin gamma must be positive")
    if isinstance(s_pos, Tensor) or isinstance(s_neg, Tensor):
        s_pos, s_neg = nx._lift(s_pos), nx._lift(s_neg)
        return nx.relu(nx.add(nx.sub(s_neg, s_pos), nx.constant(gamma)))
    return max(0.0, gamma - float(s_pos) + float(s_neg))


def describe(params: ModelParams) -> str:
    n = sum(v.data.size for v in params.tensors.values())
    return json.dumps({"parameters": n, "head_width": params.head_width, "blocks": params.mask.blocks()})


__all__ = [
    "AblationMask",
    "Batch",
    "FULL",
    "ModelConfig",
    "ModelParams",
    "VARIANTS",
    "apply_ablation",
    "features",
    "init_params",
    "pairwise_hinge_loss",
    "score",
    "score_batch",
]
