"""Local-global semantic correlation between a topic and one post.

Both modalities are projected into a shared latent space, five scaled
dot-product relations are computed (post queries, topic keys/values), each
relation is gated against its topic-side partner, and the gated relations
are fused into one (l_D + l_I) x d_c matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import DimensionError, Tensor
from .rng import uniform_init

RELATIONS = ("ww", "wv", "vw", "vv", "ss")


@dataclass
class LatentBundle:
    topic_text: Tensor  # (..., l_D, d_c)
    topic_image: Tensor  # (..., l_I, d_c)
    post_text: Tensor
    post_image: Tensor

    @property
    def dim(self) -> int:
        return self.topic_text.shape[-1]

    def topic_stack(self) -> Tensor:
        return nx.concat([self.topic_text, self.topic_image], axis=-2)

    def post_stack(self) -> Tensor:
        return nx.concat([self.post_text, self.post_image], axis=-2)


def init_semantic_params(rng: np.random.Generator, text_dim: int, image_dim: int, d_c: int) -> dict[str, Tensor]:
    p = {
        "proj_text.weight": nx.parameter(uniform_init(rng, (text_dim, d_c), text_dim)),
        "proj_text.bias": nx.parameter(uniform_init(rng, (d_c,), text_dim)),
        "proj_image.weight": nx.parameter(uniform_init(rng, (image_dim, d_c), image_dim)),
        "proj_image.bias": nx.parameter(uniform_init(rng, (d_c,), image_dim)),
    }
    for r in RELATIONS:
        p[f"gate_{r}.weight"] = nx.parameter(uniform_init(rng, (2 * d_c, d_c), 2 * d_c))
        p[f"gate_{r}.bias"] = nx.parameter(uniform_init(rng, (d_c,), 2 * d_c))
    return p


def _affine_tanh(x: Tensor, w: Tensor, b: Tensor, what: str) -> Tensor:
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"{what}: features have width {x.shape[-1]}, projection expects {w.shape[0]}")
    return nx.tanh(nx.add(nx.matmul(x, w), b))


def project_latent(W_t: Tensor, V_t: Tensor, W_p: Tensor, V_p: Tensor, p: dict[str, Tensor]) -> LatentBundle:
    wt, bt = p["proj_text.weight"], p["proj_text.bias"]
    wi, bi = p["proj_image.weight"], p["proj_image.bias"]
    return LatentBundle(
        topic_text=_affine_tanh(W_t, wt, bt, "topic text"),
        topic_image=_affine_tanh(V_t, wi, bi, "topic image"),
        post_text=_affine_tanh(W_p, wt, bt, "post text"),
        post_image=_affine_tanh(V_p, wi, bi, "post image"),
    )


def cross_attend(query: Tensor, key_value: Tensor, return_weights: bool = False):
    """softmax(q kv^T / sqrt(d)) kv: every output row is a convex mix of kv rows."""
    d = query.shape[-1]
    if key_value.shape[-1] != d:
        raise DimensionError(f"cross_attend: query width {d} != key/value width {key_value.shape[-1]}")
    logits = nx.scale(nx.matmul(query, nx.transpose(key_value)), 1.0 / np.sqrt(d))
    weights = nx.softmax_rows(logits, label="attention")
    out = nx.matmul(weights, key_value)
    return (out, weights) if return_weights else out


def compute_relations(b: LatentBundle, local: bool = True, global_: bool = True) -> dict[str, Tensor]:
    rel = {}
    if local:
        rel["ww"] = cross_attend(b.post_text, b.topic_text)
        rel["wv"] = cross_attend(b.post_text, b.topic_image)
        rel["vw"] = cross_attend(b.post_image, b.topic_text)
        rel["vv"] = cross_attend(b.post_image, b.topic_image)
    if global_:
        rel["ss"] = cross_attend(b.post_stack(), b.topic_stack())
    return rel


def _partner(name: str, b: LatentBundle) -> Tensor:
    if name in ("ww", "wv"):
        return b.topic_text
    if name in ("vw", "vv"):
        return b.topic_image
    return b.topic_stack()


def compute_gates(rel: dict[str, Tensor], b: LatentBundle, p: dict[str, Tensor], names=RELATIONS) -> dict[str, Tensor]:
    gates = {}
    for r in names:
        m, partner = rel[r], _partner(r, b)
        if m.shape[-2] != partner.shape[-2]:
            raise DimensionError(
                f"gate {r}: relation has {m.shape[-2]} rows but topic-side partner has {partner.shape[-2]}"
            )
        z = nx.matmul(nx.concat([m, partner], axis=-1), p[f"gate_{r}.weight"])
        gates[r] = nx.sigmoid(nx.add(z, p[f"gate_{r}.bias"]))
    return gates


def gated_fuse(
    rel: dict[str, Tensor],
    b: LatentBundle,
    p: dict[str, Tensor],
    use_local: bool = True,
    use_global: bool = True,
) -> Tensor:
    if not (use_local or use_global):
        raise ValueError("gated_fuse needs the local or the global path")
    names = [r for r in RELATIONS if (r == "ss" and use_global) or (r != "ss" and use_local)]
    g = compute_gates(rel, b, p, names)
    fused = None
    if use_local:
        text_rows = nx.add(nx.mul(rel["ww"], g["ww"]), nx.mul(rel["wv"], g["wv"]))
        image_rows = nx.add(nx.mul(rel["vw"], g["vw"]), nx.mul(rel["vv"], g["vv"]))
        fused = nx.concat([text_rows, image_rows], axis=-2)
    if use_global:
        glob = nx.add(rel["ss"], nx.mul(rel["ss"], g["ss"]))
        fused = glob if fused is None else nx.add(fused, glob)
    return fused


def pool_semantic(m_hat: Tensor) -> Tensor:
    return nx.mean_rows(m_hat)


def semantic_feature(b: LatentBundle, p: dict[str, Tensor], use_local: bool = True, use_global: bool = True) -> Tensor:
    rel = compute_relations(b, use_local, use_global)
    return pool_semantic(gated_fuse(rel, b, p, use_local, use_global))
