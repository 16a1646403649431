"""Two-level evidence graph reasoning.

Macro level: one graph over every latent row of topic and post; its
summed final state is used as a retrieval query over the stacked rows.
Micro level: a topic graph and a post graph; post nodes are weighted by
their coherence with the mean topic-graph state.

Graphs are fully connected minus self loops. Each layer scores ordered
node pairs with a tanh MLP, softmax-normalizes over neighbours and
replaces every node by the weighted sum of its neighbours.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import DimensionError, Tensor
from .rng import uniform_init
from .semantic import LatentBundle


def init_pair_mlp(rng: np.random.Generator, d: int, hidden: int) -> dict[str, Tensor]:
    # no output bias: every consumer softmaxes the scores, so it would cancel
    return {
        "w1": nx.parameter(uniform_init(rng, (2 * d, hidden), 2 * d)),
        "b1": nx.parameter(uniform_init(rng, (hidden,), 2 * d)),
        "w2": nx.parameter(uniform_init(rng, (hidden, 1), hidden)),
    }


def init_graph_params(rng: np.random.Generator, d: int, hidden: int, layers: int) -> dict[str, Tensor]:
    p = {}
    for z in range(layers):
        for k, v in init_pair_mlp(rng, d, hidden).items():
            p[f"layer{z}.{k}"] = v
    return p


def init_evidence_params(rng: np.random.Generator, d: int, hidden: int, layers: int) -> dict[str, Tensor]:
    p = {}
    for name in ("sig", "topic_graph", "post_graph"):
        for k, v in init_graph_params(rng, d, hidden, layers).items():
            p[f"{name}.{k}"] = v
    for k, v in init_pair_mlp(rng, d, hidden).items():
        p[f"coherence.{k}"] = v
    return p


def sub_params(p: dict[str, Tensor], prefix: str) -> dict[str, Tensor]:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in p.items() if k.startswith(prefix + ".")}


def layer_count(p: dict[str, Tensor]) -> int:
    return len({k.split(".")[0] for k in p if k.startswith("layer")})


def pair_scores(nodes: Tensor, mlp: dict[str, Tensor]) -> Tensor:
    """MLP([g_i, g_j]) for every ordered pair: (..., n, d) -> (..., n, n)."""
    d = nodes.shape[-1]
    w1 = mlp["w1"]
    # [g_i, g_j] W1 == g_i W1[:d] + g_j W1[d:]
    src = nx.matmul(nodes, nx.slice_axis(w1, 0, d, axis=0))
    dst = nx.matmul(nodes, nx.slice_axis(w1, d, 2 * d, axis=0))
    return nx.pair_mlp(src, dst, mlp["b1"], mlp["w2"])


def graph_forward(nodes0: Tensor, p: dict[str, Tensor], layers: int | None = None, adjacency_out: list | None = None) -> Tensor:
    n = nodes0.shape[-2]
    if n < 2:
        raise DimensionError(f"graph_forward needs at least 2 nodes, got {n}")
    layers = layer_count(p) if layers is None else layers
    off_diag = ~np.eye(n, dtype=bool)
    g = nodes0
    for z in range(layers):
        scores = pair_scores(g, sub_params(p, f"layer{z}"))
        adj = nx.softmax_rows(scores, mask=off_diag, label="adjacency")
        if adjacency_out is not None:
            adjacency_out.append(adj)
        g = nx.matmul(adj, g)
    return g


def _row_vector(v: Tensor) -> Tensor:
    # (..., d) -> (..., 1, d)
    return nx.reshape(v, v.shape[:-1] + (1, v.shape[-1]))


def significant_info_reasoning(b: LatentBundle, p: dict[str, Tensor], trace: dict | None = None) -> Tensor:
    """Macro-level feature G_SIG, shape (..., d_c)."""
    nodes0 = nx.concat([b.post_text, b.post_image, b.topic_text, b.topic_image], axis=-2)
    final = graph_forward(nodes0, sub_params(p, "sig"))
    graph_emb = nx.reduce_sum(final, axis=-2)  # (..., d)
    stacked = nx.concat([b.topic_text, b.topic_image, b.post_text, b.post_image], axis=-2)
    beta = nx.matmul(stacked, nx.transpose(_row_vector(graph_emb)))  # (..., n, 1)
    alpha = nx.softmax(nx.transpose(beta), axis=-1, label="retrieval")  # (..., 1, n)
    if trace is not None:
        trace["alpha"] = alpha
        trace["stacked"] = stacked
    out = nx.matmul(alpha, stacked)
    return nx.reshape(out, out.shape[:-2] + (out.shape[-1],))


def internal_logic_reasoning(b: LatentBundle, p: dict[str, Tensor], trace: dict | None = None) -> Tensor:
    """Micro-level feature G_TPL, shape (..., d_c)."""
    topic_final = graph_forward(b.topic_stack(), sub_params(p, "topic_graph"))
    post_final = graph_forward(b.post_stack(), sub_params(p, "post_graph"))
    t = nx.mean_rows(topic_final)
    coh = sub_params(p, "coherence")
    d = t.shape[-1]
    w1 = coh["w1"]
    t_part = nx.matmul(_row_vector(t), nx.slice_axis(w1, 0, d, axis=0))  # (..., 1, h)
    g_part = nx.matmul(post_final, nx.slice_axis(w1, d, 2 * d, axis=0))
    hidden = nx.tanh(nx.add(nx.add(g_part, t_part), coh["b1"]))
    logits = nx.transpose(nx.matmul(hidden, coh["w2"]))  # (..., 1, n)
    weights = nx.softmax(logits, axis=-1, label="coherence")
    if trace is not None:
        trace["R"] = weights
        trace["topic_final"] = topic_final
        trace["post_final"] = post_final
    out = nx.matmul(weights, post_final)
    return nx.reshape(out, out.shape[:-2] + (out.shape[-1],))


def multi_level_reasoning(
    b: LatentBundle,
    p: dict[str, Tensor],
    use_sig: bool = True,
    use_tpl: bool = True,
) -> Tensor:
    """R_MEG = G_SIG ++ G_TPL (either half can be switched off)."""
    parts = []
    if use_sig:
        parts.append(significant_info_reasoning(b, p))
    if use_tpl:
        parts.append(internal_logic_reasoning(b, p))
    if not parts:
        raise ValueError("multi_level_reasoning needs at least one level")
    return parts[0] if len(parts) == 1 else nx.concat(parts, axis=-1)
