"""Text and image front ends.

Text: token ids -> embeddings -> one same-length 1-D convolution per kernel
size, outputs concatenated per position. Image: either precomputed feature
rows (passthrough) or a tiny three-stage strided convolution stack whose
per-stage maps are projected, flattened and row-concatenated.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import numerics as nx
from .numerics import DimensionError, Tensor
from .rng import uniform_init

PAD = 0
UNK = 1
_RESERVED = ("<pad>", "<unk>")


# --------------------------------------------------------------------------
# vocabulary / tokenization
# --------------------------------------------------------------------------

_CJK = re.compile(r"[぀-ヿ㐀-䶿一-鿿豈-﫿가-힯]")


def tokenize(text: str) -> list[str]:
    """Whitespace split; runs of CJK characters are split per codepoint."""
    tokens = []
    for chunk in text.split():
        if _CJK.search(chunk):
            buf = ""
            for ch in chunk:
                if _CJK.match(ch):
                    if buf:
                        tokens.append(buf)
                        buf = ""
                    tokens.append(ch)
                else:
                    buf += ch
            if buf:
                tokens.append(buf)
        else:
            tokens.append(chunk)
    return tokens


@dataclass
class Vocab:
    itos: list[str] = field(default_factory=lambda: list(_RESERVED))

    def __post_init__(self):
        if self.itos[:2] != list(_RESERVED):
            self.itos = list(_RESERVED) + [t for t in self.itos if t not in _RESERVED]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocab":
        v = cls()
        for text in texts:
            for tok in tokenize(text):
                v.add(tok)
        return v

    def encode(self, text: str, length: int) -> np.ndarray:
        ids = [self.stoi.get(t, UNK) for t in tokenize(text)]
        return pad_sequence(ids, length)

    def save(self, path) -> None:
        body = "".join(t + "\n" for t in self.itos[2:])
        Path(path).write_text(body, encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(list(_RESERVED) + lines)


def pad_sequence(ids: Sequence[int], length: int) -> np.ndarray:
    out = np.full(length, PAD, dtype=np.int64)
    ids = list(ids)[:length]
    out[: len(ids)] = ids
    return out


# --------------------------------------------------------------------------
# text encoder
# --------------------------------------------------------------------------


def split_dims(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def init_text_params(
    rng: np.random.Generator,
    vocab_size: int,
    embed_dim: int,
    text_dim: int,
    kernel_sizes: Sequence[int] = (1, 3, 5),
) -> dict[str, Tensor]:
    for c in kernel_sizes:
        if c < 1 or c % 2 == 0:
            raise ValueError(f"kernel sizes must be odd and positive, got {c}")
    p = {"embedding": nx.parameter(uniform_init(rng, (vocab_size, embed_dim), embed_dim))}
    for c, out in zip(kernel_sizes, split_dims(text_dim, len(kernel_sizes))):
        fan_in = c * embed_dim
        p[f"conv{c}.weight"] = nx.parameter(uniform_init(rng, (fan_in, out), fan_in))
        p[f"conv{c}.bias"] = nx.parameter(uniform_init(rng, (out,), fan_in))
    return p


def kernel_sizes_of(p: dict[str, Tensor]) -> list[int]:
    return sorted(int(k[4:].split(".")[0]) for k in p if k.startswith("conv") and k.endswith(".weight"))


def _window_index(length: int, c: int) -> np.ndarray:
    # row i of a zero-padded sequence (pad rows at both ends) covers i .. i+c-1
    return np.arange(length)[:, None] + np.arange(c)[None, :]


def encode_text(ids, p: dict[str, Tensor]) -> Tensor:
    """(..., l_D) token ids -> (..., l_D, d_D) C-gram features."""
    ids = np.asarray(ids, dtype=np.int64)
    emb = p["embedding"]
    vocab_size, d = emb.shape
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise IndexError(f"token id out of range for vocabulary of size {vocab_size}")
    length = ids.shape[-1]
    x = nx.take(emb, ids, axis=0)  # (..., l_D, d)
    lead = ids.shape[:-1]
    outs = []
    for c in kernel_sizes_of(p):
        half = c // 2
        if half:
            zeros = nx.constant(np.zeros(lead + (half, d)))
            padded = nx.concat([zeros, x, zeros], axis=-2)
        else:
            padded = x
        win = nx.take(padded, _window_index(length, c), axis=-2)  # (..., l_D, c, d)
        win = nx.reshape(win, lead + (length, c * d))
        outs.append(nx.add(nx.matmul(win, p[f"conv{c}.weight"]), p[f"conv{c}.bias"]))
    return outs[0] if len(outs) == 1 else nx.concat(outs, axis=-1)


# --------------------------------------------------------------------------
# image front ends
# --------------------------------------------------------------------------


@dataclass
class ImageFeatures:
    """Precomputed visual feature rows, shape (..., l_I, d_I)."""

    matrix: np.ndarray


@dataclass
class RawImage:
    """Pixels, shape (..., H, W, channels)."""

    pixels: np.ndarray


@dataclass
class PassthroughBackend:
    rows: int
    dim: int
    kind: str = "passthrough"

    def init_params(self, rng) -> dict[str, Tensor]:
        return {}

    @property
    def out_rows(self) -> int:
        return self.rows

    def encode(self, img, p=None) -> Tensor:
        if not isinstance(img, ImageFeatures):
            raise TypeError(f"passthrough backend expects ImageFeatures, got {type(img).__name__}")
        m = np.asarray(img.matrix, dtype=np.float64)
        if m.ndim < 2 or m.shape[-2] != self.rows or m.shape[-1] != self.dim:
            raise DimensionError(
                f"passthrough expects (..., {self.rows}, {self.dim}) features, got {m.shape}"
            )
        return nx.constant(m)


def _conv_out(n: int, stride: int, kernel: int = 3) -> int:
    pad = kernel // 2
    return (n + 2 * pad - kernel) // stride + 1


def _im2col_index(h: int, w: int, stride: int, kernel: int = 3) -> tuple[np.ndarray, int, int]:
    """Gather indices into a flattened (h*w + 1) map whose last row is zero."""
    pad = kernel // 2
    oh, ow = _conv_out(h, stride, kernel), _conv_out(w, stride, kernel)
    idx = np.full((oh * ow, kernel * kernel), h * w, dtype=np.intp)
    for oy in range(oh):
        for ox in range(ow):
            for ky in range(kernel):
                for kx in range(kernel):
                    y, x = oy * stride + ky - pad, ox * stride + kx - pad
                    if 0 <= y < h and 0 <= x < w:
                        idx[oy * ow + ox, ky * kernel + kx] = y * w + x
    return idx, oh, ow


@dataclass
class TinyConvBackend:
    """Three 3x3 strided conv stages (tanh), each projected to ``dim`` features."""

    image_size: int
    in_channels: int
    dim: int
    channels: tuple[int, ...] = (8, 8, 8)
    strides: tuple[int, ...] = (2, 2, 2)
    kind: str = "tiny-conv"

    def __post_init__(self):
        if len(self.channels) != 3 or len(self.strides) != 3:
            raise ValueError("tiny-conv needs exactly three stages")
        self._plan = []
        side = self.image_size
        for s in self.strides:
            idx, oh, ow = _im2col_index(side, side, s)
            self._plan.append((side, idx, oh * ow))
            side = oh

    @property
    def stage_rows(self) -> list[int]:
        return [n for _, _, n in self._plan]

    @property
    def out_rows(self) -> int:
        return sum(self.stage_rows)

    def init_params(self, rng) -> dict[str, Tensor]:
        p = {}
        cin = self.in_channels
        for k, cout in enumerate(self.channels):
            fan = 9 * cin
            p[f"stage{k}.weight"] = nx.parameter(uniform_init(rng, (fan, cout), fan))
            p[f"stage{k}.bias"] = nx.parameter(uniform_init(rng, (cout,), fan))
            p[f"proj{k}.weight"] = nx.parameter(uniform_init(rng, (cout, self.dim), cout))
            p[f"proj{k}.bias"] = nx.parameter(uniform_init(rng, (self.dim,), cout))
            cin = cout
        return p

    def encode(self, img, p) -> Tensor:
        if not isinstance(img, RawImage):
            raise TypeError(f"tiny-conv backend expects RawImage, got {type(img).__name__}")
        px = np.asarray(img.pixels, dtype=np.float64)
        if px.ndim < 3 or px.shape[-3:] != (self.image_size, self.image_size, self.in_channels):
            raise DimensionError(
                f"tiny-conv expects (..., {self.image_size}, {self.image_size}, "
                f"{self.in_channels}) pixels, got {px.shape}"
            )
        lead = px.shape[:-3]
        x = nx.constant(px.reshape(lead + (-1, self.in_channels)))
        rows = []
        for k, (side, idx, n_out) in enumerate(self._plan):
            cin = x.shape[-1]
            zero = nx.constant(np.zeros(lead + (1, cin)))
            cols = nx.take(nx.concat([x, zero], axis=-2), idx, axis=-2)
            cols = nx.reshape(cols, lead + (n_out, 9 * cin))
            x = nx.tanh(nx.add(nx.matmul(cols, p[f"stage{k}.weight"]), p[f"stage{k}.bias"]))
            rows.append(nx.add(nx.matmul(x, p[f"proj{k}.weight"]), p[f"proj{k}.bias"]))
        return nx.concat(rows, axis=-2)


def encode_image_multiscale(img, backend, p: dict[str, Tensor] | None = None) -> Tensor:
    return backend.encode(img, p or {})
