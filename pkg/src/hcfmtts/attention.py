"""Multi-head attention and the three-layer cross-modal alignment block.

The block runs self-attention on each modality, then bidirectional
cross-attention, then self-attention again. Each sublayer is post-norm,
``LayerNorm(x + MHA(...))``, and there is no feed-forward sublayer.
"""

from contextlib import contextmanager
from dataclasses import dataclass
import math

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .nn import LayerNorm, Linear, Module

_probes = []


@contextmanager
def record_attention():
    """Collect the attention weight arrays of every MHA call made inside the block."""
    store = []
    _probes.append(store)
    try:
        yield store
    finally:
        _probes.remove(store)


@dataclass(frozen=True)
class AttentionConfig:
    d: int = 64
    heads: int = 2
    dropout: float = 0.1

    def __post_init__(self):
        if self.d <= 0 or self.heads <= 0 or self.d % self.heads:
            raise ContractError(f"model dim {self.d} must be divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class AlignedPair:
    text: T.Tensor
    audio: T.Tensor


class MultiHeadAttention(Module):
    def __init__(self, rng, d, heads, dropout=0.0):
        if d % heads:
            raise ContractError(f"model dim {d} must be divisible by heads {heads}")
        self.heads = heads
        self.dropout = dropout
        self.dropout_rng = None
        self.q = Linear(rng, d, d)
        self.k = Linear(rng, d, d)
        self.v = Linear(rng, d, d)
        self.out = Linear(rng, d, d)

    def __call__(self, query, key, value, mask=None):
        """Scaled dot-product attention per head, scale 1/sqrt(d/h).

        Inputs are [m, d] / [n, d] or batched [B, m, d] / [B, n, d]. ``mask``
        is boolean and broadcastable to [B, m, n]; True marks key positions a
        query may attend to. A query row with no visible key is an error.
        """
        squeeze = query.ndim == 2
        if squeeze:
            query, key, value = (x.reshape(1, *x.shape) for x in (query, key, value))
            if mask is not None:
                mask = np.asarray(mask)[None] if np.ndim(mask) == 2 else mask
        b, m, d = query.shape
        n = key.shape[1]
        if key.shape[-1] != d or value.shape != key.shape:
            raise ShapeError(f"attention: query {query.shape}, key {key.shape}, value {value.shape}")
        h = self.heads
        dh = d // h

        def split(x, length):
            return x.reshape(b, length, h, dh).transpose(0, 2, 1, 3)

        q = split(self.q(query), m)
        k = split(self.k(key), n)
        v = split(self.v(value), n)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        if mask is not None:
            mask = np.broadcast_to(np.asarray(mask, dtype=bool).reshape(-1, 1, *np.shape(mask)[-2:]),
                                   (b, h, m, n))
            if not mask.any(axis=-1).all():
                raise ContractError("attention: a query row has every key masked")
        weights = T.softmax(scores, axis=-1, mask=mask)
        self._weights = weights   # kept for alignment losses and inspection
        for store in _probes:
            store.append(weights.data.copy())
        weights = T.dropout(weights, self.dropout, self.dropout_rng, self.training)
        ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(b, m, d)
        out = self.out(ctx)
        if squeeze:
            out = out.reshape(m, d)
        return out


def multi_head_attention(mha, query, key, value, mask=None):
    return mha(query, key, value, mask)


def _key_mask(valid):
    # [B, n] validity -> [B, 1, n] so every query row sees the same keys
    return None if valid is None else np.asarray(valid, dtype=bool)[:, None, :]


class CrossModalAlign(Module):
    """Self-attention, bidirectional cross-attention, self-attention.

    Six independent MHA parameter sets; every sublayer is
    ``LayerNorm(x + MHA(q, kv, kv))``.
    """

    SUBLAYERS = ("text_self_1", "audio_self_1", "text_cross", "audio_cross",
                 "text_self_2", "audio_self_2")

    def __init__(self, rng, cfg):
        self.cfg = cfg
        for name in self.SUBLAYERS:
            setattr(self, name, MultiHeadAttention(rng, cfg.d, cfg.heads, cfg.dropout))
            setattr(self, name + "_norm", LayerNorm(cfg.d))

    def _sub(self, name, x, kv, kv_valid):
        mha = getattr(self, name)
        norm = getattr(self, name + "_norm")
        return norm(x + mha(x, kv, kv, _key_mask(kv_valid)))

    def __call__(self, text, audio, text_valid=None, audio_valid=None):
        if text.shape[-1] != self.cfg.d or audio.shape[-1] != self.cfg.d:
            raise ShapeError(f"align: text {text.shape} / audio {audio.shape} vs d={self.cfg.d}")
        squeeze = text.ndim == 2
        if squeeze:
            text = text.reshape(1, *text.shape)
            audio = audio.reshape(1, *audio.shape)
        t1 = self._sub("text_self_1", text, text, text_valid)
        a1 = self._sub("audio_self_1", audio, audio, audio_valid)
        t2 = self._sub("text_cross", t1, a1, audio_valid)
        a2 = self._sub("audio_cross", a1, t1, text_valid)
        t3 = self._sub("text_self_2", t2, t2, text_valid)
        a3 = self._sub("audio_self_2", a2, a2, audio_valid)
        if squeeze:
            t3 = t3.reshape(t3.shape[1:])
            a3 = a3.reshape(a3.shape[1:])
        return AlignedPair(t3, a3)

    def output_projections(self):
        return [getattr(self, name).out for name in self.SUBLAYERS]


def cross_modal_align(block, text, audio, text_valid=None, audio_valid=None):
    return block(text, audio, text_valid, audio_valid)
