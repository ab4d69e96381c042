"""Hierarchical contrastive alignment loss.

For each condition tier the speech embedding is scored against its own
tier embedding (positive) and against other utterances' tier embeddings
(negatives); the per-tier InfoNCE terms are weighted and summed.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError

TIERS = ("phon", "syll", "pros")


@dataclass
class HcaConfig:
    lambdas: dict = field(default_factory=lambda: {k: 1.0 for k in TIERS})
    tau: float = 0.1
    negatives: int = 1

    def __post_init__(self):
        if self.tau <= 0:
            raise ContractError(f"temperature must be positive, got {self.tau}")
        if any(v < 0 for v in self.lambdas.values()):
            raise ContractError("tier weights must be non-negative")
        if self.negatives < 1:
            raise ContractError("need at least one negative per positive")


@dataclass
class EmbeddingPair:
    speech: np.ndarray
    condition: np.ndarray
    tier: str

    def __post_init__(self):
        if np.shape(self.speech) != np.shape(self.condition):
            raise ShapeError(f"embedding dims differ: {np.shape(self.speech)} vs {np.shape(self.condition)}")


def _unit_rows(x):
    if np.any(np.sum(x.data * x.data, axis=-1) == 0):
        raise ContractError("similarity: zero-norm embedding")
    return x / T.sqrt((x * x).sum(axis=-1, keepdims=True))


def similarity(e_x, e_c, tau):
    """Cosine similarity divided by ``tau`` (a scalar Tensor)."""
    e_x, e_c = T._as_tensor(e_x), T._as_tensor(e_c)
    if e_x.shape != e_c.shape:
        raise ShapeError(f"similarity: {e_x.shape} vs {e_c.shape}")
    return (_unit_rows(e_x) * _unit_rows(e_c)).sum() * (1.0 / tau)


def info_nce(pos, neg):
    """Mean over positives of -log(e^pos / (e^pos + sum e^neg)).

    pos: [P] scores; neg: [P, N] scores, N >= 1.
    """
    pos, neg = T._as_tensor(pos), T._as_tensor(neg)
    if pos.ndim != 1 or pos.shape[0] == 0:
        raise ContractError("info_nce needs at least one positive")
    if neg.ndim != 2 or neg.shape[0] != pos.shape[0] or neg.shape[1] == 0:
        raise ContractError(f"info_nce needs >= 1 negative per positive, got {neg.shape}")
    logits = T.concat([pos.reshape(-1, 1), neg], axis=1)
    return -(T.log_softmax(logits, axis=1)[:, 0].mean())


def hca_loss(tiers, cfg):
    """Sum over tiers of lambda_k * InfoNCE_k.

    ``tiers`` maps tier name to a (pos [P], neg [P, N]) pair of scores.
    Tiers whose weight is zero are skipped entirely.
    """
    total = None
    for name, (pos, neg) in tiers.items():
        lam = cfg.lambdas.get(name, 0.0)
        if lam == 0.0:
            continue
        term = info_nce(pos, neg) * lam
        total = term if total is None else total + term
    if total is None:
        return T.Tensor(np.zeros(()))
    return total


def in_batch_scores(speech, condition, tau):
    """Positive/negative scores from a batch: negatives are the other items.

    speech, condition: [B, d_e] Tensors with B >= 2.
    """
    b = speech.shape[0]
    if b < 2:
        raise ContractError("in-batch negatives need a batch of at least 2")
    sim = (_unit_rows(speech) @ _unit_rows(condition).transpose(1, 0)) * (1.0 / tau)
    idx = np.arange(b)
    rows = np.repeat(idx[:, None], b - 1, axis=1)
    cols = np.array([[j for j in range(b) if j != i] for i in range(b)])
    return sim[idx, idx], sim[rows, cols]
