"""Training objective: binary cross-entropy, MSE and the orthogonal projection
loss over the task memory bank, combined as ce + lambda1*mse + lambda2*ortho."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EmptyBatch, ShapeMismatch, ZeroNormRow

PROB_CLAMP = 1e-12


@dataclass
class LossWeights:
    lambda1: float = 50.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError(f"loss weights must be non-negative, got {self}")


def ce_loss(probs_class1, labels):
    """Mean binary cross-entropy of class-1 probabilities against 0/1 labels."""
    p = ad.as_tensor(probs_class1)
    y = np.asarray(labels, dtype=p.dtype).reshape(p.shape)
    if p.value.size == 0:
        raise EmptyBatch("ce_loss on an empty batch")
    p = ad.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = Tensor(y) * ad.log(p) + Tensor(1.0 - y) * ad.log(1.0 - p)
    return -ll.mean()


def mse_loss(preds, targets):
    z_hat = ad.as_tensor(preds)
    z = np.asarray(targets, dtype=z_hat.dtype)
    if z_hat.value.size == 0:
        raise EmptyBatch("mse_loss on an empty batch")
    if z.shape != z_hat.shape:
        raise ShapeMismatch(f"mse_loss: predictions {z_hat.shape} vs targets {z.shape}")
    r = z_hat - Tensor(z)
    return (r * r).mean()


def ortho_loss(bank):
    """Mean cosine similarity over ordered pairs of distinct bank rows.

    Lies in [-1/(M-1), 1]; zero when all rows are mutually orthogonal.
    """
    H = ad.as_tensor(bank)
    if H.ndim != 2 or H.shape[0] < 2:
        raise ShapeMismatch(f"ortho_loss needs an M x d bank with M >= 2, got {H.shape}")
    m = H.shape[0]
    sq = (H * H).sum(axis=1, keepdims=True)
    for k, s in enumerate(sq.value[:, 0]):
        if not s > 0:
            raise ZeroNormRow(k + 1)
    unit = H / ad.sqrt(sq)
    gram = unit @ unit.T
    off_diag = gram.sum() - (unit * unit).sum()
    return off_diag * (1.0 / (m * (m - 1)))


def total_loss(ce, mse, ortho, weights: LossWeights = LossWeights()):
    return ce + weights.lambda1 * mse + weights.lambda2 * ortho
