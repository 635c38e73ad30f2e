"""Pairwise relations, affinity matrices and the structural loss.

The structural loss compares the affinity matrix of the encoder embeddings
of a real batch with that of the denoiser's predictions, weighted by
``1 / t``. The denoiser minimises it; the discriminator's encoder maximises
it.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .models import Encoder, embed

# added under the square root when normalising embeddings for cosine
COSINE_EPS = 1e-8


class Relation(str, Enum):
    INNER_PRODUCT = "inner_product"
    COSINE = "cosine"
    NEG_L2 = "neg_l2"
    NEG_L1 = "neg_l1"


class Distance(str, Enum):
    L2_SQ = "l2_sq"
    L1 = "l1"


def normalize_rows(emb: Tensor) -> Tensor:
    norms = ad.sqrt(ad.add(ad.row_inner(emb, emb), COSINE_EPS))
    return ad.transpose(ad.div(ad.transpose(emb), norms))


def affinity(emb, rel: Relation | str = Relation.COSINE) -> Tensor:
    """``m[i, j] = R(emb[i], emb[j])`` for every ordered pair, diagonal included."""
    emb = ad.as_tensor(emb)
    rel = Relation(rel)
    if emb.ndim != 2:
        raise ShapeError(f"affinity needs (batch, features), got {emb.shape}")
    if emb.shape[0] < 2:
        raise ValueError(f"affinity needs at least 2 samples, got {emb.shape[0]}")
    if rel is Relation.INNER_PRODUCT:
        return ad.matmul(emb, ad.transpose(emb))
    if rel is Relation.COSINE:
        unit = normalize_rows(emb)
        return ad.matmul(unit, ad.transpose(unit))
    diff = ad.pairwise_diff(emb)
    if rel is Relation.NEG_L2:
        return ad.neg(ad.sqrt(ad.sum(ad.square(diff), axis=-1)))
    return ad.neg(ad.sum(ad.abs(diff), axis=-1))


def relation_value(a: np.ndarray, b: np.ndarray, rel: Relation | str) -> float:
    """Scalar ``R(a, b)`` on plain vectors; the brute-force reference for ``affinity``."""
    rel = Relation(rel)
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if rel is Relation.INNER_PRODUCT:
        return float(np.dot(a, b))
    if rel is Relation.COSINE:
        return float(np.dot(a, b) / (np.sqrt(np.dot(a, a) + COSINE_EPS) * np.sqrt(np.dot(b, b) + COSINE_EPS)))
    if rel is Relation.NEG_L2:
        return -float(np.sqrt(np.sum((a - b) ** 2)))
    return -float(np.sum(np.abs(a - b)))


def _off_diagonal_mask(n: int) -> np.ndarray:
    return 1.0 - np.eye(n)


def structural_distance(real, fake, dist: Distance | str = Distance.L2_SQ,
                        exclude_diagonal: bool = False) -> Tensor:
    """Mean elementwise discrepancy between two affinity matrices."""
    real, fake = ad.as_tensor(real), ad.as_tensor(fake)
    dist = Distance(dist)
    if real.shape != fake.shape or real.ndim != 2 or real.shape[0] != real.shape[1]:
        raise ShapeError(f"affinity shapes differ or are not square: {real.shape} vs {fake.shape}")
    n = real.shape[0]
    diff = ad.sub(real, fake)
    per_pair = ad.square(diff) if dist is Distance.L2_SQ else ad.abs(diff)
    if exclude_diagonal:
        return ad.scale(ad.sum(ad.mul(per_pair, _off_diagonal_mask(n))), 1.0 / (n * (n - 1)))
    return ad.scale(ad.sum(per_pair), 1.0 / (n * n))


def time_weight(t: float) -> float:
    return 1.0 / t


def structural_loss(x0, x0_hat, t: float, enc: Encoder, rel: Relation | str = Relation.COSINE,
                    dist: Distance | str = Distance.L2_SQ, exclude_diagonal: bool = False,
                    t_min: float = 1e-3) -> Tensor:
    """``(1/t) * D(M(enc(x0)), M(enc(x0_hat)))``.

    Gradients reach ``x0_hat`` (and through it the denoiser) whether or not
    the encoder is frozen, and reach the encoder when it is trainable.
    """
    t = float(t)
    if not t_min <= t <= 1.0:
        raise ValueError(f"t={t!r} outside [{t_min}, 1]")
    x0, x0_hat = ad.as_tensor(x0), ad.as_tensor(x0_hat)
    if x0.shape != x0_hat.shape:
        raise ShapeError(f"x0 shape {x0.shape} != prediction shape {x0_hat.shape}")
    m_real = affinity(embed(enc, x0), rel)
    m_fake = affinity(embed(enc, x0_hat), rel)
    return ad.scale(structural_distance(m_real, m_fake, dist, exclude_diagonal), time_weight(t))
