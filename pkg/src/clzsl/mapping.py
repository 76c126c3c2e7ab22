"""Visual-to-semantic mapping: attribute attention over image regions,
attribute-specific feature pooling, semantic embedding, class scores, the
two training losses, and calibrated prediction.

Per sample: attention logits are the bilinear forms attribute_vector' @ W1
@ region_feature; attention is normalized over regions by default (each
attribute spreads a unit budget across regions), with normalization over
attributes available as a config switch.  The semantic embedding entry for
attribute k is attribute_vector_k' @ W2 @ pooled_feature_k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

ATTENTION_AXES = ("regions", "attributes")


@dataclass
class MapParams:
    """The two bilinear matrices of the mapping network, shape (attr_dim, feature_dim)."""

    W1: Tensor
    W2: Tensor

    @classmethod
    def create(cls, feature_dim: int, attr_dim: int, rng: np.random.Generator) -> "MapParams":
        bound = np.sqrt(6.0 / (feature_dim + attr_dim))
        shape = (attr_dim, feature_dim)
        return cls(
            W1=Tensor(rng.uniform(-bound, bound, shape), requires_grad=True),
            W2=Tensor(rng.uniform(-bound, bound, shape), requires_grad=True),
        )

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        return [("W1", self.W1), ("W2", self.W2)]

    def trainables(self) -> list[Tensor]:
        return [self.W1, self.W2]


def _attention_axis(axis: str) -> int:
    if axis not in ATTENTION_AXES:
        raise ValueError(f"attention axis must be one of {ATTENTION_AXES}, got {axis!r}")
    return 1 if axis == "regions" else 0


def attend(V, A, params: MapParams, axis: str = "regions") -> Tensor:
    """Attention weights (num_attributes x regions) from bilinear logits."""
    logits = T.matmul(T.matmul(A, params.W1), T.transpose(V))
    return T.softmax_axis(logits, axis=_attention_axis(axis))


def aggregate(alpha, V) -> Tensor:
    """Attribute-specific pooled features: row k is the alpha[k]-weighted region sum."""
    return T.matmul(alpha, V)


def embed(F, A, params: MapParams) -> Tensor:
    """Semantic embedding: entry k is attribute_vector_k' @ W2 @ F[k]."""
    projected = T.matmul(A, params.W2)
    return T.sum_axis(T.mul(projected, F), axis=1)


def semantic_embedding(V, A, params: MapParams, axis: str = "regions") -> Tensor:
    alpha = attend(V, A, params, axis)
    return embed(aggregate(alpha, V), A, params)


def batch_semantic_embeddings(features: np.ndarray, A, params: MapParams,
                              axis: str = "regions") -> Tensor:
    """Stacked embeddings (batch x num_attributes) for a (b, R, d) feature array.

    Shares the attribute-projection products across the batch; equals the
    per-sample composition exactly.
    """
    A = T.as_tensor(A)
    ax = _attention_axis(axis)
    aw1 = T.matmul(A, params.W1)
    aw2 = T.matmul(A, params.W2)
    rows = []
    for i in range(features.shape[0]):
        v = Tensor(features[i])
        alpha = T.softmax_axis(T.matmul(aw1, T.transpose(v)), axis=ax)
        pooled = T.matmul(alpha, v)
        psi = T.sum_axis(T.mul(aw2, pooled), axis=1)
        rows.append(T.reshape(psi, (1, -1)))
    return T.concat(rows, axis=0)


def class_scores(psi, Z) -> Tensor:
    """Per-class score: dot product of the embedding with each prototype row."""
    return T.matmul(T.as_tensor(Z), psi)


def batch_scores(psi_rows, Z) -> Tensor:
    """Score matrix (b x C) for stacked embeddings against prototype rows."""
    return T.matmul(psi_rows, T.transpose(T.as_tensor(Z)))


def ce_losses(scores, labels) -> Tensor:
    """Unreduced per-sample cross-entropy over (b x C_seen) score rows."""
    scores = T.as_tensor(scores)
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size and (labels.min() < 0 or labels.max() >= scores.shape[1]):
        raise ValueError(f"label out of range for {scores.shape[1]} seen classes")
    picked = T.take_per_row(T.log_softmax_axis(scores, axis=1), labels)
    return T.scale(picked, -1.0)


def ce_loss_per_sample(scores_seen, label: int) -> Tensor:
    """Cross-entropy of one sample's seen-class scores at its true label."""
    row = T.reshape(scores_seen, (1, -1))
    return T.reshape(ce_losses(row, [int(label)]), ())


def calibration_offsets(unseen_mask) -> np.ndarray:
    """Additive score offsets: +1 for unseen classes, -1 for seen."""
    mask = np.asarray(unseen_mask, dtype=bool)
    return np.where(mask, 1.0, -1.0)


def sc_losses(scores_all, unseen_mask) -> Tensor:
    """Unreduced per-sample self-calibration loss over (b x C) score rows.

    Per sample: minus the sum over unseen classes of the log-softmax (over
    all classes) of the offset-shifted scores.
    """
    scores_all = T.as_tensor(scores_all)
    mask = np.asarray(unseen_mask, dtype=bool)
    if mask.shape != (scores_all.shape[1],):
        raise ValueError(f"unseen mask of shape {mask.shape} does not match {scores_all.shape[1]} classes")
    shifted = T.add(scores_all, Tensor(calibration_offsets(mask)))
    logp = T.log_softmax_axis(shifted, axis=1)
    mask2d = Tensor(np.broadcast_to(mask, logp.shape).astype(np.float64))
    return T.scale(T.sum_axis(T.mul(logp, mask2d), axis=1), -1.0)


def sc_loss(psi, Z_all, unseen_mask) -> Tensor:
    """Self-calibration loss for one embedding (K,) or the mean over a (b, K) batch."""
    psi = T.as_tensor(psi)
    Z_all = T.as_tensor(Z_all)
    if psi.values.ndim == 1:
        scores = T.reshape(class_scores(psi, Z_all), (1, -1))
        return T.reshape(sc_losses(scores, unseen_mask), ())
    scores = T.matmul(psi, T.transpose(Z_all))
    return T.mean_all(sc_losses(scores, unseen_mask))


def predict(psi, Z, mode: str, unseen_mask=None) -> int:
    """Calibrated argmax over candidate prototype rows; returns a row index.

    In gzsl mode the +/-1 offsets are applied per ``unseen_mask``.  In czsl
    mode every candidate is unseen, so the shared offset cannot change the
    argmax and is skipped.
    """
    psi_v = T.as_tensor(psi).values
    z_v = T.as_tensor(Z).values
    if z_v.shape[0] == 0:
        raise ValueError("predict: empty candidate set")
    scores = z_v @ psi_v
    if mode == "gzsl":
        if unseen_mask is None:
            raise ValueError("gzsl prediction needs an unseen mask")
        scores = scores + calibration_offsets(unseen_mask)
    elif mode != "czsl":
        raise ValueError(f"unknown prediction mode {mode!r}")
    return int(np.argmax(scores))
