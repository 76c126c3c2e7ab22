"""Curriculum sample weighting over a batch.

A small weight network turns per-sample loss features into a softmax
distribution over the batch: each sample's raw loss and its offset from a
slowly-moving percentile threshold pass through a two-layer ReLU net; the
result is concatenated with label and training-progress embeddings, pushed
through another two layers with a tanh in between, and the resulting batch
of scalar logits is temperature-softmaxed.  Minimizing the weighted loss
then shifts mass toward currently well-fit samples, smoothed by the
temperature.

The percentile threshold is the nearest-rank percentile of each batch's
losses folded into an exponential moving average that persists across
batches and epochs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

WEIGHTS_CSV_HEADER = "epoch,batch,sample_index,loss,omega"


@dataclass
class PercentileState:
    """EMA of the nearest-rank batch-loss percentile."""

    p: float
    kappa: float
    l_p: float = 0.0
    initialized: bool = False

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"percentile fraction must lie in (0, 1], got {self.p}")
        if not 0.0 <= self.kappa < 1.0:
            raise ValueError(f"EMA decay must lie in [0, 1), got {self.kappa}")


def nearest_rank_percentile(losses: np.ndarray, p: float) -> float:
    """The ceil(p*b)-th order statistic of the batch losses."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise ValueError("cannot take a percentile of an empty batch")
    k = math.ceil(p * losses.size)
    return float(np.sort(losses)[k - 1])


def update_percentile(state: PercentileState, batch_losses) -> PercentileState:
    """Fold one batch into the threshold: seed on first call, EMA afterwards."""
    q = nearest_rank_percentile(batch_losses, state.p)
    if state.initialized:
        state.l_p = state.kappa * state.l_p + (1.0 - state.kappa) * q
    else:
        state.l_p = q
        state.initialized = True
    return state


def relative_losses(batch_losses, state: PercentileState) -> np.ndarray:
    if not state.initialized:
        raise ValueError("percentile threshold not initialized; update it with a batch first")
    return np.asarray(batch_losses, dtype=np.float64) - state.l_p


@dataclass
class PclSizes:
    """Layer widths of the weight network; the depths and activations are fixed."""

    hidden1: int = 64
    delta_dim: int = 32
    label_dim: int = 32
    epoch_dim: int = 32
    hidden2: int = 128
    epoch_buckets: int = 100


@dataclass
class PclParams:
    """Weight-network parameters plus label/epoch embedding tables."""

    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor
    fc3_w: Tensor
    fc3_b: Tensor
    fc4_w: Tensor
    fc4_b: Tensor
    label_table: Tensor  # (num_seen_classes, label_dim)
    epoch_table: Tensor  # (epoch_buckets, epoch_dim)
    temperature: float
    sizes: PclSizes = field(default_factory=PclSizes)

    @classmethod
    def create(cls, num_seen_classes: int, temperature: float,
               rng: np.random.Generator, sizes: PclSizes | None = None) -> "PclParams":
        if temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        s = sizes or PclSizes()

        def linear(rows, cols):
            bound = np.sqrt(6.0 / (rows + cols))
            w = Tensor(rng.uniform(-bound, bound, (rows, cols)), requires_grad=True)
            b = Tensor(np.zeros(cols), requires_grad=True)
            return w, b

        fc1_w, fc1_b = linear(2, s.hidden1)
        fc2_w, fc2_b = linear(s.hidden1, s.delta_dim)
        fc3_w, fc3_b = linear(s.label_dim + s.epoch_dim + s.delta_dim, s.hidden2)
        fc4_w, fc4_b = linear(s.hidden2, 1)
        label_table = Tensor(rng.normal(0.0, 0.1, (num_seen_classes, s.label_dim)),
                             requires_grad=True)
        epoch_table = Tensor(rng.normal(0.0, 0.1, (s.epoch_buckets, s.epoch_dim)),
                             requires_grad=True)
        return cls(fc1_w, fc1_b, fc2_w, fc2_b, fc3_w, fc3_b, fc4_w, fc4_b,
                   label_table, epoch_table, float(temperature), s)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        return [(name, getattr(self, name)) for name in
                ("fc1_w", "fc1_b", "fc2_w", "fc2_b", "fc3_w", "fc3_b",
                 "fc4_w", "fc4_b", "label_table", "epoch_table")]

    def trainables(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]


def epoch_bucket(epoch_pct: float, n_buckets: int) -> int:
    """Discretize training progress in [0, 1] into an embedding row index."""
    if not 0.0 <= epoch_pct <= 1.0:
        raise ValueError(f"epoch percentage must lie in [0, 1], got {epoch_pct}")
    return min(int(epoch_pct * n_buckets), n_buckets - 1)


def weight_forward(l_b, l_rel, labels, epoch_pct: float, params: PclParams) -> Tensor:
    """Per-sample weights over one batch; positive, summing to one.

    ``l_b`` are the raw per-sample losses, ``l_rel`` their offsets from the
    percentile threshold.  Both enter as plain features (gradients flow only
    into the weight network's own parameters).
    """
    l_b = T.as_tensor(l_b)
    l_rel = T.as_tensor(l_rel)
    labels = np.asarray(labels, dtype=np.intp)
    b = l_b.shape[0]
    if l_rel.shape != (b,) or labels.shape != (b,):
        raise ValueError(f"batch length mismatch: {l_b.shape}, {l_rel.shape}, {labels.shape}")
    num_seen = params.label_table.shape[0]
    if labels.size and (labels.min() < 0 or labels.max() >= num_seen):
        raise ValueError(f"batch contains a label outside the {num_seen} seen classes")

    x = T.concat([T.reshape(l_b, (b, 1)), T.reshape(l_rel, (b, 1))], axis=1)
    hidden = T.relu(T.add(T.matmul(x, params.fc1_w), params.fc1_b))
    delta = T.add(T.matmul(hidden, params.fc2_w), params.fc2_b)

    bucket = epoch_bucket(epoch_pct, params.epoch_table.shape[0])
    label_emb = T.take_rows(params.label_table, labels)
    epoch_emb = T.take_rows(params.epoch_table, np.full(b, bucket, dtype=np.intp))

    joint = T.concat([label_emb, epoch_emb, delta], axis=1)
    hidden2 = T.tanh(T.add(T.matmul(joint, params.fc3_w), params.fc3_b))
    logits = T.reshape(T.add(T.matmul(hidden2, params.fc4_w), params.fc4_b), (b,))
    return T.softmax_axis(logits, axis=0, temperature=params.temperature)


def write_weight_rows(fh, epoch: int, batch: int, sample_indices, losses, omega) -> None:
    """Append one CSV row per sample to an open text stream."""
    for idx, loss, w in zip(sample_indices, losses, omega):
        fh.write(f"{epoch},{batch},{int(idx)},{float(loss)!r},{float(w)!r}\n")
