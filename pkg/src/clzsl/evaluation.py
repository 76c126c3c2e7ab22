"""Per-class top-1 accuracies and their harmonic mean over test splits.

Accuracy is averaged over classes, not samples, so class imbalance cannot
inflate the score.  Percentages are kept at full precision internally and
only rounded when rendered.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Corpus
from .errors import DataIntegrityError
from .mapping import MapParams, predict, semantic_embedding
from .prototypes import PrototypeStore
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class Metrics:
    acc_czsl: float | None = None
    acc_seen: float | None = None
    acc_unseen: float | None = None
    harmonic: float | None = None

    def as_dict(self) -> dict:
        return {
            "acc_czsl": self.acc_czsl,
            "acc_seen": self.acc_seen,
            "acc_unseen": self.acc_unseen,
            "harmonic": self.harmonic,
        }


def per_class_top1(predictions, labels, class_ids) -> float:
    """Mean over classes of the per-class hit rate, as a percentage.

    Classes from ``class_ids`` with no samples are excluded with a warning.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(f"prediction/label length mismatch: {predictions.shape} vs {labels.shape}")
    accs = []
    for c in class_ids:
        mask = labels == c
        total = int(mask.sum())
        if total == 0:
            log.warning("per-class accuracy: class %d has no samples, excluded", c)
            continue
        accs.append(float((predictions[mask] == c).sum()) / total)
    return 100.0 * float(np.mean(accs)) if accs else 0.0


def harmonic_mean(u: float, s: float) -> float:
    """2US/(U+S); zero when either accuracy is zero."""
    if u < 0.0 or s < 0.0:
        raise ValueError(f"accuracies must be nonnegative, got {u}, {s}")
    if u == 0.0 or s == 0.0:
        return 0.0
    return 2.0 * u * s / (u + s)


def _predictions(params: MapParams, attributes: np.ndarray, prototypes: np.ndarray,
                 corpus: Corpus, split: str, mode: str, attention_axis: str) -> np.ndarray:
    idx = corpus.indices(split)
    if len(idx) == 0:
        raise DataIntegrityError(f"split {split!r} is empty")
    a = Tensor(attributes)
    num_seen = corpus.num_seen
    if mode == "czsl":
        candidates = Tensor(prototypes[num_seen:])
        offset = num_seen
        mask = None
    else:
        candidates = Tensor(prototypes)
        offset = 0
        mask = np.arange(prototypes.shape[0]) >= num_seen
    preds = np.empty(len(idx), dtype=np.intp)
    for j, i in enumerate(idx):
        psi = semantic_embedding(Tensor(corpus.features[i]), a, params, attention_axis)
        preds[j] = offset + predict(psi, candidates, mode, unseen_mask=mask)
    return preds


def evaluate(params: MapParams, attributes: np.ndarray, store: PrototypeStore,
             corpus: Corpus, mode: str, attention_axis: str = "regions") -> Metrics:
    """CZSL or GZSL metrics for a parameter snapshot, using current prototypes."""
    prototypes = store.current
    if mode == "czsl":
        preds = _predictions(params, attributes, prototypes, corpus,
                             "test_unseen", "czsl", attention_axis)
        labels = corpus.class_ids[corpus.indices("test_unseen")]
        unseen_ids = range(corpus.num_seen, corpus.num_classes)
        return Metrics(acc_czsl=per_class_top1(preds, labels, unseen_ids))
    if mode != "gzsl":
        raise ValueError(f"unknown evaluation mode {mode!r}")
    preds_u = _predictions(params, attributes, prototypes, corpus,
                           "test_unseen", "gzsl", attention_axis)
    labels_u = corpus.class_ids[corpus.indices("test_unseen")]
    u = per_class_top1(preds_u, labels_u, range(corpus.num_seen, corpus.num_classes))
    preds_s = _predictions(params, attributes, prototypes, corpus,
                           "test_seen", "gzsl", attention_axis)
    labels_s = corpus.class_ids[corpus.indices("test_seen")]
    s = per_class_top1(preds_s, labels_s, range(corpus.num_seen))
    return Metrics(acc_seen=s, acc_unseen=u, harmonic=harmonic_mean(u, s))
