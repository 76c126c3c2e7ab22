"""Prototype refinement from accumulated semantic embeddings.

During an epoch a ledger accumulates, per seen class, the running sum of
the semantic embeddings produced for that class's samples.  At the epoch
boundary each seen prototype moves by convex combination toward its class
mean; each unseen prototype moves toward the average epoch mean of its k
most similar seen classes, with similarity read off the current prototype
matrix times its own transpose.  Updated prototypes are what evaluation
uses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SemanticSpace, save_corpus  # noqa: F401  (save format shared via data)

log = logging.getLogger(__name__)


class MappingLedger:
    """Per-class running sum and count of embeddings for the current epoch."""

    def __init__(self, num_seen: int):
        self.num_seen = int(num_seen)
        self._sums: dict[int, np.ndarray] = {}
        self._counts: dict[int, int] = {}

    def record(self, class_id: int, psi) -> "MappingLedger":
        class_id = int(class_id)
        if not 0 <= class_id < self.num_seen:
            raise ValueError(f"ledger only tracks seen classes, got class_id {class_id}")
        vec = np.asarray(psi, dtype=np.float64)
        if class_id in self._sums:
            self._sums[class_id] = self._sums[class_id] + vec
            self._counts[class_id] += 1
        else:
            self._sums[class_id] = vec.copy()
            self._counts[class_id] = 1
        return self

    def count(self, class_id: int) -> int:
        return self._counts.get(int(class_id), 0)

    def mean(self, class_id: int) -> np.ndarray:
        c = int(class_id)
        if c not in self._sums:
            raise KeyError(f"no embeddings recorded for class {c} this epoch")
        return self._sums[c] / self._counts[c]

    def classes_with_data(self) -> list[int]:
        return sorted(self._sums)

    def reset(self) -> None:
        self._sums.clear()
        self._counts.clear()


@dataclass
class PrototypeStore:
    """Current and original prototype rows plus the update hyperparameters."""

    current: np.ndarray  # (C, K), mutated by updates
    original: np.ndarray  # (C, K), untouched
    num_seen: int
    beta: float
    k_neighbors: int

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not 1 <= self.k_neighbors <= self.num_seen:
            raise ValueError(
                f"k_neighbors must lie in [1, {self.num_seen}], got {self.k_neighbors}")

    @classmethod
    def from_space(cls, space: SemanticSpace, num_seen: int, beta: float,
                   k_neighbors: int) -> "PrototypeStore":
        return cls(space.prototypes.copy(), space.prototypes.copy(),
                   num_seen, beta, k_neighbors)

    @property
    def num_unseen(self) -> int:
        return self.current.shape[0] - self.num_seen


def update_seen(store: PrototypeStore, ledger: MappingLedger) -> PrototypeStore:
    """Move each seen prototype toward its epoch mean; classes without data skip."""
    if store.beta == 1.0:
        return store
    recorded = set(ledger.classes_with_data())
    for c in range(store.num_seen):
        if c not in recorded:
            log.warning("prototype update: seen class %d had no samples this epoch, skipped", c)
            continue
        store.current[c] = store.beta * store.current[c] + (1.0 - store.beta) * ledger.mean(c)
    return store


def semantic_knn(store: PrototypeStore) -> np.ndarray:
    """Per unseen class, the ids of the k most similar seen classes.

    Similarity is the dot product between current prototype rows; ties break
    toward the lower class id.
    """
    sims = store.current @ store.current.T
    seen_ids = np.arange(store.num_seen)
    out = np.empty((store.num_unseen, store.k_neighbors), dtype=np.intp)
    for row, c in enumerate(range(store.num_seen, store.current.shape[0])):
        order = np.lexsort((seen_ids, -sims[c, :store.num_seen]))
        out[row] = order[:store.k_neighbors]
    return out


def update_unseen(store: PrototypeStore, ledger: MappingLedger, neighbors: np.ndarray,
                  source: str = "epoch_means") -> PrototypeStore:
    """Move each unseen prototype toward the average of its neighbors' values.

    ``source`` picks what a neighbor contributes: its epoch-mean embedding
    (neighbors without data this epoch are dropped and the average shrinks),
    or its already-updated seen prototype row.
    """
    if source not in ("epoch_means", "updated_seen"):
        raise ValueError(f"unknown unseen-update source {source!r}")
    if store.beta == 1.0:
        return store
    neighbors = np.asarray(neighbors, dtype=np.intp)
    if neighbors.shape[0] != store.num_unseen:
        raise ValueError(f"expected {store.num_unseen} neighbor rows, got {neighbors.shape[0]}")
    for row, c in enumerate(range(store.num_seen, store.current.shape[0])):
        if source == "updated_seen":
            contributions = [store.current[j] for j in neighbors[row]]
        else:
            contributions = []
            for j in neighbors[row]:
                if ledger.count(j) == 0:
                    log.warning(
                        "prototype update: neighbor class %d of unseen class %d has no "
                        "epoch data, dropped from the average", j, c)
                    continue
                contributions.append(ledger.mean(j))
        if not contributions:
            log.warning("prototype update: unseen class %d has no usable neighbors, skipped", c)
            continue
        mean = np.mean(contributions, axis=0)
        store.current[c] = store.beta * store.current[c] + (1.0 - store.beta) * mean
    return store


def export_snapshot(store: PrototypeStore, out_dir, tag: str) -> Path:
    """Write the current prototype rows as raw float64 plus a tiny manifest."""
    import hashlib
    import json

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bin_path = out / f"prototypes_{tag}.bin"
    np.ascontiguousarray(store.current, dtype="<f8").tofile(bin_path)
    meta = {
        "format_version": 1,
        "rows": int(store.current.shape[0]),
        "cols": int(store.current.shape[1]),
        "num_seen": store.num_seen,
        "sha256": hashlib.sha256(bin_path.read_bytes()).hexdigest(),
    }
    meta_path = out / f"prototypes_{tag}.json"
    meta_path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return meta_path
