"""Corpus container, split handling, and the on-disk corpus format.

A corpus directory holds ``manifest.json`` plus raw little-endian float64
row-major binaries:

* ``features.bin``    -- all samples concatenated, each a (regions x feature_dim) grid
* ``attributes.bin``  -- attribute word vectors, (num_attributes x attr_dim)
* ``prototypes.bin``  -- class prototype rows, seen classes first, ((C_s+C_u) x num_attributes)

The manifest carries ``format_version``, the dimension block, per-file
sha256 checksums (verified when present), and a sample table with
``class_id``, ``split`` and the byte ``offset`` of each sample inside
``features.bin``.  See README for the full field list.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataIntegrityError

FORMAT_VERSION = 1
SPLITS = ("train_seen", "test_seen", "test_unseen")


@dataclass
class Corpus:
    """Per-sample region-feature grids with class ids and split tags."""

    features: np.ndarray  # (N, regions, feature_dim)
    class_ids: np.ndarray  # (N,) int
    splits: np.ndarray  # (N,) str, one of SPLITS
    num_seen: int
    num_unseen: int

    @property
    def num_classes(self) -> int:
        return self.num_seen + self.num_unseen

    @property
    def regions(self) -> int:
        return self.features.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[2]

    def indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return np.flatnonzero(self.splits == split)


@dataclass
class SemanticSpace:
    """Attribute word vectors and the class prototype matrix (seen rows first)."""

    attributes: np.ndarray  # (K, attr_dim)
    prototypes: np.ndarray  # (C, K)

    @property
    def num_attributes(self) -> int:
        return self.attributes.shape[0]


@dataclass
class Batch:
    indices: np.ndarray  # (b,) corpus indices
    features: np.ndarray  # (b, regions, feature_dim)
    class_ids: np.ndarray  # (b,)

    def __len__(self) -> int:
        return len(self.indices)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _read_matrix(path: Path, shape: tuple, what: str) -> np.ndarray:
    expected = int(np.prod(shape)) * 8
    actual = path.stat().st_size
    if actual != expected:
        raise DataIntegrityError(
            f"{what}: {path.name} holds {actual} bytes, manifest dimensions imply {expected}"
        )
    return np.fromfile(path, dtype="<f8").reshape(shape)


def validate_corpus(corpus: Corpus) -> None:
    """Check split/label consistency; raises DataIntegrityError on violation."""
    if len(corpus.class_ids) == 0:
        raise DataIntegrityError("corpus holds zero samples")
    seen = corpus.num_seen
    total = corpus.num_classes
    for i, (cid, split) in enumerate(zip(corpus.class_ids, corpus.splits)):
        if split not in SPLITS:
            raise DataIntegrityError(f"sample {i}: unknown split tag {split!r}")
        if split == "test_unseen":
            if not seen <= cid < total:
                raise DataIntegrityError(
                    f"sample {i}: test_unseen class_id {cid} outside [{seen}, {total})"
                )
        elif not 0 <= cid < seen:
            raise DataIntegrityError(f"sample {i}: {split} class_id {cid} outside [0, {seen})")


def load_corpus(manifest_path, verify_checksums: bool = True,
                normalize_prototypes: bool = False) -> tuple[Corpus, SemanticSpace]:
    """Load and fully validate a corpus directory from its manifest.

    ``normalize_prototypes`` rescales each prototype row to unit L2 norm on
    ingestion; by default rows are taken verbatim.
    """
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    if not manifest_path.exists():
        raise DataIntegrityError(f"manifest not found: {manifest_path}")
    root = manifest_path.parent
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataIntegrityError(f"manifest is not valid JSON: {exc}") from exc

    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DataIntegrityError(f"unsupported corpus format_version {version!r}, expected {FORMAT_VERSION}")

    try:
        dims = manifest["dims"]
        regions, fdim = int(dims["regions"]), int(dims["feature_dim"])
        adim, katt = int(dims["attr_dim"]), int(dims["num_attributes"])
        c_seen, c_unseen = int(dims["num_seen"]), int(dims["num_unseen"])
        files = manifest["files"]
        samples = manifest["samples"]
    except KeyError as exc:
        raise DataIntegrityError(f"manifest missing required field: {exc}") from exc

    if not samples:
        raise DataIntegrityError("corpus holds zero samples")

    paths = {}
    for key in ("features", "attributes", "prototypes"):
        entry = files.get(key)
        if entry is None:
            raise DataIntegrityError(f"manifest lists no {key} file")
        path = root / entry["path"]
        if not path.exists():
            raise DataIntegrityError(f"referenced file missing: {path}")
        digest = entry.get("sha256")
        if verify_checksums and digest is not None and _sha256(path) != digest:
            raise DataIntegrityError(f"checksum mismatch for {path.name}")
        paths[key] = path

    n = len(samples)
    attributes = _read_matrix(paths["attributes"], (katt, adim), "attributes")
    prototypes = _read_matrix(paths["prototypes"], (c_seen + c_unseen, katt), "prototypes")
    features = _read_matrix(paths["features"], (n, regions, fdim), "features")

    sample_bytes = regions * fdim * 8
    class_ids = np.empty(n, dtype=np.intp)
    splits = np.empty(n, dtype="<U11")
    for i, row in enumerate(samples):
        offset = int(row["offset"])
        if offset != i * sample_bytes:
            raise DataIntegrityError(f"sample {i}: offset {offset} does not match row-major layout")
        class_ids[i] = int(row["class_id"])
        splits[i] = row["split"]

    if not np.all(np.isfinite(prototypes)):
        raise DataIntegrityError("prototypes contain non-finite values")
    if normalize_prototypes:
        norms = np.linalg.norm(prototypes, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        prototypes = prototypes / norms

    corpus = Corpus(features, class_ids, splits, c_seen, c_unseen)
    validate_corpus(corpus)
    return corpus, SemanticSpace(attributes, prototypes)


def save_corpus(corpus: Corpus, space: SemanticSpace, out_dir) -> Path:
    """Write a corpus directory; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, regions, fdim = corpus.features.shape
    sample_bytes = regions * fdim * 8

    arrays = {
        "features": np.ascontiguousarray(corpus.features, dtype="<f8"),
        "attributes": np.ascontiguousarray(space.attributes, dtype="<f8"),
        "prototypes": np.ascontiguousarray(space.prototypes, dtype="<f8"),
    }
    files = {}
    for key, arr in arrays.items():
        path = out / f"{key}.bin"
        arr.tofile(path)
        files[key] = {"path": path.name, "sha256": _sha256(path)}

    manifest = {
        "format_version": FORMAT_VERSION,
        "dims": {
            "regions": regions,
            "feature_dim": fdim,
            "attr_dim": int(space.attributes.shape[1]),
            "num_attributes": int(space.attributes.shape[0]),
            "num_seen": corpus.num_seen,
            "num_unseen": corpus.num_unseen,
        },
        "files": files,
        "samples": [
            {"class_id": int(c), "split": str(s), "offset": i * sample_bytes}
            for i, (c, s) in enumerate(zip(corpus.class_ids, corpus.splits))
        ],
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest_path


def batch_iter(corpus: Corpus, batch_size: int, epoch_seed: int):
    """One shuffled pass over train_seen samples; the short final batch is kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    train = corpus.indices("train_seen")
    if len(train) == 0:
        raise DataIntegrityError("training split is empty")
    order = train[np.random.default_rng(epoch_seed).permutation(len(train))]
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield Batch(idx, corpus.features[idx], corpus.class_ids[idx])
