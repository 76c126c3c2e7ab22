"""Deterministic synthetic zero-shot corpora with known ground truth.

Each class owns a sparse positive prototype over the shared attribute set.
Samples plant their class's (dropout-thinned) attribute strengths into
randomly chosen regions as fixed feature-space directions, so instance-level
mismatch is literally "this sample never expressed attribute k", and
class-level imprecision is additive noise on the prototypes handed to
training.  The clean prototypes and per-sample realized attribute vectors
are written to a separate ground-truth sidecar that the corpus loader never
touches.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Corpus, SemanticSpace, save_corpus
from .errors import ConfigError, DataIntegrityError


@dataclass
class SynthConfig:
    c_seen: int = 20
    c_unseen: int = 5
    num_attributes: int = 16
    regions: int = 4
    feature_dim: int = 8
    attr_dim: int = 8
    samples_per_class: int = 30
    instance_dropout_rate: float = 0.0
    prototype_noise_sigma: float = 0.0
    feature_noise_sigma: float = 0.0
    feature_gain: float = 3.0  # planting strength; sets the class-score scale
    active_per_class: int = 0  # attributes active per class; 0 means K/8, at least 2
    seen_test_fraction: float = 0.2
    seed: int = 0

    @property
    def resolved_active_per_class(self) -> int:
        if self.active_per_class:
            return self.active_per_class
        return max(2, round(self.num_attributes / 8))

    def validate(self) -> None:
        for name in ("c_seen", "c_unseen", "num_attributes", "regions",
                     "feature_dim", "attr_dim", "samples_per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if not 0.0 <= self.instance_dropout_rate < 1.0:
            raise ConfigError(f"instance_dropout_rate must lie in [0, 1), got {self.instance_dropout_rate}")
        if self.prototype_noise_sigma < 0.0 or self.feature_noise_sigma < 0.0:
            raise ConfigError("noise sigmas must be nonnegative")
        if self.feature_gain <= 0.0:
            raise ConfigError(f"feature_gain must be positive, got {self.feature_gain}")
        if self.active_per_class < 0 or self.resolved_active_per_class > self.num_attributes:
            raise ConfigError(
                f"active_per_class must lie in [0, {self.num_attributes}], got {self.active_per_class}")
        if not 0.0 <= self.seen_test_fraction < 1.0:
            raise ConfigError(f"seen_test_fraction must lie in [0, 1), got {self.seen_test_fraction}")
        if self.num_attributes > self.regions * self.feature_dim:
            raise ConfigError(
                f"num_attributes={self.num_attributes} exceeds region capacity "
                f"regions*feature_dim={self.regions * self.feature_dim}"
            )


@dataclass
class GroundTruth:
    """Clean prototypes and per-sample realized attributes, for oracle checks only."""

    true_prototypes: np.ndarray  # (C, K)
    realized_attributes: np.ndarray  # (N, K), post-dropout


def _decorrelated_rows(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    """Random unit rows, orthonormalized in blocks of at most `dim` rows."""
    out = np.empty((rows, dim))
    for start in range(0, rows, dim):
        block = rng.standard_normal((min(dim, rows - start), dim))
        q, r = np.linalg.qr(block.T)
        q = q * np.sign(np.diag(r))  # fix QR sign ambiguity for determinism
        out[start:start + block.shape[0]] = q.T
    return out


def _semi_orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    m = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(m)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def generate(config: SynthConfig) -> tuple[Corpus, SemanticSpace, GroundTruth]:
    """Build a corpus, its semantic space, and the ground truth, all from one seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    c_total = config.c_seen + config.c_unseen
    k = config.num_attributes

    attributes = _decorrelated_rows(rng, k, config.attr_dim)
    # Feature-space direction of each attribute: a fixed semi-orthogonal image
    # of its word vector, so the bilinear model family can invert the planting.
    projection = _semi_orthogonal(rng, config.feature_dim, config.attr_dim)
    directions = attributes @ projection.T  # (K, feature_dim)

    n_active = config.resolved_active_per_class
    true_prototypes = np.zeros((c_total, k))
    seen_patterns: set[frozenset] = set()
    for c in range(c_total):
        # distinct attribute signatures per class, when combinatorially possible
        for _ in range(200):
            active = rng.choice(k, size=n_active, replace=False)
            pattern = frozenset(active.tolist())
            if pattern not in seen_patterns:
                seen_patterns.add(pattern)
                break
        true_prototypes[c, active] = rng.uniform(0.5, 1.5, size=n_active)

    n = c_total * config.samples_per_class
    features = np.zeros((n, config.regions, config.feature_dim))
    class_ids = np.empty(n, dtype=np.intp)
    splits = np.empty(n, dtype="<U11")
    realized = np.zeros((n, k))

    n_test = int(round(config.seen_test_fraction * config.samples_per_class))
    i = 0
    for c in range(c_total):
        for j in range(config.samples_per_class):
            z = true_prototypes[c].copy()
            active = np.flatnonzero(z)
            if config.instance_dropout_rate > 0.0:
                dropped = rng.random(active.size) < config.instance_dropout_rate
                z[active[dropped]] = 0.0
            for attr in np.flatnonzero(z):
                region = rng.integers(config.regions)
                features[i, region] += config.feature_gain * z[attr] * directions[attr]
            if config.feature_noise_sigma > 0.0:
                features[i] += rng.normal(0.0, config.feature_noise_sigma,
                                          (config.regions, config.feature_dim))
            realized[i] = z
            class_ids[i] = c
            if c >= config.c_seen:
                splits[i] = "test_unseen"
            else:
                splits[i] = "test_seen" if j >= config.samples_per_class - n_test else "train_seen"
            i += 1

    train_prototypes = true_prototypes.copy()
    if config.prototype_noise_sigma > 0.0:
        train_prototypes += rng.normal(0.0, config.prototype_noise_sigma, (c_total, k))

    corpus = Corpus(features, class_ids, splits, config.c_seen, config.c_unseen)
    space = SemanticSpace(attributes, train_prototypes)
    return corpus, space, GroundTruth(true_prototypes, realized)


def write_corpus_dir(config: SynthConfig, out_dir) -> Path:
    """Generate and write corpus + ground-truth sidecar; returns the directory."""
    corpus, space, truth = generate(config)
    out = Path(out_dir)
    save_corpus(corpus, space, out)

    blob = np.concatenate([
        np.ascontiguousarray(truth.true_prototypes, dtype="<f8").reshape(-1),
        np.ascontiguousarray(truth.realized_attributes, dtype="<f8").reshape(-1),
    ])
    bin_path = out / "ground_truth.bin"
    blob.tofile(bin_path)
    sidecar = {
        "format_version": 1,
        "num_classes": int(truth.true_prototypes.shape[0]),
        "num_attributes": int(truth.true_prototypes.shape[1]),
        "num_samples": int(truth.realized_attributes.shape[0]),
        "layout": ["true_prototypes", "realized_attributes"],
        "sha256": hashlib.sha256(bin_path.read_bytes()).hexdigest(),
        "generator_config": {f: getattr(config, f) for f in config.__dataclass_fields__},
    }
    (out / "ground_truth.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    return out


def load_ground_truth(corpus_dir) -> GroundTruth:
    root = Path(corpus_dir)
    meta_path = root / "ground_truth.json"
    if not meta_path.exists():
        raise DataIntegrityError(f"no ground-truth sidecar in {root}")
    meta = json.loads(meta_path.read_text())
    bin_path = root / "ground_truth.bin"
    if hashlib.sha256(bin_path.read_bytes()).hexdigest() != meta["sha256"]:
        raise DataIntegrityError("ground_truth.bin checksum mismatch")
    c, k, n = meta["num_classes"], meta["num_attributes"], meta["num_samples"]
    blob = np.fromfile(bin_path, dtype="<f8")
    if blob.size != c * k + n * k:
        raise DataIntegrityError("ground_truth.bin size does not match sidecar dimensions")
    return GroundTruth(blob[: c * k].reshape(c, k), blob[c * k:].reshape(n, k))
