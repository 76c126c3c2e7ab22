"""Alternating optimization of the mapping network and the weight network.

Each step runs two phases over the same batch.  Phase one: forward with the
mapping parameters, fold the batch losses into the percentile threshold,
compute sample weights with the weight network held constant, and take an
RMSprop step on the weighted loss.  Phase two: forward again with the fresh
mapping parameters (grad-free), rebuild the weights as a function of the
weight network, and take an Adam step on the re-weighted loss.  Prototype
updates run at epoch boundaries once the configured start epoch is reached.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import curriculum as pcl
from . import mapping as mapnet
from . import prototypes as pup
from . import tensor as T
from .config import TrainConfig
from .data import Corpus, SemanticSpace, batch_iter
from .errors import DataIntegrityError, NumericError
from .evaluation import Metrics, evaluate
from .optim import Adam, RMSprop, clip_global_norm
from .tensor import Tape, Tensor, backward

log = logging.getLogger(__name__)


def epoch_seed(seed: int, epoch: int) -> int:
    """Well-mixed deterministic shuffle seed for one epoch of one run."""
    return int(np.random.SeedSequence((seed, epoch)).generate_state(1)[0])


@dataclass
class TrainerState:
    theta_opt: RMSprop
    phi_opt: Adam
    percentile: pcl.PercentileState
    store: pup.PrototypeStore
    ledger: pup.MappingLedger
    aux_params: mapnet.MapParams | None = None
    aux_opt: RMSprop | None = None


@dataclass
class RunResult:
    params: mapnet.MapParams
    pcl_params: pcl.PclParams
    store: pup.PrototypeStore
    percentile: pcl.PercentileState
    history: list[dict] = field(default_factory=list)


def init_run(corpus: Corpus, space: SemanticSpace, config: TrainConfig
             ) -> tuple[mapnet.MapParams, pcl.PclParams, TrainerState]:
    config.validate()
    d, d_a = corpus.feature_dim, space.attributes.shape[1]
    theta = mapnet.MapParams.create(d, d_a, np.random.default_rng(
        np.random.SeedSequence((config.seed, 1))))
    sizes = pcl.PclSizes(config.pcl_hidden1, config.pcl_delta_dim, config.pcl_label_dim,
                         config.pcl_epoch_dim, config.pcl_hidden2, config.pcl_epoch_buckets)
    phi = pcl.PclParams.create(corpus.num_seen, config.temperature, np.random.default_rng(
        np.random.SeedSequence((config.seed, 2))), sizes)
    store = pup.PrototypeStore.from_space(space, corpus.num_seen, config.beta,
                                          min(config.k_neighbors, corpus.num_seen))
    state = TrainerState(
        theta_opt=RMSprop(theta.trainables(), config.lr_theta),
        phi_opt=Adam(phi.trainables(), config.lr_phi),
        percentile=pcl.PercentileState(p=config.percentile, kappa=config.kappa),
        store=store,
        ledger=pup.MappingLedger(corpus.num_seen),
    )
    if config.pup_branch == "independent":
        state.aux_params = mapnet.MapParams.create(d, d_a, np.random.default_rng(
            np.random.SeedSequence((config.seed, 3))))
        state.aux_opt = RMSprop(state.aux_params.trainables(), config.lr_theta)
    return theta, phi, state


def batch_loss_vector(features: np.ndarray, labels: np.ndarray, attributes: Tensor,
                      prototypes: np.ndarray, num_seen: int, params: mapnet.MapParams,
                      eta: float, axis: str) -> tuple[Tensor, Tensor]:
    """Per-sample losses (cross-entropy plus eta-weighted self-calibration).

    Returns the stacked embeddings and the (b,) loss vector; differentiable
    when called under a tape with grad-tracked parameters.
    """
    psi = mapnet.batch_semantic_embeddings(features, attributes, params, axis)
    scores_seen = mapnet.batch_scores(psi, prototypes[:num_seen])
    losses = mapnet.ce_losses(scores_seen, labels)
    if eta != 0.0:
        unseen_mask = np.arange(prototypes.shape[0]) >= num_seen
        scores_all = mapnet.batch_scores(psi, prototypes)
        sc = mapnet.sc_losses(scores_all, unseen_mask)
        losses = T.add(losses, T.scale(sc, eta))
    return psi, losses


def train_step(batch, theta: mapnet.MapParams, phi: pcl.PclParams, state: TrainerState,
               config: TrainConfig, epoch: int, batch_index: int, epoch_pct: float,
               attributes: np.ndarray) -> tuple[mapnet.MapParams, pcl.PclParams, dict]:
    """One alternating step over a batch; parameters are updated in place."""
    a = Tensor(attributes)
    prototypes = state.store.current
    b = len(batch)

    # phase one: mapping update under weights held constant
    with Tape() as tape:
        _, losses = batch_loss_vector(batch.features, batch.class_ids, a, prototypes,
                                      state.store.num_seen, theta, config.eta,
                                      config.attention_axis)
    loss_values = losses.values.copy()
    if not np.all(np.isfinite(loss_values)):
        raise NumericError(f"non-finite loss at epoch {epoch}, batch {batch_index}")

    pcl.update_percentile(state.percentile, loss_values)
    rel = pcl.relative_losses(loss_values, state.percentile)
    if config.pcl_enabled:
        omega = pcl.weight_forward(loss_values, rel, batch.class_ids, epoch_pct, phi).values
    else:
        omega = np.full(b, 1.0 / b)

    with tape:  # resume recording on the same tape
        weighted = T.matmul(Tensor(omega), losses)
    grads = backward(tape, weighted)
    theta_grads = {p: g for p, g in grads.items() if p in (theta.W1, theta.W2)}
    if config.grad_clip_norm > 0.0:
        theta_grads = clip_global_norm(theta_grads, config.grad_clip_norm)
    state.theta_opt.step(theta_grads)

    diagnostics = {
        "theta_loss": float(weighted.values),
        "omega": omega,
        "losses": loss_values,
        "l_p": state.percentile.l_p,
    }

    # phase two: weight-network update at the fresh mapping parameters
    psi2 = None
    if config.pcl_enabled or config.pup_enabled:
        psi2, losses2 = batch_loss_vector(batch.features, batch.class_ids, a, prototypes,
                                          state.store.num_seen, theta, config.eta,
                                          config.attention_axis)
        losses2_values = losses2.values
        if not np.all(np.isfinite(losses2_values)):
            raise NumericError(f"non-finite loss at epoch {epoch}, batch {batch_index}")
    else:
        losses2_values = loss_values
    if config.pcl_enabled:
        rel2 = pcl.relative_losses(losses2_values, state.percentile)
        with Tape() as tape2:
            omega2 = pcl.weight_forward(losses2_values, rel2, batch.class_ids, epoch_pct, phi)
            weighted2 = T.matmul(omega2, Tensor(losses2_values))
        phi_grads = backward(tape2, weighted2)
        phi_grads = {p: g for p, g in phi_grads.items() if p in set(phi.trainables())}
        if config.grad_clip_norm > 0.0:
            phi_grads = clip_global_norm(phi_grads, config.grad_clip_norm)
        state.phi_opt.step(phi_grads)
        diagnostics["phi_loss"] = float(weighted2.values)
    else:
        diagnostics["phi_loss"] = float(np.dot(omega, losses2_values))

    # ledger feeding the prototype update
    if config.pup_enabled:
        if state.aux_params is not None:
            with Tape() as tape3:
                psi_aux, ce_aux = batch_loss_vector(batch.features, batch.class_ids, a,
                                                    prototypes, state.store.num_seen,
                                                    state.aux_params, 0.0,
                                                    config.attention_axis)
                mean_ce = T.mean_all(ce_aux)
            aux_grads = backward(tape3, mean_ce)
            aux_grads = {p: g for p, g in aux_grads.items()
                         if p in (state.aux_params.W1, state.aux_params.W2)}
            if config.grad_clip_norm > 0.0:
                aux_grads = clip_global_norm(aux_grads, config.grad_clip_norm)
            state.aux_opt.step(aux_grads)
            recorded = psi_aux.values
        else:
            recorded = psi2.values
        for i, cid in enumerate(batch.class_ids):
            state.ledger.record(int(cid), recorded[i])

    return theta, phi, diagnostics


def run(corpus: Corpus, space: SemanticSpace, config: TrainConfig,
        weights_log=None, checkpoint_dir=None) -> RunResult:
    """Full training: epochs of alternating steps, prototype updates, metrics."""
    theta, phi, state = init_run(corpus, space, config)
    result = RunResult(theta, phi, state.store, state.percentile)
    if weights_log is not None:
        weights_log.write(pcl.WEIGHTS_CSV_HEADER + "\n")

    last_checkpoint = None
    for epoch in range(1, config.epochs + 1):
        epoch_pct = (epoch - 1) / config.epochs
        theta_losses, phi_losses = [], []
        for bi, batch in enumerate(batch_iter(corpus, config.batch_size,
                                              epoch_seed(config.seed, epoch))):
            theta, phi, diag = train_step(batch, theta, phi, state, config,
                                          epoch, bi, epoch_pct, space.attributes)
            theta_losses.append(diag["theta_loss"])
            phi_losses.append(diag["phi_loss"])
            if weights_log is not None:
                pcl.write_weight_rows(weights_log, epoch, bi, batch.indices,
                                      diag["losses"], diag["omega"])

        if config.pup_enabled and epoch >= config.update_start_epoch:
            pup.update_seen(state.store, state.ledger)
            neighbors = pup.semantic_knn(state.store)
            pup.update_unseen(state.store, state.ledger, neighbors,
                              config.unseen_update_source)
        state.ledger.reset()

        entry = {"epoch": epoch,
                 "theta_loss": float(np.mean(theta_losses)),
                 "phi_loss": float(np.mean(phi_losses)),
                 "l_p": state.percentile.l_p}
        entry.update(_epoch_metrics(theta, space, state.store, corpus, config))
        result.history.append(entry)

        if checkpoint_dir is not None and config.checkpoint_every > 0 \
                and epoch % config.checkpoint_every == 0:
            save_checkpoint(checkpoint_dir, epoch, theta, phi, state, config)
            last_checkpoint = epoch
    if checkpoint_dir is not None and last_checkpoint != config.epochs:
        save_checkpoint(checkpoint_dir, config.epochs, theta, phi, state, config)
    return result


def _epoch_metrics(theta, space, store, corpus, config) -> dict:
    czsl = evaluate(theta, space.attributes, store, corpus, "czsl", config.attention_axis)
    gzsl = evaluate(theta, space.attributes, store, corpus, "gzsl", config.attention_axis)
    return {"czsl_acc": czsl.acc_czsl, "gzsl_unseen": gzsl.acc_unseen,
            "gzsl_seen": gzsl.acc_seen, "gzsl_h": gzsl.harmonic}


# ---------------------------------------------------------------- checkpoints


def _named_arrays(theta, phi, state: TrainerState) -> list[tuple[str, np.ndarray]]:
    arrays = [("theta.W1", theta.W1.values), ("theta.W2", theta.W2.values)]
    arrays += [(f"phi.{name}", t.values) for name, t in phi.named_tensors()]
    arrays += [(f"rms.v{i}", v) for i, v in enumerate(state.theta_opt.state_arrays())]
    arrays += [(f"adam.s{i}", v) for i, v in enumerate(state.phi_opt.state_arrays())]
    arrays += [("store.current", state.store.current), ("store.original", state.store.original)]
    if state.aux_params is not None:
        arrays += [("aux.W1", state.aux_params.W1.values), ("aux.W2", state.aux_params.W2.values)]
        arrays += [(f"aux_rms.v{i}", v) for i, v in enumerate(state.aux_opt.state_arrays())]
    return arrays


def save_checkpoint(out_dir, epoch: int, theta, phi, state: TrainerState,
                    config: TrainConfig) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays = _named_arrays(theta, phi, state)
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    bin_path = out / f"checkpoint_{epoch:04d}.bin"
    bin_path.write_bytes(blob)
    offset = 0
    entries = []
    for name, a in arrays:
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size * 8
    meta = {
        "format_version": 1,
        "epoch": epoch,
        "arrays": entries,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "scalars": {
            "adam_t": state.phi_opt.t,
            "percentile_l_p": state.percentile.l_p,
            "percentile_p": state.percentile.p,
            "percentile_kappa": state.percentile.kappa,
            "percentile_initialized": state.percentile.initialized,
            "num_seen": state.store.num_seen,
            "beta": state.store.beta,
            "k_neighbors": state.store.k_neighbors,
        },
        "config": config.as_dict(),
    }
    meta_path = out / f"checkpoint_{epoch:04d}.json"
    meta_path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return meta_path


@dataclass
class Checkpoint:
    epoch: int
    params: mapnet.MapParams
    pcl_params: pcl.PclParams
    store: pup.PrototypeStore
    percentile: pcl.PercentileState
    config: TrainConfig
    arrays: dict[str, np.ndarray]


def load_checkpoint(meta_path) -> Checkpoint:
    meta_path = Path(meta_path)
    if not meta_path.exists():
        raise DataIntegrityError(f"checkpoint not found: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataIntegrityError(f"checkpoint metadata is not valid JSON: {exc}") from exc
    if meta.get("format_version") != 1:
        raise DataIntegrityError("unsupported checkpoint format_version")
    bin_path = meta_path.with_suffix(".bin")
    if not bin_path.exists():
        raise DataIntegrityError(f"checkpoint payload missing: {bin_path}")
    blob = bin_path.read_bytes()
    if hashlib.sha256(blob).hexdigest() != meta["sha256"]:
        raise DataIntegrityError(f"checkpoint {bin_path.name} is corrupted (checksum mismatch)")

    arrays = {}
    for entry in meta["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arrays[entry["name"]] = np.frombuffer(
            blob, dtype="<f8", count=count, offset=start).reshape(shape).copy()

    config = TrainConfig(**meta["config"])
    scalars = meta["scalars"]
    params = mapnet.MapParams(Tensor(arrays["theta.W1"], requires_grad=True),
                              Tensor(arrays["theta.W2"], requires_grad=True))
    sizes = pcl.PclSizes(config.pcl_hidden1, config.pcl_delta_dim, config.pcl_label_dim,
                         config.pcl_epoch_dim, config.pcl_hidden2, config.pcl_epoch_buckets)
    phi_tensors = {name: Tensor(arrays[f"phi.{name}"], requires_grad=True)
                   for name in ("fc1_w", "fc1_b", "fc2_w", "fc2_b", "fc3_w", "fc3_b",
                                "fc4_w", "fc4_b", "label_table", "epoch_table")}
    pcl_params = pcl.PclParams(temperature=config.temperature, sizes=sizes, **phi_tensors)
    store = pup.PrototypeStore(arrays["store.current"], arrays["store.original"],
                               int(scalars["num_seen"]), float(scalars["beta"]),
                               int(scalars["k_neighbors"]))
    percentile = pcl.PercentileState(p=float(scalars["percentile_p"]),
                                     kappa=float(scalars["percentile_kappa"]),
                                     l_p=float(scalars["percentile_l_p"]),
                                     initialized=bool(scalars["percentile_initialized"]))
    return Checkpoint(int(meta["epoch"]), params, pcl_params, store, percentile,
                      config, arrays)
