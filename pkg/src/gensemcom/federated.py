"""Federated training of the cluster-wide (general-phase) denoiser.

Only parameter vectors and scalar metadata cross the client boundary. Client
order is always sorted by ``client_id`` so aggregation is reproducible.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Hashable, Mapping, Sequence

import numpy as np

from .diffusion.model import Denoiser, evaluate_loss, make_optimizer, train_step
from .diffusion.sampling import MAX_OFFLOAD_STEPS
from .diffusion.schedule import NoiseSchedule
from .errors import TrainingDivergenceError, ValidationError

log = logging.getLogger(__name__)


class Weighting(str, Enum):
    UNIFORM = "uniform"
    SAMPLE_SIZE = "sample_size"
    ADAPTIVE_INVERSE_LOSS = "adaptive_inverse_loss"


@dataclass
class ClientUpdate:
    client_id: Hashable
    params: np.ndarray
    num_samples: int = 1
    local_loss: float = 1.0

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        if self.num_samples < 1:
            raise ValidationError(f"client {self.client_id}: num_samples must be >= 1")


@dataclass(frozen=True)
class AggregationPolicy:
    weighting: Weighting = Weighting.UNIFORM
    clip_norm: float | None = None
    normalize: bool = True
    loss_floor: float = 1e-8  # caps inverse-loss weights when a client reports zero loss

    def __post_init__(self):
        object.__setattr__(self, "weighting", Weighting(self.weighting))
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValidationError("clip_norm must be positive")


@dataclass
class ClusterState:
    params: np.ndarray
    round: int = 0
    loss_history: list[float] = field(default_factory=list)
    # (round, client_id or "cluster", loss) rows, plus exclusion notes
    history: list[tuple[int, str, float]] = field(default_factory=list)
    excluded: list[tuple[int, str]] = field(default_factory=list)


def client_weights(updates: Sequence[ClientUpdate], policy: AggregationPolicy) -> np.ndarray:
    n = len(updates)
    if policy.weighting is Weighting.UNIFORM:
        w = np.full(n, 1.0 / n)
    elif policy.weighting is Weighting.SAMPLE_SIZE:
        sizes = np.array([u.num_samples for u in updates], dtype=float)
        w = sizes / sizes.sum()
    else:
        inv = 1.0 / np.maximum([u.local_loss for u in updates], policy.loss_floor)
        w = inv / inv.sum()
    if policy.normalize:
        w = w / w.sum()
    return w


def clip_delta(delta: np.ndarray, clip_norm: float | None) -> np.ndarray:
    if clip_norm is None:
        return delta
    norm = float(np.linalg.norm(delta))
    if norm <= clip_norm:
        return delta
    return delta * (clip_norm / norm)


def _sorted(updates):
    return sorted(updates, key=lambda u: str(u.client_id))


def aggregate(updates: Sequence[ClientUpdate], policy: AggregationPolicy = AggregationPolicy(),
              reference: np.ndarray | None = None) -> np.ndarray:
    """Weighted combination of client parameter vectors.

    With ``policy.clip_norm`` set, each client's delta from ``reference``
    (the current cluster parameters) is norm-clipped first and the result is
    ``reference + sum_i w_i * clipped_delta_i``.
    """
    if not updates:
        raise ValidationError("aggregate needs at least one client update")
    updates = _sorted(updates)
    size = updates[0].params.shape
    if any(u.params.shape != size for u in updates):
        raise ValidationError("client parameter vectors differ in length")
    w = client_weights(updates, policy)
    if policy.clip_norm is None:
        stacked = np.stack([u.params for u in updates])
        if policy.weighting is Weighting.UNIFORM:
            return stacked.sum(axis=0) / len(updates)  # plain arithmetic mean, no weight rounding
        return w @ stacked
    if reference is None:
        raise ValidationError("clipping needs the current cluster parameters as reference")
    reference = np.asarray(reference, dtype=float)
    if reference.shape != size:
        raise ValidationError("reference length differs from client parameters")
    deltas = np.stack([clip_delta(u.params - reference, policy.clip_norm) for u in updates])
    return reference + w @ deltas


def hierarchical_aggregate(updates: Sequence[ClientUpdate], cluster_assignments: Mapping[Hashable, Hashable],
                           policy: AggregationPolicy = AggregationPolicy(),
                           reference: np.ndarray | None = None) -> tuple[dict, np.ndarray]:
    """Two-level aggregation: within each cluster by ``policy``, then across
    clusters weighted by each cluster's total sample count."""
    groups: dict[Hashable, list[ClientUpdate]] = {}
    for u in updates:
        if u.client_id not in cluster_assignments:
            raise ValidationError(f"client {u.client_id} has no cluster assignment")
        groups.setdefault(cluster_assignments[u.client_id], []).append(u)
    for cid in sorted(set(cluster_assignments.values()), key=str):
        if cid not in groups:
            log.warning("cluster %s has no client updates; skipped", cid)
    if not groups:
        raise ValidationError("no client updates to aggregate")
    keys = sorted(groups, key=str)
    if len(keys) == 1:
        params = aggregate(groups[keys[0]], policy, reference)
        return {keys[0]: params}, params
    per_cluster = {k: aggregate(groups[k], policy, reference) for k in keys}
    totals = np.array([sum(u.num_samples for u in groups[k]) for k in keys], dtype=float)
    w = totals / totals.sum()
    return per_cluster, w @ np.stack([per_cluster[k] for k in keys])


@dataclass
class FLClient:
    """A receiver holding private data and its personalized full-range denoiser."""

    client_id: str
    x0: np.ndarray          # model-space images, (N, D)
    cond: np.ndarray        # conditioning vectors, (N, C)
    personalized: Denoiser
    eval_x0: np.ndarray | None = None
    eval_cond: np.ndarray | None = None
    optimizer: object = None
    cluster_optimizer: object = None

    @property
    def num_samples(self) -> int:
        return len(self.x0)


def general_phase_range(schedule: NoiseSchedule, max_offload: int = MAX_OFFLOAD_STEPS) -> tuple[int, int]:
    return (schedule.T - min(max_offload, schedule.T) + 1, schedule.T)


def _local_train(model, x0, cond, steps, batch_size, schedule, rng, optimizer, t_range):
    loss = float("nan")
    for _ in range(steps):
        idx = rng.integers(0, len(x0), size=min(batch_size, len(x0)))
        _, loss = train_step(model, (x0[idx], cond[idx]), schedule, rng, optimizer, t_range)
    return loss


def fl_round(clients: Sequence[FLClient], cluster: ClusterState, policy: AggregationPolicy,
             steps_per_round: int, rng, schedule: NoiseSchedule, *, arch=None, batch_size: int = 32,
             optimizer: str = "adam", lr: float = 1e-3, eval_set=None, eval_seed: int = 0,
             max_offload: int = MAX_OFFLOAD_STEPS) -> ClusterState:
    """One federated round.

    Each client first advances its personalized model on its own data over
    the full timestep range, then trains a copy of the cluster model on the
    general-phase range only and uploads it. Losses recorded in
    ``cluster.history`` are general-phase evaluation losses: per client on
    its held-out data with its personalized model, and for the cluster on
    ``eval_set = (x0, cond)``.
    """
    general = general_phase_range(schedule, max_offload)
    arch = arch or clients[0].personalized.arch
    updates = []
    next_round = cluster.round + 1
    for client in sorted(clients, key=lambda c: str(c.client_id)):
        if client.optimizer is None:
            client.optimizer = make_optimizer(optimizer, lr)
        if client.cluster_optimizer is None:
            client.cluster_optimizer = make_optimizer(optimizer, lr)
        copy = Denoiser(arch, cluster.params)
        try:
            _local_train(client.personalized, client.x0, client.cond, steps_per_round, batch_size,
                         schedule, rng, client.optimizer, None)
            loss = _local_train(copy, client.x0, client.cond, steps_per_round, batch_size,
                                schedule, rng, client.cluster_optimizer, general)
        except TrainingDivergenceError as exc:
            log.warning("client %s excluded from round %d: %s", client.client_id, next_round, exc)
            cluster.excluded.append((next_round, str(client.client_id)))
            continue
        if steps_per_round == 0:
            loss = 1.0
        ex, ec = (client.eval_x0, client.eval_cond) if client.eval_x0 is not None else (client.x0, client.cond)
        local_eval = evaluate_loss(client.personalized, ex, ec, schedule, eval_seed, general)
        cluster.history.append((next_round, str(client.client_id), local_eval))
        updates.append(ClientUpdate(client.client_id, copy.params, client.num_samples, loss))

    if updates:
        cluster.params = aggregate(updates, policy, reference=cluster.params)
    cluster.round = next_round
    if eval_set is not None:
        cl_loss = evaluate_loss(Denoiser(arch, cluster.params), eval_set[0], eval_set[1], schedule,
                                eval_seed, general)
        cluster.loss_history.append(cl_loss)
        cluster.history.append((next_round, "cluster", cl_loss))
    return cluster


def write_history_csv(rows: Sequence[tuple[int, str, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "client_id", "loss"])
        for r, who, loss in rows:
            writer.writerow([r, who, repr(float(loss))])
