"""Multi-user decoding-offload admission under a batching latency model.

Every admitted user (``k_u > 0`` offloaded steps) joins one edge batch whose
latency grows affinely with batch size, so one admission changes everyone's
latency. That coupling makes the utility non-separable.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .diffusion.sampling import MAX_OFFLOAD_STEPS
from .errors import SearchSpaceError, ValidationError

DEFAULT_OPTIONS = (0, 350, 650)
DEFAULT_SEARCH_CAP = 100_000


@dataclass(frozen=True)
class BatchLatencyModel:
    base_ms: float = 10.0
    per_item_ms: float = 2.0

    def __post_init__(self):
        if self.base_ms < 0 or self.per_item_ms <= 0:
            raise ValidationError("need base_ms >= 0 and per_item_ms > 0")


@dataclass(frozen=True)
class OffloadRequest:
    user_id: str
    quality: Mapping[int, float]
    local_per_step_ms: float
    edge_per_step_ms: float

    def __post_init__(self):
        if 0 not in self.quality:
            raise ValidationError(f"user {self.user_id}: option 0 (no offloading) must be present")
        for k, q in self.quality.items():
            if int(k) != k or not 0 <= k <= MAX_OFFLOAD_STEPS:
                raise ValidationError(f"user {self.user_id}: option {k} outside [0, {MAX_OFFLOAD_STEPS}]")
            if not 0.0 <= q <= 1.0:
                raise ValidationError(f"user {self.user_id}: quality {q} outside [0, 1]")

    @property
    def options(self) -> list[int]:
        return sorted(self.quality)


@dataclass(frozen=True)
class TradeoffMetric:
    lam: float = 0.0
    total_steps: int = 1000

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError("lambda must be non-negative")


Assignment = dict  # user_id -> granted offloaded steps


def batch_latency(model: BatchLatencyModel, b: int) -> float:
    if b < 0:
        raise ValidationError("batch size must be non-negative")
    if b == 0:
        return 0.0
    return model.base_ms + model.per_item_ms * b


def user_latency(req: OffloadRequest, k: int, batch_size: int, batch_model: BatchLatencyModel,
                 total_steps: int) -> float:
    edge = batch_latency(batch_model, batch_size) + k * req.edge_per_step_ms if k > 0 else 0.0
    return edge + (total_steps - k) * req.local_per_step_ms


def utility(assignment: Mapping[str, int], requests: Sequence[OffloadRequest], batch_model: BatchLatencyModel,
            metric: TradeoffMetric) -> float:
    """Sum over users of quality minus lambda times modeled latency."""
    for r in requests:
        k = assignment.get(r.user_id)
        if k not in r.quality:
            raise ValidationError(f"user {r.user_id}: {k} is not a candidate option")
    b = sum(1 for r in requests if assignment[r.user_id] > 0)
    total = 0.0
    for r in requests:
        k = assignment[r.user_id]
        total += r.quality[k] - metric.lam * user_latency(r, k, b, batch_model, metric.total_steps)
    return total


def _ordered(requests):
    return sorted(requests, key=lambda r: str(r.user_id))


def brute_force_assign(requests: Sequence[OffloadRequest], metric: TradeoffMetric, batch_model: BatchLatencyModel,
                       cap: int = DEFAULT_SEARCH_CAP) -> tuple[Assignment, float]:
    """Exhaustive search; ties go to the lexicographically smallest option vector
    (users sorted by id)."""
    reqs = _ordered(requests)
    size = int(np.prod([len(r.quality) for r in reqs], dtype=float)) if reqs else 1
    if size > cap:
        raise SearchSpaceError(f"{size} joint options exceed the brute-force cap {cap}; "
                               "use sequential_assign")
    best, best_u = None, -np.inf
    for combo in itertools.product(*(r.options for r in reqs)):
        a = {r.user_id: k for r, k in zip(reqs, combo)}
        u = utility(a, reqs, batch_model, metric)
        if u > best_u:
            best, best_u = a, u
    return (best if best is not None else {}), (best_u if best is not None else 0.0)


def _best_response(a: dict, req: OffloadRequest, reqs, batch_model, metric) -> tuple[int, float]:
    best_k, best_u = a[req.user_id], -np.inf
    for k in req.options:
        trial = dict(a)
        trial[req.user_id] = k
        u = utility(trial, reqs, batch_model, metric)
        if u > best_u:
            best_k, best_u = k, u
    return best_k, best_u


def _standalone_gain(req: OffloadRequest, batch_model, metric) -> float:
    base = req.quality[0] - metric.lam * user_latency(req, 0, 0, batch_model, metric.total_steps)
    return max(req.quality[k] - metric.lam * user_latency(req, k, 1 if k else 0, batch_model, metric.total_steps)
               for k in req.options) - base


def sequential_assign(requests: Sequence[OffloadRequest], metric: TradeoffMetric,
                      batch_model: BatchLatencyModel) -> tuple[Assignment, float]:
    """Step-by-step decisions, one user at a time.

    Users are visited in descending order of their best standalone utility
    gain over staying local. Each picks the option maximizing total utility
    given earlier commitments (later users still at 0). A backward repair
    pass then re-optimizes every user once with the others fixed. The same
    repair is also run from each single-user-only admission, and the best
    result is returned, so the answer is never worse than those baselines.
    """
    reqs = _ordered(requests)
    if not reqs:
        return {}, 0.0
    order = sorted(reqs, key=lambda r: (-_standalone_gain(r, batch_model, metric), str(r.user_id)))

    def repair(a):
        for r in reversed(order):
            a[r.user_id], _ = _best_response(a, r, reqs, batch_model, metric)
        return a, utility(a, reqs, batch_model, metric)

    a = {r.user_id: 0 for r in reqs}
    for r in order:
        a[r.user_id], _ = _best_response(a, r, reqs, batch_model, metric)
    best_a, best_u = repair(a)

    for r in reqs:
        for k in r.options:
            if k == 0:
                continue
            start = {q.user_id: 0 for q in reqs}
            start[r.user_id] = k
            cand_a, cand_u = repair(start)
            if cand_u > best_u:
                best_a, best_u = cand_a, cand_u
    return best_a, best_u


def relative_gap(optimal: float, heuristic: float) -> float:
    """Shortfall of ``heuristic`` relative to ``|optimal|`` (0 when equal)."""
    if heuristic >= optimal:
        return 0.0
    return (optimal - heuristic) / max(abs(optimal), 1e-12)


def random_instance(rng, num_users: int = 3, options: Sequence[int] = DEFAULT_OPTIONS,
                    local_range=(0.5, 2.0), edge_range=(0.05, 0.5)) -> list[OffloadRequest]:
    """Random users whose quality falls as more steps are offloaded."""
    reqs = []
    for u in range(num_users):
        base = float(rng.uniform(0.6, 0.95))
        drops = np.sort(rng.uniform(0.0, 0.3, size=len(options) - 1))
        quality = {0: base}
        for k, d in zip(sorted(o for o in options if o != 0), drops):
            quality[k] = max(0.0, base - float(d))
        reqs.append(OffloadRequest(f"u{u}", quality, float(rng.uniform(*local_range)),
                                   float(rng.uniform(*edge_range))))
    return reqs


def write_instance_csv(requests: Sequence[OffloadRequest], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "local_per_step_ms", "edge_per_step_ms", "quality"])
        for r in _ordered(requests):
            w.writerow([r.user_id, repr(r.local_per_step_ms), repr(r.edge_per_step_ms),
                        json.dumps({str(k): v for k, v in sorted(r.quality.items())})])


def read_instance_csv(path) -> list[OffloadRequest]:
    with open(path, newline="") as fh:
        return [OffloadRequest(row["user_id"], {int(k): float(v) for k, v in json.loads(row["quality"]).items()},
                               float(row["local_per_step_ms"]), float(row["edge_per_step_ms"]))
                for row in csv.DictReader(fh)]
