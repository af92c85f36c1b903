"""Debate loops for the decomposition and representation tiers."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Any, Mapping, Sequence

from ..errors import ConfigurationError, InfeasibleError, ValidationError
from .backends import AgentBackend, RuleBasedBackend
from .memory import MemoryPools

DEFAULT_MAX_ROUNDS = 16


@dataclass(frozen=True)
class Subtask:
    name: str
    depends_on: tuple[str, ...] = ()
    detail_level: int = 1
    payload_estimate: tuple[float, ...] = (1.0,)  # bytes at detail level 1..detail_level

    def __post_init__(self):
        object.__setattr__(self, "depends_on", tuple(self.depends_on))
        object.__setattr__(self, "payload_estimate", tuple(float(p) for p in self.payload_estimate))
        if self.detail_level < 1:
            raise ValidationError(f"subtask {self.name}: detail_level must be >= 1")
        if len(self.payload_estimate) != self.detail_level:
            raise ValidationError(f"subtask {self.name}: need one payload estimate per detail level")
        if any(p < 0 for p in self.payload_estimate):
            raise ValidationError(f"subtask {self.name}: payload estimates must be non-negative")


@dataclass(frozen=True)
class CommSnapshot:
    link_rate: float  # bytes per ms
    snr_db: float = 0.0

    def __post_init__(self):
        if not self.link_rate > 0:
            raise ValidationError("link_rate must be positive")


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    subtasks: tuple[Subtask, ...]
    latency_budget_ms: float
    comm_snapshot: CommSnapshot

    def __post_init__(self):
        object.__setattr__(self, "subtasks", tuple(self.subtasks))
        names = [s.name for s in self.subtasks]
        if len(set(names)) != len(names):
            raise ValidationError("subtask names must be unique")
        for s in self.subtasks:
            missing = set(s.depends_on) - set(names)
            if missing:
                raise ValidationError(f"subtask {s.name} depends on unknown {sorted(missing)}")
        topological_order(self.subtasks)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TaskSpec":
        return cls(d["task_id"], tuple(Subtask(**s) for s in d["subtasks"]), float(d["latency_budget_ms"]),
                   CommSnapshot(**d["comm_snapshot"]))


def topological_order(subtasks: Sequence[Subtask]) -> list[Subtask]:
    """Dependency order; among ready subtasks, the one listed first goes first."""
    index = {s.name: i for i, s in enumerate(subtasks)}
    ts = TopologicalSorter({s.name: s.depends_on for s in subtasks})
    try:
        ts.prepare()
    except CycleError as exc:
        raise ValidationError(f"subtask dependencies contain a cycle: {exc.args[1]}") from None
    ready: list[str] = []
    order = []
    while ts.is_active():
        ready.extend(ts.get_ready())
        ready.sort(key=index.__getitem__)
        name = ready.pop(0)
        order.append(subtasks[index[name]])
        ts.done(name)
    return order


@dataclass(frozen=True)
class SubtaskPlan:
    order: tuple[str, ...]
    levels: Mapping[str, int]
    transmission_ms: float

    def detail_vector(self) -> tuple[int, ...]:
        return tuple(self.levels[n] for n in self.order)


@dataclass(frozen=True)
class Representation:
    accuracy_score: float
    size_bytes: float


def validate_catalog(catalog: Mapping[str, Representation]) -> None:
    if not catalog:
        raise ValidationError("representation catalog is empty")
    for name, r in catalog.items():
        if not (0 < r.accuracy_score <= 1) or not r.size_bytes > 0:
            raise ValidationError(f"representation {name}: need accuracy in (0, 1] and positive size")


@dataclass(frozen=True)
class TranscriptRecord:
    round: int
    role: str
    payload: Mapping[str, Any]
    accepted: bool
    request: Mapping[str, Any] = field(default_factory=dict)


@dataclass
class DebateTranscript:
    tier: str
    max_rounds: int = DEFAULT_MAX_ROUNDS
    records: list[TranscriptRecord] = field(default_factory=list)

    def to_ndjson(self) -> str:
        return "".join(json.dumps({"tier": self.tier, **asdict(r)}, sort_keys=True) + "\n" for r in self.records)

    def decisions(self) -> list[tuple[int, str, str, bool]]:
        return [(r.round, r.role, json.dumps(r.payload, sort_keys=True), r.accepted) for r in self.records]


def replay(transcript: DebateTranscript, backend: AgentBackend) -> bool:
    """Re-issue every recorded request and check the answers match."""
    return all(backend.respond(dict(r.request)) == dict(r.payload) for r in transcript.records)


class _Session:
    def __init__(self, tier, backend, pools, pool_id, max_rounds):
        self.tier = tier
        self.backend = backend
        self.pools = pools
        self.pool_id = pool_id
        self.transcript = DebateTranscript(tier, max_rounds)

    def ask(self, rnd, role, constraints, context=(), accepted_key=None):
        request = {"role": role, "tier": self.tier, "context": list(context), "constraints": constraints}
        # JSON round trip so every backend sees the same plain structure
        request = json.loads(json.dumps(request, sort_keys=True))
        reply = self.backend.respond(request)
        accepted = bool(reply.get(accepted_key, False)) if accepted_key else False
        rec = TranscriptRecord(rnd, role, reply, accepted, request)
        self.transcript.records.append(rec)
        if self.pools is not None:
            self.pools[self.pool_id].append(role, {"round": rnd, "payload": reply, "accepted": accepted})
        return reply


def _feedback_context(pools):
    if pools is None:
        return []
    return [{"tick": r.tick, "kind": r.kind, "payload": dict(r.payload)} for r in pools.feedback.records()]


def decompose(task: TaskSpec, backend: AgentBackend | None = None, pools: MemoryPools | None = None,
              max_rounds: int = DEFAULT_MAX_ROUNDS) -> tuple[SubtaskPlan, DebateTranscript]:
    """Pick a detail level per subtask that fits the latency budget.

    Returns the lexicographically largest feasible detail vector in
    topological order, i.e. earlier subtasks keep as much detail as possible.
    """
    backend = backend or RuleBasedBackend()
    order = topological_order(task.subtasks)
    subtasks = [{"name": s.name, "detail_level": s.detail_level, "payload_estimate": list(s.payload_estimate)}
                for s in order]
    if pools is not None:
        pools["task_details"].append("task", {"task_id": task.task_id, "subtasks": subtasks,
                                              "latency_budget_ms": task.latency_budget_ms})
    session = _Session("decomposer", backend, pools, "decomposer_dialogue", max_rounds)

    advice = session.ask(0, "Advisor", {"snapshot_link_rate": task.comm_snapshot.link_rate},
                         _feedback_context(pools))
    rate = float(advice["link_rate"])
    if not rate > 0:
        raise ValidationError(f"advisor returned a non-positive link rate {rate}")
    min_ms = sum(s.payload_estimate[0] for s in order) / rate
    if min_ms > task.latency_budget_ms:
        deficit = min_ms - task.latency_budget_ms
        raise InfeasibleError(f"task {task.task_id}: minimum-detail plan needs {min_ms:.3f} ms, "
                              f"budget {task.latency_budget_ms} ms (deficit {deficit:.3f} ms)", deficit)

    pinned: dict[str, int] = {}
    for rnd in range(1, max_rounds + 1):
        proposal = session.ask(rnd, "Proponent", {"subtasks": subtasks, "pinned": pinned})["levels"]
        verdict = session.ask(rnd, "Responder", {"subtasks": subtasks, "proposal": proposal, "pinned": pinned,
                                                 "link_rate": rate, "budget_ms": task.latency_budget_ms},
                              accepted_key="accept")
        if verdict["accept"]:
            levels = {s.name: int(proposal[s.name]) for s in order}
            plan = SubtaskPlan(tuple(s.name for s in order), levels, float(verdict["total_ms"]))
            return plan, session.transcript
        pin = verdict.get("pin")
        if not pin:
            raise ConfigurationError("responder rejected a plan without offering a concession")
        pinned[pin["name"]] = int(pin["level"])
    raise ConfigurationError(f"decomposition debate did not settle within {max_rounds} rounds")


def select_representation(subtask: str, catalog: Mapping[str, Representation], comm_snapshot: CommSnapshot,
                          budget_ms: float, backend: AgentBackend | None = None,
                          pools: MemoryPools | None = None,
                          max_rounds: int = DEFAULT_MAX_ROUNDS) -> tuple[str, DebateTranscript]:
    """Most accurate representation whose transmission fits ``budget_ms``.

    Feasibility uses the instantaneous ``comm_snapshot`` link rate; the
    Advisor's pooled statistic is recorded for context only.
    """
    validate_catalog(catalog)
    backend = backend or RuleBasedBackend()
    rate = comm_snapshot.link_rate
    plain = {n: {"accuracy_score": r.accuracy_score, "size_bytes": r.size_bytes} for n, r in catalog.items()}
    session = _Session("representation", backend, pools, "representation_dialogue", max_rounds)
    session.ask(0, "Advisor", {"snapshot_link_rate": rate, "subtask": subtask}, _feedback_context(pools))

    excluded: list[str] = []
    for rnd in range(1, max_rounds + 1):
        name = session.ask(rnd, "Proponent", {"catalog": plain, "excluded": excluded, "subtask": subtask})["name"]
        if name is None:
            cheapest = min(catalog.values(), key=lambda r: r.size_bytes)
            overshoot = cheapest.size_bytes / rate - budget_ms
            raise InfeasibleError(f"subtask {subtask}: no representation fits {budget_ms} ms; the cheapest "
                                  f"overshoots by {overshoot:.3f} ms", overshoot)
        verdict = session.ask(rnd, "Responder", {"candidate": name, "size_bytes": plain[name]["size_bytes"],
                                                 "link_rate": rate, "budget_ms": budget_ms},
                              accepted_key="accept")
        if verdict["accept"]:
            return name, session.transcript
        excluded.append(name)
    raise ConfigurationError(f"representation debate did not settle within {max_rounds} rounds")
