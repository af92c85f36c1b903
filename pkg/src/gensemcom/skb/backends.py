"""Agent backends for the debate roles.

Every backend answers one request shape::

    {"role": "Proponent" | "Responder" | "Advisor",
     "tier": "decomposer" | "representation",
     "context": [record dicts],
     "constraints": {...}}

with a JSON-able dict. The rule-based backend is pure and deterministic;
``HttpBackend`` forwards the same request to an external endpoint.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.request
from typing import Any, Protocol, runtime_checkable

from ..errors import ConfigurationError, ValidationError

ROLES = ("Proponent", "Responder", "Advisor")
TIERS = ("decomposer", "representation")


@runtime_checkable
class AgentBackend(Protocol):
    def respond(self, request: dict[str, Any]) -> dict[str, Any]: ...


def _transmission_ms(subtasks, levels, link_rate) -> float:
    return sum(st["payload_estimate"][levels[st["name"]] - 1] for st in subtasks) / link_rate


class RuleBasedBackend:
    """Deterministic role rules.

    Decomposer tier:
      Proponent keeps pinned levels and puts every other subtask at its
      maximum detail. Responder accepts a plan that fits the budget; otherwise
      it pins the earliest unpinned subtask at the highest level that still
      leaves the plan completable at minimum detail. Advisor reports the mean
      environmental link rate from the feedback context, or the snapshot rate.

    Representation tier:
      Proponent names the best remaining option by (accuracy desc, size asc,
      name asc). Responder accepts it when size / link_rate fits the budget.
    """

    def respond(self, request: dict[str, Any]) -> dict[str, Any]:
        role, tier = request.get("role"), request.get("tier")
        if role not in ROLES or tier not in TIERS:
            raise ValidationError(f"unsupported role/tier {role!r}/{tier!r}")
        handler = getattr(self, f"_{tier}_{role.lower()}")
        return handler(request.get("context", []), request.get("constraints", {}))

    # decomposer tier

    def _decomposer_proponent(self, context, c):
        pinned = c.get("pinned", {})
        return {"levels": {st["name"]: pinned.get(st["name"], st["detail_level"]) for st in c["subtasks"]}}

    def _decomposer_responder(self, context, c):
        subtasks, rate, budget = c["subtasks"], c["link_rate"], c["budget_ms"]
        levels = c["proposal"]
        total = _transmission_ms(subtasks, levels, rate)
        if total <= budget:
            return {"accept": True, "total_ms": total}
        pinned = dict(c.get("pinned", {}))
        for st in subtasks:
            if st["name"] in pinned:
                continue
            for lvl in range(st["detail_level"], 0, -1):
                trial = {s["name"]: pinned.get(s["name"], 1) for s in subtasks}
                trial[st["name"]] = lvl
                if _transmission_ms(subtasks, trial, rate) <= budget:
                    return {"accept": False, "total_ms": total, "deficit_ms": total - budget,
                            "pin": {"name": st["name"], "level": lvl}}
            break
        return {"accept": False, "total_ms": total, "deficit_ms": total - budget, "pin": None}

    def _decomposer_advisor(self, context, c):
        rates = [float(r["payload"]["link_rate"]) for r in context
                 if r.get("kind") == "environmental" and "link_rate" in r.get("payload", {})]
        if rates:
            return {"link_rate": sum(rates) / len(rates), "source": "feedback", "samples": len(rates)}
        return {"link_rate": float(c["snapshot_link_rate"]), "source": "snapshot", "samples": 0}

    # representation tier

    def _representation_proponent(self, context, c):
        excluded = set(c.get("excluded", []))
        remaining = [(-v["accuracy_score"], v["size_bytes"], name)
                     for name, v in c["catalog"].items() if name not in excluded]
        if not remaining:
            return {"name": None}
        return {"name": min(remaining)[2]}

    def _representation_responder(self, context, c):
        ms = c["size_bytes"] / c["link_rate"]
        if ms <= c["budget_ms"]:
            return {"accept": True, "transmit_ms": ms}
        return {"accept": False, "transmit_ms": ms, "overshoot_ms": ms - c["budget_ms"]}

    def _representation_advisor(self, context, c):
        return self._decomposer_advisor(context, c)


class HttpBackend:
    """POSTs each request as JSON to ``url`` and returns the decoded JSON body."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def respond(self, request: dict[str, Any]) -> dict[str, Any]:
        body = json.dumps(request, sort_keys=True).encode()
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                reply = json.loads(resp.read().decode())
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"agent endpoint {self.url} failed: {exc}") from exc
        if not isinstance(reply, dict):
            raise ValidationError("agent endpoint must answer with a JSON object")
        return reply
