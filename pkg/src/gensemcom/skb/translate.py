"""User-coordination tier: a registry of representation translators."""

from __future__ import annotations

from collections import deque
from typing import Any, Callable

import numpy as np

from ..codec import SceneSemantics, mask_to_boxes
from ..errors import NoPathError

SEGMENTATION_MASK = "segmentation_mask"
BOUNDING_BOXES = "bounding_boxes"


def mask_to_semantics(payload) -> SceneSemantics:
    """Accepts a 2-D mask or a ``{"mask": ..., "scene_id": ...}`` dict."""
    if isinstance(payload, dict):
        return SceneSemantics(payload.get("scene_id"), mask_to_boxes(np.asarray(payload["mask"])))
    return SceneSemantics(None, mask_to_boxes(np.asarray(payload)))


class TranslationRegistry:
    def __init__(self, builtins: bool = True):
        self._edges: dict[str, dict[str, Callable[[Any], Any]]] = {}
        if builtins:
            self.register(SEGMENTATION_MASK, BOUNDING_BOXES, mask_to_semantics)

    def register(self, src: str, dst: str, fn: Callable[[Any], Any]) -> None:
        self._edges.setdefault(src, {})[dst] = fn

    def path(self, src: str, dst: str) -> list[str]:
        """Shortest chain of representation names from ``src`` to ``dst``."""
        if src == dst:
            return [src]
        prev = {src: None}
        queue = deque([src])
        while queue:
            node = queue.popleft()
            for nxt in sorted(self._edges.get(node, {})):
                if nxt in prev:
                    continue
                prev[nxt] = node
                if nxt == dst:
                    chain = [dst]
                    while prev[chain[-1]] is not None:
                        chain.append(prev[chain[-1]])
                    return chain[::-1]
                queue.append(nxt)
        raise NoPathError(f"no translation path from {src!r} to {dst!r}")

    def translate(self, src: str, dst: str, payload):
        chain = self.path(src, dst)
        for a, b in zip(chain, chain[1:]):
            payload = self._edges[a][b](payload)
        return payload


DEFAULT_REGISTRY = TranslationRegistry()


def translate(from_rep: str, to_rep: str, payload, registry: TranslationRegistry | None = None):
    return (registry or DEFAULT_REGISTRY).translate(from_rep, to_rep, payload)
