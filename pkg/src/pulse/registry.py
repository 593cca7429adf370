"""Model registry: the tree of detector configurations with lineage.

Each node stores its parameters fully materialized (not as deltas), so a
child keeps working unchanged if its parent is later deleted. Deletion is
soft (tombstone) so lineage references never dangle.
"""

from __future__ import annotations

import time
import uuid
from dataclasses import dataclass

from .detector import DetectorParams
from .errors import (TaskMismatchError, UnknownModelError, UnknownParentError,
                     ValidationError)
from .store import Store

TASKS = ("structures", "flood")


@dataclass(frozen=True)
class ModelNode:
    id: str
    name: str
    task: str
    parent_id: str | None
    params: DetectorParams
    created_from: str | None  # adaptation record id
    created_at: float
    deleted: bool = False

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "task": self.task,
            "parent_id": self.parent_id,
            "params": self.params.to_dict(),
            "created_from": self.created_from,
            "created_at": self.created_at,
            "deleted": self.deleted,
        }


@dataclass(frozen=True)
class AdaptationRecord:
    """Provenance of one adaptation run (persisted next to the child model)."""

    id: str
    parent_model_id: str
    raster_id: str
    corrected_tile_ids: list
    search_log: list          # [(params dict, f1), ...]
    selected_params: dict
    before_metrics: dict
    after_metrics: dict

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "parent_model_id": self.parent_model_id,
            "raster_id": self.raster_id,
            "corrected_tile_ids": list(self.corrected_tile_ids),
            "search_log": [[p, f1] for p, f1 in self.search_log],
            "selected_params": self.selected_params,
            "before_metrics": self.before_metrics,
            "after_metrics": self.after_metrics,
        }


class ModelRegistry:
    def __init__(self, store: Store, clock=time.time):
        self._store = store
        self._clock = clock

    def create_model(self, name: str, task: str, params: DetectorParams | dict,
                     parent_id: str | None = None,
                     created_from: str | None = None) -> ModelNode:
        if task not in TASKS:
            raise ValidationError(f"task must be one of {TASKS}, got {task!r}")
        if isinstance(params, dict):
            params = DetectorParams.from_dict(params)
        params.validate()
        if parent_id is not None:
            parent_rec = self._store.records.get("models", parent_id)
            if parent_rec is None:
                raise UnknownParentError(f"parent model {parent_id!r} not found")
            if parent_rec.data["task"] != task:
                raise TaskMismatchError(
                    f"child task {task!r} != parent task {parent_rec.data['task']!r}")
        node = ModelNode(id=f"model-{uuid.uuid4().hex[:12]}", name=name, task=task,
                         parent_id=parent_id, params=params,
                         created_from=created_from, created_at=self._clock())
        self._store.records.put("models", node.id, node.to_dict(), ref=task)
        return node

    def _node(self, rec_data: dict, deleted: bool = False) -> ModelNode:
        return ModelNode(id=rec_data["id"], name=rec_data["name"],
                         task=rec_data["task"], parent_id=rec_data["parent_id"],
                         params=DetectorParams.from_dict(rec_data["params"]),
                         created_from=rec_data.get("created_from"),
                         created_at=rec_data["created_at"], deleted=deleted)

    def get(self, model_id: str) -> ModelNode:
        rec = self._store.records.get("models", model_id)
        if rec is None:
            raise UnknownModelError(f"model {model_id!r} not found")
        return self._node(rec.data)

    def resolve_params(self, model_id: str) -> DetectorParams:
        """The node's own params; never re-derived from lineage."""
        return self.get(model_id).params

    def delete(self, model_id: str):
        self.get(model_id)
        self._store.records.delete("models", model_id)

    def model_tree(self, task: str | None = None) -> list[dict]:
        """Forest of {node, children} dicts, parent before child, ordered by
        created_at (id as tiebreak). Tombstoned nodes stay in the tree,
        flagged deleted, so lineage stays navigable."""
        recs = self._store.records.list("models", include_tombstoned=True)
        nodes = []
        for rec in recs:
            if task is not None and rec.data["task"] != task:
                continue
            nodes.append(self._node(rec.data, deleted=rec.tombstone))
        nodes.sort(key=lambda n: (n.created_at, n.id))
        by_parent: dict[str | None, list[ModelNode]] = {}
        ids = {n.id for n in nodes}
        for n in nodes:
            # A filtered-out or missing parent makes the node a root.
            parent = n.parent_id if n.parent_id in ids else None
            by_parent.setdefault(parent, []).append(n)

        def build(node: ModelNode) -> dict:
            return {**node.to_dict(),
                    "children": [build(c) for c in by_parent.get(node.id, [])]}

        return [build(root) for root in by_parent.get(None, [])]

    def ancestors(self, model_id: str) -> list[str]:
        """Ancestor chain, nearest first; guards against cycles."""
        chain: list[str] = []
        seen = {model_id}
        current = self._store.records.get("models", model_id, include_tombstoned=True)
        while current is not None and current.data.get("parent_id"):
            pid = current.data["parent_id"]
            if pid in seen:
                raise ValidationError(f"lineage cycle detected at {pid!r}")
            chain.append(pid)
            seen.add(pid)
            current = self._store.records.get("models", pid, include_tombstoned=True)
        return chain

    # -- adaptation records ---------------------------------------------

    def add_adaptation(self, record: AdaptationRecord):
        self._store.records.put("adaptations", record.id, record.to_dict(),
                                ref=record.parent_model_id)

    def get_adaptation(self, record_id: str) -> dict:
        rec = self._store.records.get("adaptations", record_id)
        if rec is None:
            raise UnknownModelError(f"adaptation record {record_id!r} not found")
        return rec.data
