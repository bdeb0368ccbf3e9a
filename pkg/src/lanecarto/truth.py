"""Ground-truth lane geometry and topology as written to ``truth.json``."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class TruthLane:
    center: np.ndarray  # (m, 2) center polyline
    left: np.ndarray  # (m, 2) left boundary
    right: np.ndarray  # (m, 2) right boundary

    def polygon(self) -> np.ndarray:
        return np.vstack([self.left, self.right[::-1]])

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "left": self.left.tolist(), "right": self.right.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TruthLane":
        return cls(*(np.asarray(d[k], dtype=float).reshape(-1, 2) for k in ("center", "left", "right")))


@dataclass
class TruthConnection:
    in_edge: str
    in_lane: int
    out_edge: str
    out_lane: int
    intersection: str
    curve: np.ndarray

    @property
    def key(self) -> tuple[str, int, str, int]:
        return (self.in_edge, self.in_lane, self.out_edge, self.out_lane)

    def to_dict(self) -> dict:
        return {
            "in_edge": self.in_edge,
            "in_lane": self.in_lane,
            "out_edge": self.out_edge,
            "out_lane": self.out_lane,
            "intersection": self.intersection,
            "curve": self.curve.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TruthConnection":
        return cls(d["in_edge"], int(d["in_lane"]), d["out_edge"], int(d["out_lane"]),
                   d["intersection"], np.asarray(d["curve"], dtype=float).reshape(-1, 2))


@dataclass
class GroundTruth:
    """Lanes per directed edge (ordered left to right) and the connection set."""

    roads: dict[str, list[TruthLane]] = field(default_factory=dict)
    connections: list[TruthConnection] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "roads": {k: [ln.to_dict() for ln in v] for k, v in sorted(self.roads.items())},
            "connections": [c.to_dict() for c in self.connections],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            {k: [TruthLane.from_dict(x) for x in v] for k, v in d.get("roads", {}).items()},
            [TruthConnection.from_dict(c) for c in d.get("connections", [])],
            dict(d.get("meta", {})),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def load(cls, path) -> "GroundTruth":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
