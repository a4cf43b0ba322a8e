"""Allocentric aggregation of balloon detections into position hypotheses.

Each hypothesis keeps the last eight detections assigned to it and reports
their mean. Detections are associated by distance to the hypothesis (either
along the detection ray or on the ground plane), close hypotheses are merged,
hypotheses that stay unseen while in view are dropped, and hypotheses the
vehicle passes over are treated as popped.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, CameraPose, project_point

HISTORY = 8


@dataclass(frozen=True)
class FilterConfig:
    assign_threshold: float = 2.0
    merge_threshold: float = 2.0
    corridor: tuple = (1.5, 5.0)
    confirm_count: int = 8
    missed_limit: int = 30
    pop_radius: float = 0.5
    metric: str = "ray"

    def __post_init__(self):
        for name in ("assign_threshold", "merge_threshold", "confirm_count", "missed_limit", "pop_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        lo, hi = self.corridor
        if not (0 < lo < hi):
            raise ValueError("corridor must satisfy 0 < low < high")
        if self.metric not in ("ray", "ground"):
            raise ValueError("metric must be 'ray' or 'ground'")


@dataclass(frozen=True)
class DetectionRay:
    origin: np.ndarray
    direction: np.ndarray
    endpoint: np.ndarray

    @classmethod
    def through(cls, origin, endpoint) -> "DetectionRay":
        o = np.asarray(origin, dtype=float)
        e = np.asarray(endpoint, dtype=float)
        d = e - o
        n = np.linalg.norm(d)
        if n == 0.0:
            raise ValueError("endpoint coincides with ray origin")
        return cls(o, d / n, e)


@dataclass
class BalloonHypothesis:
    uid: int
    history: deque = field(default_factory=lambda: deque(maxlen=HISTORY))
    missed_count: int = 0
    _pos: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def position(self) -> np.ndarray:
        if self._pos is None:
            self._pos = np.mean(np.asarray(self.history), axis=0)
        return self._pos

    def push(self, point) -> None:
        self.history.append(np.asarray(point, dtype=float))
        self._pos = None

    def to_dict(self) -> dict:
        return {
            "id": self.uid,
            "position": self.position.tolist(),
            "history": [p.tolist() for p in self.history],
            "missed": self.missed_count,
        }


def height_gate(detection_field, cfg: FilterConfig) -> bool:
    lo, hi = cfg.corridor
    return lo <= detection_field[2] <= hi


def ray_distance(P, ray: DetectionRay) -> float:
    """Distance from P to the half-line starting at the ray origin."""
    w = np.asarray(P, dtype=float) - ray.origin
    t = max(float(w @ ray.direction), 0.0)
    return float(np.linalg.norm(w - t * ray.direction))


def ground_distance(P, d) -> float:
    return math.hypot(P[0] - d[0], P[1] - d[1])


class BalloonFilter:
    """Mutable hypothesis set; feed one camera frame at a time."""

    def __init__(self, cfg: FilterConfig | None = None):
        self.cfg = cfg or FilterConfig()
        self.hypotheses: list[BalloonHypothesis] = []
        self._next_id = 0
        self._assigned: set[int] = set()
        self.detections_seen = 0

    # -- association -------------------------------------------------------
    def _distance(self, P, ray: DetectionRay, metric: str) -> float:
        if metric == "ray":
            return ray_distance(P, ray)
        return ground_distance(P, ray.endpoint)

    def assign(self, rays, metric: str | None = None) -> None:
        metric = metric or self.cfg.metric
        for ray in rays:
            self.detections_seen += 1
            best, best_d = None, math.inf
            for h in self.hypotheses:
                d = self._distance(h.position, ray, metric)
                if d < best_d:
                    best, best_d = h, d
            if best is not None and best_d < self.cfg.assign_threshold:
                best.push(ray.endpoint)
                best.missed_count = 0
                self._assigned.add(best.uid)
            else:
                h = BalloonHypothesis(self._next_id)
                self._next_id += 1
                h.push(ray.endpoint)
                self.hypotheses.append(h)
                self._assigned.add(h.uid)

    def merge(self) -> None:
        while True:
            pos = [h.position for h in self.hypotheses]
            pair, best = None, self.cfg.merge_threshold
            for i in range(len(pos)):
                for j in range(i + 1, len(pos)):
                    d = float(np.linalg.norm(pos[i] - pos[j]))
                    # strict "<" keeps the earliest-created pair on ties
                    if d < best:
                        pair, best = (i, j), d
            if pair is None:
                return
            i, j = pair
            a, b = self.hypotheses[i], self.hypotheses[j]
            newest_first = sorted(
                [(k, p) for k, p in enumerate(reversed(a.history))]
                + [(k, p) for k, p in enumerate(reversed(b.history))],
                key=lambda kp: kp[0],
            )
            merged = BalloonHypothesis(a.uid, missed_count=min(a.missed_count, b.missed_count))
            for _, p in reversed(newest_first[:HISTORY]):
                merged.push(p)
            if b.uid in self._assigned:
                self._assigned.add(a.uid)
            self.hypotheses[i] = merged
            del self.hypotheses[j]

    def update_visibility(self, pose: CameraPose, intr: CameraIntrinsics) -> None:
        keep = []
        for h in self.hypotheses:
            if h.uid not in self._assigned:
                px = project_point(intr, pose, h.position)
                if px is not None and intr.contains(px):
                    h.missed_count += 1
            if h.missed_count <= self.cfg.missed_limit:
                keep.append(h)
        self.hypotheses = keep

    def process_frame(self, pose: CameraPose, intr: CameraIntrinsics, detections_field, metric=None) -> None:
        """One camera frame: gate, assign, merge and update miss counters."""
        self._assigned = set()
        origin = pose.translation
        rays = [DetectionRay.through(origin, d) for d in detections_field if height_gate(d, self.cfg)]
        self.assign(rays, metric)
        self.merge()
        self.update_visibility(pose, intr)

    # -- outputs -----------------------------------------------------------
    def confirmed_hypotheses(self, mav_pos):
        """Hypotheses with a full history, closest to ``mav_pos`` first."""
        m = np.asarray(mav_pos, dtype=float)
        good = [h for h in self.hypotheses if len(h.history) >= self.cfg.confirm_count]
        good.sort(key=lambda h: float(np.linalg.norm(h.position - m)))
        return good

    def confirmed(self, mav_pos):
        return [h.position for h in self.confirmed_hypotheses(mav_pos)]

    def mark_popped(self, mav_pos):
        popped, keep = [], []
        for h in self.hypotheses:
            if ground_distance(h.position, mav_pos) <= self.cfg.pop_radius:
                popped.append(h.position)
            else:
                keep.append(h)
        self.hypotheses = keep
        return popped

    def dump(self) -> str:
        return json.dumps({"hypotheses": [h.to_dict() for h in self.hypotheses]})
