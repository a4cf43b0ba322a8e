"""Search / pop mission state machine with a rectangular geofence.

The vehicle takes off, flies a two-lane creeping-line pattern and, as soon
as the balloon filter reports a confirmed target, flies a straight pass
through it: first to a pose behind and above the balloon, then through it to
a pose on the far side, keeping a nonzero velocity along the pass line.
Two strategies differ in what follows a pop: DIRECT continues with the next
target right away, STAR returns to the arena center first.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import wrap_angle

TAKEOFF = "TAKEOFF"
SEARCH = "SEARCH"
POP = "POP"
RETURN_TO_CENTER = "RETURN_TO_CENTER"
DONE = "DONE"

DIRECT = "DIRECT"
STAR = "STAR"
STRATEGIES = (DIRECT, STAR)

APPROACH = "approach"
THROUGH = "through"


@dataclass(frozen=True)
class ArenaConfig:
    length: float = 90.0
    width: float = 40.0
    lane_inset: float = 10.0
    search_alt: float = 4.0
    search_speed: float = 5.0
    alt_corridor: tuple = (3.0, 5.0)
    center: tuple = (0.0, 0.0)
    margin: float = 2.0

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError("arena dimensions must be positive")
        if not (0 <= self.lane_inset <= self.width / 2):
            raise ValueError("lane_inset must lie in [0, width/2]")
        lo, hi = self.alt_corridor
        if not lo < hi:
            raise ValueError("alt_corridor must satisfy low < high")
        if not (0 <= self.margin < min(self.length, self.width) / 2):
            raise ValueError("margin must be non-negative and smaller than half the arena")
        if not (lo <= self.search_alt <= hi):
            raise ValueError("search_alt must lie inside alt_corridor")
        if not self.search_speed > 0:
            raise ValueError("search_speed must be positive")

    @property
    def bounds(self):
        """(xmin, xmax, ymin, ymax) of the geofenced rectangle."""
        cx, cy = self.center
        hx = self.length / 2 - self.margin
        hy = self.width / 2 - self.margin
        return cx - hx, cx + hx, cy - hy, cy + hy


@dataclass(frozen=True)
class MissionConfig:
    strategy: str = STAR
    approach_offset: float = 2.0
    through_offset: float = 2.0
    height_above: float = 0.7
    pass_speed: float = 3.0
    approach_tol: float = 0.5
    through_tol: float = 0.3
    # start the pass early when already on the line this close to the approach pose;
    # braking to the pass speed over a shorter distance needs a jerk-limited overshoot
    approach_lead: float = 3.0
    line_tol: float = 0.5
    line_speed_tol: float = 0.3
    # the pass is over once the vehicle is this far beyond the balloon along the line
    clear_distance: float = 1.0
    # shortest distance ahead of the vehicle at which a goal may demand the pass speed;
    # from hover, a jerk-limited axis needs about 2.3 m to reach 3 m/s
    runup: float = 3.0
    # before leaving for a distant target, hover and turn until it is this close to the
    # optical axis (rad), so a biased estimate gets re-observed near the image center
    align_tol: float = 0.2
    match_radius: float = 2.0
    center_tol: float = 1.0
    waypoint_tol: float = 1.0
    takeoff_tol: float = 0.3

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        for name in ("approach_offset", "through_offset", "pass_speed", "approach_tol", "through_tol",
                     "approach_lead", "line_tol", "line_speed_tol", "clear_distance", "runup", "align_tol",
                     "match_radius", "center_tol", "waypoint_tol", "takeoff_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class GoalPose:
    position: np.ndarray
    pass_velocity: np.ndarray
    yaw: float


@dataclass
class MissionState:
    mode: str = TAKEOFF
    current_target: np.ndarray | None = None
    search_index: int = 0
    phase: str = APPROACH
    line_dir: np.ndarray | None = None
    target_uid: int | None = None
    hit: bool = False
    aligned: bool = False
    hold: np.ndarray | None = None
    attempt: int = 0
    home_yaw: float = 0.0


def search_waypoints(arena: ArenaConfig):
    """Corner points of the two-lane loop, lanes along the long axis."""
    xmin, xmax, ymin, ymax = arena.bounds
    cx, cy = arena.center
    lat = arena.width / 2 - arena.lane_inset
    z = arena.search_alt
    if lat <= 1e-9:
        lanes = [cy]
    else:
        lanes = [min(max(cy + lat, ymin), ymax), min(max(cy - lat, ymin), ymax)]
    if len(lanes) == 1:
        return [np.array([xmax, cy, z]), np.array([xmin, cy, z])]
    a, b = lanes
    return [np.array([xmax, a, z]), np.array([xmin, a, z]), np.array([xmin, b, z]), np.array([xmax, b, z])]


def geofence_clamp(goal, arena: ArenaConfig) -> np.ndarray:
    xmin, xmax, ymin, ymax = arena.bounds
    lo, hi = arena.alt_corridor
    g = np.asarray(goal, dtype=float)
    return np.array([min(max(g[0], xmin), xmax), min(max(g[1], ymin), ymax), min(max(g[2], lo), hi)])


def inside_geofence(p, arena: ArenaConfig, tol: float = 1e-9) -> bool:
    xmin, xmax, ymin, ymax = arena.bounds
    lo, hi = arena.alt_corridor
    return (xmin - tol <= p[0] <= xmax + tol and ymin - tol <= p[1] <= ymax + tol
            and lo - tol <= p[2] <= hi + tol)


def _line(balloon, mav, fallback_yaw):
    d = np.array([balloon[0] - mav[0], balloon[1] - mav[1]], dtype=float)
    n = float(np.hypot(d[0], d[1]))
    if n < 1e-9:
        return np.array([math.cos(fallback_yaw), math.sin(fallback_yaw)])
    return d / n


def pop_goal(balloon, mav, cfg: MissionConfig = MissionConfig(), fallback_yaw: float = 0.0, line_dir=None):
    """Approach and through poses for a straight pass over ``balloon``.

    ``line_dir`` fixes the horizontal pass direction; by default it points
    from the vehicle to the balloon.
    """
    b = np.asarray(balloon, dtype=float)
    u = _line(b, mav, fallback_yaw) if line_dir is None else np.asarray(line_dir, dtype=float)
    z = b[2] + cfg.height_above
    yaw = math.atan2(u[1], u[0])
    vel = np.array([u[0] * cfg.pass_speed, u[1] * cfg.pass_speed, 0.0])
    approach = GoalPose(np.array([b[0] - cfg.approach_offset * u[0], b[1] - cfg.approach_offset * u[1], z]), vel, yaw)
    through = GoalPose(np.array([b[0] + cfg.through_offset * u[0], b[1] + cfg.through_offset * u[1], z]), vel, yaw)
    return approach, through


def _clamped(goal: GoalPose, arena: ArenaConfig) -> GoalPose:
    p = geofence_clamp(goal.position, arena)
    v = goal.pass_velocity
    if not np.allclose(p, goal.position):
        # a clamped pass point would be overshot; arrive at rest instead
        v = np.zeros(3)
    return GoalPose(p, v, goal.yaw)


def _face(target, mav, default):
    dx, dy = target[0] - mav[0], target[1] - mav[1]
    if math.hypot(dx, dy) < 1.0:
        return default
    return math.atan2(dy, dx)


@dataclass
class Transition:
    t: float
    mode_from: str
    mode_to: str
    target_id: int | None
    reason: str
    target: tuple | None = None  # pop target being entered or left

    def to_json(self) -> str:
        return json.dumps({"t": self.t, "mode_from": self.mode_from, "mode_to": self.mode_to,
                           "target_id": self.target_id, "reason": self.reason,
                           "target": None if self.target is None else list(self.target)})


class Mission:
    """Owns the mission state; call :meth:`step` at control rate."""

    def __init__(self, arena: ArenaConfig | None = None, cfg: MissionConfig | None = None):
        self.arena = arena or ArenaConfig()
        self.cfg = cfg or MissionConfig()
        self.state = MissionState()
        self.waypoints = search_waypoints(self.arena)
        self.transitions: list[Transition] = []
        self._t = 0.0
        self._started = False
        self._ids = None
        self._v = None

    # ------------------------------------------------------------------
    def _set_mode(self, mode, reason, target_id=None):
        s = self.state
        if mode == s.mode:
            return
        tgt = None if s.current_target is None else tuple(float(x) for x in s.current_target)
        self.transitions.append(Transition(self._t, s.mode, mode, target_id, reason, tgt))
        s.mode = mode
        if mode != POP:
            s.current_target = None
            s.line_dir = None
            s.target_uid = None
            s.hit = False

    def _start_pop(self, index, confirmed, mav_p, mav_yaw):
        s = self.state
        s.attempt += 1
        s.current_target = confirmed[index].copy()
        s.target_uid = self._ids[index] if self._ids is not None else None
        s.line_dir = _line(s.current_target, mav_p, mav_yaw)
        s.phase = APPROACH
        s.aligned = False
        s.hold = np.asarray(mav_p, dtype=float).copy()
        self._set_mode(POP, "target", s.attempt)

    def _nearest_waypoint(self, p):
        d = [float(np.hypot(w[0] - p[0], w[1] - p[1])) for w in self.waypoints]
        return int(np.argmin(d))

    def _after_attempt(self, confirmed, mav_p, mav_yaw, reason):
        s = self.state
        if self.cfg.strategy == STAR:
            self._set_mode(RETURN_TO_CENTER, reason)
        elif confirmed:
            self._set_mode(SEARCH, reason)
            self._start_pop(0, confirmed, mav_p, mav_yaw)
        else:
            self._set_mode(SEARCH, reason)
            s.search_index = self._nearest_waypoint(mav_p)

    # ------------------------------------------------------------------
    def step(self, t: float, confirmed, mav_p, mav_yaw: float, popped=(), ids=None, mav_v=None) -> GoalPose:
        """Advance one tick and return the (geofenced) goal pose.

        ``confirmed`` is the filter's confirmed list (closest first) and
        ``popped`` the hypotheses the filter removed this tick. ``ids``, if
        given, holds the hypothesis id of each confirmed entry; the target is
        then followed by id and only falls back to proximity after a merge.
        ``mav_v`` lets the approach hand over to the pass early once the
        vehicle already flies along the pass line.
        """
        self._t = t
        self._ids = None if ids is None else list(ids)
        self._v = None if mav_v is None else np.asarray(mav_v, dtype=float)
        s = self.state
        p = np.asarray(mav_p, dtype=float)
        confirmed = [np.asarray(c, dtype=float) for c in confirmed]
        if not self._started:
            self._started = True
            s.home_yaw = mav_yaw

        if s.mode == TAKEOFF:
            if p[2] >= self.arena.search_alt - self.cfg.takeoff_tol:
                self._set_mode(SEARCH, "airborne")
                s.search_index = 0
            else:
                return _clamped(GoalPose(np.array([p[0], p[1], self.arena.search_alt]), np.zeros(3), s.home_yaw),
                                self.arena)

        if s.mode == POP:
            goal = self._pop_tick(confirmed, p, mav_yaw, popped)
            if goal is not None:
                return goal

        if s.mode == RETURN_TO_CENTER:
            c = np.array([self.arena.center[0], self.arena.center[1], self.arena.search_alt])
            if np.hypot(c[0] - p[0], c[1] - p[1]) <= self.cfg.center_tol:
                if confirmed:
                    self._start_pop(0, confirmed, p, mav_yaw)
                    return self._pop_tick(confirmed, p, mav_yaw, ()) or self._search_goal(p, mav_yaw)
                self._set_mode(SEARCH, "center reached")
                s.search_index = self._nearest_waypoint(p)
            else:
                return _clamped(GoalPose(c, np.zeros(3), _face(c, p, mav_yaw)), self.arena)

        if s.mode == SEARCH:
            if confirmed:
                self._start_pop(0, confirmed, p, mav_yaw)
                goal = self._pop_tick(confirmed, p, mav_yaw, ())
                if goal is not None:
                    return goal
            return self._search_goal(p, mav_yaw)
        return _clamped(GoalPose(p.copy(), np.zeros(3), mav_yaw), self.arena)

    def _search_goal(self, p, mav_yaw):
        s = self.state
        wp = self.waypoints[s.search_index % len(self.waypoints)]
        if np.hypot(wp[0] - p[0], wp[1] - p[1]) <= self.cfg.waypoint_tol:
            s.search_index = (s.search_index + 1) % len(self.waypoints)
            wp = self.waypoints[s.search_index]
        return _clamped(GoalPose(wp.copy(), np.zeros(3), _face(wp, p, mav_yaw)), self.arena)

    def _refine(self, confirmed, tgt) -> bool:
        """Update the target from the confirmed list; False if it is gone.

        The target is followed by hypothesis id when ids are known, and by
        proximity otherwise. A single-tick jump of the estimate beyond the
        match radius (an outlier entering the history) is held off rather
        than followed.
        """
        s = self.state
        r = self.cfg.match_radius
        if self._ids is not None and s.target_uid in self._ids:
            c = confirmed[self._ids.index(s.target_uid)]
            if np.hypot(c[0] - tgt[0], c[1] - tgt[1]) < r:
                s.current_target = c
            return True
        for k, c in enumerate(confirmed):
            if np.hypot(c[0] - tgt[0], c[1] - tgt[1]) < r:
                s.current_target = c
                s.target_uid = None if self._ids is None else self._ids[k]
                return True
        return False

    def _pop_tick(self, confirmed, p, mav_yaw, popped):
        """Goal for the POP mode or None after leaving it."""
        s = self.state
        tgt = s.current_target
        hit = any(np.hypot(q[0] - tgt[0], q[1] - tgt[1]) <= self.cfg.match_radius for q in popped)
        if hit:
            if self.cfg.strategy == DIRECT:
                self._after_attempt(confirmed, p, mav_yaw, "popped")
                return None
            s.phase = THROUGH
            s.hit = True
        elif s.phase == APPROACH:
            # follow refinements of the estimate along the fixed pass line
            if not self._refine(confirmed, tgt):
                self._after_attempt(confirmed, p, mav_yaw, "target lost")
                return None
        elif not s.hit:
            # still refined during the pass, but never cancelled
            self._refine(confirmed, tgt)
        tgt = s.current_target
        approach, through = pop_goal(tgt, p, self.cfg, mav_yaw, s.line_dir)
        u = s.line_dir
        yaw = approach.yaw
        if np.hypot(tgt[0] - p[0], tgt[1] - p[1]) > self.cfg.approach_offset:
            # keep the estimate in view while it is refined; hold the line heading for the pass
            yaw = _face(tgt, p, yaw)
        # along-track position of the vehicle relative to the balloon
        past = float((p[:2] - tgt[:2]) @ u)

        if s.phase == APPROACH and not s.aligned:
            far = np.hypot(tgt[0] - p[0], tgt[1] - p[1]) > self.cfg.approach_offset + self.cfg.runup
            if far and abs(wrap_angle(yaw - mav_yaw)) > self.cfg.align_tol:
                return _clamped(GoalPose(s.hold, np.zeros(3), yaw), self.arena)
            s.aligned = True

        if s.phase == APPROACH:
            rel = p[:2] - approach.position[:2]
            along = float(rel @ u)
            lateral = abs(float(rel[0] * u[1] - rel[1] * u[0]))
            on_line = (
                self._v is not None
                and along >= -self.cfg.approach_lead
                and lateral <= self.cfg.line_tol
                and abs(float(self._v[0] * u[1] - self._v[1] * u[0])) <= self.cfg.line_speed_tol
            )
            if np.hypot(*rel) <= self.cfg.approach_tol or along >= 0.0 or on_line:
                s.phase = THROUGH
            else:
                vel = approach.pass_velocity if -along >= self.cfg.runup else np.zeros(3)
                return _clamped(GoalPose(approach.position, vel, yaw), self.arena)

        through_c = _clamped(GoalPose(through.position, through.pass_velocity, yaw), self.arena)
        rel = p[:2] - through_c.position[:2]
        if np.hypot(*rel) <= self.cfg.through_tol or float(rel @ u) >= 0.0 or past >= self.cfg.clear_distance:
            self._after_attempt(confirmed, p, mav_yaw, "pass complete")
            return None
        # keep the moving goal far enough ahead that the pass speed stays reachable
        ahead = max(self.cfg.through_offset, past + self.cfg.runup)
        pos = np.array([tgt[0] + ahead * u[0], tgt[1] + ahead * u[1], through.position[2]])
        return _clamped(GoalPose(pos, through.pass_velocity, yaw), self.arena)

    def log_lines(self):
        return [tr.to_json() for tr in self.transitions]
