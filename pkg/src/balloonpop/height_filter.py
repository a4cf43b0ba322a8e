"""Altitude estimate from a downward laser and the fused barometric height.

Laser readings are trusted only inside a height window and only when they
agree with the last trusted reading. While the laser is untrusted the
estimate follows barometric deltas; once it is trusted again the estimate
snaps back or slides toward it at a bounded slope.
"""
from __future__ import annotations

from dataclasses import dataclass, field

BARO_ONLY = "BARO_ONLY"
LASER_TRACKING = "LASER_TRACKING"
EXTRAPOLATING = "EXTRAPOLATING"
RECONCILING = "RECONCILING"
MODES = (BARO_ONLY, LASER_TRACKING, EXTRAPOLATING, RECONCILING)

TRACE_COLUMNS = ("t", "laser", "baro", "estimate", "mode", "valid")


@dataclass(frozen=True)
class HeightFilterConfig:
    floor: float = 1.0
    window: tuple = (1.0, 5.0)
    outlier_gate: float = 0.15
    bootstrap_count: int = 10
    reinit_after: int = 100
    max_slope: float = 1.5
    snap_gate: float = 0.15

    def __post_init__(self):
        for name in ("floor", "outlier_gate", "bootstrap_count", "reinit_after", "max_slope", "snap_gate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        lo, hi = self.window
        if not (0 < lo < hi):
            raise ValueError("window must satisfy 0 < low < high")


@dataclass
class HeightFilterState:
    estimate: float = 0.0
    last_valid_laser: float | None = None
    rejected_streak: int = 0
    bootstrap_buffer: list = field(default_factory=list)
    mode: str = BARO_ONLY
    last_baro: float | None = None
    locked_once: bool = False


def validate(state: HeightFilterState, laser: float, cfg: HeightFilterConfig = HeightFilterConfig()) -> bool:
    if laser < cfg.floor:
        return False
    lo, hi = cfg.window
    if not (lo <= state.estimate <= hi):
        return False
    if state.last_valid_laser is not None and abs(laser - state.last_valid_laser) > cfg.outlier_gate:
        return False
    return True


def bootstrap_try(state: HeightFilterState, laser: float, cfg: HeightFilterConfig = HeightFilterConfig()) -> bool:
    """Buffer a candidate; after ``bootstrap_count`` pick the one with the most inliers."""
    state.bootstrap_buffer.append(float(laser))
    if len(state.bootstrap_buffer) < cfg.bootstrap_count:
        return False
    buf = state.bootstrap_buffer
    # ties go to the earliest sample
    best = max(buf, key=lambda x: sum(abs(y - x) <= cfg.outlier_gate for y in buf))
    state.last_valid_laser = best
    state.bootstrap_buffer = []
    return True


def _reconcile(state: HeightFilterState, target: float, dt: float, cfg: HeightFilterConfig) -> None:
    diff = target - state.estimate
    if abs(diff) <= cfg.snap_gate and state.mode != RECONCILING:
        state.estimate = target
        state.mode = LASER_TRACKING
        return
    limit = cfg.max_slope * dt
    if abs(diff) <= limit:
        state.estimate = target
        state.mode = LASER_TRACKING
    else:
        state.estimate += limit if diff > 0 else -limit
        state.mode = RECONCILING


def step(state: HeightFilterState, laser, baro: float, dt: float, cfg: HeightFilterConfig = HeightFilterConfig()):
    """Advance one sensor tick. Returns (state, estimate, laser_valid).

    The window gate sees the estimate from before this tick.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.last_baro is None:
        state.estimate = baro
        state.last_baro = baro

    accepted = False
    ok = laser is not None and validate(state, laser, cfg)
    if ok and state.last_valid_laser is None:
        if bootstrap_try(state, laser, cfg):
            accepted = True
            state.locked_once = True
            laser = state.last_valid_laser
    elif ok:
        accepted = True
        state.last_valid_laser = float(laser)

    if accepted:
        state.rejected_streak = 0
        _reconcile(state, float(laser), dt, cfg)
    else:
        state.estimate += baro - state.last_baro
        if ok:
            # a sample buffered for bootstrap is not a rejection
            state.rejected_streak = 0
        else:
            state.rejected_streak += 1
        if state.rejected_streak >= cfg.reinit_after:
            state.last_valid_laser = None
            state.bootstrap_buffer = []
            state.rejected_streak = 0
        state.mode = EXTRAPOLATING if state.locked_once else BARO_ONLY
    state.last_baro = baro
    return state, state.estimate, accepted


class HeightFilter:
    """Convenience wrapper holding config, state and an optional trace."""

    def __init__(self, cfg: HeightFilterConfig | None = None, keep_trace: bool = False):
        self.cfg = cfg or HeightFilterConfig()
        self.state = HeightFilterState()
        self.trace = [] if keep_trace else None
        self.reinit_count = 0
        self.last_accepted = False

    def update(self, t: float, laser, baro: float, dt: float) -> float:
        had_lock = self.state.last_valid_laser is not None
        _, est, valid = step(self.state, laser, baro, dt, self.cfg)
        self.last_accepted = valid
        if had_lock and self.state.last_valid_laser is None:
            self.reinit_count += 1
        if self.trace is not None:
            self.trace.append((t, laser, baro, est, self.state.mode, valid))
        return est

    @property
    def estimate(self) -> float:
        return self.state.estimate

    @property
    def mode(self) -> str:
        return self.state.mode
