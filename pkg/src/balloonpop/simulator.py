"""Seeded closed-loop world: plant, sensors, segmentation oracle and pop mechanics.

One :func:`run` call ties every module together at fixed rates (dynamics
200 Hz, laser and barometer 100 Hz, camera 20 Hz, mission and MPC 50 Hz) and
returns a :class:`SimTrace` with all events needed to recompute the summary.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import balloon_filter as bf
from . import height_filter as hf
from . import mission as ms
from . import perception as pc
from .records import TRACE_SCHEMA
from .geometry import CameraIntrinsics, mount_pose, to_field, wrap_angle
from .trajectory import G, AttitudeCommand, AxisLimits, AxisState, mpc_sample, yaw_control

log = logging.getLogger(__name__)

DYN_DT = 0.005
LASER_EVERY = 2  # 100 Hz
CONTROL_EVERY = 4  # 50 Hz
CAMERA_EVERY = 10  # 20 Hz
STATE_LOG_EVERY = 20  # 10 Hz


@dataclass(frozen=True)
class SensorNoiseConfig:
    mask_dropout_prob: float = 0.0
    clutter_components_per_frame: float = 0.0
    laser_outlier_prob: float = 0.0
    outlier_range: tuple = (0.2, 12.0)
    laser_sigma: float = 0.0
    baro_sigma: float = 0.0
    baro_drift_amp: float = 0.0
    baro_drift_period: float = 60.0
    depth_noise: float = 0.0
    laser_max_range: float = 5.0
    seed: int = 0

    def __post_init__(self):
        for name in ("mask_dropout_prob", "laser_outlier_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("clutter_components_per_frame", "laser_sigma", "baro_sigma", "baro_drift_amp", "depth_noise"):
            if not getattr(self, name) >= 0.0:
                raise ValueError(f"{name} must be non-negative")
        lo, hi = self.outlier_range
        if not 0.0 <= lo < hi:
            raise ValueError("outlier_range must satisfy 0 <= low < high")
        if not self.baro_drift_period > 0:
            raise ValueError("baro_drift_period must be positive")


@dataclass(frozen=True)
class TentacleRig:
    count: int = 4
    spacing: float = 0.30
    length: float = 1.4
    pop_speed_min: float = 1.0
    sweep_radius: float = 0.35
    max_yaw_rate: float = 0.5

    def __post_init__(self):
        if not (self.count >= 1 and self.spacing > 0 and self.length > 0 and self.sweep_radius > 0):
            raise ValueError("tentacle geometry must be positive")
        if self.pop_speed_min < 0 or self.max_yaw_rate < 0:
            raise ValueError("pop gates must be non-negative")


@dataclass(frozen=True)
class PlantConfig:
    tau_att: float = 0.15
    tau_z: float = 0.2
    tau_yaw: float = 0.2

    def __post_init__(self):
        if not (self.tau_att > 0 and self.tau_z > 0 and self.tau_yaw > 0):
            raise ValueError("time constants must be positive")


@dataclass(frozen=True)
class CameraConfig:
    fx: float = 2400.0
    fy: float = 2400.0
    cx: float = 959.5
    cy: float = 539.5
    width: int = 1920
    height: int = 1080
    pitch_deg: float = 10.0

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    def mask_intrinsics(self) -> CameraIntrinsics:
        return self.intrinsics().scaled(pc.MASK_WIDTH, pc.MASK_HEIGHT)


@dataclass
class Balloon:
    uid: int
    center: np.ndarray
    radius: float = 0.3
    alive: bool = True
    pole_height: float = 2.5


@dataclass
class SimWorld:
    arena: ms.ArenaConfig
    balloons: list

    def __post_init__(self):
        xmin = self.arena.center[0] - self.arena.length / 2
        ymin = self.arena.center[1] - self.arena.width / 2
        for b in self.balloons:
            if not (xmin <= b.center[0] <= xmin + self.arena.length and ymin <= b.center[1] <= ymin + self.arena.width):
                raise ValueError(f"balloon {b.uid} lies outside the arena")

    def alive(self):
        return [b for b in self.balloons if b.alive]


@dataclass
class MavSimState:
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0
    yaw_rate: float = 0.0

    def copy(self) -> "MavSimState":
        return MavSimState(self.p.copy(), self.v.copy(), self.a.copy(), self.yaw, self.yaw_rate)


# -- plant ---------------------------------------------------------------------

def step_dynamics(state: MavSimState, cmd: AttitudeCommand, dt: float, plant: PlantConfig = PlantConfig()) -> MavSimState:
    """Lag-filtered triple integrator driven by tilt, climb-rate and yaw-rate commands."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k_att = 1.0 - math.exp(-dt / plant.tau_att)
    k_z = 1.0 - math.exp(-dt / plant.tau_z)
    k_yaw = 1.0 - math.exp(-dt / plant.tau_yaw)
    a = state.a.copy()
    v = state.v.copy()
    a[0] += k_att * (G * math.tan(cmd.pitch) - a[0])
    a[1] += k_att * (G * math.tan(cmd.roll) - a[1])
    vz = v[2] + k_z * (cmd.climb_rate - v[2])
    a[2] = (vz - v[2]) / dt
    v[0] += a[0] * dt
    v[1] += a[1] * dt
    v[2] = vz
    p = state.p + v * dt
    if p[2] < 0.0:
        p[2] = 0.0
        v[2] = max(v[2], 0.0)
    yaw_rate = state.yaw_rate + k_yaw * (cmd.yaw_rate - state.yaw_rate)
    yaw = state.yaw + yaw_rate * dt if yaw_rate != 0.0 else state.yaw
    return MavSimState(p, v, a, wrap_angle(yaw) if yaw_rate != 0.0 else yaw, yaw_rate)


# -- segmentation oracle -----------------------------------------------------

def _outline_points(c_cam: np.ndarray, radius: float, intr: CameraIntrinsics):
    d = float(np.linalg.norm(c_cam))
    if d <= radius or c_cam[2] <= 0.0:
        return None
    beta = math.asin(radius / d)
    axis = c_cam / d
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    # enough samples for a gap-free 1 px outline
    n = int(min(max(8.0 * 2.0 * math.pi * intr.fx * math.tan(beta), 64), 40000))
    phi = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    dirs = (math.cos(beta) * axis)[None, :] + math.sin(beta) * (
        np.cos(phi)[:, None] * e1[None, :] + np.sin(phi)[:, None] * e2[None, :]
    )
    dirs = dirs[dirs[:, 2] > 1e-6]
    if len(dirs) == 0:
        return None
    u = intr.fx * dirs[:, 0] / dirs[:, 2] + intr.cx
    v = intr.fy * dirs[:, 1] / dirs[:, 2] + intr.cy
    return u, v


def _stamp(mask: np.ndarray, u, v) -> None:
    col = np.rint(u).astype(np.int64)
    row = np.rint(v).astype(np.int64)
    ok = (col >= 0) & (col < mask.shape[1]) & (row >= 0) & (row < mask.shape[0])
    mask[row[ok], col[ok]] = True


def render_mask(world: SimWorld, pose, intr: CameraIntrinsics, noise: SensorNoiseConfig, rng=None) -> np.ndarray:
    """Binary outline mask at ``intr`` resolution as the segmentation network would emit it."""
    mask = np.zeros((intr.height, intr.width), dtype=bool)
    for b in world.alive():
        pts = _outline_points(pose.inverse_apply(b.center), b.radius, intr)
        if pts is not None:
            _stamp(mask, *pts)
    if rng is not None and noise.mask_dropout_prob > 0.0:
        hit = np.nonzero(mask)
        drop = rng.random(len(hit[0])) < noise.mask_dropout_prob
        mask[hit[0][drop], hit[1][drop]] = False
    if rng is not None and noise.clutter_components_per_frame > 0.0:
        for _ in range(rng.poisson(noise.clutter_components_per_frame)):
            cu = rng.uniform(0, intr.width)
            cv = rng.uniform(0, intr.height)
            r = rng.uniform(3.0, 30.0)
            start = rng.uniform(0.0, 2.0 * math.pi)
            extent = rng.uniform(0.3, 1.5)
            phi = start + np.linspace(0.0, extent, max(int(r * extent * 2) + 2, 4))
            _stamp(mask, cu + r * np.cos(phi), cv + r * np.sin(phi))
    return dilate3(mask)


def dilate3(mask: np.ndarray) -> np.ndarray:
    """3x3 binary dilation (zero padding), equivalent to ndimage.binary_dilation."""
    p = np.pad(mask, 1)
    h, w = mask.shape
    out = np.zeros_like(mask)
    for dr in range(3):
        for dc in range(3):
            out |= p[dr : dr + h, dc : dc + w]
    return out


# -- height sensors ------------------------------------------------------------

def sense_laser(world: SimWorld, state: MavSimState, noise: SensorNoiseConfig, rng) -> float:
    h = float(state.p[2])
    lo, hi = noise.outlier_range
    if h > noise.laser_max_range or rng.random() < noise.laser_outlier_prob:
        junk = rng.uniform(lo, hi)
        # junk never lands close to the truth
        while abs(junk - h) <= 0.3:
            junk = rng.uniform(lo, hi)
        return float(junk)
    return h + (noise.laser_sigma * rng.standard_normal() if noise.laser_sigma > 0 else 0.0)


def sense_baro(state: MavSimState, noise: SensorNoiseConfig, t: float, rng) -> float:
    drift = noise.baro_drift_amp * math.sin(2.0 * math.pi * t / noise.baro_drift_period)
    sigma = noise.baro_sigma * rng.standard_normal() if noise.baro_sigma > 0 else 0.0
    return float(state.p[2]) + drift + sigma


# -- pop mechanics -------------------------------------------------------------

def _segment_distance(a, b, c) -> float:
    ab = b - a
    den = float(ab @ ab)
    t = 0.0 if den == 0.0 else min(max(float((c - a) @ ab) / den, 0.0), 1.0)
    return float(np.linalg.norm(a + t * ab - c))


def check_pop(state: MavSimState, prev_state: MavSimState, rig: TentacleRig, world: SimWorld,
              failure_model: bool, crossings: dict | None = None):
    """Ids of balloons punctured during the step from ``prev_state`` to ``state``.

    Without the failure model a balloon pops on the first step whose swept
    horizontal segment passes within the sweep radius at a height where the
    tentacles reach it. With the failure model the vehicle must keep moving
    and must not yaw for the whole crossing; the outcome is decided when the
    crossing ends. ``crossings`` carries that per-balloon state between calls.
    """
    if crossings is None:
        crossings = {}
    a = prev_state.p[:2]
    b = state.p[:2]
    speed = math.hypot(state.v[0], state.v[1])
    popped = []
    for bl in world.alive():
        inside = (
            _segment_distance(a, b, bl.center[:2]) <= rig.sweep_radius
            and bl.center[2] < state.p[2] <= bl.center[2] + rig.length
        )
        if not failure_model:
            if inside:
                popped.append(bl.uid)
            continue
        ok = speed >= rig.pop_speed_min and abs(state.yaw_rate) <= rig.max_yaw_rate
        if inside:
            crossings[bl.uid] = crossings.get(bl.uid, True) and ok
        elif bl.uid in crossings:
            if crossings.pop(bl.uid):
                popped.append(bl.uid)
    return popped


# -- world construction ------------------------------------------------------

def place_balloons(arena: ms.ArenaConfig, count: int, rng, min_separation: float = 8.0,
                   edge_inset: float = 5.0, center_clearance: float = 8.0, height: float = 2.8,
                   max_tries: int = 10000):
    """Uniform rejection sampling with pairwise and center clearance."""
    cx, cy = arena.center
    hx = arena.length / 2 - edge_inset
    hy = arena.width / 2 - edge_inset
    pts = []
    for _ in range(max_tries):
        if len(pts) == count:
            break
        x = cx + rng.uniform(-hx, hx)
        y = cy + rng.uniform(-hy, hy)
        if math.hypot(x - cx, y - cy) < center_clearance:
            continue
        if all(math.hypot(x - p[0], y - p[1]) >= min_separation for p in pts):
            pts.append((x, y))
    if len(pts) < count:
        raise ValueError("could not place balloons with the requested separation")
    return [Balloon(i, np.array([x, y, height])) for i, (x, y) in enumerate(pts)]


# -- closed loop ---------------------------------------------------------------

@dataclass
class SimTrace:
    header: dict
    events: list
    height_rows: list
    path_rows: list


def _limits(cfg):
    lim = cfg.limits
    xy = AxisLimits(lim.xy_v, lim.xy_a, lim.xy_j)
    z = AxisLimits(lim.z_v, lim.z_a, lim.z_j)
    return (xy, xy, z)


def _r(x):
    return float(x)


def _vec(v):
    return [float(c) for c in v]


def run(cfg, seed: int | None = None) -> SimTrace:
    """Simulate one scenario; ``cfg`` is a :class:`balloonpop.config.ScenarioConfig`."""
    seed = cfg.sim.seed if seed is None else seed
    streams = np.random.SeedSequence(seed).spawn(6)
    rng_place, rng_mask, rng_laser, rng_baro, rng_depth, _ = (np.random.default_rng(s) for s in streams)

    arena = cfg.arena
    if cfg.balloons.positions:
        balloons = [Balloon(i, np.array([x, y, cfg.balloons.height])) for i, (x, y) in enumerate(cfg.balloons.positions)]
    else:
        balloons = place_balloons(arena, cfg.balloons.count, rng_place, cfg.balloons.min_separation,
                                  cfg.balloons.edge_inset, cfg.balloons.center_clearance, cfg.balloons.height)
    for b in balloons:
        b.radius = cfg.balloons.radius
    world = SimWorld(arena, balloons)

    noise = cfg.noise
    rig = cfg.rig
    plant = cfg.plant
    intr_mask = cfg.camera.mask_intrinsics()
    pitch = math.radians(cfg.camera.pitch_deg)
    det_cfg = cfg.perception
    limits = _limits(cfg)
    kp = cfg.control.kp_yaw
    lead_xy = cfg.control.lead_xy
    lead_z = cfg.control.lead_z

    filt = bf.BalloonFilter(cfg.filter)
    hfilt = hf.HeightFilter(cfg.height)
    mission = ms.Mission(arena, cfg.mission)

    st = MavSimState(p=np.array([cfg.sim.start_x, cfg.sim.start_y, 0.0]), yaw=math.radians(cfg.sim.start_yaw_deg))
    cmd = AttitudeCommand()
    crossings: dict = {}
    events: list = []
    height_rows: list = []
    path_rows: list = []

    header = {
        "type": "header",
        "schema": TRACE_SCHEMA,
        "seed": int(seed),
        "strategy": cfg.mission.strategy,
        "metric": cfg.filter.metric,
        "failure_model": bool(cfg.sim.failure_model),
        "time_limit": _r(cfg.sim.time_limit),
        "balloons": [{"id": b.uid, "center": _vec(b.center)} for b in balloons],
        "geofence": [float(x) for x in arena.bounds + tuple(arena.alt_corridor)],
        "confirm_count": cfg.filter.confirm_count,
    }

    n_ticks = int(round(cfg.sim.time_limit / DYN_DT))
    end_reason = "time_limit"
    n_trans = 0
    goal = ms.GoalPose(st.p.copy(), np.zeros(3), st.yaw)
    t = 0.0
    for k in range(n_ticks + 1):
        t = k * DYN_DT
        if k % LASER_EVERY == 0:
            laser = sense_laser(world, st, noise, rng_laser)
            baro = sense_baro(st, noise, t, rng_baro)
            est = hfilt.update(t, laser, baro, DYN_DT * LASER_EVERY)
            height_rows.append((t, laser, baro, est, hfilt.mode, hfilt.last_accepted, float(st.p[2])))
        z_est = hfilt.estimate
        believed = np.array([st.p[0], st.p[1], z_est])

        if k % CAMERA_EVERY == 0:
            pose_true = mount_pose(st.p, st.yaw, pitch)
            pose_est = mount_pose(believed, st.yaw, pitch)
            mask = render_mask(world, pose_true, intr_mask, noise, rng_mask)
            dets = pc.detect(mask, intr_mask, det_cfg)
            field_pts = []
            for d in dets:
                P = d.P_m
                if noise.depth_noise > 0.0:
                    P = P * max(1.0 + noise.depth_noise * rng_depth.standard_normal(), 0.05)
                field_pts.append(to_field(pose_est, P))
            filt.process_frame(pose_est, intr_mask, field_pts)
            events.append({"type": "detections", "t": _r(t), "points": [_vec(p) for p in field_pts]})
            events.append({
                "type": "hypotheses",
                "t": _r(t),
                "h": [_vec(h.position) + [len(h.history), h.missed_count] for h in filt.hypotheses],
            })

        if k % CONTROL_EVERY == 0:
            popped_h = filt.mark_popped(believed)
            for q in popped_h:
                events.append({"type": "pop_assumed", "t": _r(t), "position": _vec(q)})
            conf_h = filt.confirmed_hypotheses(believed)
            goal = mission.step(t, [h.position for h in conf_h], believed, st.yaw, popped_h,
                                ids=[h.uid for h in conf_h], mav_v=st.v)
            for tr in mission.transitions[n_trans:]:
                ev = {"type": "mode", "t": _r(tr.t), "mode_from": tr.mode_from, "mode_to": tr.mode_to,
                      "target_id": tr.target_id, "reason": tr.reason}
                if tr.target is not None:
                    ev["target"] = _vec(tr.target)
                    ev["balloon"] = _associate(world, tr.target)
                events.append(ev)
            n_trans = len(mission.transitions)
            if not ms.inside_geofence(goal.position, arena):
                events.append({"type": "geofence_violation", "t": _r(t), "goal": _vec(goal.position)})
            current = (
                AxisState(float(st.p[0]), float(st.v[0]), float(st.a[0])),
                AxisState(float(st.p[1]), float(st.v[1]), float(st.a[1])),
                AxisState(float(z_est), float(st.v[2]), float(st.a[2])),
            )
            target = tuple(AxisState(float(goal.position[i]), float(goal.pass_velocity[i]), 0.0) for i in range(3))
            _, smp = mpc_sample(current, target, limits, DYN_DT * CONTROL_EVERY)
            # lead terms cancel the known first-order lags of the attitude and climb loops
            ax = smp[0][1] + lead_xy * smp[0][2]
            ay = smp[1][1] + lead_xy * smp[1][2]
            vz = smp[2][0] + lead_z * smp[2][1]
            cmd = AttitudeCommand(math.atan2(ax, G), math.atan2(ay, G), vz, yaw_control(goal.yaw, st.yaw, kp))

        if k % STATE_LOG_EVERY == 0:
            events.append({
                "type": "state", "t": _r(t), "p": _vec(st.p), "v": _vec(st.v), "yaw": _r(st.yaw),
                "yaw_rate": _r(st.yaw_rate), "z_est": _r(z_est), "mode": mission.state.mode,
                "cmd": [_r(cmd.pitch), _r(cmd.roll), _r(cmd.climb_rate), _r(cmd.yaw_rate)],
                "goal": _vec(goal.position) + _vec(goal.pass_velocity),
            })
            path_rows.append((t, float(st.p[0]), float(st.p[1]), mission.state.mode))

        if world.balloons and not world.alive():
            end_reason = "all_popped"
            break
        if k == n_ticks:
            break

        prev = st
        st = step_dynamics(st, cmd, DYN_DT, plant)
        for uid in check_pop(st, prev, rig, world, cfg.sim.failure_model, crossings):
            world.balloons[uid].alive = False
            events.append({"type": "pop", "t": _r(t + DYN_DT), "balloon": uid, "p": _vec(st.p)})
            log.info("t=%.2f popped balloon %d", t + DYN_DT, uid)

    events.append({"type": "end", "t": _r(t), "reason": end_reason})
    return SimTrace(header=header, events=events, height_rows=height_rows, path_rows=path_rows)


def _associate(world: SimWorld, target, radius: float = 2.0):
    best, best_d = None, radius
    for b in world.balloons:
        d = math.hypot(b.center[0] - target[0], b.center[1] - target[1])
        if d <= best_d:
            best, best_d = b.uid, d
    return best

