"""Jerk-limited time-optimal trajectories for a triple integrator.

Each axis is planned independently as a piecewise-constant-jerk profile of up
to seven phases: a velocity change to a peak velocity (where acceleration
returns to zero), an optional cruise, and a velocity change into the target
state. The peak velocity is solved for so that the profile covers the
requested displacement; among all admissible peaks the fastest is kept.

Profiles whose middle jerk arc never brings acceleration through zero are not
in that family. They are found separately as a single bang arc at one end
joined to a velocity change, parametrized by the acceleration at the joint.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .geometry import wrap_angle

G = 9.81
PROFILE_SCHEMA = "balloonpop.profile/1.0"


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class AxisLimits:
    v_max: float
    a_max: float
    j_max: float

    def __post_init__(self):
        if not (self.v_max > 0 and self.a_max > 0 and self.j_max > 0):
            raise ValueError("axis limits must be strictly positive")


XY_LIMITS = AxisLimits(5.0, 4.0, 5.0)
Z_LIMITS = AxisLimits(1.0, 10.0, 50.0)


@dataclass(frozen=True)
class AxisState:
    p: float = 0.0
    v: float = 0.0
    a: float = 0.0


@dataclass(frozen=True)
class AttitudeCommand:
    pitch: float = 0.0
    roll: float = 0.0
    climb_rate: float = 0.0
    yaw_rate: float = 0.0


def integrate(p, v, a, j, t):
    """Exact state after holding jerk ``j`` for ``t`` seconds."""
    return (
        p + v * t + a * t * t / 2.0 + j * t * t * t / 6.0,
        v + a * t + j * t * t / 2.0,
        a + j * t,
    )


@dataclass(frozen=True)
class AxisProfile:
    start: AxisState
    phases: tuple = ()
    synchronized: bool = True

    @property
    def duration(self) -> float:
        return sum(d for d, _ in self.phases)

    def sample(self, t: float):
        """Return (p, v, a, j) at time ``t``; past the end the final state is held."""
        p, v, a = self.start.p, self.start.v, self.start.a
        rem = max(t, 0.0)
        for dur, jerk in self.phases:
            if rem < dur:
                p, v, a = integrate(p, v, a, jerk, rem)
                return p, v, a, jerk
            p, v, a = integrate(p, v, a, jerk, dur)
            rem -= dur
        return p, v, a, 0.0

    def end_state(self) -> AxisState:
        p, v, a, _ = self.sample(self.duration)
        return AxisState(p, v, a)


def profile_csv(profile: AxisProfile, rate: float = 1000.0) -> str:
    """Phase table as comment lines, then (t, p, v, a, j) samples at ``rate`` Hz."""
    buf = io.StringIO()
    buf.write(f"# schema: {PROFILE_SCHEMA}\n")
    s = profile.start
    buf.write(f"# start p={s.p!r} v={s.v!r} a={s.a!r}\n")
    for i, (d, j) in enumerate(profile.phases):
        buf.write(f"# phase {i} duration={d!r} jerk={j!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("t", "p", "v", "a", "j"))
    n = int(math.floor(profile.duration * rate + 1e-9))
    for k in range(n + 1):
        t = k / rate
        w.writerow([repr(float(x)) for x in (t, *profile.sample(t))])
    return buf.getvalue()


def _vel_change(v0, a0, v1, a1, A, J):
    """Time-optimal jerk phases taking (v, a) from (v0, a0) to (v1, a1) with |a| <= A."""
    dv = v1 - v0
    if a1 != a0:
        s = 1.0 if a1 > a0 else -1.0
        dv_direct = (a1 * a1 - a0 * a0) / (2.0 * s * J)
    else:
        dv_direct = 0.0
    base = (a0 * a0 + a1 * a1) / 2.0
    if dv >= dv_direct:
        ap = math.sqrt(max(J * dv + base, 0.0))
        ap = max(ap, a0, a1)
        if ap <= A:
            return [((ap - a0) / J, J), ((ap - a1) / J, -J)]
        hold = (dv - (2.0 * A * A - a0 * a0 - a1 * a1) / (2.0 * J)) / A
        return [((A - a0) / J, J), (max(hold, 0.0), 0.0), ((A - a1) / J, -J)]
    am = -math.sqrt(max(-J * dv + base, 0.0))
    am = min(am, a0, a1)
    if am >= -A:
        return [((a0 - am) / J, -J), ((a1 - am) / J, J)]
    hold = (-dv - (2.0 * A * A - a0 * a0 - a1 * a1) / (2.0 * J)) / A
    return [((A + a0) / J, -J), (max(hold, 0.0), 0.0), ((A + a1) / J, J)]


def _run(phases, p, v, a):
    t = 0.0
    for dur, jerk in phases:
        p, v, a = integrate(p, v, a, jerk, dur)
        t += dur
    return p, v, a, t


def _vel_change_stats(v0, a0, v1, a1, A, J):
    """Distance and duration of the profile built by :func:`_vel_change`."""
    d = 0.0
    t = 0.0
    v, a = v0, a0
    for dur, jerk in _vel_change(v0, a0, v1, a1, A, J):
        d += v * dur + a * dur * dur / 2.0 + jerk * dur * dur * dur / 6.0
        v += a * dur + jerk * dur * dur / 2.0
        a += jerk * dur
        t += dur
    return d, t


def _vel_change_np(v0, a0, v1, a1, A, J):
    """Array version of :func:`_vel_change`: (t1, j1, hold, t3, j3) per element."""
    v0, a0, v1, a1 = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (v0, a0, v1, a1)))
    dv = v1 - v0
    s = np.where(a1 > a0, 1.0, -1.0)
    dv_direct = np.where(a1 != a0, (a1 * a1 - a0 * a0) / (2.0 * s * J), 0.0)
    base = (a0 * a0 + a1 * a1) / 2.0
    hold_dv = (2.0 * A * A - a0 * a0 - a1 * a1) / (2.0 * J)
    ap = np.maximum(np.maximum(np.sqrt(np.maximum(J * dv + base, 0.0)), a0), a1)
    am = np.minimum(np.minimum(-np.sqrt(np.maximum(-J * dv + base, 0.0)), a0), a1)
    up = dv >= dv_direct
    peak = np.where(up, np.minimum(ap, A), -np.minimum(-am, A))
    hold = np.where(up, np.where(ap > A, np.maximum((dv - hold_dv) / A, 0.0), 0.0),
                    np.where(am < -A, np.maximum((-dv - hold_dv) / A, 0.0), 0.0))
    j1 = np.where(up, J, -J)
    return (peak - a0) / j1, j1, hold, (peak - a1) / j1, -j1


def _advance_np(state, t, j):
    d, v, a, tt = state
    return (d + v * t + a * t * t / 2.0 + j * t ** 3 / 6.0, v + a * t + j * t * t / 2.0, a + j * t, tt + t)


class _Solver:
    """Evaluates the two-part profile family for one boundary-value problem."""

    def __init__(self, start: AxisState, target: AxisState, lim: AxisLimits):
        self.s = start
        self.t = target
        self.A = lim.a_max
        self.J = lim.j_max
        self.V = lim.v_max
        self.dp = target.p - start.p

    def stats(self, vp):
        d1, t1 = _vel_change_stats(self.s.v, self.s.a, vp, 0.0, self.A, self.J)
        d2, t2 = _vel_change_stats(vp, 0.0, self.t.v, self.t.a, self.A, self.J)
        return d1 + d2, t1 + t2

    def parts(self, vp):
        ph1 = _vel_change(self.s.v, self.s.a, vp, 0.0, self.A, self.J)
        ph2 = _vel_change(vp, 0.0, self.t.v, self.t.a, self.A, self.J)
        return ph1, ph2

    def gap(self, vp):
        return self.stats(vp)[0] - self.dp

    def cruise_time(self, vp):
        return (self.dp - self.stats(vp)[0]) / vp

    def build(self, vp, cruise=0.0):
        ph1, ph2 = self.parts(vp)
        if cruise > 0.0:
            return ph1 + [(cruise, 0.0)] + ph2
        return ph1 + ph2


def _compact(phases):
    return tuple((d, j) for d, j in phases if d > 1e-12)


def _check_bounds(state: AxisState, lim: AxisLimits, what: str):
    if abs(state.v) > lim.v_max + 1e-9 or abs(state.a) > lim.a_max + 1e-9:
        raise TrajectoryError(f"state out of bounds ({what}): v={state.v:.6g} a={state.a:.6g}")


def plan_axis(start: AxisState, target: AxisState, lim: AxisLimits) -> AxisProfile:
    """Minimum-time jerk profile from ``start`` to ``target`` under symmetric limits."""
    _check_bounds(start, lim, "start")
    _check_bounds(target, lim, "target")
    if (
        abs(target.p - start.p) < 1e-12
        and abs(target.v - start.v) < 1e-12
        and abs(target.a - start.a) < 1e-12
        and abs(start.a) < 1e-12
    ):
        return AxisProfile(start, ())

    sol = _Solver(start, target, lim)
    V = lim.v_max
    best = None  # (duration, peak velocity, cruise time)

    for vp in (V, -V):
        dist, total = sol.stats(vp)
        cruise = (sol.dp - dist) / vp
        if cruise >= 0.0 and (best is None or total + cruise < best[0]):
            best = (total + cruise, vp, cruise)

    # peak velocities without cruise: every root of the displacement gap
    grid = _peak_grid(start, target, lim)
    jgrid = _joint_grid(start, target, lim)
    vals, head_vals, tail_vals = _family_gaps(np.array(grid), np.array(jgrid), np.array(jgrid), start, target, lim)
    roots = _roots(sol.gap, grid, vals, 1e-14)
    for root in roots:
        total = sol.stats(root)[1]
        if best is None or total < best[0]:
            best = (total, root, 0.0)
    phases = None if best is None else sol.build(best[1], best[2])
    for cand in _joint_candidates(start, target, lim, jgrid, {"head": head_vals, "tail": tail_vals}):
        t = sum(d for d, _ in cand)
        if best is None or t < best[0] - 1e-12:
            best, phases = (t, None, 0.0), cand
    if phases is None:
        raise TrajectoryError("no admissible profile found")
    return AxisProfile(start, _compact(phases))


def _roots(f, grid, vals, xtol):
    """Roots of ``f`` bracketed by sign changes of the batched values ``vals`` on ``grid``.

    Bracket ends are re-evaluated with the scalar ``f``, which can differ from
    the batched value by rounding right at a branch boundary.
    """
    vals = list(vals)
    roots = [x for x, v in zip(grid, vals) if v == 0.0]
    for i in range(len(grid) - 1):
        if vals[i] * vals[i + 1] < 0.0:
            fa, fb = f(grid[i]), f(grid[i + 1])
            if fa == 0.0 or fb == 0.0:
                roots.append(grid[i] if fa == 0.0 else grid[i + 1])
            elif fa * fb < 0.0:
                roots.append(brentq(f, grid[i], grid[i + 1], xtol=xtol, maxiter=200))
    return roots


def _arc(v, a, a_to, J):
    """Single bang arc taking acceleration from ``a`` to ``a_to``; returns (phases, end velocity)."""
    if a_to == a:
        return [], v
    j = J if a_to > a else -J
    return [((a_to - a) / j, j)], v + (a_to * a_to - a * a) / (2.0 * j)


def _joint_phases(kind, am, start, target, lim):
    A, J = lim.a_max, lim.j_max
    if kind == "head":
        first, vm = _arc(start.v, start.a, am, J)
        return first + _vel_change(vm, am, target.v, target.a, A, J), vm
    last, dv = _arc(0.0, am, target.a, J)
    vm = target.v - dv
    return _vel_change(start.v, start.a, vm, am, A, J) + last, vm


def _limit_excess(phases, start: AxisState, lim: AxisLimits):
    """Largest |v| or |a| excess over the profile (exact: phase ends and interior a = 0)."""
    p, v, a = start.p, start.v, start.a
    worst = 0.0
    for dur, j in phases:
        if j != 0.0 and 0.0 < -a / j < dur:
            worst = max(worst, abs(integrate(p, v, a, j, -a / j)[1]) - lim.v_max)
        p, v, a = integrate(p, v, a, j, dur)
        worst = max(worst, abs(v) - lim.v_max, abs(a) - lim.a_max)
    return worst


def _joint_grid(start, target, lim, n=48):
    A = lim.a_max
    return sorted({-A + 2.0 * A * k / n for k in range(n + 1)} | {
        x + d for x in (start.a, target.a, 0.0) for d in (0.0, -1e-7, 1e-7) if -A <= x + d <= A})


def _joint_candidates(start, target, lim, grid, gap_values):
    """Profiles made of a bang arc at one end plus a velocity change, one per displacement root."""
    dp = target.p - start.p
    out = []
    for kind in ("head", "tail"):
        def gap(am):
            return _run(_joint_phases(kind, am, start, target, lim)[0], 0.0, start.v, start.a)[0] - dp

        roots = _roots(gap, grid, gap_values[kind], 1e-15)
        for am in roots:
            phases, vm = _joint_phases(kind, am, start, target, lim)
            if any(d < 0.0 for d, _ in phases) or _limit_excess(phases, start, lim) > 1e-9:
                continue
            end = _run(phases, start.p, start.v, start.a)
            if abs(end[0] - target.p) > 1e-7 or abs(end[1] - target.v) > 1e-9 or abs(end[2] - target.a) > 1e-9:
                continue
            out.append(phases)
    return out


def _family_gaps(vp, am_head, am_tail, start, target, lim):
    """Displacement gaps of the peak, head and tail families, evaluated in one batch."""
    A, J = lim.a_max, lim.j_max
    n1, n2 = len(vp), len(am_head)
    am_t = np.asarray(am_tail, dtype=float)
    # intermediate (velocity, acceleration) each row's first part ends in
    mid_v = np.concatenate([vp, np.zeros(n2), target.v - (target.a ** 2 - am_t ** 2) / (2.0 * np.where(target.a > am_t, J, -J))])
    mid_v[n1 + n2:][am_t == target.a] = target.v
    mid_a = np.concatenate([np.zeros(n1), am_head, am_t])
    head = np.zeros(len(mid_v), dtype=bool)
    head[n1:n1 + n2] = True
    tail = np.zeros(len(mid_v), dtype=bool)
    tail[n1 + n2:] = True

    zero = np.zeros(len(mid_v))
    t1, j1, hold, t3, j3 = _vel_change_np(start.v, start.a, mid_v, mid_a, A, J)
    arc_j = np.where(mid_a > start.a, J, -J)
    t1 = np.where(head, np.abs(mid_a - start.a) / J, t1)
    j1 = np.where(head, arc_j, j1)
    hold = np.where(head, 0.0, hold)
    t3 = np.where(head, 0.0, t3)
    st = (zero, start.v + zero, start.a + zero, zero)
    st = _advance_np(_advance_np(_advance_np(st, t1, j1), hold, 0.0), t3, j3)

    t1, j1, hold, t3, j3 = _vel_change_np(st[1], st[2], target.v, target.a, A, J)
    arc_j = np.where(target.a > st[2], J, -J)
    t1 = np.where(tail, np.abs(target.a - st[2]) / J, t1)
    j1 = np.where(tail, arc_j, j1)
    hold = np.where(tail, 0.0, hold)
    t3 = np.where(tail, 0.0, t3)
    st = _advance_np(_advance_np(_advance_np(st, t1, j1), hold, 0.0), t3, j3)
    gaps = st[0] - (target.p - start.p)
    return gaps[:n1], gaps[n1:n1 + n2], gaps[n1 + n2:]


def _peak_grid(start, target, lim, n=24):
    V, J = lim.v_max, lim.j_max
    pts = {-V, V}
    for k in range(1, n):
        pts.add(-V + 2.0 * V * k / n)
    extra = (
        start.v,
        target.v,
        start.v + start.a * abs(start.a) / (2.0 * J),
        target.v - target.a * abs(target.a) / (2.0 * J),
    )
    for x in extra:
        for d in (0.0, -1e-7, 1e-7):
            y = x + d
            if -V < y < V:
                pts.add(y)
    return sorted(pts)


def _stretch(profile: AxisProfile, target: AxisState, lim: AxisLimits, duration: float):
    """Re-plan one axis to take exactly ``duration`` by capping its cruise velocity."""
    start = profile.start
    if not profile.phases:
        if abs(start.v) < 1e-12 and abs(start.a) < 1e-12:
            return AxisProfile(start, ((duration, 0.0),))
        return None
    sol = _Solver(start, target, lim)
    g0 = sol.gap(0.0)
    # moves below a nanometre are held in place rather than crept at a vanishing cap
    if abs(g0) < 1e-9:
        total = sol.stats(0.0)[1]
        if total <= duration:
            ph1, ph2 = sol.parts(0.0)
            return AxisProfile(start, _compact(ph1 + [(duration - total, 0.0)] + ph2))
        return None
    sign = 1.0 if g0 < 0.0 else -1.0

    def excess(c):
        dist, total = sol.stats(sign * c)
        return total + (sol.dp - dist) / (sign * c) - duration

    # scan the velocity cap downward from v_max for a bracket of the duration
    n = 32
    # linear steps, then a geometric tail for very short moves
    caps = [lim.v_max * (n - k) / n for k in range(n)] + [lim.v_max * 10.0 ** (-k / 2) for k in range(3, 25)]
    prev = None
    blocked = None  # last cap whose cruise time would be negative
    for c in caps:
        dist, total = sol.stats(sign * c)
        cruise = (sol.dp - dist) / (sign * c)
        if cruise < -1e-12:
            prev = None
            blocked = c
            continue
        e = total + cruise - duration
        if abs(e) < 1e-12:
            return AxisProfile(start, _compact(sol.build(sign * c, cruise)))
        if prev is None and blocked is not None and e > 0.0:
            # the zero-cruise boundary between the two caps bounds the duration from below
            edge = brentq(lambda x: sol.gap(sign * x), c, blocked, xtol=1e-14, maxiter=200)
            prev = (edge, sol.stats(sign * edge)[1] - duration)
        if prev is not None and prev[1] < 0.0 < e:
            c_root = brentq(excess, c, prev[0], xtol=1e-14, maxiter=200)
            return AxisProfile(start, _compact(sol.build(sign * c_root, max(sol.cruise_time(sign * c_root), 0.0))))
        if e > 0.0:
            return None
        prev = (c, e)
    return None


def _stretch_accel(profile: AxisProfile, target: AxisState, lim: AxisLimits, duration: float):
    """Re-plan one axis to take ``duration`` by lowering its acceleration limit.

    Used when no velocity cap gives the duration: a capped profile that still
    overshoots the displacement must brake harder, not longer. The minimum
    time grows as the acceleration limit shrinks, so the limit is found by
    root bracketing on the planned duration.
    """
    start = profile.start
    floor = max(abs(start.a), abs(target.a))

    def excess(a_max):
        return plan_axis(start, target, AxisLimits(lim.v_max, a_max, lim.j_max)).duration - duration

    hi = lim.a_max
    lo = hi / 2.0
    try:
        while lo > floor + 1e-9 and excess(lo) < 0.0:
            hi, lo = lo, lo / 2.0
        if lo <= floor + 1e-9:
            lo = floor + 1e-9
            if excess(lo) < 0.0:
                return None
        a_root = brentq(excess, lo, hi, xtol=1e-10, maxiter=100)
        prof = plan_axis(start, target, AxisLimits(lim.v_max, a_root, lim.j_max))
    except (TrajectoryError, ValueError):
        return None
    if abs(prof.duration - duration) > 1e-3 or _limit_excess(prof.phases, start, lim) > 1e-9:
        return None
    return prof


def synchronize(profiles, targets, limits):
    """Slow the faster axes so that all profiles share the slowest duration.

    Axes that cannot be stretched keep their own profile with
    ``synchronized=False``.
    """
    durations = [p.duration for p in profiles]
    T = max(durations)
    out = []
    for prof, tgt, lim, d in zip(profiles, targets, limits, durations):
        if T - d <= 1e-4:
            out.append(prof)
            continue
        stretched = _stretch(prof, tgt, lim, T) or _stretch_accel(prof, tgt, lim, T)
        if stretched is None or abs(stretched.duration - T) > 1e-3:
            out.append(AxisProfile(prof.start, prof.phases, synchronized=False))
        else:
            out.append(stretched)
    return out


def plan(current, target, limits, sync=True):
    profiles = [plan_axis(c, t, l) for c, t, l in zip(current, target, limits)]
    if sync:
        profiles = synchronize(profiles, target, limits)
    return profiles


def _clamp_state(s: AxisState, lim: AxisLimits) -> AxisState:
    v = min(max(s.v, -lim.v_max), lim.v_max)
    a = min(max(s.a, -lim.a_max), lim.a_max)
    return AxisState(s.p, v, a)


def mpc_sample(current, target, limits, dt: float = 0.02):
    """Plan from ``current`` and sample it at ``dt``.

    Returns the command together with the sampled per-axis (v, a, j), which
    lets a caller add feed-forward on top of the plain mapping.
    """
    cur = [_clamp_state(c, l) for c, l in zip(current, limits)]
    profiles = plan(cur, list(target), list(limits))
    samples = [pr.sample(dt)[1:] for pr in profiles]
    ax = samples[0][1]
    ay = samples[1][1]
    vz = samples[2][0]
    cmd = AttitudeCommand(pitch=math.atan2(ax, G), roll=math.atan2(ay, G), climb_rate=vz)
    return cmd, samples


def mpc_step(current, target, limits, dt: float = 0.02) -> AttitudeCommand:
    """One receding-horizon tick: re-plan all axes and sample the plan at ``dt``.

    Current states marginally outside the limits (plant transients) are clamped
    before planning.
    """
    return mpc_sample(current, target, limits, dt)[0]


def yaw_control(psi_target: float, psi: float, kp: float) -> float:
    return kp * wrap_angle(psi_target - psi)
