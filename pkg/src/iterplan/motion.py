"""Fixed-wing kinematics and circle-straight-circle trajectories.

Headings are radians measured counter-clockwise from +x. Positive arc angles
turn left.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

TWO_PI = 2.0 * math.pi
_ARC_EPS = 1e-9
KINDS = ("LSL", "RSR", "LSR", "RSL")


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float = 17.0

    def __post_init__(self):
        if not self.speed > 0:
            raise ValueError("speed must be positive")

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class VehicleLimits:
    min_turn_radius: float = 60.0
    cruise_speed: float = 17.0
    arrival_radius: float = 15.0

    def __post_init__(self):
        if min(self.min_turn_radius, self.cruise_speed, self.arrival_radius) <= 0:
            raise ValueError("vehicle limits must be positive")


@dataclass(frozen=True)
class Straight:
    length: float

    def advance(self, x, y, h, s):
        return x + s * math.cos(h), y + s * math.sin(h), h


@dataclass(frozen=True)
class Arc:
    radius: float
    angle: float

    @property
    def length(self) -> float:
        return abs(self.angle) * self.radius

    def advance(self, x, y, h, s):
        """Pose after arc length ``s`` (0 <= s <= length) from (x, y, h)."""
        sign = 1.0 if self.angle >= 0 else -1.0
        h2 = h + sign * s / self.radius
        x2 = x + sign * self.radius * (math.sin(h2) - math.sin(h))
        y2 = y - sign * self.radius * (math.cos(h2) - math.cos(h))
        return x2, y2, h2


@dataclass(frozen=True)
class Trajectory:
    start: VehicleState
    segments: tuple
    end: VehicleState
    kind: str = ""

    def __len__(self):
        return len(self.segments)


def wrap(angle: float) -> float:
    """Angle in [0, 2pi)."""
    a = math.fmod(angle, TWO_PI)
    return a + TWO_PI if a < 0 else a


def trajectory_length(t: Trajectory) -> float:
    return float(sum(seg.length for seg in t.segments))


def advance_through(state: VehicleState, segments) -> VehicleState:
    x, y, h = state.x, state.y, state.heading
    for seg in segments:
        x, y, h = seg.advance(x, y, h, seg.length)
    return VehicleState(x, y, wrap(h), state.speed)


def make_trajectory(state: VehicleState, segments, kind: str = "") -> Trajectory:
    segs = tuple(s for s in segments if s.length > 1e-9)
    return Trajectory(state, segs, advance_through(state, segs), kind)


def _mod2pi(a):
    a = np.mod(a, TWO_PI)
    return np.where((a < _ARC_EPS) | (a > TWO_PI - _ARC_EPS), 0.0, a)


def csc_table(x0, y0, h0, tx, ty, h1, r):
    """Arc/straight/arc parameters of the four CSC words, vectorised over targets.

    Returns (arc1, straight, arc2) arrays of shape (4, k) in ``KINDS`` order.
    Arc values are unsigned turn angles; infeasible words get NaN.
    """
    tx = np.asarray(tx, dtype=float)
    ty = np.asarray(ty, dtype=float)
    h1 = np.broadcast_to(np.asarray(h1, dtype=float), tx.shape)
    s0, c0 = math.sin(h0), math.cos(h0)
    s1, c1 = np.sin(h1), np.cos(h1)
    left0 = (x0 - r * s0, y0 + r * c0)
    right0 = (x0 + r * s0, y0 - r * c0)
    left1 = (tx - r * s1, ty + r * c1)
    right1 = (tx + r * s1, ty - r * c1)
    arc1 = np.empty((4,) + tx.shape)
    straight = np.empty_like(arc1)
    arc2 = np.empty_like(arc1)

    for k, (a, b) in enumerate(((left0, left1), (right0, right1))):
        dx, dy = b[0] - a[0], b[1] - a[1]
        dist = np.hypot(dx, dy)
        psi = np.where(dist > 0, np.arctan2(dy, dx), h0)
        if k == 0:
            arc1[0], arc2[0] = _mod2pi(psi - h0), _mod2pi(h1 - psi)
        else:
            arc1[1], arc2[1] = _mod2pi(h0 - psi), _mod2pi(psi - h1)
        straight[k] = dist

    for k, (a, b, sign) in ((2, (left0, right1, 1.0)), (3, (right0, left1, -1.0))):
        dx, dy = b[0] - a[0], b[1] - a[1]
        d2 = dx * dx + dy * dy
        ok = d2 >= 4 * r * r
        run = np.sqrt(np.where(ok, d2 - 4 * r * r, 0.0))
        psi = np.arctan2(dy, dx) + sign * np.arctan2(2 * r, run)
        if sign > 0:
            a1, a2 = _mod2pi(psi - h0), _mod2pi(psi - h1)
        else:
            a1, a2 = _mod2pi(h0 - psi), _mod2pi(h1 - psi)
        arc1[k] = np.where(ok, a1, np.nan)
        arc2[k] = np.where(ok, a2, np.nan)
        straight[k] = np.where(ok, run, np.nan)
    return arc1, straight, arc2


def csc_lengths(state: VehicleState, targets: np.ndarray, arrival_axis: float, r: float) -> np.ndarray:
    """Shortest CSC length to each row of ``targets`` (k, 2) over both arrival headings."""
    targets = np.asarray(targets, dtype=float)
    best = np.full(len(targets), np.inf)
    for h1 in (arrival_axis, arrival_axis + math.pi):
        a1, s, a2 = csc_table(state.x, state.y, state.heading, targets[:, 0], targets[:, 1], h1, r)
        total = r * (a1 + a2) + s
        best = np.fmin(best, np.nanmin(total, axis=0))
    return best


def _candidates(state: VehicleState, target, arrival_axis: float, r: float):
    out = []
    for h1 in (arrival_axis, arrival_axis + math.pi):
        a1, s, a2 = csc_table(state.x, state.y, state.heading, [target[0]], [target[1]], h1, r)
        for k, kind in enumerate(KINDS):
            if np.isnan(s[k, 0]):
                continue
            sign1 = 1.0 if kind[0] == "L" else -1.0
            sign2 = 1.0 if kind[2] == "L" else -1.0
            length = float(r * (a1[k, 0] + a2[k, 0]) + s[k, 0])
            segs = (Arc(r, sign1 * float(a1[k, 0])), Straight(float(s[k, 0])),
                    Arc(r, sign2 * float(a2[k, 0])))
            out.append((length, kind, segs))
    return out


def plan_trajectory(state: VehicleState, target, arrival_axis: float,
                    limits: VehicleLimits = VehicleLimits()) -> Trajectory:
    """Shortest CSC path ending at ``target`` with heading parallel to ``arrival_axis``."""
    cands = _candidates(state, target, arrival_axis, limits.min_turn_radius)
    length, kind, segs = min(cands, key=lambda c: c[0])
    return make_trajectory(state, segs, kind)


def loiter(state: VehicleState, limits: VehicleLimits = VehicleLimits()) -> Trajectory:
    """One full left orbit at minimum radius, ending where it began."""
    return make_trajectory(state, (Arc(limits.min_turn_radius, TWO_PI),), "O")


def predicted_arrival_state(t: Trajectory) -> VehicleState:
    return t.end


def step(state: VehicleState, trajectory: Trajectory | None, dt: float):
    """Advance ``speed * dt`` metres along the trajectory.

    Segments are consumed as they complete. A trajectory that ends inside the
    step snaps to its end pose and reports the unused distance; without a
    trajectory the vehicle flies straight. Returns (state, remaining
    trajectory or None, unused distance).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    budget = state.speed * dt
    x, y, h = state.x, state.y, state.heading
    if trajectory is not None:
        segs = list(trajectory.segments)
        while segs and budget > 0:
            seg = segs[0]
            if seg.length <= budget:
                budget -= seg.length
                x, y, h = seg.advance(x, y, h, seg.length)
                segs.pop(0)
            else:
                x, y, h = seg.advance(x, y, h, budget)
                if isinstance(seg, Straight):
                    rest = Straight(seg.length - budget)
                else:
                    rest = Arc(seg.radius, math.copysign(abs(seg.angle) - budget / seg.radius, seg.angle))
                segs[0] = rest
                budget = 0.0
        if not segs:
            x, y, h = trajectory.end.x, trajectory.end.y, trajectory.end.heading
            new = VehicleState(x, y, h, state.speed)
            return new, None, budget
        new = VehicleState(x, y, h, state.speed)
        return new, Trajectory(new, tuple(segs), trajectory.end, trajectory.kind), 0.0
    new = VehicleState(x + budget * math.cos(h), y + budget * math.sin(h), h, state.speed)
    return new, None, 0.0


def with_speed(state: VehicleState, speed: float) -> VehicleState:
    return replace(state, speed=speed)
