"""Stage 2: feasible trajectory reconstruction by pure pursuit on clothoid arcs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import clothoid
from .core import ClothoidArc, Configuration, Scenario, Trajectory, wrap_angle
from .geometry import cumulative_length, dedupe, project
from .predictors import Predictor
from .search import ReferenceTrajectory, SearchConfig, SearchResult, generate_reference

# fraction of c0_max below which a goal-approach escape run ends
ESCAPE_RELEASE = 0.5


class DegenerateHistoryError(ValueError):
    pass


class UnreachableReferenceError(RuntimeError):
    def __init__(self, message: str, trace: "ReconstructionTrace"):
        super().__init__(message)
        self.trace = trace


class TraceTooShortError(RuntimeError):
    def __init__(self, message: str, trajectory: Trajectory, achieved: int):
        super().__init__(message)
        self.trajectory = trajectory
        self.achieved = achieved


@dataclass(frozen=True)
class PursuitConfig:
    alpha: float = 2.0
    step_length: float = 0.2
    c0_max: float = 0.2
    c1_max_base: float = 0.5
    goal_tolerance: float = 0.5
    max_steps: int | None = None
    # start from the adversary's true pose instead of the reference's first points
    real_start_pose: bool = False

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        for name in ("step_length", "c0_max", "c1_max_base", "goal_tolerance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def c1_max(self, v: float) -> float:
        return self.c1_max_base / max(v, 1.0)


@dataclass
class LookaheadRecord:
    target: tuple[float, float]
    theta: float
    c0_desired: float
    c1_limited: float


@dataclass
class ReconstructionTrace:
    configs: list[Configuration]
    arcs: list[ClothoidArc]
    lookahead_log: list[LookaheadRecord] = field(default_factory=list)
    reached: bool = True

    @property
    def length(self) -> float:
        return float(sum(a.length for a in self.arcs))

    def config_at(self, s: float) -> Configuration:
        """Configuration at arc length ``s`` from the trace start."""
        if not self.arcs:
            return self.configs[0]
        s = min(max(s, 0.0), self.length)
        i = 0
        acc = 0.0
        while i < len(self.arcs) - 1 and acc + self.arcs[i].length < s:
            acc += self.arcs[i].length
            i += 1
        return clothoid.config_at(self.configs[i], self.arcs[i], min(s - acc, self.arcs[i].length))

    def to_jsonl(self) -> str:
        lines = []
        for i, c in enumerate(self.configs):
            rec = {"i": i, "x": c.x, "y": c.y, "psi": c.psi, "c0": c.c0}
            if i > 0:
                a = self.arcs[i - 1]
                rec["arc"] = {"c1": a.c1, "length": a.length}
                la = self.lookahead_log[i - 1] if i - 1 < len(self.lookahead_log) else None
                if la is not None:
                    rec["lookahead"] = {"target": list(la.target), "theta": la.theta,
                                        "c0_desired": la.c0_desired, "c1_limited": la.c1_limited}
            lines.append(json.dumps(rec))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "ReconstructionTrace":
        configs, arcs, log = [], [], []
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            configs.append(Configuration(rec["x"], rec["y"], rec["psi"], rec["c0"]))
            if "arc" in rec:
                arcs.append(ClothoidArc(rec["arc"]["c1"], rec["arc"]["length"]))
            if "lookahead" in rec:
                la = rec["lookahead"]
                log.append(LookaheadRecord(tuple(la["target"]), la["theta"], la["c0_desired"], la["c1_limited"]))
        return cls(configs, arcs, log)


def average_speed(scenario: Scenario) -> float:
    """Mean step length of the adversary's true history divided by dt."""
    hist = scenario.history()
    if len(hist) < 2:
        raise DegenerateHistoryError("history needs at least two states")
    steps = np.hypot(*np.diff(hist, axis=0).T)
    v = float(np.mean(steps)) / scenario.dt
    if v <= 0.0:
        raise DegenerateHistoryError("adversary history is stationary")
    return v


def _lateral(pose: Configuration, point: np.ndarray) -> float:
    dx, dy = point[0] - pose.x, point[1] - pose.y
    return -math.sin(pose.psi) * dx + math.cos(pose.psi) * dy


def _longitudinal(pose: Configuration, point: np.ndarray) -> float:
    return math.cos(pose.psi) * (point[0] - pose.x) + math.sin(pose.psi) * (point[1] - pose.y)


def lookahead_target(reference: np.ndarray | ReferenceTrajectory, pose: Configuration, p_v: float,
                     s_from: float | None = None) -> tuple[np.ndarray, float]:
    """Pure-pursuit goal point and its signed lateral offset (left positive).

    The goal is the first point of the reference, moving forward from the
    pose's projection (searched at or beyond ``s_from``), whose distance from
    the pose reaches ``p_v``; if none exists the final reference point.
    """
    pts = reference.points if isinstance(reference, ReferenceTrajectory) else np.asarray(reference, dtype=float)
    if len(pts) == 0:
        raise ValueError("empty reference")
    if not p_v > 0:
        raise ValueError("perceptual distance must be positive")
    poly = dedupe(pts)
    if len(poly) == 1:
        return poly[0].copy(), _lateral(pose, poly[0])
    cum = cumulative_length(poly)
    s0, _ = project(poly, pose.position, s_min=s_from or 0.0, cum=cum)
    target = _circle_exit(poly, cum, s0, pose.position, p_v)
    return target, _lateral(pose, target)


def _circle_exit(poly: np.ndarray, cum: np.ndarray, s0: float, center: np.ndarray, radius: float) -> np.ndarray:
    i = int(np.searchsorted(cum, s0, side="right")) - 1
    i = min(max(i, 0), len(poly) - 2)
    seg_len = cum[i + 1] - cum[i]
    u0 = (s0 - cum[i]) / seg_len if seg_len > 0 else 0.0
    start = poly[i] + u0 * (poly[i + 1] - poly[i])
    if math.dist(start, center) >= radius:
        return start
    for j in range(i, len(poly) - 1):
        a = start if j == i else poly[j]
        b = poly[j + 1]
        if math.dist(b, center) >= radius:
            # solve |a + t (b - a) - c| = r for the exiting root in [0, 1]
            d = b - a
            f = a - center
            qa = float(d @ d)
            qb = 2.0 * float(f @ d)
            qc = float(f @ f) - radius * radius
            disc = max(qb * qb - 4 * qa * qc, 0.0)
            t = (-qb + math.sqrt(disc)) / (2 * qa)
            return a + min(max(t, 0.0), 1.0) * d
    return poly[-1].copy()


def desired_curvature(theta: float, p_v: float) -> float:
    if not p_v > 0:
        raise ValueError("perceptual distance must be positive")
    return 2.0 * theta / (p_v * p_v)


def feasible_curvature_rate(c0_now: float, c0_desired: float, v: float, config: PursuitConfig) -> float:
    """Curvature rate toward ``c0_desired`` under rate and curvature limits."""
    if not v > 0:
        raise ValueError("speed must be positive")
    step = config.step_length
    lim = config.c1_max(v)
    c1 = min(max((c0_desired - c0_now) / step, -lim), lim)
    end = c0_now + c1 * step
    if end > config.c0_max:
        c1 = (config.c0_max - c0_now) / step
    elif end < -config.c0_max:
        c1 = (-config.c0_max - c0_now) / step
    return c1


def initial_configuration(reference: np.ndarray, c0_max: float = math.inf) -> Configuration:
    """Start pose at the first reference point.

    Heading and curvature come from the circle through the first three
    distinct points (exact when those points lie on a circle); with only two
    points the first segment direction and zero curvature are used.
    """
    poly = dedupe(np.asarray(reference, dtype=float))
    if len(poly) < 2:
        raise ValueError("reference is degenerate (all points coincide)")
    d1 = poly[1] - poly[0]
    psi = math.atan2(d1[1], d1[0])
    if len(poly) < 3:
        return Configuration(float(poly[0, 0]), float(poly[0, 1]), psi, 0.0)
    d2 = poly[2] - poly[1]
    turn = wrap_angle(math.atan2(d2[1], d2[0]) - psi)
    chord = math.dist(poly[0], poly[2])
    # Menger curvature 2 sin(turn) / |p0 - p2|
    c0 = 2.0 * math.sin(turn) / chord if chord > 0 else 0.0
    c0 = min(max(c0, -c0_max), c0_max)
    # the tangent at p0 and the chord p0-p1 differ by the inscribed angle at p2
    a, b = poly[0] - poly[2], poly[1] - poly[2]
    inscribed = math.atan2(abs(a[0] * b[1] - a[1] * b[0]), float(a @ b))
    return Configuration(float(poly[0, 0]), float(poly[0, 1]), wrap_angle(psi - math.copysign(inscribed, turn)), c0)


def reconstruct(reference: ReferenceTrajectory | np.ndarray, v: float, config: PursuitConfig | None = None,
                start: Configuration | None = None) -> ReconstructionTrace:
    """Drive from the reference start to its end with curvature-limited pure pursuit.

    ``start`` overrides the pose derived from the reference's first points;
    its position must coincide with the first reference point.
    """
    config = config or PursuitConfig()
    if not v > 0:
        raise ValueError("speed must be positive")
    pts = reference.points if isinstance(reference, ReferenceTrajectory) else np.asarray(reference, dtype=float)
    poly = dedupe(pts)
    if start is None:
        p0 = initial_configuration(poly, config.c0_max)
    else:
        if math.dist(start.position, poly[0]) > 1e-9:
            raise ValueError("start pose must sit on the first reference point")
        p0 = Configuration(start.x, start.y, start.psi, min(max(start.c0, -config.c0_max), config.c0_max))
    cum = cumulative_length(poly)
    goal = poly[-1]
    p_v = config.alpha * v
    max_steps = config.max_steps or int(math.ceil(10 * cum[-1] / config.step_length))

    configs = [p0]
    arcs: list[ClothoidArc] = []
    log: list[LookaheadRecord] = []
    pose = p0
    progress = 0.0
    escaping = False
    while math.dist(pose.position, goal) > config.goal_tolerance:
        if len(arcs) >= max_steps:
            trace = ReconstructionTrace(configs, arcs, log, reached=False)
            raise UnreachableReferenceError(
                f"goal not reached within {max_steps} steps "
                f"(remaining distance {math.dist(pose.position, goal):.3f} m)", trace)
        progress, _ = project(poly, pose.position, s_min=progress, cum=cum)
        target = _circle_exit(poly, cum, progress, pose.position, p_v)
        terminal = progress >= cum[-2] or np.array_equal(target, goal)
        if terminal:
            target = goal
        theta = _lateral(pose, target)
        # inside the circle (goal closer than p_v) steer on the arc through the goal
        reach = min(p_v, math.dist(pose.position, target))
        c0_des = desired_curvature(theta, reach) if reach > 0 else 0.0
        if terminal:
            # a goal inside the minimum turning circle cannot be hit by
            # saturated steering (it orbits); run straight until it can
            d = math.dist(pose.position, goal)
            k_goal = desired_curvature(theta, d) if d > 0 else 0.0
            if abs(k_goal) > config.c0_max:
                escaping = True
            elif abs(k_goal) < ESCAPE_RELEASE * config.c0_max:
                escaping = False
            if escaping:
                c0_des = 0.0
            elif _longitudinal(pose, goal) < 0.0:
                # behind and outside the turning circle: full lock towards it
                c0_des = math.copysign(config.c0_max, theta)
        c1 = feasible_curvature_rate(pose.c0, c0_des, v, config)
        arc = ClothoidArc(c1, config.step_length)
        pose = clothoid.propagate(pose, arc)
        arcs.append(arc)
        configs.append(pose)
        log.append(LookaheadRecord((float(target[0]), float(target[1])), theta, c0_des, c1))
    return ReconstructionTrace(configs, arcs, log, reached=True)


def resample(trace: ReconstructionTrace, v: float, dt: float, count: int) -> Trajectory:
    """``count`` waypoints spaced ``v * dt`` apart in arc length, from p0."""
    spacing = v * dt
    total = trace.length
    n_fit = int(math.floor(total / spacing + 1e-9)) + 1 if spacing > 0 else count
    n = min(count, n_fit)
    pts = np.array([[c.x, c.y] for c in (trace.config_at(k * spacing) for k in range(n))]).reshape(-1, 2)
    traj = Trajectory(pts, dt)
    if n < count:
        raise TraceTooShortError(
            f"trace of {total:.3f} m holds {n} of {count} waypoints at spacing {spacing:.3f} m", traj, n)
    return traj


@dataclass
class AttackOutcome:
    history: Trajectory
    reference: ReferenceTrajectory | None
    trace: ReconstructionTrace | None
    search: SearchResult
    speed: float
    flags: list[str] = field(default_factory=list)


def real_start_pose(scenario: Scenario, c0_max: float = math.inf) -> Configuration:
    """Pose of the adversary where the reference begins, from its true states."""
    hist = scenario.history()
    prev = scenario.preceding_state()
    pts = hist if prev is None else np.vstack([prev[None, :], hist])
    return initial_configuration(pts, c0_max)


def reconstruct_history(reference: ReferenceTrajectory, v: float, dt: float, history_len: int,
                        config: PursuitConfig, start: Configuration | None = None,
                        ) -> tuple[Trajectory, ReconstructionTrace, list[str]]:
    """Reconstruct and resample; with a real preceding state the first sample
    is that state, which is dropped so the result aligns with the history."""
    flags: list[str] = []
    try:
        trace = reconstruct(reference, v, config, start)
    except UnreachableReferenceError as exc:
        trace = exc.trace
        flags.append("unreachable_reference")
    skip = 1 if reference.has_preceding else 0
    try:
        traj = resample(trace, v, dt, history_len + skip)
    except TraceTooShortError as exc:
        flags.append("trace_too_short")
        pts = exc.trajectory.points
        # pad by holding the last reachable waypoint
        pad = np.repeat(pts[-1:], history_len + skip - len(pts), axis=0)
        traj = Trajectory(np.vstack([pts, pad]), dt)
    return Trajectory(traj.points[skip:], dt), trace, flags


def sa_attack(model: Predictor, scenario: Scenario, search_config: SearchConfig | None = None,
              pursuit_config: PursuitConfig | None = None, keep_log: bool = False) -> AttackOutcome:
    """Search a sensitive reference shape, then rebuild a drivable history from it."""
    search_config = search_config or SearchConfig()
    pursuit_config = pursuit_config or PursuitConfig()
    reference, result = generate_reference(model, scenario, search_config, keep_log=keep_log)
    v = average_speed(scenario)
    start = real_start_pose(scenario, pursuit_config.c0_max) if pursuit_config.real_start_pose else None
    history, trace, flags = reconstruct_history(reference, v, scenario.dt, scenario.history_len,
                                                pursuit_config, start)
    return AttackOutcome(history, reference, trace, result, v, flags)
