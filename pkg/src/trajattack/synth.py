"""Synthetic multi-agent scenarios: straight roads, constant-radius turns and lane changes.

Every agent drives a lane centerline (or a smooth blend between two adjacent
centerlines) at a constant speed, with small bounded positional noise. Each
scene is finally rotated and translated by a random rigid motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Agent, LaneSegment, Scenario, Trajectory
from .geometry import cumulative_length, interpolate_at, rotation
from .search import sample_disk

FAMILIES = ("straight", "turn", "lane_change")


@dataclass(frozen=True)
class GeneratorConfig:
    counts: dict = field(default_factory=lambda: {"straight": 34, "turn": 33, "lane_change": 33})
    speed_range: tuple[float, float] = (2.0, 20.0)
    extra_agents: tuple[int, int] = (1, 3)
    history_len: int = 4
    future_len: int = 12
    context_steps: int = 1
    dt: float = 0.5
    lane_width: float = 3.6
    lane_spacing: float = 3.5
    noise: float = 0.02
    max_lateral_accel: float = 2.0
    min_radius: float = 20.0

    def __post_init__(self):
        lo, hi = self.speed_range
        if not (0 < lo <= hi):
            raise ValueError(f"infeasible speed range {self.speed_range}")
        if any(k not in FAMILIES for k in self.counts):
            raise ValueError(f"unknown scenario family in {sorted(self.counts)}")
        if any(int(v) < 0 for v in self.counts.values()):
            raise ValueError("family counts must be non-negative")
        if not 0 <= self.noise < 0.1:
            raise ValueError("noise bound must lie in [0, 0.1)")
        if self.extra_agents[0] < 0 or self.extra_agents[1] < self.extra_agents[0]:
            raise ValueError("invalid extra agent range")

    @property
    def steps(self) -> int:
        return self.context_steps + self.history_len + self.future_len


def _straight_lanes(length: float, n_lanes: int, spacing: float) -> list[np.ndarray]:
    x = np.arange(-20.0, length + 20.0 + 1e-9, 2.0)
    return [np.stack([x, np.full_like(x, k * spacing)], axis=1) for k in range(n_lanes)]


def _turn_lanes(length: float, radius: float, sign: int, n_lanes: int, spacing: float) -> list[np.ndarray]:
    lanes = []
    for k in range(n_lanes):
        # lane k sits k*spacing to the outside of the reference arc
        r = radius + k * spacing
        arc = np.arange(-20.0, length + 20.0 + 1e-9, 1.0) / radius
        x = r * np.sin(arc)
        y = sign * (radius - r * np.cos(arc))
        lanes.append(np.stack([x, y], axis=1))
    return lanes


def _lane_change_path(length: float, start: float, span: float, offset: float) -> np.ndarray:
    x = np.arange(-20.0, length + 20.0 + 1e-9, 0.05)
    u = np.clip((x - start) / span, 0.0, 1.0)
    blend = u * u * u * (10 - 15 * u + 6 * u * u)
    return np.stack([x, offset * blend], axis=1)


def _drive(path: np.ndarray, s0: float, v: float, cfg: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    s = s0 + v * cfg.dt * np.arange(cfg.steps)
    pts = interpolate_at(path, s)
    if cfg.noise > 0:
        pts = pts + sample_disk(rng, len(pts), cfg.noise)
    return pts


def _scenario(family: str, index: int, cfg: GeneratorConfig, rng: np.random.Generator) -> Scenario:
    v = float(rng.uniform(*cfg.speed_range))
    travel = v * cfg.dt * (cfg.steps - 1)
    n_lanes = 2
    lead = 20.0 + 2.0 * v
    road_len = travel + 2 * lead + 40.0
    if family == "straight":
        lanes = _straight_lanes(road_len, n_lanes, cfg.lane_spacing)
        adv_path = lanes[0]
    elif family == "turn":
        radius = max(v * v / cfg.max_lateral_accel, cfg.min_radius)
        sign = 1 if rng.random() < 0.5 else -1
        lanes = _turn_lanes(road_len, radius, sign, n_lanes, cfg.lane_spacing)
        # keep the arc under a half turn so lanes stay simple curves
        lanes = [ln[cumulative_length(ln) <= math.pi * radius] for ln in lanes]
        adv_path = lanes[0]
    else:
        side = 1.0 if rng.random() < 0.5 else -1.0
        lanes = _straight_lanes(road_len, n_lanes, side * cfg.lane_spacing)
        span = float(np.clip(v * rng.uniform(6.0, 9.0), 25.0, 160.0))
        # the manoeuvre overlaps the observed history
        start = v * cfg.dt * cfg.context_steps - float(rng.uniform(0.0, 0.6)) * span
        adv_path = _lane_change_path(road_len, start, span, side * cfg.lane_spacing)

    adv_cum = cumulative_length(adv_path)
    s0 = min(lead, adv_cum[-1] - travel - 1.0) if family != "lane_change" else 20.0
    agents = [Agent("adv", "car", Trajectory(_drive(adv_path, s0, v, cfg, rng), cfg.dt))]
    n_extra = int(rng.integers(cfg.extra_agents[0], cfg.extra_agents[1] + 1))
    for j in range(n_extra):
        lane = lanes[int(rng.integers(0, len(lanes)))]
        lane_len = cumulative_length(lane)[-1]
        # slow enough to stay on the lane for the whole horizon
        v_hi = min(cfg.speed_range[1], (lane_len - 2.0) / (cfg.dt * (cfg.steps - 1)))
        vj = float(rng.uniform(min(cfg.speed_range[0], v_hi), v_hi))
        travel_j = vj * cfg.dt * (cfg.steps - 1)
        sj = float(rng.uniform(0.0, max(lane_len - travel_j - 1.0, 0.0)))
        cls = ("car", "truck", "bus")[int(rng.integers(0, 3))]
        agents.append(Agent(f"veh{j + 1}", cls, Trajectory(_drive(lane, sj, vj, cfg, rng), cfg.dt)))

    theta = float(rng.uniform(-math.pi, math.pi))
    shift = rng.uniform(-500.0, 500.0, size=2)
    rot = rotation(theta)

    def move(p: np.ndarray) -> np.ndarray:
        return p @ rot.T + shift

    agents = [Agent(a.id, a.cls, Trajectory(move(a.trajectory.points), cfg.dt)) for a in agents]
    lane_segs = [LaneSegment(move(ln), cfg.lane_width) for ln in lanes]
    return Scenario(
        agents=tuple(agents),
        adversary_id="adv",
        history_len=cfg.history_len,
        future_len=cfg.future_len,
        lanes=tuple(lane_segs),
        dt=cfg.dt,
        id=f"{family}_{index:04d}",
    )


def generate_synthetic_scenarios(config: GeneratorConfig | None = None, seed: int = 0) -> list[Scenario]:
    """Deterministic list of scenarios, families in a fixed interleaved order."""
    config = config or GeneratorConfig()
    order = []
    remaining = {f: int(config.counts.get(f, 0)) for f in FAMILIES}
    while any(remaining.values()):
        for f in FAMILIES:
            if remaining[f]:
                order.append(f)
                remaining[f] -= 1
    out = []
    for i, family in enumerate(order):
        rng = np.random.default_rng([seed, i])
        out.append(_scenario(family, i, config, rng))
    return out
