"""Domain types, scenario (de)serialization and trajectory kinematics."""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

VEHICLE_CLASSES = frozenset({"car", "truck", "bus", "vehicle", "van"})

DEFAULT_DT = 0.5


class ScenarioError(ValueError):
    """Raised when a scenario file is malformed or violates an invariant."""


def wrap_angle(angle: float) -> float:
    """Normalize an angle to the half-open interval (-pi, pi]."""
    a = math.fmod(angle, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (N, 2) array of points, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    t_index: int


@dataclass(frozen=True)
class Trajectory:
    """Waypoints sampled every ``dt`` seconds, starting at timestep ``t0``."""

    points: np.ndarray
    dt: float = DEFAULT_DT
    t0: int = 0

    def __post_init__(self):
        pts = as_points(self.points).copy()
        if not np.all(np.isfinite(pts)):
            raise ValueError("trajectory coordinates must be finite")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t0 < 0:
            raise ValueError("t0 must be non-negative")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_states(cls, states: Sequence[AgentState], dt: float = DEFAULT_DT) -> "Trajectory":
        idx = [s.t_index for s in states]
        if any(b != a + 1 for a, b in zip(idx, idx[1:])):
            raise ValueError("t_index must increase by one between consecutive states")
        return cls(np.array([[s.x, s.y] for s in states], dtype=float), dt, idx[0] if idx else 0)

    @property
    def states(self) -> list[AgentState]:
        return [AgentState(float(x), float(y), self.t0 + k) for k, (x, y) in enumerate(self.points)]

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class LaneSegment:
    centerline: np.ndarray
    width: float

    def __post_init__(self):
        pts = as_points(self.centerline).copy()
        if len(pts) < 2:
            raise ValueError("lane centerline needs at least two points")
        if not self.width > 0:
            raise ValueError("lane width must be positive")
        if np.any(np.all(np.diff(pts, axis=0) == 0.0, axis=1)):
            raise ValueError("consecutive centerline points must be distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "centerline", pts)


@dataclass(frozen=True)
class Configuration:
    """Vehicle pose used by the clothoid model: position, heading and curvature."""

    x: float
    y: float
    psi: float
    c0: float

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def normalized(self) -> "Configuration":
        return Configuration(self.x, self.y, wrap_angle(self.psi), self.c0)


@dataclass(frozen=True)
class ClothoidArc:
    c1: float
    length: float

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"arc length must be positive, got {self.length}")
        if not math.isfinite(self.c1):
            raise ValueError("curvature rate must be finite")


@dataclass(frozen=True)
class Agent:
    id: str
    cls: str
    trajectory: Trajectory


@dataclass(frozen=True)
class Scenario:
    """A multi-agent scene with one designated adversary.

    The observation window is the trailing ``history_len + future_len`` steps
    of the agent trajectories; anything earlier is context (the step directly
    before the history is used as the reconstruction start state).
    """

    agents: tuple[Agent, ...]
    adversary_id: str
    history_len: int
    future_len: int
    lanes: tuple[LaneSegment, ...] = ()
    dt: float = DEFAULT_DT
    id: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "lanes", tuple(self.lanes))
        validate_scenario(self)

    def agent(self, agent_id: str) -> Agent:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    @property
    def adversary(self) -> Agent:
        return self.agent(self.adversary_id)

    @property
    def horizon(self) -> int:
        return len(self.agents[0].trajectory)

    @property
    def history_start(self) -> int:
        return self.horizon - self.history_len - self.future_len

    def history(self, agent_id: str | None = None) -> np.ndarray:
        pts = self.agent(agent_id or self.adversary_id).trajectory.points
        s = self.history_start
        return pts[s : s + self.history_len]

    def future(self, agent_id: str | None = None) -> np.ndarray:
        pts = self.agent(agent_id or self.adversary_id).trajectory.points
        s = self.history_start + self.history_len
        return pts[s : s + self.future_len]

    def preceding_state(self, agent_id: str | None = None) -> np.ndarray | None:
        """State directly before the history window, or None at the scene start."""
        if self.history_start == 0:
            return None
        return self.agent(agent_id or self.adversary_id).trajectory.points[self.history_start - 1]

    def histories(self) -> dict[str, np.ndarray]:
        return {a.id: self.history(a.id) for a in self.agents}


def validate_scenario(sc: Scenario) -> None:
    if not sc.dt > 0:
        raise ScenarioError(f"dt must be positive, got {sc.dt}")
    if sc.history_len < 2 or sc.future_len < 1:
        raise ScenarioError("history_len must be >= 2 and future_len >= 1")
    if not sc.agents:
        raise ScenarioError("scenario has no agents")
    ids = [a.id for a in sc.agents]
    if len(set(ids)) != len(ids):
        raise ScenarioError("duplicate agent ids")
    need = sc.history_len + sc.future_len
    n = len(sc.agents[0].trajectory)
    for a in sc.agents:
        if len(a.trajectory) != n:
            raise ScenarioError(f"agent {a.id!r} has {len(a.trajectory)} states, expected {n}")
        if len(a.trajectory) < need:
            raise ScenarioError(f"agent {a.id!r} has {len(a.trajectory)} states, needs >= {need}")
        if not math.isclose(a.trajectory.dt, sc.dt):
            raise ScenarioError(f"agent {a.id!r} dt differs from scenario dt")
    if sc.adversary_id not in ids:
        raise ScenarioError(f"unknown adversary id {sc.adversary_id!r}")
    if sc.agent(sc.adversary_id).cls not in VEHICLE_CLASSES:
        raise ScenarioError("adversary must be a vehicle")


# -- serialization ---------------------------------------------------------


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "id": sc.id,
        "dt": sc.dt,
        "history_len": sc.history_len,
        "future_len": sc.future_len,
        "adversary_id": sc.adversary_id,
        "agents": [
            {"id": a.id, "class": a.cls, "states": a.trajectory.points.tolist()} for a in sc.agents
        ],
        "lanes": [{"centerline": ln.centerline.tolist(), "width": ln.width} for ln in sc.lanes],
    }


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        dt = float(doc["dt"])
        agents = tuple(
            Agent(str(a["id"]), str(a["class"]), Trajectory(np.array(a["states"], dtype=float), dt))
            for a in doc["agents"]
        )
        lanes = tuple(LaneSegment(np.array(ln["centerline"], dtype=float), float(ln["width"])) for ln in doc.get("lanes", []))
        return Scenario(
            agents=agents,
            adversary_id=str(doc["adversary_id"]),
            history_len=int(doc["history_len"]),
            future_len=int(doc["future_len"]),
            lanes=lanes,
            dt=dt,
            id=str(doc.get("id", "scenario")),
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid scenario document: {exc}") from exc


def dumps_scenario(sc: Scenario) -> str:
    return json.dumps(scenario_to_dict(sc), indent=1) + "\n"


def save_scenario(sc: Scenario, path: str | os.PathLike) -> None:
    atomic_write_text(path, dumps_scenario(sc))


def load_scenario(path: str | os.PathLike) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from exc
    return scenario_from_dict(doc)


def load_csv_scenario(csv_path: str | os.PathLike, sidecar_path: str | os.PathLike) -> Scenario:
    """Build a scenario from ``agent_id,t_index,x,y`` rows plus a JSON sidecar.

    The sidecar carries everything except agent states: ``dt``,
    ``history_len``, ``future_len``, ``adversary_id``, ``lanes`` and
    optionally a ``classes`` mapping (agents default to ``car``).
    """
    meta = json.loads(Path(sidecar_path).read_text())
    rows: dict[str, list[tuple[int, float, float]]] = {}
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"agent_id", "t_index", "x", "y"} - set(reader.fieldnames or ())
        if missing:
            raise ScenarioError(f"CSV is missing columns {sorted(missing)}")
        for row in reader:
            rows.setdefault(row["agent_id"], []).append((int(row["t_index"]), float(row["x"]), float(row["y"])))
    classes = meta.get("classes", {})
    agents = []
    for aid, recs in rows.items():
        recs.sort()
        t = [r[0] for r in recs]
        if any(b != a + 1 for a, b in zip(t, t[1:])):
            raise ScenarioError(f"agent {aid!r} has gaps or duplicates in t_index")
        agents.append({"id": aid, "class": classes.get(aid, "car"), "states": [[r[1], r[2]] for r in recs]})
    doc = dict(meta)
    doc["agents"] = agents
    return scenario_from_dict(doc)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- kinematics ------------------------------------------------------------


@dataclass(frozen=True)
class Kinematics:
    speed: np.ndarray
    heading: np.ndarray
    acceleration: np.ndarray = field(default_factory=lambda: np.zeros(0))


def derive_kinematics(traj: Trajectory | np.ndarray, dt: float | None = None) -> Kinematics:
    """Per-step speed, heading and acceleration of a uniformly sampled path.

    ``speed[k]`` and ``heading[k]`` describe the step from point ``k`` to
    ``k + 1``. Acceleration is the derivative of that speed series: central
    differences inside, one-sided at the ends. It is empty for two-point
    trajectories.
    """
    if isinstance(traj, Trajectory):
        pts, dt = traj.points, traj.dt
    else:
        pts = as_points(traj)
        if dt is None:
            raise ValueError("dt is required for raw point arrays")
    if len(pts) < 2:
        raise ValueError("need at least two points to derive kinematics")
    d = np.diff(pts, axis=0)
    dist = np.hypot(d[:, 0], d[:, 1])
    speed = dist / dt
    heading = np.empty(len(d))
    last = 0.0
    for k, (dx, dy) in enumerate(d):
        if dist[k] > 0.0:
            last = math.atan2(dy, dx)
        heading[k] = last
    accel = np.gradient(speed, dt, edge_order=1) if len(speed) >= 2 else np.zeros(0)
    return Kinematics(speed, heading, accel)


def max_abs_acceleration(points: np.ndarray, dt: float) -> float:
    acc = derive_kinematics(points, dt).acceleration
    return float(np.max(np.abs(acc))) if len(acc) else 0.0


def polyline_length(points: Iterable) -> float:
    pts = as_points(points)
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))
