"""Displacement, miss and off-road metrics plus before/after attack reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import LaneSegment, Scenario, as_points, max_abs_acceleration
from .geometry import point_polyline_distance
from .predictors import PredictionRequest, Predictor

MISS_THRESHOLD = 2.0
# bucket edges in m/s^2 for the max-acceleration histogram
ACCEL_EDGES = (0.0, 0.02, 0.37, 1.8, 2.15, 4.17, 6.0, math.inf)

SUITE_COLUMNS = (
    "scenario_id", "ade_normal", "ade_attack", "fde_normal", "fde_attack",
    "miss_normal", "miss_attack", "offroad_normal", "offroad_attack", "max_accel",
)


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p, t = as_points(pred), as_points(truth)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {len(p)} predicted vs {len(t)} true points")
    if len(p) == 0:
        raise ValueError("empty trajectories")
    return p, t


def displacement_errors(pred, truth) -> np.ndarray:
    p, t = _pair(pred, truth)
    return np.hypot(*(p - t).T)


def ade(pred, truth) -> float:
    return float(np.mean(displacement_errors(pred, truth)))


def fde(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(math.hypot(*(p[-1] - t[-1])))


def miss(pred, truth, threshold: float = MISS_THRESHOLD) -> bool:
    return fde(pred, truth) > threshold


def offroad_mask(points, lanes: Sequence[LaneSegment]) -> np.ndarray:
    """True where a point lies outside every lane corridor."""
    if not lanes:
        raise ValueError("offroad test needs at least one lane")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    on = np.zeros(len(pts), dtype=bool)
    for lane in lanes:
        on |= point_polyline_distance(pts, lane.centerline) <= lane.width / 2.0
    return ~on


def offroad_rate(traj, lanes: Sequence[LaneSegment]) -> float:
    mask = offroad_mask(traj, lanes)
    return float(np.count_nonzero(mask)) / len(mask)


@dataclass
class MetricReport:
    ade: float
    fde: float
    miss: bool
    offroad_rate: float
    offroad: bool
    max_accel: float

    def __post_init__(self):
        if self.ade < 0 or self.fde < 0:
            raise ValueError("displacement errors must be non-negative")
        if not 0.0 <= self.offroad_rate <= 1.0:
            raise ValueError("offroad_rate must lie in [0, 1]")


def trajectory_report(pred, truth, lanes, history, dt: float, threshold: float = MISS_THRESHOLD) -> MetricReport:
    rate = offroad_rate(pred, lanes) if lanes else 0.0
    return MetricReport(
        ade=ade(pred, truth),
        fde=fde(pred, truth),
        miss=miss(pred, truth, threshold),
        offroad_rate=rate,
        offroad=rate > 0.0,
        max_accel=max_abs_acceleration(history, dt),
    )


@dataclass
class AttackEvaluation:
    scenario_id: str
    normal: MetricReport
    attack: MetricReport
    pred_normal: np.ndarray = field(repr=False, default=None)
    pred_attack: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {"scenario_id": self.scenario_id, "normal": asdict(self.normal), "attack": asdict(self.attack)}

    @classmethod
    def from_dict(cls, doc: dict) -> "AttackEvaluation":
        return cls(doc["scenario_id"], MetricReport(**doc["normal"]), MetricReport(**doc["attack"]))

    def csv_row(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "ade_normal": self.normal.ade, "ade_attack": self.attack.ade,
            "fde_normal": self.normal.fde, "fde_attack": self.attack.fde,
            "miss_normal": int(self.normal.miss), "miss_attack": int(self.attack.miss),
            "offroad_normal": int(self.normal.offroad), "offroad_attack": int(self.attack.offroad),
            "max_accel": self.attack.max_accel,
        }


def evaluate_attack(model: Predictor, scenario: Scenario, adversarial_history,
                    threshold: float = MISS_THRESHOLD) -> AttackEvaluation:
    """Predict from the clean and the adversarial history and score both."""
    adv = as_points(adversarial_history)
    if len(adv) != scenario.history_len:
        raise ValueError(f"adversarial history has {len(adv)} points, expected {scenario.history_len}")
    truth = scenario.future()
    req = PredictionRequest.from_scenario(scenario)
    pred_n = model.predict_agent(req, scenario.adversary_id)
    pred_a = model.predict_agent(req.with_adversary_history(adv), scenario.adversary_id)
    normal = trajectory_report(pred_n, truth, scenario.lanes, scenario.history(), scenario.dt, threshold)
    attack = trajectory_report(pred_a, truth, scenario.lanes, adv, scenario.dt, threshold)
    return AttackEvaluation(scenario.id, normal, attack, pred_n, pred_a)


@dataclass
class SuiteSummary:
    count: int
    ade_normal: float
    ade_attack: float
    fde_normal: float
    fde_attack: float
    mr_normal: float
    mr_attack: float
    orr_normal: float
    orr_attack: float
    offroad_points_normal: float
    offroad_points_attack: float
    accel_edges: list[float]
    accel_counts: list[int]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["accel_edges"] = [e if math.isfinite(e) else "inf" for e in self.accel_edges]
        return d


def accel_histogram(values: Sequence[float], edges: Sequence[float] = ACCEL_EDGES) -> list[int]:
    """Counts per half-open bucket [lo, hi); the last bucket is closed."""
    counts = [0] * (len(edges) - 1)
    for v in values:
        for i in range(len(edges) - 1):
            lo, hi = edges[i], edges[i + 1]
            if lo <= v < hi or (i == len(edges) - 2 and v == hi):
                counts[i] += 1
                break
    return counts


def aggregate(reports: Sequence[AttackEvaluation], edges: Sequence[float] = ACCEL_EDGES) -> SuiteSummary:
    if not reports:
        raise ValueError("cannot aggregate an empty report list")
    n = len(reports)

    def mean(f):
        return float(sum(f(r) for r in reports) / n)

    return SuiteSummary(
        count=n,
        ade_normal=mean(lambda r: r.normal.ade), ade_attack=mean(lambda r: r.attack.ade),
        fde_normal=mean(lambda r: r.normal.fde), fde_attack=mean(lambda r: r.attack.fde),
        mr_normal=100.0 * mean(lambda r: r.normal.miss), mr_attack=100.0 * mean(lambda r: r.attack.miss),
        orr_normal=100.0 * mean(lambda r: r.normal.offroad), orr_attack=100.0 * mean(lambda r: r.attack.offroad),
        offroad_points_normal=mean(lambda r: r.normal.offroad_rate),
        offroad_points_attack=mean(lambda r: r.attack.offroad_rate),
        accel_edges=list(edges),
        accel_counts=accel_histogram([r.attack.max_accel for r in reports], edges),
    )


def suite_csv(reports: Sequence[AttackEvaluation]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUITE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def histogram_csv(summary: SuiteSummary) -> str:
    lines = ["lower,upper,count"]
    for lo, hi, c in zip(summary.accel_edges, summary.accel_edges[1:], summary.accel_counts):
        lines.append(f"{lo},{hi if math.isfinite(hi) else 'inf'},{c}")
    return "\n".join(lines) + "\n"
