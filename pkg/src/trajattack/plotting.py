"""PNG figures for evaluation reports.

Uses the object-oriented Agg canvas so no global pyplot state is touched,
and strips the software tag from PNG metadata so reruns are byte-identical.
"""

from __future__ import annotations

import io
import math
import os
from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .core import Scenario, atomic_write_bytes
from .metrics import SuiteSummary

PNG_METADATA = {"Software": None}
FEASIBLE_ACCEL = 1.8


def _save(fig: Figure, path: str | os.PathLike) -> None:
    FigureCanvasAgg(fig)
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata=PNG_METADATA)
    atomic_write_bytes(path, buf.getvalue())


def _bucket_labels(edges: Sequence[float]) -> list[str]:
    def fmt(e):
        return "inf" if not math.isfinite(e) else f"{e:g}"
    return [f"[{fmt(lo)}, {fmt(hi)})" for lo, hi in zip(edges, edges[1:])]


def plot_accel_histogram(summaries: dict[str, SuiteSummary], path: str | os.PathLike) -> None:
    """Grouped bars of max-acceleration bucket counts, one group per method."""
    fig = Figure(figsize=(7, 3.5))
    ax = fig.add_subplot()
    names = list(summaries)
    edges = summaries[names[0]].accel_edges
    x = np.arange(len(edges) - 1)
    width = 0.8 / max(len(names), 1)
    for k, name in enumerate(names):
        ax.bar(x + (k - (len(names) - 1) / 2) * width, summaries[name].accel_counts, width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(_bucket_labels(edges), rotation=30, ha="right", fontsize=8)
    ax.set_xlabel("max |acceleration| of adversarial history (m/s²)")
    ax.set_ylabel("scenarios")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def plot_metric_summary(summaries: dict[str, SuiteSummary], path: str | os.PathLike) -> None:
    """Normal vs attacked ADE, FDE, MR and ORR for each method."""
    fig = Figure(figsize=(9, 3))
    keys = (("ade", "ADE (m)"), ("fde", "FDE (m)"), ("mr", "MR (%)"), ("orr", "ORR (%)"))
    names = list(summaries)
    for i, (key, label) in enumerate(keys):
        ax = fig.add_subplot(1, len(keys), i + 1)
        normal = [getattr(summaries[n], f"{key}_normal") for n in names]
        attack = [getattr(summaries[n], f"{key}_attack") for n in names]
        x = np.arange(len(names))
        ax.bar(x - 0.2, normal, 0.4, label="normal")
        ax.bar(x + 0.2, attack, 0.4, label="attacked")
        ax.set_xticks(x)
        ax.set_xticklabels(names, fontsize=8)
        ax.set_title(label, fontsize=9)
        if i == 0:
            ax.legend(frameon=False, fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def plot_scenario(scenario: Scenario, adversarial: np.ndarray, pred_normal: np.ndarray,
                  pred_attack: np.ndarray, path: str | os.PathLike) -> None:
    fig = Figure(figsize=(6, 5))
    ax = fig.add_subplot()
    for lane in scenario.lanes:
        c = lane.centerline
        ax.plot(c[:, 0], c[:, 1], color="0.85", lw=max(lane.width * 2, 1), solid_capstyle="butt", zorder=0)
    for agent in scenario.agents:
        if agent.id == scenario.adversary_id:
            continue
        h = scenario.history(agent.id)
        ax.plot(h[:, 0], h[:, 1], color="0.5", lw=1, marker=".", ms=3)
    hist = scenario.history()
    fut = scenario.future()
    ax.plot(hist[:, 0], hist[:, 1], "k.-", label="history")
    ax.plot(fut[:, 0], fut[:, 1], "k--", lw=1, label="future")
    ax.plot(adversarial[:, 0], adversarial[:, 1], "r.-", label="adversarial")
    ax.plot(pred_normal[:, 0], pred_normal[:, 1], "b-", lw=1, label="prediction")
    ax.plot(pred_attack[:, 0], pred_attack[:, 1], "m-", lw=1, label="attacked prediction")
    # frame the adversary, not the whole road network
    pts = np.vstack([hist, fut, adversarial, pred_normal, pred_attack])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = max(float((hi - lo).max()) * 0.1, 5.0)
    ax.set_xlim(lo[0] - pad, hi[0] + pad)
    ax.set_ylim(lo[1] - pad, hi[1] + pad)
    ax.set_aspect("equal", adjustable="box")
    ax.set_title(scenario.id, fontsize=9)
    ax.legend(frameon=False, fontsize=7)
    fig.tight_layout()
    _save(fig, path)
