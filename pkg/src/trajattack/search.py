"""Stage 1: projected Adam ascent over bounded history perturbations.

Perturbations live in a per-waypoint disk of radius ``bound``. Each restart
starts from a uniform sample of that disk and is optimised independently
(seed ``seed + restart``); the restart with the largest prediction RMSE wins,
ties going to the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Scenario
from .predictors import Predictor, rmse_and_grad

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class SearchConfig:
    restarts: int = 20
    iterations: int = 50
    learning_rate: float = 0.01
    bound: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.bound < 0:
            raise ValueError("bound must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class Perturbation:
    deltas: np.ndarray

    def norms(self) -> np.ndarray:
        return np.hypot(self.deltas[:, 0], self.deltas[:, 1])


@dataclass(frozen=True)
class ReferenceTrajectory:
    points: np.ndarray
    has_preceding: bool = True


@dataclass
class SearchResult:
    perturbation: Perturbation
    rmse: float
    restart: int
    restart_rmses: list[float] = field(default_factory=list)
    clean_rmse: float = float("nan")
    log: list[dict] = field(default_factory=list)


def sample_disk(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.random(n))
    theta = 2.0 * math.pi * rng.random(n)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def init_perturbations(config: SearchConfig, history_len: int) -> list[Perturbation]:
    return [
        Perturbation(sample_disk(np.random.default_rng(config.seed + r), history_len, config.bound))
        for r in range(config.restarts)
    ]


def project(pert: Perturbation | np.ndarray, bound: float) -> Perturbation:
    d = np.array(pert.deltas if isinstance(pert, Perturbation) else pert, dtype=float)
    norms = np.hypot(d[:, 0], d[:, 1])
    over = norms > bound
    if np.any(over):
        d[over] *= (bound / norms[over])[:, None]
    return Perturbation(d)


class Adam:
    def __init__(self, shape, lr: float, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """One descent step; callers pass the negated gradient to ascend."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _pinned_mask(sc: Scenario) -> np.ndarray:
    # with no preceding state the first history point is the reconstruction
    # start and must stay at its real position
    mask = np.ones((sc.history_len, 1))
    if sc.preceding_state() is None:
        mask[0] = 0.0
    return mask


def optimize_perturbation(model: Predictor, scenario: Scenario, pert0: Perturbation, config: SearchConfig,
                          restart: int = 0, log: list | None = None) -> tuple[Perturbation, float]:
    """Projected Adam ascent on the adversary's prediction RMSE.

    Returns the best iterate seen (including ``pert0``) and its RMSE.
    """
    hist = scenario.history()
    truth = scenario.future()
    neighbors = _neighbors(scenario)
    mask = _pinned_mask(scenario)
    delta = pert0.deltas * mask
    opt = Adam(delta.shape, config.learning_rate)
    best, best_rmse = delta.copy(), -math.inf
    for it in range(config.iterations + 1):
        rmse, grad = rmse_and_grad(model, hist + delta, neighbors, truth)
        if not math.isfinite(rmse):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        if log is not None:
            log.append({"restart": restart, "iteration": it, "rmse": rmse, "perturbation": delta.tolist()})
        if rmse > best_rmse:
            best, best_rmse = delta.copy(), rmse
        if it == config.iterations:
            break
        delta = opt.step(delta, -grad * mask)
        delta = project(delta, config.bound).deltas
    return Perturbation(best), best_rmse


def search_perturbation(model: Predictor, scenario: Scenario, config: SearchConfig,
                        starts: list[Perturbation] | None = None, keep_log: bool = False) -> SearchResult:
    if starts is None:
        starts = init_perturbations(config, scenario.history_len)
    log: list | None = [] if keep_log else None
    best: tuple[Perturbation, float, int] | None = None
    per_restart = []
    for r, p0 in enumerate(starts):
        pert, rmse = optimize_perturbation(model, scenario, p0, config, restart=r, log=log)
        per_restart.append(rmse)
        if best is None or rmse > best[1]:
            best = (pert, rmse, r)
    clean = rmse_and_grad(model, scenario.history(), _neighbors(scenario), scenario.future())[0]
    return SearchResult(best[0], best[1], best[2], per_restart, clean, log or [])


def _neighbors(sc: Scenario) -> np.ndarray:
    return np.array([sc.history(a.id)[-1] for a in sc.agents if a.id != sc.adversary_id]).reshape(-1, 2)


def assemble_reference(scenario: Scenario, pert: Perturbation) -> ReferenceTrajectory:
    """Real start state + perturbed history + first real future state."""
    hist = scenario.history()
    perturbed = hist + pert.deltas
    final = scenario.future()[0]
    prev = scenario.preceding_state()
    if prev is None:
        pts = np.vstack([hist[:1], perturbed[1:], final[None, :]])
        return ReferenceTrajectory(pts, has_preceding=False)
    return ReferenceTrajectory(np.vstack([prev[None, :], perturbed, final[None, :]]), has_preceding=True)


def generate_reference(model: Predictor, scenario: Scenario, config: SearchConfig,
                       keep_log: bool = False) -> tuple[ReferenceTrajectory, SearchResult]:
    result = search_perturbation(model, scenario, config, keep_log=keep_log)
    return assemble_reference(scenario, result.perturbation), result


def search_attack(model: Predictor, scenario: Scenario, config: SearchConfig,
                  keep_log: bool = False) -> tuple[np.ndarray, SearchResult]:
    """Baseline: perturb the observed history directly, no reconstruction.

    A single ascent run from the unperturbed history within the same disk
    bound; the perturbed waypoints are used as-is.
    """
    zero = Perturbation(np.zeros((scenario.history_len, 2)))
    result = search_perturbation(model, scenario, config, starts=[zero], keep_log=keep_log)
    return scenario.history() + result.perturbation.deltas, result
