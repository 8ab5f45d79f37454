"""Point-estimate trajectory predictors with a white-box gradient contract.

Every predictor maps one agent's ``(L_I, 2)`` history plus the last observed
positions of the other agents to an ``(L_O, 2)`` future. Gradients are
exposed as vector-Jacobian products with respect to the history, which is
all projected gradient ascent needs.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import LaneSegment, Scenario, as_points, atomic_write_text

FD_STEP = 1e-4
# metres; keeps the speed normalisation smooth for near-stationary histories
STEP_SOFTENING = 0.1
PARAM_FORMAT = "trajattack.predictor"
PARAM_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


class GradientUnavailableError(RuntimeError):
    pass


@dataclass(frozen=True)
class PredictionRequest:
    histories: Mapping[str, np.ndarray]
    adversary_id: str
    dt: float = 0.5
    lanes: tuple[LaneSegment, ...] = ()

    @classmethod
    def from_scenario(cls, sc: Scenario, adversary_history: np.ndarray | None = None) -> "PredictionRequest":
        hist = sc.histories()
        if adversary_history is not None:
            hist[sc.adversary_id] = as_points(adversary_history)
        return cls(hist, sc.adversary_id, sc.dt, sc.lanes)

    def with_adversary_history(self, history: np.ndarray) -> "PredictionRequest":
        hist = dict(self.histories)
        hist[self.adversary_id] = history
        return PredictionRequest(hist, self.adversary_id, self.dt, self.lanes)

    def neighbors(self, agent_id: str) -> np.ndarray:
        """Last observed positions of every agent except ``agent_id``."""
        pts = [h[-1] for aid, h in self.histories.items() if aid != agent_id]
        return np.array(pts, dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class Prediction:
    futures: Mapping[str, np.ndarray]


class Predictor:
    """Base class. Subclasses implement ``forward`` and, if exact, ``vjp``."""

    kind = "base"
    exact_gradient = True

    def __init__(self, history_len: int, future_len: int):
        self.history_len = history_len
        self.future_len = future_len

    def forward(self, history: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, history: np.ndarray, neighbors: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        raise GradientUnavailableError(f"{self.kind} predictor has no exact gradient")

    def predict_agent(self, req: PredictionRequest, agent_id: str) -> np.ndarray:
        hist = as_points(req.histories[agent_id])
        if len(hist) != self.history_len:
            raise ValueError(f"history has {len(hist)} states, model expects {self.history_len}")
        return self.forward(hist, req.neighbors(agent_id))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "history_len": self.history_len, "future_len": self.future_len}


def predict(model: Predictor, req: PredictionRequest) -> Prediction:
    return Prediction({aid: model.predict_agent(req, aid) for aid in req.histories})


class ConstantVelocity(Predictor):
    kind = "cv"

    def forward(self, history, neighbors):
        v = history[-1] - history[-2]
        k = np.arange(1, self.future_len + 1)[:, None]
        return history[-1] + k * v

    def vjp(self, history, neighbors, grad_out):
        k = np.arange(1, self.future_len + 1)[:, None]
        g = np.zeros_like(history)
        g[-1] = np.sum((1 + k) * grad_out, axis=0)
        g[-2] = -np.sum(k * grad_out, axis=0)
        return g


class PolynomialExtrapolator(Predictor):
    """Least-squares polynomial in time fitted per coordinate, then extrapolated."""

    kind = "poly"

    def __init__(self, history_len: int, future_len: int, degree: int = 2):
        super().__init__(history_len, future_len)
        self.degree = min(degree, history_len - 1)
        t_hist = np.arange(history_len, dtype=float)
        t_fut = np.arange(history_len, history_len + future_len, dtype=float)
        vh = np.vander(t_hist, self.degree + 1)
        vf = np.vander(t_fut, self.degree + 1)
        # future = M @ history, for each coordinate independently
        self.matrix = vf @ np.linalg.pinv(vh)

    def forward(self, history, neighbors):
        return self.matrix @ history

    def vjp(self, history, neighbors, grad_out):
        return self.matrix.T @ grad_out

    def to_dict(self):
        return {**super().to_dict(), "degree": self.degree}


@dataclass
class MLPParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    ws: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2, "ws": self.ws}


class MLPPredictor(Predictor):
    """One-hidden-layer tanh network with a linear skip path.

    Works in the frame of the last history step: origin at the last point,
    x axis along the last displacement, and history/future coordinates
    measured in units of that displacement's length. The ``n_neighbors``
    nearest other agents enter in the same rotated frame divided by
    ``scale`` metres (missing neighbours are zero-padded and masked).
    """

    kind = "mlp"

    def __init__(self, history_len: int, future_len: int, params: MLPParams,
                 n_neighbors: int = 2, scale: float = 10.0):
        super().__init__(history_len, future_len)
        self.params = params
        self.n_neighbors = n_neighbors
        self.scale = scale
        exp_in = self.input_dim(history_len, n_neighbors)
        hidden = params.b1.shape[0]
        shapes = {
            "w1": (hidden, exp_in), "b1": (hidden,), "w2": (2 * future_len, hidden),
            "b2": (2 * future_len,), "ws": (2 * future_len, exp_in),
        }
        for name, arr in params.arrays().items():
            if arr.shape != shapes[name]:
                raise ValueError(f"parameter {name} has shape {arr.shape}, expected {shapes[name]}")

    @staticmethod
    def input_dim(history_len: int, n_neighbors: int) -> int:
        return 2 * history_len + 3 * n_neighbors

    @classmethod
    def init(cls, history_len: int, future_len: int, hidden: int, rng: np.random.Generator,
             n_neighbors: int = 2, scale: float = 10.0) -> "MLPPredictor":
        d = cls.input_dim(history_len, n_neighbors)
        params = MLPParams(
            w1=rng.normal(0.0, 1.0 / math.sqrt(d), (hidden, d)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, 1.0 / math.sqrt(hidden), (2 * future_len, hidden)) * 0.1,
            b2=np.zeros(2 * future_len),
            ws=np.zeros((2 * future_len, d)),
        )
        return cls(history_len, future_len, params, n_neighbors, scale)

    @staticmethod
    def _frame(history: np.ndarray) -> tuple[np.ndarray, float, np.ndarray, float]:
        """Anchor, heading, world-to-local rotation and step-length scale."""
        u = history[-1] - history[-2]
        phi = math.atan2(u[1], u[0])
        c, s = math.cos(phi), math.sin(phi)
        rho = math.sqrt(float(u @ u) + STEP_SOFTENING**2)
        return history[-1], phi, np.array([[c, s], [-s, c]]), rho

    def _nearest(self, anchor: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
        if len(neighbors) == 0:
            return neighbors
        d = np.hypot(*(neighbors - anchor).T)
        order = np.argsort(d, kind="stable")[: self.n_neighbors]
        return neighbors[order]

    def features(self, history: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
        anchor, _, rot, rho = self._frame(history)
        nb = self._nearest(anchor, neighbors)
        x = np.zeros(self.input_dim(self.history_len, self.n_neighbors))
        x[: 2 * self.history_len] = ((history - anchor) @ rot.T / rho).ravel()
        off = 2 * self.history_len
        for j, p in enumerate(nb):
            x[off + 3 * j : off + 3 * j + 2] = rot @ (p - anchor) / self.scale
            x[off + 3 * j + 2] = 1.0
        return x

    def encode_future(self, history: np.ndarray, future: np.ndarray) -> np.ndarray:
        anchor, _, rot, rho = self._frame(history)
        return ((future - anchor) @ rot.T / rho).ravel()

    def _forward_features(self, x: np.ndarray):
        p = self.params
        h = np.tanh(p.w1 @ x + p.b1)
        y = p.w2 @ h + p.b2 + p.ws @ x
        return h, y

    def forward(self, history, neighbors):
        anchor, _, rot, rho = self._frame(history)
        _, y = self._forward_features(self.features(history, neighbors))
        return anchor + rho * y.reshape(self.future_len, 2) @ rot

    def vjp(self, history, neighbors, grad_out):
        p = self.params
        anchor, phi, rot, rho = self._frame(history)
        c, s = math.cos(phi), math.sin(phi)
        drot = np.array([[-s, c], [-c, -s]])  # d rot / d phi
        x = self.features(history, neighbors)
        h, y = self._forward_features(x)
        y = y.reshape(self.future_len, 2)

        # out_k = anchor + rho * rot.T @ y_k
        gy = rho * grad_out @ rot.T
        g_phi = rho * float(np.sum(grad_out * (y @ drot)))
        g_rho = float(np.sum(grad_out * (y @ rot)))
        gy = gy.ravel()
        gx = p.w1.T @ ((1.0 - h * h) * (p.w2.T @ gy)) + p.ws.T @ gy

        g = np.zeros_like(history)
        g[-1] += grad_out.sum(axis=0)
        # history features q_k = rot @ (h_k - anchor) / rho
        n_h = 2 * self.history_len
        gq = gx[:n_h].reshape(self.history_len, 2)
        q = x[:n_h].reshape(self.history_len, 2)
        rel = history - anchor
        g_rel = gq @ rot / rho
        g += g_rel
        g[-1] -= g_rel.sum(axis=0)
        g_phi += float(np.sum(gq * (rel @ drot.T))) / rho
        g_rho -= float(np.sum(gq * q)) / rho
        nb = self._nearest(anchor, neighbors)
        for j, pt in enumerate(nb):
            gn = gx[n_h + 3 * j : n_h + 3 * j + 2]
            g[-1] -= rot.T @ gn / self.scale
            g_phi += float(gn @ (drot @ (pt - anchor))) / self.scale
        # phi and rho are functions of the last displacement u
        u = history[-1] - history[-2]
        uu = float(u @ u)
        g_u = g_rho * u / rho
        if uu > 0.0:
            g_u = g_u + g_phi * np.array([-u[1], u[0]]) / uu
        g[-1] += g_u
        g[-2] -= g_u
        return g

    def to_dict(self):
        return {
            **super().to_dict(),
            "n_neighbors": self.n_neighbors,
            "scale": self.scale,
            "shapes": {k: list(v.shape) for k, v in self.params.arrays().items()},
            "params": {k: v.ravel().tolist() for k, v in self.params.arrays().items()},
        }


class FiniteDifferenceAdapter(Predictor):
    """Makes any predictor attackable through central finite differences."""

    exact_gradient = False

    def __init__(self, inner: Predictor, step: float = FD_STEP):
        super().__init__(inner.history_len, inner.future_len)
        self.inner = inner
        self.step = step
        self.kind = inner.kind

    def forward(self, history, neighbors):
        return self.inner.forward(history, neighbors)

    def vjp(self, history, neighbors, grad_out):
        g = np.zeros_like(history)
        for k in range(history.shape[0]):
            for c in range(2):
                hp, hm = history.copy(), history.copy()
                hp[k, c] += self.step
                hm[k, c] -= self.step
                diff = self.inner.forward(hp, neighbors) - self.inner.forward(hm, neighbors)
                g[k, c] = np.sum(diff * grad_out) / (2 * self.step)
        return g

    def to_dict(self):
        return self.inner.to_dict()


# -- loss and gradient -----------------------------------------------------


def loss_rmse(pred: Prediction | np.ndarray, truth: np.ndarray, agent: str | None = None) -> float:
    """Root of the mean squared 2D displacement over the horizon."""
    p = pred.futures[agent] if isinstance(pred, Prediction) else pred
    p, t = as_points(p), as_points(truth)
    if p.shape != t.shape:
        raise ValueError(f"horizon mismatch: prediction {p.shape} vs truth {t.shape}")
    return float(math.sqrt(np.mean(np.sum((p - t) ** 2, axis=1))))


def rmse_and_grad(model: Predictor, history: np.ndarray, neighbors: np.ndarray,
                  truth: np.ndarray) -> tuple[float, np.ndarray]:
    pred = model.forward(history, neighbors)
    diff = pred - truth
    rmse = float(math.sqrt(np.mean(np.sum(diff * diff, axis=1))))
    if rmse == 0.0:
        return 0.0, np.zeros_like(history)
    grad_out = diff / (len(truth) * rmse)
    return rmse, model.vjp(history, neighbors, grad_out)


def grad_adversary_history(model: Predictor, req: PredictionRequest, truth: np.ndarray) -> np.ndarray:
    """Gradient of the adversary's prediction RMSE w.r.t. its history coordinates."""
    hist = as_points(req.histories[req.adversary_id])
    return rmse_and_grad(model, hist, req.neighbors(req.adversary_id), as_points(truth))[1]


# -- training --------------------------------------------------------------


@dataclass
class TrainConfig:
    hidden: int = 64
    epochs: int = 3000
    learning_rate: float = 1e-2
    n_neighbors: int = 0
    scale: float = 10.0


@dataclass
class TrainResult:
    model: MLPPredictor
    losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def training_windows(scenarios: Sequence[Scenario], history_len: int, future_len: int):
    """All (history, neighbors, future) windows of vehicle agents, in scenario order."""
    samples = []
    for sc in scenarios:
        n = sc.horizon
        for start in range(0, n - history_len - future_len + 1):
            last = start + history_len - 1
            for a in sc.agents:
                if a.cls == "pedestrian":
                    continue
                pts = a.trajectory.points
                nb = np.array([b.trajectory.points[last] for b in sc.agents if b.id != a.id]).reshape(-1, 2)
                samples.append((pts[start : start + history_len], nb, pts[last + 1 : last + 1 + future_len]))
    return samples


def train_tiny_surrogate(dataset: Sequence[Scenario], hyper: TrainConfig | None = None, seed: int = 0) -> TrainResult:
    """Full-batch Adam on mean squared displacement, measured in units of each
    window's last step length (the frame the model predicts in)."""
    hyper = hyper or TrainConfig()
    if not dataset:
        raise ValueError("training dataset is empty")
    l_i, l_o = dataset[0].history_len, dataset[0].future_len
    rng = np.random.default_rng(seed)
    model = MLPPredictor.init(l_i, l_o, hyper.hidden, rng, hyper.n_neighbors, hyper.scale)
    samples = training_windows(dataset, l_i, l_o)
    X = np.stack([model.features(h, nb) for h, nb, _ in samples])
    Y = np.stack([model.encode_future(h, f) for h, _, f in samples])

    p = model.params
    # warm-start the linear path with the least-squares linear predictor
    Xa = np.hstack([X, np.ones((len(X), 1))])
    coef = np.linalg.lstsq(Xa, Y, rcond=None)[0]
    p.ws, p.b2 = coef[:-1].T.copy(), coef[-1].copy()
    names = ["w1", "b1", "w2", "b2", "ws"]
    m = {k: np.zeros_like(getattr(p, k)) for k in names}
    v = {k: np.zeros_like(getattr(p, k)) for k in names}
    b1, b2, eps = 0.9, 0.999, 1e-8
    losses: list[float] = []
    n = len(X)
    # divergence is detected and raised below, so overflow warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, hyper.epochs + 1):
            H = np.tanh(X @ p.w1.T + p.b1)
            out = H @ p.w2.T + p.b2 + X @ p.ws.T
            err = out - Y
            loss = float(np.mean(np.sum(err * err, axis=1)))
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"training loss became {loss} at epoch {epoch}")
            losses.append(loss)
            g_out = 2.0 * err / n
            g_pre = (g_out @ p.w2) * (1.0 - H * H)
            grads = {
                "w2": g_out.T @ H,
                "b2": g_out.sum(axis=0),
                "ws": g_out.T @ X,
                "w1": g_pre.T @ X,
                "b1": g_pre.sum(axis=0),
            }
            lr = hyper.learning_rate * (0.1 ** (epoch / max(hyper.epochs, 1)))
            for k in names:
                m[k] = b1 * m[k] + (1 - b1) * grads[k]
                v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
                mh = m[k] / (1 - b1**epoch)
                vh = v[k] / (1 - b2**epoch)
                setattr(p, k, getattr(p, k) - lr * mh / (np.sqrt(vh) + eps))
    return TrainResult(model, losses)


# -- parameter files -------------------------------------------------------


def predictor_from_dict(doc: dict) -> Predictor:
    kind = doc.get("kind")
    l_i, l_o = int(doc["history_len"]), int(doc["future_len"])
    if kind == "cv":
        return ConstantVelocity(l_i, l_o)
    if kind == "poly":
        return PolynomialExtrapolator(l_i, l_o, int(doc.get("degree", 2)))
    if kind == "mlp":
        shapes = doc["shapes"]
        arrays = {}
        for name in ("w1", "b1", "w2", "b2", "ws"):
            flat = np.array(doc["params"][name], dtype=float)
            shape = tuple(shapes[name])
            if flat.size != math.prod(shape):
                raise ValueError(f"parameter {name}: {flat.size} values do not fit shape {shape}")
            arrays[name] = flat.reshape(shape)
        return MLPPredictor(l_i, l_o, MLPParams(**arrays), int(doc["n_neighbors"]), float(doc["scale"]))
    raise ValueError(f"unknown predictor kind {kind!r}")


def save_predictor(model: Predictor, path: str | os.PathLike) -> None:
    doc = {"format": PARAM_FORMAT, "version": PARAM_VERSION, **model.to_dict()}
    atomic_write_text(path, json.dumps(doc) + "\n")


def load_predictor(path: str | os.PathLike) -> Predictor:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != PARAM_FORMAT:
        raise ValueError(f"{path}: not a predictor parameter file")
    if doc.get("version") != PARAM_VERSION:
        raise ValueError(f"{path}: unsupported parameter version {doc.get('version')}")
    return predictor_from_dict(doc)


def builtin_predictor(name: str, history_len: int, future_len: int) -> Predictor:
    if name == "cv":
        return ConstantVelocity(history_len, future_len)
    if name == "poly":
        return PolynomialExtrapolator(history_len, future_len)
    raise ValueError(f"unknown built-in predictor {name!r}")
