"""Speed-adaptive adversarial trajectories against trajectory predictors."""

from .core import (
    Agent,
    AgentState,
    ClothoidArc,
    Configuration,
    LaneSegment,
    Scenario,
    ScenarioError,
    Trajectory,
    derive_kinematics,
    load_scenario,
    save_scenario,
)
from .metrics import ade, aggregate, evaluate_attack, fde, miss, offroad_rate
from .predictors import (
    ConstantVelocity,
    MLPPredictor,
    PolynomialExtrapolator,
    PredictionRequest,
    grad_adversary_history,
    loss_rmse,
    predict,
    train_tiny_surrogate,
)
from .pursuit import PursuitConfig, reconstruct, resample, sa_attack
from .search import SearchConfig, generate_reference, search_attack
from .synth import GeneratorConfig, generate_synthetic_scenarios

__version__ = "0.1.0"
