"""Two-state diagnosis environment: builders, simulation, and dataset files.

A patient is diseased or healthy (the state never changes).  Each step the
agent either runs another noisy test (cost -1) or commits to a diagnosis,
which ends the episode with +10 when right and a strongly negative payoff
when wrong.  The agent's ensemble of candidate test models varies the test
accuracies on a square grid around the truth.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    Belief,
    BrcParams,
    DiscreteDistribution,
    DynamicsModel,
    ModelEnsemble,
    ProblemSetting,
    Trajectory,
)
from .solver import SolvedAgent, decision_policy, recognition_step

STATE_DISEASED, STATE_HEALTHY = 0, 1
OBS_POSITIVE, OBS_NEGATIVE = 0, 1
ACT_MONITOR, ACT_DECLARE_DISEASED, ACT_DECLARE_HEALTHY = 0, 1, 2

PLACEHOLDER_OBSERVATION = 0  # fills the pre-action slot at index 0 of every trajectory


@dataclass(frozen=True)
class DiagConfig:
    """Knobs for the diagnosis problem and its model grid."""

    monitor_cost: float = -1.0
    correct_reward: float = 10.0
    incorrect_reward: float = -36.0
    discount: float = 0.95
    accuracy_positive: float = 0.7  # P(positive test | diseased)
    accuracy_negative: float = 0.7  # P(negative test | healthy)
    disease_prior: float = 0.5
    grid_increment: float = 0.10
    grid_steps_each_way: int = 2
    max_trajectory_length: int = 50

    def __post_init__(self):
        if not 0.0 < self.disease_prior < 1.0:
            raise ValueError("disease_prior must lie strictly inside (0, 1)")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if self.grid_steps_each_way < 0:
            raise ValueError("grid_steps_each_way must be >= 0")
        if self.grid_increment <= 0 and self.grid_steps_each_way > 0:
            raise ValueError("grid_increment must be positive")
        if self.max_trajectory_length < 1:
            raise ValueError("max_trajectory_length must be >= 1")
        for name in ("accuracy_positive", "accuracy_negative"):
            reach = self.grid_steps_each_way * self.grid_increment
            value = getattr(self, name)
            if not (0.0 < value - reach and value + reach < 1.0):
                raise ValueError(
                    f"{name} grid leaves (0, 1): {value} +/- {reach} at the stated steps"
                )


def _emission_table(accuracy_positive: float, accuracy_negative: float, num_actions: int = 3) -> np.ndarray:
    row = np.array(
        [
            [accuracy_positive, 1.0 - accuracy_positive],
            [1.0 - accuracy_negative, accuracy_negative],
        ]
    )
    return np.broadcast_to(row, (num_actions, 2, 2)).copy()


def _diag_model(accuracy_positive: float, accuracy_negative: float) -> DynamicsModel:
    identity = np.broadcast_to(np.eye(2)[:, None, :], (2, 3, 2)).copy()
    return DynamicsModel(
        transition=identity,
        emission=_emission_table(accuracy_positive, accuracy_negative),
    )


def build_model_grid(config: DiagConfig) -> ModelEnsemble:
    """Square grid of emission accuracies around the truth.

    ``grid_steps_each_way`` steps of ``grid_increment`` per axis, so the
    default yields a 5 x 5 = 25-model ensemble.  The prior over models is an
    isotropic Gaussian in grid steps (standard deviation one step), peaked at
    the true accuracies.
    """
    steps = range(-config.grid_steps_each_way, config.grid_steps_each_way + 1)
    models, weights = [], []
    for i in steps:
        for j in steps:
            models.append(
                _diag_model(
                    config.accuracy_positive + i * config.grid_increment,
                    config.accuracy_negative + j * config.grid_increment,
                )
            )
            weights.append(np.exp(-0.5 * (i * i + j * j)))
    weights = np.array(weights)
    return ModelEnsemble(models=tuple(models), prior=DiscreteDistribution(weights / weights.sum()))


def build_diag(config: DiagConfig = DiagConfig()) -> tuple[ProblemSetting, DynamicsModel, BrcParams]:
    """Problem setting, true dynamics, and a parameter template.

    The template uses neutral defaults (alpha 0.5, beta 1e3, eta 1e-3), a
    uniform action prior, and the grid ensemble; callers override the
    temperatures per agent via ``params.replace``.
    """
    setting = ProblemSetting(
        num_states=2,
        num_observations=2,
        num_actions=3,
        terminal_actions=frozenset({ACT_DECLARE_DISEASED, ACT_DECLARE_HEALTHY}),
        state_labels=("diseased", "healthy"),
        observation_labels=("positive", "negative"),
        action_labels=("monitor", "declare_diseased", "declare_healthy"),
    )
    truth = _diag_model(config.accuracy_positive, config.accuracy_negative)
    utility = np.array(
        [
            [config.monitor_cost, config.correct_reward, config.incorrect_reward],
            [config.monitor_cost, config.incorrect_reward, config.correct_reward],
        ]
    )
    params = BrcParams(
        utility=utility,
        discount=config.discount,
        alpha=0.5,
        beta=1e3,
        eta=1e-3,
        action_prior=DiscreteDistribution.uniform(3),
        model_ensemble=build_model_grid(config),
        initial_belief=Belief(np.array([config.disease_prior, 1.0 - config.disease_prior])),
    )
    return setting, truth, params


def incorrect_diagnosis_cells() -> tuple[tuple[int, int], ...]:
    """Utility-table cells holding the payoff for a wrong diagnosis."""
    return ((STATE_DISEASED, ACT_DECLARE_HEALTHY), (STATE_HEALTHY, ACT_DECLARE_DISEASED))


def trajectory_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Deterministic per-trajectory seed, independent of scheduling order."""
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))


def sample_trajectory(
    agent: SolvedAgent,
    truth: DynamicsModel,
    seed: np.random.SeedSequence | int,
    max_length: int = 50,
) -> Trajectory:
    """Roll one episode of the solved agent against the true dynamics.

    The hidden state starts from the agent's initial belief, actions are drawn
    from the decision policy, test outcomes from the true model, and the
    agent's belief moves by its own (possibly biased) recognition step.  The
    episode ends at the first terminal action, or is cut (``truncated=True``)
    after ``max_length`` actions.
    """
    rng = np.random.default_rng(seed)
    params = agent.params
    belief = params.initial_belief
    state = int(rng.choice(len(belief), p=belief.probabilities))

    observations = [PLACEHOLDER_OBSERVATION]
    actions: list[int] = []
    hidden: list[int] = []
    truncated = False
    for t in range(max_length):
        action_weights = decision_policy(agent, belief).weights
        action = int(rng.choice(action_weights.size, p=action_weights))
        actions.append(action)
        hidden.append(state)
        if agent.setting.is_terminal(action):
            break
        if t == max_length - 1:
            truncated = True
            break
        state = int(rng.choice(truth.num_states, p=truth.transition[state, action]))
        observation = int(rng.choice(truth.num_observations, p=truth.emission[action, state]))
        observations.append(observation)
        belief = recognition_step(agent, belief, action, observation)

    return Trajectory(
        observations=tuple(observations),
        actions=tuple(actions),
        hidden_states=tuple(hidden),
        truncated=truncated,
    )


def _sample_block(args) -> list[dict]:
    agent, truth, master_seed, indices, max_length = args
    return [
        sample_trajectory(agent, truth, trajectory_seed(master_seed, i), max_length).to_dict()
        for i in indices
    ]


def generate_dataset(
    agent: SolvedAgent,
    truth: DynamicsModel,
    n: int,
    master_seed: int,
    max_length: int = 50,
    workers: int = 1,
) -> list[Trajectory]:
    """Sample ``n`` trajectories with per-index seeds (order-independent).

    ``workers > 1`` fans the sampling out across processes; results are
    identical to the serial path because every trajectory owns its seed.
    """
    if workers <= 1:
        return [
            sample_trajectory(agent, truth, trajectory_seed(master_seed, i), max_length)
            for i in range(n)
        ]
    blocks = [
        (agent, truth, master_seed, range(start, n, workers), max_length)
        for start in range(workers)
    ]
    results: dict[int, Trajectory] = {}
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for block, out in zip(blocks, pool.map(_sample_block, blocks)):
            for i, data in zip(block[3], out):
                results[i] = Trajectory.from_dict(data)
    return [results[i] for i in range(n)]


def belief_trace(trajectory: Trajectory, agent: SolvedAgent) -> list[Belief]:
    """Beliefs held when each action was taken (one belief per action)."""
    beliefs = [agent.params.initial_belief]
    for t in range(len(trajectory.actions) - 1):
        beliefs.append(
            recognition_step(
                agent, beliefs[-1], trajectory.actions[t], trajectory.observations[t + 1]
            )
        )
    return beliefs


def save_dataset(path: str | Path, dataset: list[Trajectory], manifest_extra: dict | None = None) -> dict:
    """Write trajectories as JSON lines plus a sidecar ``<path>.manifest.json``."""
    path = Path(path)
    lines = [json.dumps(t.to_dict(), sort_keys=True, separators=(",", ":")) for t in dataset]
    payload = "\n".join(lines) + ("\n" if lines else "")
    path.write_text(payload)
    manifest = {
        "num_trajectories": len(dataset),
        "sha256": hashlib.sha256(payload.encode()).hexdigest(),
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    Path(str(path) + ".manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
    return manifest


def load_dataset(path: str | Path) -> list[Trajectory]:
    out = []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if line:
                out.append(Trajectory.from_dict(json.loads(line)))
    return out
