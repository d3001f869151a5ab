"""Core data types: spaces, distributions, beliefs, world models, and parameters.

Everything here is an immutable container with hard invariants (simplex sums,
stochastic rows) enforced at construction.  Cross-object consistency (shape
agreement between a parameter set and its problem setting) is checked by
:func:`validate`, which returns a report instead of raising so that callers can
surface every problem at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

SIMPLEX_ATOL = 1e-9

DESCRIPTIVE_FIELDS = frozenset({"alpha", "beta", "eta", "utility"})

BELIEF_PRIOR_MODES = ("uniform_over_observations",)


def _frozen_array(values, dtype=float) -> np.ndarray:
    out = np.array(values, dtype=dtype)
    out.setflags(write=False)
    return out


def _check_simplex(w: np.ndarray, what: str) -> None:
    if w.ndim != 1 or w.size == 0:
        raise ValueError(f"{what} must be a non-empty vector")
    if not np.all(np.isfinite(w)):
        raise ValueError(f"{what} has non-finite entries")
    if w.min() < -SIMPLEX_ATOL:
        raise ValueError(f"{what} has negative entries (min {w.min():g})")
    total = w.sum()
    if abs(total - 1.0) > SIMPLEX_ATOL:
        raise ValueError(f"{what} sums to {total!r}, not 1")


@dataclass(frozen=True, eq=False)
class ProblemSetting:
    """Sizes of the state/observation/action spaces plus the terminal actions.

    Terminal actions end the episode immediately; everything else continues it.
    """

    num_states: int
    num_observations: int
    num_actions: int
    terminal_actions: frozenset[int] = frozenset()
    state_labels: tuple[str, ...] | None = None
    observation_labels: tuple[str, ...] | None = None
    action_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        for name in ("num_states", "num_observations", "num_actions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        object.__setattr__(self, "terminal_actions", frozenset(self.terminal_actions))
        if any(not 0 <= u < self.num_actions for u in self.terminal_actions):
            raise ValueError("terminal_actions outside the action range")
        for attr, n in (
            ("state_labels", self.num_states),
            ("observation_labels", self.num_observations),
            ("action_labels", self.num_actions),
        ):
            labels = getattr(self, attr)
            if labels is not None:
                object.__setattr__(self, attr, tuple(labels))
                if len(labels) != n:
                    raise ValueError(f"{attr} must have length {n}")

    def is_terminal(self, action: int) -> bool:
        return action in self.terminal_actions

    def to_dict(self) -> dict[str, Any]:
        return {
            "num_states": self.num_states,
            "num_observations": self.num_observations,
            "num_actions": self.num_actions,
            "terminal_actions": sorted(self.terminal_actions),
            "state_labels": list(self.state_labels) if self.state_labels else None,
            "observation_labels": list(self.observation_labels) if self.observation_labels else None,
            "action_labels": list(self.action_labels) if self.action_labels else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ProblemSetting":
        return cls(
            num_states=int(data["num_states"]),
            num_observations=int(data["num_observations"]),
            num_actions=int(data["num_actions"]),
            terminal_actions=frozenset(data.get("terminal_actions") or ()),
            state_labels=data.get("state_labels"),
            observation_labels=data.get("observation_labels"),
            action_labels=data.get("action_labels"),
        )


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Probability vector over a finite set, validated to the simplex."""

    weights: np.ndarray

    def __post_init__(self):
        w = _frozen_array(self.weights)
        _check_simplex(w, "distribution")
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.size

    @classmethod
    def uniform(cls, n: int) -> "DiscreteDistribution":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def point_mass(cls, index: int, n: int) -> "DiscreteDistribution":
        w = np.zeros(n)
        w[index] = 1.0
        return cls(w)

    def to_dict(self) -> dict[str, Any]:
        return {"weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DiscreteDistribution":
        return cls(np.asarray(data["weights"], dtype=float))


@dataclass(frozen=True, eq=False)
class Belief:
    """Point on the probability simplex over hidden states."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = _frozen_array(self.probabilities)
        _check_simplex(p, "belief")
        object.__setattr__(self, "probabilities", p)

    def __len__(self) -> int:
        return self.probabilities.size

    @classmethod
    def uniform(cls, num_states: int) -> "Belief":
        return cls(np.full(num_states, 1.0 / num_states))

    def to_dict(self) -> dict[str, Any]:
        return {"probabilities": self.probabilities.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Belief":
        return cls(np.asarray(data["probabilities"], dtype=float))


@dataclass(frozen=True, eq=False)
class DynamicsModel:
    """One hypothesis about how the world moves and what it emits.

    ``transition[s, u, s']`` is the chance of landing in ``s'`` after taking
    ``u`` in ``s``; ``emission[u, s', x]`` is the chance of observing ``x``
    right after ``u`` led to ``s'``.  Every row must be a distribution.
    """

    transition: np.ndarray
    emission: np.ndarray

    def __post_init__(self):
        t = _frozen_array(self.transition)
        e = _frozen_array(self.emission)
        if t.ndim != 3 or t.shape[0] != t.shape[2]:
            raise ValueError("transition must have shape (states, actions, states)")
        if e.ndim != 3 or e.shape[1] != t.shape[0]:
            raise ValueError("emission must have shape (actions, states, observations)")
        if e.shape[0] != t.shape[1]:
            raise ValueError("transition and emission disagree on the action count")
        for table, name in ((t, "transition"), (e, "emission")):
            if not np.all(np.isfinite(table)):
                raise ValueError(f"{name} has non-finite entries")
            if table.min() < 0:
                raise ValueError(f"{name} has negative entries")
            rows = table.sum(axis=-1)
            if np.abs(rows - 1.0).max() > SIMPLEX_ATOL:
                raise ValueError(f"{name} rows must sum to 1 (worst {np.abs(rows - 1.0).max():g} off)")
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "emission", e)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def num_observations(self) -> int:
        return self.emission.shape[2]

    def to_dict(self) -> dict[str, Any]:
        return {"transition": self.transition.tolist(), "emission": self.emission.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DynamicsModel":
        return cls(
            transition=np.asarray(data["transition"], dtype=float),
            emission=np.asarray(data["emission"], dtype=float),
        )


@dataclass(frozen=True, eq=False)
class ModelEnsemble:
    """Finite family of dynamics hypotheses with a prior over them."""

    models: tuple[DynamicsModel, ...]
    prior: DiscreteDistribution

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        if not self.models:
            raise ValueError("ensemble needs at least one model")
        if len(self.prior) != len(self.models):
            raise ValueError("prior length must match the number of models")
        first = self.models[0]
        for m in self.models[1:]:
            if (
                m.transition.shape != first.transition.shape
                or m.emission.shape != first.emission.shape
            ):
                raise ValueError("all models must share the same table shapes")

    def __len__(self) -> int:
        return len(self.models)

    @classmethod
    def dirac(cls, model: DynamicsModel) -> "ModelEnsemble":
        return cls(models=(model,), prior=DiscreteDistribution.point_mass(0, 1))

    def to_dict(self) -> dict[str, Any]:
        return {
            "models": [m.to_dict() for m in self.models],
            "prior": self.prior.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelEnsemble":
        return cls(
            models=tuple(DynamicsModel.from_dict(m) for m in data["models"]),
            prior=DiscreteDistribution.from_dict(data["prior"]),
        )


@dataclass(frozen=True, eq=False)
class BrcParams:
    """Full parameter set for one agent.

    ``alpha`` is the decision temperature (how far the action choice may bend
    the prior ``action_prior``), ``beta`` the model-choice temperature (sign
    selects optimism vs pessimism about which world model to plan with), and
    ``eta`` the weight of the surprise penalty on informative belief jumps.
    ``descriptive_mask`` names the fields treated as descriptive (free to vary
    when explaining behavior) rather than normative.
    """

    utility: np.ndarray
    discount: float
    alpha: float
    beta: float
    eta: float
    action_prior: DiscreteDistribution
    model_ensemble: ModelEnsemble
    initial_belief: Belief
    belief_prior_mode: str = "uniform_over_observations"
    descriptive_mask: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "utility", _frozen_array(self.utility))
        if self.utility.ndim != 2:
            raise ValueError("utility must be a (states, actions) table")
        object.__setattr__(self, "descriptive_mask", frozenset(self.descriptive_mask))

    def replace(self, **changes) -> "BrcParams":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "utility": self.utility.tolist(),
            "discount": self.discount,
            "alpha": self.alpha,
            "beta": self.beta,
            "eta": self.eta,
            "action_prior": self.action_prior.to_dict(),
            "model_ensemble": self.model_ensemble.to_dict(),
            "initial_belief": self.initial_belief.to_dict(),
            "belief_prior_mode": self.belief_prior_mode,
            "descriptive_mask": sorted(self.descriptive_mask),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BrcParams":
        return cls(
            utility=np.asarray(data["utility"], dtype=float),
            discount=float(data["discount"]),
            alpha=float(data["alpha"]),
            beta=float(data["beta"]),
            eta=float(data["eta"]),
            action_prior=DiscreteDistribution.from_dict(data["action_prior"]),
            model_ensemble=ModelEnsemble.from_dict(data["model_ensemble"]),
            initial_belief=Belief.from_dict(data["initial_belief"]),
            belief_prior_mode=data.get("belief_prior_mode", "uniform_over_observations"),
            descriptive_mask=frozenset(data.get("descriptive_mask") or ()),
        )


@dataclass(frozen=True)
class Trajectory:
    """One recorded episode: equal-length observation and action sequences.

    ``observations[0]`` is an uninformative placeholder preceding the first
    action; ``observations[t]`` for ``t >= 1`` is the outcome of the
    (non-terminal) action at ``t - 1``.  ``hidden_states`` is diagnostic
    bookkeeping from the simulator; inference never reads it.
    """

    observations: tuple[int, ...]
    actions: tuple[int, ...]
    hidden_states: tuple[int, ...] | None = None
    truncated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(int(x) for x in self.observations))
        object.__setattr__(self, "actions", tuple(int(u) for u in self.actions))
        if self.hidden_states is not None:
            object.__setattr__(self, "hidden_states", tuple(int(s) for s in self.hidden_states))
        if len(self.observations) != len(self.actions):
            raise ValueError("observations and actions must have equal length")
        if not self.actions:
            raise ValueError("trajectory must contain at least one action")
        if self.hidden_states is not None and len(self.hidden_states) != len(self.actions):
            raise ValueError("hidden_states must align with actions")

    def __len__(self) -> int:
        return len(self.actions)

    def to_dict(self) -> dict[str, Any]:
        return {
            "observations": list(self.observations),
            "actions": list(self.actions),
            "hidden_states": list(self.hidden_states) if self.hidden_states is not None else None,
            "truncated": self.truncated,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Trajectory":
        hidden = data.get("hidden_states")
        return cls(
            observations=tuple(data["observations"]),
            actions=tuple(data["actions"]),
            hidden_states=tuple(hidden) if hidden is not None else None,
            truncated=bool(data.get("truncated", False)),
        )


def validate(setting: ProblemSetting, params: BrcParams) -> list[str]:
    """Cross-check a parameter set against its setting.

    Returns a list of human-readable findings; an empty list means the pair is
    consistent.  Nothing raises here — constructors already guard the per-object
    invariants, this covers ranges and shape agreement.
    """
    findings: list[str] = []
    s, x, u = setting.num_states, setting.num_observations, setting.num_actions

    if not 0.0 <= params.discount < 1.0:
        findings.append(f"discount {params.discount!r} outside [0, 1)")
    for name in ("alpha", "beta", "eta"):
        value = getattr(params, name)
        if not np.isfinite(value):
            findings.append(f"{name} is not finite")
        elif value == 0.0:
            findings.append(f"{name} must be non-zero (use a small magnitude for limits)")

    if params.utility.shape != (s, u):
        findings.append(
            f"utility shape {params.utility.shape} does not match (states, actions) = {(s, u)}"
        )
    if not np.all(np.isfinite(params.utility)):
        findings.append("utility has non-finite entries")

    if len(params.action_prior) != u:
        findings.append(f"action_prior length {len(params.action_prior)} != num_actions {u}")
    if len(params.initial_belief) != s:
        findings.append(f"initial_belief length {len(params.initial_belief)} != num_states {s}")

    for i, model in enumerate(params.model_ensemble.models):
        if model.transition.shape != (s, u, s):
            findings.append(f"model {i} transition shape {model.transition.shape} != {(s, u, s)}")
        if model.emission.shape != (u, s, x):
            findings.append(f"model {i} emission shape {model.emission.shape} != {(u, s, x)}")

    if params.belief_prior_mode not in BELIEF_PRIOR_MODES:
        findings.append(f"unknown belief_prior_mode {params.belief_prior_mode!r}")
    unknown = params.descriptive_mask - DESCRIPTIVE_FIELDS
    if unknown:
        findings.append(f"descriptive_mask has unknown fields {sorted(unknown)}")

    return findings


def validate_trajectory(trajectory: Trajectory, setting: ProblemSetting) -> list[str]:
    """Report-style check that a trajectory lives in the setting's spaces."""
    findings: list[str] = []
    if any(not 0 <= x < setting.num_observations for x in trajectory.observations):
        findings.append("observation index outside the observation range")
    if any(not 0 <= u < setting.num_actions for u in trajectory.actions):
        findings.append("action index outside the action range")
    terminal_positions = [
        t for t, u in enumerate(trajectory.actions) if setting.is_terminal(u)
    ]
    if any(t != len(trajectory.actions) - 1 for t in terminal_positions):
        findings.append("terminal action before the final step")
    if trajectory.hidden_states is not None and any(
        not 0 <= s < setting.num_states for s in trajectory.hidden_states
    ):
        findings.append("hidden state outside the state range")
    return findings


def dumps(obj, **kwargs) -> str:
    """Serialize any core object (or plain data) to deterministic JSON."""
    data = obj.to_dict() if hasattr(obj, "to_dict") else obj
    kwargs.setdefault("sort_keys", True)
    kwargs.setdefault("separators", (",", ":"))
    return json.dumps(data, **kwargs)
