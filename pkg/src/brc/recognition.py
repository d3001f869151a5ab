"""Belief updates and the discretized belief simplex.

The update stack has three layers:

* exact single-model filtering (:func:`bayes_posterior`,
  :func:`observation_predictive`, :func:`next_belief_atoms`), where the
  posterior over next states is the joint ``prior(s) * transition(s'|s,u) *
  emission(x'|u,s')`` enumerated over ``(s, s')`` and normalized by the
  observation's predictive probability;
* the biased update (:func:`biased_recognition_update`) that averages the
  per-model posteriors under a supplied weighting over models;
* the lattice (:class:`BeliefLattice`) used by the solver, with barycentric
  interpolation that is exact at nodes and reproduces the query point as the
  convex combination of its supporting nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    SIMPLEX_ATOL,
    Belief,
    DiscreteDistribution,
    DynamicsModel,
    ModelEnsemble,
)

ATOM_MERGE_TOL = 1e-12


class ImpossibleEvidenceError(ValueError):
    """Raised when an observation has probability zero under every relevant model."""


def _posterior_unnormalized(z: np.ndarray, action: int, observation: int, model: DynamicsModel) -> np.ndarray:
    predicted = z @ model.transition[:, action, :]
    return predicted * model.emission[action, :, observation]


def bayes_posterior(belief: Belief, action: int, observation: int, model: DynamicsModel) -> Belief:
    """Exact filtered posterior over next states for one dynamics model.

    Raises :class:`ImpossibleEvidenceError` when the observation has zero
    predictive probability from this belief.
    """
    joint = _posterior_unnormalized(belief.probabilities, action, observation, model)
    total = joint.sum()
    if total <= 0.0:
        raise ImpossibleEvidenceError(
            f"observation {observation} has probability 0 after action {action}"
        )
    return Belief(joint / total)


def observation_predictive(belief: Belief, action: int, model: DynamicsModel) -> DiscreteDistribution:
    """Distribution over the next observation before it arrives."""
    predicted = belief.probabilities @ model.transition[:, action, :]
    return DiscreteDistribution(predicted @ model.emission[action])


def next_belief_atoms(
    belief: Belief, action: int, model: DynamicsModel
) -> list[tuple[Belief, float]]:
    """All reachable next beliefs with their probabilities.

    One atom per observation with positive predictive probability; atoms whose
    posteriors coincide (within ``ATOM_MERGE_TOL`` Euclidean distance) are
    merged, pooling their mass.  Masses always total 1.
    """
    predicted = belief.probabilities @ model.transition[:, action, :]
    predictive = predicted @ model.emission[action]
    atoms: list[tuple[np.ndarray, float]] = []
    for x, mass in enumerate(predictive):
        if mass <= 0.0:
            continue
        posterior = predicted * model.emission[action, :, x] / mass
        for i, (existing, existing_mass) in enumerate(atoms):
            if np.linalg.norm(existing - posterior) < ATOM_MERGE_TOL:
                atoms[i] = (existing, existing_mass + mass)
                break
        else:
            atoms.append((posterior, mass))
    return [(Belief(p), m) for p, m in atoms]


def biased_recognition_update(
    belief: Belief,
    action: int,
    observation: int,
    model_weights: DiscreteDistribution,
    ensemble: ModelEnsemble,
) -> Belief:
    """Weighted mean of the per-model posteriors.

    Models under which the observation is impossible contribute nothing and
    their weight is renormalized away; if no weighted model can explain the
    observation, :class:`ImpossibleEvidenceError` is raised.  The weights are
    taken as given (they are chosen before the observation arrives) — the
    evidence only filters impossibilities, it does not reweight.
    """
    if len(model_weights) != len(ensemble):
        raise ValueError("model_weights length must match the ensemble")
    z = belief.probabilities
    mean = np.zeros_like(z)
    surviving = 0.0
    for weight, model in zip(model_weights.weights, ensemble.models):
        if weight <= 0.0:
            continue
        joint = _posterior_unnormalized(z, action, observation, model)
        total = joint.sum()
        if total <= 0.0:
            continue
        mean += weight * (joint / total)
        surviving += weight
    if surviving <= 0.0:
        raise ImpossibleEvidenceError(
            f"observation {observation} is impossible under every weighted model"
        )
    return Belief(mean / surviving)


def _compositions(total: int, parts: int) -> list[tuple[int, ...]]:
    if parts == 1:
        return [(total,)]
    out = []
    for head in range(total + 1):
        for tail in _compositions(total - head, parts - 1):
            out.append((head,) + tail)
    return out


@dataclass(frozen=True, eq=False)
class BeliefLattice:
    """Regular discretization of the belief simplex.

    Nodes are the integer compositions of ``resolution`` into one part per
    state, enumerated lexicographically, so a 2-state lattice at resolution R
    has R + 1 nodes with first coordinate 0/R, 1/R, ..., R/R.
    """

    resolution: int
    coordinates: np.ndarray  # (num_nodes, num_states) ints summing to resolution
    points: np.ndarray  # (num_nodes, num_states) floats on the simplex
    index: dict[tuple[int, ...], int]

    @classmethod
    def build(cls, num_states: int, resolution: int) -> "BeliefLattice":
        if num_states < 2:
            raise ValueError("lattice needs at least 2 states")
        if resolution < 1:
            raise ValueError("resolution must be >= 1")
        coords = np.array(_compositions(resolution, num_states), dtype=int)
        points = coords / float(resolution)
        index = {tuple(int(c) for c in row): i for i, row in enumerate(coords)}
        coords.setflags(write=False)
        points.setflags(write=False)
        return cls(resolution=resolution, coordinates=coords, points=points, index=index)

    @property
    def num_nodes(self) -> int:
        return self.coordinates.shape[0]

    @property
    def num_states(self) -> int:
        return self.coordinates.shape[1]

    def node_belief(self, node: int) -> Belief:
        return Belief(self.points[node])

    def support_weights(self, beliefs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Supporting nodes and barycentric weights for a batch of beliefs.

        Input shape (B, num_states); returns integer node indices (B, k + 1)
        and non-negative weights (B, k + 1) summing to 1 per row, such that the
        weighted combination of the supporting node points reproduces each
        query exactly.  Uses the staircase-coordinate simplex triangulation:
        queries are mapped to cumulative coordinates, split into a base corner
        plus fractional parts, and the containing simplex is the corner path
        that adds coordinates in decreasing fractional order.
        """
        z = np.atleast_2d(np.asarray(beliefs, dtype=float))
        batch, k = z.shape
        if k != self.num_states:
            raise ValueError(f"belief dimension {k} != lattice dimension {self.num_states}")
        if np.any(z < -SIMPLEX_ATOL) or np.any(np.abs(z.sum(axis=1) - 1.0) > SIMPLEX_ATOL):
            raise ValueError("query belief is off the simplex")
        z = np.clip(z, 0.0, None)

        resolution = float(self.resolution)
        stairs = resolution * np.flip(np.cumsum(np.flip(z, axis=1), axis=1), axis=1)
        stairs[:, 0] = resolution
        nearest = np.round(stairs)
        stairs = np.where(np.abs(stairs - nearest) < 1e-9, nearest, stairs)

        base = np.floor(stairs)
        frac = stairs - base
        order = np.argsort(-frac, axis=1, kind="stable")
        frac_sorted = np.take_along_axis(frac, order, axis=1)

        weights = np.empty((batch, k + 1))
        weights[:, 0] = 1.0 - frac_sorted[:, 0]
        if k > 1:
            weights[:, 1:k] = frac_sorted[:, :-1] - frac_sorted[:, 1:]
        weights[:, k] = frac_sorted[:, -1]

        corners = np.repeat(base[:, None, :].astype(int), k + 1, axis=1)
        rows = np.arange(batch)
        for step in range(1, k + 1):
            corners[rows[:, None], np.arange(step, k + 1)[None, :], order[:, step - 1][:, None]] += 1

        # staircase corner -> lattice coordinates (difference of successive entries)
        coords = corners.copy()
        coords[:, :, :-1] -= corners[:, :, 1:]

        indices = np.zeros((batch, k + 1), dtype=int)
        for b in range(batch):
            for v in range(k + 1):
                if weights[b, v] > 0.0:
                    indices[b, v] = self.index[tuple(coords[b, v])]
        weights = np.clip(weights, 0.0, None)
        weights /= weights.sum(axis=1, keepdims=True)
        return indices, weights

    def interpolate(self, values: np.ndarray, beliefs: np.ndarray) -> np.ndarray:
        """Barycentric interpolation of per-node tables at arbitrary beliefs.

        ``values`` has shape (num_nodes, ...); a single belief vector yields a
        result of shape (...), a (B, k) batch yields (B, ...).
        """
        arr = np.asarray(beliefs, dtype=float)
        single = arr.ndim == 1
        indices, weights = self.support_weights(arr)
        values = np.asarray(values)
        gathered = values[indices]  # (B, k + 1, ...)
        w = weights.reshape(weights.shape + (1,) * (values.ndim - 1))
        out = (gathered * w).sum(axis=1)
        return out[0] if single else out

    def project(self, belief: Belief) -> np.ndarray:
        """Belief as a mass vector over nodes (barycentric snapping)."""
        indices, weights = self.support_weights(belief.probabilities)
        out = np.zeros(self.num_nodes)
        np.add.at(out, indices[0], weights[0])
        return out


def lattice_interpolate(lattice: BeliefLattice, values: np.ndarray, belief: Belief) -> float:
    """Interpolate a scalar-per-node table at one belief."""
    return float(lattice.interpolate(np.asarray(values, dtype=float), belief.probabilities))
