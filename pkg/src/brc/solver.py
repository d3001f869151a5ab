"""Soft value iteration on the belief lattice, policies, and the dual operators.

The optimal backup nests three aggregations.  For each lattice node ``z``,
non-terminal action ``u`` and model ``m``, the continuation score is

    K(z, u, m) = sum over next-belief atoms of
                 mass * (-eta * log(mass / ref) + discount * V(atom)),

where ``ref`` is the uniform reference 1 / num_observations and the atoms come
from the exact per-model filter.  Actions are then scored through a soft
expectation over models at temperature ``beta``,

    Q(z, u) = E_{s ~ z}[utility(s, u)] + beta * log E_{m ~ prior} exp(K / beta),

(terminal actions keep only the immediate expected utility and K = 0), and the
state value mixes actions at temperature ``alpha``:

    V(z) = alpha * log E_{u ~ action_prior} exp(Q / alpha).

Positive temperatures interpolate between hard maximization (t -> 0+) and the
plain prior expectation (|t| -> infinity); negative temperatures bend toward
the minimum instead.  Both extremes are handled by exact limit formulas past
the thresholds below, so limit studies are not at the mercy of overflow.

The matching softmax policies, the penalized evaluation of arbitrary
policies, and the discounted occupancy over lattice nodes (with episodes
restarting at the initial belief when a terminal action fires) live here too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import Belief, BrcParams, DiscreteDistribution, ProblemSetting
from .recognition import BeliefLattice, biased_recognition_update, next_belief_atoms

LINEAR_TEMPERATURE = 1e5  # |t| at or above this: exact prior expectation / prior policy
HARD_TEMPERATURE = 1e-8  # |t| at or below this: exact max or min / point-mass policy


class ConvergenceError(RuntimeError):
    """Fixed-point iteration ran out of iterations."""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


def _log_weights(prior: np.ndarray) -> np.ndarray:
    out = np.full(prior.shape, -np.inf)
    positive = prior > 0
    out[positive] = np.log(prior[positive])
    return out


def _soft_mix(temperature: float, prior: np.ndarray, values: np.ndarray, axis: int = -1) -> np.ndarray:
    """t * log E_{i ~ prior} exp(values_i / t) along one axis, stably."""
    t = float(temperature)
    if abs(t) >= LINEAR_TEMPERATURE:
        return np.moveaxis(values, axis, -1) @ prior
    if abs(t) <= HARD_TEMPERATURE:
        masked = np.where(prior > 0, values, -np.inf if t > 0 else np.inf)
        return masked.max(axis=axis) if t > 0 else masked.min(axis=axis)
    w = values / t + _log_weights(prior)
    shift = w.max(axis=axis, keepdims=True)
    out = shift.squeeze(axis) + np.log(np.exp(w - shift).sum(axis=axis))
    return t * out


def soft_expectation(temperature: float, prior: DiscreteDistribution, values) -> float:
    """Soft expectation of a value vector under a prior at the given temperature."""
    values = np.asarray(values, dtype=float)
    if values.shape != prior.weights.shape:
        raise ValueError("values and prior must have the same length")
    return float(_soft_mix(temperature, prior.weights, values))


def _softmax_policy(temperature: float, prior: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Prior reweighted by exp(values / t) along the last axis, with exact limits.

    At |t| >= LINEAR_TEMPERATURE the prior is returned untouched; at
    |t| <= HARD_TEMPERATURE the mass moves to the prior-supported argmax
    (argmin for t < 0), split by prior weight on exact ties.  Leading axes of
    ``values`` are treated as a batch.
    """
    t = float(temperature)
    values = np.asarray(values, dtype=float)
    if abs(t) >= LINEAR_TEMPERATURE:
        return np.broadcast_to(prior, values.shape).copy()
    support = prior > 0
    if abs(t) <= HARD_TEMPERATURE:
        masked = np.where(support, values, -np.inf if t > 0 else np.inf)
        extreme = (masked.max if t > 0 else masked.min)(axis=-1, keepdims=True)
        p = np.where(support & (values == extreme), prior, 0.0)
        return p / p.sum(axis=-1, keepdims=True)
    w = values / t + _log_weights(prior)
    w -= w.max(axis=-1, keepdims=True)
    p = np.exp(w)
    return p / p.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ConvergenceInfo:
    iterations: int
    residual: float


@dataclass(frozen=True, eq=False)
class SolvedAgent:
    """Converged value tables on a lattice plus everything needed to query them."""

    setting: ProblemSetting
    params: BrcParams
    lattice: BeliefLattice
    v_star: np.ndarray  # (nodes,)
    q_star: np.ndarray  # (nodes, actions)
    k_star: np.ndarray  # (nodes, actions, models); zero rows for terminal actions
    convergence: ConvergenceInfo


class BackupOperator:
    """One-step optimal backup with the per-node transition structure precomputed.

    Construction enumerates, for every (node, non-terminal action, model), the
    next-belief atoms and their barycentric footprints on the lattice; applying
    the operator is then pure tensor arithmetic.  The structure depends only on
    the setting, ensemble and lattice, so one operator can be re-applied while
    (alpha, beta, eta, utility) change via :meth:`with_params`.
    """

    def __init__(self, setting: ProblemSetting, params: BrcParams, lattice: BeliefLattice):
        if lattice.num_states != setting.num_states:
            raise ValueError("lattice dimension does not match the setting")
        self.setting = setting
        self.params = params
        self.lattice = lattice
        self.nonterminal = [u for u in range(setting.num_actions) if not setting.is_terminal(u)]
        self._build_structure()

    def _build_structure(self) -> None:
        lattice, setting = self.lattice, self.setting
        ensemble = self.params.model_ensemble
        n, a_nt, m = lattice.num_nodes, len(self.nonterminal), len(ensemble)
        ref = 1.0 / setting.num_observations

        surprise = np.zeros((n, a_nt, m))
        rows, cols, data = [], [], []
        for node in range(n):
            belief = lattice.node_belief(node)
            for ai, action in enumerate(self.nonterminal):
                for mi, model in enumerate(ensemble.models):
                    row = (node * a_nt + ai) * m + mi
                    acc = 0.0
                    for atom, mass in next_belief_atoms(belief, action, model):
                        acc += mass * np.log(mass / ref)
                        idx, w = lattice.support_weights(atom.probabilities)
                        rows.extend([row] * idx.shape[1])
                        cols.extend(idx[0])
                        data.extend(mass * w[0])
                    surprise[node, ai, mi] = acc
        self._surprise = surprise
        self._continuation = sp.csr_matrix(
            (data, (rows, cols)), shape=(n * a_nt * m, n)
        )
        self._node_points = lattice.points

    def with_params(self, params: BrcParams) -> "BackupOperator":
        """Cheap copy sharing the transition structure but using new parameters."""
        if params.model_ensemble is not self.params.model_ensemble:
            raise ValueError(
                "the ensemble changed; the transition structure must be rebuilt"
            )
        clone = object.__new__(BackupOperator)
        clone.setting = self.setting
        clone.params = params
        clone.lattice = self.lattice
        clone.nonterminal = self.nonterminal
        clone._surprise = self._surprise
        clone._continuation = self._continuation
        clone._node_points = self._node_points
        return clone

    def expected_utility(self) -> np.ndarray:
        """Immediate expected utility per (node, action)."""
        return self._node_points @ self.params.utility

    def continuation_values(self, v: np.ndarray) -> np.ndarray:
        """Interpolated next values aggregated over atoms: (nodes, nt-actions, models)."""
        n, a_nt = self.lattice.num_nodes, len(self.nonterminal)
        m = len(self.params.model_ensemble)
        return (self._continuation @ np.asarray(v, dtype=float)).reshape(n, a_nt, m)

    def apply(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """One backup sweep: returns (v_next, q, k)."""
        params = self.params
        n = self.lattice.num_nodes
        num_actions = self.setting.num_actions
        num_models = len(params.model_ensemble)

        k = np.zeros((n, num_actions, num_models))
        q = self.expected_utility()
        if self.nonterminal:
            k_nt = -params.eta * self._surprise + params.discount * self.continuation_values(v)
            k[:, self.nonterminal, :] = k_nt
            q[:, self.nonterminal] += _soft_mix(
                params.beta, params.model_ensemble.prior.weights, k_nt, axis=-1
            )
        v_next = _soft_mix(params.alpha, params.action_prior.weights, q, axis=-1)
        return v_next, q, k

    def surprise_penalty(self) -> np.ndarray:
        """The -eta-weighted surprise contribution to K, per (node, nt-action, model)."""
        return -self.params.eta * self._surprise


def backup_optimal(
    lattice: BeliefLattice, v: np.ndarray, params: BrcParams, setting: ProblemSetting
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single application of the optimal backup (builds the structure afresh)."""
    return BackupOperator(setting, params, lattice).apply(v)


def solve(
    setting: ProblemSetting,
    params: BrcParams,
    resolution: int = 100,
    tolerance: float = 1e-6,
    max_iterations: int = 2000,
    warm_start: np.ndarray | None = None,
    *,
    operator: BackupOperator | None = None,
) -> SolvedAgent:
    """Iterate the optimal backup to its fixed point.

    Stops when the sup-norm change between sweeps drops below ``tolerance``;
    raises :class:`ConvergenceError` (carrying the final residual) otherwise.
    ``warm_start`` seeds the value table (zeros by default).  ``operator``
    reuses a prebuilt :class:`BackupOperator` (its lattice wins over
    ``resolution``).
    """
    if operator is None:
        lattice = BeliefLattice.build(setting.num_states, resolution)
        operator = BackupOperator(setting, params, lattice)
    else:
        operator = operator.with_params(params)
    lattice = operator.lattice

    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    if warm_start is None:
        v = np.zeros(lattice.num_nodes)
    else:
        v = np.array(warm_start, dtype=float)
        if v.shape != (lattice.num_nodes,):
            raise ValueError("warm_start length does not match the lattice")

    for iteration in range(1, max_iterations + 1):
        v_next, q, k = operator.apply(v)
        residual = float(np.abs(v_next - v).max())
        v = v_next
        if residual < tolerance:
            return SolvedAgent(
                setting=setting,
                params=params,
                lattice=lattice,
                v_star=v,
                q_star=q,
                k_star=k,
                convergence=ConvergenceInfo(iterations=iteration, residual=residual),
            )
    raise ConvergenceError(
        f"no fixed point within {max_iterations} iterations (residual {residual:.3e})",
        iterations=max_iterations,
        residual=residual,
    )


def decision_policy(agent: SolvedAgent, belief: Belief) -> DiscreteDistribution:
    """Action distribution at an arbitrary belief: prior softly bent by Q*."""
    q_row = agent.lattice.interpolate(agent.q_star, belief.probabilities)
    return DiscreteDistribution(
        _softmax_policy(agent.params.alpha, agent.params.action_prior.weights, q_row)
    )


def specification_policy(agent: SolvedAgent, belief: Belief, action: int) -> DiscreteDistribution:
    """Model distribution at (belief, action): ensemble prior bent by K*."""
    prior = agent.params.model_ensemble.prior.weights
    if abs(agent.params.beta) >= LINEAR_TEMPERATURE:
        return DiscreteDistribution(prior.copy())
    k_row = agent.lattice.interpolate(agent.k_star[:, action, :], belief.probabilities)
    return DiscreteDistribution(_softmax_policy(agent.params.beta, prior, k_row))


def recognition_step(agent: SolvedAgent, belief: Belief, action: int, observation: int) -> Belief:
    """Next belief after a non-terminal action: model-weighted Bayes posterior mean."""
    if agent.setting.is_terminal(action):
        raise ValueError(f"action {action} is terminal; no recognition step follows it")
    weights = specification_policy(agent, belief, action)
    return biased_recognition_update(
        belief, action, observation, weights, agent.params.model_ensemble
    )


def _check_policies(
    lattice: BeliefLattice,
    setting: ProblemSetting,
    params: BrcParams,
    decision: np.ndarray,
    specification: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    n, u, m = lattice.num_nodes, setting.num_actions, len(params.model_ensemble)
    decision = np.asarray(decision, dtype=float)
    specification = np.asarray(specification, dtype=float)
    if decision.shape != (n, u):
        raise ValueError(f"decision policy must have shape {(n, u)}")
    if specification.shape != (n, u, m):
        raise ValueError(f"specification policy must have shape {(n, u, m)}")
    for name, table in (("decision", decision), ("specification", specification)):
        if table.min() < 0 or np.abs(table.sum(axis=-1) - 1.0).max() > 1e-9:
            raise ValueError(f"{name} policy rows must be distributions")
    return decision, specification


def _kl_terms(policy: np.ndarray, prior: np.ndarray) -> np.ndarray:
    """policy * log(policy / prior), elementwise with the 0 log 0 = 0 convention."""
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.log(policy) - np.log(prior)
    return np.where(policy > 0, policy * logs, 0.0)


def evaluate_policy(
    setting: ProblemSetting,
    params: BrcParams,
    decision: np.ndarray,
    specification: np.ndarray,
    tolerance: float = 1e-6,
    max_iterations: int = 2000,
    *,
    lattice: BeliefLattice | None = None,
    operator: BackupOperator | None = None,
    warm_start: np.ndarray | None = None,
) -> np.ndarray:
    """Value of a fixed (decision, specification) policy pair, with penalties.

    The backup charges alpha-weighted divergence of the decision policy from
    the action prior, beta-weighted divergence of the specification policy
    from the ensemble prior, and the eta-weighted surprise penalty, alongside
    expected utility and the discounted continuation.  Terminal actions
    contribute immediate utility (plus their share of the alpha term) only.
    """
    if operator is None:
        if lattice is None:
            raise ValueError("pass either a lattice or a prebuilt operator")
        operator = BackupOperator(setting, params, lattice)
    else:
        operator = operator.with_params(params)
    lattice = operator.lattice
    decision, specification = _check_policies(lattice, setting, params, decision, specification)

    nonterminal = operator.nonterminal
    pi_nt = decision[:, nonterminal]  # (n, a_nt)
    sigma_nt = specification[:, nonterminal, :]  # (n, a_nt, m)

    # Everything that does not involve the value table:
    static = (decision * operator.expected_utility()).sum(axis=1)
    static -= params.alpha * _kl_terms(decision, params.action_prior.weights).sum(axis=1)
    model_prior = params.model_ensemble.prior.weights
    model_kl = _kl_terms(sigma_nt, model_prior[None, None, :]).sum(axis=-1)  # (n, a_nt)
    static -= params.beta * (pi_nt * model_kl).sum(axis=1)
    static += (pi_nt * (sigma_nt * operator.surprise_penalty()).sum(axis=-1)).sum(axis=1)

    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    mix = pi_nt[:, :, None] * sigma_nt  # weights on continuation terms
    v = np.zeros(lattice.num_nodes) if warm_start is None else np.array(warm_start, dtype=float)
    for iteration in range(1, max_iterations + 1):
        cont = operator.continuation_values(v)
        v_next = static + params.discount * (mix * cont).sum(axis=(1, 2))
        residual = float(np.abs(v_next - v).max())
        v = v_next
        if residual < tolerance:
            return v
    raise ConvergenceError(
        f"policy evaluation did not converge (residual {residual:.3e})",
        iterations=max_iterations,
        residual=residual,
    )


def occupancy_measure(
    setting: ProblemSetting,
    params: BrcParams,
    decision: np.ndarray,
    specification: np.ndarray,
    tolerance: float = 1e-10,
    max_iterations: int = 100_000,
    *,
    lattice: BeliefLattice | None = None,
    operator: BackupOperator | None = None,
) -> DiscreteDistribution:
    """Normalized discounted node-visitation frequencies under a policy pair.

    Fixed point of mu = (1 - discount) * start + discount * step(mu), where
    ``step`` pushes node mass through the policy-weighted belief kernel (atom
    masses snapped back onto the lattice barycentrically) and terminal actions
    send their mass back to the initial belief's projection (episodes restart).
    """
    if operator is None:
        if lattice is None:
            raise ValueError("pass either a lattice or a prebuilt operator")
        operator = BackupOperator(setting, params, lattice)
    else:
        operator = operator.with_params(params)
    lattice = operator.lattice
    decision, specification = _check_policies(lattice, setting, params, decision, specification)

    nonterminal = operator.nonterminal
    n = lattice.num_nodes
    m = len(params.model_ensemble)
    start = lattice.project(params.initial_belief)
    terminal_mass = decision.sum(axis=1) - decision[:, nonterminal].sum(axis=1)
    mix_flat = (decision[:, nonterminal, None] * specification[:, nonterminal, :]).reshape(-1)
    kernel = operator._continuation.T.tocsr()  # (n, n * a_nt * m)

    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    repeat = len(nonterminal) * m
    mu = start.copy()
    for iteration in range(1, max_iterations + 1):
        pushed = kernel @ (mix_flat * np.repeat(mu, repeat))
        pushed += start * float(terminal_mass @ mu)
        mu_next = (1.0 - params.discount) * start + params.discount * pushed
        residual = float(np.abs(mu_next - mu).max())
        mu = mu_next
        if residual < tolerance:
            return DiscreteDistribution(mu / mu.sum())
    raise ConvergenceError(
        f"occupancy iteration did not converge (residual {residual:.3e})",
        iterations=max_iterations,
        residual=residual,
    )


def policy_tables(agent: SolvedAgent) -> tuple[np.ndarray, np.ndarray]:
    """Decision and specification policies evaluated at every lattice node."""
    params = agent.params
    n, u = agent.q_star.shape
    decision = np.empty((n, u))
    specification = np.empty(agent.k_star.shape)
    model_prior = params.model_ensemble.prior.weights
    for node in range(n):
        decision[node] = _softmax_policy(params.alpha, params.action_prior.weights, agent.q_star[node])
        for action in range(u):
            if abs(params.beta) >= LINEAR_TEMPERATURE:
                specification[node, action] = model_prior
            else:
                specification[node, action] = _softmax_policy(
                    params.beta, model_prior, agent.k_star[node, action]
                )
    return decision, specification
