"""Recovering descriptive parameters from demonstrated trajectories.

The likelihood of a trajectory is the causally-conditioned probability of its
action sequence: beliefs are replayed through the agent's own recognition
step and each action is scored by the decision policy at the replayed belief.
Posteriors over chosen parameters (log decision temperature, log model-choice
temperature, log surprise weight, or the raw wrong-diagnosis payoff) come from
random-walk Metropolis in the transformed space with a uniform prior inside a
bounding box.  A classical inverse-reinforcement-learning baseline reuses the
same chain with the temperatures clamped to near-rational values and only the
wrong-diagnosis payoff free.

Hidden states recorded in trajectories are never read here; inference sees
exactly what the demonstrator's environment emitted.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    BrcParams,
    ModelEnsemble,
    ProblemSetting,
    Trajectory,
)
from .recognition import BeliefLattice, ImpossibleEvidenceError
from .solver import (
    BackupOperator,
    ConvergenceError,
    SolvedAgent,
    _softmax_policy,
    decision_policy,
    recognition_step,
    solve,
)

TARGET_NAMES = ("log_alpha", "log_beta", "log_eta", "incorrect_reward")

DEFAULT_BOUNDS: dict[str, tuple[float, float]] = {
    "log_alpha": (-12.0, 7.0),
    "log_beta": (-12.0, 7.0),
    "log_eta": (-12.0, 7.0),
    "incorrect_reward": (-100.0, -0.01),
}

# The raw-reward coordinate lives on a ~10x larger scale than the log targets.
DEFAULT_PROPOSAL_STD: dict[str, float] = {"incorrect_reward": 1.0}


@dataclass(frozen=True)
class InferenceConfig:
    """Chain settings: what to infer, how to propose, and how long to run."""

    targets: tuple[str, ...] = ("log_alpha",)
    proposal_std: float = 0.1
    proposal_std_overrides: dict[str, float] = field(default_factory=dict)
    steps_after_burnin: int = 10_000
    burnin: int = 1_000
    thinning: int = 10
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    beta_sign: float = 1.0
    seed: int = 0
    resolution: int = 100
    solver_tolerance: float = 1e-6
    solver_max_iterations: int = 2000
    incorrect_cells: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        unknown = set(self.targets) - set(TARGET_NAMES)
        if unknown:
            raise ValueError(f"unknown targets {sorted(unknown)}; known: {TARGET_NAMES}")
        if len(set(self.targets)) != len(self.targets):
            raise ValueError("duplicate targets")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.burnin < 0:
            raise ValueError("burnin must be >= 0")
        if self.steps_after_burnin < 1:
            raise ValueError("steps_after_burnin must be >= 1")
        if self.beta_sign not in (-1.0, 1.0):
            raise ValueError("beta_sign must be +1 or -1")
        for name, (lo, hi) in self.bounds.items():
            if lo >= hi:
                raise ValueError(f"bounds for {name} must have lower < upper")

    def bounds_for(self, target: str) -> tuple[float, float]:
        return self.bounds.get(target, DEFAULT_BOUNDS[target])

    def proposal_std_for(self, target: str) -> float:
        if target in self.proposal_std_overrides:
            return self.proposal_std_overrides[target]
        return DEFAULT_PROPOSAL_STD.get(target, self.proposal_std)


@dataclass(frozen=True)
class PosteriorSample:
    parameters: tuple[float, ...]
    log_likelihood: float
    accepted: bool
    step: int


def apply_targets(
    base_params: BrcParams,
    targets: tuple[str, ...],
    values: np.ndarray,
    config: InferenceConfig,
) -> BrcParams:
    """Materialize a parameter vector from the transformed chain space."""
    changes: dict = {}
    for name, value in zip(targets, values):
        if name == "log_alpha":
            changes["alpha"] = math.exp(value)
        elif name == "log_beta":
            changes["beta"] = config.beta_sign * math.exp(value)
        elif name == "log_eta":
            changes["eta"] = math.exp(value)
        elif name == "incorrect_reward":
            if not config.incorrect_cells:
                raise ValueError(
                    "incorrect_reward target needs config.incorrect_cells to say "
                    "which utility cells hold the wrong-diagnosis payoff"
                )
            utility = np.array(base_params.utility)
            for s, u in config.incorrect_cells:
                utility[s, u] = value
            changes["utility"] = utility
    return base_params.replace(**changes)


def trajectory_log_likelihood(
    trajectory: Trajectory,
    setting: ProblemSetting,
    params: BrcParams,
    agent: SolvedAgent,
) -> float:
    """Log-probability of the action sequence given the observation sequence.

    Beliefs are replayed with the agent's recognition step (hidden states are
    never consulted).  A demonstrated action with zero probability yields
    ``-inf``; an observation no weighted model can produce raises
    :class:`~brc.recognition.ImpossibleEvidenceError`.
    """
    belief = params.initial_belief
    total = 0.0
    last = len(trajectory.actions) - 1
    for t, action in enumerate(trajectory.actions):
        p = decision_policy(agent, belief).weights[action]
        if p <= 0.0:
            return -math.inf
        total += math.log(p)
        if t < last:
            belief = recognition_step(agent, belief, action, trajectory.observations[t + 1])
    return total


class _CompiledDataset:
    """Shared-prefix representation of a dataset for fast repeated likelihoods.

    Belief replay depends only on the (action, observation) prefix, so equal
    prefixes across trajectories are computed once.  Nodes are ordered
    canonically (by depth, then path), making likelihood values independent of
    trajectory order and exactly additive under dataset duplication.
    """

    def __init__(self, dataset: list[Trajectory]):
        paths: set[tuple] = {()}
        counts: dict[tuple[tuple, int], int] = {}
        for trajectory in dataset:
            path: tuple = ()
            last = len(trajectory.actions) - 1
            for t, action in enumerate(trajectory.actions):
                key = (path, action)
                counts[key] = counts.get(key, 0) + 1
                if t < last:
                    path = path + ((action, trajectory.observations[t + 1]),)
                    paths.add(path)

        ordered = sorted(paths, key=lambda p: (len(p), p))
        index = {p: i for i, p in enumerate(ordered)}
        self.num_nodes = len(ordered)
        # Per-depth groups of (rows, parent rows, action, observation):
        by_depth_group: dict[tuple[int, int, int], list[tuple[int, int]]] = {}
        for path, i in index.items():
            if not path:
                continue
            action, observation = path[-1]
            parent = index[path[:-1]]
            by_depth_group.setdefault((len(path), action, observation), []).append((i, parent))
        self.levels: list[tuple[int, np.ndarray, np.ndarray, int, int]] = []
        for (depth, action, observation), pairs in sorted(by_depth_group.items()):
            pairs.sort()
            rows = np.array([i for i, _ in pairs], dtype=int)
            parents = np.array([p for _, p in pairs], dtype=int)
            self.levels.append((depth, rows, parents, action, observation))

        items = sorted(counts.items(), key=lambda kv: (index[kv[0][0]], kv[0][1]))
        self.count_nodes = np.array([index[path] for (path, _), _ in items], dtype=int)
        self.count_actions = np.array([action for (_, action), _ in items], dtype=int)
        self.counts = np.array([c for _, c in items], dtype=float)


def _replay_beliefs(compiled: _CompiledDataset, agent: SolvedAgent) -> np.ndarray:
    """Beliefs at every prefix node, replayed level by level."""
    params = agent.params
    ensemble = params.model_ensemble
    lattice = agent.lattice
    beliefs = np.empty((compiled.num_nodes, len(params.initial_belief)))
    beliefs[0] = params.initial_belief.probabilities
    for _, rows, parents, action, observation in compiled.levels:
        z = beliefs[parents]  # (B, S)
        k_rows = lattice.interpolate(agent.k_star[:, action, :], z)  # (B, M)
        weights = _softmax_policy(params.beta, ensemble.prior.weights, k_rows)
        mean = np.zeros_like(z)
        surviving = np.zeros(z.shape[0])
        for mi, model in enumerate(ensemble.models):
            w = weights[:, mi]
            joint = (z @ model.transition[:, action, :]) * model.emission[action, :, observation]
            totals = joint.sum(axis=1)
            ok = (totals > 0.0) & (w > 0.0)
            if not ok.any():
                continue
            mean[ok] += (w[ok] / totals[ok])[:, None] * joint[ok]
            surviving[ok] += w[ok]
        if np.any(surviving <= 0.0):
            raise ImpossibleEvidenceError(
                f"observation {observation} after action {action} is impossible "
                "under every weighted model"
            )
        beliefs[rows] = mean / surviving[:, None]
    return beliefs


def _compiled_log_likelihood(compiled: _CompiledDataset, agent: SolvedAgent) -> float:
    if compiled.counts.size == 0:
        return 0.0
    beliefs = _replay_beliefs(compiled, agent)
    q = agent.lattice.interpolate(agent.q_star, beliefs)  # (nodes, actions)
    policy = _softmax_policy(agent.params.alpha, agent.params.action_prior.weights, q)
    chosen = policy[compiled.count_nodes, compiled.count_actions]
    if np.any(chosen <= 0.0):
        return -math.inf
    return float(compiled.counts @ np.log(chosen))


def dataset_log_likelihood(
    dataset: list[Trajectory],
    setting: ProblemSetting,
    params: BrcParams,
    *,
    resolution: int = 100,
    tolerance: float = 1e-6,
    max_iterations: int = 2000,
    warm_start: np.ndarray | None = None,
    operator: BackupOperator | None = None,
) -> float:
    """Solve once for ``params`` and sum the per-trajectory log-likelihoods.

    Identical trajectories share their belief replay, so the value is exactly
    additive under duplication and independent of dataset order.
    """
    agent = solve(
        setting,
        params,
        resolution=resolution,
        tolerance=tolerance,
        max_iterations=max_iterations,
        warm_start=warm_start,
        operator=operator,
    )
    return _compiled_log_likelihood(_CompiledDataset(dataset), agent)


class ProposalRejected(Exception):
    """Signal from a log-density callable that a proposal cannot be scored."""


def random_walk_metropolis(
    log_density,
    initial: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    *,
    steps_after_burnin: int,
    burnin: int,
    thinning: int,
    proposal_std: np.ndarray,
    rng: np.random.Generator,
    on_accept=None,
) -> tuple[list[tuple[int, np.ndarray, float, bool]], int]:
    """Symmetric Gaussian random-walk Metropolis inside a box.

    Proposals outside the box are rejected outright (uniform prior support).
    A ``-inf`` density proposal is rejected unless the current state is also
    at ``-inf`` (accepted, to escape degenerate starts).  ``log_density`` may
    raise :class:`ProposalRejected`; such proposals reject and are tallied in
    the second return value.  ``on_accept`` fires whenever the chain moves
    (including onto the initial state), letting callers commit per-state
    caches.  Returns tuples (step, state, log-density, moved-at-this-step).
    """
    x = np.array(initial, dtype=float)
    current = float(log_density(x))
    if on_accept is not None:
        on_accept()
    samples: list[tuple[int, np.ndarray, float, bool]] = []
    error_rejections = 0
    total = burnin + steps_after_burnin
    for step in range(1, total + 1):
        proposal = x + rng.normal(0.0, 1.0, size=x.size) * proposal_std
        accepted = False
        if np.all(proposal >= lower) and np.all(proposal <= upper):
            try:
                candidate = float(log_density(proposal))
            except ProposalRejected:
                error_rejections += 1
                candidate = None
            if candidate is not None:
                if candidate == -math.inf:
                    accepted = current == -math.inf
                elif candidate >= current:
                    accepted = True
                else:
                    accepted = math.log(rng.uniform()) < candidate - current
            if accepted:
                x = proposal
                current = candidate
                if on_accept is not None:
                    on_accept()
        if step > burnin and (step - burnin) % thinning == 0:
            samples.append((step, x.copy(), current, accepted))
    return samples, error_rejections


def mh_infer(
    dataset: list[Trajectory],
    setting: ProblemSetting,
    base_params: BrcParams,
    config: InferenceConfig,
) -> list[PosteriorSample]:
    """Posterior samples over the configured targets via random-walk Metropolis.

    ``base_params`` supplies every clamped (normative) value; each chain state
    overrides the targets, re-solves the planning fixed point (warm-started
    from the current state's converged values, falling back to a cold start),
    and scores the dataset.  The chain starts at the midpoint of each target's
    box and is deterministic given ``config.seed``.
    """
    if not config.targets:
        raise ValueError("config.targets must be non-empty")
    lower = np.array([config.bounds_for(t)[0] for t in config.targets])
    upper = np.array([config.bounds_for(t)[1] for t in config.targets])
    stds = np.array([config.proposal_std_for(t) for t in config.targets])
    compiled = _CompiledDataset(dataset)
    lattice = BeliefLattice.build(setting.num_states, config.resolution)
    operator = BackupOperator(setting, base_params, lattice)

    # Solve the starting state up front: a non-convergent *initial* point is a
    # configuration problem and should surface as ConvergenceError, not as a
    # rejected proposal.
    initial = (lower + upper) / 2.0
    first = solve(
        setting,
        apply_targets(base_params, config.targets, initial, config),
        tolerance=config.solver_tolerance,
        max_iterations=config.solver_max_iterations,
        operator=operator,
    )
    state: dict = {"warm": first.v_star, "candidate": None}

    def log_density(x: np.ndarray) -> float:
        params = apply_targets(base_params, config.targets, x, config)
        try:
            agent = solve(
                setting,
                params,
                tolerance=config.solver_tolerance,
                max_iterations=config.solver_max_iterations,
                warm_start=state["warm"],
                operator=operator,
            )
        except ConvergenceError:
            try:
                agent = solve(
                    setting,
                    params,
                    tolerance=config.solver_tolerance,
                    max_iterations=config.solver_max_iterations,
                    operator=operator,
                )
            except ConvergenceError as err:
                raise ProposalRejected(str(err)) from err
        state["candidate"] = agent.v_star
        try:
            return _compiled_log_likelihood(compiled, agent)
        except ImpossibleEvidenceError:
            return -math.inf

    def commit() -> None:
        state["warm"] = state["candidate"]

    rng = np.random.default_rng(config.seed)
    raw, error_rejections = random_walk_metropolis(
        log_density,
        initial=initial,
        lower=lower,
        upper=upper,
        steps_after_burnin=config.steps_after_burnin,
        burnin=config.burnin,
        thinning=config.thinning,
        proposal_std=stds,
        rng=rng,
        on_accept=commit,
    )
    if error_rejections:
        warnings.warn(
            f"{error_rejections} proposals rejected because the solver did not converge",
            RuntimeWarning,
        )
    return [
        PosteriorSample(
            parameters=tuple(float(v) for v in x),
            log_likelihood=ll,
            accepted=accepted,
            step=step,
        )
        for step, x, ll, accepted in raw
    ]


def posterior_summary(samples: list[PosteriorSample], targets: tuple[str, ...]) -> dict:
    """Deterministic per-parameter statistics, plus a 2-D histogram when both
    log_beta and log_eta were inferred (bin edges recorded alongside counts)."""
    if len(samples) < 2:
        raise ValueError("need at least 2 samples to summarize")
    matrix = np.array([s.parameters for s in samples])
    if matrix.shape[1] != len(targets):
        raise ValueError("targets do not match the sampled parameter vectors")
    summary: dict = {"num_samples": len(samples), "parameters": {}}
    for j, name in enumerate(targets):
        column = matrix[:, j]
        lo, hi = np.percentile(column, [5.0, 95.0])
        summary["parameters"][name] = {
            "mean": float(column.mean()),
            "std": float(column.std(ddof=1)),
            "interval_90": [float(lo), float(hi)],
        }
    if "log_beta" in targets and "log_eta" in targets:
        xs = matrix[:, targets.index("log_beta")]
        ys = matrix[:, targets.index("log_eta")]
        counts, x_edges, y_edges = np.histogram2d(xs, ys, bins=40)
        summary["histogram_log_beta_log_eta"] = {
            "x_edges": x_edges.tolist(),
            "y_edges": y_edges.tolist(),
            "counts": counts.tolist(),
        }
    return summary


def credible_region_bins(
    xs: np.ndarray,
    ys: np.ndarray,
    x_bounds: tuple[float, float],
    y_bounds: tuple[float, float],
    bins: int = 60,
    mass: float = 0.9,
) -> set[tuple[int, int]]:
    """Highest-density bins covering ``mass`` of the samples on a shared grid.

    Using a fixed grid over the parameter box makes regions from different
    chains directly comparable (e.g. for disjointness checks)."""
    counts, _, _ = np.histogram2d(xs, ys, bins=bins, range=[x_bounds, y_bounds])
    order = np.argsort(counts, axis=None)[::-1]
    flat = counts.ravel()[order]
    cumulative = np.cumsum(flat)
    needed = order[: int(np.searchsorted(cumulative, mass * len(xs))) + 1]
    return {(int(i // bins), int(i % bins)) for i in needed}


def irl_baseline(
    dataset: list[Trajectory],
    setting: ProblemSetting,
    base_params: BrcParams,
    config: InferenceConfig,
    *,
    clamp_alpha: float = 0.1,
    clamp_eta: float = 1e-6,
) -> list[PosteriorSample]:
    """Classical-IRL-style posterior over the wrong-diagnosis payoff.

    Clamps the agent to a near-rational profile — sharp but finite decision
    temperature (a literal zero would give every stochastic dataset zero
    likelihood everywhere), the single most-probable model, and a vanishing
    surprise weight — then runs the standard chain with ``incorrect_reward``
    as the only free parameter.  The payoff-to-reward ratio is left to the
    caller (divide samples by the clamped correct-diagnosis payoff).
    """
    ensemble = base_params.model_ensemble
    modal = int(np.argmax(ensemble.prior.weights))
    clamped = base_params.replace(
        alpha=clamp_alpha,
        beta=1e3,
        eta=clamp_eta,
        model_ensemble=ModelEnsemble.dirac(ensemble.models[modal]),
        descriptive_mask=frozenset({"utility"}),
    )
    return mh_infer(dataset, setting, clamped, replace(config, targets=("incorrect_reward",)))
