"""Command-line harness: solve, simulate, infer, trace.

One entry point, JSON configs in, CSV/JSON/JSON-lines out.  Every command
finishes by writing a manifest (command, resolved config, seeds, version,
duration, output hashes); on failure it prints a machine-readable error JSON
to stderr and exits 2 (bad config), 3 (no convergence), or 4 (I/O).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    Belief,
    BrcParams,
    DynamicsModel,
    ProblemSetting,
    validate,
    validate_trajectory,
)
from .diag import (
    DiagConfig,
    belief_trace,
    build_diag,
    generate_dataset,
    incorrect_diagnosis_cells,
    load_dataset,
    save_dataset,
)
from .inverse import (
    InferenceConfig,
    irl_baseline,
    mh_infer,
    posterior_summary,
)
from .recognition import BeliefLattice, ImpossibleEvidenceError
from .solver import (
    ConvergenceError,
    ConvergenceInfo,
    SolvedAgent,
    decision_policy,
    solve,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_IO = 4


class ConfigError(ValueError):
    """Anything wrong with a config file or flag combination."""


def _fmt(value: float) -> str:
    """Shortest round-trip decimal form, for deterministic CSV output."""
    return repr(float(value))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def _write_manifest(
    out_dir_or_file: Path, command: str, config_snapshot, seeds, outputs, started: float, extra=None
) -> Path:
    manifest = {
        "command": command,
        "config": config_snapshot,
        "seeds": seeds,
        "version": __version__,
        "duration_seconds": time.perf_counter() - started,
        "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in outputs],
        **(extra or {}),
    }
    if out_dir_or_file.is_dir():
        path = out_dir_or_file / "manifest.json"
    else:
        path = Path(str(out_dir_or_file) + ".manifest.json")
    _write_json(path, manifest)
    return path


def load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise FileNotFoundError(f"cannot read config {path}: {err}") from err
    try:
        config = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    return config


def build_problem(config: dict) -> tuple[ProblemSetting, DynamicsModel, BrcParams, DiagConfig | None]:
    """Setting, true dynamics, and agent parameters from a config dict."""
    env = config.get("environment", {"type": "diag"})
    kind = env.get("type", "diag")
    if kind == "diag":
        fields = {k: v for k, v in env.items() if k != "type"}
        try:
            diag_config = DiagConfig(**fields)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"bad diag environment config: {err}") from err
        setting, truth, params = build_diag(diag_config)
    elif kind == "explicit":
        try:
            setting = ProblemSetting.from_dict(env["setting"])
            truth = DynamicsModel.from_dict(env["truth"])
            params = BrcParams.from_dict(env["params"])
        except (KeyError, ValueError) as err:
            raise ConfigError(f"bad explicit environment config: {err}") from err
        diag_config = None
    else:
        raise ConfigError(f"unknown environment type {kind!r}")

    agent_overrides = config.get("agent", {})
    known = {"alpha", "beta", "eta", "discount"}
    unknown = set(agent_overrides) - known
    if unknown:
        raise ConfigError(f"unknown agent overrides {sorted(unknown)}; allowed: {sorted(known)}")
    if agent_overrides:
        params = params.replace(**{k: float(v) for k, v in agent_overrides.items()})

    findings = validate(setting, params)
    if findings:
        raise ConfigError("invalid problem: " + "; ".join(findings))
    return setting, truth, params, diag_config


def _solver_options(config: dict, args) -> dict:
    section = dict(config.get("solver", {}))
    if getattr(args, "resolution", None) is not None:
        section["resolution"] = args.resolution
    if getattr(args, "tolerance", None) is not None:
        section["tolerance"] = args.tolerance
    return {
        "resolution": int(section.get("resolution", 100)),
        "tolerance": float(section.get("tolerance", 1e-6)),
        "max_iterations": int(section.get("max_iterations", 2000)),
    }


def agent_to_dict(agent: SolvedAgent) -> dict:
    return {
        "setting": agent.setting.to_dict(),
        "params": agent.params.to_dict(),
        "resolution": agent.lattice.resolution,
        "v_star": agent.v_star.tolist(),
        "q_star": agent.q_star.tolist(),
        "k_star": agent.k_star.tolist(),
        "convergence": {
            "iterations": agent.convergence.iterations,
            "residual": agent.convergence.residual,
        },
    }


def agent_from_dict(data: dict) -> SolvedAgent:
    setting = ProblemSetting.from_dict(data["setting"])
    lattice = BeliefLattice.build(setting.num_states, int(data["resolution"]))
    return SolvedAgent(
        setting=setting,
        params=BrcParams.from_dict(data["params"]),
        lattice=lattice,
        v_star=np.asarray(data["v_star"], dtype=float),
        q_star=np.asarray(data["q_star"], dtype=float),
        k_star=np.asarray(data["k_star"], dtype=float),
        convergence=ConvergenceInfo(
            iterations=int(data["convergence"]["iterations"]),
            residual=float(data["convergence"]["residual"]),
        ),
    )


def load_agent(agent_dir: str) -> SolvedAgent:
    path = Path(agent_dir) / "agent.json"
    if not path.is_file():
        raise FileNotFoundError(f"no solved agent at {path}; run the solve command first")
    return agent_from_dict(json.loads(path.read_text()))


def _action_names(setting: ProblemSetting) -> list[str]:
    if setting.action_labels:
        return list(setting.action_labels)
    return [f"action_{u}" for u in range(setting.num_actions)]


def _belief_columns(setting: ProblemSetting) -> list[str]:
    if setting.state_labels:
        return [f"belief_{name}" for name in setting.state_labels]
    return [f"belief_{i}" for i in range(setting.num_states)]


def cmd_solve(args) -> int:
    started = time.perf_counter()
    config = load_config(args.config)
    setting, _, params, _ = build_problem(config)
    options = _solver_options(config, args)

    agent = solve(setting, params, **options)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    belief_cols = _belief_columns(setting)
    actions = _action_names(setting)
    points = agent.lattice.points

    outputs = []

    def node_rows(values_for_node):
        for node in range(agent.lattice.num_nodes):
            yield [node, *(_fmt(p) for p in points[node]), *values_for_node(node)]

    path = out / "values.csv"
    _write_csv(path, ["node", *belief_cols, "v"], node_rows(lambda n: [_fmt(agent.v_star[n])]))
    outputs.append(path)

    path = out / "q_values.csv"
    _write_csv(
        path,
        ["node", *belief_cols, *(f"q_{a}" for a in actions)],
        node_rows(lambda n: [_fmt(x) for x in agent.q_star[n]]),
    )
    outputs.append(path)

    path = out / "k_values.csv"
    _write_csv(
        path,
        ["node", "action", "model", "k"],
        (
            [node, action, model, _fmt(agent.k_star[node, action, model])]
            for node in range(agent.lattice.num_nodes)
            for action in range(setting.num_actions)
            for model in range(len(params.model_ensemble))
        ),
    )
    outputs.append(path)

    path = out / "policy.csv"
    _write_csv(
        path,
        ["node", *belief_cols, *(f"pi_{a}" for a in actions)],
        node_rows(
            lambda n: [
                _fmt(x)
                for x in decision_policy(agent, agent.lattice.node_belief(n)).weights
            ]
        ),
    )
    outputs.append(path)

    path = out / "convergence.json"
    _write_json(
        path,
        {
            "iterations": agent.convergence.iterations,
            "residual": agent.convergence.residual,
            "tolerance": options["tolerance"],
            "resolution": options["resolution"],
        },
    )
    outputs.append(path)

    path = out / "agent.json"
    path.write_text(json.dumps(agent_to_dict(agent), sort_keys=True) + "\n")
    outputs.append(path)

    _write_manifest(out, "solve", {**config, "solver": options}, {"master_seed": None}, outputs, started)
    return EXIT_OK


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    config = load_config(args.config)
    setting, truth, _, diag_config = build_problem(config)
    agent = load_agent(args.agent)
    if agent.setting.to_dict() != setting.to_dict():
        raise ConfigError("solved agent and config describe different settings")
    max_length = diag_config.max_trajectory_length if diag_config else 50

    dataset = generate_dataset(
        agent, truth, n=args.n, master_seed=args.seed, max_length=max_length, workers=args.threads
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(
        out,
        dataset,
        manifest_extra={
            "command": "simulate",
            "config": config,
            "seeds": {"master_seed": args.seed},
            "version": __version__,
            "duration_seconds": time.perf_counter() - started,
        },
    )
    return EXIT_OK


def _inference_config(config: dict, args, diag_config: DiagConfig | None) -> InferenceConfig:
    section = dict(config.get("inference", {}))
    if getattr(args, "targets", None):
        section["targets"] = [t.strip() for t in args.targets.split(",") if t.strip()]
    if getattr(args, "seed", None) is not None:
        section["seed"] = args.seed
    if getattr(args, "resolution", None) is not None:
        section["resolution"] = args.resolution
    if getattr(args, "tolerance", None) is not None:
        section["solver_tolerance"] = args.tolerance
    if "bounds" in section:
        section["bounds"] = {k: tuple(v) for k, v in section["bounds"].items()}
    if "targets" in section:
        section["targets"] = tuple(section["targets"])
    if "incorrect_cells" in section and section["incorrect_cells"] is not None:
        section["incorrect_cells"] = tuple(tuple(c) for c in section["incorrect_cells"])
    elif diag_config is not None:
        section["incorrect_cells"] = incorrect_diagnosis_cells()
    try:
        return InferenceConfig(**section)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad inference config: {err}") from err


def cmd_infer(args) -> int:
    started = time.perf_counter()
    config = load_config(args.config)
    setting, _, params, diag_config = build_problem(config)
    inference = _inference_config(config, args, diag_config)

    dataset_path = Path(args.dataset)
    if not dataset_path.is_file():
        raise FileNotFoundError(f"dataset {dataset_path} not found")
    dataset = load_dataset(dataset_path)
    for i, trajectory in enumerate(dataset):
        findings = validate_trajectory(trajectory, setting)
        if findings:
            raise ConfigError(f"trajectory {i}: " + "; ".join(findings))

    if args.baseline_irl:
        if diag_config is None:
            raise ConfigError("--baseline-irl needs the diag environment (ratio semantics)")
        samples = irl_baseline(dataset, setting, params, inference)
        targets = ("incorrect_reward",)
    else:
        samples = mh_infer(dataset, setting, params, inference)
        targets = inference.targets

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []

    path = out / "posterior.csv"
    _write_csv(
        path,
        ["step", *targets, "log_likelihood", "accepted"],
        (
            [s.step, *(_fmt(v) for v in s.parameters), _fmt(s.log_likelihood), int(s.accepted)]
            for s in samples
        ),
    )
    outputs.append(path)

    summary = posterior_summary(samples, targets)
    histogram = summary.pop("histogram_log_beta_log_eta", None)
    if args.baseline_irl:
        ratios = np.array([s.parameters[0] for s in samples]) / diag_config.correct_reward
        lo, hi = np.percentile(ratios, [5.0, 95.0])
        summary["cost_benefit_ratio"] = {
            "mean": float(ratios.mean()),
            "std": float(ratios.std(ddof=1)),
            "interval_90": [float(lo), float(hi)],
        }
    path = out / "summary.json"
    _write_json(path, summary)
    outputs.append(path)

    if histogram is not None:
        path = out / "histogram.csv"
        rows = [
            ["x_edges", *(_fmt(e) for e in histogram["x_edges"])],
            ["y_edges", *(_fmt(e) for e in histogram["y_edges"])],
        ]
        rows += [["counts", *(_fmt(c) for c in row)] for row in histogram["counts"]]
        with open(path, "w", newline="") as handle:
            csv.writer(handle).writerows(rows)
        outputs.append(path)

    snapshot = {**config, "inference": {**asdict(inference), "targets": list(targets)}}
    snapshot["inference"]["incorrect_cells"] = (
        [list(c) for c in inference.incorrect_cells] if inference.incorrect_cells else None
    )
    _write_manifest(out, "infer", snapshot, {"chain_seed": inference.seed}, outputs, started)
    return EXIT_OK


def cmd_trace(args) -> int:
    started = time.perf_counter()
    agent = load_agent(args.agent)
    dataset_path = Path(args.dataset)
    if not dataset_path.is_file():
        raise FileNotFoundError(f"dataset {dataset_path} not found")
    dataset = load_dataset(dataset_path)

    actions = _action_names(agent.setting)
    belief_cols = _belief_columns(agent.setting)
    header = ["trajectory", "step", *belief_cols, "action", *(f"pi_{a}" for a in actions)]
    rows = []
    skipped = 0
    for i, trajectory in enumerate(dataset):
        try:
            beliefs = belief_trace(trajectory, agent)
        except ImpossibleEvidenceError as err:
            skipped += 1
            print(f"trajectory {i}: {err} (skipped)", file=sys.stderr)
            continue
        for t, belief in enumerate(beliefs):
            policy = decision_policy(agent, belief)
            rows.append(
                [
                    i,
                    t,
                    *(_fmt(p) for p in belief.probabilities),
                    trajectory.actions[t],
                    *(_fmt(p) for p in policy.weights),
                ]
            )

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, header, rows)
    _write_manifest(
        out,
        "trace",
        {"dataset": str(dataset_path)},
        {"master_seed": None},
        [out],
        started,
        extra={"skipped_trajectories": skipped},
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brc",
        description="Solve, simulate, and invert belief-lattice planning problems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the planning fixed point and export tables")
    p.add_argument("--config", required=True, help="JSON config path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resolution", type=int, help="lattice resolution override")
    p.add_argument("--tolerance", type=float, help="solver tolerance override")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="sample trajectories from a solved agent")
    p.add_argument("--config", required=True)
    p.add_argument("--agent", required=True, help="directory holding agent.json from solve")
    p.add_argument("--n", type=int, required=True, help="number of trajectories")
    p.add_argument("--seed", type=int, required=True, help="master seed")
    p.add_argument("--out", required=True, help="output JSON-lines path")
    p.add_argument("--threads", type=int, default=1, help="worker cap for sampling")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("infer", help="posterior over descriptive parameters from a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True, help="JSON-lines dataset path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--targets", help="comma-separated target list override")
    p.add_argument("--seed", type=int, help="chain seed override")
    p.add_argument("--resolution", type=int, help="lattice resolution override")
    p.add_argument("--tolerance", type=float, help="solver tolerance override")
    p.add_argument("--baseline-irl", action="store_true", help="run the classical-IRL baseline")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("trace", help="export belief traces for a dataset under a solved agent")
    p.add_argument("--dataset", required=True)
    p.add_argument("--agent", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_trace)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as err:
        _report_error("config", EXIT_CONFIG, err)
        return EXIT_CONFIG
    except ConvergenceError as err:
        _report_error("convergence", EXIT_CONVERGENCE, err)
        return EXIT_CONVERGENCE
    except (FileNotFoundError, OSError) as err:
        _report_error("io", EXIT_IO, err)
        return EXIT_IO


def _report_error(kind: str, code: int, err: Exception) -> None:
    print(json.dumps({"error": {"kind": kind, "code": code, "message": str(err)}}), file=sys.stderr)


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
