"""Command-line front end: ``multislot {simulate,train,benchmark,replay,pareto}``.

Every verb reads an optional JSON run file (``--config``). Unknown keys are
rejected before any work starts. Exit status is 0 on success, 1 for invalid
configuration or arguments and 2 for runtime or data errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .core import ResponseKind, as_response
from .models import CombinationConfig, ResponseModel, TrainParams, compute_auc, logistic, train
from .replay import (
    ESTIMATORS,
    ReplayLog,
    ParetoPoint,
    estimate,
    estimates_csv,
    hybrid_policy,
    low_ess_warning,
    pareto_frontier,
    read_estimates_csv,
)
from .simulator import (
    Episode,
    GreedyPolicy,
    PointwiseGreedyPolicy,
    Policy,
    RandomPolicy,
    SimConfig,
    estimated_schema,
    fit_estimated_models,
    interaction_free_schema,
    policy_zoo,
    read_episodes,
    rollout,
    sequential_greedy_oracle,
    training_examples,
    write_episodes,
)

POLICIES = ("random", "pointwise_greedy", "sequential_greedy_oracle", "sequential_greedy_estimated")
PRESET_BEST_VS_SECOND = "best_vs_second_best"


class ConfigError(ValueError):
    """Invalid run configuration or command-line arguments (exit status 1)."""


def _check_keys(section: str, data: Mapping[str, Any], allowed: Sequence[str]) -> None:
    if not isinstance(data, Mapping):
        raise ConfigError(f"section {section!r} must be an object")
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")


@dataclass
class TrainSection:
    episodes: int = 2500
    responses: tuple[str, ...] = ("click",)
    drop: tuple[str, ...] = ()
    estimated_drop: tuple[str, ...] = ("embedding_dot",)
    holdout: float = 0.2
    l2: float = 1e-4
    tol: float = 1e-6
    max_iter: int = 100
    method: str = "newton"

    def params(self) -> TrainParams:
        return TrainParams(l2=self.l2, tol=self.tol, max_iter=self.max_iter, method=self.method)


@dataclass
class ReplaySection:
    estimator: str = "one_step"
    target: str = PRESET_BEST_VS_SECOND
    self_normalize: bool = False
    normalization: str = "session"
    ess_warning: float = 0.01


@dataclass
class ParetoSection:
    mode: str = "hybrid"
    weights: tuple[float, ...] = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
    estimator: str = "one_step"
    episodes: int = 10_000
    train_episodes: int = 2500


@dataclass
class RunConfig:
    """Declarative run file.

    Sections: ``sim`` (simulator settings), ``policy``, ``combination`` (the
    reward weights used by greedy policies), ``train``, ``replay``,
    ``pareto``, ``decay`` and ``sga`` (re-ranker settings recorded with the
    run), plus ``seed``, ``episodes`` and ``outputs``.
    """

    sim: SimConfig = field(default_factory=SimConfig)
    seed: int = 0
    episodes: int = 1000
    policy: str = "random"
    combination: dict[str, float] | None = None
    train: TrainSection = field(default_factory=TrainSection)
    replay: ReplaySection = field(default_factory=ReplaySection)
    pareto: ParetoSection = field(default_factory=ParetoSection)
    sga: dict[str, Any] = field(default_factory=lambda: {"k": 3, "max_deviation": 3, "pin_top_slot": True})
    decay: dict[str, Any] = field(default_factory=lambda: {"alpha": 0.8})
    outputs: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        _check_keys("run", data, [f.name for f in fields(cls)])
        kw: dict[str, Any] = {}
        try:
            if "sim" in data:
                kw["sim"] = SimConfig.from_dict(data["sim"])
            for name, sub in (("train", TrainSection), ("replay", ReplaySection), ("pareto", ParetoSection)):
                if name in data:
                    _check_keys(name, data[name], [f.name for f in fields(sub)])
                    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in data[name].items()}
                    kw[name] = sub(**vals)
            if "sga" in data:
                _check_keys("sga", data["sga"], ["k", "max_deviation", "pin_top_slot"])
                kw["sga"] = {**cls().sga, **data["sga"]}
            if "decay" in data:
                _check_keys("decay", data["decay"], ["alpha"])
                kw["decay"] = dict(data["decay"])
            if "outputs" in data:
                _check_keys("outputs", data["outputs"], ["episodes", "model", "benchmark", "replay", "pareto"])
                kw["outputs"] = dict(data["outputs"])
            for key in ("seed", "episodes", "policy", "combination"):
                if key in data:
                    kw[key] = data[key]
            cfg = cls(**kw)
            cfg.validate()
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    def validate(self) -> None:
        try:
            self._validate()
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    def _validate(self) -> None:
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not isinstance(self.episodes, int) or self.episodes < 1:
            raise ConfigError("episodes must be a positive integer")
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}")
        if self.combination is not None:
            self.combination_config()
        t = self.train
        if t.episodes < 2 or not 0.0 < t.holdout < 1.0:
            raise ConfigError("train.episodes must be >= 2 and train.holdout in (0, 1)")
        [as_response(r) for r in t.responses]
        t.params()
        r = self.replay
        if r.estimator not in ESTIMATORS:
            raise ConfigError(f"replay.estimator must be one of {ESTIMATORS}")
        if r.target not in POLICIES + (PRESET_BEST_VS_SECOND,):
            raise ConfigError(f"unknown replay target {r.target!r}")
        if r.normalization not in ("session", "slot"):
            raise ConfigError("replay.normalization must be 'session' or 'slot'")
        p = self.pareto
        if p.mode not in ("hybrid", "multislot"):
            raise ConfigError("pareto.mode must be 'hybrid' or 'multislot'")
        if not p.weights or any(not math.isfinite(w) or w < 0 for w in p.weights):
            raise ConfigError("pareto.weights must be non-negative finite numbers")
        if p.estimator not in ("full_trajectory", "one_step"):
            raise ConfigError("pareto.estimator must be 'full_trajectory' or 'one_step'")
        if p.episodes < 2 or p.train_episodes < 2:
            raise ConfigError("pareto episode counts must be >= 2")
        from .reranker import DecayConfig

        DecayConfig(**self.decay)
        k, d = self.sga["k"], self.sga["max_deviation"]
        if not isinstance(k, int) or k < 1 or (d is not None and (not isinstance(d, int) or d < 0)):
            raise ConfigError("sga.k must be >= 1 and sga.max_deviation >= 0 or null")

    def combination_config(self) -> CombinationConfig:
        coefs = self.combination if self.combination is not None else {r.value: c for r, c in self.sim.reward.items()}
        return CombinationConfig({as_response(r): c for r, c in coefs.items()})


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return RunConfig.from_dict(data)


# --------------------------------------------------------------------------
# model files


def save_models(path: str, models: Mapping[ResponseKind, ResponseModel]) -> None:
    blob = {"models": {r.value: m.to_dict() for r, m in models.items()}}
    Path(path).write_text(json.dumps(blob, sort_keys=True) + "\n")


def load_models(path: str) -> dict[ResponseKind, ResponseModel]:
    data = json.loads(Path(path).read_text())
    return {ResponseKind(r): ResponseModel.from_dict(d) for r, d in data["models"].items()}


def _estimated_models(cfg: RunConfig, model_path: str | None, inline: bool, workers: int | None):
    if model_path:
        return load_models(model_path)
    if not inline:
        raise RuntimeError("the estimated policy needs --model (inline training is disabled)")
    t = cfg.train
    return fit_estimated_models(cfg.sim, t.episodes, seed=cfg.seed, drop=t.estimated_drop,
                                params=t.params(), workers=workers)


def _policy(cfg: RunConfig, name: str, model_path: str | None, workers: int | None, inline: bool = True) -> Policy:
    if name == "random":
        return RandomPolicy()
    if name == "pointwise_greedy":
        return PointwiseGreedyPolicy()
    if name == "sequential_greedy_estimated":
        return policy_zoo(cfg.sim, _estimated_models(cfg, model_path, inline, workers))[name]
    return sequential_greedy_oracle(cfg.sim, cfg.combination_config().coefficients)


# --------------------------------------------------------------------------
# verbs


def cmd_simulate(args, cfg: RunConfig, out) -> int:
    policy = _policy(cfg, args.policy or cfg.policy, args.model, args.workers)
    res = rollout(policy, cfg.sim, cfg.episodes, cfg.seed, args.workers)
    path = args.out or cfg.outputs.get("episodes")
    if path:
        write_episodes(path, res.episodes)
    print(f"policy={res.policy} episodes={len(res.episodes)} mean={res.mean:.6f} stderr={res.stderr:.6f}", file=out)
    return 0


def split_by_episode(episodes: Sequence[Episode], holdout: float, seed: int):
    """Seeded 80/20-style split of whole episodes."""
    n = len(episodes)
    n_test = max(1, int(round(holdout * n)))
    if n_test >= n:
        raise ValueError("need at least two episodes to split")
    perm = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED])).permutation(n)
    test = set(perm[:n_test].tolist())
    return [e for i, e in enumerate(episodes) if i not in test], [e for i, e in enumerate(episodes) if i in test]


@dataclass(frozen=True)
class AucRow:
    response: str
    auc_interaction: float
    auc_no_interaction: float

    @property
    def lift_points(self) -> float:
        return 100.0 * (self.auc_interaction - self.auc_no_interaction)

    @property
    def relative_lift(self) -> float:
        return 100.0 * (self.auc_interaction / self.auc_no_interaction - 1.0)


def interaction_ablation(sim: SimConfig, episodes: Sequence[Episode], responses, holdout: float, seed: int,
                         params: TrainParams, drop: Sequence[str] = ()):
    """Train with and without interaction features; AUC of each on a held-out split."""
    tr, te = split_by_episode(episodes, holdout, seed)
    full = estimated_schema(sim, drop)
    free = interaction_free_schema(full)
    rows, models = [], {}
    for r in responses:
        r = as_response(r)
        aucs = []
        for schema in (full, free):
            X, y, _ = training_examples(sim, tr, schema, r)
            m = train(X, y, schema, r, params)
            Xt, yt, _ = training_examples(sim, te, schema, r)
            aucs.append(compute_auc(logistic(Xt @ m.weights), yt))
            if schema is full:
                models[r] = m
        rows.append(AucRow(r.value, aucs[0], aucs[1]))
    return rows, models


def cmd_train(args, cfg: RunConfig, out) -> int:
    if not args.logs:
        raise ConfigError("train needs --logs")
    episodes = read_episodes(args.logs)
    t = cfg.train
    rows, models = interaction_ablation(cfg.sim, episodes, t.responses, t.holdout, cfg.seed, t.params(), t.drop)
    path = args.out or cfg.outputs.get("model")
    if path:
        save_models(path, models)
    for row in rows:
        print(f"response={row.response} auc_interaction={row.auc_interaction:.6f} "
              f"auc_no_interaction={row.auc_no_interaction:.6f} lift_points={row.lift_points:.4f} "
              f"relative_lift_pct={row.relative_lift:.4f}", file=out)
    return 0


def cmd_benchmark(args, cfg: RunConfig, out) -> int:
    sim = cfg.sim
    models = _estimated_models(cfg, args.model, not args.no_inline_train, args.workers)
    zoo = policy_zoo(sim, models)
    order = ("random", "pointwise_greedy", "sequential_greedy_oracle", "sequential_greedy_estimated")
    buf = io.StringIO()
    buf.write(f"# config_hash={sim.config_hash()} seed={cfg.seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "mean_reward", "stderr", "episodes"])
    for name in order:
        res = rollout(zoo[name], sim, cfg.episodes, cfg.seed, args.workers)
        w.writerow([name, repr(res.mean), repr(res.stderr), cfg.episodes])
    _emit(buf.getvalue(), args.out or cfg.outputs.get("benchmark"), out)
    return 0


def _logs(args, cfg: RunConfig, episodes: int, workers) -> list[Episode]:
    if args.logs:
        return read_episodes(args.logs)
    return rollout(RandomPolicy(), cfg.sim, episodes, cfg.seed, workers).episodes


def cmd_replay(args, cfg: RunConfig, out) -> int:
    r = cfg.replay
    estimator = args.estimator or r.estimator
    if estimator not in ESTIMATORS:
        raise ConfigError(f"estimator must be one of {ESTIMATORS}")
    target = args.target or r.target
    episodes = _logs(args, cfg, cfg.episodes, args.workers)
    log = ReplayLog.from_episodes(episodes, cfg=cfg.sim)
    if target == PRESET_BEST_VS_SECOND:
        best = sequential_greedy_oracle(cfg.sim, cfg.combination_config().coefficients)
        best = GreedyPolicy("always_best", best.models, best.combination)
        second = GreedyPolicy("always_second_best", best.models, best.combination, rank=1)
        policies = [best, second]
    elif target in POLICIES:
        policies = [_policy(cfg, target, args.model, args.workers)]
    else:
        raise ConfigError(f"unknown replay target {target!r}")
    kw = {} if estimator == "exact_match" else {"self_normalize": r.self_normalize, "normalization": r.normalization}
    ests = [estimate(log, p, estimator, **kw) for p in policies]
    for e in ests:
        msg = low_ess_warning(e, r.ess_warning)
        if msg:
            print(msg, file=sys.stderr)
    _emit(estimates_csv(ests, cfg.sim.config_hash()), args.out or cfg.outputs.get("replay"), out)
    return 0


def cmd_pareto(args, cfg: RunConfig, out) -> int:
    p = cfg.pareto
    mode = args.mode or p.mode
    sim = cfg.sim
    objectives = (ResponseKind.CLICK.value, ResponseKind.CONTRIBUTIONS.value)
    baseline: list[ParetoPoint] = []
    for path in args.estimates or ():
        pts, _ = read_estimates_csv(Path(path).read_text())
        baseline.extend(pts)
    dims = {len(pt.values) for pt in baseline}
    if dims and dims != {len(objectives)}:
        raise ValueError(f"estimate files have {sorted(dims)} objectives, expected {len(objectives)}")
    episodes = _logs(args, cfg, p.episodes, args.workers)
    log = ReplayLog.from_episodes(episodes, objectives, cfg=sim)
    responses = (ResponseKind.CONTRIBUTIONS,) if mode == "hybrid" else (ResponseKind.CLICK, ResponseKind.CONTRIBUTIONS)
    models = fit_estimated_models(sim, p.train_episodes, seed=cfg.seed, drop=cfg.train.estimated_drop, responses=responses,
                                  params=cfg.train.params(), workers=args.workers)
    policies: list[Policy] = []
    for wgt in p.weights:
        if mode == "hybrid":
            policies.append(hybrid_policy(sim, models[ResponseKind.CONTRIBUTIONS], wgt, f"hybrid_w={wgt:g}"))
        else:
            coefs = {ResponseKind.CLICK: 1.0}
            if wgt:
                coefs[ResponseKind.CONTRIBUTIONS] = wgt
            policies.append(GreedyPolicy(f"multislot_w={wgt:g}", models, CombinationConfig(coefs)))
    swept = [ParetoPoint.from_estimate(estimate(log, pol, p.estimator)) for pol in policies]
    base = ParetoPoint.from_estimate(estimate(log, PointwiseGreedyPolicy(), p.estimator))
    points = swept + [base] + baseline
    front = pareto_frontier(points)
    keep = {id(pt) for pt in front.points}
    flags = {i: id(pt) in keep for i, pt in enumerate(points)}
    _emit(estimates_csv(points, sim.config_hash(), on_frontier=flags), args.out or cfg.outputs.get("pareto"), out)
    print(f"mode={mode} points={len(points)} frontier={len(front)} "
          f"baseline_weakly_dominated={int(front.weakly_dominates(base.values))}", file=sys.stderr)
    return 0


def _emit(text: str, path: str | None, out) -> None:
    if path:
        Path(path).write_text(text)
    else:
        out.write(text)


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multislot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run file")
        p.add_argument("--seed", type=int, help="master seed (overrides the run file)")
        p.add_argument("--workers", type=int, help="worker processes (default: MULTISLOT_WORKERS or CPU count)")
        p.add_argument("--out", help="output path (stdout when omitted, where applicable)")
        p.add_argument("--episodes", type=int, help="episode count (overrides the run file)")
        return p

    s = common(sub.add_parser("simulate", help="roll out a policy and write episode JSONL"))
    s.add_argument("--policy", choices=POLICIES)
    s.add_argument("--model", help="model file for the estimated policy")

    t = common(sub.add_parser("train", help="train response models and report the interaction AUC lift"))
    t.add_argument("--logs", help="episode JSONL")

    b = common(sub.add_parser("benchmark", help="mean reward of the four benchmark policies"))
    b.add_argument("--model", help="model file for the estimated policy")
    b.add_argument("--no-inline-train", action="store_true", help="fail instead of training the estimated model")

    r = common(sub.add_parser("replay", help="off-policy estimates from random-policy logs"))
    r.add_argument("--logs", help="episode JSONL (generated with the random policy when omitted)")
    r.add_argument("--target", choices=POLICIES + (PRESET_BEST_VS_SECOND,))
    r.add_argument("--estimator", choices=ESTIMATORS)
    r.add_argument("--model", help="model file for the estimated policy")

    p = common(sub.add_parser("pareto", help="click/contributions frontier of a coefficient sweep"))
    p.add_argument("--logs", help="episode JSONL (generated with the random policy when omitted)")
    p.add_argument("--estimates", nargs="*", help="estimate CSVs merged in as extra points")
    p.add_argument("--mode", choices=("hybrid", "multislot"))
    return parser


VERBS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "benchmark": cmd_benchmark,
    "replay": cmd_replay,
    "pareto": cmd_pareto,
}


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.episodes is not None:
            cfg.episodes = args.episodes
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg.validate()
        return VERBS[args.verb](args, cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
