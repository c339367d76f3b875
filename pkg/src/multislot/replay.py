"""Offline off-policy evaluation and multi-objective frontier analysis.

A logged session records, for each slot, the action chosen by the logging
policy, its propensity and a reward vector (one entry per objective). The
estimators reweight these rewards by the target-to-logging probability
ratio of the logged actions:

============== ==============================================================
estimator      weight of slot ``i`` in session ``m``
============== ==============================================================
full_trajectory  product over ``j <= i`` of ``pi_target(a_mj) / pi_log(a_mj)``
one_step         ``pi_target(a_mi) / pi_log(a_mi)``
exact_match      unweighted average over slots where the target picks ``a_mi``
============== ==============================================================

Values are normalized per session by default (``normalization="session"``);
``"slot"`` divides by the number of logged slots instead.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import ResponseKind, as_response
from .models import CombinationConfig, ResponseModel, spr_passthrough_model
from .simulator import (
    BATCH_SIZE,
    Episode,
    GreedyPolicy,
    Observation,
    Policy,
    SimConfig,
    label_of,
    replay_contexts,
)

ESTIMATORS = ("full_trajectory", "one_step", "exact_match")
REWARD = "reward"


class SupportError(ValueError):
    """A logged action has zero logging propensity."""


@dataclass(frozen=True)
class LoggedSession:
    """One logged session.

    Parameters
    ----------
    index : int
        Session index ``m``.
    actions : sequence of int
        Logged window index per slot.
    propensities : sequence of float
        Logging probability of each logged action.
    rewards : array_like, shape (n_slots, n_objectives)
        Observed reward vector per slot.
    observations : sequence of Observation, optional
        What the target policy sees at each slot. Sessions built from
        simulator logs may omit these and carry ``seed`` instead.
    """

    index: int
    actions: tuple[int, ...]
    propensities: tuple[float, ...]
    rewards: np.ndarray
    observations: tuple[Observation, ...] | None = None
    seed: int | None = None
    window_ids: tuple[tuple, ...] | None = None
    config_hash: str | None = None

    def __post_init__(self):
        actions = tuple(int(a) for a in self.actions)
        props = tuple(float(p) for p in self.propensities)
        rewards = np.array(self.rewards, dtype=float)
        if rewards.ndim == 1:
            rewards = rewards[:, None]
        if not (len(actions) == len(props) == rewards.shape[0]):
            raise ValueError("actions, propensities and rewards must cover the same slots")
        if any(not 0.0 <= p <= 1.0 for p in props):
            raise ValueError("propensities must lie in [0, 1]")
        if any(a < 0 for a in actions):
            raise ValueError("actions must be non-negative")
        if not np.isfinite(rewards).all():
            raise ValueError("rewards must be finite")
        if self.observations is not None and len(self.observations) != len(actions):
            raise ValueError("one observation per slot is required")
        rewards.flags.writeable = False
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "propensities", props)
        object.__setattr__(self, "rewards", rewards)
        if self.observations is not None:
            object.__setattr__(self, "observations", tuple(self.observations))

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def n_objectives(self) -> int:
        return self.rewards.shape[1]


def _objective_value(rec, objective, reward_key=REWARD) -> float:
    if objective == reward_key:
        return float(rec.reward)
    return float(label_of(rec, as_response(objective)))


class ReplayLog:
    """A set of logged sessions sharing objectives.

    ``cfg`` enables regenerating candidates for sessions that carry seeds
    instead of explicit observations.
    """

    def __init__(self, sessions: Sequence[LoggedSession], objectives: Sequence[str] = (REWARD,),
                 cfg: SimConfig | None = None):
        self.sessions = tuple(sessions)
        if not self.sessions:
            raise ValueError("at least one session is required")
        self.objectives = tuple(str(o.value if isinstance(o, ResponseKind) else o) for o in objectives)
        if any(s.n_objectives != len(self.objectives) for s in self.sessions):
            raise ValueError("reward vectors must have one entry per objective")
        self.cfg = cfg
        n = max(len(s) for s in self.sessions)
        M, J = len(self.sessions), len(self.objectives)
        self.mask = np.zeros((M, n), dtype=bool)
        self.actions = np.zeros((M, n), dtype=np.intp)
        self.logging = np.ones((M, n))
        self.rewards = np.zeros((M, n, J))
        for m, s in enumerate(self.sessions):
            L = len(s)
            self.mask[m, :L] = True
            self.actions[m, :L] = s.actions
            self.logging[m, :L] = s.propensities
            self.rewards[m, :L] = s.rewards

    @classmethod
    def from_episodes(cls, episodes: Sequence[Episode], objectives: Sequence[str | ResponseKind] = (REWARD,),
                      cfg: SimConfig | None = None) -> "ReplayLog":
        """Sessions from simulator episodes; objectives are ``"reward"`` or response names."""
        objs = [o.value if isinstance(o, ResponseKind) else str(o) for o in objectives]
        sessions = []
        for m, ep in enumerate(episodes):
            sessions.append(LoggedSession(
                index=m,
                actions=[r.action for r in ep.slots],
                propensities=[r.propensities[r.action] for r in ep.slots],
                rewards=[[_objective_value(r, o) for o in objs] for r in ep.slots],
                seed=ep.seed,
                window_ids=tuple(tuple(r.window_item_ids) for r in ep.slots),
                config_hash=ep.config_hash,
            ))
        return cls(sessions, objs, cfg)

    @property
    def n_sessions(self) -> int:
        return len(self.sessions)

    @property
    def n_slots(self) -> int:
        return int(self.mask.sum())

    def empirical_mean(self) -> np.ndarray:
        """Mean logged reward per session, per objective."""
        return self.rewards.sum(axis=1).mean(axis=0)

    def target_probabilities(self, policy: Policy) -> np.ndarray:
        """``pi_target(a_mi)`` for every logged action, shape ``(sessions, slots)``."""
        out = np.zeros(self.mask.shape)
        if self.cfg is not None:
            chash = self.cfg.config_hash()
            if any(s.config_hash not in (None, chash) for s in self.sessions):
                raise ValueError("sessions were generated under a different simulator config")
        have_obs = all(s.observations is not None for s in self.sessions)
        if not have_obs and self.cfg is not None and hasattr(policy, "batch_decide"):
            self._batch_target(policy, out)
            return out
        for m, s in enumerate(self.sessions):
            for i, obs in enumerate(self._observations(s)):
                p = np.asarray(policy.propensities(obs), dtype=float)
                a = s.actions[i]
                if a >= len(p):
                    raise ValueError(f"logged action {a} outside the window of size {len(p)}")
                out[m, i] = p[a]
        return out

    def _observations(self, s: LoggedSession):
        if s.observations is not None:
            return s.observations
        if self.cfg is None or s.seed is None:
            raise ValueError("session has neither observations nor a seed with a simulator config")
        return [obs for obs, _ in replay_contexts(self.cfg, _shell_episode(self.cfg, s))]

    def _batch_target(self, policy: Policy, out: np.ndarray) -> None:
        from ._batch import BatchState

        cfg = self.cfg
        for start in range(0, self.n_sessions, BATCH_SIZE):
            chunk = self.sessions[start:start + BATCH_SIZE]
            lens = {len(s) for s in chunk}
            if any(s.seed is None for s in chunk) or len(lens) != 1:
                raise ValueError("batch replay needs seeded sessions of equal length")
            st = BatchState(cfg, [s.seed for s in chunk])
            acts = self.actions[start:start + len(chunk)]
            rows = np.arange(len(chunk))
            for i in range(lens.pop()):
                window = st.window()
                for s, w in zip(chunk, window.tolist()):
                    if s.window_ids is not None and list(s.window_ids[i]) != w:
                        raise ValueError(f"logged window {list(s.window_ids[i])} does not match regenerated candidates")
                a = acts[:, i]
                if np.any(a >= window.shape[1]):
                    raise ValueError("logged action outside the window")
                _, props = policy.batch_decide(st, window)
                out[start:start + len(chunk), i] = props[rows, a]
                st.place(a)


def _shell_episode(cfg: SimConfig, s: LoggedSession) -> Episode:
    """Minimal episode carrying the logged actions (and window ids, if known)."""
    from .simulator import SlotRecord

    if s.window_ids is None:
        return _unchecked_episode(cfg, s)
    recs = [SlotRecord(list(w), a, [], {}, 0.0) for w, a in zip(s.window_ids, s.actions)]
    return Episode(s.seed, s.config_hash or cfg.config_hash(), recs, 0.0)


def _unchecked_episode(cfg: SimConfig, s: LoggedSession) -> Episode:
    from .simulator import SlotRecord, generate_candidates

    items = generate_candidates(cfg, s.seed).items
    remaining = list(range(len(items)))
    recs = []
    for a in s.actions:
        recs.append(SlotRecord([items[p].id for p in remaining[:cfg.k]], a, [], {}, 0.0))
        remaining.pop(a)
    return Episode(s.seed, cfg.config_hash(), recs, 0.0)


@dataclass(frozen=True)
class ReplayEstimate:
    """Off-policy estimate of one target policy.

    ``values`` and ``stderr`` hold one entry per objective. ``per_slot`` is
    an ``(n_slots, n_objectives)`` array of per-depth contributions (for
    ``exact_match``: the per-depth matched-reward mean).
    """

    policy_id: str
    estimator: str
    objectives: tuple[str, ...]
    values: tuple[float, ...]
    stderr: tuple[float, ...]
    ess: float
    n_sessions: int
    n_slots: int
    per_slot: np.ndarray = field(repr=False, default=None)
    normalization: str = "session"

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.ess > self.n_slots + 1e-9:
            raise ValueError("effective sample size exceeds the number of logged slots")

    def value(self, objective: str | ResponseKind) -> float:
        key = objective.value if isinstance(objective, ResponseKind) else objective
        return self.values[self.objectives.index(key)]


def kish_ess(weights: np.ndarray) -> float:
    """Kish effective sample size ``(sum w)^2 / sum w^2``; 0 when every weight is 0."""
    w = np.asarray(weights, dtype=float).ravel()
    s2 = float(np.dot(w, w))
    return 0.0 if s2 == 0.0 else float(w.sum()) ** 2 / s2


def _ratios(log: ReplayLog, target: np.ndarray) -> np.ndarray:
    bad = log.mask & (log.logging <= 0.0)
    if bad.any():
        m, i = map(int, np.argwhere(bad)[0])
        raise SupportError(f"zero logging propensity for session {m}, slot {i}")
    return np.where(log.mask, target / log.logging, 0.0)


def _target(log: ReplayLog, policy: Policy | None, target: np.ndarray | None) -> np.ndarray:
    if target is None:
        if policy is None:
            raise ValueError("pass a policy or precomputed target probabilities")
        target = log.target_probabilities(policy)
    target = np.asarray(target, dtype=float)
    if target.shape != log.mask.shape:
        raise ValueError(f"target probabilities must have shape {log.mask.shape}")
    return target


def _policy_id(policy, policy_id):
    if policy_id is not None:
        return policy_id
    return getattr(policy, "name", "policy")


def _scale(log: ReplayLog, normalization: str) -> float:
    if normalization == "session":
        return 1.0
    if normalization == "slot":
        return log.n_sessions / log.n_slots
    raise ValueError(f"normalization must be 'session' or 'slot', got {normalization!r}")


def _weighted_estimate(log, w, kind, policy_id, self_normalize, normalization) -> ReplayEstimate:
    M = log.n_sessions
    r = log.rewards
    wr = w[:, :, None] * r
    if self_normalize:
        wsum = w.sum(axis=0)
        safe = np.where(wsum > 0, wsum, 1.0)
        per_slot = np.where(wsum[:, None] > 0, wr.sum(axis=0) / safe[:, None], 0.0)
        # delta-method linearization of a sum of ratio estimators
        resid = w[:, :, None] * (r - per_slot[None]) * (M / safe)[None, :, None]
        g = resid.sum(axis=1)
        values = per_slot.sum(axis=0)
    else:
        g = wr.sum(axis=1)
        values = g.mean(axis=0)
        per_slot = wr.sum(axis=0) / M
    se = g.std(axis=0, ddof=1) / math.sqrt(M) if M > 1 else np.zeros(len(log.objectives))
    scale = _scale(log, normalization)
    return ReplayEstimate(
        policy_id=policy_id,
        estimator=kind,
        objectives=log.objectives,
        values=tuple(float(v) * scale for v in values),
        stderr=tuple(float(v) * scale for v in se),
        ess=kish_ess(w[log.mask]),
        n_sessions=M,
        n_slots=log.n_slots,
        per_slot=per_slot,
        normalization=normalization,
    )


def full_trajectory_weights(log: ReplayLog, target: np.ndarray) -> np.ndarray:
    """Cumulative products of the per-slot probability ratios."""
    return np.cumprod(_ratios(log, target), axis=1) * log.mask


def full_is_estimate(log: ReplayLog, policy: Policy | None = None, *, target: np.ndarray | None = None,
                     self_normalize: bool = False, normalization: str = "session",
                     policy_id: str | None = None) -> ReplayEstimate:
    """Full-trajectory importance-sampling estimate (unbiased, high variance)."""
    w = full_trajectory_weights(log, _target(log, policy, target))
    return _weighted_estimate(log, w, "full_trajectory", _policy_id(policy, policy_id), self_normalize,
                              normalization)


def one_step_is_estimate(log: ReplayLog, policy: Policy | None = None, *, target: np.ndarray | None = None,
                         self_normalize: bool = False, normalization: str = "session",
                         policy_id: str | None = None) -> ReplayEstimate:
    """One-step importance-sampling estimate: each slot is reweighted independently."""
    w = _ratios(log, _target(log, policy, target))
    return _weighted_estimate(log, w, "one_step", _policy_id(policy, policy_id), self_normalize, normalization)


def exact_match_replay(log: ReplayLog, policy: Policy | None = None, *, target: np.ndarray | None = None,
                       policy_id: str | None = None) -> ReplayEstimate:
    """Mean reward over the slots where a deterministic target picks the logged action.

    The value is on a per-slot scale. With no matches the values are
    ``nan`` and the effective sample size is 0.
    """
    t = _target(log, policy, target)
    if np.any((t[log.mask] != 0.0) & (t[log.mask] != 1.0)):
        raise ValueError("exact-match replay needs a deterministic target policy")
    match = log.mask & (t == 1.0)
    n = int(match.sum())
    J = len(log.objectives)
    r = log.rewards[match]
    if n == 0:
        values = (math.nan,) * J
        se = (math.nan,) * J
    else:
        values = tuple(float(v) for v in r.mean(axis=0))
        se = tuple(float(v) for v in (r.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(J)))
    counts = match.sum(axis=0)
    sums = (log.rewards * match[:, :, None]).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_slot = sums / counts[:, None]
    return ReplayEstimate(
        policy_id=_policy_id(policy, policy_id),
        estimator="exact_match",
        objectives=log.objectives,
        values=values,
        stderr=se,
        ess=float(n),
        n_sessions=log.n_sessions,
        n_slots=log.n_slots,
        per_slot=per_slot,
        normalization="slot",
    )


def estimate(log: ReplayLog, policy: Policy | None, estimator: str, **kwargs) -> ReplayEstimate:
    """Dispatch on the estimator name."""
    if estimator == "full_trajectory":
        return full_is_estimate(log, policy, **kwargs)
    if estimator == "one_step":
        return one_step_is_estimate(log, policy, **kwargs)
    if estimator == "exact_match":
        kwargs.pop("self_normalize", None)
        kwargs.pop("normalization", None)
        return exact_match_replay(log, policy, **kwargs)
    raise ValueError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")


@dataclass(frozen=True)
class DepthRow:
    depth: int
    n_sessions: int
    full_stderr: tuple[float, ...]
    one_step_stderr: tuple[float, ...]
    full_ess: float
    one_step_ess: float
    match_fraction: float
    full_weight_stderr: float
    one_step_weight_stderr: float


def variance_report(log: ReplayLog, policy: Policy | None = None, *,
                    target: np.ndarray | None = None) -> list[DepthRow]:
    """Standard errors and effective sample sizes of both IS estimators by slot depth.

    ``depth`` counts from 1. ``match_fraction`` is the share of sessions whose
    full-trajectory weight is still non-zero at that depth. The
    ``*_weight_stderr`` fields are standard errors of the mean weight.
    """
    if log.n_sessions < 2:
        raise ValueError("a variance report needs at least two sessions")
    t = _target(log, policy, target)
    one = _ratios(log, t)
    full = np.cumprod(one, axis=1) * log.mask
    rows = []
    for i in range(log.mask.shape[1]):
        live = log.mask[:, i]
        n = int(live.sum())
        if n < 2:
            break
        r = log.rewards[live, i]
        wf, wo = full[live, i], one[live, i]
        rows.append(DepthRow(
            depth=i + 1,
            n_sessions=n,
            full_stderr=tuple(float(v) for v in (wf[:, None] * r).std(axis=0, ddof=1) / math.sqrt(n)),
            one_step_stderr=tuple(float(v) for v in (wo[:, None] * r).std(axis=0, ddof=1) / math.sqrt(n)),
            full_ess=kish_ess(wf),
            one_step_ess=kish_ess(wo),
            match_fraction=float(np.mean(wf > 0)),
            full_weight_stderr=float(wf.std(ddof=1) / math.sqrt(n)),
            one_step_weight_stderr=float(wo.std(ddof=1) / math.sqrt(n)),
        ))
    return rows


def low_ess_warning(est: ReplayEstimate, threshold: float = 0.01) -> str | None:
    """Message when the effective sample size is below ``threshold`` of the logged slots."""
    if est.n_slots and est.ess < threshold * est.n_slots:
        return (f"warning: {est.estimator} estimate for {est.policy_id} has effective sample size "
                f"{est.ess:.1f} out of {est.n_slots} logged slots")
    return None


# --------------------------------------------------------------------------
# Pareto analysis


@dataclass(frozen=True)
class ParetoPoint:
    """A reward vector (larger is better in every coordinate) and its origin."""

    values: tuple[float, ...]
    policy_id: str = ""
    stderr: tuple[float, ...] | None = None
    estimator: str = ""
    ess: float = math.nan

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("a point needs at least one objective")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"point {self.policy_id!r} has non-finite values {vals}")
        object.__setattr__(self, "values", vals)
        if self.stderr is not None:
            object.__setattr__(self, "stderr", tuple(float(v) for v in self.stderr))

    @classmethod
    def from_estimate(cls, est: ReplayEstimate) -> "ParetoPoint":
        return cls(est.values, est.policy_id, est.stderr, est.estimator, est.ess)


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """``a`` is at least as good as ``b`` everywhere and strictly better somewhere."""
    return all(x >= y for x, y in zip(a, b)) and any(x > y for x, y in zip(a, b))


@dataclass(frozen=True)
class ParetoFrontier:
    points: tuple[ParetoPoint, ...]
    dominated: tuple[ParetoPoint, ...] = ()

    def __len__(self) -> int:
        return len(self.points)

    @property
    def vectors(self) -> set[tuple[float, ...]]:
        return {p.values for p in self.points}

    def weakly_dominates(self, values: Sequence[float]) -> bool:
        """Some frontier point is at least as good as ``values`` in every objective."""
        return any(all(x >= y for x, y in zip(p.values, values)) for p in self.points)


def _as_point(p) -> ParetoPoint:
    if isinstance(p, ParetoPoint):
        return p
    if isinstance(p, ReplayEstimate):
        return ParetoPoint.from_estimate(p)
    return ParetoPoint(tuple(p))


def pareto_frontier(points: Iterable, minimize: Iterable[int] = ()) -> ParetoFrontier:
    """Non-dominated subset of ``points`` (maximize all objectives).

    Coordinates listed in ``minimize`` are negated before comparison. Among
    equal vectors only the first is kept on the frontier.
    """
    pts = [_as_point(p) for p in points]
    if not pts:
        raise ValueError("at least one point is required")
    dims = {len(p.values) for p in pts}
    if len(dims) != 1:
        raise ValueError(f"points have mixed dimensionality {sorted(dims)}")
    sign = np.ones(dims.pop())
    for j in minimize:
        sign[j] = -1.0
    keys = [tuple(sign * np.array(p.values)) for p in pts]
    # Visiting in descending lexicographic order means no later point can
    # dominate an earlier one, so each point is only checked against the
    # frontier built so far.
    order = sorted(range(len(pts)), key=lambda i: tuple(-v for v in keys[i]))
    front: list[int] = []
    seen: set = set()
    for i in order:
        k = keys[i]
        if k in seen or any(dominates(keys[j], k) for j in front):
            continue
        seen.add(k)
        front.append(i)
    keep = set(front)
    return ParetoFrontier(
        points=tuple(pts[i] for i in sorted(keep)),
        dominated=tuple(pts[i] for i in range(len(pts)) if i not in keep),
    )


def brute_force_frontier(vectors: Sequence[Sequence[float]]) -> set[tuple[float, ...]]:
    """Quadratic reference: distinct vectors no other vector dominates."""
    vs = [tuple(float(x) for x in v) for v in vectors]
    return {v for v in vs if not any(dominates(u, v) for u in vs)}


def merge_points(sources: Sequence[tuple[ReplayEstimate, str | ResponseKind]], policy_id: str) -> ParetoPoint:
    """Assemble one point from objectives estimated under different policies.

    Each entry ``(estimate, objective)`` contributes ``estimate``'s value for
    ``objective`` as the next coordinate.
    """
    vals, ses, ess = [], [], []
    for est, obj in sources:
        key = obj.value if isinstance(obj, ResponseKind) else str(obj)
        j = est.objectives.index(key)
        vals.append(est.values[j])
        ses.append(est.stderr[j])
        ess.append(est.ess)
    kinds = {est.estimator for est, _ in sources}
    return ParetoPoint(tuple(vals), policy_id, tuple(ses), kinds.pop() if len(kinds) == 1 else "merged", min(ess))


def hybrid_policy(cfg: SimConfig, contributions_model: ResponseModel, weight: float, name: str | None = None,
                  click: ResponseKind = ResponseKind.CLICK) -> GreedyPolicy:
    """Greedy policy scoring clicks with the upstream SPR model and contributions with a slot-aware model."""
    if contributions_model.response is not ResponseKind.CONTRIBUTIONS:
        raise ValueError("the slot-aware model must predict contributions")
    models = {click: spr_passthrough_model(click, cfg.item_types, cfg.embedding_dim)}
    coefs = {click: 1.0}
    if weight != 0.0:
        models[ResponseKind.CONTRIBUTIONS] = contributions_model
        coefs[ResponseKind.CONTRIBUTIONS] = float(weight)
    return GreedyPolicy(name or f"hybrid_w={weight:g}", models, CombinationConfig(coefs))


def sweep_points(log: ReplayLog, policies: Sequence[Policy], estimator: str = "one_step",
                 **kwargs) -> list[ReplayEstimate]:
    """Replay estimates of several target policies on the same log."""
    return [estimate(log, p, estimator, **kwargs) for p in policies]


# --------------------------------------------------------------------------
# CSV interchange

CSV_FIXED = ("policy_id", "estimator", "ess")


def estimates_csv(rows: Sequence[ParetoPoint | ReplayEstimate], config_hash: str | None = None,
                  on_frontier: Mapping[int, bool] | None = None) -> str:
    """CSV text with columns ``policy_id, objective_1..n, stderr_1..n, estimator, ess``.

    ``on_frontier`` (row index -> flag) adds a trailing ``on_frontier`` column.
    """
    pts = [_as_point(r) for r in rows]
    if not pts:
        raise ValueError("nothing to write")
    n = len(pts[0].values)
    if any(len(p.values) != n for p in pts):
        raise ValueError("rows have mixed dimensionality")
    buf = io.StringIO()
    if config_hash is not None:
        buf.write(f"# config_hash={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    header = ["policy_id"] + [f"objective_{j + 1}" for j in range(n)] + [f"stderr_{j + 1}" for j in range(n)]
    header += ["estimator", "ess"]
    if on_frontier is not None:
        header.append("on_frontier")
    w.writerow(header)
    for i, p in enumerate(pts):
        se = p.stderr if p.stderr is not None else (math.nan,) * n
        row = [p.policy_id] + [repr(v) for v in p.values] + [repr(v) for v in se] + [p.estimator, repr(p.ess)]
        if on_frontier is not None:
            row.append(int(bool(on_frontier.get(i, False))))
        w.writerow(row)
    return buf.getvalue()


def read_estimates_csv(text: str) -> tuple[list[ParetoPoint], str | None]:
    """Parse :func:`estimates_csv` output; returns the points and the config hash, if any."""
    lines = text.splitlines()
    chash = None
    body = []
    for line in lines:
        if line.startswith("#"):
            if line.startswith("# config_hash="):
                chash = line.split("=", 1)[1].strip()
            continue
        body.append(line)
    reader = csv.DictReader(body)
    fields = reader.fieldnames or []
    n = sum(1 for f in fields if f.startswith("objective_"))
    if n == 0 or "policy_id" not in fields:
        raise ValueError("not an estimates CSV: missing policy_id or objective columns")
    pts = []
    for row in reader:
        pts.append(ParetoPoint(
            tuple(float(row[f"objective_{j + 1}"]) for j in range(n)),
            row["policy_id"],
            tuple(float(row[f"stderr_{j + 1}"]) for j in range(n)),
            row.get("estimator", ""),
            float(row.get("ess", "nan")),
        ))
    return pts, chash
