"""Sequential-interaction simulator.

A user scans a generated list from top to bottom. At every step the policy
picks one of the top ``k`` remaining items (in SPR order) for the next slot
and the oracle choice model samples the user's responses to it, conditioned
on the items already shown above.

The environment follows the familiar ``reset`` / ``step`` contract so
external agents can drive it; :func:`rollout` runs whole episodes for any
:class:`Policy`.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from abc import ABC, abstractmethod
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .core import (
    CONTRIBUTION_RESPONSES,
    PRIMARY_RESPONSES,
    CandidateList,
    Item,
    ItemTypes,
    ResponseKind,
    as_response,
    contributions_label,
    contributions_score,
)
from .models import (
    ALL_FAMILIES,
    INTERACTION,
    CombinationConfig,
    ModelBank,
    FeatureSchema,
    ResponseModel,
    SlotContext,
    TrainParams,
    combine_scores,
    families_for,
    train,
)

WORKERS_ENV = "MULTISLOT_WORKERS"

DEFAULT_SPR_RANGES = {
    ResponseKind.CLICK: (0.05, 0.5),
    ResponseKind.LIKE: (0.02, 0.2),
    ResponseKind.COMMENT: (0.01, 0.08),
    ResponseKind.SHARE: (0.005, 0.05),
    ResponseKind.SKIP: (0.05, 0.3),
}


def default_oracle_weights(item_types: ItemTypes) -> dict[ResponseKind, dict[str, float]]:
    """Oracle weights in which interactions with earlier slots matter.

    The SPR logit enters with weight 3 (the upstream scores are
    under-confident) and every response falls off down the list. Clicks also
    suffer from repeated types, repeated creators and near-duplicate content. Contribution responses move the
    other way on content similarity, which creates a click/contribution
    trade-off.
    """
    same_type = {f"cross_prev={t}|{t}": 1.0 for t in item_types.names}
    window_type = {f"cross_window={t}|{t}": 1.0 for t in item_types.names}

    def scaled(d, c):
        return {k: c * v for k, v in d.items()}

    weights = {}
    for r in PRIMARY_RESPONSES:
        weights[r] = {f"spr:{r.value}": 3.0, "slot": -0.2}
    weights[ResponseKind.CLICK].update(scaled(same_type, -2.5))
    weights[ResponseKind.CLICK].update(scaled(window_type, -0.75), same_creator=-2.0, dot_max=-2.25)
    weights[ResponseKind.LIKE].update(dot_mean=0.6, same_creator=0.3)
    weights[ResponseKind.COMMENT].update(dot_mean=0.5)
    weights[ResponseKind.SHARE].update(same_creator=0.4)
    weights[ResponseKind.SKIP].update(scaled(same_type, 0.6), dot_max=0.4)
    return weights


@dataclass(frozen=True)
class SimConfig:
    """Simulator configuration. ``n_items=None`` means one item per slot."""

    n_slots: int = 20
    k: int = 3
    horizon: int = 3
    n_items: int | None = None
    item_types: ItemTypes = field(default_factory=ItemTypes)
    type_probs: tuple[float, ...] | None = None
    spr_ranges: Mapping[ResponseKind, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_SPR_RANGES))
    embedding_dim: int = 8
    embedding_range: tuple[float, float] = (-1.0, 1.0)
    n_creators: int = 8
    oracle_weights: Mapping[ResponseKind, Mapping[str, float]] | None = None
    reward: Mapping[ResponseKind, float] = field(default_factory=lambda: {ResponseKind.CLICK: 1.0})
    episodes: int = 10_000
    seed: int = 0
    deterministic_labels: bool = False
    primary: ResponseKind = ResponseKind.CLICK

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        n_items = self.n_slots if self.n_items is None else self.n_items
        if self.n_slots < 1 or n_items < self.n_slots:
            raise ValueError("need n_slots >= 1 and n_items >= n_slots")
        if not 1 <= self.k <= self.n_slots:
            raise ValueError("k must be in [1, n_slots]")
        if self.horizon < 0 or self.embedding_dim < 0 or self.n_creators < 1:
            raise ValueError("horizon/embedding_dim must be >= 0 and n_creators >= 1")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        T = len(self.item_types)
        if self.type_probs is not None:
            p = tuple(float(v) for v in self.type_probs)
            if len(p) != T or any(v < 0 for v in p) or not math.isclose(sum(p), 1.0, abs_tol=1e-9):
                raise ValueError("type_probs must be a distribution over item types")
            set_("type_probs", p)
        ranges = {as_response(r): (float(lo), float(hi)) for r, (lo, hi) in dict(self.spr_ranges).items()}
        for r, (lo, hi) in ranges.items():
            if r.is_derived or not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"invalid SPR range for {r.value}: {(lo, hi)}")
        primary = as_response(self.primary)
        if primary not in ranges:
            raise ValueError(f"no SPR range for primary response {primary.value}")
        lo, hi = self.embedding_range
        if lo > hi:
            raise ValueError("invalid embedding range")
        oracle = self.oracle_weights
        if oracle is None:
            oracle = default_oracle_weights(self.item_types)
        oracle = {as_response(r): dict(w) for r, w in dict(oracle).items()}
        for r in oracle:
            if r not in ranges:
                raise ValueError(f"oracle response {r.value} has no SPR range")
        reward = {as_response(r): float(c) for r, c in dict(self.reward).items()}
        for r in reward:
            if r.is_derived:
                if not any(c in oracle for c in CONTRIBUTION_RESPONSES):
                    raise ValueError("contributions reward needs a contribution response in the oracle")
            elif r not in oracle:
                raise ValueError(f"reward response {r.value} is not simulated by the oracle")
        set_("n_items", n_items)
        set_("spr_ranges", ranges)
        set_("oracle_weights", oracle)
        set_("reward", reward)
        set_("primary", primary)
        set_("embedding_range", (float(lo), float(hi)))

    @property
    def responses(self) -> tuple[ResponseKind, ...]:
        """Simulated primary responses, in canonical order."""
        return tuple(r for r in PRIMARY_RESPONSES if r in self.oracle_weights)

    def oracle_schema(self) -> FeatureSchema:
        return FeatureSchema(self.item_types, self.embedding_dim, self.horizon, frozenset(ALL_FAMILIES), self.responses)

    def oracle_models(self) -> dict[ResponseKind, ResponseModel]:
        """The ground-truth choice model, one logistic model per response."""
        schema = self.oracle_schema()
        unknown = {n for w in self.oracle_weights.values() for n in w} - set(schema.names)
        if unknown:
            raise ValueError(f"unknown oracle feature names: {sorted(unknown)}")
        return {r: ResponseModel(r, schema.weights_from(self.oracle_weights[r]), schema) for r in self.responses}

    def without_interactions(self) -> "SimConfig":
        """Same config with every interaction weight of the oracle zeroed."""
        schema = self.oracle_schema()
        inter = {n for n, g in zip(schema.names, schema.groups) if g == INTERACTION}
        zeroed = {r: {n: v for n, v in w.items() if n not in inter} for r, w in self.oracle_weights.items()}
        return replace(self, oracle_weights=zeroed)

    def reward_bounds(self) -> tuple[float, float]:
        """Per-slot reward range."""
        return (sum(min(0.0, c) for c in self.reward.values()), sum(max(0.0, c) for c in self.reward.values()))

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_slots": self.n_slots,
            "k": self.k,
            "horizon": self.horizon,
            "n_items": self.n_items,
            "item_types": list(self.item_types.names),
            "type_probs": None if self.type_probs is None else list(self.type_probs),
            "spr_ranges": {r.value: list(v) for r, v in self.spr_ranges.items()},
            "embedding_dim": self.embedding_dim,
            "embedding_range": list(self.embedding_range),
            "n_creators": self.n_creators,
            "oracle_weights": {r.value: dict(sorted(w.items())) for r, w in self.oracle_weights.items()},
            "reward": {r.value: c for r, c in self.reward.items()},
            "episodes": self.episodes,
            "seed": self.seed,
            "deterministic_labels": self.deterministic_labels,
            "primary": self.primary.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown simulator config keys: {sorted(unknown)}")
        kw = dict(data)
        if "item_types" in kw:
            kw["item_types"] = ItemTypes(tuple(kw["item_types"]))
        for key in ("type_probs", "embedding_range"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        if "spr_ranges" in kw:
            kw["spr_ranges"] = {ResponseKind(r): tuple(v) for r, v in kw["spr_ranges"].items()}
        if kw.get("oracle_weights") is not None:
            kw["oracle_weights"] = {ResponseKind(r): dict(w) for r, w in kw["oracle_weights"].items()}
        if "reward" in kw:
            kw["reward"] = {ResponseKind(r): c for r, c in kw["reward"].items()}
        if "primary" in kw:
            kw["primary"] = ResponseKind(kw["primary"])
        return cls(**kw)

    def config_hash(self) -> str:
        """Stable fingerprint of everything that shapes generated data.

        ``episodes`` and ``seed`` are run parameters, so they are excluded.
        """
        d = self.to_dict()
        d.pop("episodes")
        d.pop("seed")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def episode_seed(master_seed: int, index: int) -> int:
    """Seed of episode ``index``, derived from the master seed by counter."""
    ss = np.random.SeedSequence([int(master_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _streams(seed: int):
    items_ss, labels_ss, policy_ss = np.random.SeedSequence(int(seed)).spawn(3)
    return (np.random.default_rng(items_ss), np.random.default_rng(labels_ss), np.random.default_rng(policy_ss))


def generate_candidates(cfg: SimConfig, seed: int) -> CandidateList:
    """Candidate list for an episode; depends only on ``(cfg, seed)``."""
    rng = _streams(seed)[0]
    return _generate(cfg, rng)


def _draw(cfg: SimConfig, rng: np.random.Generator):
    """Raw candidate attributes, already sorted by the primary SPR score."""
    n = cfg.n_items
    T = len(cfg.item_types)
    spr = {r: rng.uniform(lo, hi, n) for r, (lo, hi) in cfg.spr_ranges.items()}
    types = rng.choice(T, size=n, p=cfg.type_probs)
    creators = rng.integers(cfg.n_creators, size=n)
    lo, hi = cfg.embedding_range
    emb = rng.uniform(lo, hi, (n, cfg.embedding_dim))
    order = np.argsort(-spr[cfg.primary], kind="stable")
    with_contrib = any(r in spr for r in CONTRIBUTION_RESPONSES)
    scores = []
    for j in order:
        sc = {r: float(v[j]) for r, v in spr.items()}
        if with_contrib:
            sc[ResponseKind.CONTRIBUTIONS] = contributions_score(sc)
        scores.append(sc)
    return scores, types[order], creators[order], emb[order]


def _generate(cfg: SimConfig, rng: np.random.Generator) -> CandidateList:
    scores, types, creators, emb = _draw(cfg, rng)
    items = [Item(rank, f"c{int(creators[rank])}", int(types[rank]), emb[rank], scores[rank])
             for rank in range(cfg.n_items)]
    return CandidateList(tuple(items), cfg.primary)


@dataclass(frozen=True)
class Observation:
    """What a policy sees before choosing the item for ``slot_index``."""

    slot_index: int
    window: tuple[Item, ...]
    context: SlotContext

    @property
    def n_actions(self) -> int:
        return len(self.window)


@dataclass
class StepResult:
    observation: Observation | None
    labels: dict[ResponseKind, int]
    reward: float
    done: bool


class MultiSlotEnv:
    """Slot-filling environment driven one action at a time."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.oracle = cfg.oracle_models()
        self._bank = ModelBank(self.oracle)
        self.config_hash = cfg.config_hash()
        self.candidates: CandidateList | None = None
        self._remaining: list[int] = []
        self._ctx = SlotContext()
        self._label_rng: np.random.Generator | None = None
        self.policy_rng: np.random.Generator | None = None

    def reset(self, seed: int) -> Observation:
        items_rng, self._label_rng, self.policy_rng = _streams(seed)
        self.candidates = _generate(self.cfg, items_rng)
        self._remaining = list(range(self.cfg.n_items))
        self._ctx = SlotContext()
        return self._observe()

    def _observe(self) -> Observation:
        items = self.candidates.items
        window = tuple(items[p] for p in self._remaining[:self.cfg.k])
        return Observation(self._ctx.slot_index, window, self._ctx)

    @property
    def done(self) -> bool:
        return self.candidates is not None and self._ctx.slot_index >= self.cfg.n_slots

    def choice_probabilities(self, item: Item, ctx: SlotContext | None = None) -> dict[ResponseKind, float]:
        """Oracle response probabilities for ``item`` at the current (or given) slot."""
        ctx = self._ctx if ctx is None else ctx
        return {r: float(v[0]) for r, v in self._bank.predict([item], ctx).items()}

    def step(self, action: int) -> StepResult:
        if self.candidates is None:
            raise RuntimeError("call reset() before step()")
        if self.done:
            raise RuntimeError("episode is finished")
        n_actions = min(self.cfg.k, len(self._remaining))
        if not (isinstance(action, (int, np.integer)) and 0 <= action < n_actions):
            raise ValueError(f"action must be in [0, {n_actions}), got {action!r}")
        pos = self._remaining.pop(int(action))
        item = self.candidates.items[pos]
        probs = self.choice_probabilities(item)
        u = self._label_rng.random(len(probs))
        labels = {}
        for (r, p), draw in zip(probs.items(), u):
            labels[r] = int(p >= 0.5) if self.cfg.deterministic_labels else int(draw < p)
        reward = slot_reward(labels, self.cfg.reward)
        self._ctx = self._ctx.extend(item, self.cfg.horizon)
        done = self.done
        return StepResult(None if done else self._observe(), labels, reward, done)


def slot_reward(labels: Mapping[ResponseKind, int], coefficients: Mapping[ResponseKind, float]) -> float:
    total = 0.0
    for r, c in coefficients.items():
        v = contributions_label(labels) if r is ResponseKind.CONTRIBUTIONS else labels[r]
        total += c * v
    return total


# --------------------------------------------------------------------------
# policies


class Policy(ABC):
    """Chooses an action (window index) for each slot."""

    name: str = "policy"
    deterministic: bool = True

    @abstractmethod
    def propensities(self, obs: Observation) -> np.ndarray:
        """Probability of each window action; sums to 1."""

    def act(self, obs: Observation, rng: np.random.Generator | None = None) -> int:
        p = self.propensities(obs)
        if self.deterministic:
            return int(np.argmax(p))
        if rng is None:
            raise ValueError(f"{self.name} is stochastic and needs an rng")
        return int(rng.choice(len(p), p=p))

    def propensity(self, obs: Observation, action: int) -> float:
        return float(self.propensities(obs)[action])

    def decide(self, obs: Observation, rng: np.random.Generator | None = None) -> tuple[int, np.ndarray]:
        """Action together with the full propensity vector it was drawn from."""
        return self.act(obs, rng), self.propensities(obs)

    # Policies may also implement ``batch_decide(state, window)`` returning
    # ``(actions, propensities)`` for a lockstep batch; rollouts and replay
    # use it when present.


class RandomPolicy(Policy):
    """Uniform over the current window."""

    name = "random"
    deterministic = False

    def propensities(self, obs):
        n = obs.n_actions
        return np.full(n, 1.0 / n)

    def act(self, obs, rng=None):
        if rng is None:
            raise ValueError("random policy needs an rng")
        return int(rng.integers(obs.n_actions))

    def batch_decide(self, state, window):
        k = window.shape[1]
        actions = np.array([g.integers(k) for g in state.policy_rngs], dtype=np.intp)
        return actions, np.full(window.shape, 1.0 / k)


class PointwiseGreedyPolicy(Policy):
    """Always the top remaining item by SPR score."""

    name = "pointwise_greedy"

    def propensities(self, obs):
        p = np.zeros(obs.n_actions)
        p[0] = 1.0
        return p

    def act(self, obs, rng=None):
        return 0

    def batch_decide(self, state, window):
        props = np.zeros(window.shape)
        props[:, 0] = 1.0
        return np.zeros(window.shape[0], dtype=np.intp), props


class GreedyPolicy(Policy):
    """Scores the window with response models and takes the ``rank``-th best.

    ``rank=0`` is the sequential greedy choice; ``rank=1`` picks the second
    best (falling back to the best when the window holds a single item).
    Ties go to the earlier window position.
    """

    def __init__(self, name: str, models: Mapping[ResponseKind, ResponseModel], combination: CombinationConfig,
                 rank: int = 0, pin_top_slot: bool = False):
        if not models:
            raise ValueError(f"{name} needs at least one response model")
        self.name = name
        self.models = {as_response(r): m for r, m in models.items()}
        missing = set(combination.responses) - set(self.models)
        if missing:
            raise ValueError(f"no model for combined responses {sorted(r.value for r in missing)}")
        self.combination = combination
        self._bank = ModelBank(self.models)
        self.rank = rank
        self.pin_top_slot = pin_top_slot

    def scores(self, obs: Observation) -> np.ndarray:
        preds = self._bank.predict(obs.window, obs.context)
        return np.atleast_1d(combine_scores(preds, self.combination))

    def choose(self, obs: Observation) -> int:
        if obs.n_actions == 1 or (self.pin_top_slot and obs.slot_index == 0):
            return 0
        order = np.argsort(-self.scores(obs), kind="stable")
        return int(order[min(self.rank, len(order) - 1)])

    def propensities(self, obs):
        p = np.zeros(obs.n_actions)
        p[self.choose(obs)] = 1.0
        return p

    def act(self, obs, rng=None):
        return self.choose(obs)

    def decide(self, obs, rng=None):
        a = self.choose(obs)
        p = np.zeros(obs.n_actions)
        p[a] = 1.0
        return a, p

    def batch_decide(self, state, window):
        E, k = window.shape
        if k == 1 or (self.pin_top_slot and state.slot == 0):
            actions = np.zeros(E, dtype=np.intp)
        else:
            preds = self._bank.predict_batch(state, window)
            scores = combine_scores(preds, self.combination)
            order = np.argsort(-scores, axis=1, kind="stable")
            actions = order[:, min(self.rank, k - 1)]
        props = np.zeros(window.shape)
        props[np.arange(E), actions] = 1.0
        return actions, props


def sequential_greedy_oracle(cfg: SimConfig, reward: Mapping[ResponseKind, float] | None = None) -> GreedyPolicy:
    """Greedy policy scoring with the simulator's own choice model."""
    coef = dict(cfg.reward if reward is None else reward)
    return GreedyPolicy("sequential_greedy_oracle", cfg.oracle_models(), CombinationConfig(coef))


def sequential_greedy_estimated(models: Mapping[ResponseKind, ResponseModel] | ResponseModel | None,
                                reward: Mapping[ResponseKind, float] | None = None) -> GreedyPolicy:
    """Greedy policy scoring with trained models."""
    if models is None:
        raise ValueError("sequential_greedy_estimated requires a trained response model")
    if isinstance(models, ResponseModel):
        models = {models.response: models}
    coef = dict(reward) if reward is not None else {r: 1.0 for r in models}
    return GreedyPolicy("sequential_greedy_estimated", models, CombinationConfig(coef))


def policy_zoo(cfg: SimConfig, estimated: Mapping[ResponseKind, ResponseModel] | ResponseModel | None) -> dict[str, Policy]:
    """The four benchmark policies, keyed by name."""
    zoo: dict[str, Policy] = {
        "random": RandomPolicy(),
        "pointwise_greedy": PointwiseGreedyPolicy(),
        "sequential_greedy_oracle": sequential_greedy_oracle(cfg),
        "sequential_greedy_estimated": sequential_greedy_estimated(estimated, cfg.reward),
    }
    return zoo


# --------------------------------------------------------------------------
# episodes and rollouts


@dataclass
class SlotRecord:
    window_item_ids: list
    action: int
    propensities: list[float]
    labels: dict[ResponseKind, int]
    reward: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "window_item_ids": list(self.window_item_ids),
            "action": self.action,
            "propensities": [float(p) for p in self.propensities],
            "labels": {r.value: int(v) for r, v in self.labels.items()},
            "reward": float(self.reward),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SlotRecord":
        return cls(list(d["window_item_ids"]), int(d["action"]), [float(p) for p in d["propensities"]],
                   {ResponseKind(r): int(v) for r, v in d["labels"].items()}, float(d["reward"]))


@dataclass
class Episode:
    seed: int
    config_hash: str
    slots: list[SlotRecord]
    total_reward: float

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed,
            "config_hash": self.config_hash,
            "slots": [s.to_dict() for s in self.slots],
            "total_reward": float(self.total_reward),
        }, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "Episode":
        d = json.loads(line)
        return cls(int(d["seed"]), str(d["config_hash"]), [SlotRecord.from_dict(s) for s in d["slots"]],
                   float(d["total_reward"]))


def write_episodes(path, episodes: Iterable[Episode]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(ep.to_json() + "\n")


def read_episodes(path) -> list[Episode]:
    with open(path, encoding="utf-8") as fh:
        return [Episode.from_json(line) for line in fh if line.strip()]


def run_episode(env: MultiSlotEnv, policy: Policy, seed: int) -> Episode:
    obs = env.reset(seed)
    records = []
    total = 0.0
    while True:
        action, props = policy.decide(obs, env.policy_rng)
        res = env.step(action)
        records.append(SlotRecord([it.id for it in obs.window], action, list(props), res.labels, res.reward))
        total += res.reward
        if res.done:
            break
        obs = res.observation
    return Episode(int(seed), env.config_hash, records, total)


@dataclass
class RolloutResult:
    policy: str
    mean: float
    stderr: float
    episodes: list[Episode]

    @property
    def totals(self) -> np.ndarray:
        return np.array([ep.total_reward for ep in self.episodes])


BATCH_SIZE = 1000


def _run_batch(cfg: SimConfig, policy: Policy, seeds: Sequence[int]) -> list[Episode]:
    from ._batch import BatchState

    st = BatchState(cfg, seeds)
    bank = ModelBank(cfg.oracle_models())
    responses = cfg.responses
    chash = cfg.config_hash()
    E = st.n
    rows = np.arange(E)
    records: list[list[SlotRecord]] = [[] for _ in range(E)]
    totals = np.zeros(E)
    contrib_cols = [j for j, r in enumerate(responses) if r in CONTRIBUTION_RESPONSES]
    for _ in range(cfg.n_slots):
        window = st.window()
        actions, props = policy.batch_decide(st, window)
        preds = bank.predict_batch(st, window[rows, actions][:, None])
        P = np.column_stack([preds[r][:, 0] for r in responses])
        U = np.array([g.random(len(responses)) for g in st.label_rngs]).reshape(E, len(responses))
        L = (P >= 0.5) if cfg.deterministic_labels else (U < P)
        L = L.astype(int)
        reward = np.zeros(E)
        for r, c in cfg.reward.items():
            if r is ResponseKind.CONTRIBUTIONS:
                v = L[:, contrib_cols].any(axis=1).astype(int)
            else:
                v = L[:, responses.index(r)]
            reward = reward + c * v
        totals = totals + reward
        win_ids = window.tolist()
        acts = actions.tolist()
        plist = props.tolist()
        llist = L.tolist()
        rlist = reward.tolist()
        for e in range(E):
            records[e].append(SlotRecord(win_ids[e], acts[e], plist[e], dict(zip(responses, llist[e])), rlist[e]))
        st.place(actions)
    return [Episode(s, chash, rec, float(t)) for s, rec, t in zip(st.seeds, records, totals.tolist())]


def _run_chunk(args):
    cfg, policy, seeds = args
    if hasattr(policy, "batch_decide"):
        return _run_batch(cfg, policy, seeds)
    env = MultiSlotEnv(cfg)
    return [run_episode(env, policy, s) for s in seeds]


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def rollout(policy: Policy, cfg: SimConfig, episodes: int | None = None, seed: int | None = None,
            workers: int | None = None, vectorized: bool = True) -> RolloutResult:
    """Run ``episodes`` independent episodes and summarise total reward.

    Episode ``j`` uses ``episode_seed(seed, j)``, so results depend neither
    on the number of workers nor on whether the lockstep batch path
    (``vectorized``) or the step-by-step environment is used.
    """
    n = cfg.episodes if episodes is None else episodes
    if n < 1:
        raise ValueError("episodes must be >= 1")
    master = cfg.seed if seed is None else seed
    seeds = [episode_seed(master, j) for j in range(n)]
    workers = default_workers() if workers is None else max(1, workers)
    if vectorized:
        chunks = [(cfg, policy, seeds[i:i + BATCH_SIZE]) for i in range(0, n, BATCH_SIZE)]
    else:
        env = MultiSlotEnv(cfg)
        chunks = None
    if chunks is None:
        eps = [run_episode(env, policy, s) for s in seeds]
    elif workers == 1 or len(chunks) == 1:
        eps = [ep for c in chunks for ep in _run_chunk(c)]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(chunks))) as pool:
            eps = [ep for part in pool.map(_run_chunk, chunks) for ep in part]
    totals = np.array([ep.total_reward for ep in eps])
    stderr = float(totals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return RolloutResult(policy.name, float(totals.mean()), stderr, eps)


# --------------------------------------------------------------------------
# training data from logs


def replay_contexts(cfg: SimConfig, episode: Episode):
    """Yield ``(observation, record)`` for every logged slot of ``episode``.

    Candidates are regenerated from the episode seed, so logs only need item
    ids.
    """
    if episode.config_hash != cfg.config_hash():
        raise ValueError("episode was generated under a different simulator config")
    cands = generate_candidates(cfg, episode.seed)
    items = cands.items
    remaining = list(range(len(items)))
    ctx = SlotContext()
    for rec in episode.slots:
        window = tuple(items[p] for p in remaining[:cfg.k])
        if [it.id for it in window] != list(rec.window_item_ids):
            raise ValueError(f"logged window {rec.window_item_ids} does not match regenerated candidates")
        yield Observation(ctx.slot_index, window, ctx), rec
        pos = remaining.pop(rec.action)
        ctx = ctx.extend(items[pos], cfg.horizon)


def label_of(rec: SlotRecord, response: ResponseKind) -> int:
    if response is ResponseKind.CONTRIBUTIONS:
        return contributions_label(rec.labels)
    return int(rec.labels[response])


def training_examples(cfg: SimConfig, episodes: Sequence[Episode], schema: FeatureSchema,
                      response: ResponseKind) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feature rows of every placed item, its label and its episode index."""
    response = as_response(response)
    rows, labels, groups = [], [], []
    for e, ep in enumerate(episodes):
        for obs, rec in replay_contexts(cfg, ep):
            rows.append(schema.matrix([obs.window[rec.action]], obs.context, response)[0])
            labels.append(label_of(rec, response))
            groups.append(e)
    return np.array(rows), np.array(labels), np.array(groups)


def estimated_schema(cfg: SimConfig, drop: Iterable[str] = ("embedding_dot",)) -> FeatureSchema:
    """Schema of the estimated choice model: the oracle structure minus ``drop``.

    Dropping families reflects a partially known oracle structure.
    """
    fams = frozenset(ALL_FAMILIES) - frozenset(drop)
    return FeatureSchema(cfg.item_types, cfg.embedding_dim, cfg.horizon, fams, None)


def fit_estimated_models(cfg: SimConfig, episodes: int = 2500, seed: int | None = None,
                         drop: Iterable[str] = ("embedding_dot",), responses: Iterable[ResponseKind] | None = None,
                         params: TrainParams = TrainParams(), logs: Sequence[Episode] | None = None,
                         workers: int | None = None) -> dict[ResponseKind, ResponseModel]:
    """Train one model per reward response on random-policy logs."""
    if logs is None:
        master = (cfg.seed if seed is None else seed) + 1_000_003
        logs = rollout(RandomPolicy(), cfg, episodes, master, workers).episodes
    schema = estimated_schema(cfg, drop)
    responses = tuple(cfg.reward) if responses is None else tuple(as_response(r) for r in responses)
    out = {}
    for r in responses:
        X, y, _ = training_examples(cfg, logs, schema, r)
        out[r] = train(X, y, schema, r, params)
    return out


def interaction_free_schema(schema: FeatureSchema) -> FeatureSchema:
    return schema.with_families(schema.families - families_for(INTERACTION))
