"""Slot-response models.

A response model predicts the probability that the item placed at slot ``i``
receives a given response, conditioned on the items already placed above it.
The logistic instantiation scores::

    logistic(w . [logit(spr), current-slot features, interaction features])

Feature families (each can be switched off in a :class:`FeatureSchema`):

==============  ============  =================================================
family          group         columns
==============  ============  =================================================
spr             spr           logit of the item's SPR score(s)
bias            bias          constant 1
slot            current_slot  slot index ``i``
type            current_slot  one-hot item type
embedding       current_slot  raw item embedding
prev_type       interaction   one-hot type of the item at slot ``i - 1``
cross_prev      interaction   one-hot of (type_i, type_{i-1}) pairs
cross_window    interaction   (type_i, type_j) pair counts over previous slots
type_counts     interaction   per-type counts over previous slots
embedding_dot   interaction   max and mean dot product with previous items
same_creator    interaction   1 if any previous item shares the creator
==============  ============  =================================================

All interaction families look at most ``horizon`` slots back.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from ._batch import pairwise_dots
from .core import Item, ItemTypes, ResponseKind, as_response, logistic

SPR = "spr"
BIAS = "bias"
CURRENT_SLOT = "current_slot"
INTERACTION = "interaction"

FAMILY_GROUPS = {
    "spr": SPR,
    "bias": BIAS,
    "slot": CURRENT_SLOT,
    "type": CURRENT_SLOT,
    "embedding": CURRENT_SLOT,
    "prev_type": INTERACTION,
    "cross_prev": INTERACTION,
    "cross_window": INTERACTION,
    "type_counts": INTERACTION,
    "embedding_dot": INTERACTION,
    "same_creator": INTERACTION,
}
ALL_FAMILIES = tuple(FAMILY_GROUPS)


def families_for(*groups: str) -> frozenset[str]:
    """Feature families belonging to the named groups."""
    unknown = set(groups) - set(FAMILY_GROUPS.values())
    if unknown:
        raise ValueError(f"unknown feature groups: {sorted(unknown)}")
    return frozenset(f for f, g in FAMILY_GROUPS.items() if g in groups)


class SlotContext:
    """Items already placed above slot ``slot_index``, oldest first.

    ``previous_items`` may be a truncated tail of the full history; feature
    extraction further restricts it to the schema's horizon.
    """

    __slots__ = ("slot_index", "previous_items", "_cache")

    def __init__(self, slot_index: int = 0, previous_items: Sequence[Item] = ()):
        previous_items = tuple(previous_items)
        if slot_index < 0:
            raise ValueError("slot_index must be non-negative")
        if len(previous_items) > slot_index:
            raise ValueError("more previous items than slots above the current one")
        self.slot_index = slot_index
        self.previous_items = previous_items
        self._cache: dict = {}

    def __repr__(self):
        return f"SlotContext(slot_index={self.slot_index}, previous={[it.id for it in self.previous_items]})"

    def extend(self, item: Item, max_history: int | None = None) -> "SlotContext":
        """Context for the next slot after placing ``item`` at this one."""
        prev = self.previous_items + (item,)
        if max_history is not None:
            prev = prev[-max_history:] if max_history > 0 else ()
        return SlotContext(self.slot_index + 1, prev)

    def recent(self, horizon: int | None) -> tuple[Item, ...]:
        if horizon is None or horizon >= len(self.previous_items):
            return self.previous_items
        if horizon <= 0:
            return ()
        return self.previous_items[-horizon:]

    def type_counts(self, n_types: int, horizon: int | None = None) -> np.ndarray:
        counts = np.zeros(n_types)
        for it in self.recent(horizon):
            counts[it.item_type] += 1
        return counts

    def _summary(self, horizon: int | None, n_types: int):
        key = (horizon, n_types)
        hit = self._cache.get(key)
        if hit is None:
            prev = self.recent(horizon)
            counts = [0.0] * n_types
            for it in prev:
                counts[it.item_type] += 1.0
            counts = np.array(counts)
            emb = np.array([it.embedding for it in prev]) if prev else None
            hit = (
                prev,
                counts,
                emb,
                frozenset(it.creator_id for it in prev),
                prev[-1].item_type if prev else None,
            )
            self._cache[key] = hit
        return hit

    def contains(self, item: Item) -> bool:
        ids = self._cache.get("ids")
        if ids is None:
            ids = self._cache["ids"] = frozenset(it.id for it in self.previous_items)
        return item.id in ids


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered, named feature layout shared by every example of one model.

    ``spr_responses=None`` means the spr block holds a single column: the
    logit of the SPR score for whichever response is being predicted.
    """

    item_types: ItemTypes = field(default_factory=ItemTypes)
    embedding_dim: int = 8
    horizon: int = 3
    families: frozenset[str] = frozenset(ALL_FAMILIES)
    spr_responses: tuple[ResponseKind, ...] | None = None

    def __post_init__(self):
        fams = frozenset(self.families)
        unknown = fams - set(ALL_FAMILIES)
        if unknown:
            raise ValueError(f"unknown feature families: {sorted(unknown)}")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.embedding_dim < 0:
            raise ValueError("embedding_dim must be >= 0")
        object.__setattr__(self, "families", fams)
        if self.spr_responses is not None:
            object.__setattr__(self, "spr_responses", tuple(as_response(r) for r in self.spr_responses))
        names: list[str] = []
        groups: list[str] = []
        offsets: dict[str, int] = {}
        for fam in ALL_FAMILIES:
            if fam not in fams:
                continue
            offsets[fam] = len(names)
            cols = self._family_names(fam)
            names.extend(cols)
            groups.extend([FAMILY_GROUPS[fam]] * len(cols))
        object.__setattr__(self, "names", tuple(names))
        object.__setattr__(self, "groups", tuple(groups))
        object.__setattr__(self, "offsets", offsets)

    def _family_names(self, fam: str) -> list[str]:
        types = self.item_types.names
        if fam == "spr":
            if self.spr_responses is None:
                return ["spr"]
            return [f"spr:{r.value}" for r in self.spr_responses]
        if fam in ("bias", "slot", "same_creator"):
            return [fam]
        if fam == "type":
            return [f"type={t}" for t in types]
        if fam == "embedding":
            return [f"emb[{j}]" for j in range(self.embedding_dim)]
        if fam == "prev_type":
            return [f"prev_type={t}" for t in types]
        if fam == "cross_prev":
            return [f"cross_prev={a}|{b}" for a in types for b in types]
        if fam == "cross_window":
            return [f"cross_window={a}|{b}" for a in types for b in types]
        if fam == "type_counts":
            return [f"count={t}" for t in types]
        if fam == "embedding_dot":
            return ["dot_max", "dot_mean"]
        raise AssertionError(fam)

    @property
    def n_features(self) -> int:
        return len(self.names)

    @property
    def n_types(self) -> int:
        return len(self.item_types)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def with_families(self, families) -> "FeatureSchema":
        return FeatureSchema(self.item_types, self.embedding_dim, self.horizon, frozenset(families), self.spr_responses)

    def without_groups(self, *groups: str) -> "FeatureSchema":
        return self.with_families(self.families - families_for(*groups))

    def weights_from(self, named: Mapping[str, float]) -> np.ndarray:
        """Dense weight vector from a ``{feature name: weight}`` mapping; absent names are 0."""
        w = np.zeros(self.n_features)
        for name, value in named.items():
            if name in self.names:
                w[self.names.index(name)] = value
        return w

    def _static_row(self, item: Item, response: ResponseKind | None) -> np.ndarray:
        """Context-free part of an item's feature row, cached on the item."""
        key = (self, response if self.spr_responses is None else None)
        row = item._rows.get(key)
        if row is not None:
            return row
        T = self.n_types
        if item.item_type >= T:
            raise ValueError(f"item type index {item.item_type} outside [0, {T})")
        row = np.zeros(self.n_features)
        fam = self.families
        off = self.offsets
        if "spr" in fam:
            resp = self.spr_responses
            if resp is None:
                if response is None:
                    raise ValueError("a response is required when the schema has a single spr column")
                resp = (as_response(response),)
            for j, r in enumerate(resp):
                if r not in item.spr_logits:
                    raise ValueError(f"item {item.id!r} lacks an SPR score for {r.value}")
                row[off["spr"] + j] = item.spr_logits[r]
        if "bias" in fam:
            row[off["bias"]] = 1.0
        if "type" in fam:
            row[off["type"] + item.item_type] = 1.0
        if "embedding" in fam and self.embedding_dim:
            if item.embedding.shape[0] != self.embedding_dim:
                raise ValueError(f"embedding dimension {item.embedding.shape[0]} != schema {self.embedding_dim}")
            o = off["embedding"]
            row[o:o + self.embedding_dim] = item.embedding
        item._rows[key] = row
        return row

    def matrix(self, items: Sequence[Item], ctx: SlotContext, response: ResponseKind | None = None) -> np.ndarray:
        """Feature rows for each candidate in ``items`` under the same context."""
        for it in items:
            if ctx.contains(it):
                raise ValueError(f"item {it.id!r} is already placed in the context")
        X = np.array([self._static_row(it, response) for it in items])
        fam = self.families
        off = self.offsets
        if "slot" in fam:
            X[:, off["slot"]] = ctx.slot_index
        T = self.n_types
        prev, counts, prev_emb, creators, last_type = ctx._summary(self.horizon, T)
        if not prev:
            return X
        types = [it.item_type for it in items]
        if "prev_type" in fam:
            X[:, off["prev_type"] + last_type] = 1.0
        if "cross_prev" in fam:
            o = off["cross_prev"] + last_type
            for r, t in enumerate(types):
                X[r, o + t * T] = 1.0
        if "cross_window" in fam:
            o = off["cross_window"]
            for r, t in enumerate(types):
                X[r, o + t * T:o + (t + 1) * T] = counts
        if "type_counts" in fam:
            o = off["type_counts"]
            X[:, o:o + T] = counts
        if "embedding_dot" in fam:
            o = off["embedding_dot"]
            dots = pairwise_dots(np.array([it.embedding for it in items]), prev_emb)
            X[:, o] = dots.max(axis=1)
            X[:, o + 1] = dots.sum(axis=1) / len(prev)
        if "same_creator" in fam:
            o = off["same_creator"]
            for r, it in enumerate(items):
                if it.creator_id in creators:
                    X[r, o] = 1.0
        return X

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_types": list(self.item_types.names),
            "embedding_dim": self.embedding_dim,
            "horizon": self.horizon,
            "families": [f for f in ALL_FAMILIES if f in self.families],
            "spr_responses": None if self.spr_responses is None else [r.value for r in self.spr_responses],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FeatureSchema":
        spr = data.get("spr_responses")
        return cls(
            item_types=ItemTypes(tuple(data["item_types"])),
            embedding_dim=int(data["embedding_dim"]),
            horizon=int(data["horizon"]),
            families=frozenset(data["families"]),
            spr_responses=None if spr is None else tuple(ResponseKind(r) for r in spr),
        )


def extract_features(item: Item, ctx: SlotContext, response: ResponseKind, schema: FeatureSchema) -> np.ndarray:
    """Feature vector of one candidate at ``ctx.slot_index``."""
    return schema.matrix([item], ctx, response)[0]


@dataclass(frozen=True, eq=False)
class ResponseModel:
    """Logistic slot-response model for a single response."""

    response: ResponseKind
    weights: np.ndarray
    schema: FeatureSchema

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != self.schema.n_features:
            raise ValueError(f"{w.shape[0]} weights for a schema with {self.schema.n_features} features")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "response", as_response(self.response))

    @property
    def horizon(self) -> int:
        return self.schema.horizon

    def predict_many(self, items: Sequence[Item], ctx: SlotContext) -> np.ndarray:
        return logistic(self.schema.matrix(items, ctx, self.response) @ self.weights)

    def predict(self, item: Item, ctx: SlotContext) -> float:
        return float(self.predict_many([item], ctx)[0])

    def named_weights(self) -> dict[str, float]:
        return dict(zip(self.schema.names, map(float, self.weights)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "response": self.response.value,
            "schema": self.schema.to_dict(),
            "weights": [float(v) for v in self.weights],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ResponseModel":
        return cls(ResponseKind(data["response"]), np.asarray(data["weights"], dtype=float), FeatureSchema.from_dict(data["schema"]))

    @classmethod
    def from_json(cls, text: str) -> "ResponseModel":
        return cls.from_dict(json.loads(text))


def predict(model: ResponseModel, item: Item, ctx: SlotContext) -> float:
    """Probability that ``item`` placed at ``ctx.slot_index`` gets ``model.response``."""
    return model.predict(item, ctx)


def spr_passthrough_model(response: ResponseKind, item_types: ItemTypes | None = None, embedding_dim: int = 8) -> ResponseModel:
    """Model whose prediction is the (clamped) SPR score itself."""
    schema = FeatureSchema(item_types or ItemTypes(), embedding_dim, 0, frozenset({"spr"}))
    return ResponseModel(response, np.ones(1), schema)


class ModelBank:
    """Response models grouped for joint evaluation.

    Models that share one schema with explicit ``spr_responses`` produce the
    same feature matrix, so their weights are stacked and evaluated with a
    single product.
    """

    def __init__(self, models: Mapping[ResponseKind, ResponseModel]):
        self.models = {as_response(r): m for r, m in models.items()}
        shared: dict[int, list[ResponseKind]] = {}
        self._single: list[ResponseKind] = []
        for r, m in self.models.items():
            if m.schema.spr_responses is not None:
                shared.setdefault(id(m.schema), []).append(r)
            else:
                self._single.append(r)
        self._stacks = []
        for rs in shared.values():
            W = np.stack([self.models[r].weights for r in rs], axis=1)
            self._stacks.append((self.models[rs[0]].schema, rs, W))

    def __getstate__(self):
        return self.models

    def __setstate__(self, models):
        self.__init__(models)

    def predict(self, items: Sequence[Item], ctx: SlotContext) -> dict[ResponseKind, np.ndarray]:
        out: dict[ResponseKind, np.ndarray] = {}
        for schema, rs, W in self._stacks:
            P = logistic(schema.matrix(items, ctx) @ W)
            for j, r in enumerate(rs):
                out[r] = P[:, j]
        for r in self._single:
            out[r] = self.models[r].predict_many(items, ctx)
        return out

    def predict_batch(self, state, cand: np.ndarray) -> dict[ResponseKind, np.ndarray]:
        """Predictions for candidate positions ``cand`` of a lockstep batch state."""
        E, m = cand.shape
        out: dict[ResponseKind, np.ndarray] = {}
        for schema, rs, W in self._stacks:
            X = state.features(schema, cand)
            P = logistic(X.reshape(E * m, -1) @ W).reshape(E, m, -1)
            for j, r in enumerate(rs):
                out[r] = P[:, :, j]
        for r in self._single:
            m_ = self.models[r]
            X = state.features(m_.schema, cand, r)
            out[r] = logistic(X.reshape(E * m, -1) @ m_.weights).reshape(E, m)
        return out


def predict_responses(models: Mapping[ResponseKind, ResponseModel] | ModelBank, items: Sequence[Item],
                      ctx: SlotContext) -> dict[ResponseKind, np.ndarray]:
    """Predictions of several models over the same candidates."""
    bank = models if isinstance(models, ModelBank) else ModelBank(models)
    return bank.predict(items, ctx)


@dataclass(frozen=True)
class CombinationConfig:
    """Linear re-ranking score ``sum_r c_r * p_r`` over response predictions."""

    coefficients: Mapping[ResponseKind, float]

    def __post_init__(self):
        coefs = {as_response(k): float(v) for k, v in dict(self.coefficients).items()}
        if not coefs or all(v == 0.0 for v in coefs.values()):
            raise ValueError("combination needs at least one nonzero coefficient")
        if not all(math.isfinite(v) for v in coefs.values()):
            raise ValueError("combination coefficients must be finite")
        object.__setattr__(self, "coefficients", coefs)

    @property
    def responses(self) -> tuple[ResponseKind, ...]:
        return tuple(self.coefficients)

    def to_dict(self) -> dict[str, float]:
        return {k.value: v for k, v in self.coefficients.items()}


def combine_scores(predictions: Mapping[ResponseKind, Any], cfg: CombinationConfig):
    """Linear combination of per-response predictions (scalars or arrays)."""
    total = 0.0
    for r, c in cfg.coefficients.items():
        if r not in predictions:
            raise KeyError(f"missing prediction for response {r.value!r}")
        total = total + c * np.asarray(predictions[r], dtype=float)
    return float(total) if np.ndim(total) == 0 else total


@dataclass(frozen=True)
class TrainParams:
    """Hyperparameters for L2-regularised logistic regression.

    ``method="newton"`` uses damped Newton steps; ``"gd"`` uses full-batch
    gradient descent with step ``step_size`` (``None`` = 1 / Lipschitz bound)
    and optional Armijo backtracking.
    """

    l2: float = 1e-4
    tol: float = 1e-6
    max_iter: int = 100
    method: str = "newton"
    step_size: float | None = None
    backtracking: bool = True

    def __post_init__(self):
        if self.method not in ("newton", "gd"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.l2 < 0 or self.tol <= 0 or self.max_iter < 1:
            raise ValueError("invalid training hyperparameters")


@dataclass
class FitResult:
    weights: np.ndarray
    n_iter: int
    grad_norm: float
    converged: bool
    loss_history: list[float]


def _loss_grad(X, y, w, l2):
    z = X @ w
    n = X.shape[0]
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))
    p = logistic(z)
    grad = X.T @ (p - y) / n + l2 * w
    return loss, grad, p


def _loss(X, y, w, l2):
    z = X @ w
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))


def fit_logistic(X, y, params: TrainParams = TrainParams(), w0=None) -> FitResult:
    """Minimise mean log-loss + ``l2 / 2 * |w|^2`` over the full batch."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature values")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    if y.min() == y.max():
        raise ValueError("training data must contain both label classes")
    n, d = X.shape
    w = np.zeros(d) if w0 is None else np.array(w0, dtype=float)
    l2 = params.l2
    loss, grad, p = _loss_grad(X, y, w, l2)
    history = [loss]
    if params.method == "gd":
        step0 = params.step_size
        if step0 is None:
            # logistic loss curvature is bounded by |X|_2^2 / (4 n)
            step0 = 1.0 / (np.linalg.norm(X, 2) ** 2 / (4.0 * n) + l2)
    it = 0
    gnorm = float(np.linalg.norm(grad))
    while gnorm > params.tol and it < params.max_iter:
        if params.method == "newton":
            H = (X.T * (p * (1.0 - p))) @ X / n
            H[np.diag_indices_from(H)] += l2
            direction = -np.linalg.solve(H, grad)
            step = 1.0
        else:
            direction = -grad
            step = step0
        slope = float(grad @ direction)
        if params.method == "newton" or params.backtracking:
            while True:
                cand = w + step * direction
                new_loss = _loss(X, y, cand, l2)
                if new_loss <= loss + 1e-4 * step * slope or step < 1e-12:
                    break
                step *= 0.5
            if new_loss > loss:
                break
        w = w + step * direction
        loss, grad, p = _loss_grad(X, y, w, l2)
        gnorm = float(np.linalg.norm(grad))
        history.append(loss)
        it += 1
    return FitResult(w, it, gnorm, gnorm <= params.tol, history)


def train(X, y, schema: FeatureSchema, response: ResponseKind, params: TrainParams = TrainParams()) -> ResponseModel:
    """Fit a :class:`ResponseModel` on ``(features, binary label)`` rows."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != schema.n_features:
        raise ValueError(f"feature matrix of shape {X.shape} does not match schema with {schema.n_features} features")
    fit = fit_logistic(X, y, params)
    return ResponseModel(response, fit.weights, schema)


def compute_auc(scores, labels) -> float:
    """ROC AUC as the Mann-Whitney statistic, ties counted half."""
    s = np.asarray(scores, dtype=float).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise ValueError("labels must be binary")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def action_value_labels(rewards, lam: float) -> np.ndarray:
    """Discounted reward-to-go ``sum_k lam**k * r[i + k]`` for every slot."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"decay must be in [0, 1], got {lam}")
    r = np.asarray(rewards, dtype=float).reshape(-1)
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    out = np.empty_like(r)
    acc = 0.0
    for i in range(r.size - 1, -1, -1):
        acc = r[i] + lam * acc
        out[i] = acc
    return out
