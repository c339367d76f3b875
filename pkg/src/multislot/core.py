"""Domain types and numeric helpers shared by every other module."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Mapping, Sequence

import numpy as np

#: Clamp applied to probabilities before taking their logit.
PROB_EPS = 1e-6


class ResponseKind(str, enum.Enum):
    """User responses a slot can receive.

    ``CONTRIBUTIONS`` is derived (positive when any of like, comment, share
    or skip is positive) and never logged as a primary label.
    """

    CLICK = "click"
    LIKE = "like"
    COMMENT = "comment"
    SHARE = "share"
    SKIP = "skip"
    CONTRIBUTIONS = "contributions"

    @property
    def is_derived(self) -> bool:
        return self is ResponseKind.CONTRIBUTIONS


PRIMARY_RESPONSES = (
    ResponseKind.CLICK,
    ResponseKind.LIKE,
    ResponseKind.COMMENT,
    ResponseKind.SHARE,
    ResponseKind.SKIP,
)
CONTRIBUTION_RESPONSES = (
    ResponseKind.LIKE,
    ResponseKind.COMMENT,
    ResponseKind.SHARE,
    ResponseKind.SKIP,
)


def contributions_label(labels: Mapping[ResponseKind, int]) -> int:
    """Derived contributions label: 1 if any contribution response fired."""
    return int(any(labels.get(r, 0) for r in CONTRIBUTION_RESPONSES))


def contributions_score(spr_scores: Mapping[ResponseKind, float]) -> float:
    """Probability that at least one contribution response fires, assuming independence."""
    miss = 1.0
    for r in CONTRIBUTION_RESPONSES:
        if r in spr_scores:
            miss *= 1.0 - spr_scores[r]
    return 1.0 - miss


def as_response(value: ResponseKind | str) -> ResponseKind:
    if isinstance(value, ResponseKind):
        return value
    return ResponseKind(str(value).lower())


@dataclass(frozen=True)
class ItemTypes:
    """Closed, configurable vocabulary of item types (size ``T``)."""

    names: tuple[str, ...] = ("VIDEO", "IMAGE", "ACTIVITY", "COMPANY", "JOB", "ARTICLE")

    def __post_init__(self):
        if not self.names:
            raise ValueError("at least one item type is required")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate item type names: {self.names}")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


def clamp_probability(p, eps: float = PROB_EPS):
    """Clip a probability into ``[eps, 1 - eps]``.

    Values outside ``[0, 1]`` indicate corrupt data and raise ``ValueError``.
    """
    if type(p) is float or isinstance(p, (int, np.floating, np.integer)):
        v = float(p)
        if not 0.0 <= v <= 1.0:  # also rejects nan
            raise ValueError(f"probability outside [0, 1]: {p!r}")
        return min(max(v, eps), 1.0 - eps)
    arr = np.asarray(p, dtype=float)
    if not ((arr >= 0.0) & (arr <= 1.0)).all():
        raise ValueError(f"probability outside [0, 1]: {p!r}")
    return np.clip(arr, eps, 1.0 - eps)


def logit(p, eps: float = PROB_EPS):
    """Log-odds ``log(p / (1 - p))`` of a clamped probability."""
    q = clamp_probability(p, eps)
    if isinstance(q, float):
        return math.log(q) - math.log1p(-q)
    return np.log(q) - np.log1p(-q)


def logistic(x):
    """Logistic sigmoid ``1 / (1 + exp(-x))``, evaluated without overflow."""
    if isinstance(x, (float, int, np.floating, np.integer)):
        v = float(x)
        if not math.isfinite(v):
            raise ValueError(f"logistic requires finite input, got {x!r}")
        if v >= 0:
            return 1.0 / (1.0 + math.exp(-v))
        e = math.exp(v)
        return e / (1.0 + e)
    arr = np.asarray(x, dtype=float)
    if not np.isfinite(arr).all():
        raise ValueError(f"logistic requires finite input, got {x!r}")
    return np.exp(-np.logaddexp(0.0, -arr))


@dataclass(frozen=True, eq=False)
class Item:
    """A candidate item.

    ``spr_scores`` are second-pass-ranking probabilities keyed by response;
    they are clamped into ``[PROB_EPS, 1 - PROB_EPS]`` on construction.
    Items compare by identity, never by value.
    """

    id: Hashable
    creator_id: Hashable
    item_type: int
    embedding: np.ndarray
    spr_scores: Mapping[ResponseKind, float]
    spr_logits: Mapping[ResponseKind, float] = field(init=False, repr=False)
    _rows: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        emb = np.array(self.embedding, dtype=float)
        if emb.ndim != 1:
            emb = emb.reshape(-1)
        emb.flags.writeable = False
        scores = {}
        logits = {}
        for k, v in self.spr_scores.items():
            k = k if type(k) is ResponseKind else as_response(k)
            scores[k] = q = clamp_probability(v)
            logits[k] = math.log(q) - math.log1p(-q)
        set_ = object.__setattr__
        set_(self, "embedding", emb)
        set_(self, "spr_scores", scores)
        set_(self, "spr_logits", logits)
        set_(self, "_rows", {})
        if int(self.item_type) != self.item_type or self.item_type < 0:
            raise ValueError(f"item_type must be a non-negative index, got {self.item_type!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "creator_id": self.creator_id,
            "item_type": int(self.item_type),
            "embedding": [float(v) for v in self.embedding],
            "spr_scores": {k.value: float(v) for k, v in self.spr_scores.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Item":
        return cls(
            id=data["id"],
            creator_id=data["creator_id"],
            item_type=int(data["item_type"]),
            embedding=np.asarray(data["embedding"], dtype=float),
            spr_scores={ResponseKind(k): float(v) for k, v in data["spr_scores"].items()},
        )


@dataclass(frozen=True)
class CandidateList:
    """Items in non-increasing order of the designated primary SPR score."""

    items: tuple[Item, ...]
    primary: ResponseKind = ResponseKind.CLICK

    def __post_init__(self):
        items = tuple(self.items)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "primary", as_response(self.primary))
        if not items:
            raise ValueError("candidate list must contain at least one item")
        scores = [it.spr_scores[self.primary] for it in items]
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise ValueError(f"candidate list is not sorted by spr[{self.primary.value}]")
        dims = {it.embedding.shape[0] for it in items}
        if len(dims) > 1:
            raise ValueError(f"inconsistent embedding dimensions: {sorted(dims)}")
        ids = [it.id for it in items]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate item ids in candidate list")

    @classmethod
    def from_unsorted(cls, items: Iterable[Item], primary: ResponseKind = ResponseKind.CLICK):
        primary = as_response(primary)
        ordered = sorted(items, key=lambda it: -it.spr_scores[primary])
        return cls(tuple(ordered), primary)

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, idx):
        return self.items[idx]

    def __iter__(self):
        return iter(self.items)


@dataclass(frozen=True)
class Slot:
    index: int
    item: Item
    predicted: Mapping[ResponseKind, float]
    original_position: int


@dataclass(frozen=True)
class RerankedList:
    """Slot assignment produced by a re-ranker; a permutation of its input."""

    slots: tuple[Slot, ...]

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))
        for i, s in enumerate(self.slots):
            if s.index != i:
                raise ValueError(f"slot indices must be contiguous from 0, got {s.index} at {i}")
        positions = [s.original_position for s in self.slots]
        if sorted(positions) != list(range(len(positions))):
            raise ValueError("reranked list is not a permutation of its input")

    @property
    def items(self) -> tuple[Item, ...]:
        return tuple(s.item for s in self.slots)

    @property
    def ids(self) -> list:
        return [s.item.id for s in self.slots]

    @property
    def original_positions(self) -> list[int]:
        return [s.original_position for s in self.slots]

    def __len__(self) -> int:
        return len(self.slots)


def is_permutation_of(reranked: RerankedList, candidates: Sequence[Item] | CandidateList) -> bool:
    """Multiset equality of item ids between an output list and its input."""
    return sorted(map(repr, reranked.ids)) == sorted(repr(it.id) for it in candidates)
