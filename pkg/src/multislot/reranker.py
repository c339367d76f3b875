"""List construction: the sequential greedy re-ranker and the exponential-decay baseline."""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import CandidateList, ResponseKind, RerankedList, Slot, as_response
from .models import CombinationConfig, ResponseModel, SlotContext, combine_scores, predict_responses


@dataclass(frozen=True)
class SgaConfig:
    """Sequential greedy settings.

    ``max_deviation=None`` disables the position-deviation constraint.
    """

    models: Mapping[ResponseKind, ResponseModel]
    combination: CombinationConfig
    k: int = 3
    max_deviation: int | None = 3
    pin_top_slot: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_deviation is not None and self.max_deviation < 0:
            raise ValueError("max_deviation must be >= 0")
        models = {as_response(r): m for r, m in dict(self.models).items()}
        missing = set(self.combination.responses) - set(models)
        if missing:
            raise ValueError(f"no model for combined responses {sorted(r.value for r in missing)}")
        object.__setattr__(self, "models", models)

    @property
    def history(self) -> int:
        return max((m.horizon for m in self.models.values()), default=0)


@dataclass
class SgaTrace:
    """Instrumentation of one :func:`sga_rerank` run."""

    calls: Counter = field(default_factory=Counter)
    windows: list[list[int]] = field(default_factory=list)
    scores: list[np.ndarray] = field(default_factory=list)
    forced: list[bool] = field(default_factory=list)


def sga_rerank(candidates: CandidateList, cfg: SgaConfig, *, trace: SgaTrace | None = None) -> RerankedList:
    """Re-rank ``candidates`` slot by slot with the sequential greedy algorithm.

    At each slot the top ``k`` remaining items (in SPR order) are scored
    against the already-placed items and the best one is placed. Ties go to
    the item earlier in SPR order. With a finite ``max_deviation`` D an item
    may not move up more than D positions, and an item whose original
    position plus D equals the current slot is placed immediately.
    """
    items = candidates.items
    n = len(items)
    if n == 0:
        raise ValueError("empty candidate list")
    D = cfg.max_deviation
    remaining = list(range(n))  # original positions, ascending
    ctx = SlotContext()
    slots: list[Slot] = []
    hist = cfg.history

    for i in range(n):
        if i == 0 and cfg.pin_top_slot:
            pick = remaining[0]
            predicted: dict = {}
        else:
            window = remaining[:cfg.k]
            if D is not None and remaining[0] + D <= i:
                eligible = [remaining[0]]
                forced = True
            else:
                eligible = [p for p in window if D is None or p - i <= D]
                forced = False
            window_items = [items[p] for p in eligible]
            preds = predict_responses(cfg.models, window_items, ctx)
            scores = np.atleast_1d(combine_scores(preds, cfg.combination))
            best = int(np.argmax(scores))  # first maximum = highest SPR among ties
            pick = eligible[best]
            predicted = {r: float(v[best]) for r, v in preds.items()}
            if trace is not None:
                for r in cfg.models:
                    trace.calls[r] += len(window_items)
                trace.windows.append(list(eligible))
                trace.scores.append(scores)
                trace.forced.append(forced)
        remaining.remove(pick)
        slots.append(Slot(i, items[pick], predicted, pick))
        ctx = ctx.extend(items[pick], hist)
    return RerankedList(tuple(slots))


def count_model_calls(trace: SgaTrace) -> dict[ResponseKind, int]:
    """Number of model evaluations per response recorded in ``trace``."""
    return dict(trace.calls)


def expected_calls_unconstrained(n: int, k: int, pin_top_slot: bool = True) -> int:
    """Closed-form call count per response when no deviation limit applies."""
    start = 1 if pin_top_slot else 0
    return sum(min(k, n - i) for i in range(start, n))


@dataclass(frozen=True)
class DecayConfig:
    """Exponential creator-decay re-ranker settings."""

    alpha: float = 0.8
    response: ResponseKind = ResponseKind.CLICK

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        object.__setattr__(self, "response", as_response(self.response))


def exp_decay_rerank(candidates: CandidateList, cfg: DecayConfig) -> RerankedList:
    """Scale the k-th item of each creator by ``alpha ** (k - 1)`` and re-sort."""
    items = candidates.items
    if not items:
        raise ValueError("empty candidate list")
    seen: defaultdict = defaultdict(int)
    adjusted = []
    for it in items:
        seen[it.creator_id] += 1
        adjusted.append(it.spr_scores[cfg.response] * cfg.alpha ** (seen[it.creator_id] - 1))
    order = sorted(range(len(items)), key=lambda p: -adjusted[p])  # stable: ties keep SPR order
    return RerankedList(tuple(
        Slot(i, items[p], {cfg.response: adjusted[p]}, p) for i, p in enumerate(order)
    ))
