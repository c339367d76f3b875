"""Lockstep evaluation of many simulator episodes at once.

Mirrors :class:`~multislot.simulator.MultiSlotEnv` and
:meth:`~multislot.models.FeatureSchema.matrix` with arrays of shape
``(episodes, candidates, features)``. Every episode keeps its own RNG
streams, so results match the one-step-at-a-time environment.
"""
from __future__ import annotations

import numpy as np

from .core import ResponseKind, logit


def pairwise_dots(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a[..., m, d]`` x ``b[..., h, d]`` -> ``[..., m, h]`` with a fixed summation order."""
    return (a[..., :, None, :] * b[..., None, :, :]).sum(axis=-1)


class BatchState:
    """Candidates and placement history of ``len(seeds)`` episodes."""

    def __init__(self, cfg, seeds):
        from .simulator import _draw, _streams

        self.cfg = cfg
        self.seeds = [int(s) for s in seeds]
        scores, types, creators, embs = [], [], [], []
        self.label_rngs, self.policy_rngs = [], []
        for s in self.seeds:
            items_rng, label_rng, policy_rng = _streams(s)
            sc, ty, cr, em = _draw(cfg, items_rng)
            scores.append(sc)
            types.append(ty)
            creators.append(cr)
            embs.append(em)
            self.label_rngs.append(label_rng)
            self.policy_rngs.append(policy_rng)
        self.n = len(self.seeds)
        self.scores = scores
        self.types = np.array(types, dtype=np.intp)
        self.creators = np.array(creators)
        self.emb = np.array(embs, dtype=float).reshape(self.n, cfg.n_items, cfg.embedding_dim)
        self._logits: dict[ResponseKind, np.ndarray] = {}
        self.rem = np.tile(np.arange(cfg.n_items), (self.n, 1))
        self.hist = np.zeros((self.n, 0), dtype=np.intp)
        self.slot = 0
        self._rows = np.arange(self.n)[:, None]

    def logits(self, r: ResponseKind) -> np.ndarray:
        out = self._logits.get(r)
        if out is None:
            try:
                out = np.array([[logit(sc[r]) for sc in ep] for ep in self.scores]).reshape(self.n, -1)
            except KeyError:
                raise ValueError(f"candidates lack an SPR score for {r.value}") from None
            self._logits[r] = out
        return out

    def window(self) -> np.ndarray:
        return self.rem[:, :self.cfg.k]

    def place(self, actions: np.ndarray) -> None:
        actions = np.asarray(actions, dtype=np.intp)
        picked = self.rem[np.arange(self.n), actions]
        keep = np.ones(self.rem.shape, dtype=bool)
        keep[np.arange(self.n), actions] = False
        self.rem = self.rem[keep].reshape(self.n, -1)
        self.hist = np.column_stack([self.hist, picked])
        self.slot += 1

    def features(self, schema, cand: np.ndarray, response: ResponseKind | None = None) -> np.ndarray:
        """Feature tensor ``(episodes, len(cand[0]), n_features)``."""
        E, m = cand.shape
        T = schema.n_types
        fam = schema.families
        off = schema.offsets
        rows = self._rows
        X = np.zeros((E, m, schema.n_features))
        ct = self.types[rows, cand]
        if np.any(ct >= T):
            raise ValueError(f"item type index outside [0, {T})")
        if "spr" in fam:
            resp = schema.spr_responses
            if resp is None:
                if response is None:
                    raise ValueError("a response is required when the schema has a single spr column")
                resp = (response,)
            for j, r in enumerate(resp):
                X[:, :, off["spr"] + j] = self.logits(r)[rows, cand]
        if "bias" in fam:
            X[:, :, off["bias"]] = 1.0
        if "slot" in fam:
            X[:, :, off["slot"]] = self.slot
        if "type" in fam:
            np.put_along_axis(X, (off["type"] + ct)[..., None], 1.0, axis=2)
        ce = self.emb[rows, cand]
        if "embedding" in fam and schema.embedding_dim:
            if ce.shape[2] != schema.embedding_dim:
                raise ValueError(f"embedding dimension {ce.shape[2]} != schema {schema.embedding_dim}")
            o = off["embedding"]
            X[:, :, o:o + schema.embedding_dim] = ce

        h = min(self.slot, self.cfg.horizon, schema.horizon)
        if h == 0:
            return X
        prev = self.hist[:, -h:]
        pt = self.types[rows, prev]
        last = pt[:, -1]
        counts = (pt[:, :, None] == np.arange(T)).sum(axis=1).astype(float)
        if "prev_type" in fam:
            idx = np.broadcast_to((off["prev_type"] + last)[:, None, None], (E, m, 1))
            np.put_along_axis(X, idx, 1.0, axis=2)
        if "cross_prev" in fam:
            np.put_along_axis(X, (off["cross_prev"] + ct * T + last[:, None])[..., None], 1.0, axis=2)
        if "cross_window" in fam:
            o = off["cross_window"]
            for t in range(T):
                mask = ct == t
                if mask.any():
                    block = X[:, :, o + t * T:o + (t + 1) * T]
                    block[mask] = np.broadcast_to(counts[:, None, :], (E, m, T))[mask]
        if "type_counts" in fam:
            o = off["type_counts"]
            X[:, :, o:o + T] = counts[:, None, :]
        if "embedding_dot" in fam:
            o = off["embedding_dot"]
            dots = pairwise_dots(ce, self.emb[rows, prev])
            X[:, :, o] = dots.max(axis=2)
            X[:, :, o + 1] = dots.sum(axis=2) / h
        if "same_creator" in fam:
            pc = self.creators[rows, prev]
            cc = self.creators[rows, cand]
            X[:, :, off["same_creator"]] = (cc[:, :, None] == pc[:, None, :]).any(axis=2)
        return X
