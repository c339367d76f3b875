"""Slot-aware re-ranking of recommendation lists with offline evaluation tools."""
from .core import CandidateList, Item, ItemTypes, RerankedList, ResponseKind, Slot
from .models import CombinationConfig, FeatureSchema, ResponseModel, SlotContext, TrainParams, train
from .reranker import DecayConfig, SgaConfig, exp_decay_rerank, sga_rerank
from .simulator import MultiSlotEnv, SimConfig, policy_zoo, rollout
from .replay import ReplayLog, full_is_estimate, one_step_is_estimate, exact_match_replay, pareto_frontier

__all__ = [
    "CandidateList", "Item", "ItemTypes", "RerankedList", "ResponseKind", "Slot",
    "CombinationConfig", "FeatureSchema", "ResponseModel", "SlotContext", "TrainParams", "train",
    "DecayConfig", "SgaConfig", "exp_decay_rerank", "sga_rerank",
    "MultiSlotEnv", "SimConfig", "policy_zoo", "rollout",
    "ReplayLog", "full_is_estimate", "one_step_is_estimate", "exact_match_replay", "pareto_frontier",
]
