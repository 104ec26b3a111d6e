"""Fairness- and diversity-aware playlist ranking for call-in content forums."""

from __future__ import annotations

from .calllog import (
    InteractionLabel,
    ListenEvent,
    Session,
    TrafficProfile,
    assemble_sessions,
    estimate_traffic_profile,
    label_interaction,
    parse_call_logs,
)
from .exposure import (
    AspectRule,
    ExposureLedger,
    ExposurePlan,
    FairnessPolicy,
    ItemRule,
    SlotSchedule,
    aspect_shares,
    build_plan,
    total_inventory,
)
from .metrics import MetricsReport, build_report, emit_report, gini, hhi, lorenz_points, normalized_rmse
from .ranker import DiversityConstraints, RankedList, check_constraints, derive_constraints, long_term_fairness, short_term_diversity
from .recommender import Item, RecommendedPool, TreeEnsemble, recommended_pool, train
from .simulator import ModelVariant, SimulationConfig, generate_synthetic, replay, run_comparison
from .users import PreferenceVector, build_preference_vector, elbow_select_k, filter_engaged_users, k_prototypes

__version__ = "0.1.0"

__all__ = [
    "aspect_shares",
    "AspectRule",
    "assemble_sessions",
    "build_plan",
    "build_preference_vector",
    "build_report",
    "check_constraints",
    "derive_constraints",
    "DiversityConstraints",
    "elbow_select_k",
    "emit_report",
    "estimate_traffic_profile",
    "ExposureLedger",
    "ExposurePlan",
    "FairnessPolicy",
    "filter_engaged_users",
    "generate_synthetic",
    "gini",
    "hhi",
    "InteractionLabel",
    "Item",
    "ItemRule",
    "k_prototypes",
    "label_interaction",
    "ListenEvent",
    "long_term_fairness",
    "lorenz_points",
    "MetricsReport",
    "ModelVariant",
    "normalized_rmse",
    "parse_call_logs",
    "PreferenceVector",
    "RankedList",
    "recommended_pool",
    "RecommendedPool",
    "replay",
    "run_comparison",
    "Session",
    "short_term_diversity",
    "SimulationConfig",
    "SlotSchedule",
    "total_inventory",
    "TrafficProfile",
    "train",
    "TreeEnsemble",
]

