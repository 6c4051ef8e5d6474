"""Dual-feed application-layer multicast: protocol library and simulator."""

from .buffer import PlayoutBuffer
from .engine import (
    Event,
    EventKind,
    MetricsRecord,
    ScenarioResult,
    Simulation,
    Topology,
    hop_metrics,
    recovery_metrics,
    run_scenario,
)
from .index import FEEDS, FeedId, IndexTable, NoSourceAvailable, PeerRecord
from .node import NodeState, Strategy
from .optimizer import FeedTree, compute_cc
from .scenario import LinkModel, ChurnModel, ScenarioConfig, ScenarioError, load_scenario

__all__ = [
    "FEEDS", "ChurnModel", "Event", "EventKind", "FeedId", "FeedTree", "IndexTable",
    "LinkModel", "MetricsRecord", "NoSourceAvailable", "NodeState", "PeerRecord",
    "PlayoutBuffer", "ScenarioConfig", "ScenarioError", "ScenarioResult", "Simulation",
    "Strategy", "Topology", "compute_cc", "hop_metrics", "load_scenario",
    "recovery_metrics", "run_scenario",
]
