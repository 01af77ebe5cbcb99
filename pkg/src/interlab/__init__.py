"""Desk-scale living-lab platform: interleaved online evaluation for search
and recommendation systems, with a feedback gateway, reference baselines,
click simulation, and round reporting."""

__version__ = "0.1.0"

from .interleave import CoinSource, JudgeResult, attribute_clicks, highest_exp_rank, judge, team_draft_interleave
from .metrics import RewardWeights, aggregate_round, ctr, nreward, outcome, reward
from .model import TaskType, TeamLabel

__all__ = [
    "CoinSource",
    "JudgeResult",
    "RewardWeights",
    "TaskType",
    "TeamLabel",
    "aggregate_round",
    "attribute_clicks",
    "ctr",
    "highest_exp_rank",
    "judge",
    "nreward",
    "outcome",
    "reward",
    "team_draft_interleave",
    "__version__",
]
