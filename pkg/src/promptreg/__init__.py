"""Regularized natural-language prompt optimization over pluggable LLM
backends, with a deterministic scripted backend for replayable runs."""

from .errors import PromptRegError
from .gateway import ChatRequest, EngineConfig, Gateway, Role, RoleAssignment
from .loop import OptimizationRun, RunConfig, run_optimization
from .metrics import (
    Channel,
    ChannelDiagnostics,
    PromptVersion,
    ScopeEstimate,
)
from .rulebank import Rule, RuleBank

__all__ = [
    "Channel",
    "ChannelDiagnostics",
    "ChatRequest",
    "EngineConfig",
    "Gateway",
    "OptimizationRun",
    "PromptRegError",
    "PromptVersion",
    "Role",
    "RoleAssignment",
    "Rule",
    "RuleBank",
    "RunConfig",
    "ScopeEstimate",
    "run_optimization",
]

__version__ = "0.1.0"
