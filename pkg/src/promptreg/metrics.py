"""Pure computations for the prompt-inefficiency formalism.

Capacity is the prompt's token length under an injectable counter (whitespace
split by default). Scope narrowness is one minus the mean generalization scope
of the prompt's rules; the optimizer itself only ever estimates the *sign* of
its change, so ``ScopeEstimate`` exists for the metric API and diagnostics.
Inefficiency is the product of the two, and its step-wise log-change splits
additively into a capacity term and a scope term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from .errors import DegenerateTransitionError, LogDecompositionError

TokenCounter = Callable[[str], int]


def whitespace_token_count(text: str) -> int:
    """Default token counter: whitespace-delimited chunks; empty text is 0."""
    return len(text.split())


class Channel(str, Enum):
    CAPACITY = "CAPACITY"
    SCOPE = "SCOPE"


@dataclass(frozen=True)
class PromptVersion:
    """One prompt text with its token count and step index."""

    text: str
    token_count: int
    version: int

    @classmethod
    def create(
        cls,
        text: str,
        version: int = 0,
        counter: TokenCounter = whitespace_token_count,
    ) -> "PromptVersion":
        return cls(text=text, token_count=counter(text), version=version)


@dataclass(frozen=True)
class ScopeEstimate:
    """Mean rule scope in [0, 1]; narrowness is its exact complement."""

    mean_scope: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.mean_scope <= 1.0:
            raise ValueError(f"mean_scope must lie in [0, 1], got {self.mean_scope}")

    @property
    def narrowness(self) -> float:
        return 1.0 - self.mean_scope


@dataclass(frozen=True)
class ChannelDiagnostics:
    """Per-transition channel measurements feeding regularization routing."""

    rho_c: float
    b_c: bool
    b_w: bool
    active: frozenset[Channel]
    sgn_delta_w: str  # one of "+", "-", "0"

    def __post_init__(self) -> None:
        if self.sgn_delta_w not in {"+", "-", "0"}:
            raise ValueError(f"invalid sign {self.sgn_delta_w!r}")
        if (Channel.CAPACITY in self.active) != self.b_c:
            raise ValueError("CAPACITY membership inconsistent with b_c")
        if (Channel.SCOPE in self.active) != self.b_w:
            raise ValueError("SCOPE membership inconsistent with b_w")
        if self.b_w != (self.sgn_delta_w == "+"):
            raise ValueError("b_w inconsistent with sgn_delta_w")


def capacity_growth(prev: PromptVersion, curr: PromptVersion) -> float:
    """Relative token-length growth of the transition prev -> curr."""
    if prev.token_count <= 0:
        raise DegenerateTransitionError(
            "degenerate transition: previous prompt has zero tokens"
        )
    return (curr.token_count - prev.token_count) / prev.token_count


def capacity_trigger(rho_c: float, tau_c: float) -> bool:
    """True iff relative growth strictly exceeds the threshold."""
    if tau_c <= -1:
        raise ValueError(f"tau_c must exceed -1, got {tau_c}")
    return rho_c > tau_c


def threshold_from_log(theta: float) -> float:
    """Convert a log-space threshold into the equivalent growth threshold."""
    return math.exp(theta) - 1.0


def inefficiency(capacity: int, scope: ScopeEstimate) -> float:
    """Capacity times scope narrowness; zero when rules are fully broad."""
    if capacity < 0:
        raise ValueError(f"capacity must be nonnegative, got {capacity}")
    return capacity * scope.narrowness


def log_decomposition(
    prev_capacity: float,
    prev_narrowness: float,
    curr_capacity: float,
    curr_narrowness: float,
) -> tuple[float, float]:
    """Split the log-change of inefficiency into capacity and scope terms.

    The two components sum to log(I_t / I_{t-1}) exactly in exact arithmetic.
    All inputs must be strictly positive.
    """
    values = (prev_capacity, prev_narrowness, curr_capacity, curr_narrowness)
    if any(v <= 0 for v in values):
        raise LogDecompositionError(
            f"log-decomposition undefined for nonpositive inputs {values}"
        )
    return (
        math.log(curr_capacity / prev_capacity),
        math.log(curr_narrowness / prev_narrowness),
    )


def active_channels(b_c: bool, b_w: bool) -> frozenset[Channel]:
    """The set of channels whose trigger fired."""
    channels = set()
    if b_c:
        channels.add(Channel.CAPACITY)
    if b_w:
        channels.add(Channel.SCOPE)
    return frozenset(channels)
