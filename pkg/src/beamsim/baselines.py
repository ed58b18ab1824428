"""Reference beam-selection policies, each with a declared observation privilege.

All selectors are pure functions.  Ties break toward the lexicographically
smallest BeamId, everywhere, so runs are reproducible.
"""

from __future__ import annotations

from enum import Enum
from typing import Optional, Sequence

from .scenario import BeamId, VIRTUAL_BEAM


class ObservationPrivilege(Enum):
    REALIZED_RATES = "realized_rates"  # sees this epoch's realized rate of every available beam
    BLOCKAGE_PROBS = "blockage_probs"  # sees omega of every available beam
    NONE = "none"                      # sees only its own state


class PrivilegeError(RuntimeError):
    """A policy was wired with data beyond (or below) its declared privilege."""


def max_rate_action(realized: Sequence[tuple[BeamId, int]]) -> BeamId:
    """Pick the highest realized RSSI level; smallest BeamId on ties."""
    if not realized:
        raise ValueError("realized list must not be empty")
    best_level = max(level for _, level in realized)
    return min(beam for beam, level in realized if level == best_level)


def blockage_aware_action(probs: Sequence[tuple[BeamId, float]]) -> BeamId:
    """Pick the real beam with the lowest blockage probability.

    The virtual beam is chosen only when no real beam covers the zone.
    """
    if not probs:
        raise ValueError("probs list must not be empty")
    real = [(beam, w) for beam, w in probs if not beam.is_virtual]
    if not real:
        return VIRTUAL_BEAM
    best = min(w for _, w in real)
    return min(beam for beam, w in real if w == best)


def upper_bound_action(current: BeamId,
                       candidates: Sequence[tuple[BeamId, float, bool]],
                       epoch_s: float, handover_time_s: float) -> BeamId:
    """One-epoch clairvoyant greedy: switch only for a strictly better payoff.

    Each candidate is (beam, realized_rate, is_new_mmbs); the payoff is
    rate * epoch_s for a same-mmBS choice and rate * max(0, epoch_s - h)
    when the move would be a handover.
    """
    if not candidates:
        raise ValueError("candidates list must not be empty")
    payoffs = {}
    for beam, rate, new_mmbs in candidates:
        horizon = max(0.0, epoch_s - handover_time_s) if new_mmbs else epoch_s
        payoffs[beam] = rate * horizon
    best = max(payoffs.values())
    if current in payoffs and payoffs[current] >= best:
        return current
    return min(beam for beam, p in payoffs.items() if p == best)


class MaxRatePolicy:
    """Probe every available beam at epoch start, hop to the best one seen.

    The probe is a measurement, not clairvoyance: the channel redraws for the
    epoch itself, so the probed best beam may have degraded by the time data
    flows.  (The probe is charged zero time.)
    """

    name = "max_rate"
    privilege = ObservationPrivilege.REALIZED_RATES
    trainable = False
    probe_based = True  # view.realized is a fresh probe, not the epoch outcome

    def select(self, state, actions, view) -> BeamId:
        return max_rate_action([(b, view.realized[b][0]) for b in actions])


class BlockageAwarePolicy:
    """Always the lowest-blockage beam at the current location."""

    name = "blockage_aware"
    privilege = ObservationPrivilege.BLOCKAGE_PROBS
    trainable = False

    def select(self, state, actions, view) -> BeamId:
        return blockage_aware_action([(b, view.blockage[b]) for b in actions])


class UpperBoundPolicy:
    """Clairvoyant one-step lookahead with the handover penalty priced in."""

    name = "upper_bound"
    privilege = ObservationPrivilege.REALIZED_RATES
    trainable = False

    def select(self, state, actions, view) -> BeamId:
        current = state.beam  # may itself be unavailable here; then a move is forced
        candidates = []
        for b in actions:
            rate = view.realized[b][1]
            new_mmbs = (not b.is_virtual and not current.is_virtual and b.mmbs != current.mmbs)
            candidates.append((b, rate, new_mmbs))
        return upper_bound_action(current, candidates, view.epoch_s, view.handover_time_s)


class EpochView:
    """Exactly the data a policy's privilege entitles it to for one epoch."""

    __slots__ = ("realized", "blockage", "epoch_s", "handover_time_s")

    def __init__(self, realized=None, blockage=None, epoch_s: float = 0.0,
                 handover_time_s: float = 0.0):
        self.realized: Optional[dict[BeamId, tuple[int, float]]] = realized
        self.blockage: Optional[dict[BeamId, float]] = blockage
        self.epoch_s = epoch_s
        self.handover_time_s = handover_time_s
