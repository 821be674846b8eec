"""Game primitives for propose-vote consensus with a per-slot block auctioned by time.

Each slot has one proposer who picks a release time and whether to build on the
previous block, and a committee of attesters who each decide whether and when to
vote. A block is canonical when it clears the vote threshold *and* the next
proposer builds on it. The proposer's reward grows linearly with the time gap to
the most recent canonical block; an attester is paid when its vote is correct
(matches the block's eventual canonical status) and fresh (reaches the next
proposer before that proposer's own release, with that block canonical too).

Conventions used across the package:

* all times are absolute integer microseconds; latency samples are rounded
  half-up to the nearest microsecond,
* binary indicators (build flag, vote, canonical status) are ints in {0, 1},
* attestation shares are exact rationals (`fractions.Fraction`) so threshold
  comparisons at exact equality are decided without float rounding,
* comparisons at exact equality (vote threshold, deadlines, schedules) are
  inclusive.

A virtual canonical block sits one slot before slot 0 (``genesis_time_us``), so
slot 0 has a well-defined reward window like every other slot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Union

#: Sentinel slot index for "no canonical predecessor": the virtual genesis block.
GENESIS_SLOT = -1

MICROSECONDS_PER_SECOND = 1_000_000


class ConfigurationError(ValueError):
    """Raised when parameters, configs, or inputs violate a documented invariant."""


def min_attesters_for_margin(vote_threshold: float) -> int:
    """Smallest committee size at which one vote cannot move the share across
    the threshold (requires ``vote_threshold < 1``)."""
    if not 0 < vote_threshold < 1:
        raise ConfigurationError(
            f"margin is only defined for 0 < vote_threshold < 1, got {vote_threshold}"
        )
    return math.ceil(Fraction(1) / (1 - Fraction(vote_threshold))) + 1


@dataclass(frozen=True)
class ProtocolParams:
    """Exogenous constants of the game.

    ``schedule_offset_us`` is the within-slot release time the attesters
    coordinate on enforcing; ``mev_rate`` is ETH per second, converted to the
    microsecond clock where needed.
    """

    slot_length_us: int = 12_000_000
    schedule_offset_us: int = 0
    mean_latency_us: int = 1_000_000
    vote_threshold: float = 0.5
    base_reward: float = 0.04
    mev_rate: float = 0.0065
    attestation_deadline_us: int = 4_000_000
    attester_count: int = 1000
    horizon_slots: int = 32
    seed: int = 42

    def __post_init__(self) -> None:
        if self.slot_length_us <= 0:
            raise ConfigurationError("slot_length_us must be positive")
        if self.mean_latency_us <= 0:
            raise ConfigurationError("mean_latency_us must be positive")
        if self.slot_length_us < 2 * self.mean_latency_us:
            raise ConfigurationError(
                "slot_length_us must be at least twice mean_latency_us "
                f"({self.slot_length_us} < 2 * {self.mean_latency_us})"
            )
        if not 0 <= self.schedule_offset_us <= self.slot_length_us:
            raise ConfigurationError(
                "schedule_offset_us must lie within [0, slot_length_us], got "
                f"{self.schedule_offset_us}"
            )
        if not 0 < self.vote_threshold <= 1:
            raise ConfigurationError(
                f"vote_threshold must be in (0, 1], got {self.vote_threshold}"
            )
        if self.base_reward <= 0:
            raise ConfigurationError("base_reward must be positive")
        if self.mev_rate <= 0:
            raise ConfigurationError("mev_rate must be positive")
        if self.attestation_deadline_us < 0:
            raise ConfigurationError("attestation_deadline_us must be non-negative")
        if self.attester_count < 1:
            raise ConfigurationError("attester_count must be positive")
        if self.vote_threshold < 1:
            margin = min_attesters_for_margin(self.vote_threshold)
            if self.attester_count < margin:
                raise ConfigurationError(
                    f"attester_count must be at least {margin} for "
                    f"vote_threshold={self.vote_threshold} so a single vote cannot "
                    "flip the share across the threshold"
                )
        if self.horizon_slots < 1:
            raise ConfigurationError("horizon_slots must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must fit in 64 unsigned bits")

    @property
    def genesis_time_us(self) -> int:
        """Time of the virtual canonical block preceding slot 0."""
        return -self.slot_length_us + self.schedule_offset_us

    def slot_start_us(self, slot: int) -> int:
        return slot * self.slot_length_us

    def schedule_time_us(self, slot: int) -> int:
        """The coordinated release time for ``slot``."""
        return slot * self.slot_length_us + self.schedule_offset_us

    def deadline_us(self, slot: int) -> int:
        """The attestation deadline for ``slot``."""
        return slot * self.slot_length_us + self.attestation_deadline_us


@dataclass(frozen=True)
class ProposerAction:
    """A proposer's move: whether to build on the previous block, and when to
    release. ``release_time_us >= slot * slot_length_us`` is enforced by the
    engine, which knows the slot."""

    build_on_prev: int
    release_time_us: int

    def __post_init__(self) -> None:
        if self.build_on_prev not in (0, 1):
            raise ConfigurationError("build_on_prev must be 0 or 1")


@dataclass(frozen=True)
class AttesterAction:
    """An attester's move: whether to vote for the slot's block, and when to
    release the attestation. A vote of 1 requires the attestation time to be no
    earlier than the block's arrival (release + inbound latency); the engine
    enforces this against the sampled latencies."""

    vote: int
    release_time_us: int

    def __post_init__(self) -> None:
        if self.vote not in (0, 1):
            raise ConfigurationError("vote must be 0 or 1")


def proposer_payoff(
    release_time_us: int,
    last_canonical_time_us: int,
    canonical: int,
    params: ProtocolParams,
) -> float:
    """Reward for a proposer: base reward plus time-proportional value accrued
    since the most recent canonical block, paid only if this block ends up
    canonical.

    The time gap is converted to seconds before applying ``mev_rate``; gaps are
    clipped at zero.
    """
    if not canonical:
        return 0.0
    gap_us = release_time_us - last_canonical_time_us
    if gap_us < 0:
        gap_us = 0
    return params.base_reward + params.mev_rate * (gap_us / MICROSECONDS_PER_SECOND)


def attester_payoff(
    vote: int,
    chi_n: int,
    tau_us: int,
    outbound_latency_us: int,
    next_release_us: int,
    chi_next: int,
) -> int:
    """Unit payoff for an attester, paid iff the vote is correct and fresh.

    Correct: the vote matches the slot's canonical status. Fresh: the
    attestation reaches the next proposer no later than that proposer's release
    (inclusive), and the next block is canonical.
    """
    correct = vote == chi_n
    fresh = tau_us + outbound_latency_us <= next_release_us
    return 1 if (correct and fresh and chi_next == 1) else 0


ShareLike = Union[Fraction, float, int]


def canonical_status(
    build_on_prev_next: int,
    attestation_share: ShareLike,
    vote_threshold: ShareLike,
) -> int:
    """Whether a block is canonical: the next proposer built on it and the
    attestation share met the vote threshold (inclusive at exact equality).

    The comparison is done in exact rational arithmetic; passing a
    ``Fraction`` share avoids ever rounding through a float.
    """
    if not build_on_prev_next:
        return 0
    return 1 if Fraction(attestation_share) >= Fraction(vote_threshold) else 0


def attestation_share(votes: Sequence[int]) -> Fraction:
    """Fraction of attesters voting for the block, as an exact rational."""
    if len(votes) == 0:
        raise ConfigurationError("attestation_share needs a non-empty vote sequence")
    return Fraction(int(sum(1 for v in votes if v)), len(votes))


def last_canonical_slot(canonical_flags: Sequence[int], n: int) -> int:
    """Most recent canonical slot strictly before slot ``n``; ``GENESIS_SLOT``
    when no prior slot is canonical. ``canonical_flags`` must be resolved for
    all slots below ``n``."""
    if n < 0:
        raise ConfigurationError("slot index must be non-negative")
    if len(canonical_flags) < n:
        raise ConfigurationError(
            f"canonical flags resolved only up to slot {len(canonical_flags)}, need {n}"
        )
    for k in range(n - 1, -1, -1):
        if canonical_flags[k]:
            return k
    return GENESIS_SLOT


@dataclass(frozen=True)
class SlotRecord:
    """One slot's full resolution.

    Per-attester sequences (actions, latencies, payoffs) are populated only at
    ``record_level="full"``; the count fields are always populated so metrics
    and sweeps can run on summary traces.
    """

    slot: int
    proposer_action: ProposerAction
    attester_actions: tuple[AttesterAction, ...]
    inbound_latencies_us: tuple[int, ...]
    outbound_latencies_us: tuple[int, ...]
    attestation_share: Fraction
    vote_count: int
    canonical: int
    proposer_payoff: float
    attester_payoffs: tuple[int, ...]
    attester_payoff_total: int
    fresh_count: int
    fresh_vote_count: int

    def __post_init__(self) -> None:
        if self.canonical not in (0, 1):
            raise ConfigurationError("canonical must be 0 or 1")
        if not 0 <= self.attestation_share <= 1:
            raise ConfigurationError("attestation_share must be within [0, 1]")
        if self.fresh_vote_count > self.fresh_count:
            raise ConfigurationError("fresh_vote_count cannot exceed fresh_count")


@dataclass(frozen=True)
class SimulationTrace:
    """Ordered slot records plus the bookkeeping needed to resolve the final
    slot: the virtual closing proposer's action and the genesis time.

    The closing proposer follows the coordinated schedule (releases one slot
    past the horizon, builds on the final block iff it was released on time),
    and its own block is treated as canonical, i.e. play is assumed to continue
    on the equilibrium path after the horizon.
    """

    params: ProtocolParams
    slots: tuple[SlotRecord, ...]
    genesis_time_us: int
    closing_action: ProposerAction
    record_level: str = "full"

    def canonical_flags(self) -> tuple[int, ...]:
        return tuple(rec.canonical for rec in self.slots)

    def canonical_slots(self) -> tuple[int, ...]:
        return tuple(rec.slot for rec in self.slots if rec.canonical)

    def last_canonical_time_before(self, n: int) -> int:
        """Release time of the most recent canonical block before slot ``n``
        (the genesis time when there is none)."""
        k = last_canonical_slot(self.canonical_flags(), n)
        if k == GENESIS_SLOT:
            return self.genesis_time_us
        return self.slots[k].proposer_action.release_time_us

    def validate(self) -> None:
        """Check the trace-level invariants exactly.

        * each stored share equals vote_count / attester_count,
        * canonical flags are consistent with the threshold and the next
          proposer's build flag (closing proposer for the final slot),
        * the canonical reward windows telescope: summed over canonical slots,
          the release-time gaps equal last canonical release minus genesis.
        """
        n_att = self.params.attester_count
        gamma = self.params.vote_threshold
        for i, rec in enumerate(self.slots):
            if rec.slot != i:
                raise AssertionError(f"slot records out of order at index {i}")
            if rec.attestation_share != Fraction(rec.vote_count, n_att):
                raise AssertionError(f"slot {i}: share does not equal vote_count/N")
            next_build = (
                self.slots[i + 1].proposer_action.build_on_prev
                if i + 1 < len(self.slots)
                else self.closing_action.build_on_prev
            )
            expected_chi = canonical_status(next_build, rec.attestation_share, gamma)
            if rec.canonical != expected_chi:
                raise AssertionError(f"slot {i}: canonical flag inconsistent")
        flags = self.canonical_flags()
        total_gap = 0
        last_time = self.genesis_time_us
        for i, rec in enumerate(self.slots):
            if flags[i]:
                total_gap += rec.proposer_action.release_time_us - last_time
                last_time = rec.proposer_action.release_time_us
        if total_gap != last_time - self.genesis_time_us:
            raise AssertionError(
                "canonical reward windows do not telescope to the chain span "
                f"({total_gap} != {last_time - self.genesis_time_us})"
            )
