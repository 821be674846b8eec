"""Mechanical verification of the coordinated-schedule profile and empirical
best responses for a delay-picking proposer.

Deviation checks replay the game with a single mid-horizon player deviating
while everyone else follows the coordinated profile. Where the outcome is
deterministic (a deviating proposer is simply not voted for), unprofitability
is certified by exact zeros against a positive baseline; where it is
stochastic, by a two-standard-error separation of Monte Carlo means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .engine import (
    HONEST_SPEC,
    SimConfig,
    SimulationError,
    derive_seed,
    run_simulation,
    strategy_spec,
)
from .model import (
    ConfigurationError,
    ProtocolParams,
    attester_payoff,
    canonical_status,
)


@dataclass(frozen=True)
class DeviationOutcome:
    """One tested deviation: its descriptor, the deviator's Monte Carlo payoff,
    and whether it is certified unprofitable against the baseline."""

    descriptor: str
    mean_payoff: float
    std_error: float
    samples: int
    exact_zero: bool
    unprofitable: bool


@dataclass(frozen=True)
class DeviationReport:
    delta_star_us: int
    baseline_payoff: float
    baseline_std_error: float
    baseline_samples: int
    deviations: tuple[DeviationOutcome, ...]
    all_unprofitable: bool


@dataclass(frozen=True)
class ResponseCurve:
    """Expected proposer payoff and attestation share per tested release delay.
    The argmax breaks ties toward the smaller delay."""

    delays_us: tuple[int, ...]
    expected_payoffs: tuple[float, ...]
    payoff_std_errors: tuple[float, ...]
    attestation_shares: tuple[float, ...]
    argmax_delay_us: int


@dataclass(frozen=True)
class SweepRow:
    delta_star_us: int
    proposer_payoff: float
    attester_payoff_mean: float
    attester_payoff_se: float
    all_canonical: int


def _mean_se(samples: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(samples, dtype=float)
    mean = float(arr.mean())
    if len(arr) < 2:
        return mean, 0.0
    return mean, float(arr.std(ddof=1) / math.sqrt(len(arr)))


def _deviation_slot(horizon: int, requested: Optional[int]) -> int:
    if horizon < 3:
        raise ConfigurationError("deviation checks need a horizon of at least 3 slots")
    slot = horizon // 2 if requested is None else requested
    if not 1 <= slot <= horizon - 2:
        raise ConfigurationError(
            f"deviation slot {slot} must be interior to the horizon (1..{horizon - 2})"
        )
    return slot


def default_deviation_grid(
    params: ProtocolParams, delta_star_us: int, n_points: int = 50
) -> tuple[tuple[int, int], ...]:
    """Evenly spaced (delay_us, build_flag) pairs over [0, slot_length] x {0, 1}
    with the coordinated action excluded; when the coordinated delay lands on
    the delay grid, the excluded pair is replaced by a 1 ms-late release so the
    grid keeps ``n_points`` entries."""
    if n_points < 2:
        raise ConfigurationError("n_points must be at least 2")
    n_delays = (n_points + 1) // 2
    delays = [
        int(round(i * params.slot_length_us / (n_delays - 1))) for i in range(n_delays)
    ]
    grid: list[tuple[int, int]] = []
    for d in delays:
        for phi in (1, 0):
            if d == delta_star_us and phi == 1:
                grid.append((delta_star_us + 1000, 1))
            else:
                grid.append((d, phi))
    return tuple(grid[:n_points])


def check_proposer_deviation(
    params: ProtocolParams,
    delta_star_us: int,
    deviation_grid: Sequence[tuple[int, int]],
    runs: int = 1,
    deviation_slot: Optional[int] = None,
) -> DeviationReport:
    """Payoff of a single proposer deviating mid-horizon to each (delay, build
    flag) on the grid, while everyone else plays the coordinated profile.

    Under coordinated attesters every deviation earns exactly zero, against a
    baseline of base_reward + mev_rate * slot_length.
    """
    if not deviation_grid:
        raise ConfigurationError("deviation grid must not be empty")
    if runs < 1:
        raise ConfigurationError("runs must be positive")
    base = replace(params, schedule_offset_us=delta_star_us)
    slot_k = _deviation_slot(base.horizon_slots, deviation_slot)
    for delay, phi in deviation_grid:
        if delay == delta_star_us and phi == 1:
            raise ConfigurationError(
                "deviation grid contains the coordinated action "
                f"(delay_us={delta_star_us}, build_on_prev=1); it is not a deviation"
            )

    baseline_samples = []
    for r in range(runs):
        p_run = replace(base, seed=derive_seed(params.seed, "proposer-deviation-baseline", r))
        trace = run_simulation(SimConfig(params=p_run))
        baseline_samples.append(trace.slots[slot_k].proposer_payoff)
    baseline_mean, baseline_se = _mean_se(baseline_samples)

    outcomes = []
    for delay, phi in deviation_grid:
        payoffs = []
        for r in range(runs):
            p_run = replace(
                base, seed=derive_seed(params.seed, f"proposer-deviation|{delay}|{phi}", r)
            )
            config = SimConfig(
                params=p_run,
                proposer_overrides={
                    slot_k: strategy_spec("fixed", delay_us=delay, build_on_prev=phi)
                },
            )
            trace = run_simulation(config)
            payoffs.append(trace.slots[slot_k].proposer_payoff)
        mean, se = _mean_se(payoffs)
        exact_zero = all(x == 0.0 for x in payoffs)
        unprofitable = (exact_zero and baseline_mean > 0) or (
            mean + 2 * se < baseline_mean
        )
        outcomes.append(
            DeviationOutcome(
                descriptor=f"delay_us={delay},build_on_prev={phi}",
                mean_payoff=mean,
                std_error=se,
                samples=runs,
                exact_zero=exact_zero,
                unprofitable=unprofitable,
            )
        )

    return DeviationReport(
        delta_star_us=delta_star_us,
        baseline_payoff=baseline_mean,
        baseline_std_error=baseline_se,
        baseline_samples=runs,
        deviations=tuple(outcomes),
        all_unprofitable=all(o.unprofitable for o in outcomes),
    )


def check_attester_deviation(
    params: ProtocolParams,
    delta_star_us: int,
    mc_samples: int,
    tau_shifts_us: Optional[Sequence[int]] = None,
) -> DeviationReport:
    """Expected payoff of one designated attester under coordinated play versus
    two unilateral deviations: flipping the vote (exactly zero, since the flip
    cannot move the share across the threshold) and releasing the attestation
    late by a fixed shift (shrinks the freshness window).

    The coordinated-play estimate targets the probability that two exponential
    latency legs fit within one slot.
    """
    if mc_samples < 1000:
        raise ConfigurationError("mc_samples must be at least 1000")
    if params.vote_threshold >= 1:
        raise ConfigurationError(
            "a single attester flip can cross a vote_threshold of 1; "
            "the margin invariant is violated"
        )
    shifts = tuple(tau_shifts_us) if tau_shifts_us is not None else (params.slot_length_us,)
    for shift in shifts:
        if shift == 0:
            raise ConfigurationError(
                "a release shift of 0 is the coordinated action, not a deviation"
            )
        if shift < 0:
            raise ConfigurationError("release shifts must be positive")

    base = replace(params, schedule_offset_us=delta_star_us)
    horizon = base.horizon_slots
    runs = math.ceil(mc_samples / horizon)
    watched = 0  # designated attester index

    eq_payoffs: list[int] = []
    flip_payoffs: list[int] = []
    shift_payoffs: dict[int, list[int]] = {s: [] for s in shifts}
    for r in range(runs):
        p_run = replace(base, seed=derive_seed(params.seed, "attester-deviation", r))
        trace = run_simulation(SimConfig(params=p_run, record_level="full"))
        n_att = p_run.attester_count
        for n, rec in enumerate(trace.slots):
            next_release = (
                trace.slots[n + 1].proposer_action.release_time_us
                if n + 1 < horizon
                else trace.closing_action.release_time_us
            )
            chi_next = trace.slots[n + 1].canonical if n + 1 < horizon else 1
            act = rec.attester_actions[watched]
            eq_payoffs.append(rec.attester_payoffs[watched])

            flip_vote = 1 - act.vote
            flipped_count = rec.vote_count + (flip_vote - act.vote)
            next_build = (
                trace.slots[n + 1].proposer_action.build_on_prev
                if n + 1 < horizon
                else trace.closing_action.build_on_prev
            )
            chi_flipped = canonical_status(
                next_build, Fraction(flipped_count, n_att), p_run.vote_threshold
            )
            if chi_flipped != rec.canonical:
                raise ConfigurationError(
                    f"slot {n}: a single flipped vote moved the canonical status; "
                    "margin invariant violated"
                )
            arrival = rec.proposer_action.release_time_us + rec.inbound_latencies_us[watched]
            flip_tau = arrival if flip_vote == 1 else p_run.slot_start_us(n)
            flip_payoffs.append(
                attester_payoff(
                    flip_vote,
                    rec.canonical,
                    flip_tau,
                    rec.outbound_latencies_us[watched],
                    next_release,
                    chi_next,
                )
            )
            for shift in shifts:
                shift_payoffs[shift].append(
                    attester_payoff(
                        act.vote,
                        rec.canonical,
                        act.release_time_us + shift,
                        rec.outbound_latencies_us[watched],
                        next_release,
                        chi_next,
                    )
                )

    baseline_mean, baseline_se = _mean_se(eq_payoffs)
    outcomes = []
    arms: list[tuple[str, list[int]]] = [("vote_flip", flip_payoffs)]
    arms.extend((f"release_shift_us={s}", shift_payoffs[s]) for s in shifts)
    for descriptor, payoffs in arms:
        mean, se = _mean_se(payoffs)
        exact_zero = all(x == 0 for x in payoffs)
        unprofitable = (exact_zero and baseline_mean > 0) or (
            mean + 2 * se < baseline_mean
        )
        outcomes.append(
            DeviationOutcome(
                descriptor=descriptor,
                mean_payoff=mean,
                std_error=se,
                samples=len(payoffs),
                exact_zero=exact_zero,
                unprofitable=unprofitable,
            )
        )

    return DeviationReport(
        delta_star_us=delta_star_us,
        baseline_payoff=baseline_mean,
        baseline_std_error=baseline_se,
        baseline_samples=len(eq_payoffs),
        deviations=tuple(outcomes),
        all_unprofitable=all(o.unprofitable for o in outcomes),
    )


def best_response_delay(
    params: ProtocolParams,
    delay_grid: Sequence[int],
    runs_per_point: int,
    horizon: int = 5,
) -> ResponseCurve:
    """Monte Carlo response curve for a single proposer delaying its release
    against honest attesters, with honest on-time proposers around it.

    For each delay the deviating slot's payoff and attestation share are
    averaged over independent runs. As the committee grows, the argmax
    converges to ``optimal_delay``.
    """
    if not delay_grid:
        raise ConfigurationError("delay grid must not be empty")
    delays = sorted(int(d) for d in delay_grid)
    if len(set(delays)) != len(delays):
        raise ConfigurationError("delay grid contains duplicates")
    for d in delays:
        if not 0 <= d <= params.slot_length_us:
            raise ConfigurationError(
                f"delay {d} outside [0, slot_length_us={params.slot_length_us}]"
            )
    if runs_per_point < 1:
        raise ConfigurationError("runs_per_point must be positive")

    base = replace(params, schedule_offset_us=0, horizon_slots=horizon)
    slot_k = _deviation_slot(horizon, None)

    means: list[float] = []
    ses: list[float] = []
    shares: list[float] = []
    for d in delays:
        payoffs = []
        share_samples = []
        for r in range(runs_per_point):
            p_run = replace(base, seed=derive_seed(params.seed, f"best-response|{d}", r))
            config = SimConfig(
                params=p_run,
                proposer_default=strategy_spec("greedy_delay", delay_us=0),
                proposer_overrides={slot_k: strategy_spec("greedy_delay", delay_us=d)},
                attester_strategy=HONEST_SPEC,
            )
            trace = run_simulation(config)
            payoffs.append(trace.slots[slot_k].proposer_payoff)
            share_samples.append(float(trace.slots[slot_k].attestation_share))
        mean, se = _mean_se(payoffs)
        means.append(mean)
        ses.append(se)
        shares.append(float(np.mean(share_samples)))

    best_idx = 0
    for i in range(1, len(delays)):
        if means[i] > means[best_idx]:
            best_idx = i
    return ResponseCurve(
        delays_us=tuple(delays),
        expected_payoffs=tuple(means),
        payoff_std_errors=tuple(ses),
        attestation_shares=tuple(shares),
        argmax_delay_us=delays[best_idx],
    )


def sweep_delta_star(
    params: ProtocolParams, grid: Sequence[int]
) -> tuple[SweepRow, ...]:
    """Coordinated-profile runs across a grid of schedule offsets.

    The proposer payoff column is exactly constant (the spacing between
    canonical blocks is one slot regardless of the offset); the attester column
    is offset-invariant up to Monte Carlo error; every slot is canonical.
    """
    if len(grid) == 0:
        raise ConfigurationError("offset grid must not be empty")
    for ds in grid:
        if not 0 <= ds <= params.slot_length_us:
            raise ConfigurationError(
                f"schedule offset {ds} outside [0, slot_length_us={params.slot_length_us}]"
            )
    rows = []
    for i, ds in enumerate(grid):
        p_run = replace(
            params,
            schedule_offset_us=int(ds),
            seed=derive_seed(params.seed, "delta-star-sweep", i),
        )
        trace = run_simulation(SimConfig(params=p_run))
        payoffs = {rec.proposer_payoff for rec in trace.slots}
        if len(payoffs) != 1:
            raise SimulationError(
                f"coordinated-profile payoffs are not constant at offset {ds}: {payoffs}"
            )
        n_samples = p_run.horizon_slots * p_run.attester_count
        mean = sum(rec.attester_payoff_total for rec in trace.slots) / n_samples
        se = math.sqrt(mean * (1 - mean) / n_samples) if 0 < mean < 1 else 0.0
        rows.append(
            SweepRow(
                delta_star_us=int(ds),
                proposer_payoff=payoffs.pop(),
                attester_payoff_mean=mean,
                attester_payoff_se=se,
                all_canonical=int(all(rec.canonical for rec in trace.slots)),
            )
        )
    return tuple(rows)
