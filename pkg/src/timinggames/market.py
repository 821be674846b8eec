"""Synthetic block-auction market: builder bid streams with a planted marginal
value of time, per-slot auction timelines, and the fixed-effects estimator that
recovers the planted slope.

Bid timestamps are integer milliseconds relative to the slot boundary
(negative means the previous slot). The regression estimates the value of one
extra second of delay by demeaning bid values and timestamps within each slot
(removing per-slot value baselines exactly) before ordinary least squares.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .distributions import LatencyDistribution
from .model import ConfigurationError

#: Default signing-latency model: heavy-tailed with a 418 ms median.
DEFAULT_SIGNING_DELAY = LatencyDistribution.lognormal(median=418.0, sigma=0.5)

BID_FIELDS = ("slot", "builder_id", "received_at_ms", "eligible_at_ms", "value_eth")


@dataclass(frozen=True, slots=True)
class BidRecord:
    """One builder bid as logged by a relay."""

    slot: int
    builder_id: int
    received_at_ms: int
    eligible_at_ms: int
    value_eth: float

    def __post_init__(self) -> None:
        if self.eligible_at_ms < self.received_at_ms:
            raise ConfigurationError("a bid cannot be eligible before it is received")
        if self.value_eth < 0:
            raise ConfigurationError("bid value must be non-negative")


@dataclass(frozen=True)
class AuctionTimeline:
    """One slot's auction events: header request, proposer signature, payload
    request, and the winning bid."""

    slot: int
    get_header_ms: int
    signed_at_ms: int
    get_payload_ms: int
    winning_bid: BidRecord

    def __post_init__(self) -> None:
        if not self.get_header_ms <= self.signed_at_ms <= self.get_payload_ms:
            raise ConfigurationError(
                "timeline must be ordered get_header <= signed_at <= get_payload"
            )


@dataclass(frozen=True)
class EmptyAuction:
    """Outcome of a slot whose auction had no eligible bid at the header
    request; the slot proceeds without an external bid."""

    slot: int
    get_header_ms: int


def _as_generator(rng: Union[int, np.random.Generator]) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def generate_bid_stream(
    n_slots: int,
    bids_per_slot: int = 800,
    mu_eth_per_s: float = 0.0065,
    slot_effect_dist: LatencyDistribution | None = None,
    noise_sd_eth: float = 0.0,
    arrival_window_ms: tuple[int, int] = (-4000, 1000),
    rng: Union[int, np.random.Generator] = 0,
    validation_latency: LatencyDistribution | None = None,
    arrival_profile: str = "uniform",
    n_builders: int = 32,
) -> list[BidRecord]:
    """Generate a bid stream with a planted marginal value of time.

    Each bid's value is the slot's baseline (one draw of ``slot_effect_dist``
    per slot, in ETH) plus ``mu_eth_per_s`` times the arrival time in seconds
    plus Gaussian noise. Arrivals are uniform over the window by default, or a
    triangular ramp peaking at the window end. Eligibility lags arrival by a
    relay validation latency sample. Values are floored at zero; defaults keep
    the floor inactive so the planted slope is recovered exactly by the
    fixed-effects estimator in the noiseless case.
    """
    if n_slots < 1:
        raise ConfigurationError("n_slots must be positive")
    if bids_per_slot < 1:
        raise ConfigurationError("bids_per_slot must be positive")
    lo, hi = arrival_window_ms
    if lo >= hi:
        raise ConfigurationError("arrival window must satisfy lo < hi")
    if noise_sd_eth < 0:
        raise ConfigurationError("noise_sd_eth must be non-negative")
    if arrival_profile not in ("uniform", "triangular"):
        raise ConfigurationError("arrival_profile must be 'uniform' or 'triangular'")
    if n_builders < 1:
        raise ConfigurationError("n_builders must be positive")
    baseline_dist = slot_effect_dist or LatencyDistribution.degenerate(0.1)
    validation = validation_latency or LatencyDistribution.exponential(100.0)

    gen = _as_generator(rng)
    bids: list[BidRecord] = []
    for slot in range(n_slots):
        baseline = float(baseline_dist.sample(gen))
        if arrival_profile == "uniform":
            received = gen.uniform(lo, hi, size=bids_per_slot)
        else:
            received = gen.triangular(lo, hi, hi, size=bids_per_slot)
        received = np.floor(received + 0.5).astype(np.int64)
        lag = np.floor(validation.sample(gen, size=bids_per_slot) + 0.5).astype(np.int64)
        noise = (
            gen.normal(0.0, noise_sd_eth, size=bids_per_slot)
            if noise_sd_eth > 0
            else np.zeros(bids_per_slot)
        )
        builder_ids = gen.integers(0, n_builders, size=bids_per_slot)
        order = np.argsort(received, kind="stable")
        for i in order:
            value = baseline + mu_eth_per_s * (received[i] / 1000.0) + noise[i]
            bids.append(
                BidRecord(
                    slot=slot,
                    builder_id=int(builder_ids[i]),
                    received_at_ms=int(received[i]),
                    eligible_at_ms=int(received[i] + lag[i]),
                    value_eth=max(float(value), 0.0),
                )
            )
    return bids


def run_auction_timeline(
    bids: Sequence[BidRecord],
    get_header_ms: int,
    signing_delay: LatencyDistribution = DEFAULT_SIGNING_DELAY,
    relay_validation: LatencyDistribution | None = None,
    rng: Union[int, np.random.Generator] = 0,
) -> AuctionTimeline | EmptyAuction:
    """Resolve one slot's auction at the header request time.

    The winner is the highest-value bid already eligible at the request (ties
    to the earliest received, then the lowest builder id). The proposer signs
    after a sampled signing delay; the payload request follows the signature by
    a relay-internal offset (zero by default, so payload minus header equals
    the signing delay). The signature time, converted to the slot clock, is a
    block release time the engine can replay.
    """
    if not bids:
        raise ConfigurationError("run_auction_timeline needs at least one bid")
    slots = {b.slot for b in bids}
    if len(slots) != 1:
        raise ConfigurationError(f"bids must belong to a single slot, got {sorted(slots)}")
    slot = slots.pop()
    eligible = [b for b in bids if b.eligible_at_ms <= get_header_ms]
    if not eligible:
        return EmptyAuction(slot=slot, get_header_ms=get_header_ms)
    winner = min(eligible, key=lambda b: (-b.value_eth, b.received_at_ms, b.builder_id))

    gen = _as_generator(rng)
    signed_at = get_header_ms + int(math.floor(float(signing_delay.sample(gen)) + 0.5))
    relay = relay_validation or LatencyDistribution.degenerate(0.0)
    get_payload = signed_at + int(math.floor(float(relay.sample(gen)) + 0.5))
    return AuctionTimeline(
        slot=slot,
        get_header_ms=get_header_ms,
        signed_at_ms=signed_at,
        get_payload_ms=get_payload,
        winning_bid=winner,
    )


def release_time_us(timeline: AuctionTimeline, slot_length_us: int) -> int:
    """The signed-at time on the absolute microsecond clock, usable as the
    block release time when feeding an auction outcome into the engine."""
    return timeline.slot * slot_length_us + timeline.signed_at_ms * 1000


@dataclass(frozen=True)
class RegressionReport:
    """Fixed-effects estimate of the marginal value of time."""

    slope_eth_per_s: float
    std_error: float
    n_obs: int
    n_slots: int
    within_r2: float

    def __post_init__(self) -> None:
        if self.n_slots < 2 or self.n_obs < self.n_slots:
            raise ConfigurationError("report requires n_obs >= n_slots >= 2")
        if self.std_error < 0:
            raise ConfigurationError("std_error must be non-negative")


def _bid_columns(bids: Sequence[BidRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    slots = np.fromiter((b.slot for b in bids), dtype=np.int64, count=len(bids))
    times_s = np.fromiter(
        (b.received_at_ms for b in bids), dtype=np.float64, count=len(bids)
    ) / 1000.0
    values = np.fromiter((b.value_eth for b in bids), dtype=np.float64, count=len(bids))
    return slots, times_s, values


def estimate_mvot(bids: Sequence[BidRecord]) -> RegressionReport:
    """Marginal value of time: OLS of within-slot demeaned bid value on
    within-slot demeaned arrival time (in seconds).

    Demeaning removes every per-slot baseline exactly, so the planted slope of
    a noiseless stream is recovered to arithmetic precision. The standard error
    is the homoskedastic one with slot fixed effects absorbed into the degrees
    of freedom.
    """
    if len(bids) < 2:
        raise ConfigurationError("estimate_mvot needs at least two bids")
    slots, x, y = _bid_columns(bids)
    _, inverse = np.unique(slots, return_inverse=True)
    n_slots = int(inverse.max()) + 1
    if n_slots < 2:
        raise ConfigurationError("estimate_mvot needs bids from at least two slots")
    counts = np.bincount(inverse)
    x_demeaned = x - (np.bincount(inverse, weights=x) / counts)[inverse]
    y_demeaned = y - (np.bincount(inverse, weights=y) / counts)[inverse]

    sxx = float(x_demeaned @ x_demeaned)
    if sxx == 0.0:
        raise ConfigurationError(
            "degenerate design: no within-slot timestamp variation anywhere"
        )
    sxy = float(x_demeaned @ y_demeaned)
    syy = float(y_demeaned @ y_demeaned)
    slope = sxy / sxx

    residuals = y_demeaned - slope * x_demeaned
    rss = float(residuals @ residuals)
    dof = len(bids) - n_slots - 1
    if dof < 1:
        raise ConfigurationError("not enough observations for a standard error")
    std_error = math.sqrt(max(rss, 0.0) / dof / sxx)
    within_r2 = 1.0 if syy == 0.0 else 1.0 - rss / syy
    return RegressionReport(
        slope_eth_per_s=slope,
        std_error=std_error,
        n_obs=len(bids),
        n_slots=n_slots,
        within_r2=within_r2,
    )


def pooled_ols_slope(bids: Sequence[BidRecord]) -> float:
    """OLS slope of value on time without slot demeaning. Biased whenever slot
    baselines correlate with per-slot arrival times; kept as the comparison
    arm for the fixed-effects estimator."""
    if len(bids) < 2:
        raise ConfigurationError("pooled_ols_slope needs at least two bids")
    _, x, y = _bid_columns(bids)
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise ConfigurationError("degenerate design: no timestamp variation")
    return float(xc @ yc) / sxx


def write_bids_jsonl(bids: Iterable[BidRecord], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for b in bids:
            fh.write(
                json.dumps(
                    {
                        "slot": b.slot,
                        "builder_id": b.builder_id,
                        "received_at_ms": b.received_at_ms,
                        "eligible_at_ms": b.eligible_at_ms,
                        "value_eth": b.value_eth,
                    }
                )
            )
            fh.write("\n")


def read_bids_jsonl(path: Union[str, Path]) -> list[BidRecord]:
    """Read a bid stream; accepts externally produced files in the same schema."""
    bids = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            unknown = sorted(set(row) - set(BID_FIELDS))
            if unknown:
                raise ConfigurationError(
                    f"{path}:{line_no}: unknown bid fields: {', '.join(unknown)}"
                )
            missing = sorted(set(BID_FIELDS) - set(row))
            if missing:
                raise ConfigurationError(
                    f"{path}:{line_no}: missing bid fields: {', '.join(missing)}"
                )
            bids.append(
                BidRecord(
                    slot=int(row["slot"]),
                    builder_id=int(row["builder_id"]),
                    received_at_ms=int(row["received_at_ms"]),
                    eligible_at_ms=int(row["eligible_at_ms"]),
                    value_eth=float(row["value_eth"]),
                )
            )
    return bids


def write_bids_csv(bids: Iterable[BidRecord], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BID_FIELDS)
        for b in bids:
            writer.writerow(
                [b.slot, b.builder_id, b.received_at_ms, b.eligible_at_ms, repr(b.value_eth)]
            )


def read_bids_csv(path: Union[str, Path]) -> list[BidRecord]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != BID_FIELDS:
            raise ConfigurationError(
                f"{path}: expected columns {BID_FIELDS}, got {reader.fieldnames}"
            )
        return [
            BidRecord(
                slot=int(row["slot"]),
                builder_id=int(row["builder_id"]),
                received_at_ms=int(row["received_at_ms"]),
                eligible_at_ms=int(row["eligible_at_ms"]),
                value_eth=float(row["value_eth"]),
            )
            for row in reader
        ]


def load_bids(path: Union[str, Path]) -> list[BidRecord]:
    """Dispatch on extension: .jsonl/.ndjson or .csv."""
    suffix = Path(path).suffix.lower()
    if suffix in (".jsonl", ".ndjson"):
        return read_bids_jsonl(path)
    if suffix == ".csv":
        return read_bids_csv(path)
    raise ConfigurationError(f"unsupported bid file extension {suffix!r}")
