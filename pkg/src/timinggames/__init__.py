"""Timing games in propose-vote Proof-of-Stake consensus: a deterministic
slot simulator, strategy profiles with mechanical equilibrium verification,
and a synthetic block-auction market with a marginal-value-of-time estimator.
"""

from .config import (
    COMMANDS,
    PRESETS,
    ExperimentConfig,
    load_config,
    resolve_config,
)
from .distributions import LatencyDistribution
from .engine import (
    PayoffLedger,
    RngStream,
    SimConfig,
    SimulationError,
    StrategySpec,
    compute_payoffs,
    derive_seed,
    run_simulation,
    sample_latency,
    sample_latency_array,
    strategy_spec,
)
from .equilibrium import (
    DeviationOutcome,
    DeviationReport,
    ResponseCurve,
    SweepRow,
    best_response_delay,
    check_attester_deviation,
    check_proposer_deviation,
    default_deviation_grid,
    sweep_delta_star,
)
from .market import (
    AuctionTimeline,
    BidRecord,
    DEFAULT_SIGNING_DELAY,
    EmptyAuction,
    RegressionReport,
    estimate_mvot,
    generate_bid_stream,
    load_bids,
    pooled_ols_slope,
    read_bids_csv,
    read_bids_jsonl,
    release_time_us,
    run_auction_timeline,
    write_bids_csv,
    write_bids_jsonl,
)
from .metrics import CurvePoint, bucket_curve, next_slot_share, next_slot_share_samples, pearson
from .model import (
    GENESIS_SLOT,
    AttesterAction,
    ConfigurationError,
    ProposerAction,
    ProtocolParams,
    SimulationTrace,
    SlotRecord,
    attestation_share,
    attester_payoff,
    canonical_status,
    last_canonical_slot,
    proposer_payoff,
)
from .strategies import (
    AttesterContext,
    ProposerContext,
    equilibrium_attester,
    equilibrium_proposer,
    greedy_delay_proposer,
    honest_spec_attester,
    laggy_proposer,
    optimal_delay,
)

__version__ = "0.1.0"
