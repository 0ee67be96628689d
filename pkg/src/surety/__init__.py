"""Deterministic settlement state machine and market simulator for
assured delegated jobs: structured agreements, escrowed fees, priced and
collateralized principal release behind a multi-signature predicate, and
a Monte Carlo harness measuring what those mechanics do to a market."""

from .actions import Action, ActionKind
from .agreement import (
    AssuranceMode,
    CollateralPolicy,
    Deadlines,
    FeeTerms,
    Keyring,
    PartyRef,
    PremiumRefundPolicy,
    PrincipalTerms,
    Role,
    StructuredAgreement,
    canonical_bytes,
    canonical_hash,
    sign_binding,
    verify_binding,
)
from .engine import EpisodeEconomics, EpisodePlan, check_episode, ledger_economics, plan_economics
from .errors import (
    BadBinding,
    DeadlineExceeded,
    DegenerateBaseline,
    EngineInconsistency,
    InsufficientFunds,
    InvalidAgreement,
    LedgerError,
    NotEnabled,
    PolicyViolation,
    SuretyError,
    TransitionError,
    UnknownAccount,
    WrongSender,
)
from .ledger import (
    InstructionKind,
    Ledger,
    LedgerInstruction,
    Receipt,
    replay_receipts,
    settle_claim,
)
from .lifecycle import (
    ApplyResult,
    FeeState,
    JobState,
    Phase,
    PrincipalState,
    SettlementMachine,
    enabled_actions,
    new_job,
    release_auth,
    release_ready,
    replay,
    sigma_roles,
)
from .market_sim import (
    CellMetrics,
    CellParams,
    CellPlan,
    EpisodeDraw,
    EpisodeDraws,
    EpisodeOutcome,
    SweepConfig,
    SweepResult,
    UserPolicy,
    draw_episodes,
    merchant_posts,
    prepare_cell,
    render_csv,
    run_cell,
    run_episode,
    run_sweep,
    user_adopts,
    user_estimate,
    write_csv,
)
from .underwriting import (
    CollateralSchedule,
    PricingPolicy,
    Quote,
    RiskChannel,
    collateral,
    estimate_risk,
    premium,
    quote,
)

__version__ = "0.1.0"
