"""Protocol-path episode runner.

The market simulator decides *what* happens in an episode (adoption,
collateral posting, override, execution outcome) from pre-drawn
randomness. This module turns one such decision vector into the full
action script, plays it through the settlement machine against a fresh
ledger, and reduces the resulting custody flows to episode economics.

The same economics are also computable in closed form from the decision
vector alone. ``check_episode`` runs both and raises
``EngineInconsistency`` on any disagreement, which keeps the fast
vectorized simulation path honest against the actual machine.

All amounts are integer minor units.
"""

from __future__ import annotations

from dataclasses import dataclass

from .actions import Action, ActionKind
from .agreement import (
    AssuranceMode,
    Deadlines,
    FeeTerms,
    Keyring,
    PartyRef,
    PrincipalTerms,
    Role,
    StructuredAgreement,
    canonical_hash,
)
from .errors import EngineInconsistency
from .ledger import InstructionKind, Ledger
from .lifecycle import Phase, SettlementMachine, new_job

USER = "user-1"
MERCHANT = "merchant-1"
UNDERWRITER = "uw-1"
EVALUATOR = "eval-1"
SETTLEMENT = "settle-1"

_KEYRING = Keyring.demo([USER, MERCHANT, UNDERWRITER])
_MACHINE = SettlementMachine(_KEYRING)

_H = PartyRef(USER, Role.HUMAN_REQUESTOR)
_B = PartyRef(MERCHANT, Role.BUSINESS_AGENT)
_U = PartyRef(UNDERWRITER, Role.UNDERWRITER)
_E = PartyRef(EVALUATOR, Role.EVALUATOR)
_S = PartyRef(SETTLEMENT, Role.SETTLEMENT)

# far past any scripted timestamp; the scripts below use t = 0, 1, 2, ...
_DEADLINES = Deadlines(delivery=10_000, claim=20_000, dispute=30_000)


@dataclass(frozen=True)
class EpisodePlan:
    """Decision vector for one episode, after all randomness is resolved.

    ``fail`` is the execution coin for the episode's purchase; it applies
    to the counterfactual (no protocol) world as well, so protected and
    unprotected runs of the same episode share their luck.
    """

    m_minor: int
    d_minor: int
    pi_minor: int
    adopt: bool
    post: bool
    override_proceed: bool
    fail: bool


@dataclass(frozen=True)
class EpisodeEconomics:
    executed: bool
    cancelled: bool
    failed: bool
    user_loss: int
    underwriter_delta: int


def plan_economics(plan: EpisodePlan) -> EpisodeEconomics:
    """Closed-form episode economics, no machine involved."""
    m, d, pi = plan.m_minor, plan.d_minor, plan.pi_minor
    if not plan.adopt:
        # outside the protocol the purchase simply runs, uncovered
        return EpisodeEconomics(True, False, plan.fail, m if plan.fail else 0, 0)
    covered = d == 0 or plan.post
    executed = covered or plan.override_proceed
    if not executed:
        return EpisodeEconomics(False, True, False, 0, 0)
    if not covered:
        # human override: premium bounced back, no protection either way
        return EpisodeEconomics(True, False, plan.fail, m if plan.fail else 0, 0)
    if plan.fail:
        slash = min(d, m)
        payout = min(m - slash, m)
        return EpisodeEconomics(True, False, True, m - slash - payout, pi - payout)
    return EpisodeEconomics(True, False, False, 0, pi)


def ledger_economics(plan: EpisodePlan, job_id: str = "sim-job") -> EpisodeEconomics:
    """Run the adopted episode through the machine and read the ledger.

    Non-adopting episodes never touch the protocol; for those this simply
    returns the closed-form economics.
    """
    if not plan.adopt:
        return plan_economics(plan)

    m, d, pi = plan.m_minor, plan.d_minor, plan.pi_minor
    ledger = Ledger()
    ledger.open_account(f"wallet:{USER}", m + pi)
    ledger.open_account(f"wallet:{MERCHANT}", d)
    ledger.open_account(f"treasury:{UNDERWRITER}", 0)
    ledger.open_account(f"escrow:{job_id}", 0)
    ledger.open_account(f"collateral:{job_id}", 0)
    supply = m + pi + d

    draft = StructuredAgreement(
        job_id=job_id,
        task_spec="execute one covered purchase",
        assurance_mode=AssuranceMode.FUND_INVOLVING,
        fee_terms=FeeTerms(0),
        principal_terms=PrincipalTerms(m, PartyRef(MERCHANT, Role.BUSINESS_AGENT)),
        acceptance_criteria="funds applied to the stated purchase",
        deadlines=_DEADLINES,
        coverage_limit=m,
    )
    a_hash = canonical_hash(draft)

    state = new_job(job_id)
    t = 0

    def step(kind: ActionKind, sender: PartyRef, payload: dict, signed: bool = False) -> None:
        nonlocal state, t
        signature = _KEYRING.sign(sender.id, job_id, a_hash) if signed else None
        action = Action(kind=kind, sender=sender, payload=payload, signature=signature)
        state, instructions = _MACHINE.apply(state, action, t)
        t += 1
        for instruction in instructions:
            ledger.execute(instruction)

    step(
        ActionKind.SUBMIT_REQUEST,
        _H,
        {
            "job_id": job_id,
            "task_spec": draft.task_spec,
            "fee_terms": {"amount": 0, "custody": "escrow"},
            "principal_terms": {
                "amount": m,
                "destination": {"id": MERCHANT, "role": Role.BUSINESS_AGENT.value},
            },
        },
    )
    step(ActionKind.ACCEPT_REQUEST, _B, {"job_id": job_id, "decision": "accept"})
    step(ActionKind.PROPOSE_AGREEMENT, _B, {"job_id": job_id, "agreement_draft": draft.to_dict()})
    step(ActionKind.SIGN_AGREEMENT, _H, {"job_id": job_id, "agreement_hash": a_hash})
    step(ActionKind.SIGN_AGREEMENT, _B, {"job_id": job_id, "agreement_hash": a_hash})
    step(
        ActionKind.LOCK_FEE_ESCROW,
        _H,
        {"job_id": job_id, "agreement_hash": a_hash, "lock_ref": f"{job_id}.fee-lock"},
        signed=True,
    )
    step(
        ActionKind.REQUEST_UW,
        _B,
        {"job_id": job_id, "agreement_hash": a_hash, "coverage_request": {"principal": m}},
    )
    step(
        ActionKind.UW_DECISION,
        _U,
        {
            "job_id": job_id,
            "agreement_hash": a_hash,
            "decision": "approve",
            "premium": pi,
            "collateral_required": d,
        },
        signed=True,
    )
    step(
        ActionKind.PAY_PREMIUM,
        _H,
        {"job_id": job_id, "agreement_hash": a_hash, "premium": pi, "premium_ref": f"{job_id}.premium"},
        signed=True,
    )

    covered = d == 0 or plan.post
    if covered:
        step(
            ActionKind.LOCK_COLLATERAL,
            _B,
            {"job_id": job_id, "agreement_hash": a_hash, "amount": d, "collateral_ref": f"{job_id}.collateral"},
            signed=True,
        )
    else:
        step(ActionKind.REFUSE_COLLATERAL, _B, {"job_id": job_id, "agreement_hash": a_hash}, signed=True)
        decision = "proceed" if plan.override_proceed else "cancel"
        step(
            ActionKind.OVERRIDE_DECISION,
            _H,
            {"job_id": job_id, "agreement_hash": a_hash, "decision": decision},
            signed=True,
        )
        if not plan.override_proceed:
            step(ActionKind.UNWIND_PRE_EXECUTION, _S, {"job_id": job_id, "agreement_hash": a_hash})
            if state.phase is not Phase.CANCELLED:
                raise EngineInconsistency("cancelled episode did not end in CANCELLED")
            if ledger.total_supply() != supply:
                raise EngineInconsistency("value leaked during cancellation")
            return EpisodeEconomics(
                executed=False,
                cancelled=True,
                failed=False,
                user_loss=0,
                underwriter_delta=ledger.balance(f"treasury:{UNDERWRITER}"),
            )

    u_token = _KEYRING.sign(UNDERWRITER, job_id, a_hash)
    step(
        ActionKind.RELEASE_PRINCIPAL,
        _S,
        {
            "job_id": job_id,
            "agreement_hash": a_hash,
            "approvals": [u_token],
            "transfer_ref": f"{job_id}.transfer",
        },
    )
    step(
        ActionKind.SUBMIT_EXECUTION_EVIDENCE,
        _B,
        {"job_id": job_id, "agreement_hash": a_hash, "exec_evidence_ref": f"{job_id}.evidence"},
        signed=True,
    )
    step(
        ActionKind.SUBMIT_DELIVERABLE,
        _B,
        {"job_id": job_id, "agreement_hash": a_hash, "deliverable_ref": f"{job_id}.deliverable"},
        signed=True,
    )

    outcome = "fail" if plan.fail else "pass"
    step(
        ActionKind.EVALUATE_OUTCOME,
        _E,
        {"job_id": job_id, "agreement_hash": a_hash, "outcome": outcome},
    )
    step(
        ActionKind.SETTLE_FEE_ESCROW,
        _S,
        {
            "job_id": job_id,
            "agreement_hash": a_hash,
            "disposition": "refund" if plan.fail else "release",
            "settlement_ref": f"{job_id}.fee-settle",
        },
    )

    if outcome == "pass":
        if covered and d > 0:
            step(
                ActionKind.SETTLE_COLLATERAL,
                _S,
                {
                    "job_id": job_id,
                    "agreement_hash": a_hash,
                    "disposition": "unlock",
                    "amount": d,
                    "settlement_ref": f"{job_id}.collateral-settle",
                },
            )
    elif covered:
        step(
            ActionKind.FILE_CLAIM,
            _H,
            {
                "job_id": job_id,
                "agreement_hash": a_hash,
                "trigger": "execution_failure",
                "claimed_loss": m,
                "evidence_ref": f"{job_id}.claim-evidence",
            },
        )
        slash = min(d, m)
        if d > 0:
            step(
                ActionKind.SETTLE_COLLATERAL,
                _S,
                {
                    "job_id": job_id,
                    "agreement_hash": a_hash,
                    "disposition": "slash",
                    "amount": slash,
                    "settlement_ref": f"{job_id}.collateral-settle",
                },
            )
        reimbursement = min(m - slash, m)
        if reimbursement > 0:
            step(
                ActionKind.PAY_CLAIM,
                _S,
                {
                    "job_id": job_id,
                    "agreement_hash": a_hash,
                    "payout": reimbursement,
                    "payout_ref": f"{job_id}.payout",
                },
            )

    if state.phase is not Phase.CLOSED:
        raise EngineInconsistency(f"episode ended in {state.phase} instead of CLOSED")
    if ledger.total_supply() != supply:
        raise EngineInconsistency("episode violated value conservation")
    if ledger.balance(f"escrow:{job_id}") != 0 or ledger.balance(f"collateral:{job_id}") != 0:
        raise EngineInconsistency("job vaults were not emptied at close")

    slash_received = 0
    payout_received = 0
    for receipt in ledger.receipts():
        if receipt.kind is InstructionKind.SLASH_COLLATERAL:
            slash_received += receipt.amount
        elif receipt.kind is InstructionKind.PAY_CLAIM:
            payout_received += receipt.amount
    failed = plan.fail
    user_loss = m - slash_received - payout_received if failed else 0
    return EpisodeEconomics(
        executed=True,
        cancelled=False,
        failed=failed,
        user_loss=user_loss,
        underwriter_delta=ledger.balance(f"treasury:{UNDERWRITER}"),
    )


def check_episode(plan: EpisodePlan, job_id: str = "sim-job") -> EpisodeEconomics:
    """Compute economics both ways and insist they agree exactly."""
    expected = plan_economics(plan)
    if not plan.adopt:
        return expected
    actual = ledger_economics(plan, job_id)
    if actual != expected:
        raise EngineInconsistency(
            f"ledger economics {actual} diverge from closed-form economics {expected}"
        )
    return actual
