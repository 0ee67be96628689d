"""The deterministic job settlement state machine.

A job moves through the phases REQUEST, NEGOTIATION, TRANSACTION,
EVALUATION, CLOSED, with CANCELLED reachable where the transition rules
permit. Inside TRANSACTION two independent fund tracks advance: the fee
track (escrowed service compensation) and, for fund-involving jobs, the
principal track (execution capital guarded by underwriting, collateral,
and a multi-signature release predicate).

``SettlementMachine.apply`` is a pure function of (state, action, now).
It never reads a clock, never touches balances, and reports every custody
side effect as ledger instructions for the caller to execute. Replaying a
job's event log through ``apply`` reproduces the final state exactly.

Validation order, so error types are predictable:

1. payload shape (PolicyViolation)
2. enablement of the action kind in the current state (NotEnabled)
3. sender role and identity (WrongSender)
4. agreement-hash binding and signature token (BadBinding)
5. deadlines (DeadlineExceeded)
6. value and policy consistency (PolicyViolation)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, NamedTuple, Optional

from .actions import Action, ActionKind, OPTIONALLY_SIGNED_KINDS, SIGNED_KINDS
from .agreement import (
    AssuranceMode,
    FeeTerms,
    Keyring,
    PartyRef,
    PremiumRefundPolicy,
    CollateralPolicy,
    PrincipalTerms,
    Role,
    StructuredAgreement,
    canonical_hash,
)
from .errors import (
    BadBinding,
    DeadlineExceeded,
    InvalidAgreement,
    NotEnabled,
    PolicyViolation,
    WrongSender,
)
from .ledger import InstructionKind, LedgerInstruction, settle_claim


class Phase(Enum):
    REQUEST = "REQUEST"
    NEGOTIATION = "NEGOTIATION"
    TRANSACTION = "TRANSACTION"
    EVALUATION = "EVALUATION"
    CLOSED = "CLOSED"
    CANCELLED = "CANCELLED"


class FeeState(Enum):
    FEE_AWAIT_LOCK = "FEE_AWAIT_LOCK"
    FEE_ESCROW_LOCKED = "FEE_ESCROW_LOCKED"
    FEE_DELIVERED = "FEE_DELIVERED"


class PrincipalState(Enum):
    UW_AWAIT_REQUEST = "UW_AWAIT_REQUEST"
    UW_REVIEW = "UW_REVIEW"
    PREMIUM_PENDING = "PREMIUM_PENDING"
    COLLATERAL_REQUESTED = "COLLATERAL_REQUESTED"
    OVERRIDE_PENDING = "OVERRIDE_PENDING"
    APPROVAL_PENDING = "APPROVAL_PENDING"
    RELEASABLE = "RELEASABLE"
    EXECUTION_PENDING = "EXECUTION_PENDING"
    CANCELLED = "CANCELLED"


class ApplyResult(NamedTuple):
    state: "JobState"
    instructions: tuple[LedgerInstruction, ...]


@dataclass(frozen=True)
class JobState:
    """Immutable snapshot of one job. ``phase`` is None before SubmitRequest."""

    job_id: str
    phase: Optional[Phase] = None
    fee_state: FeeState = FeeState.FEE_AWAIT_LOCK
    principal_state: Optional[PrincipalState] = None

    requestor_id: Optional[str] = None
    requestor_role: Optional[Role] = None
    human_id: Optional[str] = None
    provider_id: Optional[str] = None
    underwriter_id: Optional[str] = None
    evaluator_id: Optional[str] = None

    request_fee: Optional[FeeTerms] = None
    request_principal: Optional[PrincipalTerms] = None

    draft: Optional[StructuredAgreement] = None
    draft_hash: Optional[str] = None
    requestor_signed: bool = False
    provider_signed: bool = False
    agreement: Optional[StructuredAgreement] = None
    agreement_hash: Optional[str] = None

    uw_approved: Optional[bool] = None
    premium_quote: Optional[int] = None
    collateral_quote: Optional[int] = None
    premium_paid: bool = False
    premium_refunded: bool = False
    coverage_void: bool = False
    collateral_posted: bool = False
    posted_amount: int = 0
    override_ack: bool = False
    approvals: frozenset = frozenset()  # of (role value, party id, token)

    fee_locked: bool = False
    fee_settled: bool = False
    fee_disposition: Optional[str] = None
    delivery_ref: Optional[str] = None
    exec_evidence_ref: Optional[str] = None
    principal_released: bool = False

    outcome: Optional[str] = None
    outcome_trigger: Optional[str] = None
    outcome_evidence_ref: Optional[str] = None
    claim: Optional[tuple] = None  # (trigger, claimed_loss, evidence_ref)
    collateral_settled: bool = False
    slash_amount: int = 0
    claim_paid: bool = False
    payout_amount: int = 0
    unwound: bool = False
    cancel_reason: Optional[str] = None

    seq: int = 0
    last_ts: int = -1
    log: tuple = ()

    # -- derived views ------------------------------------------------------

    @property
    def fund_involving(self) -> bool:
        return self.agreement is not None and self.agreement.assurance_mode is AssuranceMode.FUND_INVOLVING

    @property
    def coverage_bound(self) -> bool:
        return bool(self.uw_approved) and self.premium_paid

    @property
    def coverage_in_force(self) -> bool:
        """Coverage is live for claims only once the collateral demand was met."""
        return self.coverage_bound and self.collateral_posted and not self.coverage_void

    def facts(self) -> dict:
        return {
            "requestor_signed": self.requestor_signed,
            "service_signed": self.provider_signed,
            "coverage_bound": self.coverage_bound,
            "override_ack": self.override_ack,
            "uw_decision": None
            if self.uw_approved is None
            else {
                "approve": self.uw_approved,
                "premium": self.premium_quote,
                "collateral_required": self.collateral_quote,
            },
            "approvals": sorted(self.approvals),
            "delivery_ref": self.delivery_ref,
            "exec_evidence_ref": self.exec_evidence_ref,
            "outcome": None
            if self.outcome is None
            else {
                "outcome": self.outcome,
                "trigger": self.outcome_trigger,
                "evidence_ref": self.outcome_evidence_ref,
            },
        }


def new_job(job_id: str) -> JobState:
    if not isinstance(job_id, str) or not job_id:
        raise PolicyViolation("job_id must be a non-empty string")
    return JobState(job_id=job_id)


# -- authorization predicates ----------------------------------------------


def release_auth(sigma_roles: set[Role] | frozenset, requestor_role: Role) -> bool:
    """Adaptive release predicate A and (U or H) over the signature set.

    When the requestor side is a human acting for themselves there is no
    assistant signer, so A holds vacuously and the rule degrades to 1-of-2
    (human or underwriter). When an assistant submitted the job, the
    assistant's signature is mandatory and the rule is 2-of-3.
    """
    has_h = Role.HUMAN_REQUESTOR in sigma_roles
    has_a = Role.ASSISTANT_REQUESTOR in sigma_roles
    has_u = Role.UNDERWRITER in sigma_roles
    a_ok = True if requestor_role is Role.HUMAN_REQUESTOR else has_a
    return a_ok and (has_u or has_h)


def sigma_roles(state: JobState) -> frozenset:
    return frozenset(Role(role_value) for role_value, _pid, _tok in state.approvals)


def coverage_bound(state: JobState) -> bool:
    return state.coverage_bound


def release_ready(state: JobState) -> bool:
    if state.requestor_role is None:
        return False
    return release_auth(sigma_roles(state), state.requestor_role) and (
        state.coverage_bound or state.override_ack
    )


# -- enablement table --------------------------------------------------------

_FEE_TRACK_ENABLED = {
    FeeState.FEE_AWAIT_LOCK: {ActionKind.LOCK_FEE_ESCROW},
    FeeState.FEE_ESCROW_LOCKED: {ActionKind.SUBMIT_DELIVERABLE},
    FeeState.FEE_DELIVERED: set(),
}

_PRINCIPAL_TRACK_ENABLED = {
    PrincipalState.UW_AWAIT_REQUEST: {ActionKind.REQUEST_UW},
    PrincipalState.UW_REVIEW: {ActionKind.UW_DECISION},
    PrincipalState.PREMIUM_PENDING: {ActionKind.PAY_PREMIUM},
    PrincipalState.COLLATERAL_REQUESTED: {ActionKind.LOCK_COLLATERAL, ActionKind.REFUSE_COLLATERAL},
    PrincipalState.OVERRIDE_PENDING: {ActionKind.OVERRIDE_DECISION},
    PrincipalState.APPROVAL_PENDING: {ActionKind.APPROVE_RELEASE},
    PrincipalState.RELEASABLE: {ActionKind.RELEASE_PRINCIPAL},
    PrincipalState.EXECUTION_PENDING: {ActionKind.SUBMIT_EXECUTION_EVIDENCE},
    PrincipalState.CANCELLED: set(),
}


def _cancellable(state: JobState) -> bool:
    if state.phase in (Phase.REQUEST, Phase.NEGOTIATION):
        return True
    if state.phase is Phase.TRANSACTION:
        # cancellation window closes once the deliverable is in or the
        # principal has left custody
        if state.fee_state is FeeState.FEE_DELIVERED:
            return False
        if state.principal_state is PrincipalState.EXECUTION_PENDING:
            return False
        return not state.principal_released
    return False


def enabled_actions(state: JobState) -> set[ActionKind]:
    """Action kinds the tables enable in the current compound state.

    Time-dependent windows (premium lapse, claim window) are resolved at
    apply time; this static view assumes no deadline has passed.
    """
    if state.phase is None:
        return {ActionKind.SUBMIT_REQUEST}
    if state.phase is Phase.REQUEST:
        return {ActionKind.ACCEPT_REQUEST, ActionKind.REJECT_REQUEST, ActionKind.CANCEL_JOB}
    if state.phase is Phase.NEGOTIATION:
        enabled = {ActionKind.PROPOSE_AGREEMENT, ActionKind.CANCEL_JOB}
        if state.draft is not None:
            enabled.add(ActionKind.SIGN_AGREEMENT)
        return enabled
    if state.phase is Phase.TRANSACTION:
        enabled = set(_FEE_TRACK_ENABLED[state.fee_state])
        if state.principal_state is not None:
            enabled |= _PRINCIPAL_TRACK_ENABLED[state.principal_state]
        if _cancellable(state):
            enabled.add(ActionKind.CANCEL_JOB)
        return enabled
    if state.phase is Phase.EVALUATION:
        enabled: set[ActionKind] = set()
        if state.outcome is None:
            enabled.add(ActionKind.EVALUATE_OUTCOME)
            return enabled
        if not state.fee_settled:
            enabled.add(ActionKind.SETTLE_FEE_ESCROW)
        if state.fund_involving:
            if state.posted_amount > 0 and not state.collateral_settled:
                enabled.add(ActionKind.SETTLE_COLLATERAL)
            if (
                state.outcome == "fail"
                and state.coverage_in_force
                and state.claim is None
            ):
                enabled.add(ActionKind.FILE_CLAIM)
            if state.claim is not None and not state.claim_paid:
                if state.posted_amount == 0 or state.collateral_settled:
                    enabled.add(ActionKind.PAY_CLAIM)
        return enabled
    if state.phase is Phase.CANCELLED:
        return set() if state.unwound else {ActionKind.UNWIND_PRE_EXECUTION}
    return set()  # CLOSED


# -- the machine --------------------------------------------------------------


class SettlementMachine:
    """Applies typed actions to job states and emits custody instructions.

    ``keyring`` maps party ids to the secrets used to verify binding
    signature tokens. ``pre_settlement_gate`` is an optional predicate
    called with the fully signed draft before the job may enter
    TRANSACTION; it stands in for external authorization chains and
    defaults to always passing.
    """

    def __init__(
        self,
        keyring: Keyring,
        pre_settlement_gate: Optional[Callable[[JobState, StructuredAgreement], bool]] = None,
    ) -> None:
        self.keyring = keyring
        self.pre_settlement_gate = pre_settlement_gate

    # -- public API ---------------------------------------------------------

    def apply(self, state: JobState, action: Action, now: int) -> ApplyResult:
        if isinstance(now, bool) or not isinstance(now, int):
            raise PolicyViolation("now must be an integer timestamp")
        if now < state.last_ts:
            raise PolicyViolation("timestamps must be non-decreasing per job")
        action.validate_shape()
        if action.payload.get("job_id") != state.job_id:
            raise PolicyViolation("payload job_id does not match the job")

        kind = action.kind
        enabled = enabled_actions(state)
        if kind not in enabled:
            if (
                kind is ActionKind.OVERRIDE_DECISION
                and state.phase is Phase.TRANSACTION
                and state.principal_state is PrincipalState.PREMIUM_PENDING
                and self._premium_lapsed(state, now)
            ):
                # unpaid premium past the delivery deadline degrades the
                # quote to the same escalation point as a rejection
                pass
            else:
                raise NotEnabled(f"{kind.value} is not enabled in the current state")

        self._check_sender(state, action)
        expected_hash = self._check_binding(state, action)

        handler = _HANDLERS[kind]
        new_state, instructions = handler(self, state, action, now, expected_hash)

        new_state = self._post_transition(new_state, now)
        event = self._event(new_state, action, now, instructions)
        new_state = replace(
            new_state,
            seq=state.seq + 1,
            last_ts=now,
            log=state.log + (event,),
        )
        return ApplyResult(new_state, tuple(instructions))

    # -- shared checks --------------------------------------------------------

    @staticmethod
    def _premium_lapsed(state: JobState, now: int) -> bool:
        return state.agreement is not None and now > state.agreement.deadlines.delivery

    def _check_sender(self, state: JobState, action: Action) -> None:
        sender = action.sender
        kind = action.kind
        if not isinstance(sender, PartyRef):
            raise WrongSender("sender must be a PartyRef")

        def must_be(*allowed: tuple[Optional[str], Role]) -> None:
            for pid, role in allowed:
                if pid is not None and sender.id == pid and sender.role is role:
                    return
            raise WrongSender(f"{kind.value}: sender {sender.id!r}/{sender.role.value} not permitted")

        requestor = (state.requestor_id, state.requestor_role) if state.requestor_id else None
        human = (state.human_id, Role.HUMAN_REQUESTOR) if state.human_id else None
        provider = (state.provider_id, Role.BUSINESS_AGENT) if state.provider_id else None

        if kind is ActionKind.SUBMIT_REQUEST:
            if sender.role not in (Role.HUMAN_REQUESTOR, Role.ASSISTANT_REQUESTOR):
                raise WrongSender("SubmitRequest must come from the requestor side")
        elif kind in (ActionKind.ACCEPT_REQUEST, ActionKind.REJECT_REQUEST):
            if sender.role is not Role.BUSINESS_AGENT:
                raise WrongSender(f"{kind.value} must come from a business agent")
        elif kind in (ActionKind.PROPOSE_AGREEMENT, ActionKind.SIGN_AGREEMENT):
            must_be(*(p for p in (requestor, provider) if p))
        elif kind is ActionKind.CANCEL_JOB:
            must_be(*(p for p in (requestor, human, provider) if p))
        elif kind in (ActionKind.LOCK_FEE_ESCROW, ActionKind.FILE_CLAIM):
            must_be(*(p for p in (requestor, human) if p))
        elif kind in (
            ActionKind.SUBMIT_DELIVERABLE,
            ActionKind.REQUEST_UW,
            ActionKind.LOCK_COLLATERAL,
            ActionKind.REFUSE_COLLATERAL,
            ActionKind.SUBMIT_EXECUTION_EVIDENCE,
        ):
            must_be(*(p for p in (provider,) if p))
        elif kind in (
            ActionKind.SETTLE_FEE_ESCROW,
            ActionKind.RELEASE_PRINCIPAL,
            ActionKind.UNWIND_PRE_EXECUTION,
            ActionKind.SETTLE_COLLATERAL,
        ):
            if sender.role is not Role.SETTLEMENT:
                raise WrongSender(f"{kind.value} must come from the settlement layer")
        elif kind is ActionKind.UW_DECISION:
            if sender.role is not Role.UNDERWRITER:
                raise WrongSender("UWDecision must come from an underwriter")
            if state.underwriter_id is not None and sender.id != state.underwriter_id:
                raise WrongSender("a different underwriter already holds this job")
        elif kind in (ActionKind.PAY_PREMIUM, ActionKind.OVERRIDE_DECISION):
            must_be(*(p for p in (human,) if p))
        elif kind is ActionKind.APPROVE_RELEASE:
            allowed = [human] if human else []
            if state.requestor_role is Role.ASSISTANT_REQUESTOR and requestor:
                allowed.append(requestor)
            must_be(*allowed)
        elif kind is ActionKind.EVALUATE_OUTCOME:
            if sender.role is not Role.EVALUATOR:
                raise WrongSender("EvaluateOutcome must come from an evaluator")
        elif kind is ActionKind.PAY_CLAIM:
            if sender.role is Role.SETTLEMENT:
                return
            if sender.role is Role.UNDERWRITER and sender.id == state.underwriter_id:
                return
            raise WrongSender("PayClaim must come from the job's underwriter or the settlement layer")

    def _check_binding(self, state: JobState, action: Action) -> Optional[str]:
        """Validate the payload agreement_hash and the signature token."""
        kind = action.kind
        expected: Optional[str]
        if kind in (ActionKind.SUBMIT_REQUEST, ActionKind.ACCEPT_REQUEST, ActionKind.REJECT_REQUEST, ActionKind.PROPOSE_AGREEMENT):
            expected = None
        elif kind in (ActionKind.SIGN_AGREEMENT, ActionKind.CANCEL_JOB):
            expected = state.agreement_hash or state.draft_hash
        else:
            expected = state.agreement_hash

        if "agreement_hash" in action.payload:
            given = action.payload["agreement_hash"]
            if given != expected:
                raise BadBinding(f"{kind.value}: agreement_hash does not match the job's agreement")

        if action.signature is not None and (kind in SIGNED_KINDS or kind in OPTIONALLY_SIGNED_KINDS):
            subject_hash = expected or ""
            if not self.keyring.verify(action.sender.id, state.job_id, subject_hash, action.signature):
                raise BadBinding(f"{kind.value}: invalid signature token")
        return expected

    # -- handlers -------------------------------------------------------------

    def _h_submit_request(self, state, action, now, _h):
        p = action.payload
        try:
            fee = FeeTerms(**p["fee_terms"]) if isinstance(p["fee_terms"], dict) else p["fee_terms"]
            if not isinstance(fee, FeeTerms):
                raise PolicyViolation("fee_terms must describe escrowed compensation")
            principal = None
            if p.get("principal_terms") is not None:
                raw = p["principal_terms"]
                if isinstance(raw, PrincipalTerms):
                    principal = raw
                else:
                    dest = raw["destination"]
                    principal = PrincipalTerms(
                        amount=raw["amount"], destination=PartyRef(dest["id"], Role(dest["role"]))
                    )
        except InvalidAgreement as exc:
            raise PolicyViolation(f"SubmitRequest: {exc}") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise PolicyViolation(f"SubmitRequest: malformed terms: {exc}") from exc
        if not isinstance(p["task_spec"], str):
            raise PolicyViolation("SubmitRequest: task_spec must be a string")

        sender = action.sender
        if sender.role is Role.ASSISTANT_REQUESTOR:
            principal_id = p.get("principal")
            if not isinstance(principal_id, str) or not principal_id:
                raise PolicyViolation("an assistant requestor must name its human principal")
        else:
            if p.get("principal") is not None:
                raise PolicyViolation("a human requestor is their own principal")
            principal_id = sender.id
        new = replace(
            state,
            phase=Phase.REQUEST,
            requestor_id=sender.id,
            requestor_role=sender.role,
            human_id=principal_id,
            request_fee=fee,
            request_principal=principal,
        )
        return new, []

    def _h_accept_request(self, state, action, now, _h):
        if action.payload["decision"] != "accept":
            raise PolicyViolation("AcceptRequest requires decision 'accept'")
        return replace(state, phase=Phase.NEGOTIATION, provider_id=action.sender.id), []

    def _h_reject_request(self, state, action, now, _h):
        if action.payload["decision"] != "reject":
            raise PolicyViolation("RejectRequest requires decision 'reject'")
        return replace(state, phase=Phase.CANCELLED, cancel_reason=action.payload.get("reason")), []

    def _h_propose_agreement(self, state, action, now, _h):
        raw = action.payload["agreement_draft"]
        try:
            draft = raw if isinstance(raw, StructuredAgreement) else StructuredAgreement.from_dict(raw)
        except InvalidAgreement as exc:
            raise PolicyViolation(f"ProposeAgreement: invalid draft: {exc}") from exc
        if draft.job_id != state.job_id:
            raise PolicyViolation("ProposeAgreement: draft job_id does not match the job")
        # a fresh draft voids any signatures collected on the previous one
        return (
            replace(
                state,
                draft=draft,
                draft_hash=canonical_hash(draft),
                requestor_signed=False,
                provider_signed=False,
            ),
            [],
        )

    def _h_sign_agreement(self, state, action, now, _h):
        sender = action.sender
        if sender.id == state.requestor_id:
            new = replace(state, requestor_signed=True)
        else:
            new = replace(state, provider_signed=True)
        if new.requestor_signed and new.provider_signed and new.phase is Phase.NEGOTIATION:
            if self.pre_settlement_gate is not None and not self.pre_settlement_gate(new, new.draft):
                raise PolicyViolation("pre-settlement authorization gate refused the agreement")
            fund = new.draft.assurance_mode is AssuranceMode.FUND_INVOLVING
            new = replace(
                new,
                phase=Phase.TRANSACTION,
                agreement=new.draft,
                agreement_hash=new.draft_hash,
                principal_state=PrincipalState.UW_AWAIT_REQUEST if fund else None,
            )
        return new, []

    def _h_cancel_job(self, state, action, now, _h):
        if not _cancellable(state):
            raise NotEnabled("CancelJob: the cancellation window has closed")
        new = replace(
            state,
            phase=Phase.CANCELLED,
            cancel_reason=action.payload.get("reason"),
            principal_state=PrincipalState.CANCELLED if state.principal_state is not None else None,
        )
        return new, []

    def _h_lock_fee_escrow(self, state, action, now, _h):
        agreement = state.agreement
        instructions = []
        if agreement.fee_terms.amount > 0:
            instructions.append(
                LedgerInstruction(
                    kind=InstructionKind.LOCK_FEE,
                    job_id=state.job_id,
                    agreement_hash=state.agreement_hash,
                    amount=agreement.fee_terms.amount,
                    source=f"wallet:{state.human_id}",
                    dest=f"escrow:{state.job_id}",
                    ref=action.payload["lock_ref"],
                )
            )
        return replace(state, fee_state=FeeState.FEE_ESCROW_LOCKED, fee_locked=True), instructions

    def _h_submit_deliverable(self, state, action, now, _h):
        return (
            replace(
                state,
                fee_state=FeeState.FEE_DELIVERED,
                delivery_ref=action.payload["deliverable_ref"],
            ),
            [],
        )

    def _h_settle_fee_escrow(self, state, action, now, _h):
        disposition = action.payload["disposition"]
        if disposition not in ("release", "refund"):
            raise PolicyViolation("SettleFeeEscrow: disposition must be 'release' or 'refund'")
        if disposition == "release" and state.outcome != "pass":
            raise PolicyViolation("SettleFeeEscrow: release requires a passing evaluation")
        if disposition == "refund" and state.outcome != "fail":
            raise PolicyViolation("SettleFeeEscrow: refund requires a failing evaluation")
        instructions = []
        fee = state.agreement.fee_terms.amount
        if fee > 0 and state.fee_locked:
            if disposition == "release":
                kind, dest = InstructionKind.RELEASE_FEE, f"wallet:{state.provider_id}"
            else:
                kind, dest = InstructionKind.REFUND_FEE, f"wallet:{state.human_id}"
            instructions.append(
                LedgerInstruction(
                    kind=kind,
                    job_id=state.job_id,
                    agreement_hash=state.agreement_hash,
                    amount=fee,
                    source=f"escrow:{state.job_id}",
                    dest=dest,
                    ref=action.payload["settlement_ref"],
                )
            )
        return replace(state, fee_settled=True, fee_disposition=disposition), instructions

    def _h_request_uw(self, state, action, now, _h):
        return replace(state, principal_state=PrincipalState.UW_REVIEW), []

    def _h_uw_decision(self, state, action, now, _h):
        p = action.payload
        decision = p["decision"]
        if decision not in ("approve", "reject"):
            raise PolicyViolation("UWDecision: decision must be 'approve' or 'reject'")
        premium = p["premium"]
        if isinstance(premium, bool) or not isinstance(premium, int) or premium < 0:
            raise PolicyViolation("UWDecision: premium must be a non-negative integer")
        collateral = p.get("collateral_required", 0)
        if isinstance(collateral, bool) or not isinstance(collateral, int) or collateral < 0:
            raise PolicyViolation("UWDecision: collateral_required must be a non-negative integer")
        if collateral > state.agreement.principal_terms.amount:
            raise PolicyViolation("UWDecision: collateral demand exceeds the principal")
        new = replace(state, underwriter_id=action.sender.id)
        if decision == "approve":
            approvals = new.approvals
            if action.signature is not None:
                # a signed approval doubles as the underwriter's release vote
                approvals = approvals | {(Role.UNDERWRITER.value, action.sender.id, action.signature)}
            new = replace(
                new,
                uw_approved=True,
                premium_quote=premium,
                collateral_quote=collateral,
                principal_state=PrincipalState.PREMIUM_PENDING,
                approvals=approvals,
            )
        else:
            if state.agreement.override_allowed:
                new = replace(new, uw_approved=False, principal_state=PrincipalState.OVERRIDE_PENDING)
            else:
                new = replace(
                    new,
                    uw_approved=False,
                    phase=Phase.CANCELLED,
                    principal_state=PrincipalState.CANCELLED,
                    cancel_reason="underwriter rejected and no override is allowed",
                )
        return new, []

    def _h_pay_premium(self, state, action, now, _h):
        if self._premium_lapsed(state, now):
            raise DeadlineExceeded("PayPremium: the premium window has lapsed")
        amount = action.payload["premium"]
        if amount != state.premium_quote:
            raise PolicyViolation("PayPremium: amount does not match the quoted premium")
        instructions = []
        if amount > 0:
            instructions.append(
                LedgerInstruction(
                    kind=InstructionKind.COLLECT_PREMIUM,
                    job_id=state.job_id,
                    agreement_hash=state.agreement_hash,
                    amount=amount,
                    source=f"wallet:{state.human_id}",
                    dest=f"treasury:{state.underwriter_id}",
                    ref=action.payload["premium_ref"],
                )
            )
        return (
            replace(state, premium_paid=True, principal_state=PrincipalState.COLLATERAL_REQUESTED),
            instructions,
        )

    def _h_lock_collateral(self, state, action, now, _h):
        amount = action.payload["amount"]
        if amount != state.collateral_quote:
            raise PolicyViolation("LockCollateral: amount does not match the quoted demand")
        instructions = []
        if amount > 0:
            instructions.append(
                LedgerInstruction(
                    kind=InstructionKind.LOCK_COLLATERAL,
                    job_id=state.job_id,
                    agreement_hash=state.agreement_hash,
                    amount=amount,
                    source=f"wallet:{state.provider_id}",
                    dest=f"collateral:{state.job_id}",
                    ref=action.payload["collateral_ref"],
                )
            )
        new = replace(
            state,
            collateral_posted=True,
            posted_amount=amount,
            principal_state=PrincipalState.APPROVAL_PENDING,
        )
        return self._maybe_releasable(new), instructions

    def _h_refuse_collateral(self, state, action, now, _h):
        return replace(state, principal_state=PrincipalState.OVERRIDE_PENDING), []

    def _h_override_decision(self, state, action, now, _h):
        decision = action.payload["decision"]
        if decision not in ("proceed", "cancel"):
            raise PolicyViolation("OverrideDecision: decision must be 'proceed' or 'cancel'")
        instructions = []
        if decision == "cancel":
            new = replace(
                state,
                phase=Phase.CANCELLED,
                principal_state=PrincipalState.CANCELLED,
                cancel_reason="human authority declined to proceed uncovered",
            )
            return new, instructions
        # proceeding uncovered: any quote that was paid never attaches, so
        # the premium goes straight back regardless of the refund policy
        new = replace(state, override_ack=True, coverage_void=True)
        if state.premium_paid and not state.premium_refunded and state.premium_quote:
            instructions.append(
                LedgerInstruction(
                    kind=InstructionKind.REFUND_PREMIUM,
                    job_id=state.job_id,
                    agreement_hash=state.agreement_hash,
                    amount=state.premium_quote,
                    source=f"treasury:{state.underwriter_id}",
                    dest=f"wallet:{state.human_id}",
                    ref=f"{state.job_id}.{state.seq}.premium-refund",
                )
            )
            new = replace(new, premium_refunded=True)
        new = replace(new, principal_state=PrincipalState.APPROVAL_PENDING)
        return self._maybe_releasable(new), instructions

    def _h_approve_release(self, state, action, now, _h):
        entry = (action.sender.role.value, action.sender.id, action.signature)
        new = replace(state, approvals=state.approvals | {entry})
        return self._maybe_releasable(new), []

    def _h_release_principal(self, state, action, now, _h):
        claimed = action.payload["approvals"]
        if not isinstance(claimed, (list, tuple)):
            raise PolicyViolation("ReleasePrincipal: approvals must be a list of tokens")
        by_token = {token: Role(role_value) for role_value, _pid, token in state.approvals}
        roles = set()
        for token in claimed:
            if token not in by_token:
                raise BadBinding("ReleasePrincipal: presented approval is not on record")
            roles.add(by_token[token])
        if not release_auth(roles, state.requestor_role):
            raise PolicyViolation("ReleasePrincipal: presented approvals do not authorize release")
        if not release_ready(state):
            raise NotEnabled("ReleasePrincipal: release predicate does not hold")
        terms = state.agreement.principal_terms
        instruction = LedgerInstruction(
            kind=InstructionKind.TRANSFER_PRINCIPAL,
            job_id=state.job_id,
            agreement_hash=state.agreement_hash,
            amount=terms.amount,
            source=f"wallet:{state.human_id}",
            dest=f"wallet:{terms.destination.id}",
            ref=action.payload["transfer_ref"],
        )
        new = replace(
            state,
            principal_released=True,
            principal_state=PrincipalState.EXECUTION_PENDING,
        )
        return new, [instruction]

    def _h_submit_execution_evidence(self, state, action, now, _h):
        return replace(state, exec_evidence_ref=action.payload["exec_evidence_ref"]), []

    def _h_unwind_pre_execution(self, state, action, now, _h):
        instructions = []
        p = action.payload
        if state.fee_locked and not state.fee_settled and state.agreement.fee_terms.amount > 0:
            instructions.append(
                LedgerInstruction(
                    kind=InstructionKind.REFUND_FEE,
                    job_id=state.job_id,
                    agreement_hash=state.agreement_hash,
                    amount=state.agreement.fee_terms.amount,
                    source=f"escrow:{state.job_id}",
                    dest=f"wallet:{state.human_id}",
                    ref=f"{state.job_id}.{state.seq}.fee-refund",
                )
            )
        new = state
        refundable = state.agreement is not None and (
            state.agreement.premium_refund_policy is PremiumRefundPolicy.REFUNDABLE
        )
        if state.premium_paid and not state.premium_refunded and state.premium_quote and refundable:
            instructions.append(
                LedgerInstruction(
                    kind=InstructionKind.REFUND_PREMIUM,
                    job_id=state.job_id,
                    agreement_hash=state.agreement_hash,
                    amount=state.premium_quote,
                    source=f"treasury:{state.underwriter_id}",
                    dest=f"wallet:{state.human_id}",
                    ref=p.get("premium_refund_ref") or f"{state.job_id}.{state.seq}.premium-refund",
                )
            )
            new = replace(new, premium_refunded=True)
        if state.collateral_posted and not state.collateral_settled and state.posted_amount > 0:
            instructions.append(
                LedgerInstruction(
                    kind=InstructionKind.UNLOCK_COLLATERAL,
                    job_id=state.job_id,
                    agreement_hash=state.agreement_hash,
                    amount=state.posted_amount,
                    source=f"collateral:{state.job_id}",
                    dest=f"wallet:{state.provider_id}",
                    ref=p.get("collateral_unlock_ref") or f"{state.job_id}.{state.seq}.collateral-unlock",
                )
            )
            new = replace(new, collateral_settled=True)
        new = replace(new, unwound=True, fee_settled=new.fee_settled or new.fee_locked)
        return new, instructions

    def _h_evaluate_outcome(self, state, action, now, _h):
        outcome = action.payload["outcome"]
        if outcome not in ("pass", "fail"):
            raise PolicyViolation("EvaluateOutcome: outcome must be 'pass' or 'fail'")
        return (
            replace(
                state,
                outcome=outcome,
                outcome_trigger=action.payload.get("trigger"),
                outcome_evidence_ref=action.payload.get("evidence_ref"),
                evaluator_id=action.sender.id,
            ),
            [],
        )

    def _h_settle_collateral(self, state, action, now, _h):
        disposition = action.payload["disposition"]
        amount = action.payload["amount"]
        if disposition not in ("slash", "unlock"):
            raise PolicyViolation("SettleCollateral: disposition must be 'slash' or 'unlock'")
        if isinstance(amount, bool) or not isinstance(amount, int) or amount < 0:
            raise PolicyViolation("SettleCollateral: amount must be a non-negative integer")
        instructions = []
        ref = action.payload["settlement_ref"]
        if disposition == "unlock":
            if state.outcome == "fail":
                no_slash = state.agreement.collateral_policy is CollateralPolicy.NO_SLASH
                window_lapsed = state.claim is None and now > state.agreement.deadlines.claim
                if not (no_slash or window_lapsed):
                    raise PolicyViolation(
                        "SettleCollateral: cannot unlock while a claim is possible or pending"
                    )
            if amount != state.posted_amount:
                raise PolicyViolation("SettleCollateral: unlock must return the full posted amount")
            instructions.append(
                LedgerInstruction(
                    kind=InstructionKind.UNLOCK_COLLATERAL,
                    job_id=state.job_id,
                    agreement_hash=state.agreement_hash,
                    amount=amount,
                    source=f"collateral:{state.job_id}",
                    dest=f"wallet:{state.provider_id}",
                    ref=ref,
                )
            )
            return replace(state, collateral_settled=True), instructions
        # slash path
        if state.outcome != "fail":
            raise PolicyViolation("SettleCollateral: slash requires a failing evaluation")
        if state.claim is None:
            raise PolicyViolation("SettleCollateral: slash requires a filed claim")
        if state.agreement.collateral_policy is CollateralPolicy.NO_SLASH:
            raise PolicyViolation("SettleCollateral: the agreement forbids slashing")
        _trigger, claimed_loss, _ev = state.claim
        expected_slash, _reimb = settle_claim(claimed_loss, state.posted_amount, state.agreement.coverage_limit)
        if amount != expected_slash:
            raise PolicyViolation("SettleCollateral: slash amount must equal min(collateral, loss)")
        if amount > 0:
            instructions.append(
                LedgerInstruction(
                    kind=InstructionKind.SLASH_COLLATERAL,
                    job_id=state.job_id,
                    agreement_hash=state.agreement_hash,
                    amount=amount,
                    source=f"collateral:{state.job_id}",
                    dest=f"wallet:{state.human_id}",
                    ref=ref,
                )
            )
        remainder = state.posted_amount - amount
        if remainder > 0:
            instructions.append(
                LedgerInstruction(
                    kind=InstructionKind.UNLOCK_COLLATERAL,
                    job_id=state.job_id,
                    agreement_hash=state.agreement_hash,
                    amount=remainder,
                    source=f"collateral:{state.job_id}",
                    dest=f"wallet:{state.provider_id}",
                    ref=f"{ref}.unlock",
                )
            )
        return replace(state, collateral_settled=True, slash_amount=amount), instructions

    def _h_file_claim(self, state, action, now, _h):
        if now > state.agreement.deadlines.claim:
            raise DeadlineExceeded("FileClaim: the claim window has closed")
        claimed_loss = action.payload["claimed_loss"]
        if isinstance(claimed_loss, bool) or not isinstance(claimed_loss, int) or claimed_loss < 0:
            raise PolicyViolation("FileClaim: claimed_loss must be a non-negative integer")
        claim = (action.payload["trigger"], claimed_loss, action.payload["evidence_ref"])
        return replace(state, claim=claim), []

    def _h_pay_claim(self, state, action, now, _h):
        _trigger, claimed_loss, _ev = state.claim
        slash = state.slash_amount
        expected = min(claimed_loss - slash, state.agreement.coverage_limit)
        payout = action.payload["payout"]
        if isinstance(payout, bool) or not isinstance(payout, int) or payout < 0:
            raise PolicyViolation("PayClaim: payout must be a non-negative integer")
        if payout != expected:
            raise PolicyViolation("PayClaim: payout must equal the uncovered loss up to the limit")
        instructions = []
        if payout > 0:
            instructions.append(
                LedgerInstruction(
                    kind=InstructionKind.PAY_CLAIM,
                    job_id=state.job_id,
                    agreement_hash=state.agreement_hash,
                    amount=payout,
                    source=f"treasury:{state.underwriter_id}",
                    dest=f"wallet:{state.human_id}",
                    ref=action.payload["payout_ref"],
                )
            )
        return replace(state, claim_paid=True, payout_amount=payout), instructions

    # -- post-transition bookkeeping ------------------------------------------

    def _maybe_releasable(self, state: JobState) -> JobState:
        if state.principal_state is PrincipalState.APPROVAL_PENDING and release_ready(state):
            return replace(state, principal_state=PrincipalState.RELEASABLE)
        return state

    @staticmethod
    def _evaluation_ready(state: JobState) -> bool:
        if state.fee_state is not FeeState.FEE_DELIVERED:
            return False
        if state.fund_involving:
            return state.exec_evidence_ref is not None
        return True

    @staticmethod
    def _closeable(state: JobState, now: int) -> bool:
        if state.outcome is None or not state.fee_settled:
            return False
        if state.fund_involving:
            if state.posted_amount > 0 and not state.collateral_settled:
                return False
            if state.claim is not None:
                if not state.claim_paid and state.posted_amount > 0 and not state.collateral_settled:
                    return False
                _t, claimed_loss, _e = state.claim
                expected = min(claimed_loss - state.slash_amount, state.agreement.coverage_limit)
                if expected > 0 and not state.claim_paid:
                    return False
            elif state.outcome == "fail" and state.coverage_in_force:
                # the claim window must lapse before a covered failure can close
                if now <= state.agreement.deadlines.claim:
                    return False
        return True

    def _post_transition(self, state: JobState, now: int) -> JobState:
        if state.phase is Phase.TRANSACTION and self._evaluation_ready(state):
            state = replace(state, phase=Phase.EVALUATION)
        if state.phase is Phase.EVALUATION and self._closeable(state, now):
            state = replace(state, phase=Phase.CLOSED)
        return state

    # -- event construction -----------------------------------------------------

    @staticmethod
    def _event(state: JobState, action: Action, now: int, instructions) -> dict:
        return {
            "seq": state.seq,
            "ts": now,
            "job_id": state.job_id,
            "agreement_hash": state.agreement_hash or state.draft_hash,
            "actor": {"id": action.sender.id, "role": action.sender.role.value},
            "kind": action.kind.value,
            "payload": action.payload,
            "signature": action.signature,
            "phase": state.phase.value if state.phase else None,
            "fee_state": state.fee_state.value,
            "principal_state": state.principal_state.value if state.principal_state else None,
            "instruction_refs": [instr.ref for instr in instructions],
        }


_HANDLERS = {
    ActionKind.SUBMIT_REQUEST: SettlementMachine._h_submit_request,
    ActionKind.ACCEPT_REQUEST: SettlementMachine._h_accept_request,
    ActionKind.REJECT_REQUEST: SettlementMachine._h_reject_request,
    ActionKind.PROPOSE_AGREEMENT: SettlementMachine._h_propose_agreement,
    ActionKind.SIGN_AGREEMENT: SettlementMachine._h_sign_agreement,
    ActionKind.CANCEL_JOB: SettlementMachine._h_cancel_job,
    ActionKind.LOCK_FEE_ESCROW: SettlementMachine._h_lock_fee_escrow,
    ActionKind.SUBMIT_DELIVERABLE: SettlementMachine._h_submit_deliverable,
    ActionKind.SETTLE_FEE_ESCROW: SettlementMachine._h_settle_fee_escrow,
    ActionKind.REQUEST_UW: SettlementMachine._h_request_uw,
    ActionKind.UW_DECISION: SettlementMachine._h_uw_decision,
    ActionKind.PAY_PREMIUM: SettlementMachine._h_pay_premium,
    ActionKind.LOCK_COLLATERAL: SettlementMachine._h_lock_collateral,
    ActionKind.REFUSE_COLLATERAL: SettlementMachine._h_refuse_collateral,
    ActionKind.OVERRIDE_DECISION: SettlementMachine._h_override_decision,
    ActionKind.APPROVE_RELEASE: SettlementMachine._h_approve_release,
    ActionKind.RELEASE_PRINCIPAL: SettlementMachine._h_release_principal,
    ActionKind.SUBMIT_EXECUTION_EVIDENCE: SettlementMachine._h_submit_execution_evidence,
    ActionKind.UNWIND_PRE_EXECUTION: SettlementMachine._h_unwind_pre_execution,
    ActionKind.EVALUATE_OUTCOME: SettlementMachine._h_evaluate_outcome,
    ActionKind.SETTLE_COLLATERAL: SettlementMachine._h_settle_collateral,
    ActionKind.FILE_CLAIM: SettlementMachine._h_file_claim,
    ActionKind.PAY_CLAIM: SettlementMachine._h_pay_claim,
}


def replay(machine: SettlementMachine, events: list[dict]) -> JobState:
    """Re-apply a logged action stream and return the reconstructed state.

    Raises TransitionError subclasses if the log is not a valid history.
    The caller compares the reconstructed log against the original for
    byte-level verification.
    """
    if not events:
        raise PolicyViolation("cannot replay an empty event log")
    state = new_job(events[0]["job_id"])
    for record in events:
        action = Action(
            kind=ActionKind(record["kind"]),
            sender=PartyRef(record["actor"]["id"], Role(record["actor"]["role"])),
            payload=record["payload"],
            signature=record.get("signature"),
        )
        state, _ = machine.apply(state, action, record["ts"])
    return state
