"""Parties, structured agreements, canonical hashing, and binding tokens.

Every financially relevant action in the settlement machine is anchored to
the content hash of a structured agreement. Hashing goes through a canonical
binary encoding so that independent implementations produce identical
digests. The encoding is deliberately boring:

    magic          4 bytes  b"SJA1" (structured job agreement, layout 1)
    job_id         str
    task_spec      str
    assurance_mode str (enum value)
    fee.amount     u64
    fee.custody    str
    has_principal  u8 (0 or 1)
      principal.amount          u64   (present only if has_principal)
      principal.destination.id  str
      principal.destination.role str
    acceptance_criteria str
    deadlines.delivery  u64
    deadlines.claim     u64
    deadlines.dispute   u64
    premium_refund_policy str
    coverage_limit  u64
    collateral_policy str
    override_allowed u8

where `str` is a 4-byte big-endian length followed by UTF-8 bytes and `u64`
is an 8-byte big-endian unsigned integer. All money amounts are integer
minor units (cents); the simulator converts real values at this boundary by
rounding half up.

Signature tokens are keyed HMAC-SHA256 authenticators over the tuple
(job_id, agreement_hash). They stand in for real signatures: the machine
needs attributability and binding, not a particular cryptosystem.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .errors import InvalidAgreement

__all__ = [
    "Role",
    "PartyRef",
    "AssuranceMode",
    "PremiumRefundPolicy",
    "CollateralPolicy",
    "FeeTerms",
    "PrincipalTerms",
    "Deadlines",
    "StructuredAgreement",
    "canonical_bytes",
    "canonical_hash",
    "sign_binding",
    "verify_binding",
    "Keyring",
]


class Role(Enum):
    HUMAN_REQUESTOR = "human_requestor"
    ASSISTANT_REQUESTOR = "assistant_requestor"
    BUSINESS_AGENT = "business_agent"
    UNDERWRITER = "underwriter"
    EVALUATOR = "evaluator"
    SETTLEMENT = "settlement"


#: Roles allowed to open a job on the requestor side. Exactly one of
#: "human submits for themselves" or "assistant submits for a named human
#: principal" describes the requestor side of any job.
REQUESTOR_ROLES = (Role.HUMAN_REQUESTOR, Role.ASSISTANT_REQUESTOR)


@dataclass(frozen=True)
class PartyRef:
    """An attributable identity: opaque id plus declared role."""

    id: str
    role: Role

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise InvalidAgreement("party id must be a non-empty string")
        if not isinstance(self.role, Role):
            raise InvalidAgreement("party role must be a Role")


class AssuranceMode(Enum):
    FEE_ONLY = "fee_only"
    FUND_INVOLVING = "fund_involving"


class PremiumRefundPolicy(Enum):
    REFUNDABLE = "refundable"
    NON_REFUNDABLE = "non_refundable"


class CollateralPolicy(Enum):
    SLASH_UP_TO_LOSS = "slash_up_to_loss"
    NO_SLASH = "no_slash"


def _money(value: object, name: str, minimum: int = 0) -> int:
    # bool is an int subclass; reject it explicitly
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidAgreement(f"{name} must be an integer amount of minor units")
    if value < minimum:
        raise InvalidAgreement(f"{name} must be >= {minimum}")
    return value


@dataclass(frozen=True)
class FeeTerms:
    """Service compensation held in escrow until evaluation settles it."""

    amount: int
    custody: str = "escrow"

    def __post_init__(self) -> None:
        _money(self.amount, "fee amount")
        if self.custody != "escrow":
            raise InvalidAgreement("fee custody must be 'escrow'")


@dataclass(frozen=True)
class PrincipalTerms:
    """Execution capital released before the outcome can be verified."""

    amount: int
    destination: PartyRef

    def __post_init__(self) -> None:
        _money(self.amount, "principal amount", minimum=1)
        if not isinstance(self.destination, PartyRef):
            raise InvalidAgreement("principal destination must be a PartyRef")


@dataclass(frozen=True)
class Deadlines:
    """Integer timestamps; the machine never reads a wall clock."""

    delivery: int
    claim: int
    dispute: int

    def __post_init__(self) -> None:
        for name in ("delivery", "claim", "dispute"):
            _money(getattr(self, name), f"{name} deadline")
        if not (self.delivery <= self.claim <= self.dispute):
            raise InvalidAgreement("deadlines must satisfy delivery <= claim <= dispute")


@dataclass(frozen=True)
class StructuredAgreement:
    """The signed contract binding task, terms, policies, and windows.

    Invariants enforced at construction:

    * ``assurance_mode`` is FUND_INVOLVING exactly when ``principal_terms``
      is present.
    * ``coverage_limit`` never exceeds the principal amount, and is zero for
      fee-only jobs.
    * ``override_allowed`` records whether the requestor side may proceed
      past an underwriter rejection or a collateral refusal by explicit
      human acknowledgement.
    """

    job_id: str
    task_spec: str
    assurance_mode: AssuranceMode
    fee_terms: FeeTerms
    principal_terms: Optional[PrincipalTerms]
    acceptance_criteria: str
    deadlines: Deadlines
    premium_refund_policy: PremiumRefundPolicy = PremiumRefundPolicy.REFUNDABLE
    coverage_limit: int = 0
    collateral_policy: CollateralPolicy = CollateralPolicy.SLASH_UP_TO_LOSS
    override_allowed: bool = True

    def __post_init__(self) -> None:
        if not isinstance(self.job_id, str) or not self.job_id:
            raise InvalidAgreement("job_id must be a non-empty string")
        if not isinstance(self.task_spec, str):
            raise InvalidAgreement("task_spec must be a string")
        if not isinstance(self.assurance_mode, AssuranceMode):
            raise InvalidAgreement("assurance_mode must be an AssuranceMode")
        if not isinstance(self.fee_terms, FeeTerms):
            raise InvalidAgreement("fee_terms must be FeeTerms")
        if not isinstance(self.acceptance_criteria, str):
            raise InvalidAgreement("acceptance_criteria must be a string descriptor")
        if not isinstance(self.deadlines, Deadlines):
            raise InvalidAgreement("deadlines must be Deadlines")
        if not isinstance(self.premium_refund_policy, PremiumRefundPolicy):
            raise InvalidAgreement("premium_refund_policy must be a PremiumRefundPolicy")
        if not isinstance(self.collateral_policy, CollateralPolicy):
            raise InvalidAgreement("collateral_policy must be a CollateralPolicy")
        if not isinstance(self.override_allowed, bool):
            raise InvalidAgreement("override_allowed must be a bool")
        _money(self.coverage_limit, "coverage_limit")
        fund = self.assurance_mode is AssuranceMode.FUND_INVOLVING
        if fund and self.principal_terms is None:
            raise InvalidAgreement("fund-involving agreement requires principal_terms")
        if not fund and self.principal_terms is not None:
            raise InvalidAgreement("fee-only agreement must not carry principal_terms")
        if fund:
            if not isinstance(self.principal_terms, PrincipalTerms):
                raise InvalidAgreement("principal_terms must be PrincipalTerms")
            if self.coverage_limit > self.principal_terms.amount:
                raise InvalidAgreement("coverage_limit must not exceed the principal")
        elif self.coverage_limit != 0:
            raise InvalidAgreement("fee-only agreement must have coverage_limit 0")

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        """Plain-data form used by config files and the scripted CLI."""
        out = {
            "job_id": self.job_id,
            "task_spec": self.task_spec,
            "assurance_mode": self.assurance_mode.value,
            "fee_terms": {"amount": self.fee_terms.amount, "custody": self.fee_terms.custody},
            "principal_terms": None,
            "acceptance_criteria": self.acceptance_criteria,
            "deadlines": {
                "delivery": self.deadlines.delivery,
                "claim": self.deadlines.claim,
                "dispute": self.deadlines.dispute,
            },
            "premium_refund_policy": self.premium_refund_policy.value,
            "coverage_limit": self.coverage_limit,
            "collateral_policy": self.collateral_policy.value,
            "override_allowed": self.override_allowed,
        }
        if self.principal_terms is not None:
            out["principal_terms"] = {
                "amount": self.principal_terms.amount,
                "destination": {
                    "id": self.principal_terms.destination.id,
                    "role": self.principal_terms.destination.role.value,
                },
            }
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "StructuredAgreement":
        """Inverse of :meth:`to_dict`. Key order in ``data`` is irrelevant."""
        if not isinstance(data, dict):
            raise InvalidAgreement("agreement data must be a mapping")
        known = {
            "job_id",
            "task_spec",
            "assurance_mode",
            "fee_terms",
            "principal_terms",
            "acceptance_criteria",
            "deadlines",
            "premium_refund_policy",
            "coverage_limit",
            "collateral_policy",
            "override_allowed",
        }
        unknown = set(data) - known
        if unknown:
            raise InvalidAgreement(f"unknown agreement fields: {sorted(unknown)}")
        missing = known - set(data) - {"override_allowed", "principal_terms"}
        if missing:
            raise InvalidAgreement(f"missing agreement fields: {sorted(missing)}")
        try:
            fee = data["fee_terms"]
            fee_terms = FeeTerms(amount=fee["amount"], custody=fee.get("custody", "escrow"))
            principal = None
            if data.get("principal_terms") is not None:
                p = data["principal_terms"]
                dest = p["destination"]
                principal = PrincipalTerms(
                    amount=p["amount"],
                    destination=PartyRef(dest["id"], Role(dest["role"])),
                )
            dl = data["deadlines"]
            deadlines = Deadlines(delivery=dl["delivery"], claim=dl["claim"], dispute=dl["dispute"])
            return cls(
                job_id=data["job_id"],
                task_spec=data["task_spec"],
                assurance_mode=AssuranceMode(data["assurance_mode"]),
                fee_terms=fee_terms,
                principal_terms=principal,
                acceptance_criteria=data["acceptance_criteria"],
                deadlines=deadlines,
                premium_refund_policy=PremiumRefundPolicy(data["premium_refund_policy"]),
                coverage_limit=data["coverage_limit"],
                collateral_policy=CollateralPolicy(data["collateral_policy"]),
                override_allowed=data.get("override_allowed", True),
            )
        except InvalidAgreement:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidAgreement(f"malformed agreement data: {exc}") from exc


# -- canonical encoding and hashing ---------------------------------------

_MAGIC = b"SJA1"


def _put_str(buf: bytearray, value: str) -> None:
    raw = value.encode("utf-8")
    buf += struct.pack(">I", len(raw))
    buf += raw


def _put_u64(buf: bytearray, value: int) -> None:
    if value < 0 or value > 0xFFFFFFFFFFFFFFFF:
        raise InvalidAgreement("u64 field out of range")
    buf += struct.pack(">Q", value)


def canonical_bytes(agreement: StructuredAgreement) -> bytes:
    """Fixed-order, length-prefixed binary encoding (layout in module docs)."""
    if not isinstance(agreement, StructuredAgreement):
        raise InvalidAgreement("canonical_bytes expects a StructuredAgreement")
    buf = bytearray(_MAGIC)
    _put_str(buf, agreement.job_id)
    _put_str(buf, agreement.task_spec)
    _put_str(buf, agreement.assurance_mode.value)
    _put_u64(buf, agreement.fee_terms.amount)
    _put_str(buf, agreement.fee_terms.custody)
    if agreement.principal_terms is not None:
        buf.append(1)
        _put_u64(buf, agreement.principal_terms.amount)
        _put_str(buf, agreement.principal_terms.destination.id)
        _put_str(buf, agreement.principal_terms.destination.role.value)
    else:
        buf.append(0)
    _put_str(buf, agreement.acceptance_criteria)
    _put_u64(buf, agreement.deadlines.delivery)
    _put_u64(buf, agreement.deadlines.claim)
    _put_u64(buf, agreement.deadlines.dispute)
    _put_str(buf, agreement.premium_refund_policy.value)
    _put_u64(buf, agreement.coverage_limit)
    _put_str(buf, agreement.collateral_policy.value)
    buf.append(1 if agreement.override_allowed else 0)
    return bytes(buf)


def canonical_hash(agreement: StructuredAgreement) -> str:
    """SHA-256 of the canonical encoding, as lowercase hex."""
    return hashlib.sha256(canonical_bytes(agreement)).hexdigest()


# -- binding tokens --------------------------------------------------------


def _subject(job_id: str, agreement_hash: str) -> bytes:
    # The empty-hash subject covers pre-agreement actions such as an early
    # CancelJob, where no draft exists yet.
    raw_hash = bytes.fromhex(agreement_hash) if agreement_hash else b""
    buf = bytearray(b"bind")
    buf += struct.pack(">I", len(job_id.encode("utf-8")))
    buf += job_id.encode("utf-8")
    buf += raw_hash
    return bytes(buf)


def sign_binding(secret: bytes, job_id: str, agreement_hash: str) -> str:
    """HMAC-SHA256 token over (job_id, agreement_hash), as hex."""
    return hmac.new(secret, _subject(job_id, agreement_hash), hashlib.sha256).hexdigest()


def verify_binding(secret: bytes, job_id: str, agreement_hash: str, token: str) -> bool:
    if not isinstance(token, str):
        return False
    expected = sign_binding(secret, job_id, agreement_hash)
    return hmac.compare_digest(expected, token)


class Keyring:
    """Per-party secret keys held by the harness that runs the machine."""

    def __init__(self, secrets: dict[str, bytes]):
        self._secrets = dict(secrets)

    @classmethod
    def demo(cls, party_ids: list[str] | tuple[str, ...]) -> "Keyring":
        """Deterministic keys for tests and simulations. Not for real use."""
        return cls({pid: hashlib.sha256(b"demo-key:" + pid.encode("utf-8")).digest() for pid in party_ids})

    def has(self, party_id: str) -> bool:
        return party_id in self._secrets

    def secret(self, party_id: str) -> bytes:
        try:
            return self._secrets[party_id]
        except KeyError:
            raise KeyError(f"no key registered for party {party_id!r}") from None

    def sign(self, party_id: str, job_id: str, agreement_hash: str) -> str:
        return sign_binding(self.secret(party_id), job_id, agreement_hash)

    def verify(self, party_id: str, job_id: str, agreement_hash: str, token: str) -> bool:
        if party_id not in self._secrets:
            return False
        return verify_binding(self._secrets[party_id], job_id, agreement_hash, token)
