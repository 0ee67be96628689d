"""Exception hierarchy shared across the package.

Transition errors are raised by the lifecycle machine, ledger errors by the
custody ledger, and simulation errors by the market simulator. They are kept
in one module so callers can catch the family roots.
"""


class SuretyError(Exception):
    """Root of all package-specific errors."""


class InvalidAgreement(SuretyError):
    """Agreement violates its own structural invariants."""


class TransitionError(SuretyError):
    """An action was rejected by the settlement state machine."""


class NotEnabled(TransitionError):
    """Action kind is not enabled in the current phase or track state."""


class WrongSender(TransitionError):
    """Sender role or identity does not match the action's contract."""


class BadBinding(TransitionError):
    """Agreement hash mismatch or an invalid signature token."""


class DeadlineExceeded(TransitionError):
    """Action arrived after the relevant agreement deadline."""


class PolicyViolation(TransitionError):
    """Action is inconsistent with the agreement terms or a quoted amount."""


class LedgerError(SuretyError):
    """Root for custody ledger failures."""


class InsufficientFunds(LedgerError):
    """Source account balance is below the instructed amount."""


class UnknownAccount(LedgerError):
    """Instruction references an account that was never opened."""


class EngineInconsistency(SuretyError):
    """Ledger-derived episode economics disagree with the closed-form values."""


class DegenerateBaseline(SuretyError):
    """A rate metric has a zero denominator; the rate is undefined, not zero."""
