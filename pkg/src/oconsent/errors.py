"""Exception hierarchy for the oconsent package.

Every error raised by the public API derives from OConsentError so callers
can catch one base class at process boundaries (the CLI maps it to exit 2
unless a more specific handler applies).
"""


class OConsentError(Exception):
    """Base class for all package errors."""


# ---------------------------------------------------------------------------
# identity / keys


class KeyParseError(OConsentError):
    """PEM or DER material could not be parsed into a usable key."""


class UnknownSchemeError(OConsentError):
    """Signature scheme name not present in the scheme registry."""


class AccessDeniedError(OConsentError):
    """Operation refused; .reason carries the failed gate."""

    def __init__(self, message: str, reason: str = ""):
        super().__init__(message)
        self.reason = reason or message


class UnauthorizedRoleError(AccessDeniedError):
    """Caller's role is not allowed to perform the operation."""


class UnknownIdentityError(OConsentError):
    """Identity id is not present in the identity store."""


class SurrogateResolutionError(OConsentError):
    """Surrogate id cannot be resolved (unknown, or caller not allowed)."""


# ---------------------------------------------------------------------------
# consent documents / lifecycle


class SchemaError(OConsentError):
    """Document violates the agreement/proof schema."""


class SeedNotVerifiedError(OConsentError):
    """Creation seed signature did not verify; agreement cannot be signed."""


class MissingTimestampError(OConsentError):
    """Proof construction requires at least one timestamp proof."""


class IllegalTransitionError(OConsentError):
    """Lifecycle event not legal from the current state."""


class LineageError(OConsentError):
    """Version link target unknown or already superseded."""


class VersionOrderError(OConsentError):
    """New agreement version does not sort above its predecessor."""


class ContextError(OConsentError):
    """Inbound context is malformed or not actionable."""


# ---------------------------------------------------------------------------
# timestamping


class UnknownProviderError(OConsentError):
    """Timestamp proof names a provider the verifier does not know."""


class RecordParseError(OConsentError):
    """Beacon record text is missing fields or malformed."""


class PulseExhaustedError(OConsentError):
    """No pulse exists at or after the requested time."""


class ProviderUnavailableError(OConsentError):
    """Timestamp provider cannot serve a request (halted or empty)."""


# ---------------------------------------------------------------------------
# sidechain


class TxValidationError(OConsentError):
    """Transaction rejected during block application.

    Carries the offending tx index so batch callers can report precisely.
    """

    def __init__(self, message: str, tx_index: int | None = None):
        super().__init__(message)
        self.tx_index = tx_index


class DuplicateEmbedError(OConsentError):
    """(agreement_hash_id, version) already embedded in the chain."""


class NotOwnerError(OConsentError):
    """Caller is not the contract owner."""


class ZeroAddressError(OConsentError):
    """Transfer target is the zero address."""


class UnknownContractError(OConsentError):
    """Referenced contract id has no state on this chain."""


class LeaseStateError(OConsentError):
    """Lease operation illegal in the lease's current state."""


class AnchorViolationError(OConsentError):
    """No fork-choice candidate contains every anchored block."""


class LockProofError(OConsentError):
    """Exit finalization presented with a proof for the wrong lock."""


class AlreadyExitedError(OConsentError):
    """Exit already finalized for this lock."""


class ChainIntegrityError(OConsentError):
    """Stored chain fails hash-link or recomputation audit."""


# ---------------------------------------------------------------------------
# fingerprinting / anchoring


class EmptyBatchError(OConsentError):
    """Merkle construction over zero leaves."""


class DuplicateLeafError(OConsentError):
    """Same leaf appears twice in one batch."""


class LeafNotFoundError(OConsentError):
    """Inclusion proof requested for a leaf outside the batch."""


class CarrierCapacityError(OConsentError):
    """Anchor payload exceeds the carrier field size."""


class ConfirmationTimeoutError(OConsentError):
    """Chain sim halted before the requested confirmation depth."""


class NotAnchoredError(OConsentError):
    """No anchored batch covers the requested agreement."""


class PartialAnchorError(OConsentError):
    """Anchored on one chain only; carries the partial document."""

    def __init__(self, message: str, document: dict | None = None):
        super().__init__(message)
        self.document = document


# ---------------------------------------------------------------------------
# policy graph


class KindError(OConsentError):
    """Assignment or association violates node-kind rules."""


class CycleError(OConsentError):
    """Assignment would create a directed cycle."""


class UnknownNodeError(OConsentError):
    """Node id not present in the policy graph."""


# ---------------------------------------------------------------------------
# access / flow


class UnknownAgreementError(OConsentError):
    """agreement_hash_id not known to the platform."""


class NotSubjectError(OConsentError):
    """Revocation attempted by an identity other than the data subject."""


class AuditIntegrityError(OConsentError):
    """Audit log hash chain broken (tamper or corruption)."""
