"""Protocol error hierarchy shared across the crypto and cluster layers."""


class ProtocolError(Exception):
    """Base class for every protocol-level failure."""

    code = "protocol_error"


class TamperError(ProtocolError):
    code = "tamper"


class DuplicateIndex(ProtocolError):
    code = "duplicate_index"


class IndexOutOfRange(ProtocolError):
    code = "index_out_of_range"


class InconsistentTotal(ProtocolError):
    code = "inconsistent_total"


class CoverageError(ProtocolError):
    code = "coverage"


class BadCertificate(ProtocolError):
    code = "bad_certificate"


class BadSignature(ProtocolError):
    code = "bad_signature"


class UnknownClient(ProtocolError):
    code = "unknown_client"


class MissingClient(ProtocolError):
    code = "missing_client"


class SignatureMismatch(ProtocolError):
    code = "signature_mismatch"


class PayloadDivergence(ProtocolError):
    code = "payload_divergence"


class StaleSequence(ProtocolError):
    code = "stale_sequence"


class WrongNonce(ProtocolError):
    code = "wrong_nonce"


class MeasurementMismatch(ProtocolError):
    code = "measurement_mismatch"


class AttestationSignatureInvalid(ProtocolError):
    code = "attestation_signature_invalid"


class ShapeMismatch(ProtocolError):
    code = "shape_mismatch"
