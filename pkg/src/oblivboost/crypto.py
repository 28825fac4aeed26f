"""Keys, certificates, the encrypted row format, and command envelopes.

Covers the client/enclave identities (256-bit symmetric keys, 2048-bit
RSA pairs, CA-issued certificates), per-row AES-256-GCM records that bind
the row index and total count as associated data, key enrollment under
the enclave public key, and the signed-command / signed-response
envelopes with nonce-and-counter sequence numbers.

Canonical serialization for anything signed is key-sorted, whitespace-free
JSON; signatures are RSA-PSS over SHA-256 of those bytes.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

from cryptography import x509
from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.x509.oid import NameOID

from .errors import (
    BadCertificate,
    BadSignature,
    CoverageError,
    DuplicateIndex,
    InconsistentTotal,
    IndexOutOfRange,
    MissingClient,
    PayloadDivergence,
    SignatureMismatch,
    StaleSequence,
    TamperError,
    UnknownClient,
    WrongNonce,
)

SYM_KEY_BYTES = 32  # 256-bit client keys
RSA_BITS = 2048
DEPLOY_NONCE_BYTES = 16  # 128-bit deployment nonce
GCM_NONCE_BYTES = 12
GCM_TAG_BYTES = 16


# ---------------------------------------------------------------------------
# Primitive helpers


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def generate_rsa_key() -> rsa.RSAPrivateKey:
    return rsa.generate_private_key(public_exponent=65537, key_size=RSA_BITS)


_PSS = padding.PSS(mgf=padding.MGF1(hashes.SHA256()), salt_length=padding.PSS.MAX_LENGTH)
_OAEP = padding.OAEP(
    mgf=padding.MGF1(algorithm=hashes.SHA256()), algorithm=hashes.SHA256(), label=None
)


def rsa_sign(private_key: rsa.RSAPrivateKey, data: bytes) -> bytes:
    return private_key.sign(data, _PSS, hashes.SHA256())


def rsa_verify(public_key: rsa.RSAPublicKey, signature: bytes, data: bytes) -> bool:
    try:
        public_key.verify(signature, data, _PSS, hashes.SHA256())
        return True
    except InvalidSignature:
        return False


def rsa_encrypt(public_key: rsa.RSAPublicKey, data: bytes) -> bytes:
    return public_key.encrypt(data, _OAEP)


def rsa_decrypt(private_key: rsa.RSAPrivateKey, data: bytes) -> bytes:
    return private_key.decrypt(data, _OAEP)


def private_key_pem(key: rsa.RSAPrivateKey) -> str:
    return key.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    ).decode()


def public_key_pem(key: rsa.RSAPublicKey) -> str:
    return key.public_bytes(
        serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo
    ).decode()


def load_private_key(pem: str | bytes) -> rsa.RSAPrivateKey:
    if isinstance(pem, str):
        pem = pem.encode()
    return serialization.load_pem_private_key(pem, password=None)


def load_public_key(pem: str | bytes) -> rsa.RSAPublicKey:
    if isinstance(pem, str):
        pem = pem.encode()
    return serialization.load_pem_public_key(pem)


def seal(key: bytes, plaintext: bytes, associated_data: bytes = b"") -> bytes:
    """AES-256-GCM envelope: nonce || ciphertext || tag."""
    nonce = os.urandom(GCM_NONCE_BYTES)
    return nonce + AESGCM(key).encrypt(nonce, plaintext, associated_data)


def open_sealed(key: bytes, blob: bytes, associated_data: bytes = b"") -> bytes:
    if len(blob) < GCM_NONCE_BYTES + GCM_TAG_BYTES:
        raise TamperError("sealed blob too short")
    nonce, body = blob[:GCM_NONCE_BYTES], blob[GCM_NONCE_BYTES:]
    try:
        return AESGCM(key).decrypt(nonce, body, associated_data)
    except InvalidTag:
        raise TamperError("authentication failed") from None


# ---------------------------------------------------------------------------
# Identities and certificates


def _name(cn: str) -> x509.Name:
    return x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, cn)])


def _common_name(name: x509.Name) -> str:
    attrs = name.get_attributes_for_oid(NameOID.COMMON_NAME)
    return attrs[0].value if attrs else ""


class CertificateAuthority:
    """Repo-local CA issuing client certificates."""

    def __init__(self, private_key: rsa.RSAPrivateKey, certificate: x509.Certificate):
        self.private_key = private_key
        self.certificate = certificate

    @classmethod
    def create(cls, name: str = "oblivboost-ca") -> "CertificateAuthority":
        key = generate_rsa_key()
        now = datetime.now(timezone.utc)
        cert = (
            x509.CertificateBuilder()
            .subject_name(_name(name))
            .issuer_name(_name(name))
            .public_key(key.public_key())
            .serial_number(x509.random_serial_number())
            .not_valid_before(now - timedelta(days=1))
            .not_valid_after(now + timedelta(days=3650))
            .add_extension(x509.BasicConstraints(ca=True, path_length=None), critical=True)
            .sign(key, hashes.SHA256())
        )
        return cls(key, cert)

    @property
    def cert_pem(self) -> str:
        return self.certificate.public_bytes(serialization.Encoding.PEM).decode()

    def issue(self, subject_name: str, public_key: rsa.RSAPublicKey) -> x509.Certificate:
        now = datetime.now(timezone.utc)
        return (
            x509.CertificateBuilder()
            .subject_name(_name(subject_name))
            .issuer_name(self.certificate.subject)
            .public_key(public_key)
            .serial_number(x509.random_serial_number())
            .not_valid_before(now - timedelta(days=1))
            .not_valid_after(now + timedelta(days=3650))
            .sign(self.private_key, hashes.SHA256())
        )


def load_certificate(pem: str | bytes) -> x509.Certificate:
    if isinstance(pem, str):
        pem = pem.encode()
    return x509.load_pem_x509_certificate(pem)


def cert_pem(cert: x509.Certificate) -> str:
    return cert.public_bytes(serialization.Encoding.PEM).decode()


def verify_certificate(
    cert: x509.Certificate,
    ca_cert: x509.Certificate,
    expected_name: str | None = None,
) -> None:
    if _common_name(cert.issuer) != _common_name(ca_cert.subject):
        raise BadCertificate("issuer mismatch")
    try:
        ca_cert.public_key().verify(
            cert.signature,
            cert.tbs_certificate_bytes,
            padding.PKCS1v15(),
            cert.signature_hash_algorithm,
        )
    except InvalidSignature:
        raise BadCertificate("certificate signature invalid") from None
    if expected_name is not None and _common_name(cert.subject) != expected_name:
        raise BadCertificate(
            f"certificate is for {_common_name(cert.subject)!r}, not {expected_name!r}"
        )


@dataclass
class ClientIdentity:
    name: str
    sym_key: bytes
    private_key: rsa.RSAPrivateKey
    certificate: x509.Certificate

    @classmethod
    def generate(cls, name: str, ca: CertificateAuthority) -> "ClientIdentity":
        key = generate_rsa_key()
        return cls(
            name=name,
            sym_key=os.urandom(SYM_KEY_BYTES),
            private_key=key,
            certificate=ca.issue(name, key.public_key()),
        )


@dataclass
class EnclaveIdentity:
    private_key: rsa.RSAPrivateKey
    nonce: bytes  # deployment nonce N

    @classmethod
    def generate(cls) -> "EnclaveIdentity":
        return cls(generate_rsa_key(), os.urandom(DEPLOY_NONCE_BYTES))

    @property
    def public_pem(self) -> str:
        return public_key_pem(self.private_key.public_key())


# ---------------------------------------------------------------------------
# Encrypted row records


@dataclass
class EncryptedRowRecord:
    index: int  # j, 1-based
    total: int  # n_i
    nonce: bytes
    ciphertext: bytes
    tag: bytes

    def pack(self) -> bytes:
        return (
            struct.pack("<II", self.index, self.total)
            + self.nonce
            + struct.pack("<I", len(self.ciphertext))
            + self.ciphertext
            + self.tag
        )


_REC_FIXED = 8 + GCM_NONCE_BYTES + 4


def row_associated_data(index: int, total: int) -> bytes:
    return struct.pack("<II", index, total)


def encrypt_dataset(rows: list[bytes], sym_key: bytes) -> list[EncryptedRowRecord]:
    """Encrypt each row separately; record j carries (j, n_i) as AEAD
    associated data and a nonce unique within the dataset."""
    if not rows:
        raise ValueError("dataset has no rows")
    total = len(rows)
    aes = AESGCM(sym_key)
    salt = os.urandom(4)
    records = []
    for j, row in enumerate(rows, start=1):
        nonce = salt + struct.pack("<Q", j)
        out = aes.encrypt(nonce, row, row_associated_data(j, total))
        records.append(
            EncryptedRowRecord(j, total, nonce, out[:-GCM_TAG_BYTES], out[-GCM_TAG_BYTES:])
        )
    return records


def write_encrypted_dataset(path: str, records: list[EncryptedRowRecord]) -> None:
    with open(path, "wb") as fh:
        for rec in records:
            fh.write(rec.pack())


def read_encrypted_dataset(path: str) -> list[EncryptedRowRecord]:
    """Parse as many complete records as the file holds; a trailing
    partial record is dropped (its absence shows up in coverage)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    records = []
    offset = 0
    while offset + _REC_FIXED <= len(blob):
        index, total = struct.unpack_from("<II", blob, offset)
        nonce = blob[offset + 8 : offset + 8 + GCM_NONCE_BYTES]
        (ct_len,) = struct.unpack_from("<I", blob, offset + 8 + GCM_NONCE_BYTES)
        end = offset + _REC_FIXED + ct_len + GCM_TAG_BYTES
        if end > len(blob):
            break
        ciphertext = blob[offset + _REC_FIXED : offset + _REC_FIXED + ct_len]
        tag = blob[offset + _REC_FIXED + ct_len : end]
        records.append(EncryptedRowRecord(index, total, nonce, ciphertext, tag))
        offset = end
    return records


def decrypt_records(
    records: list[EncryptedRowRecord],
    sym_key: bytes,
    claimed_total: int | None = None,
) -> tuple[dict[int, bytes], int]:
    """Authenticate and decrypt a partition of records.

    Returns (rows keyed by index, total); the caller combines the index
    sets across workers for the coverage check.
    """
    if not records:
        raise ValueError("no records")
    total = claimed_total if claimed_total is not None else records[0].total
    aes = AESGCM(sym_key)
    rows: dict[int, bytes] = {}
    for rec in records:
        if rec.total != total:
            raise InconsistentTotal(f"record {rec.index} claims n={rec.total}, expected {total}")
        if not 1 <= rec.index <= total:
            raise IndexOutOfRange(f"row index {rec.index} outside 1..{total}")
        if rec.index in rows:
            raise DuplicateIndex(f"row index {rec.index} appears twice")
        try:
            rows[rec.index] = aes.decrypt(
                rec.nonce,
                rec.ciphertext + rec.tag,
                row_associated_data(rec.index, rec.total),
            )
        except InvalidTag:
            raise TamperError(f"row {rec.index} failed authentication") from None
    return rows, total


def verify_coverage(index_sets: list[set[int]], total: int) -> None:
    """Accept iff the union of per-worker index sets is exactly 1..total
    with no cross-worker duplicates."""
    union: set[int] = set()
    seen = 0
    for s in index_sets:
        union |= s
        seen += len(s)
    if seen != len(union):
        raise DuplicateIndex("row index loaded by more than one worker")
    expected = set(range(1, total + 1))
    missing = expected - union
    extra = union - expected
    if missing or extra:
        raise CoverageError(
            f"coverage mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
        )


# ---------------------------------------------------------------------------
# Signed commands and responses


@dataclass(frozen=True)
class Command:
    nonce: bytes  # deployment nonce N
    ctr: int
    func: str
    params: dict

    def payload(self) -> bytes:
        return canonical_json(
            {
                "ctr": self.ctr,
                "func": self.func,
                "nonce": self.nonce.hex(),
                "params": self.params,
            }
        )


def parse_command(payload: bytes) -> Command:
    obj = json.loads(payload.decode("utf-8"))
    return Command(bytes.fromhex(obj["nonce"]), int(obj["ctr"]), obj["func"], obj["params"])


@dataclass
class SignedCommand:
    payload: bytes
    signature: bytes
    signer: str

    def to_wire(self) -> dict:
        return {
            "payload": self.payload.hex(),
            "signature": self.signature.hex(),
            "signer": self.signer,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "SignedCommand":
        return cls(bytes.fromhex(obj["payload"]), bytes.fromhex(obj["signature"]), obj["signer"])


def make_signed_command(
    client: ClientIdentity, nonce: bytes, ctr: int, func: str, params: dict
) -> SignedCommand:
    payload = Command(nonce, ctr, func, params).payload()
    return SignedCommand(payload, rsa_sign(client.private_key, payload), client.name)


def verify_command_set(
    commands: dict[str, SignedCommand],
    registered: dict[str, rsa.RSAPublicKey],
    expected_ctr: int,
    nonce: bytes,
) -> Command:
    """Admit a command iff every registered client signed byte-identical
    payloads carrying the deployment nonce and the next counter value."""
    if not registered:
        raise MissingClient("no clients registered")
    for name in commands:
        if name not in registered:
            raise UnknownClient(f"submission from unregistered client {name!r}")
    missing = sorted(set(registered) - set(commands))
    if missing:
        raise MissingClient(f"missing submissions from {missing}")
    for name, sc in commands.items():
        if sc.signer != name:
            raise SignatureMismatch(f"signer label mismatch for {name!r}")
        if not rsa_verify(registered[name], sc.signature, sc.payload):
            raise SignatureMismatch(f"bad signature from {name!r}")
    payloads = {sc.payload for sc in commands.values()}
    if len(payloads) != 1:
        raise PayloadDivergence("clients submitted differing commands")
    cmd = parse_command(payloads.pop())
    if cmd.nonce != nonce:
        raise WrongNonce("command nonce does not match this deployment")
    if cmd.ctr != expected_ctr:
        raise StaleSequence(f"counter {cmd.ctr}, expected {expected_ctr}")
    return cmd


@dataclass
class SignedResponse:
    payload: bytes  # canonical {seqn, result}
    signature: bytes

    def to_wire(self) -> dict:
        return {"payload": self.payload.hex(), "signature": self.signature.hex()}

    @classmethod
    def from_wire(cls, obj: dict) -> "SignedResponse":
        return cls(bytes.fromhex(obj["payload"]), bytes.fromhex(obj["signature"]))


def sign_response(
    enclave: EnclaveIdentity, nonce: bytes, ctr: int, result: dict
) -> SignedResponse:
    payload = canonical_json(
        {"seqn": {"nonce": nonce.hex(), "ctr": ctr}, "result": result}
    )
    return SignedResponse(payload, rsa_sign(enclave.private_key, payload))


def verify_response(
    resp: SignedResponse,
    enclave_public: rsa.RSAPublicKey,
    nonce: bytes,
    ctr: int,
) -> dict:
    if not rsa_verify(enclave_public, resp.signature, resp.payload):
        raise BadSignature("response signature invalid")
    obj = json.loads(resp.payload.decode("utf-8"))
    seqn = obj.get("seqn", {})
    if bytes.fromhex(seqn.get("nonce", "")) != nonce or int(seqn.get("ctr", -1)) != ctr:
        raise WrongNonce("response bound to a different request")
    return obj["result"]


# ---------------------------------------------------------------------------
# Key enrollment


@dataclass
class EnrollmentMessage:
    client_name: str
    cert_pem: str
    encrypted_key: bytes
    signature: bytes

    def signed_body(self, nonce_hex: str) -> bytes:
        return canonical_json(
            {
                "enc_key": self.encrypted_key.hex(),
                "name": self.client_name,
                "nonce": nonce_hex,
            }
        )

    def to_wire(self) -> dict:
        return {
            "client_name": self.client_name,
            "cert_pem": self.cert_pem,
            "encrypted_key": self.encrypted_key.hex(),
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "EnrollmentMessage":
        return cls(
            obj["client_name"],
            obj["cert_pem"],
            bytes.fromhex(obj["encrypted_key"]),
            bytes.fromhex(obj["signature"]),
        )


def make_enrollment(
    client: ClientIdentity, enclave_public_pem: str, nonce: bytes
) -> EnrollmentMessage:
    """Encrypt the client's symmetric key under the enclave public key and
    sign the message (nonce included for freshness)."""
    enc = rsa_encrypt(load_public_key(enclave_public_pem), client.sym_key)
    msg = EnrollmentMessage(client.name, cert_pem(client.certificate), enc, b"")
    msg.signature = rsa_sign(client.private_key, msg.signed_body(nonce.hex()))
    return msg


def verify_enrollment(
    msg: EnrollmentMessage,
    embedded_clients: tuple[str, ...] | list[str],
    ca_cert: x509.Certificate,
    enclave: EnclaveIdentity,
) -> bytes:
    """Validate an enrollment and return the client symmetric key."""
    if msg.client_name not in embedded_clients:
        raise UnknownClient(f"{msg.client_name!r} is not in the embedded client list")
    cert = load_certificate(msg.cert_pem)
    verify_certificate(cert, ca_cert, expected_name=msg.client_name)
    if not rsa_verify(
        cert.public_key(), msg.signature, msg.signed_body(enclave.nonce.hex())
    ):
        raise BadSignature(f"enrollment signature from {msg.client_name!r} invalid")
    key = rsa_decrypt(enclave.private_key, msg.encrypted_key)
    if len(key) != SYM_KEY_BYTES:
        raise BadSignature("enrolled key has wrong size")
    return key
