"""Key material, the encrypted row format, enrollment, command consensus."""

import json
import os

import pytest
from hypothesis import given, settings, strategies as st

from oblivboost import crypto
from oblivboost.errors import (
    BadCertificate,
    BadSignature,
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
    CoverageError,
)


@pytest.fixture(scope="module")
def ca():
    return crypto.CertificateAuthority.create()


@pytest.fixture(scope="module")
def clients(ca):
    return {n: crypto.ClientIdentity.generate(n, ca) for n in ("u1", "u2", "u3")}


@pytest.fixture(scope="module")
def enclave():
    return crypto.EnclaveIdentity.generate()


# ---------------------------------------------------------------------------
# key material


def test_key_sizes(ca, clients, enclave):
    ident = clients["u1"]
    assert len(ident.sym_key) == 32
    assert ident.private_key.key_size == 2048
    assert enclave.private_key.key_size == 2048
    assert len(enclave.nonce) == 16


def test_keygen_distinct(ca):
    a = crypto.ClientIdentity.generate("x", ca)
    b = crypto.ClientIdentity.generate("x", ca)
    assert a.sym_key != b.sym_key


def test_certificate_verifies(ca, clients):
    crypto.verify_certificate(clients["u1"].certificate, ca.certificate, "u1")
    with pytest.raises(BadCertificate):
        crypto.verify_certificate(clients["u1"].certificate, ca.certificate, "u2")
    other_ca = crypto.CertificateAuthority.create()
    with pytest.raises(BadCertificate):
        crypto.verify_certificate(clients["u1"].certificate, other_ca.certificate)


# ---------------------------------------------------------------------------
# encrypted rows


def test_encrypt_dataset_indices(clients):
    rows = [b"1.0,2.0", b"0.0,3.0"]
    recs = crypto.encrypt_dataset(rows, clients["u1"].sym_key)
    assert [(r.index, r.total) for r in recs] == [(1, 2), (2, 2)]
    assert len({r.nonce for r in recs}) == 2
    out, total = crypto.decrypt_records(recs, clients["u1"].sym_key)
    assert total == 2 and out == {1: rows[0], 2: rows[1]}


def test_row_file_roundtrip(tmp_path, clients):
    rows = [f"{i}.0,1.5".encode() for i in range(5)]
    recs = crypto.encrypt_dataset(rows, clients["u1"].sym_key)
    path = str(tmp_path / "d.enc")
    crypto.write_encrypted_dataset(path, recs)
    back = crypto.read_encrypted_dataset(path)
    assert [(r.index, r.nonce) for r in back] == [(r.index, r.nonce) for r in recs]
    got, _ = crypto.decrypt_records(back, clients["u1"].sym_key)
    assert [got[j] for j in sorted(got)] == rows


def test_truncated_file_reports_missing(tmp_path, clients):
    rows = [b"0.0,1.0", b"1.0,2.0", b"0.0,3.0"]
    recs = crypto.encrypt_dataset(rows, clients["u1"].sym_key)
    path = str(tmp_path / "t.enc")
    crypto.write_encrypted_dataset(path, recs)
    full = os.path.getsize(path)
    with open(path, "rb") as fh:
        blob = fh.read(full - 10)
    with open(path, "wb") as fh:
        fh.write(blob)
    back = crypto.read_encrypted_dataset(path)
    got, total = crypto.decrypt_records(back, clients["u1"].sym_key)
    assert total == 3 and sorted(got) == [1, 2]
    with pytest.raises(CoverageError):
        crypto.verify_coverage([set(got)], total)


def test_tamper_errors(clients):
    key = clients["u1"].sym_key
    rows = [b"1.0,1.0", b"0.0,2.0", b"1.0,3.0"]
    recs = crypto.encrypt_dataset(rows, key)

    flipped = crypto.EncryptedRowRecord(
        recs[0].index,
        recs[0].total,
        recs[0].nonce,
        bytes([recs[0].ciphertext[0] ^ 1]) + recs[0].ciphertext[1:],
        recs[0].tag,
    )
    with pytest.raises(TamperError):
        crypto.decrypt_records([flipped], key, claimed_total=3)

    # altered index in associated data
    moved = crypto.EncryptedRowRecord(2, 3, recs[0].nonce, recs[0].ciphertext, recs[0].tag)
    with pytest.raises(TamperError):
        crypto.decrypt_records([moved], key, claimed_total=3)

    with pytest.raises(DuplicateIndex):
        crypto.decrypt_records([recs[0], recs[0]], key, claimed_total=3)

    out_of_range = crypto.EncryptedRowRecord(9, 3, recs[0].nonce, recs[0].ciphertext, recs[0].tag)
    with pytest.raises(IndexOutOfRange):
        crypto.decrypt_records([out_of_range], key, claimed_total=3)

    mixed = crypto.EncryptedRowRecord(1, 7, recs[0].nonce, recs[0].ciphertext, recs[0].tag)
    with pytest.raises(InconsistentTotal):
        crypto.decrypt_records([recs[1], mixed], key, claimed_total=3)


def test_coverage_union_semantics(clients):
    crypto.verify_coverage([{1, 3}, {2, 4}], 4)
    with pytest.raises(CoverageError):
        crypto.verify_coverage([{1, 3}, {4}], 4)  # missing 2
    with pytest.raises(DuplicateIndex):
        crypto.verify_coverage([{1, 2}, {2, 3, 4}], 4)
    with pytest.raises(CoverageError):
        crypto.verify_coverage([{1, 2, 5}], 2)  # unexpected index


def test_wrong_key_fails(clients):
    recs = crypto.encrypt_dataset([b"1,2"], clients["u1"].sym_key)
    with pytest.raises(TamperError):
        crypto.decrypt_records(recs, clients["u2"].sym_key)


def test_single_bit_mutations_never_authenticate(clients):
    """Any single-bit modification of ciphertext, tag, j, or n_i fails
    authentication or a structural check; 1000 randomized flips."""
    import numpy as np

    rng = np.random.default_rng(123)
    key = clients["u1"].sym_key
    recs = crypto.encrypt_dataset([b"0.5,1.25,7.0"] * 4, key)
    accepted = 0
    for trial in range(1000):
        r = recs[int(rng.integers(0, 4))]
        field = ("ciphertext", "tag", "index", "total")[trial % 4]
        index, total, nonce, ct, tag = r.index, r.total, r.nonce, r.ciphertext, r.tag
        if field == "ciphertext":
            pos, bit = int(rng.integers(0, len(ct))), int(rng.integers(0, 8))
            buf = bytearray(ct)
            buf[pos] ^= 1 << bit
            ct = bytes(buf)
        elif field == "tag":
            pos, bit = int(rng.integers(0, len(tag))), int(rng.integers(0, 8))
            buf = bytearray(tag)
            buf[pos] ^= 1 << bit
            tag = bytes(buf)
        elif field == "index":
            index ^= 1 << int(rng.integers(0, 32))
        else:
            total ^= 1 << int(rng.integers(0, 32))
        mutated = crypto.EncryptedRowRecord(index, total, nonce, ct, tag)
        try:
            crypto.decrypt_records([mutated], key, claimed_total=4)
            accepted += 1
        except (TamperError, InconsistentTotal, IndexOutOfRange):
            pass
    assert accepted == 0


# ---------------------------------------------------------------------------
# enrollment


def test_enrollment_happy_path(ca, clients, enclave):
    msg = crypto.make_enrollment(clients["u1"], enclave.public_pem, enclave.nonce)
    key = crypto.verify_enrollment(msg, ("u1", "u2"), ca.certificate, enclave)
    assert key == clients["u1"].sym_key


def test_enrollment_unknown_client(ca, clients, enclave):
    msg = crypto.make_enrollment(clients["u3"], enclave.public_pem, enclave.nonce)
    with pytest.raises(UnknownClient):
        crypto.verify_enrollment(msg, ("u1", "u2"), ca.certificate, enclave)


def test_enrollment_wrong_ca(clients, enclave):
    rogue_ca = crypto.CertificateAuthority.create()
    msg = crypto.make_enrollment(clients["u1"], enclave.public_pem, enclave.nonce)
    with pytest.raises(BadCertificate):
        crypto.verify_enrollment(msg, ("u1",), rogue_ca.certificate, enclave)


def test_enrollment_foreign_signature(ca, clients, enclave):
    msg = crypto.make_enrollment(clients["u1"], enclave.public_pem, enclave.nonce)
    forged = crypto.EnrollmentMessage(
        msg.client_name,
        msg.cert_pem,
        msg.encrypted_key,
        crypto.rsa_sign(clients["u2"].private_key, msg.signed_body(enclave.nonce.hex())),
    )
    with pytest.raises(BadSignature):
        crypto.verify_enrollment(forged, ("u1",), ca.certificate, enclave)


# ---------------------------------------------------------------------------
# signed commands


def _command_set(clients, nonce, ctr=1, func="train", params=None):
    params = params if params is not None else {"data": "dtrain"}
    return {
        name: crypto.make_signed_command(ident, nonce, ctr, func, params)
        for name, ident in clients.items()
    }


def _registered(clients):
    return {n: c.certificate.public_key() for n, c in clients.items()}


def test_consensus_accepts_identical_set(clients, enclave):
    cmds = _command_set(clients, enclave.nonce)
    cmd = crypto.verify_command_set(cmds, _registered(clients), 1, enclave.nonce)
    assert cmd.func == "train" and cmd.ctr == 1


def test_consensus_replay_rejected(clients, enclave):
    cmds = _command_set(clients, enclave.nonce, ctr=1)
    with pytest.raises(StaleSequence):
        crypto.verify_command_set(cmds, _registered(clients), 2, enclave.nonce)


def test_consensus_divergent_payload(clients, enclave):
    cmds = _command_set(clients, enclave.nonce)
    cmds["u2"] = crypto.make_signed_command(
        clients["u2"], enclave.nonce, 1, "train", {"data": "other"}
    )
    with pytest.raises(PayloadDivergence):
        crypto.verify_command_set(cmds, _registered(clients), 1, enclave.nonce)


def test_consensus_missing_client(clients, enclave):
    cmds = _command_set(clients, enclave.nonce)
    del cmds["u3"]
    with pytest.raises(MissingClient):
        crypto.verify_command_set(cmds, _registered(clients), 1, enclave.nonce)


def test_consensus_unknown_client(clients, enclave, ca):
    cmds = _command_set(clients, enclave.nonce)
    outsider = crypto.ClientIdentity.generate("eve", ca)
    cmds["eve"] = crypto.make_signed_command(
        outsider, enclave.nonce, 1, "train", {"data": "dtrain"}
    )
    with pytest.raises(UnknownClient):
        crypto.verify_command_set(cmds, _registered(clients), 1, enclave.nonce)


def test_consensus_wrong_nonce(clients, enclave):
    cmds = _command_set(clients, os.urandom(16))
    with pytest.raises(WrongNonce):
        crypto.verify_command_set(cmds, _registered(clients), 1, enclave.nonce)


def test_consensus_forged_signature(clients, enclave):
    cmds = _command_set(clients, enclave.nonce)
    good = cmds["u1"]
    cmds["u1"] = crypto.SignedCommand(
        good.payload,
        crypto.rsa_sign(clients["u2"].private_key, good.payload),
        "u1",
    )
    with pytest.raises(SignatureMismatch):
        crypto.verify_command_set(cmds, _registered(clients), 1, enclave.nonce)


# ---------------------------------------------------------------------------
# responses and canonical serialization


def test_response_binding(clients, enclave):
    resp = crypto.sign_response(enclave, enclave.nonce, 3, {"ok": True})
    pub = enclave.private_key.public_key()
    assert crypto.verify_response(resp, pub, enclave.nonce, 3) == {"ok": True}
    with pytest.raises(WrongNonce):
        crypto.verify_response(resp, pub, enclave.nonce, 4)
    forged = crypto.SignedResponse(resp.payload + b" ", resp.signature)
    with pytest.raises(BadSignature):
        crypto.verify_response(forged, pub, enclave.nonce, 3)


def test_result_encryption_key_separation(clients):
    blob = crypto.seal(clients["u1"].sym_key, b"precious")
    assert crypto.open_sealed(clients["u1"].sym_key, blob) == b"precious"
    with pytest.raises(TamperError):
        crypto.open_sealed(clients["u2"].sym_key, blob)


json_params = st.dictionaries(
    st.text(min_size=1, max_size=8),
    st.one_of(
        st.integers(min_value=-(2**31), max_value=2**31),
        st.text(max_size=12),
        st.booleans(),
    ),
    max_size=5,
)


@given(json_params, st.integers(min_value=1, max_value=2**32))
@settings(max_examples=100, deadline=None)
def test_canonical_command_roundtrip(params, ctr):
    nonce = b"\x01" * 16
    cmd = crypto.Command(nonce, ctr, "train", params)
    back = crypto.parse_command(cmd.payload())
    assert back == cmd
    # canonicalization is stable: re-serializing gives identical bytes
    assert back.payload() == cmd.payload()
