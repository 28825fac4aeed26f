"""Cluster: attestation, orchestrator state machine, end-to-end workflow."""

import json

import numpy as np
import pytest

from oblivboost import crypto
from oblivboost.cluster import (
    Cluster,
    EnclaveNode,
    Manifest,
    PARAMS_SCHEMA,
    PlatformSigner,
    Wiretap,
    build_local_deployment,
    verify_report,
)
from oblivboost.data import matrix_to_rows, synth_classification
from oblivboost.errors import (
    AttestationSignatureInvalid,
    MeasurementMismatch,
    ProtocolError,
)
from oblivboost.trainer import TrainParams, train_partitions
from oblivboost.tree import deserialize_model, serialize_model


def encrypt_to(tmp_path, dep, name, X, y):
    records = crypto.encrypt_dataset(matrix_to_rows(X, y), dep.identities[name].sym_key)
    path = str(tmp_path / f"{name}.enc")
    crypto.write_encrypted_dataset(path, records)
    return path


def submit_all(dep, func, params):
    ctr = None
    for name in sorted(dep.sessions):
        ctr = dep.sessions[name].submit(func, params)
    return ctr


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One shared 3-client, 4-node deployment with a trained model."""
    tmp_path = tmp_path_factory.mktemp("cluster")
    wiretap = Wiretap()
    dep = build_local_deployment(["a", "b", "c"], num_nodes=4, wiretap=wiretap)
    data = {}
    files = {}
    for i, name in enumerate(("a", "b", "c")):
        X, y = synth_classification(45, 5, seed=i)
        data[name] = (X, y)
        files[name] = encrypt_to(tmp_path, dep, name, X, y)
    params = TrainParams(num_rounds=3, max_depth=3, num_bins=8)
    ctr = submit_all(dep, "load_dmatrix", {"name": "dtrain", "files": files})
    load_res = dep.sessions["a"].fetch_result(ctr)
    ctr = submit_all(dep, "train", {"data": "dtrain", "params": params.to_dict()})
    train_res = dep.sessions["a"].fetch_result(ctr)
    return dep, data, files, params, load_res, train_res, wiretap


# ---------------------------------------------------------------------------
# attestation


def test_tree_attestation_session_count():
    dep = build_local_deployment(["a"], num_nodes=4, attest_clients=False)
    assert dep.cluster.attested_sessions == 3  # tree edge count


def test_altered_manifest_measurement_mismatch():
    ca = crypto.CertificateAuthority.create()
    platform = PlatformSigner.create()
    man = Manifest("v1", ("a",), PARAMS_SCHEMA, ca.cert_pem, platform.pub_pem)
    man2 = Manifest("v2-evil", ("a",), PARAMS_SCHEMA, ca.cert_pem, platform.pub_pem)
    cluster = Cluster(man, platform, 2)
    # worker launched from a different build manifest
    cluster.nodes[1].measurement = man2.measurement()
    with pytest.raises(MeasurementMismatch):
        cluster.attest()


def test_tampered_report_rejected():
    ca = crypto.CertificateAuthority.create()
    platform = PlatformSigner.create()
    man = Manifest("v1", ("a",), PARAMS_SCHEMA, ca.cert_pem, platform.pub_pem)
    node = EnclaveNode(0, man, platform)
    report = node.report()
    report["body"]["measurement"] = "00" * 32
    with pytest.raises(AttestationSignatureInvalid):
        verify_report(report, platform.pub_pem, man.measurement())
    # intact signature but unexpected measurement
    good = node.report()
    with pytest.raises(MeasurementMismatch):
        verify_report(good, platform.pub_pem, "11" * 32)


def test_broadcast_reaches_all_nodes_identically():
    dep = build_local_deployment(["a"], num_nodes=5, attest_clients=False)
    payload = {"round": 3, "blob": "feedface"}
    echoes = dep.cluster.master.broadcast(payload)
    assert sorted(echoes) == [0, 1, 2, 3, 4]
    assert all(res["payload"] == payload for res in echoes.values())


# ---------------------------------------------------------------------------
# orchestrator state machine


def test_partial_submission_never_executes(trained, tmp_path):
    dep, data, files, params, _, train_res, _ = trained
    orch = dep.orchestrator
    before = len(dep.cluster.master.models)
    # 2 of 3 clients submit; command must stay buffered
    names = sorted(dep.sessions)[:2]
    base_ctr = dep.sessions[names[0]].ctr
    for name in names:
        dep.sessions[name].submit("train", {"data": "dtrain", "params": params.to_dict()})
    assert orch.fetch(base_ctr) is None
    assert len(dep.cluster.master.models) == before
    # third client completes the set: exactly one execution
    dep.sessions[sorted(dep.sessions)[2]].submit(
        "train", {"data": "dtrain", "params": params.to_dict()}
    )
    assert orch.fetch(base_ctr) is not None
    assert len(dep.cluster.master.models) == before + 1


def test_replayed_set_rejected(trained):
    dep, data, files, params, _, _, _ = trained
    master = dep.cluster.master
    nonce = master.identity.nonce
    stale = {
        name: crypto.make_signed_command(
            dep.identities[name], nonce, 1, "train",
            {"data": "dtrain", "params": params.to_dict()},
        ).to_wire()
        for name in dep.identities
    }
    models_before = dict(master.models)
    resp = crypto.SignedResponse.from_wire(master.execute_command_set(stale))
    result = crypto.verify_response(
        resp, master.identity.private_key.public_key(), nonce, master.expected_ctr
    )
    assert result["error"]["code"] == "stale_sequence"
    assert master.models == models_before


def test_dropped_signature_yields_missing_client(trained):
    dep, data, files, params, _, _, _ = trained
    master = dep.cluster.master
    nonce = master.identity.nonce
    ctr = master.expected_ctr
    full = {
        name: crypto.make_signed_command(
            dep.identities[name], nonce, ctr, "get_model", {"model_id": "m1"}
        ).to_wire()
        for name in dep.identities
    }
    # malicious orchestrator drops one client's signed command
    del full[sorted(full)[0]]
    resp = crypto.SignedResponse.from_wire(master.execute_command_set(full))
    result = crypto.verify_response(
        resp, master.identity.private_key.public_key(), nonce, ctr
    )
    assert result["error"]["code"] == "missing_client"
    assert master.expected_ctr == ctr  # not consumed


def test_predict_before_load_is_signed_error(tmp_path):
    dep = build_local_deployment(["a"], num_nodes=2)
    s = dep.sessions["a"]
    ctr = s.submit("predict", {"data": "nope", "model_id": "m1", "output": "margin"})
    with pytest.raises(ProtocolError):
        s.fetch_result(ctr)


def test_unknown_function_rejected(trained):
    dep = trained[0]
    ctr = submit_all(dep, "format_disks", {})
    with pytest.raises(ProtocolError):
        dep.sessions["a"].fetch_result(ctr)


# ---------------------------------------------------------------------------
# end-to-end workflow


def test_load_coverage_and_counts(trained):
    _, data, _, _, load_res, _, _ = trained
    assert load_res["rows"] == {"a": 45, "b": 45, "c": 45}


def test_cluster_model_matches_local_training(trained):
    """The command-driven cluster produces the same bytes as lockstep local
    training over the identical round-robin partitions."""
    dep, data, files, params, _, train_res, _ = trained
    master = dep.cluster.master
    model = master.models[train_res["model_id"]]

    Xs = np.concatenate([data[n][0] for n in ("a", "b", "c")])
    ys = np.concatenate([data[n][1] for n in ("a", "b", "c")])
    k = 4
    parts = [(Xs[i::k], ys[i::k]) for i in range(k)]
    local_model, _plan = train_partitions(parts, params)
    assert serialize_model(model) == serialize_model(local_model)


def test_predictions_decrypt_per_client(trained):
    dep, data, files, params, _, train_res, _ = trained
    ctr = submit_all(
        dep,
        "predict",
        {"data": "dtrain", "model_id": train_res["model_id"], "output": "probability"},
    )
    res = dep.sessions["a"].fetch_result(ctr)
    assert res["count"] == 135
    for name in ("a", "b", "c"):
        scores = json.loads(dep.sessions[name].open_field(res["predictions"][name]))
        assert len(scores) == 45
        y = data[name][1]
        acc = np.mean((np.array(scores) > 0.5) == (y > 0.5))
        assert acc >= 0.9
    # one client cannot open another's field
    from oblivboost.errors import TamperError

    with pytest.raises(TamperError):
        dep.sessions["a"].open_field(res["predictions"]["b"])


def test_get_model_roundtrip(trained):
    dep, data, files, params, _, train_res, _ = trained
    ctr = submit_all(dep, "get_model", {"model_id": train_res["model_id"]})
    res = dep.sessions["b"].fetch_result(ctr)
    blob = dep.sessions["b"].open_field(res["model"]["b"])
    model = deserialize_model(blob)
    assert len(model.trees) == params.num_rounds


def test_no_plaintext_on_any_channel(trained):
    dep, data, files, params, _, _, wiretap = trained
    sentinels = []
    for name in ("a", "b", "c"):
        X, y = data[name]
        sentinels.append(matrix_to_rows(X[:1], y[:1])[0])
    assert wiretap.frames, "wiretap saw no traffic"
    for label, frame in wiretap.frames:
        for s in sentinels:
            assert s not in frame, label
        assert b"SXGB" not in frame, label


def test_deterministic_reruns(tmp_path):
    """Two full runs produce byte-identical models and decrypted results
    (signatures and nonces excluded)."""

    def run():
        dep = build_local_deployment(["a", "b"], num_nodes=3)
        files = {}
        for i, name in enumerate(("a", "b")):
            X, y = synth_classification(30, 4, seed=10 + i)
            files[name] = encrypt_to(tmp_path, dep, name, X, y)
        params = TrainParams(num_rounds=2, max_depth=2, num_bins=4)
        ctr = submit_all(dep, "load_dmatrix", {"name": "d", "files": files})
        dep.sessions["a"].fetch_result(ctr)
        ctr = submit_all(dep, "train", {"data": "d", "params": params.to_dict()})
        res = dep.sessions["a"].fetch_result(ctr)
        model = dep.cluster.master.models[res["model_id"]]
        ctr = submit_all(
            dep, "predict", {"data": "d", "model_id": res["model_id"], "output": "margin"}
        )
        pred = dep.sessions["a"].fetch_result(ctr)
        mine = dep.sessions["a"].open_field(pred["predictions"]["a"])
        return serialize_model(model), mine

    m1, p1 = run()
    m2, p2 = run()
    assert m1 == m2
    assert p1 == p2
