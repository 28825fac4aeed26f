"""Simulated enclave cluster and orchestrator.

Enclaves form a tree rooted at a master node. Attestation is mocked: a
node's measurement is the SHA-256 of the deployment manifest, and reports
are signed by a simulated platform key that clients trust. Parents attest
children and establish pairwise AES-256-GCM session keys; afterwards every
inter-enclave message travels sealed. The untrusted orchestrator only
buffers signed client commands and relays complete sets to the master,
which re-verifies everything before executing.

Collective operations walk the tree and fold results in ascending node id
order, so runs are deterministic for a fixed topology.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import crypto
from .crypto import (
    CertificateAuthority,
    ClientIdentity,
    Command,
    EnclaveIdentity,
    EnrollmentMessage,
    SignedCommand,
    SignedResponse,
    canonical_json,
    make_signed_command,
    open_sealed,
    seal,
    verify_command_set,
    verify_enrollment,
    verify_response,
)
from .errors import (
    AttestationSignatureInvalid,
    MeasurementMismatch,
    ProtocolError,
    UnknownClient,
)
from .inference import predict
from .quantile import QuantileSummary
from .trace import TracedArray
from .trainer import (
    BinPlan,
    TrainParams,
    WorkerState,
    aggregate_histograms,
    make_bin_plan,
    merge_summaries,
)
from .tree import Model, deserialize_model, serialize_model
from .data import rows_to_matrix

PARAMS_SCHEMA = {
    "objective": "str",
    "num_rounds": "int",
    "max_depth": "int",
    "num_bins": "int",
    "gamma": "float",
    "reg_lambda": "float",
    "eta": "float",
}


# ---------------------------------------------------------------------------
# Wire helpers


def np_to_wire(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {
        "b64": base64.b64encode(a.tobytes()).decode(),
        "dtype": str(a.dtype),
        "shape": list(a.shape),
    }


def np_from_wire(obj: dict) -> np.ndarray:
    a = np.frombuffer(base64.b64decode(obj["b64"]), dtype=np.dtype(obj["dtype"]))
    return a.reshape(obj["shape"]).copy()


def summary_to_wire(s: QuantileSummary) -> dict:
    return {
        "feature_id": s.feature_id,
        "values": np_to_wire(s.values.data),
        "weights": np_to_wire(s.weights.data),
        "valid": np_to_wire(s.valid.data),
    }


def summary_from_wire(obj: dict) -> QuantileSummary:
    return QuantileSummary(
        obj["feature_id"],
        TracedArray(np_from_wire(obj["values"])),
        TracedArray(np_from_wire(obj["weights"])),
        TracedArray(np_from_wire(obj["valid"])),
    )


# ---------------------------------------------------------------------------
# Manifest and mock attestation


@dataclass(frozen=True)
class Manifest:
    """Deployment manifest standing in for a compile-time embedding: the
    build version, the parameter schema, the client list, and the trust
    anchors (CA and simulated platform keys)."""

    version: str
    clients: tuple[str, ...]
    params_schema: dict
    ca_cert_pem: str
    platform_pub_pem: str

    def canonical_bytes(self) -> bytes:
        return canonical_json(
            {
                "version": self.version,
                "clients": list(self.clients),
                "params_schema": self.params_schema,
                "ca_cert_pem": self.ca_cert_pem,
                "platform_pub_pem": self.platform_pub_pem,
            }
        )

    def measurement(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()

    def to_file(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.canonical_bytes().decode())

    @classmethod
    def from_file(cls, path: str) -> "Manifest":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(
            obj["version"],
            tuple(obj["clients"]),
            obj["params_schema"],
            obj["ca_cert_pem"],
            obj["platform_pub_pem"],
        )


class PlatformSigner:
    """Simulated hardware quoting key; its public half is a trust anchor."""

    def __init__(self, private_key):
        self.private_key = private_key

    @classmethod
    def create(cls) -> "PlatformSigner":
        return cls(crypto.generate_rsa_key())

    @property
    def pub_pem(self) -> str:
        return crypto.public_key_pem(self.private_key.public_key())

    def sign(self, body: bytes) -> bytes:
        return crypto.rsa_sign(self.private_key, body)


def report_body(node_id: int, measurement: str, public_pem: str, nonce_hex: str) -> bytes:
    return canonical_json(
        {
            "node_id": node_id,
            "measurement": measurement,
            "public_pem": public_pem,
            "nonce": nonce_hex,
        }
    )


def verify_report(
    report: dict, platform_pub_pem: str, expected_measurement: str
) -> dict:
    """Check the platform signature and the measurement; returns the body."""
    body = report["body"]
    raw = report_body(
        body["node_id"], body["measurement"], body["public_pem"], body["nonce"]
    )
    pub = crypto.load_public_key(platform_pub_pem)
    if not crypto.rsa_verify(pub, bytes.fromhex(report["signature"]), raw):
        raise AttestationSignatureInvalid("attestation report signature invalid")
    if body["measurement"] != expected_measurement:
        raise MeasurementMismatch(
            f"measurement {body['measurement'][:12]}... does not match expected build"
        )
    return body


class Wiretap:
    """Test hook recording every byte that crosses a channel."""

    def __init__(self):
        self.frames: list[tuple[str, bytes]] = []

    def observe(self, label: str, data: bytes) -> None:
        self.frames.append((label, data))


# ---------------------------------------------------------------------------
# Enclave node


FRAME_PLAIN = 0  # pre-session handshake / signed-command dispatch
FRAME_SEALED = 1  # AES-GCM envelope under a session key


def encode_frame(kind: int, body: bytes) -> bytes:
    return bytes([kind]) + body


def decode_frame(frame: bytes) -> tuple[int, bytes]:
    if not frame:
        raise ProtocolError("empty frame")
    return frame[0], frame[1:]


class ChildLink:
    """Parent-side handle to one child enclave."""

    def __init__(self, request_fn: Callable[[bytes], bytes], child_id: int):
        self._request = request_fn
        self.child_id = child_id
        self.session_key: bytes | None = None

    def request_plain(self, msg: dict) -> dict:
        reply = self._request(encode_frame(FRAME_PLAIN, canonical_json(msg)))
        kind, body = decode_frame(reply)
        if kind != FRAME_PLAIN:
            raise ProtocolError("expected plain reply")
        return json.loads(body.decode())

    def request_op(self, msg: dict) -> dict:
        assert self.session_key is not None, "session not established"
        sealed = seal(self.session_key, canonical_json(msg))
        reply = self._request(encode_frame(FRAME_SEALED, sealed))
        kind, body = decode_frame(reply)
        if kind != FRAME_SEALED:
            raise ProtocolError("expected sealed reply")
        return json.loads(open_sealed(self.session_key, body).decode())


def make_inproc_link(child: "EnclaveNode", wiretap: Wiretap | None) -> ChildLink:
    def request_fn(frame: bytes) -> bytes:
        if wiretap is not None:
            wiretap.observe(f"enclave->{child.node_id}", frame)
        reply = child.handle_frame(frame)
        if wiretap is not None:
            wiretap.observe(f"enclave<-{child.node_id}", reply)
        return reply

    return ChildLink(request_fn, child.node_id)


class EnclaveNode:
    """One simulated enclave: identity, session keys, data partition, and
    the op handlers that the master drives across the tree."""

    def __init__(self, node_id: int, manifest: Manifest, platform: PlatformSigner):
        self.node_id = node_id
        self.manifest = manifest
        self.identity = EnclaveIdentity.generate()
        self.measurement = manifest.measurement()
        self._platform = platform
        self.children: list[ChildLink] = []
        self._parent_session: bytes | None = None
        self.client_keys: dict[str, bytes] = {}
        self.registered_certs: dict[str, object] = {}
        self.datasets: dict[str, dict] = {}
        self.worker: WorkerState | None = None
        # master-only state
        self.expected_ctr = 1
        self.models: dict[str, Model] = {}
        self._model_seq = 0
        self.dataset_owners: dict[str, dict[str, tuple[int, int]]] = {}

    # -- attestation --------------------------------------------------------

    def report(self) -> dict:
        body = {
            "node_id": self.node_id,
            "measurement": self.measurement,
            "public_pem": self.identity.public_pem,
            "nonce": self.identity.nonce.hex(),
        }
        raw = report_body(
            body["node_id"], body["measurement"], body["public_pem"], body["nonce"]
        )
        return {"body": body, "signature": self._platform.sign(raw).hex()}

    def attest_child(self, link: ChildLink) -> None:
        report = link.request_plain({"type": "report"})
        body = verify_report(report, self.manifest.platform_pub_pem, self.measurement)
        session_key = os.urandom(32)
        enc = crypto.rsa_encrypt(crypto.load_public_key(body["public_pem"]), session_key)
        ack = link.request_plain({"type": "session", "key": enc.hex()})
        if ack.get("status") != "ok":
            raise ProtocolError("session establishment failed")
        link.session_key = session_key

    def attest_subtree(self) -> int:
        """Attest direct children, then have each attest its own subtree.
        Returns the number of sessions established below this node."""
        count = 0
        for link in sorted(self.children, key=lambda c: c.child_id):
            self.attest_child(link)
            count += 1
            reply = link.request_op({"op": "attest_subtree", "args": {}})
            count += reply["sessions"]
        return count

    # -- frame handling (child side) ----------------------------------------

    def handle_frame(self, frame: bytes) -> bytes:
        kind, body = decode_frame(frame)
        if kind == FRAME_PLAIN:
            reply = self._handle_plain(json.loads(body.decode()))
            return encode_frame(FRAME_PLAIN, canonical_json(reply))
        if self._parent_session is None:
            raise ProtocolError("sealed frame before session establishment")
        msg = json.loads(open_sealed(self._parent_session, body).decode())
        reply = self._dispatch(msg["op"], msg["args"])
        return encode_frame(FRAME_SEALED, seal(self._parent_session, canonical_json(reply)))

    def _handle_plain(self, msg: dict) -> dict:
        mtype = msg.get("type")
        if mtype == "report":
            return self.report()
        if mtype == "session":
            self._parent_session = crypto.rsa_decrypt(
                self.identity.private_key, bytes.fromhex(msg["key"])
            )
            return {"status": "ok"}
        if mtype == "enroll":  # orchestrator-relayed, master only
            try:
                return self.enroll(msg["msg"])
            except ProtocolError as e:
                return {"error": {"code": e.code, "message": str(e)}}
        if mtype == "dispatch":  # full signed-command set from the orchestrator
            return {"response": self.execute_command_set(msg["commands"])}
        raise ProtocolError(f"unknown plain message {mtype!r}")

    # -- collective execution ------------------------------------------------

    def subtree_exec(self, op: str, args: dict) -> dict[int, dict]:
        """Run an op on this node and every descendant; results keyed by
        node id (children visited in ascending id order)."""
        results = {self.node_id: self._local_op(op, args)}
        for link in sorted(self.children, key=lambda c: c.child_id):
            reply = link.request_op({"op": op, "args": args})
            for nid, res in reply["results"].items():
                results[int(nid)] = res
        return results

    def _dispatch(self, op: str, args: dict) -> dict:
        if op == "attest_subtree":
            return {"sessions": self.attest_subtree()}
        return {"results": {str(k): v for k, v in self.subtree_exec(op, args).items()}}

    def _local_op(self, op: str, args: dict) -> dict:
        handler = getattr(self, f"_op_{op}", None)
        if handler is None:
            raise ProtocolError(f"unknown op {op!r}")
        return handler(args)

    # -- node-local ops -------------------------------------------------------

    def _op_register_key(self, args: dict) -> dict:
        self.client_keys[args["client"]] = bytes.fromhex(args["key"])
        return {"status": "ok"}

    def _op_load_part(self, args: dict) -> dict:
        """Decrypt this node's slice of each client's rows and assemble the
        local partition, reporting per-client coverage sets."""
        name = args["name"]
        mine = args["assignments"].get(str(self.node_id), {})
        rows_by_gid: dict[int, bytes] = {}
        seen: dict[str, list[int]] = {}
        for client in sorted(mine):
            key = self.client_keys.get(client)
            if key is None:
                raise UnknownClient(f"no key enrolled for {client!r}")
            records = [
                crypto.EncryptedRowRecord(
                    r["index"],
                    r["total"],
                    bytes.fromhex(r["nonce"]),
                    bytes.fromhex(r["ciphertext"]),
                    bytes.fromhex(r["tag"]),
                )
                for r in mine[client]["records"]
            ]
            offset = mine[client]["offset"]
            total = mine[client]["total"]
            if records:
                rows, _ = crypto.decrypt_records(records, key, claimed_total=total)
            else:
                rows = {}
            for j, blob in rows.items():
                rows_by_gid[offset + j - 1] = blob
            seen[client] = sorted(rows)
        gids = sorted(rows_by_gid)
        if gids:
            X, y = rows_to_matrix([rows_by_gid[g] for g in gids])
        else:
            X = np.zeros((0, 1))
            y = np.zeros(0)
        self.datasets[name] = {"X": X, "y": y, "gids": np.asarray(gids, dtype=np.int64)}
        return {"seen": seen, "rows": len(gids)}

    def _op_train_begin(self, args: dict) -> dict:
        ds = self.datasets.get(args["name"])
        if ds is None:
            raise ProtocolError(f"no dataset named {args['name']!r}")
        if ds["X"].shape[0] == 0:
            raise ProtocolError("dataset leaves this worker with an empty partition")
        params = TrainParams.from_dict(args["params"])
        self.worker = WorkerState(ds["X"], ds["y"], params)
        self.worker.gradient_phase()
        return {"n": self.worker.n, "d": self.worker.d}

    def _op_gradients(self, args: dict) -> dict:
        self.worker.gradient_phase()
        return {"status": "ok"}

    def _op_summaries(self, args: dict) -> dict:
        return {"summaries": [summary_to_wire(s) for s in self.worker.summary_phase()]}

    def _op_set_edges(self, args: dict) -> dict:
        self.worker.set_edges(BinPlan.from_wire(args["plan"]))
        return {"status": "ok"}

    def _op_begin_tree(self, args: dict) -> dict:
        self.worker.begin_tree()
        return {"status": "ok"}

    def _op_hist(self, args: dict) -> dict:
        hg, hh, hc = self.worker.hist_phase(args["level"])
        return {"hg": np_to_wire(hg), "hh": np_to_wire(hh), "hc": np_to_wire(hc)}

    def _op_level_advance(self, args: dict) -> dict:
        agg = (
            np_from_wire(args["hg"]),
            np_from_wire(args["hh"]),
            np_from_wire(args["hc"]),
        )
        self.worker.split_phase(args["level"], agg)
        self.worker.partition_phase(args["level"])
        return {"status": "ok"}

    def _op_finish_tree(self, args: dict) -> dict:
        self.worker.finish_tree()
        return {"status": "ok"}

    def _op_predict_part(self, args: dict) -> dict:
        ds = self.datasets.get(args["name"])
        if ds is None:
            raise ProtocolError(f"no dataset named {args['name']!r}")
        model = deserialize_model(bytes.fromhex(args["model"]))
        if ds["X"].shape[0] == 0:
            margins = np.zeros(0)
        else:
            margins = predict(model, ds["X"], output="margin")
        return {"gids": np_to_wire(ds["gids"]), "margins": np_to_wire(margins)}

    # -- master-side command execution ---------------------------------------

    def enroll(self, msg_wire: dict) -> dict:
        msg = EnrollmentMessage.from_wire(msg_wire)
        ca_cert = crypto.load_certificate(self.manifest.ca_cert_pem)
        key = verify_enrollment(msg, self.manifest.clients, ca_cert, self.identity)
        self.registered_certs[msg.client_name] = crypto.load_certificate(msg.cert_pem)
        self.client_keys[msg.client_name] = key
        # percolate the key to every attested enclave
        self.subtree_exec("register_key", {"client": msg.client_name, "key": key.hex()})
        return {"status": "enrolled", "client": msg.client_name}

    def execute_command_set(self, commands_wire: dict[str, dict]) -> dict:
        """Verify the consensus set, run the agreed API call, and return a
        signed response bound to the sequence number."""
        nonce = self.identity.nonce
        try:
            if set(self.registered_certs) != set(self.manifest.clients):
                missing = sorted(set(self.manifest.clients) - set(self.registered_certs))
                raise ProtocolError(f"enrollment incomplete: {missing}")
            commands = {
                name: SignedCommand.from_wire(w) for name, w in commands_wire.items()
            }
            registered = {
                name: cert.public_key() for name, cert in self.registered_certs.items()
            }
            cmd = verify_command_set(commands, registered, self.expected_ctr, nonce)
        except ProtocolError as e:
            resp = crypto.sign_response(
                self.identity,
                nonce,
                self.expected_ctr,
                {"error": {"code": e.code, "message": str(e)}},
            )
            return resp.to_wire()

        try:
            result = self._execute_api(cmd)
        except ProtocolError as e:
            result = {"error": {"code": e.code, "message": str(e)}}
        except (ValueError, KeyError, TypeError) as e:
            result = {"error": {"code": "invalid_request", "message": str(e)}}
        ctr = cmd.ctr
        self.expected_ctr = ctr + 1  # the command was admitted and consumed
        return crypto.sign_response(self.identity, nonce, ctr, result).to_wire()

    def _execute_api(self, cmd: Command) -> dict:
        handlers = {
            "load_dmatrix": self._api_load_dmatrix,
            "train": self._api_train,
            "predict": self._api_predict,
            "get_model": self._api_get_model,
        }
        handler = handlers.get(cmd.func)
        if handler is None:
            raise ProtocolError(f"unknown API function {cmd.func!r}")
        return handler(cmd.params)

    def _all_node_ids(self) -> list[int]:
        ids = [self.node_id]
        for link in self.children:
            ids.extend(self._child_subtree_ids(link))
        return sorted(ids)

    def _child_subtree_ids(self, link: ChildLink) -> list[int]:
        reply = link.request_op({"op": "ping", "args": {}})
        return [int(k) for k in reply["results"]]

    def _op_ping(self, args: dict) -> dict:
        return {"status": "ok"}

    def _op_echo(self, args: dict) -> dict:
        return {"payload": args["payload"]}

    def broadcast(self, payload) -> dict[int, dict]:
        """Deliver a payload to every node over the sealed tree channels;
        each node echoes what it received."""
        return self.subtree_exec("echo", {"payload": payload})

    def _api_load_dmatrix(self, params: dict) -> dict:
        name = params["name"]
        files = params["files"]
        node_ids = self._all_node_ids()
        k = len(node_ids)
        assignments: dict[str, dict[str, dict]] = {str(nid): {} for nid in node_ids}
        owners: dict[str, tuple[int, int]] = {}
        offset = 0
        totals = {}
        for client in sorted(files):
            if client not in self.manifest.clients:
                raise UnknownClient(f"{client!r} is not a listed client")
            records = crypto.read_encrypted_dataset(files[client])
            if not records:
                raise ProtocolError(f"no records in {files[client]!r}")
            total = records[0].total
            totals[client] = total
            owners[client] = (offset, total)
            buckets: dict[int, list] = {nid: [] for nid in node_ids}
            for rec in records:
                gid = offset + rec.index - 1
                nid = node_ids[gid % k]
                buckets[nid].append(
                    {
                        "index": rec.index,
                        "total": rec.total,
                        "nonce": rec.nonce.hex(),
                        "ciphertext": rec.ciphertext.hex(),
                        "tag": rec.tag.hex(),
                    }
                )
            for nid in node_ids:
                assignments[str(nid)][client] = {
                    "records": buckets[nid],
                    "offset": offset,
                    "total": total,
                }
            offset += total
        results = self.subtree_exec(
            "load_part", {"name": name, "assignments": assignments}
        )
        # cross-worker coverage verification, per client
        for client, total in totals.items():
            sets = [set(res["seen"].get(client, [])) for res in results.values()]
            crypto.verify_coverage(sets, total)
        self.dataset_owners[name] = owners
        return {"name": name, "rows": totals, "clients": sorted(files)}

    def _api_train(self, params: dict) -> dict:
        name = params["data"]
        tp = TrainParams.from_dict(params["params"])
        begin = self.subtree_exec("train_begin", {"name": name, "params": tp.to_dict()})
        dims = {res["d"] for res in begin.values() if res["n"] > 0}
        if len(dims) != 1:
            raise ProtocolError("workers disagree on feature count")
        d = dims.pop()

        # quantile pipeline: fold per-worker summaries in node id order
        per_node = self.subtree_exec("summaries", {})
        order = sorted(per_node)
        global_summaries = []
        for f in range(d):
            acc = summary_from_wire(per_node[order[0]]["summaries"][f])
            for nid in order[1:]:
                nxt = summary_from_wire(per_node[nid]["summaries"][f])
                acc = merge_summaries(acc, nxt, tp.num_bins)
            global_summaries.append(acc)
        plan = make_bin_plan(global_summaries, tp.num_bins)
        self.subtree_exec("set_edges", {"plan": plan.to_wire()})

        model = Model([], d, tp.objective)
        for rnd in range(tp.num_rounds):
            if rnd > 0:
                self.subtree_exec("gradients", {})
            self.subtree_exec("begin_tree", {})
            for level in range(tp.max_depth):
                hists = self.subtree_exec("hist", {"level": level})
                triples = [
                    (
                        np_from_wire(hists[nid]["hg"]),
                        np_from_wire(hists[nid]["hh"]),
                        np_from_wire(hists[nid]["hc"]),
                    )
                    for nid in sorted(hists)
                ]
                hg, hh, hc = aggregate_histograms(triples)
                self.subtree_exec(
                    "level_advance",
                    {
                        "level": level,
                        "hg": np_to_wire(hg),
                        "hh": np_to_wire(hh),
                        "hc": np_to_wire(hc),
                    },
                )
            self.subtree_exec("finish_tree", {})
            # every worker built the identical tree; keep the master's copy
            model.trees.append(self.worker.last_tree)
        self._model_seq += 1
        model_id = f"m{self._model_seq}"
        self.models[model_id] = model
        self._model_datasets = getattr(self, "_model_datasets", {})
        self._model_datasets[model_id] = name
        return {"model_id": model_id, "num_trees": len(model.trees), "depth": tp.max_depth}

    def _api_predict(self, params: dict) -> dict:
        name = params["data"]
        model_id = params["model_id"]
        output = params.get("output", "probability")
        model = self.models.get(model_id)
        if model is None:
            raise ProtocolError(f"no model named {model_id!r}")
        owners = self.dataset_owners.get(name)
        if owners is None:
            raise ProtocolError(f"no dataset named {name!r}")
        results = self.subtree_exec(
            "predict_part",
            {"name": name, "model": serialize_model(model).hex()},
        )
        gids = []
        margins = []
        for nid in sorted(results):
            gids.append(np_from_wire(results[nid]["gids"]))
            margins.append(np_from_wire(results[nid]["margins"]))
        gids = np.concatenate(gids) if gids else np.zeros(0, dtype=np.int64)
        margins = np.concatenate(margins) if margins else np.zeros(0)
        order = np.argsort(gids)
        gids = gids[order]
        margins = margins[order]
        if output == "probability" and model.objective == "binary:logistic":
            from .trainer import sigmoid

            scores = sigmoid(margins)
        else:
            scores = margins
        out = {}
        for client, (offset, total) in owners.items():
            mask = (gids >= offset) & (gids < offset + total)
            client_scores = scores[mask].tolist()
            blob = seal(self.client_keys[client], canonical_json(client_scores))
            out[client] = blob.hex()
        return {"predictions": out, "count": int(scores.shape[0]), "output": output}

    def _api_get_model(self, params: dict) -> dict:
        model = self.models.get(params["model_id"])
        if model is None:
            raise ProtocolError(f"no model named {params['model_id']!r}")
        blob = serialize_model(model)
        out = {}
        for client in self.manifest.clients:
            out[client] = seal(self.client_keys[client], blob).hex()
        return {"model": out, "num_trees": len(model.trees)}


# ---------------------------------------------------------------------------
# Cluster assembly


class Cluster:
    """In-process cluster wiring: nodes, tree links, attestation."""

    def __init__(
        self,
        manifest: Manifest,
        platform: PlatformSigner,
        num_nodes: int,
        wiretap: Wiretap | None = None,
    ):
        if num_nodes < 1:
            raise ValueError("cluster needs at least one node")
        self.manifest = manifest
        self.nodes = [EnclaveNode(i, manifest, platform) for i in range(num_nodes)]
        # binary-heap tree topology rooted at node 0
        for i in range(1, num_nodes):
            parent = self.nodes[(i - 1) // 2]
            parent.children.append(make_inproc_link(self.nodes[i], wiretap))
        self.master = self.nodes[0]
        self.attested_sessions = 0

    def attest(self) -> dict:
        self.attested_sessions = self.master.attest_subtree()
        return self.master.report()


# ---------------------------------------------------------------------------
# Orchestrator


class Orchestrator:
    """Untrusted relay between clients and the master enclave.

    Buffers one signed command per client per counter value; once every
    registered client has submitted, the full set is dispatched exactly
    once. Performs no verification that matters: the enclave re-checks
    signatures, payload equality, and sequencing.
    """

    def __init__(self, master: EnclaveNode, clients: tuple[str, ...], wiretap: Wiretap | None = None):
        self.master = master
        self.clients = tuple(clients)
        self.buffers: dict[int, dict[str, dict]] = {}
        self.dispatched: set[int] = set()
        self.responses: dict[int, dict] = {}
        self.wiretap = wiretap
        # admits concurrent submissions but serializes handling, so at most
        # one command is ever in flight cluster-wide
        self._lock = threading.Lock()

    def handle(self, msg: dict) -> dict:
        with self._lock:
            if self.wiretap is not None:
                self.wiretap.observe("client->orch", canonical_json(msg))
            reply = self._handle(msg)
            if self.wiretap is not None:
                self.wiretap.observe("client<-orch", canonical_json(reply))
            return reply

    def _handle(self, msg: dict) -> dict:
        mtype = msg.get("type")
        if mtype == "ATTEST":
            if "enroll" in msg:
                try:
                    return self.master.enroll(msg["enroll"])
                except ProtocolError as e:
                    return {"error": {"code": e.code, "message": str(e)}}
            return {"report": self.master.report()}
        if mtype == "SUBMIT_COMMAND":
            return self.submit(msg["command"])
        if mtype == "FETCH_RESPONSE":
            resp = self.fetch(int(msg["ctr"]))
            return {"response": resp} if resp is not None else {"pending": True}
        return {"error": {"code": "bad_request", "message": f"unknown type {mtype!r}"}}

    def submit(self, sc_wire: dict) -> dict:
        signer = sc_wire.get("signer", "")
        if signer not in self.clients:
            return {"error": {"code": "unknown_client", "message": signer}}
        try:
            payload = json.loads(bytes.fromhex(sc_wire["payload"]).decode())
            ctr = int(payload["ctr"])
        except (ValueError, KeyError):
            return {"error": {"code": "bad_request", "message": "unparseable command"}}
        bucket = self.buffers.setdefault(ctr, {})
        if signer not in bucket:
            bucket[signer] = sc_wire
        if len(bucket) == len(self.clients) and ctr not in self.dispatched:
            self.dispatched.add(ctr)
            self.responses[ctr] = self.master.execute_command_set(
                {name: w for name, w in bucket.items()}
            )
            return {"status": "dispatched"}
        return {"status": "buffered", "have": len(bucket), "need": len(self.clients)}

    def fetch(self, ctr: int) -> dict | None:
        return self.responses.get(ctr)


# ---------------------------------------------------------------------------
# Client session


class ClientSession:
    """Client-side driver for the attest / enroll / command workflow."""

    def __init__(self, identity: ClientIdentity, manifest: Manifest, transport):
        self.identity = identity
        self.manifest = manifest
        self.transport = transport  # .request(dict) -> dict
        self.master_pub = None
        self.nonce: bytes | None = None
        self.ctr = 1

    def attest(self) -> None:
        reply = self.transport.request({"type": "ATTEST"})
        body = verify_report(
            reply["report"],
            self.manifest.platform_pub_pem,
            self.manifest.measurement(),
        )
        self.master_pub = crypto.load_public_key(body["public_pem"])
        self.nonce = bytes.fromhex(body["nonce"])
        msg = crypto.make_enrollment(self.identity, body["public_pem"], self.nonce)
        ack = self.transport.request({"type": "ATTEST", "enroll": msg.to_wire()})
        if ack.get("status") != "enrolled":
            raise ProtocolError(f"enrollment failed: {ack}")

    def submit(self, func: str, params: dict) -> int:
        assert self.nonce is not None, "attest first"
        ctr = self.ctr
        sc = make_signed_command(self.identity, self.nonce, ctr, func, params)
        reply = self.transport.request(
            {"type": "SUBMIT_COMMAND", "command": sc.to_wire()}
        )
        if "error" in reply:
            raise ProtocolError(f"submit rejected: {reply['error']}")
        self.ctr += 1
        return ctr

    def fetch_result(self, ctr: int, timeout: float = 30.0, poll: float = 0.02) -> dict:
        deadline = time.monotonic() + timeout
        while True:
            reply = self.transport.request({"type": "FETCH_RESPONSE", "ctr": ctr})
            if "response" in reply:
                resp = SignedResponse.from_wire(reply["response"])
                result = verify_response(resp, self.master_pub, self.nonce, ctr)
                if "error" in result:
                    err = result["error"]
                    raise ProtocolError(f"{err.get('code')}: {err.get('message')}")
                return result
            if time.monotonic() >= deadline:
                raise TimeoutError(f"no response for command {ctr}")
            time.sleep(poll)

    def open_field(self, blob_hex: str) -> bytes:
        return open_sealed(self.identity.sym_key, bytes.fromhex(blob_hex))


class InProcTransport:
    """Direct transport onto an in-process orchestrator."""

    def __init__(self, orchestrator: Orchestrator):
        self.orchestrator = orchestrator

    def request(self, msg: dict) -> dict:
        return self.orchestrator.handle(msg)


# ---------------------------------------------------------------------------
# Deployment bootstrap


@dataclass
class LocalDeployment:
    manifest: Manifest
    ca: CertificateAuthority
    platform: PlatformSigner
    cluster: Cluster
    orchestrator: Orchestrator
    identities: dict[str, ClientIdentity]
    sessions: dict[str, ClientSession]
    wiretap: Wiretap | None = None


def build_local_deployment(
    client_names: list[str],
    num_nodes: int = 2,
    wiretap: Wiretap | None = None,
    attest_clients: bool = True,
) -> LocalDeployment:
    """Everything-in-one-process deployment for demos and tests."""
    ca = CertificateAuthority.create()
    platform = PlatformSigner.create()
    clients = tuple(sorted(client_names))
    manifest = Manifest(
        version="oblivboost-0.1.0",
        clients=clients,
        params_schema=PARAMS_SCHEMA,
        ca_cert_pem=ca.cert_pem,
        platform_pub_pem=platform.pub_pem,
    )
    cluster = Cluster(manifest, platform, num_nodes, wiretap)
    cluster.attest()
    orchestrator = Orchestrator(cluster.master, clients, wiretap)
    identities = {name: ClientIdentity.generate(name, ca) for name in clients}
    sessions = {
        name: ClientSession(identities[name], manifest, InProcTransport(orchestrator))
        for name in clients
    }
    if attest_clients:
        for s in sessions.values():
            s.attest()
    return LocalDeployment(
        manifest, ca, platform, cluster, orchestrator, identities, sessions, wiretap
    )
