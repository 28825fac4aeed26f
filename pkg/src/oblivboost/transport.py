"""Framed socket transport for the service mode.

Messages are length-prefixed: {len u32 LE}{payload}. Client-orchestrator
payloads are canonical JSON; inter-enclave payloads reuse the cluster
frame encoding (kind byte + plain or sealed body). Addresses are
"tcp:HOST:PORT" or "unix:PATH".
"""

from __future__ import annotations

import json
import os
import socket
import struct
import threading
import time
from dataclasses import dataclass

from . import crypto
from .cluster import ChildLink, EnclaveNode, Manifest, Orchestrator, PlatformSigner
from .crypto import canonical_json
from .errors import ProtocolError


def parse_address(addr: str):
    if addr.startswith("unix:"):
        return socket.AF_UNIX, addr[len("unix:") :]
    if addr.startswith("tcp:"):
        host, port = addr[len("tcp:") :].rsplit(":", 1)
        return socket.AF_INET, (host, int(port))
    raise ValueError(f"address must be tcp:HOST:PORT or unix:PATH, got {addr!r}")


def send_frame(sock: socket.socket, data: bytes) -> None:
    sock.sendall(struct.pack("<I", len(data)) + data)


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def recv_frame(sock: socket.socket) -> bytes | None:
    header = _recv_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack("<I", header)
    return _recv_exact(sock, length)


class FramedServer:
    """One-frame-request / one-frame-reply server, thread per connection."""

    def __init__(self, address: str, handler):
        self.address = address
        self.handler = handler
        family, target = parse_address(address)
        if family == socket.AF_UNIX and os.path.exists(target):
            os.unlink(target)
        self._sock = socket.socket(family, socket.SOCK_STREAM)
        if family == socket.AF_INET:
            self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind(target)
        self._sock.listen(16)
        self._lock = threading.Lock()  # one in-flight request per node
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def bound_address(self) -> str:
        family = self._sock.family
        if family == socket.AF_INET:
            host, port = self._sock.getsockname()
            return f"tcp:{host}:{port}"
        return f"unix:{self._sock.getsockname()}"

    def serve_forever(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                break
            threading.Thread(target=self._serve_conn, args=(conn,), daemon=True).start()

    def _serve_conn(self, conn: socket.socket) -> None:
        with conn:
            while True:
                frame = recv_frame(conn)
                if frame is None:
                    return
                with self._lock:
                    reply = self.handler(frame)
                send_frame(conn, reply)

    def start(self) -> "FramedServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        try:
            self._sock.close()
        except OSError:
            pass


class FramedClient:
    """Connect-per-request client; retries while the peer comes up."""

    def __init__(self, address: str, retries: int = 50, retry_delay: float = 0.1):
        self.address = address
        self.retries = retries
        self.retry_delay = retry_delay

    def request(self, data: bytes) -> bytes:
        family, target = parse_address(self.address)
        last_err: Exception | None = None
        for _ in range(self.retries):
            try:
                with socket.socket(family, socket.SOCK_STREAM) as sock:
                    sock.connect(target)
                    send_frame(sock, data)
                    reply = recv_frame(sock)
                    if reply is None:
                        raise ProtocolError("connection closed mid-reply")
                    return reply
            except (ConnectionError, FileNotFoundError, OSError) as e:
                last_err = e
                time.sleep(self.retry_delay)
        raise ProtocolError(f"cannot reach {self.address}: {last_err}")


# ---------------------------------------------------------------------------
# Cluster config


@dataclass
class NodeSpec:
    address: str
    parent: int


@dataclass
class ClusterConfig:
    manifest_path: str
    platform_key_path: str
    orchestrator_address: str
    nodes: dict[int, NodeSpec]

    @property
    def master_id(self) -> int:
        masters = [nid for nid, spec in self.nodes.items() if spec.parent == -1]
        if len(masters) != 1:
            raise ValueError("cluster config needs exactly one master (parent = -1)")
        return masters[0]


def load_cluster_config(path: str) -> ClusterConfig:
    """Parse the key=value cluster config.

    Keys: manifest, platform_key, orchestrator.address,
    node.<id>.address, node.<id>.parent (-1 marks the master).
    """
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno}: expected key=value")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    nodes: dict[int, NodeSpec] = {}
    for key, val in values.items():
        if key.startswith("node."):
            _, sid, attr = key.split(".", 2)
            nid = int(sid)
            spec = nodes.setdefault(nid, NodeSpec("", -2))
            if attr == "address":
                spec.address = val
            elif attr == "parent":
                spec.parent = int(val)
            else:
                raise ValueError(f"unknown node attribute {attr!r}")
    for nid, spec in nodes.items():
        if not spec.address or spec.parent == -2:
            raise ValueError(f"node {nid} needs both address and parent")
    base = os.path.dirname(os.path.abspath(path))

    def rel(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(base, p)

    return ClusterConfig(
        manifest_path=rel(values["manifest"]),
        platform_key_path=rel(values["platform_key"]),
        orchestrator_address=values["orchestrator.address"],
        nodes=nodes,
    )


# ---------------------------------------------------------------------------
# Enclave / orchestrator services


class SocketChildLink(ChildLink):
    def __init__(self, address: str, child_id: int):
        super().__init__(FramedClient(address).request, child_id)


class MasterProxy:
    """Orchestrator-side handle to a remote master enclave."""

    def __init__(self, address: str):
        self._client = FramedClient(address)

    def _plain(self, msg: dict) -> dict:
        from .cluster import FRAME_PLAIN, decode_frame, encode_frame

        reply = self._client.request(encode_frame(FRAME_PLAIN, canonical_json(msg)))
        kind, body = decode_frame(reply)
        if kind != FRAME_PLAIN:
            raise ProtocolError("expected plain reply from master")
        return json.loads(body.decode())

    def report(self) -> dict:
        return self._plain({"type": "report"})

    def enroll(self, msg_wire: dict) -> dict:
        return self._plain({"type": "enroll", "msg": msg_wire})

    def execute_command_set(self, commands_wire: dict[str, dict]) -> dict:
        reply = self._plain({"type": "dispatch", "commands": commands_wire})
        return reply["response"]


def serve_enclave(config: ClusterConfig, node_id: int) -> FramedServer:
    """Host one enclave node. Start leaves first, then parents, master
    last; the master attests its subtree before serving the orchestrator."""
    manifest = Manifest.from_file(config.manifest_path)
    with open(config.platform_key_path, "r", encoding="utf-8") as fh:
        platform = PlatformSigner(crypto.load_private_key(fh.read()))
    node = EnclaveNode(node_id, manifest, platform)
    child_ids = sorted(nid for nid, spec in config.nodes.items() if spec.parent == node_id)
    for cid in child_ids:
        node.children.append(SocketChildLink(config.nodes[cid].address, cid))
    server = FramedServer(config.nodes[node_id].address, node.handle_frame)
    if config.nodes[node_id].parent == -1:
        node.attest_subtree()
    return server.start()


class OrchestratorSocketTransport:
    """Client-side transport speaking JSON frames to the orchestrator."""

    def __init__(self, address: str):
        self._client = FramedClient(address)

    def request(self, msg: dict) -> dict:
        return json.loads(self._client.request(canonical_json(msg)).decode())


def serve_orchestrator(config: ClusterConfig) -> FramedServer:
    manifest = Manifest.from_file(config.manifest_path)
    master = MasterProxy(config.nodes[config.master_id].address)
    orchestrator = Orchestrator(master, manifest.clients)

    def handler(frame: bytes) -> bytes:
        try:
            msg = json.loads(frame.decode())
        except ValueError:
            return canonical_json({"error": {"code": "bad_request", "message": "not JSON"}})
        return canonical_json(orchestrator.handle(msg))

    return FramedServer(config.orchestrator_address, handler).start()
