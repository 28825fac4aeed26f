"""Command-line interface.

Subcommands: keygen, encrypt, decrypt, serve-orchestrator, serve-enclave,
client, trace-check, bench. Exit codes: 0 success, 2 usage error,
3 protocol error, 4 trace divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile

import numpy as np

from . import crypto, kernels
from .bench import run_bench
from .cluster import (
    PARAMS_SCHEMA,
    Manifest,
    PlatformSigner,
    build_local_deployment,
)
from .data import load_csv, matrix_to_rows, save_csv, synth_classification
from .errors import ProtocolError
from .tracecheck import SCENARIOS, run_scenario
from .trainer import TrainParams
from .tree import deserialize_model

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PROTOCOL = 3
EXIT_TRACE = 4

log = logging.getLogger("oblivboost")


def _params_from_args(args) -> TrainParams:
    p = TrainParams(
        objective=args.objective,
        num_rounds=args.num_rounds,
        max_depth=args.max_depth,
        num_bins=args.num_bins,
        gamma=args.gamma,
        reg_lambda=args.reg_lambda,
        eta=args.eta,
    )
    p.validate()
    return p


def _add_param_flags(sub) -> None:
    sub.add_argument("--objective", default="binary:logistic")
    sub.add_argument("--num-rounds", type=int, default=5)
    sub.add_argument("--max-depth", type=int, default=3)
    sub.add_argument("--num-bins", type=int, default=16)
    sub.add_argument("--gamma", type=float, default=0.1)
    sub.add_argument("--reg-lambda", type=float, default=1.0)
    sub.add_argument("--eta", type=float, default=0.3)


# ---------------------------------------------------------------------------
# keygen


def cmd_keygen(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    if args.role == "ca":
        ca = crypto.CertificateAuthority.create()
        _write(args.out_dir, "ca_priv.pem", crypto.private_key_pem(ca.private_key))
        _write(args.out_dir, "ca_cert.pem", ca.cert_pem)
        print(f"wrote CA key and certificate to {args.out_dir}")
        return EXIT_OK
    if args.role == "client":
        if not args.name:
            print("keygen --role client needs --name", file=sys.stderr)
            return EXIT_USAGE
        ca = _load_ca(args.ca_dir or args.out_dir)
        ident = crypto.ClientIdentity.generate(args.name, ca)
        _write(args.out_dir, f"{args.name}_sym.key", ident.sym_key.hex())
        _write(args.out_dir, f"{args.name}_priv.pem", crypto.private_key_pem(ident.private_key))
        _write(
            args.out_dir,
            f"{args.name}_pub.pem",
            crypto.public_key_pem(ident.private_key.public_key()),
        )
        _write(args.out_dir, f"{args.name}_cert.pem", crypto.cert_pem(ident.certificate))
        print(f"wrote 4 files for client {args.name!r} to {args.out_dir}")
        return EXIT_OK
    # role == deployment: manifest + platform key for the service mode
    if not args.clients:
        print("keygen --role deployment needs --clients", file=sys.stderr)
        return EXIT_USAGE
    ca = _load_ca(args.ca_dir or args.out_dir)
    platform = PlatformSigner.create()
    manifest = Manifest(
        version="oblivboost-0.1.0",
        clients=tuple(sorted(args.clients.split(","))),
        params_schema=PARAMS_SCHEMA,
        ca_cert_pem=ca.cert_pem,
        platform_pub_pem=platform.pub_pem,
    )
    manifest.to_file(os.path.join(args.out_dir, "manifest.json"))
    _write(args.out_dir, "platform_priv.pem", crypto.private_key_pem(platform.private_key))
    print(f"wrote manifest.json (measurement {manifest.measurement()[:16]}...) "
          f"and platform key to {args.out_dir}")
    return EXIT_OK


def _write(out_dir: str, name: str, content: str) -> None:
    with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
        fh.write(content)


def _load_ca(ca_dir: str) -> crypto.CertificateAuthority:
    with open(os.path.join(ca_dir, "ca_priv.pem"), "r", encoding="utf-8") as fh:
        key = crypto.load_private_key(fh.read())
    with open(os.path.join(ca_dir, "ca_cert.pem"), "r", encoding="utf-8") as fh:
        cert = crypto.load_certificate(fh.read())
    return crypto.CertificateAuthority(key, cert)


def _read_sym_key(path: str) -> bytes:
    with open(path, "r", encoding="utf-8") as fh:
        return bytes.fromhex(fh.read().strip())


# ---------------------------------------------------------------------------
# encrypt / decrypt


def cmd_encrypt(args) -> int:
    X, y = load_csv(args.csv_in)
    rows = matrix_to_rows(X, y)
    records = crypto.encrypt_dataset(rows, _read_sym_key(args.key_file))
    crypto.write_encrypted_dataset(args.enc_out, records)
    print(f"encrypted {len(records)} rows -> {args.enc_out}")
    return EXIT_OK


def cmd_decrypt(args) -> int:
    records = crypto.read_encrypted_dataset(args.enc_in)
    if not records:
        print("no complete records in file", file=sys.stderr)
        return EXIT_PROTOCOL
    key = _read_sym_key(args.key_file)
    try:
        rows, total = crypto.decrypt_records(records, key)
    except ProtocolError as e:
        print(f"decrypt failed: {e}", file=sys.stderr)
        return EXIT_PROTOCOL
    missing = sorted(set(range(1, total + 1)) - set(rows))
    ordered = [rows[j] for j in sorted(rows)]
    from .data import rows_to_matrix

    X, y = rows_to_matrix(ordered)
    save_csv(args.csv_out, X, y)
    if missing:
        print(f"coverage INCOMPLETE: {len(rows)}/{total} rows, missing indices {missing}")
        return EXIT_PROTOCOL
    print(f"decrypted {len(rows)}/{total} rows -> {args.csv_out}; coverage complete")
    return EXIT_OK


# ---------------------------------------------------------------------------
# client workflow


def _run_workflow(sessions: dict, files: dict[str, str], params: TrainParams, output: str):
    """Fig-style pipeline: every client submits each command; results are
    fetched and decrypted by their owners."""
    order = sorted(sessions)
    first = sessions[order[0]]

    def all_submit(func: str, p: dict) -> int:
        ctr = None
        for name in order:
            ctr = sessions[name].submit(func, p)
        return ctr

    ctr = all_submit("load_dmatrix", {"name": "dtrain", "files": files})
    load_res = first.fetch_result(ctr)
    ctr = all_submit("train", {"data": "dtrain", "params": params.to_dict()})
    train_res = first.fetch_result(ctr)
    ctr = all_submit(
        "predict",
        {"data": "dtrain", "model_id": train_res["model_id"], "output": output},
    )
    pred_res = first.fetch_result(ctr)
    ctr = all_submit("get_model", {"model_id": train_res["model_id"]})
    model_res = first.fetch_result(ctr)
    return load_res, train_res, pred_res, model_res


def cmd_client(args) -> int:
    params = _params_from_args(args)
    if args.in_process:
        return _client_in_process(args, params)

    # remote mode: one client among many, all running the same script
    manifest = Manifest.from_file(args.manifest)
    with open(args.priv_key, "r", encoding="utf-8") as fh:
        priv = crypto.load_private_key(fh.read())
    with open(args.cert, "r", encoding="utf-8") as fh:
        cert = crypto.load_certificate(fh.read())
    ident = crypto.ClientIdentity(args.name, _read_sym_key(args.sym_key), priv, cert)
    from .cluster import ClientSession
    from .transport import OrchestratorSocketTransport

    session = ClientSession(ident, manifest, OrchestratorSocketTransport(args.orchestrator))
    session.attest()
    print("attestation verified; enrolled")
    files = dict(kv.split("=", 1) for kv in args.train_file)
    ctr = session.submit("load_dmatrix", {"name": "dtrain", "files": files})
    print("load:", session.fetch_result(ctr, timeout=args.timeout))
    ctr = session.submit("train", {"data": "dtrain", "params": params.to_dict()})
    train_res = session.fetch_result(ctr, timeout=args.timeout)
    print("train:", train_res)
    ctr = session.submit(
        "predict",
        {"data": "dtrain", "model_id": train_res["model_id"], "output": args.output},
    )
    pred = session.fetch_result(ctr, timeout=args.timeout)
    mine = json.loads(session.open_field(pred["predictions"][args.name]))
    print(f"predictions for {args.name}: {len(mine)} rows")
    if args.predict_out:
        with open(args.predict_out, "w", encoding="utf-8") as fh:
            json.dump(mine, fh)
        print(f"wrote {args.predict_out}")
    return EXIT_OK


def _client_in_process(args, params: TrainParams) -> int:
    names = [f"user{i + 1}" for i in range(args.clients)]
    dep = build_local_deployment(names, num_nodes=args.nodes)
    print(
        f"in-process deployment: {args.nodes} enclaves, {len(names)} clients, "
        f"measurement {dep.manifest.measurement()[:16]}..."
    )
    tmp = tempfile.mkdtemp(prefix="oblivboost-demo-")
    files = {}
    truth = {}
    for i, name in enumerate(names):
        if args.data:
            X, y = load_csv(args.data)
            take = slice(i * (len(y) // len(names)), (i + 1) * (len(y) // len(names)))
            X, y = X[take], y[take]
        else:
            X, y = synth_classification(args.rows, args.features, seed=args.seed + i)
        truth[name] = y
        records = crypto.encrypt_dataset(matrix_to_rows(X, y), dep.identities[name].sym_key)
        path = os.path.join(tmp, f"{name}.enc")
        crypto.write_encrypted_dataset(path, records)
        files[name] = path
    load_res, train_res, pred_res, model_res = _run_workflow(
        dep.sessions, files, params, args.output
    )
    print("load:", load_res)
    print("train:", train_res)
    for name in names:
        session = dep.sessions[name]
        scores = np.array(json.loads(session.open_field(pred_res["predictions"][name])))
        if params.objective == "binary:logistic" and args.output == "probability":
            acc = float(np.mean((scores > 0.5) == (truth[name] > 0.5)))
            print(f"{name}: {scores.shape[0]} predictions, train-accuracy {acc:.3f}")
        else:
            print(f"{name}: {scores.shape[0]} predictions")
    blob = dep.sessions[names[0]].open_field(model_res["model"][names[0]])
    model = deserialize_model(blob)
    print(f"model: {len(model.trees)} trees, depth {model.depth}, {len(blob)} bytes")
    return EXIT_OK


# ---------------------------------------------------------------------------
# services


def cmd_serve_orchestrator(args) -> int:
    from .transport import load_cluster_config, serve_orchestrator

    config = load_cluster_config(args.config)
    server = serve_orchestrator(config)
    print(f"orchestrator listening at {server.bound_address}")
    try:
        server._thread.join()
    except KeyboardInterrupt:
        server.stop()
    return EXIT_OK


def cmd_serve_enclave(args) -> int:
    from .transport import load_cluster_config, serve_enclave

    config = load_cluster_config(args.config)
    server = serve_enclave(config, args.node_id)
    role = "master" if config.nodes[args.node_id].parent == -1 else "worker"
    print(f"enclave node {args.node_id} ({role}) listening at {server.bound_address}")
    try:
        server._thread.join()
    except KeyboardInterrupt:
        server.stop()
    return EXIT_OK


# ---------------------------------------------------------------------------
# trace-check / bench


def cmd_trace_check(args) -> int:
    result = run_scenario(
        args.scenario, trials=args.trials, seed=args.seed, leaky=args.negative_control
    )
    print(result.describe())
    return EXIT_OK if result.ok else EXIT_TRACE


def cmd_bench(args) -> int:
    if args.backends == "both":
        backends = kernels.available()
    elif args.backends == "active":
        backends = None
    else:
        backends = [args.backends]
    report = run_bench(
        n=args.n,
        d=args.d,
        bins=args.num_bins,
        depth=args.max_depth,
        rounds=args.num_rounds,
        seed=args.seed,
        backends=backends,
    )
    for line in report.lines():
        print(line)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oblivboost",
        description="Data-oblivious gradient boosted trees with a simulated "
        "multi-enclave training cluster.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate CA, client, or deployment key material")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--role", choices=("ca", "client", "deployment"), default="client")
    p.add_argument("--name", help="client name (role=client)")
    p.add_argument("--ca-dir", help="directory with ca_priv.pem / ca_cert.pem")
    p.add_argument("--clients", help="comma-separated client names (role=deployment)")
    p.set_defaults(fn=cmd_keygen)

    p = sub.add_parser("encrypt", help="encrypt a CSV dataset row by row")
    p.add_argument("csv_in")
    p.add_argument("key_file")
    p.add_argument("enc_out")
    p.set_defaults(fn=cmd_encrypt)

    p = sub.add_parser("decrypt", help="decrypt a dataset and report coverage")
    p.add_argument("enc_in")
    p.add_argument("key_file")
    p.add_argument("csv_out")
    p.set_defaults(fn=cmd_decrypt)

    p = sub.add_parser("serve-orchestrator", help="run the orchestrator service")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_serve_orchestrator)

    p = sub.add_parser("serve-enclave", help="host one enclave node")
    p.add_argument("--config", required=True)
    p.add_argument("--node-id", type=int, required=True)
    p.set_defaults(fn=cmd_serve_enclave)

    p = sub.add_parser("client", help="run the collaborative workflow")
    p.add_argument("--in-process", action="store_true", help="single-process demo")
    p.add_argument("--clients", type=int, default=3, help="client count (in-process)")
    p.add_argument("--nodes", type=int, default=2, help="enclave count (in-process)")
    p.add_argument("--rows", type=int, default=200, help="rows per client (in-process)")
    p.add_argument("--features", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", help="CSV split across simulated clients (in-process)")
    p.add_argument("--output", choices=("margin", "probability"), default="probability")
    p.add_argument("--predict-out", help="write decrypted predictions (JSON)")
    p.add_argument("--orchestrator", help="orchestrator address (remote mode)")
    p.add_argument("--manifest", help="deployment manifest path (remote mode)")
    p.add_argument("--name", help="client name (remote mode)")
    p.add_argument("--sym-key", help="hex symmetric key file (remote mode)")
    p.add_argument("--priv-key", help="RSA private key PEM (remote mode)")
    p.add_argument("--cert", help="client certificate PEM (remote mode)")
    p.add_argument("--train-file", action="append", default=[], help="client=path.enc")
    p.add_argument("--timeout", type=float, default=120.0)
    _add_param_flags(p)
    p.set_defaults(fn=cmd_client)

    p = sub.add_parser("trace-check", help="assert trace independence of a scenario")
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--negative-control",
        action="store_true",
        help="inject a branchy comparator; the check must FAIL",
    )
    p.set_defaults(fn=cmd_trace_check)

    p = sub.add_parser("bench", help="time oblivious vs reference training")
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--num-bins", type=int, default=16)
    p.add_argument("--max-depth", type=int, default=4)
    p.add_argument("--num-rounds", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--backends",
        default="active",
        choices=["active", "both", "ext", "numpy"],
        help="kernel backends to time",
    )
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "client" and not args.in_process:
        needed = ("orchestrator", "manifest", "name", "sym_key", "priv_key", "cert")
        missing = [k for k in needed if not getattr(args, k)]
        if missing:
            parser.error(f"remote client mode needs --{missing[0].replace('_', '-')}")
    try:
        return args.fn(args)
    except ProtocolError as e:
        print(f"protocol error: {e}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
