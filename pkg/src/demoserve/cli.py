"""Command-line entry point: serve a demo, run a coordinator, inspect flags."""

from __future__ import annotations

import argparse
import logging
import signal
import ssl
import sys
import threading
import webbrowser
from pathlib import Path

from . import backend as backend_mod
from .coordinator import BindFailed, Coordinator
from .flags import CorruptIndex, FlagStore
from .schema import ParseError, SchemaError, parse_interface_spec, validate_spec
from .server import DemoServer
from .tunnel import TunnelError, open_tunnel

DEFAULT_PORT = 7860


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demoserve",
        description="Serve an inference backend behind a shareable web demo.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the demo server for a config file")
    serve.add_argument("--config", required=True, help="path to the YAML interface config")
    serve.add_argument("--port", type=int, default=DEFAULT_PORT, help="local port (default 7860)")
    serve.add_argument("--open", action="store_true", help="open the local URL in a browser")
    serve.add_argument(
        "--validate",
        action="store_true",
        help="probe the backend with synthetic samples and refuse to serve on mismatch",
    )
    serve.add_argument("--share", action="store_true", help="publish a share link via a coordinator")
    serve.add_argument("--coordinator", metavar="HOST:PORT", help="coordinator address for --share")
    serve.add_argument("--insecure", action="store_true", help="plain-TCP tunnel (loopback tests only)")
    serve.add_argument("--cafile", help="CA bundle for verifying the coordinator's TLS certificate")

    coordinator = sub.add_parser("coordinator", help="run the public relay coordinator")
    coordinator.add_argument("--listen", required=True, metavar="HOST:PORT")
    coordinator.add_argument("--public-base", required=True, help="base URL printed in share links")
    coordinator.add_argument("--insecure", action="store_true", help="plain TCP (loopback tests only)")
    coordinator.add_argument("--cert", help="TLS certificate chain (PEM)")
    coordinator.add_argument("--key", help="TLS private key (PEM)")

    flags = sub.add_parser("flags", help="inspect stored flags")
    flags_sub = flags.add_subparsers(dest="flags_command", required=True)
    flags_list = flags_sub.add_parser("list", help="print flag records as JSON lines")
    flags_list.add_argument("--dir", required=True, help="flag directory")
    flags_list.add_argument("--since", help="only records with id greater than this")
    return parser


def _wait_for_signal() -> None:
    done = threading.Event()

    def handler(signum, frame):
        done.set()

    signal.signal(signal.SIGINT, handler)
    signal.signal(signal.SIGTERM, handler)
    done.wait()


def _parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def cmd_serve(args) -> int:
    config_path = Path(args.config)
    try:
        document = config_path.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    try:
        spec = parse_interface_spec(document, base_dir=config_path.resolve().parent)
    except (ParseError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report = validate_spec(spec)
    if not report.ok:
        for finding in report.findings:
            print(f"error: {finding}", file=sys.stderr)
        return 1
    if not 1 <= args.port <= 65535:
        print(f"error: port {args.port} out of range", file=sys.stderr)
        return 1

    flag_dir = Path(spec.flag_dir)
    if not flag_dir.is_absolute():
        flag_dir = config_path.resolve().parent / flag_dir
    store = FlagStore(flag_dir)

    try:
        handle = backend_mod.start_backend(spec.backend)
    except backend_mod.BackendError as exc:
        print(f"error: backend failed to start: {exc}", file=sys.stderr)
        return 1

    session = None
    server = None
    try:
        if args.validate:
            try:
                result = backend_mod.validate_backend(handle, spec)
            except backend_mod.BackendError as exc:
                print(f"error: validation call failed: {exc}", file=sys.stderr)
                return 1
            if not result.ok:
                print("backend does not match the interface:", file=sys.stderr)
                for finding in result.findings:
                    print(f"  {finding}", file=sys.stderr)
                return 1

        try:
            server = DemoServer(spec, handle, store, port=args.port)
        except OSError as exc:
            print(f"error: cannot bind port {args.port}: {exc}", file=sys.stderr)
            return 1
        server.start()
        print(f"serving {spec.title!r} on {server.url}", flush=True)

        if args.share:
            coordinator_addr = _parse_addr(args.coordinator)
            ssl_context = None
            if not args.insecure:
                ssl_context = ssl.create_default_context(cafile=args.cafile)
            try:
                session = open_tunnel(
                    coordinator_addr,
                    ("127.0.0.1", server.port),
                    ssl_context=ssl_context,
                    on_url_change=server.set_share_url,
                )
            except TunnelError as exc:
                print(f"error: share link failed: {exc}", file=sys.stderr)
                return 1
            server.set_share_url(session.public_url)
            print(f"public URL: {session.public_url}", flush=True)

        if args.open:
            threading.Thread(
                target=webbrowser.open, args=(server.url,), daemon=True
            ).start()

        _wait_for_signal()
        return 0
    finally:
        if session is not None:
            session.close()
        if server is not None:
            server.stop()
        backend_mod.shutdown(handle)


def cmd_coordinator(args) -> int:
    try:
        host, port = _parse_addr(args.listen)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    tls_context = None
    if not args.insecure:
        if not args.cert or not args.key:
            print("error: provide --cert and --key, or pass --insecure", file=sys.stderr)
            return 1
        tls_context = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        tls_context.load_cert_chain(args.cert, args.key)
    coordinator = Coordinator(host, port, args.public_base, tls_context=tls_context)
    try:
        coordinator.start()
    except BindFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"coordinator listening on {host}:{coordinator.port}", flush=True)
    try:
        _wait_for_signal()
    finally:
        coordinator.stop()
    return 0


def cmd_flags_list(args) -> int:
    store = FlagStore(args.dir)
    try:
        records = store.list_flags(since=args.since)
    except CorruptIndex as exc:
        for record in exc.records:
            print(record.to_json())
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for record in records:
        print(record.to_json())
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "serve":
        if args.share and not args.coordinator:
            parser.error("--share requires --coordinator")
        if args.coordinator:
            try:
                _parse_addr(args.coordinator)
            except ValueError as exc:
                parser.error(str(exc))
        return cmd_serve(args)
    if args.command == "coordinator":
        return cmd_coordinator(args)
    if args.command == "flags":
        return cmd_flags_list(args)
    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
