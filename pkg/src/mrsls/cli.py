"""Command line entry points: serve, replay, simulate, ledger.

Config formats live in the repo docs; packaged demo data (scene, verse corpus,
alias table) is used wherever a flag is omitted.  `MRSLS_LOG` sets log
verbosity (debug/info/warning/error).
"""

from __future__ import annotations

import argparse
import asyncio
import dataclasses
import json
import logging
import os
import signal
import sys
from importlib import resources
from pathlib import Path

from . import bots, scenegeo, session as session_mod, versegame
from .chatparse import AliasError, DEFAULT_ALIASES, load_aliases
from .scenegeo import SceneError
from .server import LiveServer, ServeConfig
from .session import ReplayError, SessionCore, file_sha256
from .versegame import CorpusError

log = logging.getLogger("mrsls")


def _data_path(name: str) -> Path:
    return Path(resources.files("mrsls").joinpath("data", name))


def _setup_logging():
    level = os.environ.get("MRSLS_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _load_inputs(args):
    """Load scene/corpus/aliases, falling back to the packaged demo files."""
    scene_path = Path(args.scene) if args.scene else _data_path("demo_scene.json")
    corpus_path = Path(args.corpus) if args.corpus else _data_path("poems.tsv")
    scene = scenegeo.load_scene(scene_path)
    corpus = versegame.load_corpus(corpus_path)
    if args.aliases:
        aliases = load_aliases(args.aliases)
        aliases_sha = file_sha256(args.aliases)
    else:
        aliases = load_aliases(_data_path("aliases.txt"))
        aliases_sha = file_sha256(_data_path("aliases.txt"))
    hashes = {
        "scene_sha256": file_sha256(scene_path),
        "corpus_sha256": file_sha256(corpus_path),
        "aliases_sha256": aliases_sha,
    }
    return scene, corpus, aliases, hashes


def _add_input_flags(p: argparse.ArgumentParser):
    p.add_argument("--scene", help="scene config JSON (default: packaged demo scene)")
    p.add_argument("--corpus", help="verse corpus TSV (default: packaged sample)")
    p.add_argument("--aliases", help="command alias table (default: packaged table)")
    p.add_argument("--seed", type=int, default=42, help="session RNG seed")
    p.add_argument("--tick-rate", type=int, default=30, help="simulation ticks per second")
    p.add_argument("--threshold", type=int, default=None,
                   help="verse-game win threshold override")


def cmd_serve(args) -> int:
    try:
        scene, corpus, aliases, hashes = _load_inputs(args)
    except (SceneError, CorpusError, AliasError, OSError) as e:
        print(f"mrsls: config error: {e}", file=sys.stderr)
        return 2
    try:
        core = SessionCore(scene, corpus, aliases, seed=args.seed,
                           tick_rate=args.tick_rate, threshold=args.threshold)
        config = ServeConfig(
            host=args.host, port=args.port, ws_port=args.ws_port,
            time_scale=args.time_scale, snapshot_every=args.snapshot_every,
            max_ticks=args.max_ticks, wait_clients=args.wait_clients,
            log_path=args.log,
        )
    except ValueError as e:
        print(f"mrsls: config error: {e}", file=sys.stderr)
        return 2

    async def main():
        server = LiveServer(core, config, hashes)
        tcp_port, ws_port = await server.start()
        print(f"mrsls: session {config.session_id} listening "
              f"tcp={tcp_port} ws={ws_port}", flush=True)
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            try:
                loop.add_signal_handler(sig, server.request_stop)
            except NotImplementedError:
                pass
        await server.run_until_done()
        await server.shutdown()
        print(f"mrsls: session {config.session_id} ended "
              f"ticks={core.tick} chain={server.chain.hex}", flush=True)

    asyncio.run(main())
    return 0


def cmd_replay(args) -> int:
    try:
        scene, corpus, aliases, _hashes = _load_inputs(args)
        replay_log = session_mod.read_replay_log(args.log_file)
    except (SceneError, CorpusError, AliasError, ReplayError, OSError) as e:
        print(f"mrsls: replay error: {e}", file=sys.stderr)
        return 2
    for key, path in (("scene_sha256", args.scene), ("corpus_sha256", args.corpus),
                      ("aliases_sha256", args.aliases)):
        recorded = replay_log.header.get(key)
        if recorded and path and recorded != file_sha256(path):
            print(f"mrsls: warning: {key.split('_')[0]} file differs from the "
                  f"one the session ran with", file=sys.stderr)
    result = session_mod.run_replay(
        replay_log, scene, corpus, aliases,
        seed=args.seed if args.seed_given else None,
        tick_rate=args.tick_rate if args.tick_rate_given else None,
        threshold=args.threshold, keep_tick_hashes=bool(args.hashes))
    if args.hashes:
        Path(args.hashes).write_text("\n".join(result.tick_hashes) + "\n",
                                     encoding="utf-8")
    print(f"mrsls: replayed {result.ticks} ticks chain={result.chain_hex}")
    if result.recorded_chain_hex is None:
        print("mrsls: log has no end record; nothing to verify against")
        return 0
    if result.matches:
        print("mrsls: MATCH: replay reproduced the recorded per-tick hash chain")
        return 0
    print(f"mrsls: MISMATCH: recorded chain={result.recorded_chain_hex}",
          file=sys.stderr)
    return 1


def cmd_simulate(args) -> int:
    try:
        _scene, corpus, aliases, _hashes = _load_inputs(args)
    except (SceneError, CorpusError, AliasError, OSError) as e:
        print(f"mrsls: config error: {e}", file=sys.stderr)
        return 2
    host, _, port = args.server.rpartition(":")
    if not host or not port.isdigit():
        print(f"mrsls: bad --server address {args.server!r} (want host:port)",
              file=sys.stderr)
        return 2
    duration_ticks = (round(args.duration_s * args.tick_rate)
                      if args.duration_s else None)
    report = asyncio.run(bots.simulate_audience(
        host, int(port), args.bots, args.seed, corpus, aliases, duration_ticks))
    text = json.dumps(report, ensure_ascii=False, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    if args.bots and len(report["connect_failures"]) == args.bots:
        return 1
    return 0


def cmd_ledger(args) -> int:
    try:
        replay_log = session_mod.read_replay_log(args.log_file)
    except ReplayError as e:
        print(f"mrsls: ledger error: {e}", file=sys.stderr)
        return 2
    records = session_mod.derive_ledger(replay_log)
    lines = [json.dumps(dataclasses.asdict(r), ensure_ascii=False,
                        separators=(",", ":")) for r in records]
    body = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(body, encoding="utf-8")
    else:
        sys.stdout.write(body)
    total = sum(r.amount_fen for r in records if r.effect != "rejected")
    print(f"mrsls: {len(records)} ledger records, total "
          f"{total // 100}.{total % 100:02d} CNY", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrsls",
        description="Interactive mixed-reality scenic live stream server.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run a live session")
    _add_input_flags(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765, help="TCP (framed JSON) port")
    p.add_argument("--ws-port", type=int, default=8766, help="WebSocket port")
    p.add_argument("--log", help="write the session replay log to this path")
    p.add_argument("--time-scale", type=float, default=1.0,
                   help="clock multiplier; 0 runs ticks as fast as possible")
    p.add_argument("--snapshot-every", type=int, default=1,
                   help="broadcast every Nth tick (bandwidth knob)")
    p.add_argument("--max-ticks", type=int, default=None,
                   help="stop after this many ticks (tests/benchmarks)")
    p.add_argument("--wait-clients", type=int, default=0,
                   help="hold the first tick until N viewers have joined")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="re-run a recorded session and verify hashes")
    p.add_argument("log_file")
    _add_input_flags(p)
    p.add_argument("--hashes", help="also dump per-tick state hashes to this path")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("simulate", help="drive scripted bot viewers at a server")
    _add_input_flags(p)
    p.add_argument("--server", default="127.0.0.1:8765", help="host:port to join")
    p.add_argument("--bots", type=int, default=40)
    p.add_argument("--duration-s", type=float, default=None,
                   help="leave once the session clock passes this many seconds")
    p.add_argument("--out", help="also write the metrics report to this path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ledger", help="export the gift ledger from a replay log")
    p.add_argument("log_file")
    p.add_argument("--out", help="write line-delimited records here instead of stdout")
    p.set_defaults(func=cmd_ledger)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    # distinguish "flag given" from defaults where replay prefers the log header
    given = set()
    for token in (argv if argv is not None else sys.argv[1:]):
        if token.startswith("--"):
            given.add(token.split("=")[0])
    args.seed_given = "--seed" in given
    args.tick_rate_given = "--tick-rate" in given
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
