"""Network ingress/egress and session orchestration.

One asyncio loop runs everything: connection handlers feed a single ordered
event queue, exactly one tick task mutates the session core, and broadcast
fan-out writes immutable encoded snapshots.  Connection handlers never touch
simulation state directly.

Transports: native length-prefixed JSON over TCP, plus a WebSocket endpoint
serving browser clients the same documents as text frames.
"""

from __future__ import annotations

import asyncio
import logging
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from websockets.asyncio.server import serve as ws_serve
from websockets.exceptions import ConnectionClosed

from . import protocol, session as session_mod
from .chatparse import ChatEvent, CommandAliases, parse_cny
from .protocol import (ProtocolError, build_snapshot, build_welcome,
                       default_instructions, encode_doc, encode_frame, read_frame,
                       split_effects)
from .scenegeo import SceneConfig
from .session import (HashChain, ReplayWriter, SessionCore, file_sha256,
                      tick_start_ms)
from .versegame import Corpus

log = logging.getLogger("mrsls.server")

MAX_COMMENT_CHARS = 500
MAX_NAME_CHARS = 40


@dataclass
class ServeConfig:
    host: str = "127.0.0.1"
    port: int = 8765
    ws_port: int = 8766
    time_scale: float = 1.0          # 0 = run ticks as fast as possible
    snapshot_every: int = 1
    max_ticks: Optional[int] = None
    backlog: int = 90                # unsent snapshots before a client is dropped
    rate_limit_per_s: float = 2.0    # comments per viewer per second
    wait_clients: int = 0            # hold the first tick until N viewers joined
    log_path: Optional[str] = None
    session_id: str = ""

    def __post_init__(self):
        if not self.session_id:
            self.session_id = uuid.uuid4().hex[:12]
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")


class _Client:
    """One viewer connection on either transport."""

    def __init__(self, server: "LiveServer", is_ws: bool):
        self.server = server
        self.is_ws = is_ws
        self.conn_id = server._alloc_conn_id()
        self.viewer_id = f"v{self.conn_id}"
        self.display_name: Optional[str] = None       # None until hello
        self.queue: asyncio.Queue = asyncio.Queue(maxsize=server.config.backlog)
        self.recent_cmd_ts: deque = deque()
        self.closed = False
        self.on_drop = None

    @property
    def active(self) -> bool:
        return self.display_name is not None

    def send_doc(self, doc: dict):
        self.send_encoded(encode_frame(doc) if not self.is_ws
                          else encode_doc(doc).decode("utf-8"))

    def send_encoded(self, payload):
        if self.closed:
            return
        try:
            self.queue.put_nowait(payload)
        except asyncio.QueueFull:
            log.warning("dropping slow client %s (%s unsent messages)",
                        self.viewer_id, self.queue.qsize())
            self.server.drop_client(self)


class LiveServer:
    def __init__(self, core: SessionCore, config: ServeConfig,
                 config_hashes: Optional[dict] = None):
        self.core = core
        self.config = config
        self.clients: dict[int, _Client] = {}
        self.pending: deque[ChatEvent] = deque()
        self._next_seq = 1
        self._bcast_seq = 0
        self.chain = HashChain()
        self._notices: list = []
        self._chat: list = []
        self._cues: list = []
        self._stop = asyncio.Event()
        self._audience_ready = asyncio.Event()
        if config.wait_clients <= 0:
            self._audience_ready.set()
        self._log_fp = None
        self._writer: Optional[ReplayWriter] = None
        self._config_hashes = config_hashes or {}
        self._servers = []
        self._tasks = []
        self._next_conn = 0
        self._instructions = default_instructions(core.aliases)

    def _alloc_conn_id(self) -> int:
        self._next_conn += 1
        return self._next_conn

    # -- lifecycle -----------------------------------------------------------

    async def start(self) -> tuple[int, int]:
        """Bind both listeners; returns (tcp_port, ws_port)."""
        cfg = self.config
        if cfg.log_path:
            self._log_fp = open(cfg.log_path, "w", encoding="utf-8")
            self._writer = ReplayWriter(self._log_fp, {
                "session": cfg.session_id,
                "seed": self.core.seed,
                "tick_rate": self.core.tick_rate,
                "threshold": self.core.threshold,
                "story_min_fen": self.core.economy.story_min_fen,
                "created_unix_ms": int(time.time() * 1000),
                **self._config_hashes,
            })
        tcp = await asyncio.start_server(self._handle_tcp, cfg.host, cfg.port)
        self._servers.append(tcp)
        ws = await ws_serve(self._handle_ws, cfg.host, cfg.ws_port)
        self._servers.append(ws)
        tcp_port = tcp.sockets[0].getsockname()[1]
        ws_port = ws.sockets[0].getsockname()[1]
        self._tasks.append(asyncio.ensure_future(self._tick_loop()))
        log.info("session %s listening tcp=%d ws=%d", cfg.session_id, tcp_port, ws_port)
        return tcp_port, ws_port

    async def run_until_done(self):
        await self._stop.wait()

    def request_stop(self):
        self._stop.set()

    async def shutdown(self):
        self._stop.set()
        for t in self._tasks:
            t.cancel()
        for t in self._tasks:
            try:
                await t
            except (asyncio.CancelledError, Exception):
                pass
        for client in list(self.clients.values()):
            self.drop_client(client)
        for srv in self._servers:
            srv.close()
        for srv in self._servers:
            try:
                await srv.wait_closed()
            except Exception:
                pass
        if self._writer is not None:
            self._writer.end(self.core.tick, self.chain.hex)
        if self._log_fp is not None:
            self._log_fp.close()
            self._log_fp = None

    # -- tick loop -----------------------------------------------------------

    async def _tick_loop(self):
        cfg = self.config
        core = self.core
        dt = 1.0 / core.tick_rate
        await self._audience_ready.wait()
        loop = asyncio.get_running_loop()
        started = loop.time()
        batch: list[ChatEvent] = []
        while not self._stop.is_set():
            if cfg.max_ticks is not None and core.tick >= cfg.max_ticks:
                self._stop.set()
                break
            now_tick = core.tick
            batch.clear()
            while self.pending and session_mod.apply_tick_for(
                    self.pending[0].ts_ms, core.tick_rate) <= now_tick:
                batch.append(self.pending.popleft())
            result = core.step(batch)
            self.chain.add(core.state_hash())
            notices, cues = split_effects(result.effects)
            self._notices.extend(notices)
            self._chat.extend(result.chat)
            self._cues.extend(cues)
            if result.tick % cfg.snapshot_every == 0:
                self._broadcast_snapshot()
            if cfg.time_scale > 0:
                target = started + (core.tick * dt) / cfg.time_scale
                delay = target - loop.time()
                await asyncio.sleep(delay if delay > 0 else 0)
            else:
                await asyncio.sleep(0)

    def _broadcast_snapshot(self):
        self._bcast_seq += 1
        doc = build_snapshot(self.core, self._bcast_seq, self.config.session_id,
                             self._notices, self._chat, self._cues)
        self._notices.clear()
        self._chat.clear()
        self._cues.clear()
        if not self.clients:
            return
        tcp_payload = None
        ws_payload = None
        for client in list(self.clients.values()):
            if not client.active:
                continue
            if client.is_ws:
                if ws_payload is None:
                    ws_payload = encode_doc(doc).decode("utf-8")
                client.send_encoded(ws_payload)
            else:
                if tcp_payload is None:
                    tcp_payload = encode_frame(doc)
                client.send_encoded(tcp_payload)

    # -- ingestion -----------------------------------------------------------

    def _ingest(self, client: _Client, kind: str, text: Optional[str],
                amount_fen: Optional[int]) -> ChatEvent:
        ev = ChatEvent(
            seq=self._next_seq,
            ts_ms=tick_start_ms(self.core.tick, self.core.tick_rate),
            viewer_id=client.viewer_id,
            display_name=client.display_name,
            kind=kind,
            text=text,
            amount_fen=amount_fen,
        )
        self._next_seq += 1
        self.pending.append(ev)
        if self._writer is not None:
            self._writer.event(ev)
        return ev

    def _rate_limited(self, client: _Client) -> bool:
        now_ms = tick_start_ms(self.core.tick, self.core.tick_rate)
        window = client.recent_cmd_ts
        while window and window[0] <= now_ms - 1000:
            window.popleft()
        if len(window) >= self.config.rate_limit_per_s:
            return True
        window.append(now_ms)
        return False

    def _handle_doc(self, client: _Client, doc: dict):
        kind = doc["type"]
        if not client.active:
            if kind != "hello":
                raise ProtocolError("first message must be hello")
            name = doc.get("name")
            if not isinstance(name, str) or not name.strip():
                raise ProtocolError("hello needs a non-empty display name")
            if len(name) > MAX_NAME_CHARS:
                raise ProtocolError(f"display name over {MAX_NAME_CHARS} chars")
            client.display_name = name.strip()
            client.send_doc(build_welcome(
                self.core, self.config.session_id, client.viewer_id,
                self.core.scene.background_plate, self._instructions))
            joined = sum(1 for c in self.clients.values() if c.active)
            if joined >= self.config.wait_clients:
                self._audience_ready.set()
            return
        if kind == "hello":
            raise ProtocolError("duplicate hello")
        if kind == "ping":
            client.send_doc({"type": "pong", "v": protocol.PROTOCOL_VERSION,
                             "tick": self.core.tick, "nonce": doc.get("nonce")})
            return
        if kind == "comment":
            text = doc.get("text")
            if not isinstance(text, str):
                raise ProtocolError("comment needs a string 'text'")
            if len(text) > MAX_COMMENT_CHARS:
                client.send_doc({"type": "notice", "v": protocol.PROTOCOL_VERSION,
                                 "target": client.viewer_id,
                                 "text": f"Comment over {MAX_COMMENT_CHARS} characters "
                                         f"was not sent."})
                return
            if self._rate_limited(client):
                client.send_doc({"type": "notice", "v": protocol.PROTOCOL_VERSION,
                                 "target": client.viewer_id,
                                 "text": "Slow down: too many commands."})
                return
            self._ingest(client, "comment", text, None)
            return
        if kind == "gift":
            try:
                fen = parse_cny(doc.get("amount"))
            except ValueError as e:
                client.send_doc({"type": "notice", "v": protocol.PROTOCOL_VERSION,
                                 "target": client.viewer_id, "text": f"Bad gift: {e}"})
                return
            if fen <= 0:
                log.info("rejected non-positive gift from %s", client.viewer_id)
                client.send_doc({"type": "notice", "v": protocol.PROTOCOL_VERSION,
                                 "target": client.viewer_id,
                                 "text": "Gift amount must be positive."})
                return
            text = doc.get("text")
            self._ingest(client, "gift", text if isinstance(text, str) else None, fen)
            return
        raise ProtocolError(f"unknown message type {kind!r}")

    # -- transports ----------------------------------------------------------

    def drop_client(self, client: _Client):
        if client.closed:
            return
        client.closed = True
        self.clients.pop(client.conn_id, None)
        # wake the sender so it can exit
        try:
            client.queue.put_nowait(None)
        except asyncio.QueueFull:
            pass
        if client.on_drop is not None:
            client.on_drop()

    async def _handle_tcp(self, reader: asyncio.StreamReader,
                          writer: asyncio.StreamWriter):
        client = _Client(self, is_ws=False)
        self.clients[client.conn_id] = client
        client.on_drop = writer.close

        async def sender():
            try:
                while True:
                    payload = await client.queue.get()
                    if payload is None or client.closed:
                        break
                    writer.write(payload)
                    await writer.drain()
            except (ConnectionError, asyncio.CancelledError):
                pass

        send_task = asyncio.ensure_future(sender())
        try:
            while not client.closed:
                doc = await read_frame(reader)
                if doc is None:
                    break
                try:
                    self._handle_doc(client, doc)
                except ProtocolError as e:
                    # transport writes are whole-buffer, so a direct write of a
                    # complete frame cannot interleave with the sender task
                    writer.write(encode_frame(
                        {"type": "error", "v": protocol.PROTOCOL_VERSION,
                         "text": str(e)}))
                    try:
                        await writer.drain()
                    except ConnectionError:
                        pass
                    break
        except ProtocolError as e:
            log.info("tcp client %s: %s", client.viewer_id, e)
        finally:
            self.drop_client(client)
            send_task.cancel()
            try:
                await send_task
            except asyncio.CancelledError:
                pass
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, asyncio.CancelledError):
                pass

    async def _handle_ws(self, websocket):
        client = _Client(self, is_ws=True)
        self.clients[client.conn_id] = client
        client.on_drop = lambda: asyncio.ensure_future(websocket.close())

        async def sender():
            try:
                while True:
                    payload = await client.queue.get()
                    if payload is None or client.closed:
                        break
                    await websocket.send(payload)
            except (ConnectionClosed, asyncio.CancelledError):
                pass

        send_task = asyncio.ensure_future(sender())
        try:
            async for message in websocket:
                try:
                    self._handle_doc(client, protocol.decode_doc(message))
                except ProtocolError as e:
                    client.send_doc({"type": "error", "v": protocol.PROTOCOL_VERSION,
                                     "text": str(e)})
                    await asyncio.sleep(0.05)  # let the sender flush the error
                    break
                if client.closed:
                    break
        except ConnectionClosed:
            pass
        finally:
            self.drop_client(client)
            send_task.cancel()
            try:
                await send_task
            except asyncio.CancelledError:
                pass
            try:
                await websocket.close()
            except Exception:
                pass


async def serve_session(core: SessionCore, config: ServeConfig,
                        config_hashes: Optional[dict] = None,
                        on_listening=None) -> LiveServer:
    server = LiveServer(core, config, config_hashes)
    tcp_port, ws_port = await server.start()
    if on_listening is not None:
        on_listening(tcp_port, ws_port)
    return server
