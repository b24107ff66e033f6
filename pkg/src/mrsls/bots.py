"""Scripted bot audience for load and determinism runs.

Each bot is a real TCP client with a seeded behavior mix: lotus commands,
fish feeding, verse submissions while a round runs, plain chat, and gifts of
both tiers.  Bot decisions are a pure function of (seed, bot index), so the
commands a script sends are reproducible; only their arrival interleaving at
the server is left to the transport, which the replay log captures.
"""

from __future__ import annotations

import asyncio
import json
import random
from dataclasses import dataclass, field
from typing import Optional

from .chatparse import CommandAliases
from .protocol import encode_frame, read_frame
from .versegame import Corpus

CONNECT_TIMEOUT_S = 10.0


@dataclass
class BotReport:
    name: str
    sent: dict = field(default_factory=dict)
    notices: int = 0
    snapshots: int = 0
    errors: list = field(default_factory=list)
    outcomes: list = field(default_factory=list)


def _count(d: dict, key: str):
    d[key] = d.get(key, 0) + 1


class _Bot:
    def __init__(self, index: int, n_bots: int, seed: int, host: str, port: int,
                 corpus: Corpus, aliases: CommandAliases, duration_ticks: Optional[int]):
        self.index = index
        self.n_bots = n_bots
        self.name = f"Bot{index:02d}"
        self.rng = random.Random(seed * 7919 + index)
        self.host, self.port = host, port
        self.corpus = corpus
        self.aliases = aliases
        self.duration_ticks = duration_ticks
        self.report = BotReport(self.name)
        self.have_lotus = False
        self.next_action = self.rng.randint(10, 120)
        self._verse_pools: dict[tuple, list] = {}
        self._verse_pos = 0
        self._used_verses: list = []
        self._last_phase = None
        self.viewer_id = None
        self.tick_rate = 30
        self.last_tick = 0

    async def run(self):
        try:
            reader, writer = await asyncio.wait_for(
                asyncio.open_connection(self.host, self.port), CONNECT_TIMEOUT_S)
        except (OSError, asyncio.TimeoutError) as e:
            self.report.errors.append(f"connect: {e}")
            return self.report
        try:
            writer.write(encode_frame({"type": "hello", "v": 1, "name": self.name}))
            await writer.drain()
            while True:
                doc = await read_frame(reader)
                if doc is None:
                    break
                kind = doc.get("type")
                if kind == "snapshot":
                    self.report.snapshots += 1
                    await self._on_snapshot(doc, writer)
                    if (self.duration_ticks is not None
                            and doc.get("tick", 0) >= self.duration_ticks):
                        break
                elif kind == "welcome":
                    self.viewer_id = doc.get("viewer")
                    self.tick_rate = doc.get("tick_rate", 30)
                elif kind == "notice":
                    self.report.notices += 1
                elif kind == "error":
                    self.report.errors.append(doc.get("text", "server error"))
                    break
        except (ConnectionError, asyncio.IncompleteReadError) as e:
            self.report.errors.append(f"io: {e}")
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, asyncio.CancelledError):
                pass
        return self.report

    async def _on_snapshot(self, snap: dict, writer):
        # count notices aimed at everyone or at this viewer
        self.report.notices += sum(
            1 for n in snap.get("notices", ())
            if n.get("target") in ("all", self.viewer_id))
        phase = snap.get("game", {}).get("phase")
        if phase != self._last_phase:
            if phase in ("won", "lost"):
                self.report.outcomes.append(phase)
            self._last_phase = phase
        self.have_lotus = any(
            e.get("kind") == "lotus" and e.get("owner") == self.name
            for e in snap.get("entities", ()))
        tick = snap.get("tick", 0)
        self.last_tick = tick
        while tick >= self.next_action:
            self.next_action += self.rng.randint(120, 360)   # every 4..12 s at 30 Hz
            await self._act(snap, writer)

    async def _act(self, snap: dict, writer):
        game = snap.get("game", {})
        running = game.get("phase") == "running"
        if running and self.rng.random() < 0.75:
            await self._send_comment(writer, self._pick_verse(game), "verse")
            return
        if not self.have_lotus and self.rng.random() < 0.7:
            await self._send_comment(writer, self.aliases.release[0], "release")
            self.have_lotus = True
            return
        roll = self.rng.random()
        if roll < 0.25:
            await self._send_comment(writer, self.aliases.dash[0], "dash")
        elif roll < 0.40:
            target = f"Bot{self.rng.randrange(self.n_bots):02d}"
            await self._send_comment(
                writer, self.aliases.hit[0].replace("<id>", target), "hit")
        elif roll < 0.55:
            await self._send_comment(writer, self.aliases.shine[0], "shine")
        elif roll < 0.75:
            await self._send_comment(writer, self.aliases.feed[0], "feed")
        elif roll < 0.85:
            await self._send_comment(writer, f"what a view ({self.rng.randrange(1000)})",
                                     "chat")
        elif roll < 0.95:
            fen = self.rng.randrange(100, 999)
            await self._send_gift(writer, fen, "gift_small")
        else:
            await self._send_gift(writer, 1500, "gift_story")
            tag = self.aliases.story_hashtags[0]
            await self._send_comment(
                writer, f"{tag} My grandparents met beside this lake. "
                        f"({self.name} #{self.rng.randrange(1000)})", "story")

    def _pick_verse(self, game: dict) -> str:
        topics = tuple(game.get("topics", ()))
        if topics not in self._verse_pools:
            pool = self.corpus.verses_containing(topics)
            self._verse_pools[topics] = pool[self.index::self.n_bots]
            self._verse_pos = 0
        pool = self._verse_pools[topics]
        roll = self.rng.random()
        if roll < 0.1 and self._used_verses:
            return self._used_verses[self.rng.randrange(len(self._used_verses))]
        if roll < 0.2 or self._verse_pos >= len(pool):
            return f"即兴的歪诗一句 {self.rng.randrange(10_000)}"
        verse = pool[self._verse_pos]
        self._verse_pos += 1
        self._used_verses.append(verse)
        return verse

    async def _send_comment(self, writer, text: str, feature: str):
        writer.write(encode_frame({"type": "comment", "v": 1, "text": text}))
        await writer.drain()
        _count(self.report.sent, feature)

    async def _send_gift(self, writer, fen: int, feature: str):
        writer.write(encode_frame(
            {"type": "gift", "v": 1, "amount": f"{fen // 100}.{fen % 100:02d}"}))
        await writer.drain()
        _count(self.report.sent, feature)


async def simulate_audience(host: str, port: int, n_bots: int, seed: int,
                            corpus: Corpus, aliases: CommandAliases,
                            duration_ticks: Optional[int] = None) -> dict:
    """Drive n scripted bots against a running server; returns the metrics report."""
    bots = [_Bot(i, n_bots, seed, host, port, corpus, aliases, duration_ticks)
            for i in range(n_bots)]
    reports = await asyncio.gather(*(b.run() for b in bots))
    sent_totals: dict[str, int] = {}
    total_events = 0
    for r in reports:
        for k, v in r.sent.items():
            sent_totals[k] = sent_totals.get(k, 0) + v
            total_events += v
    last_tick = max((b.last_tick for b in bots), default=0)
    rate = bots[0].tick_rate if bots else 30
    sim_seconds = last_tick / rate if last_tick else 0.0
    outcomes = reports[0].outcomes if reports else []
    failed = [r.name for r in reports if any(e.startswith("connect") for e in r.errors)]
    return {
        "bots": n_bots,
        "seed": seed,
        "events_sent": dict(sorted(sent_totals.items())),
        "events_total": total_events,
        "events_per_sim_sec": round(total_events / sim_seconds, 3) if sim_seconds else 0.0,
        "simulated_seconds": round(sim_seconds, 1),
        "notices_received": sum(r.notices for r in reports),
        "snapshots_received": sum(r.snapshots for r in reports),
        "game_outcomes": outcomes,
        "connect_failures": failed,
        "errors": {r.name: r.errors for r in reports if r.errors},
        "note": "bot command mix is seed-deterministic; server-side arrival "
                "interleaving is captured by the session replay log",
    }
