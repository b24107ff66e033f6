"""Deterministic session core: event dispatch, tick stepping, state hashing,
and the replay log.

The core is the piece both the live server and `mrsls replay` share.  It owns
the simulation, the verse game, and the economy; events reach it in seq order
already stamped with a timestamp, and each event is applied at the first tick
whose boundary is at or past that timestamp.  Replaying a recorded event log
therefore reproduces the live tick stream bit for bit, which the per-tick
hash chain certifies.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from . import chatparse, economy as economy_mod, entitysim, versegame
from .chatparse import (ChatEvent, CommandAliases, DashLotus, FeedFish, HitLotus, Plain,
                        ReleaseLotus, ShineLotus, Story, Verse)
from .economy import Economy, SpawnFirework, SpawnUmbrella
from .entitysim import Boat, Cue, Notice, Simulation
from .scenegeo import SceneConfig
from .versegame import Corpus, VerseGame

PROTOCOL_VERSION = 1


def apply_tick_for(ts_ms: int, tick_rate: int) -> int:
    """First tick whose boundary time is >= the timestamp."""
    return (ts_ms * tick_rate + 999) // 1000


def tick_start_ms(tick: int, tick_rate: int) -> int:
    return (tick * 1000) // tick_rate


@dataclass(frozen=True)
class ScheduledRound:
    at_tick: int
    topics: tuple[str, ...]
    duration_ticks: int
    threshold: Optional[int] = None


@dataclass
class StepResult:
    tick: int                   # tick counter after the step
    effects: list
    chat: list                  # (display_name, text) comment relay


class SessionCore:
    def __init__(self, scene: SceneConfig, corpus: Corpus, aliases: CommandAliases,
                 seed: int, tick_rate: int = 30, threshold: Optional[int] = None):
        self.scene = scene
        self.corpus = corpus
        self.aliases = aliases
        self.seed = seed
        self.tick_rate = tick_rate
        self.sim = Simulation(scene, seed=seed, tick_rate=tick_rate)

        srv = scene.server
        self.threshold = threshold if threshold is not None else int(srv.get("threshold", 20))
        if self.threshold < 1:
            raise ValueError("threshold must be >= 1")
        self.game = VerseGame(threshold=self.threshold)
        self.economy = Economy(
            tick_rate,
            story_min_fen=int(srv.get("story_min_fen", economy_mod.DEFAULT_STORY_MIN_FEN)),
            entitlement_ttl_s=float(srv.get("entitlement_ttl_s",
                                            economy_mod.DEFAULT_ENTITLEMENT_TTL_S)),
        )
        self.schedule = self._parse_schedule(srv.get("game_schedule", []))
        self._schedule_pos = 0
        self.display_names: dict[str, str] = {}
        self.last_seq = 0
        self._game_reset_at: Optional[int] = None
        self._boat_ticks = max(1, round(scene.physics.boat_duration_s * tick_rate))

    def _parse_schedule(self, raw) -> list[ScheduledRound]:
        rounds = []
        for i, entry in enumerate(raw):
            try:
                topics = tuple(str(t) for t in entry["topics"])
                at_tick = round(float(entry["at_s"]) * self.tick_rate)
                duration = round(float(entry.get("duration_s", 300.0)) * self.tick_rate)
                thr = entry.get("threshold")
                rounds.append(ScheduledRound(at_tick, topics, duration,
                                             None if thr is None else int(thr)))
            except (KeyError, TypeError, ValueError) as e:
                raise ValueError(f"bad game_schedule entry #{i}: {e}") from e
        return sorted(rounds, key=lambda r: r.at_tick)

    @property
    def tick(self) -> int:
        return self.sim.tick

    # -- event dispatch ----------------------------------------------------

    def apply_event(self, ev: ChatEvent) -> tuple[list, list]:
        """Apply one event at the current tick; returns (effects, chat_lines)."""
        if ev.seq <= self.last_seq:
            raise ValueError(f"event seq {ev.seq} is not increasing (last {self.last_seq})")
        self.last_seq = ev.seq
        self.display_names[ev.viewer_id] = ev.display_name
        now = self.sim.tick
        if ev.kind == "gift":
            return self._apply_gift(ev, now), []
        text = ev.text or ""
        cmd = chatparse.parse_comment(text, self.game.phase == versegame.RUNNING,
                                      self.aliases)
        chat = [(ev.display_name, chatparse.normalize_text(text))]
        effects: list = []
        if isinstance(cmd, ReleaseLotus):
            effects = self.sim.spawn_lotus(ev.viewer_id, ev.display_name)
        elif isinstance(cmd, DashLotus):
            effects = self.sim.dash_lotus(ev.viewer_id)
        elif isinstance(cmd, HitLotus):
            effects = self.sim.dash_lotus(ev.viewer_id, cmd.target)
        elif isinstance(cmd, ShineLotus):
            effects = self.sim.shine_lotus(ev.viewer_id)
        elif isinstance(cmd, FeedFish):
            effects = self.sim.feed_fish(ev.display_name)
        elif isinstance(cmd, Story):
            effects = self._apply_story(ev.viewer_id, ev.display_name, cmd.text, now)
        elif isinstance(cmd, Verse):
            effects = self._apply_verse(ev.viewer_id, ev.display_name, cmd.text, now)
        else:
            assert isinstance(cmd, Plain)
        return effects, chat

    def _apply_gift(self, ev: ChatEvent, now: int) -> list:
        effects = self.economy.on_gift(ev.viewer_id, ev.display_name,
                                       ev.amount_fen, now)
        out = []
        for eff in effects:
            out.extend(self._expand_economy_effect(eff))
        # a qualifying gift whose message is already a hashtagged story flies
        # the umbrella immediately
        if ev.text and ev.amount_fen >= self.economy.story_min_fen:
            cmd = chatparse.parse_comment(ev.text, False, self.aliases)
            if isinstance(cmd, Story):
                for eff in self.economy.on_story(ev.viewer_id, ev.display_name,
                                                 cmd.text, now):
                    out.extend(self._expand_economy_effect(eff))
        return out

    def _apply_story(self, viewer_id: str, name: str, text: str, now: int) -> list:
        out = []
        for eff in self.economy.on_story(viewer_id, name, text, now):
            out.extend(self._expand_economy_effect(eff))
        return out

    def _expand_economy_effect(self, eff) -> list:
        if isinstance(eff, SpawnFirework):
            return self.sim.spawn_firework(eff.trigger_name)
        if isinstance(eff, SpawnUmbrella):
            return self.sim.spawn_umbrella(eff.trigger_name, eff.story)
        return [eff]

    def _apply_verse(self, viewer_id: str, name: str, text: str, now: int) -> list:
        result = versegame.submit_verse(self.game, self.corpus, viewer_id, text, now)
        if result.accepted:
            count = len(self.game.accepted)
            effects = [Notice("all", f"{name} recited a verse! "
                                     f"({count}/{self.game.threshold} unique)")]
            if versegame.should_finish(self.game, now):
                effects.extend(self._finish_round(now))
            return effects
        reasons = {
            versegame.NO_TOPIC_TOKEN:
                f"The verse must contain “{self.game.topic_display}”.",
            versegame.NOT_IN_CORPUS: "That line is not in the verse corpus.",
            versegame.DUPLICATE: "Someone already recited that verse this round.",
            versegame.GAME_OVER: "The verse round has ended.",
        }
        return [Notice(viewer_id, reasons[result.reason])]

    def _finish_round(self, now: int) -> list:
        phase, top3, notices = versegame.finish_game(self.game, now, self.display_names)
        effects = list(notices)
        effects.extend(self.sim.run_boat(top3))
        self._game_reset_at = now + self._boat_ticks
        return effects

    # -- stepping ----------------------------------------------------------

    def step(self, events: Iterable[ChatEvent] = ()) -> StepResult:
        """Apply due events, advance one tick, and collect effects."""
        now = self.sim.tick
        effects: list = []
        chat: list = []
        for ev in events:
            ev_effects, ev_chat = self.apply_event(ev)
            effects.extend(ev_effects)
            chat.extend(ev_chat)
        # scripted round schedule
        while (self._schedule_pos < len(self.schedule)
               and self.schedule[self._schedule_pos].at_tick <= now
               and self.game.phase == versegame.IDLE):
            rnd = self.schedule[self._schedule_pos]
            self._schedule_pos += 1
            if rnd.threshold is not None:
                self.game.threshold = rnd.threshold
            else:
                self.game.threshold = self.threshold
            effects.extend(versegame.start_game(self.game, rnd.topics, now,
                                                rnd.duration_ticks))
        if versegame.should_finish(self.game, now):
            effects.extend(self._finish_round(now))
        if self._game_reset_at is not None and now >= self._game_reset_at:
            if self.game.phase in (versegame.WON, versegame.LOST):
                versegame.reset_game(self.game)
            self._game_reset_at = None
        effects.extend(self.sim.step())
        return StepResult(self.sim.tick, effects, chat)

    # -- canonical state hash ----------------------------------------------

    def state_hash(self) -> bytes:
        h = hashlib.sha256()
        up = h.update

        def ps(s: str):
            b = s.encode("utf-8")
            up(struct.pack("<I", len(b)))
            up(b)

        sim = self.sim
        # session parameters are part of the certified identity: a replay with
        # a different seed must mismatch even if no event ever drew randomness
        up(struct.pack("<qqq", self.seed, self.tick_rate, self.threshold))
        up(struct.pack("<qq", sim.tick, sim._next_id))
        for eid in sorted(sim.entities):
            e = sim.entities[eid]
            if isinstance(e, entitysim.Lotus):
                up(struct.pack("<BQ", 1, e.id))
                ps(e.owner); ps(e.owner_name); ps(e.color)
                up(struct.pack("<ddddd", e.x, e.y, e.vx, e.vy, e.radius))
                up(struct.pack("<qqq",
                               -1 if e.dash_until is None else e.dash_until,
                               -1 if e.shining_until is None else e.shining_until,
                               e.last_cmd_tick))
            elif isinstance(e, entitysim.Fish):
                up(struct.pack("<BQ", 2, e.id)); ps(e.trigger_name)
                up(struct.pack("<ddd", e.x, e.y, e.phase))
            elif isinstance(e, entitysim.Firework):
                up(struct.pack("<BQ", 3, e.id)); ps(e.trigger_name)
                up(struct.pack("<ddd", e.u, e.v, e.phase))
            elif isinstance(e, entitysim.Umbrella):
                up(struct.pack("<BQ", 4, e.id)); ps(e.trigger_name); ps(e.story)
                up(struct.pack("<ddd", e.u, e.v, e.phase))
            elif isinstance(e, Boat):
                up(struct.pack("<BQ", 5, e.id))
                up(struct.pack("<I", len(e.top3)))
                for name, score in e.top3:
                    ps(name); up(struct.pack("<q", score))
                up(struct.pack("<d", e.phase))

        g = self.game
        ps(g.phase); ps("\x1f".join(g.topics)); ps(g.topic_display)
        up(struct.pack("<qqqq", g.started_at, g.duration_ticks, g.expires_at,
                       g.threshold))
        up(struct.pack("<I", len(g.accepted)))
        for verse, viewer, tick in g.accepted:
            ps(verse); ps(viewer); up(struct.pack("<q", tick))
        for viewer in sorted(g.scores):
            ps(viewer); up(struct.pack("<q", g.scores[viewer]))
        for viewer in sorted(g.first_accept):
            ps(viewer); up(struct.pack("<qq", *g.first_accept[viewer]))

        eco = self.economy
        up(struct.pack("<qqq", eco.story_min_fen, eco.entitlement_ttl_ticks,
                       len(eco.ledger)))
        up(self._ledger_digest())
        for viewer in sorted(eco.entitlements):
            ent = eco.entitlements[viewer]
            ps(viewer)
            up(struct.pack("<qqB", ent.granted_at, ent.expires_at, ent.consumed))
        for viewer in sorted(self.display_names):
            ps(viewer); ps(self.display_names[viewer])
        return h.digest()

    def _ledger_digest(self) -> bytes:
        # fold the append-only ledger incrementally; rehashing the whole list
        # per tick would make long sessions quadratic
        eco = self.economy
        if not hasattr(self, "_ledger_done"):
            self._ledger_done = 0
            self._ledger_hash = hashlib.sha256(b"ledger").digest()
        while self._ledger_done < len(eco.ledger):
            r = eco.ledger[self._ledger_done]
            data = json.dumps([r.viewer_id, r.display_name, r.amount_fen, r.tick,
                               r.effect], ensure_ascii=False).encode("utf-8")
            self._ledger_hash = hashlib.sha256(self._ledger_hash + data).digest()
            self._ledger_done += 1
        return self._ledger_hash


# ---------------------------------------------------------------------------
# replay log


class ReplayError(ValueError):
    """Raised when a replay log is malformed or fails verification."""


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class ReplayWriter:
    """Line-delimited event log: one header, event records, one end record."""

    def __init__(self, fp, header: dict):
        self._fp = fp
        doc = {"type": "header", "v": PROTOCOL_VERSION, **header}
        self._write(doc)

    def _write(self, doc: dict):
        self._fp.write(json.dumps(doc, ensure_ascii=False, separators=(",", ":")))
        self._fp.write("\n")

    def event(self, ev: ChatEvent):
        doc = {"type": "event", "seq": ev.seq, "ts": ev.ts_ms,
               "viewer": ev.viewer_id, "name": ev.display_name, "kind": ev.kind}
        if ev.kind == "gift":
            doc["amount_fen"] = ev.amount_fen
            if ev.text:
                doc["text"] = ev.text
        else:
            doc["text"] = ev.text or ""
        self._write(doc)

    def end(self, ticks: int, chain_hex: str):
        self._write({"type": "end", "ticks": ticks, "chain": chain_hex})
        self._fp.flush()


@dataclass
class ReplayLog:
    header: dict
    events: list              # ChatEvent, seq order
    ticks: Optional[int]      # None when the log has no end record
    chain: Optional[str]


def read_replay_log(path) -> ReplayLog:
    p = Path(path)
    try:
        lines = p.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ReplayError(f"cannot read replay log {p}: {e}") from e
    header = None
    events: list[ChatEvent] = []
    ticks = chain = None
    last_seq = 0
    last_ts = 0
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as e:
            raise ReplayError(f"{p}:{lineno}: bad JSON: {e}") from e
        kind = doc.get("type")
        if kind == "header":
            if header is not None:
                raise ReplayError(f"{p}:{lineno}: duplicate header")
            header = doc
        elif kind == "event":
            if header is None:
                raise ReplayError(f"{p}:{lineno}: event before header")
            try:
                ev = ChatEvent(seq=doc["seq"], ts_ms=doc["ts"], viewer_id=doc["viewer"],
                               display_name=doc["name"], kind=doc["kind"],
                               text=doc.get("text"), amount_fen=doc.get("amount_fen"))
            except (KeyError, ValueError) as e:
                raise ReplayError(f"{p}:{lineno}: bad event record: {e}") from e
            if ev.seq <= last_seq:
                raise ReplayError(f"{p}:{lineno}: seq {ev.seq} not increasing")
            if ev.ts_ms < last_ts:
                raise ReplayError(f"{p}:{lineno}: timestamp went backwards")
            last_seq, last_ts = ev.seq, ev.ts_ms
            events.append(ev)
        elif kind == "end":
            ticks, chain = int(doc["ticks"]), doc.get("chain")
        else:
            raise ReplayError(f"{p}:{lineno}: unknown record type {kind!r}")
    if header is None:
        raise ReplayError(f"{p}: missing header record")
    return ReplayLog(header, events, ticks, chain)


class HashChain:
    """Per-tick state hash folded into one running digest."""

    def __init__(self):
        self.value = hashlib.sha256(b"mrsls-chain").digest()
        self.ticks = 0

    def add(self, tick_hash: bytes) -> bytes:
        self.value = hashlib.sha256(self.value + tick_hash).digest()
        self.ticks += 1
        return self.value

    @property
    def hex(self) -> str:
        return self.value.hex()


@dataclass
class ReplayResult:
    ticks: int
    chain_hex: str
    recorded_chain_hex: Optional[str]
    tick_hashes: Optional[list] = None

    @property
    def matches(self) -> Optional[bool]:
        if self.recorded_chain_hex is None:
            return None
        return self.chain_hex == self.recorded_chain_hex


def run_replay(log: ReplayLog, scene: SceneConfig, corpus: Corpus,
               aliases: CommandAliases, seed: Optional[int] = None,
               tick_rate: Optional[int] = None, threshold: Optional[int] = None,
               keep_tick_hashes: bool = False) -> ReplayResult:
    """Re-run a recorded session and recompute its per-tick hash chain."""
    seed = log.header.get("seed") if seed is None else seed
    tick_rate = log.header.get("tick_rate", 30) if tick_rate is None else tick_rate
    threshold = log.header.get("threshold") if threshold is None else threshold
    if seed is None:
        raise ReplayError("replay needs a seed (none recorded, none given)")
    total_ticks = log.ticks
    if total_ticks is None:
        # truncated log: replay through the last applied event
        total_ticks = max((apply_tick_for(ev.ts_ms, tick_rate) for ev in log.events),
                          default=0) + 1
    core = SessionCore(scene, corpus, aliases, seed=seed, tick_rate=tick_rate,
                       threshold=threshold)
    chain = HashChain()
    hashes = [] if keep_tick_hashes else None
    pending = list(log.events)
    pos = 0
    batch: list[ChatEvent] = []
    for t in range(total_ticks):
        batch.clear()
        while pos < len(pending) and apply_tick_for(pending[pos].ts_ms, tick_rate) <= t:
            batch.append(pending[pos])
            pos += 1
        core.step(batch)
        digest = core.state_hash()
        chain.add(digest)
        if hashes is not None:
            hashes.append(digest.hex())
    return ReplayResult(total_ticks, chain.hex, log.chain, hashes)


def derive_ledger(log: ReplayLog, tick_rate: Optional[int] = None,
                  story_min_fen: Optional[int] = None) -> list:
    """Rebuild the gift ledger from a replay log for post-session accounting."""
    rate = tick_rate or log.header.get("tick_rate", 30)
    eco = Economy(rate, story_min_fen=story_min_fen
                  or log.header.get("story_min_fen", economy_mod.DEFAULT_STORY_MIN_FEN))
    for ev in log.events:
        if ev.kind == "gift":
            eco.on_gift(ev.viewer_id, ev.display_name, ev.amount_fen,
                        apply_tick_for(ev.ts_ms, rate))
    return eco.ledger
