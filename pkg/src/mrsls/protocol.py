"""Wire protocol: JSON message schemas and socket framing.

Native transport is length-prefixed UTF-8 JSON over TCP (4-byte big-endian
length, then the document).  The same documents travel as text frames over
the WebSocket endpoint for browser clients.  Field names are pinned by
docs/protocol.md; every message carries a schema version ``v``.
"""

from __future__ import annotations

import asyncio
import json
import struct
from typing import Optional

from . import scenegeo, versegame
from .entitysim import (Boat, CollisionEvent, Cue, Despawned, Fish, Firework, Lotus,
                        Notice, Umbrella)
from .session import SessionCore, tick_start_ms

PROTOCOL_VERSION = 1
MAX_FRAME_IN = 64 * 1024
MAX_FRAME_OUT = 16 * 1024 * 1024

# depth hints for image-space entities: fireworks sit far behind the lake,
# umbrellas float in front of everything
DEPTH_FIREWORK = 1.0e9
DEPTH_UMBRELLA = 0.0


class ProtocolError(ValueError):
    pass


def encode_doc(doc: dict) -> bytes:
    return json.dumps(doc, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def decode_doc(data) -> dict:
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"bad JSON frame: {e}") from e
    if not isinstance(doc, dict) or not isinstance(doc.get("type"), str):
        raise ProtocolError("frame must be an object with a string 'type'")
    return doc


def encode_frame(doc: dict) -> bytes:
    body = encode_doc(doc)
    if len(body) > MAX_FRAME_OUT:
        raise ProtocolError("frame too large")
    return struct.pack(">I", len(body)) + body


async def read_frame(reader: asyncio.StreamReader,
                     max_size: int = MAX_FRAME_IN) -> Optional[dict]:
    """Read one length-prefixed frame; None on clean EOF."""
    try:
        head = await reader.readexactly(4)
    except (asyncio.IncompleteReadError, ConnectionError):
        return None
    (length,) = struct.unpack(">I", head)
    if length > max_size:
        raise ProtocolError(f"frame of {length} bytes exceeds the {max_size} limit")
    try:
        body = await reader.readexactly(length)
    except (asyncio.IncompleteReadError, ConnectionError):
        return None
    return decode_doc(body)


# ---------------------------------------------------------------------------
# snapshot building


def build_snapshot(core: SessionCore, seq: int, session_id: str,
                   notices: list, chat: list, cues: list) -> dict:
    """Authoritative scene state for one broadcast.

    Entity image positions are the exact pinhole projection of the simulation
    world positions; entities that do not project (behind the camera in a
    miswired scene) are omitted.
    """
    sim = core.sim
    cam = core.scene.camera
    entities = []
    for eid in sorted(sim.entities):
        e = sim.entities[eid]
        if isinstance(e, Lotus):
            uvz = scenegeo.project_with_depth(cam, (e.x, e.y, 0.0))
            if uvz is None:
                continue
            entities.append({
                "id": e.id, "kind": "lotus", "owner": e.owner_name,
                "pos": [uvz[0], uvz[1]], "depth": uvz[2], "color": e.color,
                "shining": sim.is_shining(e), "dashing": e.dash_until is not None,
            })
        elif isinstance(e, Fish):
            uvz = scenegeo.project_with_depth(cam, (e.x, e.y, 0.0))
            if uvz is None:
                continue
            entities.append({
                "id": e.id, "kind": "fish", "owner": e.trigger_name,
                "pos": [uvz[0], uvz[1]], "depth": uvz[2], "phase": e.phase,
            })
        elif isinstance(e, Firework):
            entities.append({
                "id": e.id, "kind": "firework", "owner": e.trigger_name,
                "pos": [e.u, e.v], "depth": DEPTH_FIREWORK, "phase": e.phase,
            })
        elif isinstance(e, Umbrella):
            entities.append({
                "id": e.id, "kind": "umbrella", "owner": e.trigger_name,
                "pos": [e.u, e.v], "depth": DEPTH_UMBRELLA, "phase": e.phase,
                "story": e.story,
            })
        elif isinstance(e, Boat):
            p0, p1 = core.scene.physics.boat_path
            x = p0[0] + (p1[0] - p0[0]) * e.phase
            y = p0[1] + (p1[1] - p0[1]) * e.phase
            uvz = scenegeo.project_with_depth(cam, (x, y, 0.0))
            if uvz is None:
                continue
            entities.append({
                "id": e.id, "kind": "boat", "owner": "",
                "pos": [uvz[0], uvz[1]], "depth": uvz[2], "phase": e.phase,
                "top3": [[n, s] for n, s in e.top3],
            })

    game = core.game
    remaining = game.remaining_ticks(sim.tick)
    return {
        "type": "snapshot",
        "v": PROTOCOL_VERSION,
        "seq": seq,
        "tick": sim.tick,
        "session": session_id,
        "time_ms": tick_start_ms(sim.tick, core.tick_rate),
        "entities": entities,
        "notices": [{"target": n.target, "text": n.text} for n in notices],
        "chat": [{"name": name, "text": text} for name, text in chat],
        "cues": [{"kind": c.kind, "entity": c.entity_id} for c in cues],
        "scoreboard": [[name, score]
                       for name, score in versegame.scoreboard(game, core.display_names)],
        "game": {
            "phase": game.phase,
            "topic": game.topic_display,
            "topics": list(game.topics),
            "accepted": len(game.accepted),
            "threshold": game.threshold,
            "remaining_s": remaining / core.tick_rate,
        },
    }


def split_effects(effects: list) -> tuple[list, list]:
    """Split step effects into broadcastable (notices, cues)."""
    notices = []
    cues = []
    for eff in effects:
        if isinstance(eff, Notice):
            notices.append(eff)
        elif isinstance(eff, Cue):
            cues.append(eff)
        elif isinstance(eff, Despawned):
            pass                         # already carries a notice when user-visible
        elif isinstance(eff, CollisionEvent):
            pass                         # surfaced as a "collide" cue
    return notices, cues


def build_welcome(core: SessionCore, session_id: str, viewer_id: str,
                  background: str, instructions: list) -> dict:
    """Session parameters a client needs before the first snapshot.

    Carries every rule constant the client must render (gift tiers, command
    phrases, limits) so client bundles stay rule-free.
    """
    w, h = core.scene.camera.image_size
    return {
        "type": "welcome",
        "v": PROTOCOL_VERSION,
        "session": session_id,
        "viewer": viewer_id,
        "tick_rate": core.tick_rate,
        "image_size": [w, h],
        "background": background,
        "instructions": instructions,
        "story_min_fen": core.economy.story_min_fen,
        "story_hashtag": core.aliases.story_hashtags[0],
        "gift_presets_fen": [100, 500, 1500],
        "umbrella_text_max": core.scene.physics.umbrella_text_max,
    }


def default_instructions(aliases) -> list:
    """On-screen instruction lines, one per feature, from the alias table."""
    return [
        f"• {aliases.release[0]}",
        f"• {aliases.dash[0]}",
        f"• {aliases.hit[0].replace('<id>', '<name>')}",
        f"• {aliases.shine[0]}",
        f"• {aliases.feed[0]}",
        f"• {aliases.story_hashtags[0]} <your story> (after a qualifying gift)",
    ]
