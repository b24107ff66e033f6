"""Gift handling: tier thresholds, story entitlements, and the session ledger.

Currency is integer fen (1/100 CNY) throughout so ledger arithmetic is exact.
A gift under the story threshold buys a firework; at or above it, the viewer
earns one entitlement to share a highlighted story.  Re-gifting replaces an
unconsumed entitlement rather than stacking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .chatparse import FireworkEffect, StoryEntitlement, classify_gift
from .entitysim import Notice

DEFAULT_STORY_MIN_FEN = 1000           # 10.00 CNY
DEFAULT_ENTITLEMENT_TTL_S = 600        # grants lapse after 10 minutes


def fen_str(amount_fen: int) -> str:
    sign = "-" if amount_fen < 0 else ""
    amount_fen = abs(amount_fen)
    return f"{sign}{amount_fen // 100}.{amount_fen % 100:02d}"


@dataclass
class Entitlement:
    viewer_id: str
    granted_at: int
    expires_at: int
    consumed: bool = False


@dataclass(frozen=True)
class LedgerRecord:
    viewer_id: str
    display_name: str
    amount_fen: int
    tick: int
    effect: str            # "firework" | "story_entitlement" | "rejected"


@dataclass(frozen=True)
class SpawnFirework:
    trigger_name: str


@dataclass(frozen=True)
class SpawnUmbrella:
    trigger_name: str
    story: str


class Economy:
    def __init__(self, tick_rate: int, story_min_fen: int = DEFAULT_STORY_MIN_FEN,
                 entitlement_ttl_s: float = DEFAULT_ENTITLEMENT_TTL_S):
        self.story_min_fen = story_min_fen
        self.entitlement_ttl_ticks = round(entitlement_ttl_s * tick_rate)
        self.ledger: list[LedgerRecord] = []
        self.entitlements: dict[str, Entitlement] = {}

    def total_fen(self, viewer_id: Optional[str] = None) -> int:
        return sum(r.amount_fen for r in self.ledger
                   if r.effect != "rejected"
                   and (viewer_id is None or r.viewer_id == viewer_id))

    def _usable(self, ent: Optional[Entitlement], now: int) -> bool:
        return ent is not None and not ent.consumed and now < ent.expires_at

    def on_gift(self, viewer_id: str, display_name: str, amount_fen: int,
                now: int) -> list:
        """Record the gift and return its effects (sim spawns + notices)."""
        if amount_fen <= 0:
            self.ledger.append(LedgerRecord(viewer_id, display_name, amount_fen,
                                            now, "rejected"))
            return [Notice(viewer_id, "Gift amount must be positive.")]
        effect = classify_gift(amount_fen, story_min_fen=self.story_min_fen)
        if isinstance(effect, FireworkEffect):
            self.ledger.append(LedgerRecord(viewer_id, display_name, amount_fen,
                                            now, "firework"))
            return [SpawnFirework(display_name)]
        assert isinstance(effect, StoryEntitlement)
        self.ledger.append(LedgerRecord(viewer_id, display_name, amount_fen,
                                        now, "story_entitlement"))
        self.entitlements[viewer_id] = Entitlement(
            viewer_id, now, now + self.entitlement_ttl_ticks)
        return [Notice(viewer_id,
                       f"Thank you for the {fen_str(amount_fen)} CNY gift! "
                       f"Share one story with the story hashtag to fly it on "
                       f"an umbrella.")]

    def on_story(self, viewer_id: str, display_name: str, text: str, now: int) -> list:
        """Consume a valid entitlement into an umbrella, or explain the rule."""
        ent = self.entitlements.get(viewer_id)
        if not self._usable(ent, now):
            return [Notice(viewer_id,
                           f"Stories ride the umbrella after a gift of "
                           f"{fen_str(self.story_min_fen)} CNY or more.")]
        ent.consumed = True
        return [SpawnUmbrella(display_name, text)]
