"""Classify raw viewer comments and gifts into commands.

All matching is driven by an alias table so the same grammar serves the
English defaults and the Chinese deployment aliases.  Matching rules:

  - input is trimmed and internal whitespace runs collapse to one space
  - whole-phrase aliases match case-insensitively (CJK text has no case,
    so non-Latin aliases effectively match exactly)
  - the hit command is a template with an ``<id>`` slot; everything between
    the surrounding keywords is captured as the target display name
  - a leading story hashtag turns the rest of the comment into a story
  - anything else is a verse while a verse game is running, plain chat
    otherwise; parsing never fails

Parsing is pure and stateless: safe from any thread.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Optional, Union


# ---------------------------------------------------------------------------
# events and commands


@dataclass(frozen=True)
class ChatEvent:
    """One timestamped comment or gift from an identified viewer."""

    seq: int
    ts_ms: int
    viewer_id: str
    display_name: str
    kind: str                      # "comment" | "gift"
    text: Optional[str] = None     # comment body, or message attached to a gift
    amount_fen: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("comment", "gift"):
            raise ValueError(f"bad event kind: {self.kind!r}")
        if self.kind == "gift" and (self.amount_fen is None or self.amount_fen <= 0):
            raise ValueError("gift amount must be positive")


@dataclass(frozen=True)
class ReleaseLotus:
    pass


@dataclass(frozen=True)
class DashLotus:
    pass


@dataclass(frozen=True)
class HitLotus:
    target: str


@dataclass(frozen=True)
class ShineLotus:
    pass


@dataclass(frozen=True)
class FeedFish:
    pass


@dataclass(frozen=True)
class Story:
    text: str


@dataclass(frozen=True)
class Verse:
    text: str


@dataclass(frozen=True)
class Plain:
    text: str


Command = Union[ReleaseLotus, DashLotus, HitLotus, ShineLotus, FeedFish, Story, Verse, Plain]


# ---------------------------------------------------------------------------
# alias table

_WS_RUN = re.compile(r"\s+")


def normalize_text(text: str) -> str:
    """Trim and collapse internal whitespace runs to single spaces."""
    return _WS_RUN.sub(" ", text.strip())


@dataclass(frozen=True)
class CommandAliases:
    release: tuple[str, ...]
    dash: tuple[str, ...]
    hit: tuple[str, ...]           # templates containing the <id> slot
    shine: tuple[str, ...]
    feed: tuple[str, ...]
    story_hashtags: tuple[str, ...]

    def __post_init__(self):
        for group in (self.release, self.dash, self.hit, self.shine, self.feed,
                      self.story_hashtags):
            if not group:
                raise AliasError("every command needs at least one alias")
        for tpl in self.hit:
            prefix, _, _ = tpl.partition("<id>")
            if "<id>" not in tpl or not prefix.strip():
                raise AliasError(f"hit alias needs a non-leading <id> slot: {tpl!r}")

    def hit_patterns(self):
        pats = []
        for tpl in self.hit:
            prefix, _, suffix = tpl.partition("<id>")
            pats.append(re.compile(
                re.escape(prefix) + r"(.+?)" + re.escape(suffix) + r"\Z",
                re.IGNORECASE | re.DOTALL,
            ))
        return tuple(pats)


class AliasError(ValueError):
    """Raised when an alias table file or entry is invalid."""


DEFAULT_ALIASES = CommandAliases(
    release=("release lotus", "放莲花"),
    dash=("dash my lotus", "莲花冲刺"),
    hit=("hit <id> with my lotus", "用莲花撞<id>"),
    shine=("shine my lotus", "莲花发光"),
    feed=("feed fish", "喂鱼"),
    story_hashtags=("#MyStory", "#我的故事"),
)

_ALIAS_KEYS = {
    "release_lotus": "release",
    "dash_lotus": "dash",
    "hit_lotus": "hit",
    "shine_lotus": "shine",
    "feed_fish": "feed",
    "story_hashtag": "story_hashtags",
}


def load_aliases(path) -> CommandAliases:
    """Load an alias table from a UTF-8 ``key = phrase`` file.

    Keys may repeat to declare several aliases for one command.  Blank lines
    and ``#`` comment lines are skipped (a value may still start with ``#``,
    as the story hashtag does).  Raises AliasError with line numbers on
    malformed input.
    """
    groups: dict[str, list[str]] = {v: [] for v in _ALIAS_KEYS.values()}
    errors = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), normalize_text(value)
        if not sep or not value:
            errors.append(f"line {lineno}: expected 'key = phrase'")
            continue
        if key not in _ALIAS_KEYS:
            errors.append(f"line {lineno}: unknown command key {key!r}")
            continue
        groups[_ALIAS_KEYS[key]].append(value)
    if errors:
        raise AliasError("bad alias table: " + "; ".join(errors))
    try:
        return CommandAliases(**{k: tuple(v) for k, v in groups.items()})
    except AliasError as e:
        raise AliasError(f"bad alias table {path}: {e}") from e


# ---------------------------------------------------------------------------
# parsing


def parse_comment(text: str, game_active: bool,
                  aliases: CommandAliases = DEFAULT_ALIASES) -> Command:
    """Map arbitrary comment text to exactly one command; never fails.

    Payload-carrying commands (story, verse, plain, hit target) carry the
    whitespace-normalized text, which makes parsing idempotent under
    normalization.
    """
    norm = normalize_text(text)
    folded = norm.casefold()

    for tag in aliases.story_hashtags:
        tf = tag.casefold()
        if folded == tf:
            return Story("")
        if folded.startswith(tf + " "):
            return Story(norm[len(tag) + 1:].strip())

    for group, cmd in ((aliases.release, ReleaseLotus), (aliases.dash, DashLotus),
                       (aliases.shine, ShineLotus), (aliases.feed, FeedFish)):
        for alias in group:
            if folded == alias.casefold():
                return cmd()

    for pat in aliases.hit_patterns():
        m = pat.match(norm)
        if m:
            target = m.group(1).strip()
            if target:
                return HitLotus(target)

    if game_active:
        return Verse(norm)
    return Plain(norm)


# ---------------------------------------------------------------------------
# gifts


@dataclass(frozen=True)
class FireworkEffect:
    pass


@dataclass(frozen=True)
class StoryEntitlement:
    # a story message attached to the qualifying gift itself, if any
    story_text: Optional[str] = None


GiftEffect = Union[FireworkEffect, StoryEntitlement]

DEFAULT_STORY_MIN_FEN = 1000  # 10.00 CNY


def parse_cny(amount) -> int:
    """Convert a CNY amount (str/int/float/Decimal) to integer fen.

    Raises ValueError for non-finite values or more than 0.01 precision.
    """
    try:
        dec = Decimal(str(amount))
    except InvalidOperation as e:
        raise ValueError(f"bad currency amount: {amount!r}") from e
    if not dec.is_finite():
        raise ValueError(f"bad currency amount: {amount!r}")
    fen = dec.scaleb(2)
    if fen != fen.to_integral_value():
        raise ValueError(f"amount finer than 0.01 CNY: {amount!r}")
    return int(fen)


def classify_gift(amount_fen: int, pending_text: Optional[str] = None,
                  story_min_fen: int = DEFAULT_STORY_MIN_FEN,
                  aliases: CommandAliases = DEFAULT_ALIASES) -> GiftEffect:
    """Map a gift to its tier effect.

    Below the story threshold the gift buys a firework; at or above it, the
    viewer earns a story entitlement.  A qualifying gift whose attached
    message already starts with the story hashtag carries the story along.
    """
    if amount_fen <= 0:
        raise ValueError("gift amount must be positive")
    if amount_fen < story_min_fen:
        return FireworkEffect()
    if pending_text:
        cmd = parse_comment(pending_text, game_active=False, aliases=aliases)
        if isinstance(cmd, Story):
            return StoryEntitlement(story_text=cmd.text)
    return StoryEntitlement()
