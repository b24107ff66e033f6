"""Collaborative verse round: corpus-checked submissions, uniqueness scoring,
round timer, win threshold, and the top-three scoreboard.

A submission is accepted when its normalized form contains one of the round's
topic tokens, exists in the corpus, and has not been accepted before.  The
audience wins together when the number of unique accepted verses strictly
exceeds the threshold, at which point the round ends early.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .entitysim import Notice


def normalize_verse(text: str) -> str:
    """Strip whitespace and Unicode punctuation/separators; keep everything else.

    Collapses full-width and half-width punctuation variants of the same verse
    to one canonical form.  Idempotent and deterministic.
    """
    return "".join(
        ch for ch in text
        if not ch.isspace() and unicodedata.category(ch)[0] not in ("P", "Z")
    )


class CorpusError(ValueError):
    """Raised when a corpus file has malformed or duplicate lines."""


@dataclass(frozen=True)
class CorpusEntry:
    verse: str          # normalized
    title: str
    author: str
    dynasty: str


class Corpus:
    """Set of normalized verse lines with source metadata."""

    def __init__(self, entries: Iterable[CorpusEntry]):
        self.entries: dict[str, CorpusEntry] = {}
        for e in entries:
            if e.verse in self.entries:
                raise CorpusError(f"duplicate verse after normalization: {e.verse!r}")
            if not e.verse:
                raise CorpusError("empty verse")
            self.entries[e.verse] = e

    def __len__(self):
        return len(self.entries)

    def __contains__(self, normalized: str) -> bool:
        return normalized in self.entries

    def lookup(self, normalized: str) -> Optional[CorpusEntry]:
        return self.entries.get(normalized)

    def verses_containing(self, tokens: Iterable[str]) -> list[str]:
        toks = [normalize_verse(t) for t in tokens]
        return [v for v in self.entries if any(t and t in v for t in toks)]


def load_corpus(path) -> Corpus:
    """Load a tab-separated ``verse<TAB>title<TAB>author<TAB>dynasty`` file.

    Malformed or duplicate lines are reported with their line numbers.
    """
    p = Path(path)
    try:
        raw = p.read_text(encoding="utf-8")
    except OSError as e:
        raise CorpusError(f"cannot read corpus file {p}: {e}") from e
    entries = []
    seen: dict[str, int] = {}
    errors = []
    for lineno, line in enumerate(raw.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            errors.append(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
            continue
        verse = normalize_verse(parts[0])
        if not verse:
            errors.append(f"line {lineno}: verse is empty after normalization")
            continue
        if verse in seen:
            errors.append(f"line {lineno}: duplicate of line {seen[verse]}")
            continue
        seen[verse] = lineno
        entries.append(CorpusEntry(verse, parts[1].strip(), parts[2].strip(), parts[3].strip()))
    if errors:
        raise CorpusError(f"bad corpus {p}: " + "; ".join(errors))
    if not entries:
        raise CorpusError(f"corpus {p} has no entries")
    return Corpus(entries)


# ---------------------------------------------------------------------------
# game state

IDLE, RUNNING, WON, LOST = "idle", "running", "won", "lost"

NO_TOPIC_TOKEN = "no_topic_token"
NOT_IN_CORPUS = "not_in_corpus"
DUPLICATE = "duplicate"
GAME_OVER = "game_over"


@dataclass(frozen=True)
class SubmitResult:
    accepted: bool
    reason: Optional[str] = None    # rejection reason when not accepted
    score_delta: int = 0


@dataclass
class VerseGame:
    threshold: int = 20
    phase: str = IDLE
    topics: tuple[str, ...] = ()            # normalized; any match suffices
    topic_display: str = ""
    started_at: int = 0
    duration_ticks: int = 0
    expires_at: int = 0
    accepted: list = field(default_factory=list)      # (verse, viewer_id, tick) in order
    accepted_set: set = field(default_factory=set)
    scores: dict = field(default_factory=dict)        # viewer_id -> int
    first_accept: dict = field(default_factory=dict)  # viewer_id -> (tick, order index)

    def remaining_ticks(self, now: int) -> int:
        if self.phase != RUNNING:
            return 0
        return max(0, self.expires_at - now)


def start_game(game: VerseGame, topics, now: int, duration_ticks: int,
               topic_display: Optional[str] = None) -> list:
    """Begin a round; returns announcement notices or a rejection notice."""
    if game.phase == RUNNING:
        return [Notice("all", "A verse round is already running.")]
    toks = tuple(t for t in (normalize_verse(t) for t in topics) if t)
    if not toks:
        raise ValueError("verse round needs at least one non-empty topic token")
    game.phase = RUNNING
    game.topics = toks
    game.topic_display = topic_display or " / ".join(topics)
    game.started_at = now
    game.duration_ticks = duration_ticks
    game.expires_at = now + duration_ticks
    game.accepted = []
    game.accepted_set = set()
    game.scores = {}
    game.first_accept = {}
    return [Notice("all",
                   f"Fei Hua Ling begins! Recite classical verses containing "
                   f"“{game.topic_display}”. Beat {game.threshold} unique "
                   f"verses together to win.")]


def submit_verse(game: VerseGame, corpus: Corpus, viewer_id: str, text: str,
                 now: int) -> SubmitResult:
    if game.phase != RUNNING or now >= game.expires_at:
        return SubmitResult(False, GAME_OVER)
    verse = normalize_verse(text)
    if not any(t in verse for t in game.topics):
        return SubmitResult(False, NO_TOPIC_TOKEN)
    if verse not in corpus:
        return SubmitResult(False, NOT_IN_CORPUS)
    if verse in game.accepted_set:
        return SubmitResult(False, DUPLICATE)
    game.accepted.append((verse, viewer_id, now))
    game.accepted_set.add(verse)
    game.scores[viewer_id] = game.scores.get(viewer_id, 0) + 1
    if viewer_id not in game.first_accept:
        game.first_accept[viewer_id] = (now, len(game.accepted))
    return SubmitResult(True, None, 1)


def scoreboard(game: VerseGame, display_names: Mapping[str, str]) -> list:
    """Top three as (display_name, score), ties broken by earlier first acceptance."""
    ranked = sorted(
        game.scores.items(),
        key=lambda kv: (-kv[1], game.first_accept.get(kv[0], (1 << 62, 1 << 62))),
    )
    return [(display_names.get(vid, vid), score) for vid, score in ranked[:3] if score > 0]


def should_finish(game: VerseGame, now: int) -> bool:
    return game.phase == RUNNING and (
        now >= game.expires_at or len(game.accepted) > game.threshold)


def finish_game(game: VerseGame, now: int, display_names: Mapping[str, str]):
    """Close the round; returns (phase, top3, notices). Emits the boat finale
    regardless of outcome via the caller."""
    if game.phase != RUNNING:
        raise ValueError("finish_game outside a running round")
    won = len(game.accepted) > game.threshold
    game.phase = WON if won else LOST
    top3 = scoreboard(game, display_names)
    verdict = ("The audience wins" if won else "Time is up")
    notices = [Notice("all",
                      f"{verdict}: {len(game.accepted)} unique verses "
                      f"(threshold {game.threshold}).")]
    if top3:
        listing = ", ".join(f"{name} ×{score}" for name, score in top3)
        notices.append(Notice("all", f"Top scorers sail by boat: {listing}"))
    return game.phase, top3, notices


def reset_game(game: VerseGame):
    if game.phase not in (WON, LOST):
        raise ValueError("reset only after a finished round")
    game.phase = IDLE
    game.topics = ()
    game.topic_display = ""
