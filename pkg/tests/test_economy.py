import random

import pytest

from mrsls.economy import Economy, LedgerRecord, SpawnFirework, SpawnUmbrella, fen_str
from mrsls.entitysim import Notice


def new_eco(**kw):
    return Economy(tick_rate=30, **kw)


def test_small_gift_triggers_firework():
    eco = new_eco()
    effects = eco.on_gift("v1", "Lin", 500, now=0)
    assert effects == [SpawnFirework("Lin")]
    assert eco.total_fen() == 500
    assert eco.ledger[-1].effect == "firework"


def test_boundary_999_vs_1000():
    eco = new_eco()
    assert eco.on_gift("v1", "Lin", 999, now=0) == [SpawnFirework("Lin")]
    effects = eco.on_gift("v2", "Mei", 1000, now=0)
    assert any(isinstance(e, Notice) for e in effects)
    assert "v2" in eco.entitlements


def test_story_consumes_entitlement_once():
    eco = new_eco()
    eco.on_gift("v1", "Lin", 1500, now=0)
    first = eco.on_story("v1", "Lin", "we met here", now=10)
    assert first == [SpawnUmbrella("Lin", "we met here")]
    second = eco.on_story("v1", "Lin", "again", now=11)
    assert any(isinstance(e, Notice) for e in second)
    assert not any(isinstance(e, SpawnUmbrella) for e in second)


def test_story_without_gift_gets_requirement_notice():
    eco = new_eco()
    effects = eco.on_story("v1", "Lin", "hello", now=0)
    assert len(effects) == 1 and isinstance(effects[0], Notice)
    assert "10.00" in effects[0].text


def test_entitlement_expires():
    eco = new_eco(entitlement_ttl_s=10)          # 300 ticks
    eco.on_gift("v1", "Lin", 1200, now=0)
    late = eco.on_story("v1", "Lin", "too late", now=300)
    assert any(isinstance(e, Notice) for e in late)
    # a fresh gift re-opens the window
    eco.on_gift("v1", "Lin", 1200, now=301)
    assert eco.on_story("v1", "Lin", "ok", now=400) == [SpawnUmbrella("Lin", "ok")]


def test_regrant_replaces_not_stacks():
    eco = new_eco()
    eco.on_gift("v1", "Lin", 1500, now=0)
    eco.on_gift("v1", "Lin", 1500, now=1)
    eco.on_story("v1", "Lin", "one", now=2)
    effects = eco.on_story("v1", "Lin", "two", now=3)
    assert not any(isinstance(e, SpawnUmbrella) for e in effects)
    # two qualifying gifts, one umbrella
    umbrella_worthy = [r for r in eco.ledger if r.effect == "story_entitlement"]
    assert len(umbrella_worthy) == 2


def test_nonpositive_gift_rejected_but_ledgered():
    eco = new_eco()
    effects = eco.on_gift("v1", "Lin", 0, now=0)
    assert any(isinstance(e, Notice) for e in effects)
    assert eco.ledger[-1].effect == "rejected"
    assert eco.total_fen() == 0


def test_ledger_totals_exact():
    eco = new_eco()
    rng = random.Random(5)
    total = 0
    per_viewer = {}
    for i in range(200):
        viewer = f"v{rng.randrange(8)}"
        fen = rng.randrange(1, 5000)
        eco.on_gift(viewer, viewer.upper(), fen, now=i)
        total += fen
        per_viewer[viewer] = per_viewer.get(viewer, 0) + fen
    assert eco.total_fen() == total
    for viewer, subtotal in per_viewer.items():
        assert eco.total_fen(viewer) == subtotal


def test_firework_and_umbrella_count_invariants():
    eco = new_eco()
    rng = random.Random(12)
    fireworks = umbrellas = big_gifts = 0
    for i in range(300):
        viewer = f"v{rng.randrange(6)}"
        roll = rng.random()
        if roll < 0.6:
            fen = rng.randrange(1, 1000)
            out = eco.on_gift(viewer, viewer, fen, now=i)
            fireworks += sum(isinstance(e, SpawnFirework) for e in out)
        elif roll < 0.85:
            fen = rng.randrange(1000, 9000)
            eco.on_gift(viewer, viewer, fen, now=i)
            big_gifts += 1
        else:
            out = eco.on_story(viewer, viewer, f"story {i}", now=i)
            umbrellas += sum(isinstance(e, SpawnUmbrella) for e in out)
    small_gifts = sum(1 for r in eco.ledger if r.effect == "firework")
    assert fireworks == small_gifts
    assert umbrellas <= big_gifts


def test_fen_str():
    assert fen_str(0) == "0.00"
    assert fen_str(999) == "9.99"
    assert fen_str(1000) == "10.00"
    assert fen_str(123456) == "1234.56"
