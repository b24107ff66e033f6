import math
import random

import pytest
from shapely.geometry import LineString, Point

from mrsls import scenegeo
from mrsls.entitysim import (Boat, CollisionEvent, Cue, Despawned, Fish, Firework,
                             LOTUS_COLORS, Lotus, Notice, Simulation, Umbrella,
                             truncate_story)
from mrsls.scenegeo import contains, in_viewport

from conftest import place_lotus, square_scene


def new_sim(seed=1, **phys):
    return Simulation(square_scene(**phys), seed=seed, tick_rate=30)


# -- spawning -----------------------------------------------------------------

def test_spawn_lotus_inside_lake():
    sim = new_sim()
    sim.spawn_lotus("v1", "Lin")
    lotus = sim.lotus_of("v1")
    assert lotus is not None
    assert contains(sim.scene.lake_polygon, (lotus.x, lotus.y))
    assert lotus.color in LOTUS_COLORS


def test_one_lotus_per_owner():
    sim = new_sim()
    sim.spawn_lotus("v1", "Lin")
    before = len(sim.entities)
    effects = sim.spawn_lotus("v1", "Lin")
    assert len(sim.entities) == before
    assert any(isinstance(e, Notice) and e.target == "v1" for e in effects)


def test_owner_can_respawn_after_despawn():
    sim = new_sim()
    sim.spawn_lotus("v1", "Lin")
    sim._remove(sim.lotus_of("v1").id)
    effects = sim.spawn_lotus("v1", "Lin")
    assert sim.lotus_of("v1") is not None


def test_color_distribution_uniform():
    # 4000 seeded spawns: each color within 25% +/- 5%
    sim = new_sim(seed=2024)
    counts = {c: 0 for c in LOTUS_COLORS}
    for i in range(4000):
        sim.spawn_lotus(f"v{i}", f"N{i}")
        counts[sim.lotus_of(f"v{i}").color] += 1
    for c, n in counts.items():
        assert 0.20 <= n / 4000 <= 0.30, (c, n)


def test_entity_ids_never_reused():
    sim = new_sim()
    seen = set()
    for i in range(50):
        sim.spawn_lotus(f"v{i}", f"N{i}")
        eid = sim.lotus_of(f"v{i}").id
        assert eid not in seen
        seen.add(eid)
        sim._remove(eid)


# -- dashing ------------------------------------------------------------------

def test_dash_without_lotus_notice():
    sim = new_sim()
    effects = sim.dash_lotus("v1")
    assert any(isinstance(e, Notice) and "release" in e.text.lower() for e in effects)


def test_dash_random_reproducible():
    a = new_sim(seed=5)
    b = new_sim(seed=5)
    for sim in (a, b):
        sim.spawn_lotus("v1", "Lin")
        sim.dash_lotus("v1")
    la, lb = a.lotus_of("v1"), b.lotus_of("v1")
    assert (la.vx, la.vy) == (lb.vx, lb.vy)
    assert math.isclose(math.hypot(la.vx, la.vy), sim.scene.physics.dash_speed)


def test_dash_targeted_due_east():
    sim = new_sim()
    place_lotus(sim, "v1", "Lin", 0.0, 0.0)
    place_lotus(sim, "v2", "Mei", 10.0, 0.0)
    sim.dash_lotus("v1", "Mei")
    lotus = sim.lotus_of("v1")
    assert lotus.vx == sim.scene.physics.dash_speed
    assert lotus.vy == 0.0
    assert lotus.dash_until is not None


def test_dash_unknown_target():
    sim = new_sim()
    sim.spawn_lotus("v1", "Lin")
    effects = sim.dash_lotus("v1", "Nobody")
    assert any(isinstance(e, Notice) and "Nobody" in e.text for e in effects)
    assert sim.lotus_of("v1").dash_until is None


def test_dash_self_target_rejected():
    sim = new_sim()
    sim.spawn_lotus("v1", "Lin")
    effects = sim.dash_lotus("v1", "Lin")
    assert any(isinstance(e, Notice) for e in effects)
    assert sim.lotus_of("v1").dash_until is None


def test_hit_name_collision_prefers_recent_activity():
    sim = new_sim()
    place_lotus(sim, "v1", "Lin", 0.0, 0.0)
    place_lotus(sim, "v2", "Twin", 20.0, 0.0)
    place_lotus(sim, "v3", "Twin", 0.0, 20.0)
    sim.tick = 10
    sim.shine_lotus("v3")              # v3 is now the more recently active Twin
    sim.dash_lotus("v1", "Twin")
    lotus = sim.lotus_of("v1")
    # direction points at v3's lotus (due north), not v2's (due east)
    assert lotus.vy > 0 and abs(lotus.vx) < 1e-9


# -- shining ------------------------------------------------------------------

def test_shine_sets_60_tick_highlight():
    sim = new_sim()
    sim.spawn_lotus("v1", "Lin")
    sim.shine_lotus("v1")
    lotus = sim.lotus_of("v1")
    assert lotus.shining_until == 60           # 2 s at 30 Hz, issued at tick 0
    while sim.tick <= 60:
        assert sim.is_shining(lotus)
        sim.step()
    assert sim.tick == 61
    assert not sim.is_shining(lotus)


def test_shine_extends_not_stacks():
    sim = new_sim()
    sim.spawn_lotus("v1", "Lin")
    sim.shine_lotus("v1")
    sim.step()
    sim.shine_lotus("v1")
    assert sim.lotus_of("v1").shining_until == 61


def test_shine_without_lotus_notice():
    sim = new_sim()
    assert any(isinstance(e, Notice) for e in sim.shine_lotus("v1"))


# -- drift, despawn, shore ----------------------------------------------------

def test_idle_lotus_drifts_right():
    sim = new_sim()
    lotus = place_lotus(sim, "v1", "Lin", 0.0, 0.0, vx=sim._drift)
    x0 = lotus.x
    for _ in range(30):
        sim.step()
    assert lotus.x == pytest.approx(x0 + sim.scene.physics.idle_drift_speed, rel=1e-9)
    assert lotus.y == 0.0


def test_idle_lotus_leaves_viewport_and_despawns():
    # lake extends to x=600 but the view ends at x=250
    sim = Simulation(square_scene(right=600.0, idle_drift_speed=5.0), seed=1,
                     tick_rate=30)
    lotus = place_lotus(sim, "v1", "Lin", 245.0, 0.0, vx=5.0)
    gone = None
    for _ in range(200):
        effects = sim.step()
        if any(isinstance(e, Despawned) and e.reason == "out_of_view" for e in effects):
            gone = sim.tick
            break
    assert gone is not None
    assert sim.lotus_of("v1") is None


def test_despawn_within_one_tick_of_exit():
    sim = Simulation(square_scene(right=600.0, idle_drift_speed=5.0), seed=1,
                     tick_rate=30)
    place_lotus(sim, "v1", "Lin", 200.0, 0.0, vx=5.0)
    for _ in range(1000):
        sim.step()
        for e in sim.entities.values():
            if isinstance(e, Lotus):
                assert in_viewport(sim.scene.camera, sim.scene.viewport,
                                   (e.x, e.y, 0.0))
        if sim.lotus_of("v1") is None:
            return
    pytest.fail("lotus never left the viewport")


def test_shore_reflection_keeps_lotus_inside():
    sim = new_sim(restitution=1.0)
    lotus = place_lotus(sim, "v1", "Lin", 95.0, 30.0, vx=9.0, vy=0.0,
                        dash_ticks=10_000)
    for _ in range(300):
        sim.step()
        assert contains(sim.scene.lake_polygon, (lotus.x, lotus.y))
    assert lotus.vx < 0            # bounced back off the east shore


# -- collisions ---------------------------------------------------------------

def test_head_on_collision_exchanges_velocities():
    sim = new_sim(restitution=1.0)
    a = place_lotus(sim, "v1", "A", -3.0, 0.0, vx=2.0, dash_ticks=10_000)
    b = place_lotus(sim, "v2", "B", 3.0, 0.0, vx=-2.0, dash_ticks=10_000)
    hit = None
    for _ in range(100):
        effects = sim.step()
        hits = [e for e in effects if isinstance(e, CollisionEvent)]
        if hits:
            hit = hits[0]
            break
    assert hit is not None
    assert abs(a.vx - (-2.0)) < 1e-9 and abs(a.vy) < 1e-9
    assert abs(b.vx - 2.0) < 1e-9 and abs(b.vy) < 1e-9


def test_collision_conserves_momentum_and_dissipates_energy():
    sim = new_sim(restitution=0.9)
    rng = random.Random(77)
    for i in range(12):
        place_lotus(sim, f"v{i}", f"N{i}", rng.uniform(-20, 20), rng.uniform(-20, 20),
                    vx=rng.uniform(-3, 3), vy=rng.uniform(-3, 3), dash_ticks=10_000)
    n_hits = 0
    for _ in range(600):
        for e in sim.step():
            if isinstance(e, CollisionEvent):
                n_hits += 1
                for pre, post in zip(e.momentum_pre, e.momentum_post):
                    assert abs(post - pre) <= 1e-9 * max(1.0, abs(pre))
                assert e.ke_post <= e.ke_pre * (1 + 1e-12)
    assert n_hits > 0


def test_touching_but_separating_lotuses_get_no_impulse():
    sim = new_sim(restitution=1.0)
    a = place_lotus(sim, "v1", "A", -1.0, 0.0, vx=-2.0, dash_ticks=10_000)
    b = place_lotus(sim, "v2", "B", 1.0, 0.0, vx=2.0, dash_ticks=10_000)
    sim.step()
    assert a.vx == -2.0 and b.vx == 2.0


# -- fish, fireworks, umbrellas -------------------------------------------------

def test_feed_fish_spawns_named_fish_with_splash():
    sim = new_sim()
    effects = sim.feed_fish("Lin")
    assert any(isinstance(e, Cue) and e.kind == "splash" for e in effects)
    fish = [e for e in sim.entities.values() if isinstance(e, Fish)]
    assert len(fish) == 1
    assert fish[0].trigger_name == "Lin"
    assert contains(sim.scene.lake_polygon, (fish[0].x, fish[0].y))


def test_two_concurrent_fish_keep_their_tags():
    sim = new_sim()
    sim.feed_fish("Lin")
    sim.feed_fish("Mei")
    tags = sorted(e.trigger_name for e in sim.entities.values() if isinstance(e, Fish))
    assert tags == ["Lin", "Mei"]


def test_fish_removed_when_phase_completes():
    sim = new_sim(fish_duration_s=0.5)       # 15 ticks at 30 Hz
    sim.feed_fish("Lin")
    for _ in range(14):
        sim.step()
    assert any(isinstance(e, Fish) for e in sim.entities.values())
    # phase accumulation may land one tick past the nominal duration
    for _ in range(3):
        sim.step()
    assert not any(isinstance(e, Fish) for e in sim.entities.values())


def test_firework_spawns_in_sky_band():
    sim = new_sim()
    for i in range(50):
        sim.spawn_firework(f"G{i}")
    band = sim.scene.sky_band
    fws = [e for e in sim.entities.values() if isinstance(e, Firework)]
    assert len(fws) == 50
    for fw in fws:
        assert band.contains_point(fw.u, fw.v)
        assert fw.trigger_name.startswith("G")


def test_umbrella_carries_truncated_story():
    sim = new_sim()
    long_story = "x" * 200
    sim.spawn_umbrella("Qi", long_story)
    um = next(e for e in sim.entities.values() if isinstance(e, Umbrella))
    limit = sim.scene.physics.umbrella_text_max
    assert len(um.story) == limit
    assert um.story.endswith("…")
    assert um.story.startswith("x" * (limit - 1))


def test_truncate_story_boundaries():
    assert truncate_story("a" * 140, 140) == "a" * 140
    assert truncate_story("a" * 141, 140) == "a" * 139 + "…"
    assert truncate_story("short", 140) == "short"


def test_umbrella_crosses_left_to_right_and_expires():
    sim = new_sim(umbrella_duration_s=1.0)
    sim.spawn_umbrella("Qi", "story")
    um = next(e for e in sim.entities.values() if isinstance(e, Umbrella))
    u0 = um.u
    sim.step()
    assert um.u > u0
    for _ in range(40):
        sim.step()
    assert not any(isinstance(e, Umbrella) for e in sim.entities.values())


# -- boat ---------------------------------------------------------------------

def boat_survivor_oracle(initial, scene, tick_rate):
    """Independent sweep check: per tick, shapely distance from the drifted
    lotus position to that tick's path sub-segment."""
    phys = scene.physics
    p0, p1 = phys.boat_path
    dt = 1.0 / tick_rate
    steps = math.ceil(phys.boat_duration_s * tick_rate)
    killed = set()
    positions = {k: list(v) for k, v in initial.items()}
    phase = 0.0
    bs = dt / phys.boat_duration_s
    for j in range(steps):
        for k in positions:
            positions[k][0] += phys.idle_drift_speed * dt
        old, phase = phase, min(1.0, phase + bs)
        a = (p0[0] + (p1[0] - p0[0]) * old, p0[1] + (p1[1] - p0[1]) * old)
        b = (p0[0] + (p1[0] - p0[0]) * phase, p0[1] + (p1[1] - p0[1]) * phase)
        seg = LineString([a, b])
        for k, pos in positions.items():
            if k in killed:
                continue
            if seg.distance(Point(pos)) <= phys.boat_half_width + phys.lotus_radius:
                killed.add(k)
    return set(positions) - killed


def test_boat_breaks_lotuses_on_course():
    sim = Simulation(square_scene(boat_path=((-90.0, 0.0), (90.0, 0.0)),
                                  boat_duration_s=4.0),
                     seed=3, tick_rate=30)
    on_path = place_lotus(sim, "v1", "A", 0.0, 0.0)
    near = place_lotus(sim, "v2", "B", 0.0, 4.9)       # within half_width + radius
    far = place_lotus(sim, "v3", "C", 0.0, 5.3)        # beyond half_width + radius
    sim.run_boat([("A", 3)])
    for _ in range(130):
        sim.step()
    assert sim.lotus_of("v1") is None
    assert sim.lotus_of("v2") is None
    assert sim.lotus_of("v3") is not None
    assert not any(isinstance(e, Boat) for e in sim.entities.values())


def test_boat_survivors_match_segment_distance_oracle():
    scene = square_scene(boat_path=((-90.0, -60.0), (90.0, 60.0)),
                         boat_duration_s=6.0)
    sim = Simulation(scene, seed=9, tick_rate=30)
    rng = random.Random(41)
    initial = {}
    for i in range(10):
        x, y = rng.uniform(-80, 80), rng.uniform(-80, 80)
        place_lotus(sim, f"v{i}", f"N{i}", x, y, vx=sim._drift)
        initial[f"v{i}"] = (x, y)
    sim.run_boat([])
    for _ in range(int(6.0 * 30) + 2):
        sim.step()
    survivors = {o for o in initial if sim.lotus_of(o) is not None}
    assert survivors == boat_survivor_oracle(initial, scene, 30)


def test_boat_flag_carries_top3():
    sim = new_sim()
    sim.run_boat([("A", 5), ("B", 2), ("C", 1)])
    boat = next(e for e in sim.entities.values() if isinstance(e, Boat))
    assert boat.top3 == (("A", 5), ("B", 2), ("C", 1))


# -- long-run containment property ---------------------------------------------

def test_fuzz_containment_20_lotuses():
    sim = Simulation(square_scene(right=400.0), seed=1337, tick_rate=30)
    rng = random.Random(4242)
    owners = [f"v{i}" for i in range(20)]
    for o in owners:
        sim.spawn_lotus(o, o.upper())
    for t in range(2000):
        if t % 37 == 0:
            o = owners[rng.randrange(len(owners))]
            if sim.lotus_of(o) is None:
                sim.spawn_lotus(o, o.upper())
            else:
                sim.dash_lotus(o)
        sim.step()
        for e in sim.entities.values():
            if isinstance(e, (Lotus, Fish)):
                assert contains(sim.scene.lake_polygon, (e.x, e.y)), (t, e)
