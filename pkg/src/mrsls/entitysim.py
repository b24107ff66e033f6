"""Authoritative tick-based simulation of the scene's virtual entities.

Single-threaded by design: one Simulation instance is owned by the session
loop, all inputs arrive through it in order, and snapshots handed out are
plain copies.  Everything random goes through the instance RNG, so a given
(seed, scene, event order) reproduces bit-identical entity state.

Tick order: command effects are applied by the caller first, then step()
advances motion, resolves collisions, sweeps the boat, despawns and expires
entities, and finally increments the tick counter.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Optional

from . import scenegeo
from .scenegeo import SceneConfig

LOTUS_COLORS = ("pink", "white", "yellow", "blue")

ELLIPSIS = "…"


# ---------------------------------------------------------------------------
# entities


@dataclass
class Lotus:
    id: int
    owner: str
    owner_name: str
    color: str
    x: float
    y: float
    vx: float
    vy: float
    radius: float
    dash_until: Optional[int] = None
    shining_until: Optional[int] = None
    last_cmd_tick: int = 0

    kind = "lotus"


@dataclass
class Fish:
    id: int
    trigger_name: str
    x: float
    y: float
    phase: float = 0.0

    kind = "fish"


@dataclass
class Firework:
    id: int
    trigger_name: str
    u: float
    v: float
    phase: float = 0.0

    kind = "firework"


@dataclass
class Umbrella:
    id: int
    trigger_name: str
    story: str
    u: float
    v: float
    phase: float = 0.0

    kind = "umbrella"


@dataclass
class Boat:
    id: int
    top3: tuple
    phase: float = 0.0

    kind = "boat"


# ---------------------------------------------------------------------------
# effects emitted for broadcast and tests


@dataclass(frozen=True)
class Notice:
    target: str            # "all" or a viewer_id
    text: str


@dataclass(frozen=True)
class Cue:
    kind: str              # "splash" | "ripple" | "collide" | "firework" | "boat"
    entity_id: int


@dataclass(frozen=True)
class Despawned:
    entity_id: int
    kind: str
    reason: str            # "out_of_view" | "finished" | "broken_away"


@dataclass(frozen=True)
class CollisionEvent:
    a: int
    b: int
    ke_pre: float
    ke_post: float
    momentum_pre: tuple
    momentum_post: tuple


def truncate_story(text: str, limit: int) -> str:
    """Cap story text at `limit` chars, ending with an ellipsis when cut."""
    if len(text) <= limit:
        return text
    return text[: limit - 1] + ELLIPSIS


class Simulation:
    def __init__(self, scene: SceneConfig, seed: int, tick_rate: int = 30):
        if tick_rate <= 0 or tick_rate > 1000:
            raise ValueError("tick_rate must be in 1..1000")
        self.scene = scene
        self.tick_rate = tick_rate
        self.dt = 1.0 / tick_rate
        self.rng = random.Random(seed)
        self.tick = 0
        self.entities: dict[int, object] = {}
        self._next_id = 1
        self._lotus_by_owner: dict[str, int] = {}

        phys = scene.physics
        self._drift = phys.idle_drift_speed
        self._relax = phys.idle_relax_per_s ** self.dt
        self._dash_ticks = max(1, round(phys.dash_duration_s * tick_rate))
        self._shine_ticks = round(phys.shine_duration_s * tick_rate)
        self._fish_step = self.dt / phys.fish_duration_s
        self._firework_step = self.dt / phys.firework_duration_s
        self._umbrella_step = self.dt / phys.umbrella_duration_s
        self._boat_step = self.dt / phys.boat_duration_s
        w = scene.camera.image_size[0]
        self._umbrella_u0 = -0.15 * w
        self._umbrella_u1 = 1.15 * w

    # -- helpers ----------------------------------------------------------

    def _new_id(self) -> int:
        i = self._next_id
        self._next_id += 1
        return i

    def lotus_of(self, owner: str) -> Optional[Lotus]:
        eid = self._lotus_by_owner.get(owner)
        return self.entities.get(eid) if eid is not None else None

    def _find_lotus_by_name(self, name: str) -> Optional[Lotus]:
        # display names may collide; prefer the most recently active owner
        best = None
        for e in self.entities.values():
            if isinstance(e, Lotus) and e.owner_name == name:
                if best is None or (e.last_cmd_tick, -e.id) > (best.last_cmd_tick, -best.id):
                    best = e
        return best

    def is_shining(self, lotus: Lotus) -> bool:
        return lotus.shining_until is not None and self.tick <= lotus.shining_until

    def _remove(self, eid: int):
        e = self.entities.pop(eid)
        if isinstance(e, Lotus):
            self._lotus_by_owner.pop(e.owner, None)

    # -- commands ----------------------------------------------------------

    def spawn_lotus(self, owner: str, owner_name: str) -> list:
        if owner in self._lotus_by_owner:
            return [Notice(owner, "You already have a lotus on the lake.")]
        x, y = scenegeo.sample_lake_point(self.rng, self.scene.lake_polygon)
        color = LOTUS_COLORS[self.rng.randrange(len(LOTUS_COLORS))]
        lotus = Lotus(
            id=self._new_id(), owner=owner, owner_name=owner_name, color=color,
            x=x, y=y, vx=self._drift, vy=0.0, radius=self.scene.physics.lotus_radius,
            last_cmd_tick=self.tick,
        )
        self.entities[lotus.id] = lotus
        self._lotus_by_owner[owner] = lotus.id
        return [Notice(owner, f"A {color} lotus blooms for {owner_name}."),
                Cue("ripple", lotus.id)]

    def dash_lotus(self, owner: str, target_name: Optional[str] = None) -> list:
        lotus = self.lotus_of(owner)
        if lotus is None:
            return [Notice(owner, "Release a lotus first: try 'release lotus'.")]
        lotus.last_cmd_tick = self.tick
        speed = self.scene.physics.dash_speed
        if target_name is None:
            angle = self.rng.uniform(0.0, 2.0 * math.pi)
            dx, dy = math.cos(angle), math.sin(angle)
        else:
            target = self._find_lotus_by_name(target_name)
            if target is None:
                return [Notice(owner, f"No lotus belongs to '{target_name}'.")]
            if target.id == lotus.id:
                return [Notice(owner, "Your lotus cannot dash into itself.")]
            dx, dy = target.x - lotus.x, target.y - lotus.y
            dist = math.hypot(dx, dy)
            if dist < 1e-9:
                angle = self.rng.uniform(0.0, 2.0 * math.pi)
                dx, dy = math.cos(angle), math.sin(angle)
            else:
                dx, dy = dx / dist, dy / dist
        lotus.vx, lotus.vy = dx * speed, dy * speed
        lotus.dash_until = self.tick + self._dash_ticks
        return [Cue("ripple", lotus.id)]

    def shine_lotus(self, owner: str) -> list:
        lotus = self.lotus_of(owner)
        if lotus is None:
            return [Notice(owner, "Release a lotus first: try 'release lotus'.")]
        lotus.last_cmd_tick = self.tick
        lotus.shining_until = self.tick + self._shine_ticks
        return []

    def feed_fish(self, trigger_name: str) -> list:
        x, y = scenegeo.sample_lake_point(self.rng, self.scene.lake_polygon)
        fish = Fish(id=self._new_id(), trigger_name=trigger_name, x=x, y=y)
        self.entities[fish.id] = fish
        return [Cue("splash", fish.id)]

    def spawn_firework(self, trigger_name: str) -> list:
        band = self.scene.sky_band
        u = self.rng.uniform(band.x, band.x + band.w)
        v = self.rng.uniform(band.y, band.y + band.h)
        fw = Firework(id=self._new_id(), trigger_name=trigger_name, u=u, v=v)
        self.entities[fw.id] = fw
        return [Cue("firework", fw.id)]

    def spawn_umbrella(self, trigger_name: str, story: str) -> list:
        band = self.scene.sky_band
        story = truncate_story(story, self.scene.physics.umbrella_text_max)
        v = self.rng.uniform(band.y, band.y + band.h)
        um = Umbrella(id=self._new_id(), trigger_name=trigger_name, story=story,
                      u=self._umbrella_u0, v=v)
        self.entities[um.id] = um
        return [Notice("all", f"{trigger_name} shares a story: {story}")]

    def run_boat(self, top3) -> list:
        boat = Boat(id=self._new_id(), top3=tuple((str(n), int(s)) for n, s in top3))
        self.entities[boat.id] = boat
        return [Cue("boat", boat.id)]

    # -- tick --------------------------------------------------------------

    def step(self) -> list:
        effects = []
        scene = self.scene
        phys = scene.physics
        dt = self.dt
        tick = self.tick

        lotuses = []
        boats = []
        removals = []
        for e in self.entities.values():
            if isinstance(e, Lotus):
                lotuses.append(e)
            elif isinstance(e, Boat):
                boats.append(e)

        # motion
        for lo in lotuses:
            if lo.dash_until is not None and tick >= lo.dash_until:
                lo.dash_until = None
            if lo.dash_until is None:
                # idle: velocity relaxes toward the rightward drift
                lo.vx = self._drift + (lo.vx - self._drift) * self._relax
                lo.vy = lo.vy * self._relax
            lo._px, lo._py = lo.x, lo.y          # last known in-lake position
            lo.x += lo.vx * dt
            lo.y += lo.vy * dt
            if lo.shining_until is not None and tick > lo.shining_until:
                lo.shining_until = None

        # lotus-lotus collisions (equal mass, restitution from scene physics)
        if len(lotuses) > 1:
            effects_c = self._resolve_collisions(lotuses, phys.restitution)
            effects.extend(effects_c)

        # shore: reflect about the crossed edge and stay inside the lake
        poly = scene.lake_polygon
        for lo in lotuses:
            if not scenegeo.contains(poly, (lo.x, lo.y)):
                self._reflect_at_shore(lo, poly)

        # boat sweep: break away lotuses near this tick's path sub-segment
        for boat in boats:
            p0, p1 = phys.boat_path
            old_phase = boat.phase
            boat.phase = min(1.0, boat.phase + self._boat_step)
            ax = p0[0] + (p1[0] - p0[0]) * old_phase
            ay = p0[1] + (p1[1] - p0[1]) * old_phase
            bx = p0[0] + (p1[0] - p0[0]) * boat.phase
            by = p0[1] + (p1[1] - p0[1]) * boat.phase
            reach = phys.boat_half_width
            for lo in lotuses:
                if lo.id in self.entities and _segment_distance(
                        lo.x, lo.y, ax, ay, bx, by) <= reach + lo.radius:
                    effects.append(Despawned(lo.id, "lotus", "broken_away"))
                    effects.append(Notice("all",
                                          f"The boat broke away {lo.owner_name}'s lotus!"))
                    self._remove(lo.id)
            if boat.phase >= 1.0:
                removals.append((boat.id, "finished"))

        # animations
        for e in self.entities.values():
            if isinstance(e, Fish):
                e.phase += self._fish_step
                if e.phase >= 1.0:
                    removals.append((e.id, "finished"))
            elif isinstance(e, Firework):
                e.phase += self._firework_step
                if e.phase >= 1.0:
                    removals.append((e.id, "finished"))
            elif isinstance(e, Umbrella):
                e.phase += self._umbrella_step
                e.u = self._umbrella_u0 + (self._umbrella_u1 - self._umbrella_u0) * min(e.phase, 1.0)
                if e.phase >= 1.0:
                    removals.append((e.id, "finished"))

        # viewport rule: lotuses vanish the tick they leave the view
        cam, vp = scene.camera, scene.viewport
        for lo in lotuses:
            if lo.id in self.entities and not scenegeo.in_viewport(cam, vp, (lo.x, lo.y, 0.0)):
                effects.append(Despawned(lo.id, "lotus", "out_of_view"))
                effects.append(Notice(lo.owner, "Your lotus drifted out of view."))
                self._remove(lo.id)

        for eid, reason in removals:
            if eid in self.entities:
                effects.append(Despawned(eid, self.entities[eid].kind, reason))
                self._remove(eid)

        self.tick += 1
        return effects

    def _resolve_collisions(self, lotuses: list, restitution: float) -> list:
        effects = []
        order = sorted(lotuses, key=lambda l: (l.x, l.id))
        max_r = max(l.radius for l in order)
        n = len(order)
        for i in range(n):
            a = order[i]
            reach_i = a.x + a.radius + max_r
            for j in range(i + 1, n):
                b = order[j]
                if b.x - b.radius > reach_i:
                    break
                dx, dy = b.x - a.x, b.y - a.y
                rsum = a.radius + b.radius
                d2 = dx * dx + dy * dy
                if d2 >= rsum * rsum:
                    continue
                dist = math.sqrt(d2)
                if dist < 1e-9:
                    nx, ny = 1.0, 0.0
                    dist = 0.0
                else:
                    nx, ny = dx / dist, dy / dist
                rel_n = (b.vx - a.vx) * nx + (b.vy - a.vy) * ny
                ke_pre = 0.5 * (a.vx * a.vx + a.vy * a.vy + b.vx * b.vx + b.vy * b.vy)
                mom_pre = (a.vx + b.vx, a.vy + b.vy)
                if rel_n < 0.0:
                    # equal-mass impulse along the contact normal
                    j_imp = -(1.0 + restitution) * 0.5 * rel_n
                    a.vx -= j_imp * nx
                    a.vy -= j_imp * ny
                    b.vx += j_imp * nx
                    b.vy += j_imp * ny
                # positional correction: split the overlap evenly
                overlap = rsum - dist
                if overlap > 0.0:
                    push = 0.5 * overlap
                    a.x -= push * nx
                    a.y -= push * ny
                    b.x += push * nx
                    b.y += push * ny
                ke_post = 0.5 * (a.vx * a.vx + a.vy * a.vy + b.vx * b.vx + b.vy * b.vy)
                effects.append(CollisionEvent(
                    a=a.id, b=b.id, ke_pre=ke_pre, ke_post=ke_post,
                    momentum_pre=mom_pre, momentum_post=(a.vx + b.vx, a.vy + b.vy)))
                effects.append(Cue("collide", a.id))
        return effects

    def _reflect_at_shore(self, lo: Lotus, poly):
        hit = _first_edge_crossing(lo._px, lo._py, lo.x, lo.y, poly)
        if hit is not None:
            ix, iy, nx, ny = hit
            vn = lo.vx * nx + lo.vy * ny
            if vn < 0.0:
                lo.vx -= 2.0 * vn * nx
                lo.vy -= 2.0 * vn * ny
            cx, cy = ix + nx * 1e-6, iy + ny * 1e-6
            if scenegeo.contains(poly, (cx, cy)):
                lo.x, lo.y = cx, cy
                return
        # concave corner or grazing numerical miss: stay at the last good spot
        lo.x, lo.y = lo._px, lo._py
        lo.vx, lo.vy = -lo.vx, -lo.vy


def _segment_distance(px, py, ax, ay, bx, by) -> float:
    """Distance from point (px, py) to segment (a, b)."""
    vx, vy = bx - ax, by - ay
    wx, wy = px - ax, py - ay
    seg2 = vx * vx + vy * vy
    if seg2 <= 0.0:
        return math.hypot(wx, wy)
    t = (wx * vx + wy * vy) / seg2
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    return math.hypot(px - (ax + t * vx), py - (ay + t * vy))


def _first_edge_crossing(x0, y0, x1, y1, poly):
    """First polygon edge crossed by the motion segment, with its inward normal.

    Returns (ix, iy, nx, ny) or None.  Polygon vertices are counterclockwise,
    so the interior is to the left of each edge.
    """
    best_t = None
    best = None
    n = len(poly)
    dx, dy = x1 - x0, y1 - y0
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        denom = dx * ey - dy * ex
        if abs(denom) < 1e-18:
            continue
        t = ((ax - x0) * ey - (ay - y0) * ex) / denom
        s = ((ax - x0) * dy - (ay - y0) * dx) / denom
        if -1e-12 <= t <= 1.0 + 1e-12 and -1e-9 <= s <= 1.0 + 1e-9:
            if best_t is None or t < best_t:
                elen = math.hypot(ex, ey)
                best_t = t
                best = (x0 + t * dx, y0 + t * dy, -ey / elen, ex / elen)
    return best
