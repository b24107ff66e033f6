import math
import random
from pathlib import Path

import pytest

from mrsls import chatparse, scenegeo, versegame

DATA = Path(__file__).resolve().parents[1] / "src" / "mrsls" / "data"


@pytest.fixture(scope="session")
def demo_scene():
    return scenegeo.load_scene(DATA / "demo_scene.json")


@pytest.fixture(scope="session")
def corpus():
    return versegame.load_corpus(DATA / "poems.tsv")


@pytest.fixture(scope="session")
def aliases():
    return chatparse.load_aliases(DATA / "aliases.txt")


def overhead_camera(height=50.0, focal=100.0, size=1000):
    """Straight-down camera: ground (x, y, 0) maps to u=2x+500, v=-2y+500."""
    return scenegeo.Camera(
        position=(0.0, 0.0, height),
        rotation=((1.0, 0.0, 0.0), (0.0, -1.0, 0.0), (0.0, 0.0, -1.0)),
        focal_px=focal,
        principal=(size / 2, size / 2),
        image_size=(size, size),
    )


def square_scene(half=100.0, right=None, **phys):
    """Square lake seen from overhead; `right` extends the east shore past the
    viewport so drift-out despawn is reachable."""
    r = right if right is not None else half
    poly = ((-half, -half), (r, -half), (r, half), (-half, half))
    physics = scenegeo.Physics(**phys)
    return scenegeo.SceneConfig(
        camera=overhead_camera(),
        lake_polygon=scenegeo.validate_polygon(poly),
        sky_band=scenegeo.Rect(0, 0, 1000, 120),
        viewport=scenegeo.Rect(0, 0, 1000, 1000),
        physics=physics,
        background_plate="",
        server={},
    )


def place_lotus(sim, owner, name, x, y, vx=0.0, vy=0.0, dash_ticks=None):
    """Spawn through the public op, then pin pose for a controlled scenario."""
    effects = sim.spawn_lotus(owner, name)
    lotus = sim.lotus_of(owner)
    assert lotus is not None, effects
    lotus.x, lotus.y = x, y
    lotus.vx, lotus.vy = vx, vy
    if dash_ticks is not None:
        lotus.dash_until = sim.tick + dash_ticks
    return lotus
