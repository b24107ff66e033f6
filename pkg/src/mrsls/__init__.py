"""mrsls: an authoritative real-time server that turns a fixed-camera scenic
live stream into an interactive mixed-reality experience.

Viewers' chat commands and gifts drive virtual lotuses, fish, fireworks,
story umbrellas, and a collaborative classical-verse game, all simulated on a
geometrically calibrated lake scene and broadcast to clients every tick.
"""

__version__ = "0.1.0"
