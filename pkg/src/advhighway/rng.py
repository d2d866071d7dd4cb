"""Counter-based random draws.

Every draw is a pure function of ``(seed, *keys)``, so cloned worlds, replays
and parallel workers see the same numbers without carrying generator state.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def hash64(seed: int, *keys: int) -> int:
    h = _mix(seed & _MASK)
    for k in keys:
        h = _mix(h ^ (k & _MASK))
    return h


def unit_draw(seed: int, *keys: int) -> float:
    """Uniform float in [0, 1)."""
    return (hash64(seed, *keys) >> 11) * (1.0 / (1 << 53))


def derive_seed(seed: int, *keys: int) -> int:
    """A 63-bit child seed, e.g. one per evaluation episode."""
    return hash64(seed, *keys) >> 1
