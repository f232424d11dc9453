"""Interleaved capture schedule: tracking frames and single-light frames.

A cycle repeats (full-on, single, single); the single-light order is
chosen greedily so consecutive lit lights are as far apart in angle as
possible, which keeps neighboring frames maximally dissimilar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

FULL_ON = -1


@dataclass(frozen=True)
class LightingSchedule:
    """One capture cycle: per-frame light index, FULL_ON marking tracking frames."""

    frame_lights: tuple[int, ...]
    n_lights: int
    fps: float = 90.0

    def __post_init__(self):
        k = self.n_lights
        if len(self.frame_lights) != 3 * k // 2:
            raise ConfigError("cycle length must be 3K/2 frames")
        singles = [i for i in self.frame_lights if i != FULL_ON]
        if sorted(singles) != list(range(k)):
            raise ConfigError("each light must appear exactly once per cycle")
        for w in range(len(self.frame_lights) - 2):
            window = self.frame_lights[w : w + 3]
            if sum(1 for i in window if i == FULL_ON) != 1:
                raise ConfigError("every 3-frame window needs exactly one tracking frame")

    @property
    def n_frames(self) -> int:
        return len(self.frame_lights)

    def tracked_frame_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.frame_lights) if l == FULL_ON]

    def to_list(self) -> list[int]:
        return list(self.frame_lights)


def order_lights_greedy(positions: np.ndarray) -> list[int]:
    """Order lights so each is angularly farthest from its predecessor.

    Starts at index 0; ties resolve to the lowest index.  Angles are
    measured between position vectors from the origin (the head sits
    at the origin in rig coordinates).
    """
    pos = np.asarray(positions, dtype=np.float64)
    k = len(pos)
    unit = pos / np.linalg.norm(pos, axis=1, keepdims=True)
    order = [0]
    remaining = list(range(1, k))
    while remaining:
        prev = unit[order[-1]]
        best, best_angle = None, -1.0
        for idx in remaining:
            ang = float(np.arccos(np.clip(unit[idx] @ prev, -1.0, 1.0)))
            if ang > best_angle + 1e-12:
                best, best_angle = idx, ang
        order.append(best)
        remaining.remove(best)
    return order


def generate_schedule(light_positions: np.ndarray, fps: float = 90.0) -> LightingSchedule:
    """Greedy dissimilarity ordering woven into the F,O,O cycle."""
    pos = np.asarray(light_positions, dtype=np.float64)
    k = len(pos)
    if k < 2:
        raise ConfigError("a schedule needs at least two lights")
    if k % 2 != 0:
        raise ConfigError("the 3-frame cycle pairs single-light frames; K must be even")
    order = order_lights_greedy(pos)
    frames: list[int] = []
    for pair in range(k // 2):
        frames.append(FULL_ON)
        frames.append(order[2 * pair])
        frames.append(order[2 * pair + 1])
    return LightingSchedule(frame_lights=tuple(frames), n_lights=k, fps=fps)


def interpolate_tracked_params(
    tracked: list[tuple[int, np.ndarray]], frame_index: int
) -> np.ndarray:
    """Linear interpolation of per-frame parameter vectors between tracked frames.

    tracked holds (frame index, parameter vector) pairs sorted by frame.
    Queries outside the tracked range clamp to the nearest endpoint.
    """
    if not tracked:
        raise ConfigError("no tracked frames to interpolate between")
    idxs = [i for i, _ in tracked]
    if sorted(idxs) != idxs or len(set(idxs)) != len(idxs):
        raise ConfigError("tracked frames must be sorted and unique")
    if frame_index <= idxs[0]:
        return np.array(tracked[0][1], dtype=np.float64)
    if frame_index >= idxs[-1]:
        return np.array(tracked[-1][1], dtype=np.float64)
    hi = next(j for j, i in enumerate(idxs) if i >= frame_index)
    lo = hi - 1
    if idxs[hi] == frame_index:
        return np.array(tracked[hi][1], dtype=np.float64)
    w = (frame_index - idxs[lo]) / (idxs[hi] - idxs[lo])
    a = np.asarray(tracked[lo][1], dtype=np.float64)
    b = np.asarray(tracked[hi][1], dtype=np.float64)
    return (1.0 - w) * a + w * b
