"""
Unit-rate Poisson random measure on time x threshold, with i.i.d. marks.

The plane is cut into cells [block * B, (block + 1) * B) x [strip * H, (strip + 1) * H).
Each cell draws its points from its own generator keyed by (seed, strip, block),
so a cell is the same whichever order it is touched in, and drawing higher
strips later never disturbs lower ones.
"""
import math
from typing import Dict, Tuple

import numpy as np

from model.mark_model import MarkDistribution
from utils.errors import DomainError
from utils.seeding import MASK64, PURPOSE_PATHS, PURPOSE_SUFFIX, derive_seed, generator


DEFAULT_BLOCK_LENGTH = 25.0
DEFAULT_STRIP_HEIGHT = 1.0

Points = Tuple[np.ndarray, np.ndarray, np.ndarray]

_EMPTY = (np.empty(0), np.empty(0), np.empty(0))


def _concat(parts) -> Points:
    parts = [p for p in parts if p[0].size]
    if not parts:
        return _EMPTY
    if len(parts) == 1:
        return parts[0]
    t = np.concatenate([p[0] for p in parts])
    order = np.argsort(t, kind="stable")
    return t[order], np.concatenate([p[1] for p in parts])[order], np.concatenate([p[2] for p in parts])[order]


def _select(points: Points, t_lo: float, t_hi: float, level: float, closed_lo: bool) -> Points:
    """Points with t in (t_lo, t_hi] (or [t_lo, t_hi]) and theta <= level; input sorted by t."""
    t, theta, x = points
    lo = np.searchsorted(t, t_lo, side="left" if closed_lo else "right")
    hi = np.searchsorted(t, t_hi, side="right")
    if hi <= lo:
        return _EMPTY
    t, theta, x = t[lo:hi], theta[lo:hi], x[lo:hi]
    keep = theta <= level
    return t[keep], theta[keep], x[keep]


class PoissonField:
    """Lazily generated Poisson field for one replica."""

    def __init__(
        self,
        seed: int,
        marks: MarkDistribution,
        block_length: float = DEFAULT_BLOCK_LENGTH,
        strip_height: float = DEFAULT_STRIP_HEIGHT,
    ):
        if block_length <= 0.0 or strip_height <= 0.0:
            raise DomainError("field cells need positive block length and strip height")
        self.seed = int(seed) & MASK64
        self.marks = marks
        self.block_length = float(block_length)
        self.strip_height = float(strip_height)
        self._cells: Dict[Tuple[int, int], Points] = {}
        self._stacks: Dict[Tuple[int, int], Points] = {}

    @classmethod
    def for_replica(cls, master_seed: int, replica: int, marks: MarkDistribution, **kwargs) -> "PoissonField":
        return cls(derive_seed(master_seed, PURPOSE_PATHS, replica), marks, **kwargs)

    @classmethod
    def for_suffix(cls, master_seed: int, replica: int, marks: MarkDistribution, **kwargs) -> "PoissonField":
        return cls(derive_seed(master_seed, PURPOSE_SUFFIX, replica), marks, **kwargs)

    @property
    def key(self) -> tuple:
        return ("field", self.seed, self.block_length, self.strip_height)

    def cell(self, strip: int, block: int) -> Points:
        """Points of one cell, sorted by time. Bit-identical on every call."""
        cached = self._cells.get((strip, block))
        if cached is not None:
            return cached
        rng = generator(self.seed, strip, block)
        count = int(rng.poisson(self.block_length * self.strip_height))
        t = block * self.block_length + self.block_length * rng.random(count)
        theta = strip * self.strip_height + self.strip_height * rng.random(count)
        x = self.marks.sample(rng, count)
        order = np.argsort(t, kind="stable")
        points = (t[order], theta[order], x[order])
        self._cells[(strip, block)] = points
        return points

    def _stack(self, block: int, strips: int) -> Points:
        """All points of strips 0..strips-1 in one block, merged by time."""
        cached = self._stacks.get((block, strips))
        if cached is None:
            cached = _concat([self.cell(j, block) for j in range(strips)])
            self._stacks[(block, strips)] = cached
        return cached

    def window(self, t_lo: float, t_hi: float, level: float, closed_lo: bool = False) -> Points:
        """Field points in (t_lo, t_hi] x [0, level], sorted by time."""
        if t_hi < t_lo or level <= 0.0:
            return _EMPTY
        strips = max(1, int(math.ceil(level / self.strip_height)))
        first = int(math.floor(t_lo / self.block_length))
        last = int(math.floor(t_hi / self.block_length))
        parts = [_select(self._stack(b, strips), t_lo, t_hi, level, closed_lo) for b in range(first, last + 1)]
        return _concat(parts)

    def with_point(self, u: float, theta: float, x: float) -> "ShiftedField":
        return ShiftedField(self, u, theta, x)

    def __repr__(self) -> str:
        return f"PoissonField(seed={self.seed}, cells={len(self._cells)})"


class ShiftedField:
    """A field plus one extra point (u, theta, x)."""

    def __init__(self, base, u: float, theta: float, x: float):
        self.base = base
        self.point = (float(u), float(theta), float(x))
        self.marks = base.marks

    @property
    def key(self) -> tuple:
        return ("shift", self.base.key, self.point)

    def window(self, t_lo: float, t_hi: float, level: float, closed_lo: bool = False) -> Points:
        pts = self.base.window(t_lo, t_hi, level, closed_lo)
        u, theta, x = self.point
        inside = (t_lo <= u if closed_lo else t_lo < u) and u <= t_hi and theta <= level
        if not inside:
            return pts
        return _concat([pts, (np.array([u]), np.array([theta]), np.array([x]))])


class SplicedField:
    """Points of ``prefix`` strictly before ``split``, of ``suffix`` from ``split`` on.

    Averaging over suffix seeds with a fixed prefix samples the conditional law
    given the history up to ``split``.
    """

    def __init__(self, prefix, suffix, split: float):
        self.prefix = prefix
        self.suffix = suffix
        self.split = float(split)
        self.marks = prefix.marks

    @property
    def key(self) -> tuple:
        return ("splice", self.prefix.key, self.suffix.key, self.split)

    def window(self, t_lo: float, t_hi: float, level: float, closed_lo: bool = False) -> Points:
        parts = []
        if t_lo < self.split:
            t, theta, x = self.prefix.window(t_lo, min(t_hi, self.split), level, closed_lo)
            keep = t < self.split
            parts.append((t[keep], theta[keep], x[keep]))
        if t_hi >= self.split:
            if t_lo < self.split:
                parts.append(self.suffix.window(self.split, t_hi, level, closed_lo=True))
            else:
                parts.append(self.suffix.window(t_lo, t_hi, level, closed_lo))
        return _concat(parts)

    def with_point(self, u: float, theta: float, x: float) -> ShiftedField:
        return ShiftedField(self, u, theta, x)
