"""Hilbert-curve layout of byte sequences onto square class grids.

Coordinates are ``(x, y)`` with x the column and y the row, origin at the
top-left. The order-1 curve visits (0,0), (0,1), (1,1), (1,0): down, right,
up, so the base U opens to the right.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from .byteclass import ByteClass, classify_bytes
from .errors import ChunkTooLarge, CoordOutOfRange, IndexOutOfRange

DEFAULT_ORDER = 6


def _rot(n, x, y, rx, ry):
    if ry == 0:
        if rx == 1:
            x = n - 1 - x
            y = n - 1 - y
        x, y = y, x
    return x, y


def d2xy(order: int, d: int) -> Tuple[int, int]:
    """Cell visited at position ``d`` of the order-``order`` curve."""
    if order < 1:
        raise ValueError("order must be >= 1")
    n = 1 << order
    if not 0 <= d < n * n:
        raise IndexOutOfRange(f"index {d} outside [0, {n * n}) for order {order}")
    x = y = 0
    t = d
    s = 1
    while s < n:
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        x, y = _rot(s, x, y, rx, ry)
        x += s * rx
        y += s * ry
        t //= 4
        s *= 2
    return x, y


def xy2d(order: int, x: int, y: int) -> int:
    """Position of cell ``(x, y)`` along the curve; inverse of :func:`d2xy`."""
    if order < 1:
        raise ValueError("order must be >= 1")
    n = 1 << order
    if not (0 <= x < n and 0 <= y < n):
        raise CoordOutOfRange(f"({x}, {y}) outside {n}x{n} grid")
    d = 0
    s = n // 2
    while s > 0:
        rx = 1 if x & s else 0
        ry = 1 if y & s else 0
        d += s * s * ((3 * rx) ^ ry)
        x, y = _rot(n, x, y, rx, ry)
        s //= 2
    return d


@lru_cache(maxsize=None)
def curve_coords(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Read-only arrays ``(xs, ys)`` giving the cell of every curve index."""
    n = 1 << order
    xs = np.empty(n * n, dtype=np.intp)
    ys = np.empty(n * n, dtype=np.intp)
    for d in range(n * n):
        xs[d], ys[d] = d2xy(order, d)
    xs.setflags(write=False)
    ys.setflags(write=False)
    return xs, ys


@dataclass(frozen=True, eq=False)
class VisImage:
    """Square grid of ByteClass indices; ``cells[y, x]``."""
    order: int
    cells: np.ndarray
    data_len: int

    @property
    def side(self) -> int:
        return 1 << self.order

    def cell(self, x: int, y: int) -> ByteClass:
        return ByteClass(int(self.cells[y, x]))

    def class_counts(self) -> np.ndarray:
        """Cell count per class (length 6, Padding last)."""
        return np.bincount(self.cells.ravel(), minlength=len(ByteClass))

    def __eq__(self, other):
        return (isinstance(other, VisImage) and self.order == other.order
                and self.data_len == other.data_len and np.array_equal(self.cells, other.cells))


def layout(chunk, order: int = DEFAULT_ORDER) -> VisImage:
    """Place the bytes of ``chunk`` along the curve; unused cells are Padding."""
    data = getattr(chunk, "bytes", chunk)
    capacity = 4 ** order
    if len(data) > capacity:
        raise ChunkTooLarge(f"{len(data)} bytes exceed order-{order} capacity {capacity}")
    xs, ys = curve_coords(order)
    side = 1 << order
    cells = np.full((side, side), ByteClass.PADDING, dtype=np.uint8)
    n = len(data)
    if n:
        cells[ys[:n], xs[:n]] = classify_bytes(data)
    cells.setflags(write=False)
    return VisImage(order, cells, n)
