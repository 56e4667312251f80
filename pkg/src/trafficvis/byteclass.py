"""Five-way byte classification, display colors and class histograms.

==========  ===============  =========
class       byte values      color
==========  ===============  =========
Null        0x00             black
Printable   0x20-0x7E        blue
Control     0x01-0x1F, 0x7F  green
Extended    0x80-0xFE        red
Full        0xFF             white
==========  ===============  =========

``Padding`` marks image cells with no source byte; it is never returned by
:func:`classify_byte`.
"""
import enum
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import EmptyInput


class ByteClass(enum.IntEnum):
    NULL = 0
    PRINTABLE = 1
    CONTROL = 2
    EXTENDED = 3
    FULL = 4
    PADDING = 5


DATA_CLASSES = tuple(ByteClass)[:5]
N_CLASSES = len(ByteClass)


def _build_table():
    table = np.empty(256, dtype=np.uint8)
    for v in range(256):
        if v == 0x00:
            c = ByteClass.NULL
        elif v == 0xFF:
            c = ByteClass.FULL
        elif 0x20 <= v <= 0x7E:
            c = ByteClass.PRINTABLE
        elif v <= 0x1F or v == 0x7F:
            c = ByteClass.CONTROL
        else:
            c = ByteClass.EXTENDED
        table[v] = c
    table.setflags(write=False)
    return table


#: byte value -> ByteClass index
CLASS_TABLE = _build_table()

_COLORS = {
    ByteClass.NULL: (0, 0, 0),
    ByteClass.PRINTABLE: (0, 0, 255),
    ByteClass.CONTROL: (0, 255, 0),
    ByteClass.EXTENDED: (255, 0, 0),
    ByteClass.FULL: (255, 255, 255),
    ByteClass.PADDING: (128, 128, 128),
}

#: ByteClass index -> RGB, shape (6, 3)
PALETTE = np.array([_COLORS[c] for c in ByteClass], dtype=np.uint8)
PALETTE.setflags(write=False)

# inclusive value ranges per class, used by the synthetic generator
CLASS_VALUES = {c: np.flatnonzero(CLASS_TABLE == c).astype(np.uint8) for c in DATA_CLASSES}


def classify_byte(value: int) -> ByteClass:
    if not 0 <= value <= 255:
        raise ValueError(f"byte value out of range: {value}")
    return ByteClass(int(CLASS_TABLE[value]))


def classify_bytes(data) -> np.ndarray:
    """Vectorized :func:`classify_byte` over a byte string or uint8 array."""
    arr = np.frombuffer(bytes(data), dtype=np.uint8) if not isinstance(data, np.ndarray) else data
    return CLASS_TABLE[arr]


def class_color(cls: ByteClass) -> Tuple[int, int, int]:
    return _COLORS[ByteClass(cls)]


@dataclass(frozen=True)
class FeatureHistogram:
    counts: Tuple[int, int, int, int, int]
    total: int

    @property
    def frequencies(self) -> Tuple[float, ...]:
        return tuple(c / self.total for c in self.counts)

    def __getitem__(self, cls):
        return self.counts[ByteClass(cls)]

    def __add__(self, other):
        return FeatureHistogram(tuple(a + b for a, b in zip(self.counts, other.counts)),
                                self.total + other.total)

    def csv_row(self) -> str:
        return ",".join(str(v) for v in (*self.counts, self.total))


HISTOGRAM_CSV_HEADER = "null,printable,control,extended,full,total"


def histogram(data) -> FeatureHistogram:
    """Count bytes per data class."""
    classes = classify_bytes(data)
    if classes.size == 0:
        raise EmptyInput("histogram of an empty byte sequence")
    counts = np.bincount(classes, minlength=N_CLASSES)[:5]
    return FeatureHistogram(tuple(int(c) for c in counts), int(classes.size))
