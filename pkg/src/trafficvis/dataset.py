"""Labeled sample manifests, train/test splits and synthetic traffic profiles.

Manifests are JSON Lines, one object per sample with exactly the keys
``path``, ``label``, ``family`` and ``source``.

The shipped synthetic profiles are hand calibrations of qualitative traits of
payload byte-class distributions (benign traffic spread fairly evenly and
printable-leaning; most malware heavy in 0x00 or 0xFF; DDoS heavy in control
bytes). The numbers are choices, not measurements.
"""
import json
import os
import zlib
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .byteclass import CLASS_VALUES, DATA_CLASSES
from .errors import BadProfile, InvalidLabel, ParseError, TooFewRecords
from .labels import BENIGN, FAMILIES, LABELS
from .pcap import DEFAULT_CHUNK_CAPACITY, PayloadChunk, chunk_stream, iter_payloads, parse_pcap

PCAP_SUFFIXES = (".pcap", ".cap")
MANIFEST_KEYS = ("path", "label", "family", "source")


@dataclass(frozen=True)
class SampleRecord:
    path: str
    label: str
    family: str
    source: str = ""

    def __post_init__(self):
        if self.label not in LABELS:
            raise InvalidLabel(f"label must be one of {LABELS}, got {self.label!r}")
        if self.family not in FAMILIES:
            raise InvalidLabel(f"family must be one of {FAMILIES}, got {self.family!r}")
        if (self.label == BENIGN) != (self.family == BENIGN):
            raise InvalidLabel(f"label {self.label!r} inconsistent with family {self.family!r}")


def _open(file, mode):
    return open(file, mode, encoding="utf-8") if isinstance(file, (str, os.PathLike)) else _NoClose(file)


class _NoClose:
    def __init__(self, fh):
        self.fh = fh

    def __enter__(self):
        return self.fh

    def __exit__(self, *exc):
        return False


def load_manifest(file) -> List[SampleRecord]:
    """Read a JSON Lines manifest (path or text file object). Blank lines are skipped."""
    records = []
    with _open(file, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("record is not a JSON object", lineno)
            keys = set(obj)
            if keys != set(MANIFEST_KEYS):
                extra = sorted(keys - set(MANIFEST_KEYS))
                missing = sorted(set(MANIFEST_KEYS) - keys)
                raise ParseError(f"unknown keys {extra}, missing keys {missing}", lineno)
            if not all(isinstance(obj[k], str) for k in MANIFEST_KEYS):
                raise ParseError("all manifest values must be strings", lineno)
            try:
                records.append(SampleRecord(**obj))
            except InvalidLabel as exc:
                raise InvalidLabel(f"line {lineno}: {exc}") from None
    return records


def manifest_line(record: SampleRecord) -> str:
    return json.dumps({k: getattr(record, k) for k in MANIFEST_KEYS})


def save_manifest(records: Sequence[SampleRecord], file, append: bool = False):
    with _open(file, "a" if append else "w") as fh:
        for r in records:
            fh.write(manifest_line(r) + "\n")


def record_chunks(record: SampleRecord, base_dir=".", chunk_capacity: int = DEFAULT_CHUNK_CAPACITY) -> List[PayloadChunk]:
    """Payload chunks of one sample file; pcap files by suffix, anything else as raw bytes."""
    path = record.path if os.path.isabs(record.path) else os.path.join(base_dir, record.path)
    with open(path, "rb") as fh:
        data = fh.read()
    source_id = os.path.splitext(os.path.basename(record.path))[0]
    if record.path.lower().endswith(PCAP_SUFFIXES):
        return chunk_stream(iter_payloads(parse_pcap(data)), chunk_capacity, source_id)
    return chunk_stream([data], chunk_capacity, source_id)


def split(records: Sequence, train_fraction: float = 0.7, seed: int = 0,
          key: Callable = lambda r: r.label) -> Tuple[list, list]:
    """Seeded shuffle, then cut at ``floor(train_fraction * n)``.

    If either side would miss a class, items are swapped across the cut
    (nearest the cut first) until both sides hold every class; the side sizes
    never change.
    """
    n = len(records)
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    if n < 2:
        raise TooFewRecords(f"need at least 2 records to split, got {n}")
    classes = {key(r) for r in records}
    for c in classes:
        if sum(1 for r in records if key(r) == c) < 2:
            raise TooFewRecords(f"class {c!r} has a single record; cannot appear on both sides")
    perm = list(np.random.default_rng(seed).permutation(n))
    cut = min(max(int(np.floor(train_fraction * n)), 1), n - 1)
    if min(cut, n - cut) < len(classes):
        raise TooFewRecords(f"a {cut}/{n - cut} split cannot hold all {len(classes)} classes on each side")
    train, test = perm[:cut], perm[cut:]

    def fix(side, other):
        for c in sorted(classes, key=str):
            if any(key(records[i]) == c for i in side):
                continue
            j = next(k for k, i in enumerate(other) if key(records[i]) == c)
            counts = {}
            for i in side:
                counts[key(records[i])] = counts.get(key(records[i]), 0) + 1
            k = next(k for k in range(len(side) - 1, -1, -1) if counts[key(records[side[k]])] > 1)
            side[k], other[j] = other[j], side[k]

    fix(train, test)
    fix(test, train)
    return [records[i] for i in train], [records[i] for i in test]


@dataclass(frozen=True)
class SynthProfile:
    """Target byte-class mix (Null, Printable, Control, Extended, Full) with relative jitter."""
    name: str
    frequencies: Tuple[float, float, float, float, float]
    jitter: float = 0.05
    family: str = "unknown"

    def validate(self):
        f = np.asarray(self.frequencies, dtype=float)
        if f.shape != (5,):
            raise BadProfile(f"{self.name}: need 5 class frequencies, got {f.shape}")
        if (f < 0).any() or abs(f.sum() - 1.0) > 1e-9:
            raise BadProfile(f"{self.name}: frequencies must be non-negative and sum to 1")
        if not 0 <= self.jitter < 1:
            raise BadProfile(f"{self.name}: jitter must be in [0, 1)")
        if self.family not in FAMILIES:
            raise BadProfile(f"{self.name}: unknown family {self.family!r}")

    @property
    def label(self) -> str:
        return BENIGN if self.family == BENIGN else LABELS[1]


_BUILTIN = (
    SynthProfile("benign", (0.10, 0.55, 0.15, 0.15, 0.05), 0.05, "benign"),
    SynthProfile("nullheavy", (0.45, 0.25, 0.10, 0.15, 0.05), 0.05, "backdoor"),
    SynthProfile("ddos", (0.10, 0.20, 0.55, 0.10, 0.05), 0.05, "ddos"),
    SynthProfile("whiteheavy", (0.10, 0.30, 0.10, 0.15, 0.35), 0.05, "botnet"),
)


def builtin_profiles() -> List[SynthProfile]:
    return list(_BUILTIN)


def get_profile(name: str) -> SynthProfile:
    for p in _BUILTIN:
        if p.name == name:
            return p
    raise BadProfile(f"unknown profile {name!r}; available: {[p.name for p in _BUILTIN]}")


def synth_chunks(profile: SynthProfile, count: int, chunk_len: int = DEFAULT_CHUNK_CAPACITY,
                 seed: int = 0) -> List[PayloadChunk]:
    """Generate ``count`` chunks of ``chunk_len`` bytes following ``profile``.

    Each chunk uses its own generator seeded from (seed, profile name, index),
    so any chunk can be regenerated independently of the others.
    """
    profile.validate()
    if count < 1:
        raise ValueError("count must be >= 1")
    if chunk_len < 100:
        raise ValueError("chunk_len must be >= 100")
    base = np.asarray(profile.frequencies, dtype=float)
    name_key = zlib.crc32(profile.name.encode())
    values = [CLASS_VALUES[c] for c in DATA_CLASSES]
    chunks = []
    for i in range(count):
        rng = np.random.default_rng([seed & 0xFFFFFFFF, name_key, i])
        f = base * (1.0 + rng.uniform(-profile.jitter, profile.jitter, size=5))
        f /= f.sum()
        cls = rng.choice(5, size=chunk_len, p=f)
        u = rng.random(chunk_len)
        out = np.empty(chunk_len, dtype=np.uint8)
        for c in range(5):
            mask = cls == c
            vals = values[c]
            out[mask] = vals[(u[mask] * len(vals)).astype(np.intp)]
        chunks.append(PayloadChunk(out.tobytes(), profile.name, i, 0.0))
    return chunks
