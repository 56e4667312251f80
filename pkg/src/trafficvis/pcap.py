"""Reading, writing and replaying classic libpcap capture files.

Layout of a capture file::

    global header (24 bytes) | record header (16) | data | record header | data | ...

Only the classic format is handled (not pcapng). Byte order and timestamp
resolution are taken from the magic number.
"""
import logging
import queue
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple

from .errors import (BadMagic, MalformedHeader, NonPositiveSpeed, SinkClosed,
                     TruncatedHeader, TruncatedRecord, UnsupportedLinkType)

log = logging.getLogger(__name__)

MAGIC_USEC = 0xA1B2C3D4
MAGIC_NSEC = 0xA1B23C4D
GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101

DEFAULT_CHUNK_CAPACITY = 4096

# magic as read little-endian -> (struct byte order, ticks per second)
_MAGICS = {
    MAGIC_USEC: ("<", 1_000_000),
    0xD4C3B2A1: (">", 1_000_000),
    MAGIC_NSEC: ("<", 1_000_000_000),
    0x4D3CB2A1: (">", 1_000_000_000),
}


class UnsupportedProtocol(MalformedHeader):
    """Frame carries something other than IPv4/IPv6 (ARP, LLDP, ...)."""


@dataclass(frozen=True)
class RawPacket:
    ts_sec: int
    ts_frac: int
    captured_len: int
    original_len: int
    data: bytes
    link_type: int = LINKTYPE_ETHERNET
    ticks_per_second: int = 1_000_000

    def __post_init__(self):
        if self.captured_len != len(self.data):
            raise ValueError("captured_len must equal len(data)")
        if self.captured_len > self.original_len:
            raise ValueError("captured_len exceeds original_len")

    @property
    def timestamp(self) -> float:
        return self.ts_sec + self.ts_frac / self.ticks_per_second


@dataclass(frozen=True)
class PayloadChunk:
    bytes: bytes
    source_id: str = ""
    seq_no: int = 0
    ts: float = 0.0

    def __len__(self):
        return len(self.bytes)


@dataclass
class ReplaySchedule:
    speed_multiplier: float
    items: List[Tuple[float, PayloadChunk]] = field(default_factory=list)

    @property
    def delays(self) -> List[float]:
        return [d for d, _ in self.items]

    @property
    def chunks(self) -> List[PayloadChunk]:
        return [c for _, c in self.items]

    @property
    def duration(self) -> float:
        return sum(self.delays)


def parse_pcap(file_bytes: bytes) -> List[RawPacket]:
    """Parse a whole capture held in memory into packets, in file order.

    A record whose header or data runs past the end of the buffer raises
    ``TruncatedRecord``; the packets parsed before it are on the exception.
    """
    buf = memoryview(file_bytes)
    if len(buf) < 4:
        raise TruncatedHeader(f"need {GLOBAL_HEADER_LEN} header bytes, got {len(buf)}")
    magic = struct.unpack_from("<I", buf, 0)[0]
    if magic not in _MAGICS:
        raise BadMagic(f"not a pcap file (magic 0x{magic:08x})")
    if len(buf) < GLOBAL_HEADER_LEN:
        raise TruncatedHeader(f"need {GLOBAL_HEADER_LEN} header bytes, got {len(buf)}")
    endian, ticks = _MAGICS[magic]
    _, _vmaj, _vmin, _zone, _sigfigs, _snaplen, network = struct.unpack_from(endian + "IHHiIII", buf, 0)
    rec = struct.Struct(endian + "IIII")

    packets = []
    offset = GLOBAL_HEADER_LEN
    while offset < len(buf):
        if len(buf) - offset < RECORD_HEADER_LEN:
            raise TruncatedRecord(
                f"record header at offset {offset} cut short ({len(buf) - offset} of {RECORD_HEADER_LEN} bytes)",
                packets, offset)
        ts_sec, ts_frac, incl_len, orig_len = rec.unpack_from(buf, offset)
        start = offset + RECORD_HEADER_LEN
        if incl_len > len(buf) - start:
            raise TruncatedRecord(
                f"record at offset {offset} claims {incl_len} bytes, only {len(buf) - start} remain",
                packets, offset)
        data = bytes(buf[start:start + incl_len])
        try:
            packets.append(RawPacket(ts_sec, ts_frac, incl_len, orig_len, data, network, ticks))
        except ValueError as exc:
            raise MalformedHeader(f"record at offset {offset}: {exc}") from exc
        offset = start + incl_len
    return packets


def looks_like_pcap(head: bytes) -> bool:
    """True if ``head`` starts with one of the classic pcap magic numbers."""
    return len(head) >= 4 and struct.unpack_from("<I", head, 0)[0] in _MAGICS


def read_pcap(path) -> List[RawPacket]:
    with open(path, "rb") as fh:
        return parse_pcap(fh.read())


def write_pcap(packets: Sequence[RawPacket], link_type: Optional[int] = None, *,
               nanosecond: bool = False, big_endian: bool = False, snaplen: int = 262144) -> bytes:
    """Serialize packets to a classic pcap byte string."""
    if link_type is None:
        link_type = packets[0].link_type if packets else LINKTYPE_ETHERNET
    endian = ">" if big_endian else "<"
    magic = MAGIC_NSEC if nanosecond else MAGIC_USEC
    out = [struct.pack(endian + "IHHiIII", magic, 2, 4, 0, 0, snaplen, link_type)]
    for p in packets:
        out.append(struct.pack(endian + "IIII", p.ts_sec, p.ts_frac, p.captured_len, p.original_len))
        out.append(p.data)
    return b"".join(out)


def _ip_payload(ip: bytes) -> bytes:
    if not ip:
        raise MalformedHeader("empty IP packet")
    version = ip[0] >> 4
    if version == 4:
        ihl = (ip[0] & 0x0F) * 4
        if ihl < 20:
            raise MalformedHeader(f"IPv4 IHL {ihl // 4} < 5")
        if len(ip) < ihl:
            raise MalformedHeader(f"IPv4 header needs {ihl} bytes, {len(ip)} captured")
        total_len = struct.unpack_from("!H", ip, 2)[0]
        if total_len < ihl:
            raise MalformedHeader(f"IPv4 total length {total_len} < header length {ihl}")
        proto = ip[9]
        frag_offset = struct.unpack_from("!H", ip, 6)[0] & 0x1FFF
        # min() drops Ethernet trailer padding and tolerates snaplen truncation
        body = ip[ihl:min(total_len, len(ip))]
        if frag_offset:
            return bytes(body)
    elif version == 6:
        if len(ip) < 40:
            raise MalformedHeader(f"IPv6 header needs 40 bytes, {len(ip)} captured")
        plen = struct.unpack_from("!H", ip, 4)[0]
        proto = ip[6]
        body = ip[40:40 + plen]
    else:
        raise MalformedHeader(f"unknown IP version {version}")

    if proto == 6:
        if len(body) < 20:
            raise MalformedHeader(f"TCP header needs 20 bytes, {len(body)} present")
        doff = (body[12] >> 4) * 4
        if doff < 20 or doff > len(body):
            raise MalformedHeader(f"TCP data offset {doff} inconsistent with {len(body)} bytes")
        return bytes(body[doff:])
    if proto == 17:
        if len(body) < 8:
            raise MalformedHeader(f"UDP header needs 8 bytes, {len(body)} present")
        return bytes(body[8:])
    return bytes(body)


def extract_payload(pkt: RawPacket) -> bytes:
    """Strip link, network and transport headers; return the application bytes."""
    data = pkt.data
    if pkt.link_type == LINKTYPE_RAW:
        return _ip_payload(data)
    if pkt.link_type != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"link type {pkt.link_type} (only 1 and 101 are handled)")
    if len(data) < 14:
        raise MalformedHeader(f"Ethernet frame of {len(data)} bytes")
    off = 12
    ethertype = struct.unpack_from("!H", data, off)[0]
    while ethertype in (0x8100, 0x88A8):
        off += 4
        if len(data) < off + 2:
            raise MalformedHeader("VLAN tag cut short")
        ethertype = struct.unpack_from("!H", data, off)[0]
    if ethertype not in (0x0800, 0x86DD):
        raise UnsupportedProtocol(f"ethertype 0x{ethertype:04x}")
    return _ip_payload(data[off + 2:])


def iter_payloads(packets: Iterable[RawPacket], skip_unsupported: bool = True) -> Iterator[Tuple[float, bytes]]:
    """Yield ``(timestamp, payload)`` per packet, skipping non-IP frames if asked."""
    for i, pkt in enumerate(packets):
        try:
            yield pkt.timestamp, extract_payload(pkt)
        except UnsupportedProtocol as exc:
            if not skip_unsupported:
                raise
            log.debug("packet %d skipped: %s", i, exc)


def chunk_stream(payloads: Iterable, chunk_capacity: int = DEFAULT_CHUNK_CAPACITY,
                 source_id: str = "") -> List[PayloadChunk]:
    """Concatenate payloads and cut them into chunks of ``chunk_capacity`` bytes.

    ``payloads`` items are either raw byte strings or ``(timestamp, bytes)``
    pairs. A chunk takes the timestamp of the payload supplying its first byte.
    The last chunk may be short; empty payloads contribute nothing.
    """
    if chunk_capacity < 1:
        raise ValueError("chunk_capacity must be >= 1")
    chunks = []
    buf = bytearray()
    buf_ts = 0.0
    for item in payloads:
        if isinstance(item, (bytes, bytearray, memoryview)):
            ts, data = 0.0, bytes(item)
        else:
            ts, data = item
        pos = 0
        while pos < len(data):
            if not buf:
                buf_ts = ts
            take = min(chunk_capacity - len(buf), len(data) - pos)
            buf += data[pos:pos + take]
            pos += take
            if len(buf) == chunk_capacity:
                chunks.append(PayloadChunk(bytes(buf), source_id, len(chunks), buf_ts))
                buf.clear()
    if buf:
        chunks.append(PayloadChunk(bytes(buf), source_id, len(chunks), buf_ts))
    return chunks


def build_schedule(chunks: Sequence[PayloadChunk], speed_multiplier: float = 1.0) -> ReplaySchedule:
    if not speed_multiplier > 0:
        raise NonPositiveSpeed(f"speed multiplier must be > 0, got {speed_multiplier}")
    items = []
    prev = None
    for c in chunks:
        delay = 0.0 if prev is None else max(0.0, c.ts - prev) / speed_multiplier
        items.append((delay, c))
        prev = c.ts
    return ReplaySchedule(speed_multiplier, items)


def replay(schedule: ReplaySchedule, sink: Callable[[PayloadChunk], object], *,
           clock: Callable[[], float] = time.monotonic,
           sleep: Callable[[float], None] = time.sleep) -> int:
    """Deliver the scheduled chunks to ``sink`` in order, honoring the delays.

    Deadlines are measured from the start of replay so per-gap jitter does
    not accumulate. A sink signals it has gone away by raising ``SinkClosed``
    or ``BrokenPipeError``.
    """
    delivered = 0
    deadline = clock()
    for delay, chunk in schedule.items:
        deadline += delay
        remaining = deadline - clock()
        if remaining > 0:
            sleep(remaining)
        try:
            sink(chunk)
        except (SinkClosed, BrokenPipeError):
            raise SinkClosed(delivered) from None
        delivered += 1
    return delivered


_DONE = object()


class ReplaySource:
    """Chunk source that replays a schedule on a producer thread.

    Chunks pass through a bounded FIFO; the producer blocks when it is full.
    Iterating yields the chunks in schedule order.
    """

    def __init__(self, schedule: ReplaySchedule, maxsize: int = 256):
        self.schedule = schedule
        self.maxsize = maxsize
        self.delivered = 0
        self._queue = queue.Queue(maxsize=maxsize)
        self._closed = threading.Event()
        self._error = None

    def _sink(self, chunk):
        while True:
            if self._closed.is_set():
                raise SinkClosed(self.delivered)
            try:
                self._queue.put(chunk, timeout=0.05)
                return
            except queue.Full:
                continue

    def _produce(self):
        try:
            self.delivered = replay(self.schedule, self._sink)
        except SinkClosed as exc:
            self.delivered = exc.delivered
        except BaseException as exc:  # surfaced to the consumer
            self._error = exc
        finally:
            while not self._closed.is_set():
                try:
                    self._queue.put(_DONE, timeout=0.05)
                    break
                except queue.Full:
                    continue

    def __iter__(self):
        thread = threading.Thread(target=self._produce, name="replay", daemon=True)
        thread.start()
        try:
            while True:
                item = self._queue.get()
                if item is _DONE:
                    break
                yield item
        finally:
            self._closed.set()
            thread.join()
        if self._error is not None:
            raise self._error


def hexdump(data: bytes, width: int = 16) -> str:
    """Plain hex text, ``width`` bytes per line."""
    return "\n".join(data[i:i + width].hex(" ") for i in range(0, len(data), width)) + ("\n" if data else "")
