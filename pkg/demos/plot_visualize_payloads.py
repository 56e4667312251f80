"""
From packet capture to picture
==============================

Build a tiny capture in memory, pull the transport payloads out of it,
cut them into chunks and render each chunk as a PNG.
"""

import os
import struct
import tempfile

from trafficvis.byteclass import histogram
from trafficvis.hilbert import layout
from trafficvis.pcap import RawPacket, chunk_stream, iter_payloads, parse_pcap, write_pcap
from trafficvis.png import emit_png


def udp_frame(payload):
    udp = struct.pack("!HHHH", 1234, 53, 8 + len(payload), 0) + payload
    ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(udp), 0, 0, 64, 17, 0,
                     bytes([10, 0, 0, 1]), bytes([10, 0, 0, 2]))
    return b"\x02" * 6 + b"\x04" * 6 + b"\x08\x00" + ip + udp


payloads = [b"GET /index.html HTTP/1.1\r\n" * 40, bytes(range(256)) * 8, b"\x00" * 3000]
frames = [udp_frame(p) for p in payloads]
packets = [RawPacket(1_700_000_000 + i, 0, len(f), len(f), f) for i, f in enumerate(frames)]
blob = write_pcap(packets)
print(f"capture: {len(blob)} bytes, {len(packets)} packets")

# Parsing gives the frames back; iter_payloads strips Ethernet, IP and UDP headers.
extracted = list(iter_payloads(parse_pcap(blob)))
print("payload sizes:", [len(p) for _, p in extracted])

# 4096 bytes fill one 64x64 image.
chunks = chunk_stream(extracted, 4096, "demo")
out_dir = tempfile.mkdtemp(prefix="trafficvis-")
for c in chunks:
    h = histogram(c.bytes)
    path = os.path.join(out_dir, f"{c.source_id}_{c.seq_no}.png")
    with open(path, "wb") as fh:
        fh.write(emit_png(layout(c), scale=4))
    print(path, h.csv_row())
