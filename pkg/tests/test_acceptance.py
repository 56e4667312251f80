"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict with the measured numbers;
the lines are printed as they happen and again in the terminal summary.
Run just this module with ``pytest tests/test_acceptance.py -v``.
"""
import io
import time

import numpy as np
import pytest
from PIL import Image

from packets import eth_ipv4_udp, reference_pcap
from test_cnn import gradient_check
from test_pcap import _random_packets
from trafficvis.byteclass import PALETTE, ByteClass, classify_byte, histogram
from trafficvis.experiments import learning_curve, run_experiment
from trafficvis.hilbert import d2xy, xy2d
from trafficvis.hilbert import layout
from trafficvis.labels import MALWARE_FAMILIES
from trafficvis.metrics import accuracy, f1, f1_from
from trafficvis.pcap import extract_payload, parse_pcap, write_pcap
from trafficvis.png import emit_png

pytestmark = pytest.mark.slow

RESULTS = []


def verdict(tag, ok, detail, capsys=None):
    line = f"{tag:<5} {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)
    assert ok, line


@pytest.fixture(scope="module")
def headline():
    t0 = time.monotonic()
    result, train, test = run_experiment(seed=42, iterations=500)
    return result, train, test, time.monotonic() - t0


@pytest.fixture(scope="module")
def curve(headline):
    _, train, test, _ = headline
    return learning_curve(train, test, seed=42, iterations=500)


def fn_rate(cm):
    return cm.fn / (cm.tp + cm.fn)


def test_ac01_headline_accuracy(headline, capsys):
    result, _, test, secs = headline
    a, f = accuracy(result.cm), f1(result.cm)
    ok = a >= 0.90 and abs(f - a) <= 0.03 and secs <= 600
    verdict("AC1", ok, f"accuracy={a:.4f} (>=0.90) f1={f:.4f} |f1-a|={abs(f - a):.4f} (<=0.03) "
                       f"n_test={len(test)} runtime={secs:.0f}s (<=600s)", capsys)


def test_ac02_f1_formula(capsys):
    v = f1_from(0.9167, 0.9103)
    verdict("AC2", abs(v - 0.9135) <= 1e-4, f"f1(0.9167, 0.9103)={v:.6f} (0.9135 +/- 1e-4)", capsys)


def test_ac03_hilbert_curve(capsys):
    t0 = time.monotonic()
    violations = 0
    for order in range(1, 7):
        side, n = 1 << order, 4 ** order
        pts = [d2xy(order, d) for d in range(n)]
        violations += n - len(set(pts))
        violations += sum(not (0 <= x < side and 0 <= y < side) for x, y in pts)
        violations += sum(xy2d(order, x, y) != d for d, (x, y) in enumerate(pts))
        violations += sum(abs(x1 - x0) + abs(y1 - y0) != 1 for (x0, y0), (x1, y1) in zip(pts, pts[1:]))
    secs = time.monotonic() - t0
    verdict("AC3", violations == 0 and secs < 5, f"orders 1-6 violations={violations} runtime={secs:.2f}s (<5s)", capsys)


def test_ac04_byte_class_partition(capsys):
    def expected(b):
        if b == 0x00:
            return ByteClass.NULL
        if b == 0xFF:
            return ByteClass.FULL
        if 0x20 <= b <= 0x7E:
            return ByteClass.PRINTABLE
        return ByteClass.CONTROL if b < 0x80 else ByteClass.EXTENDED
    wrong = [b for b in range(256) if classify_byte(b) != expected(b)]
    boundaries = {0x00: ByteClass.NULL, 0x1F: ByteClass.CONTROL, 0x20: ByteClass.PRINTABLE,
                  0x7E: ByteClass.PRINTABLE, 0x7F: ByteClass.CONTROL, 0xFF: ByteClass.FULL}
    bad_edges = [hex(b) for b, c in boundaries.items() if classify_byte(b) != c]
    sizes = np.bincount([classify_byte(b) for b in range(256)], minlength=6)
    ok = not wrong and not bad_edges and sizes.sum() == 256 and sizes[ByteClass.PADDING] == 0
    verdict("AC4", ok, f"misclassified={len(wrong)} boundary_errors={bad_edges} class_sizes={sizes.tolist()[:5]}", capsys)


def test_ac05_pixel_byte_equivalence(capsys):
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 4097))
        data = rng.integers(0, 256, n, dtype=np.uint8).tobytes()
        rgb = np.asarray(Image.open(io.BytesIO(emit_png(layout(data, 6)))))
        counts = [int((rgb == PALETTE[c]).all(axis=-1).sum()) for c in ByteClass]
        pad = counts[ByteClass.PADDING]
        mismatches += counts[:5] != list(histogram(data).counts) or pad != 4096 - n
    verdict("AC5", mismatches == 0, f"1000 chunks, mismatched={mismatches}", capsys)


def test_ac06_gradient_check(capsys):
    worst, checked = gradient_check(seed=0, samples=200, size=8)
    verdict("AC6", checked == 200 and worst < 1e-3,
            f"params={checked} max_rel_err={worst:.2e} (<1e-3)", capsys)


def test_ac07_learning_curve_recall(curve, capsys):
    recalls = [r.cm.tp / (r.cm.tp + r.cm.fn) for r in curve]
    sizes = [r.train_size for r in curve]
    ok = all(b >= a for a, b in zip(recalls, recalls[1:])) and recalls[-1] - recalls[0] >= 0.15
    verdict("AC7", ok, f"sizes={sizes} malicious_recall={[round(r, 4) for r in recalls]} "
                       f"rise={recalls[-1] - recalls[0]:+.4f} (>=+0.15, non-decreasing)", capsys)


def test_ac08_ddos_separability(headline, capsys):
    fams = headline[0].families
    mal = [fams[f] for f in MALWARE_FAMILIES if f in fams]
    ok = "ddos" in fams and fams["ddos"] >= np.mean(mal)
    verdict("AC8", ok, f"ddos={fams.get('ddos', float('nan')):.4f} mean_malicious={np.mean(mal):.4f} "
                       f"families={ {k: round(v, 4) for k, v in fams.items()} }", capsys)


def test_ac09_false_negative_decay(curve, capsys):
    first, last = fn_rate(curve[0].cm), fn_rate(curve[-1].cm)
    ok = first > 0 and last * 2 <= first
    verdict("AC9", ok, f"fn_rate first={first:.4f} ({curve[0].cm.fn}/{curve[0].cm.tp + curve[0].cm.fn}) "
                       f"last={last:.4f} ({curve[-1].cm.fn}/{curve[-1].cm.tp + curve[-1].cm.fn}) (factor>=2)", capsys)


def test_ac10_determinism(headline, capsys):
    again, _, _ = run_experiment(seed=42, iterations=500)
    first = headline[0]
    same_model = again.model_bytes == first.model_bytes
    same_report = again.report == first.report
    verdict("AC10", same_model and same_report,
            f"model_bytes_identical={same_model} ({len(first.model_bytes)} B) report_identical={same_report}", capsys)


def test_ac11_pcap_fixture_and_roundtrip(capsys):
    payloads = [b"hello", b"\x00\x01\x02\xff", b"third payload"]
    blob = reference_pcap([(i, 0, eth_ipv4_udp(p)) for i, p in enumerate(payloads)])
    fixture_ok = [extract_payload(p) for p in parse_pcap(blob)] == payloads
    rng = np.random.default_rng(11)
    failures = 0
    for _ in range(500):
        link = int(rng.choice([1, 101, 228]))
        nano = bool(rng.integers(0, 2))
        pkts = _random_packets(rng, link, 10**9 if nano else 10**6)
        failures += parse_pcap(write_pcap(pkts, link, nanosecond=nano, big_endian=bool(rng.integers(0, 2)))) != pkts
    verdict("AC11", fixture_ok and failures == 0, f"fixture_ok={fixture_ok} roundtrip_failures={failures}/500", capsys)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
