"""
Replaying traffic through the detector
======================================

A ReplaySource re-emits chunks with their recorded spacing (here sped up
50x) and run_pipeline classifies them on worker threads, yielding verdicts
in arrival order.
"""

import time

from trafficvis import cnn
from trafficvis.dataset import get_profile, synth_chunks
from trafficvis.experiments import encode_chunks
from trafficvis.pcap import PayloadChunk, ReplaySource, build_schedule
from trafficvis.pipeline import run_pipeline

# A small 16x16 detector, trained for a few seconds.
benign = synth_chunks(get_profile("benign"), 40, 256, seed=1)
ddos = synth_chunks(get_profile("ddos"), 40, 256, seed=1)
model, _ = cnn.train(cnn.init_model(0, 16), encode_chunks(benign + ddos, 4),
                     ["benign"] * 40 + ["malicious"] * 40, cnn.TrainConfig(iterations=150))

# Interleave fresh samples, 0.1 s apart in capture time.
fresh = synth_chunks(get_profile("benign"), 4, 256, seed=9) + synth_chunks(get_profile("ddos"), 4, 256, seed=9)
stream = [PayloadChunk(c.bytes, "tap0", i, 0.1 * i) for i, c in enumerate(fresh[::2] + fresh[1::2])]
schedule = build_schedule(stream, speed_multiplier=50)
print(f"replay lasts {schedule.duration:.3f}s")

t0 = time.monotonic()
for v in run_pipeline(ReplaySource(schedule), model, order=4, workers=2):
    print(f"{time.monotonic() - t0:6.3f}s  #{v.seq_no}  {v.label:<9}  p={v.p_malicious:.3f}")
