"""Byte-class images of network payloads and a small CNN that classifies them.

Payload bytes are split into five classes (null, printable, control,
extended, 0xFF), laid out along a Hilbert curve into a square image, and fed
to a two-convolution network that labels each image benign or malicious.
"""
from .byteclass import ByteClass, FeatureHistogram, class_color, classify_byte, histogram
from .cnn import (CnnModel, TrainConfig, backward, classify, encode_input, forward, init_model,
                  load_model, loss, save_model, train)
from .dataset import (SampleRecord, SynthProfile, builtin_profiles, load_manifest, save_manifest,
                      split, synth_chunks)
from .hilbert import VisImage, d2xy, layout, xy2d
from .metrics import (ConfusionMatrix, accuracy, confusion, f1, per_family_accuracy, precision,
                      recall)
from .pcap import (PayloadChunk, RawPacket, ReplaySchedule, build_schedule, chunk_stream,
                   extract_payload, parse_pcap, replay, write_pcap)
from .pipeline import Verdict, run_pipeline
from .png import emit_png

__version__ = "0.1.0"
