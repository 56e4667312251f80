"""Streaming detection: chunk source -> render/classify workers -> ordered verdicts.

One producer thread pulls chunks from the source into a bounded queue,
``workers`` threads turn chunks into verdicts, and the consumer side
re-sequences results so verdicts come out in source order. The queue bound
is the backpressure: a slow consumer stalls the workers, full queues stall
the producer.
"""
import json
import logging
import os
import queue
import threading
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

from . import cnn
from .byteclass import FeatureHistogram, histogram
from .errors import SourceFailure, TrafficVisError
from .hilbert import layout

log = logging.getLogger(__name__)

DEFAULT_QUEUE_CAPACITY = 256

_END = object()


@dataclass(frozen=True)
class Verdict:
    source_id: str
    seq_no: int
    label: str
    p_malicious: float
    histogram: FeatureHistogram
    ts: float = 0.0

    def to_json(self) -> str:
        return json.dumps({"source_id": self.source_id, "seq": self.seq_no, "label": self.label,
                           "p_malicious": self.p_malicious, "hist": list(self.histogram.counts)})


def _judge(chunk, model, order, threshold) -> Verdict:
    img = layout(chunk, order)
    label, p = cnn.classify(model, img, threshold)
    return Verdict(chunk.source_id, chunk.seq_no, label, p, histogram(chunk.bytes), chunk.ts)


def _quarantine(reject_dir, index, chunk, exc):
    log.warning("chunk %d (%s #%s) rejected: %s", index, getattr(chunk, "source_id", "?"),
                getattr(chunk, "seq_no", "?"), exc)
    if reject_dir is None:
        return
    os.makedirs(reject_dir, exist_ok=True)
    name = f"{getattr(chunk, 'source_id', '') or 'chunk'}_{index}.bin"
    with open(os.path.join(reject_dir, name), "wb") as fh:
        fh.write(bytes(getattr(chunk, "bytes", b"")))


def run_pipeline(source: Iterable, model: cnn.CnnModel, order: int = 6, threshold: float = 0.5, *,
                 workers: int = 2, queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
                 reject_dir: Optional[str] = None) -> Iterator[Verdict]:
    """Yield one Verdict per well-formed chunk of ``source``, in source order.

    Chunks that fail to render (empty, too large for ``order``) are logged,
    optionally written to ``reject_dir``, and skipped. If the source raises,
    chunks already read are still judged and yielded before ``SourceFailure``.
    """
    if (1 << order) != model.input_size:
        raise ValueError(f"order {order} does not match model input size {model.input_size}")
    workers = max(1, workers)
    inbox = queue.Queue(maxsize=queue_capacity)
    outbox = queue.Queue(maxsize=queue_capacity)
    stop = threading.Event()
    failure = []

    def put(q, item):
        while not stop.is_set():
            try:
                q.put(item, timeout=0.05)
                return True
            except queue.Full:
                pass
        return False

    def produce():
        try:
            for i, chunk in enumerate(source):
                if not put(inbox, (i, chunk)):
                    return
        except Exception as exc:
            failure.append(exc)
        finally:
            for _ in range(workers):
                put(inbox, _END)

    def work():
        while True:
            try:
                item = inbox.get(timeout=0.05)
            except queue.Empty:
                if stop.is_set():
                    return
                continue
            if item is _END:
                put(outbox, _END)
                return
            i, chunk = item
            try:
                if not len(chunk.bytes):
                    raise TrafficVisError("empty chunk")
                result = _judge(chunk, model, order, threshold)
            except Exception as exc:
                result = exc
            if not put(outbox, (i, chunk, result)):
                return

    threads = [threading.Thread(target=produce, name="pipeline-source", daemon=True)]
    threads += [threading.Thread(target=work, name=f"pipeline-worker-{k}", daemon=True) for k in range(workers)]
    for t in threads:
        t.start()

    pending = {}
    next_index = 0
    finished = 0
    try:
        while finished < workers or pending:
            while next_index in pending:
                chunk, result = pending.pop(next_index)
                next_index += 1
                if isinstance(result, Exception):
                    _quarantine(reject_dir, next_index - 1, chunk, result)
                else:
                    yield result
            if finished == workers:
                break
            item = outbox.get()
            if item is _END:
                finished += 1
                continue
            i, chunk, result = item
            pending[i] = (chunk, result)
    finally:
        stop.set()
        for t in threads:
            t.join()
    if failure:
        raise SourceFailure(f"chunk source failed: {failure[0]}", failure[0]) from failure[0]
