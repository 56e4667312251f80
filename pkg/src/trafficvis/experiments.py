"""End-to-end reproduction runs on the synthetic corpus.

``run_experiment`` is the headline run: build a labeled corpus from the
builtin profiles, split it, train, and score the held-out part.
``learning_curve`` retrains on nested, growing training sets against one
fixed test set. Early sets see only some malware families, which mimics a
detector that has not yet been shown every kind of attack.
"""
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import cnn
from .dataset import get_profile, split, synth_chunks
from .hilbert import DEFAULT_ORDER, layout
from .labels import BENIGN, MALICIOUS
from .metrics import ConfusionMatrix, confusion, per_family_accuracy, report_csv
from .pcap import PayloadChunk

DEFAULT_MIX = (("benign", 300), ("nullheavy", 100), ("ddos", 100), ("whiteheavy", 100))
DEFAULT_STAGES = (60, 120, 240, 420)
# families visible to the malicious half of each nested training set
DEFAULT_UNLOCKS = (("ddos",), ("ddos", "backdoor"), None, None)


@dataclass(frozen=True)
class LabeledChunk:
    chunk: PayloadChunk
    label: str
    family: str


def build_corpus(seed: int = 42, mix=DEFAULT_MIX, chunk_len: int = 4096) -> List[LabeledChunk]:
    corpus = []
    for name, count in mix:
        profile = get_profile(name) if isinstance(name, str) else name
        for c in synth_chunks(profile, count, chunk_len, seed):
            corpus.append(LabeledChunk(c, profile.label, profile.family))
    return corpus


def encode_chunks(chunks: Sequence, order: int = DEFAULT_ORDER) -> np.ndarray:
    """Stack one-hot encodings as uint8, shape (N, 6, side, side)."""
    side = 1 << order
    out = np.zeros((len(chunks), cnn.INPUT_CHANNELS, side, side), dtype=np.uint8)
    eye = np.eye(cnn.INPUT_CHANNELS, dtype=np.uint8)
    for i, c in enumerate(chunks):
        c = getattr(c, "chunk", c)
        out[i] = np.moveaxis(eye[layout(c, order).cells], -1, 0)
    return out


@dataclass
class RunResult:
    model: cnn.CnnModel
    trace: List[float]
    cm: ConfusionMatrix
    families: Dict[str, float]
    truth: List[str]
    predicted: List[str]
    p_malicious: np.ndarray
    report: str
    train_size: int = 0

    @property
    def model_bytes(self) -> bytes:
        return cnn.save_model(self.model)


def evaluate(model: cnn.CnnModel, test: Sequence[LabeledChunk], threshold: float = 0.5,
             x=None, positive_class: str = MALICIOUS):
    if x is None:
        x = encode_chunks(test, model.input_size.bit_length() - 1)
    predicted, p = cnn.predict_labels(model, x, threshold)
    truth = [s.label for s in test]
    cm = confusion(truth, predicted, positive_class)
    fams = per_family_accuracy((s.family, t, q) for s, t, q in zip(test, truth, predicted))
    return cm, fams, truth, predicted, p


def train_and_score(train: Sequence[LabeledChunk], test: Sequence[LabeledChunk], cfg: cnn.TrainConfig,
                    order: int = DEFAULT_ORDER, x_test=None, threshold: float = 0.5) -> RunResult:
    x_train = encode_chunks(train, order)
    model = cnn.init_model(cfg.seed, 1 << order)
    model, trace = cnn.train(model, x_train, [s.label for s in train], cfg)
    cm, fams, truth, predicted, p = evaluate(model, test, threshold, x_test)
    return RunResult(model, trace, cm, fams, truth, predicted, p, report_csv(cm, fams), len(train))


def run_experiment(seed: int = 42, iterations: int = 500, train_fraction: float = 0.7,
                   mix=DEFAULT_MIX, chunk_len: int = 4096, cfg: cnn.TrainConfig = None) -> Tuple[RunResult, list, list]:
    """Headline run. Returns the result plus the train and test sample lists."""
    corpus = build_corpus(seed, mix, chunk_len)
    train, test = split(corpus, train_fraction, seed)
    cfg = cfg or cnn.TrainConfig(iterations=iterations, seed=seed)
    return train_and_score(train, test, cfg), train, test


def nested_training_sets(train: Sequence[LabeledChunk], sizes=DEFAULT_STAGES,
                         unlocks=DEFAULT_UNLOCKS) -> List[List[LabeledChunk]]:
    """Growing training sets, each a superset of the previous one.

    Every stage holds ``size // 2`` benign samples and fills the rest with
    malicious samples, cycling through the families unlocked at that stage
    (``None`` unlocks all). A stage larger than the pool takes the whole pool.
    """
    benign = [s for s in train if s.label == BENIGN]
    malicious = [s for s in train if s.label != BENIGN]
    fam_order = list(dict.fromkeys(s.family for s in malicious))
    by_fam = {f: [s for s in malicious if s.family == f] for f in fam_order}
    taken = {f: 0 for f in fam_order}
    chosen_b: List[LabeledChunk] = []
    chosen_m: List[LabeledChunk] = []
    stages = []
    for size, unlocked in zip(sizes, unlocks):
        fams = fam_order if unlocked is None else [f for f in fam_order if f in unlocked]
        size = min(size, len(train))
        want_m = size - min(size // 2, len(benign))
        while len(chosen_m) < want_m:
            progressed = False
            for f in sorted(fams, key=lambda f: taken[f]):
                if len(chosen_m) >= want_m:
                    break
                if taken[f] < len(by_fam[f]):
                    chosen_m.append(by_fam[f][taken[f]])
                    taken[f] += 1
                    progressed = True
            if not progressed:
                break
        # benign tops up whatever the unlocked families could not supply
        chosen_b = benign[:max(size - len(chosen_m), len(chosen_b))]
        stages.append(chosen_b + chosen_m)
    return stages


def learning_curve(train: Sequence[LabeledChunk], test: Sequence[LabeledChunk], seed: int = 42,
                   iterations: int = 500, sizes=DEFAULT_STAGES, unlocks=DEFAULT_UNLOCKS,
                   order: int = DEFAULT_ORDER) -> List[RunResult]:
    x_test = encode_chunks(test, order)
    results = []
    for stage in nested_training_sets(train, sizes, unlocks):
        cfg = cnn.TrainConfig(iterations=iterations, seed=seed)
        results.append(train_and_score(stage, test, cfg, order, x_test))
    return results
