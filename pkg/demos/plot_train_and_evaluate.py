"""
Training the classifier on synthetic traffic
============================================

Generate benign and malicious chunks from the builtin byte-class profiles,
train the small CNN and score it on a held-out split. A short run keeps
this quick; the full 500-step run reaches perfect separation on this corpus.
"""

from trafficvis import cnn
from trafficvis.dataset import builtin_profiles, split
from trafficvis.experiments import build_corpus, encode_chunks, evaluate
from trafficvis.metrics import report_csv, summary

for p in builtin_profiles():
    print(f"{p.name:<11} {p.family:<9} {p.frequencies}")

mix = (("benign", 60), ("nullheavy", 20), ("ddos", 20), ("whiteheavy", 20))
corpus = build_corpus(seed=7, mix=mix)
train, test = split(corpus, 0.7, seed=7)
print(f"{len(train)} train / {len(test)} test chunks")

x = encode_chunks(train)
cfg = cnn.TrainConfig(iterations=60, seed=7)
model, trace = cnn.train(cnn.init_model(7), x, [s.label for s in train], cfg)
print(f"loss {trace[0]:.3f} -> {trace[-1]:.3f}")

cm, families, *_ = evaluate(model, test)
print(summary(cm))
print(report_csv(cm, families))
