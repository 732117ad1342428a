"""
Synthetic corpus and masked-token pre-training
==============================================

Draw a small corpus of random compositions, turn each into a token
sequence and pre-train a two-layer encoder with the masked-token objective.
"""

import math

from heaformer.datagen import GeneratorConfig, generate_corpus
from heaformer.encoder import EncoderConfig, TrainConfig, pretrain, pretraining_texts

# half the draws are equimolar, the rest get random coefficients in [0.1, 2]
corpus = generate_corpus(GeneratorConfig(corpus_size=200, seed=5))
print("first entries:")
for text, fv in corpus[:3]:
    print(f"  {text:<45} S_mix={fv.mixing_entropy:.2f}")

# composition tokens only; pass True to append quantized descriptors
texts, _ = pretraining_texts(corpus, use_features=False)

# zero heads start from uniform logits, so the first loss is ln |V|
cfg = EncoderConfig(n_layers=2, n_heads=4, d_model=32, d_ff=64, max_len=24)
tcfg = TrainConfig(learning_rate=3e-3, epochs=30, batch_size=16)
state, vocab, hist = pretrain(texts, cfg, tcfg, zero_heads=True)

print(f"\nvocabulary size {len(vocab)}, ln|V| = {math.log(len(vocab)):.3f}")
print(f"validation loss before training {hist.initial_val_loss:.3f}")
for epoch in (1, 5, 10, 20, 30):
    print(f"  epoch {epoch:2d}: train {hist.train_loss[epoch - 1]:.3f}  val {hist.val_loss[epoch - 1]:.3f}")
print(f"best checkpoint at epoch {hist.best_epoch}")
