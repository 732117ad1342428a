"""Hand-weighted one-layer, one-head model and a manual attention computation."""
import math

import numpy as np

from heaformer.encoder import EncoderConfig, Model, init_state
from heaformer.tokenization import build_vocab, encode


def hand_model():
    vocab = build_vocab(["Co1 Fe1 Ni1"])
    d = 2
    cfg = EncoderConfig(n_layers=1, n_heads=1, d_model=d, d_ff=2, max_len=4, vocab_size=len(vocab))
    state = init_state(cfg)
    p = state.params
    p["tok_emb"] = np.array([[0.0, 0.0], [0.1, 0.1], [0.3, -0.2], [0.0, 0.0],
                             [1.0, 0.2], [-0.4, 0.9], [0.5, -0.7]])
    p["pos_emb"] = np.array([[0.05, 0.0], [0.0, 0.1], [-0.1, 0.0], [0.2, 0.2]])
    p["seg_emb"] = np.array([0.01, -0.02])
    p["layer1.wq"] = np.array([[0.8, -0.3], [0.4, 1.1]])
    p["layer1.wk"] = np.array([[1.2, 0.5], [-0.6, 0.7]])
    return Model(state, vocab)


def manual_matrix(model, text="Co1 Fe1 Ni1"):
    p = model.state.params
    seq = encode(text, model.vocab, model.state.config.max_len)
    n = int(seq.attention_mask.sum())
    H = [p["tok_emb"][seq.ids[i]] + p["pos_emb"][i] + p["seg_emb"] for i in range(n)]
    Q = [h @ p["layer1.wq"] for h in H]
    K = [h @ p["layer1.wk"] for h in H]
    d = len(H[0])
    A = np.zeros((n, n))
    for i in range(n):
        e = [math.exp(float(Q[i] @ K[j]) / math.sqrt(d)) for j in range(n)]
        A[i] = [v / sum(e) for v in e]
    # element positions 1..3 in alphabetical order
    M = np.full((3, 3), np.nan)
    for a in range(3):
        for b in range(3):
            if a != b:
                M[a, b] = 0.5 * (A[a + 1, b + 1] + A[b + 1, a + 1])
    return M
