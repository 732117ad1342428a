"""Bidirectional transformer encoder with MLM and regression heads.

Everything is plain numpy in float64 with explicit backward passes. Layer
indices are 1-based throughout (``layer1`` is closest to the embeddings), the
same numbering used when selecting which layers to fine-tune.
"""
from __future__ import annotations

import copy
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import numerics as nx
from .evaluate import (
    FoldReport,
    ScalerParams,
    apply_scaler,
    fit_scaler,
    kfold_split,
    make_fold_report,
    metrics,
)
from .tokenization import (
    MASK_ID,
    TokenSequence,
    Vocabulary,
    build_vocab,
    compose_input,
    encode,
    mask_tokens,
)

log = logging.getLogger(__name__)

ALL = "all"
LAYER_PARAMS = ("wq", "wk", "wv", "wo", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b")
ATTENTION_PARAMS = ("wq", "wk", "wv", "wo", "ln1_g", "ln1_b")

# named rng substreams hanging off TrainConfig.seed
_SPLIT, _SHUFFLE, _MASK, _VALMASK = 0, 1, 2, 3


@dataclass
class EncoderConfig:
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    max_len: int = 64
    vocab_size: int = 0
    mask_prob: float = 0.15
    seed: int = 0

    def __post_init__(self):
        for name in ("n_layers", "n_heads", "d_model", "d_ff", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class TrainConfig:
    learning_rate: float = 6e-5
    weight_decay: float = 0.02
    decayed_layers: tuple[int, ...] | None = None  # None: the last three layers
    warmup_fraction: float = 0.1
    epochs: int = 10
    batch_size: int = 16
    grad_clip: float = 1.0
    seed: int = 0
    freeze_scope: str = "block"  # or "attention_only"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1]")
        if self.freeze_scope not in ("block", "attention_only"):
            raise ValueError(f"unknown freeze_scope {self.freeze_scope!r}")
        if self.decayed_layers is not None:
            self.decayed_layers = tuple(int(v) for v in self.decayed_layers)

    def decayed(self, n_layers: int) -> set[int]:
        if self.decayed_layers is None:
            return set(range(max(1, n_layers - 2), n_layers + 1))
        return set(self.decayed_layers)


def param_shapes(cfg: EncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Declared parameter order; the artifact file stores blocks in this order."""
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    shapes = [("tok_emb", (v, d)), ("pos_emb", (cfg.max_len, d)), ("seg_emb", (d,))]
    for l in range(1, cfg.n_layers + 1):
        shapes += [
            (f"layer{l}.wq", (d, d)), (f"layer{l}.wk", (d, d)), (f"layer{l}.wv", (d, d)),
            (f"layer{l}.wo", (d, d)),
            (f"layer{l}.ln1_g", (d,)), (f"layer{l}.ln1_b", (d,)),
            (f"layer{l}.w1", (d, f)), (f"layer{l}.b1", (f,)),
            (f"layer{l}.w2", (f, d)), (f"layer{l}.b2", (d,)),
            (f"layer{l}.ln2_g", (d,)), (f"layer{l}.ln2_b", (d,)),
        ]
    shapes += [("mlm_w", (d, v)), ("mlm_b", (v,)), ("reg_w", (d,)), ("reg_b", ())]
    return shapes


def layer_of(name: str) -> int | None:
    if name.startswith("layer"):
        return int(name[5 : name.index(".")])
    return None


@dataclass
class EncoderState:
    config: EncoderConfig
    params: dict[str, np.ndarray]
    trainable: list[bool] = field(default_factory=list)

    def __post_init__(self):
        if not self.trainable:
            self.trainable = [True] * self.config.n_layers
        if len(self.trainable) != self.config.n_layers:
            raise ValueError("one trainable flag per layer is required")

    def copy(self) -> "EncoderState":
        return EncoderState(copy.deepcopy(self.config), {k: v.copy() for k, v in self.params.items()}, list(self.trainable))

    def __getitem__(self, name):
        return self.params[name]


def init_state(cfg: EncoderConfig, zero_heads: bool = False) -> EncoderState:
    """Normal(0, 0.02) weights, zero biases and LN shifts, unit LN scales."""
    if cfg.vocab_size <= 0:
        raise ValueError("EncoderConfig.vocab_size must be set before initialization")
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in param_shapes(cfg):
        short = name.split(".")[-1]
        if short.endswith("_g"):
            params[name] = np.ones(shape)
        elif short.startswith("b") or short.endswith("_b") or name in ("reg_b",):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, 0.02, size=shape)
    if zero_heads:
        for name in ("mlm_w", "mlm_b", "reg_w", "reg_b"):
            params[name] = np.zeros_like(params[name])
    return EncoderState(cfg, params)


# ---------------------------------------------------------------- forward ---

def embed(state: EncoderState, ids: np.ndarray) -> np.ndarray:
    """H0 = token + position + segment embeddings for a (B, L) id batch."""
    ids = np.atleast_2d(ids)
    v = state.params["tok_emb"].shape[0]
    if ids.min() < 0 or ids.max() >= v:
        raise IndexError(f"token id out of range for vocabulary of size {v}")
    L = ids.shape[1]
    return state.params["tok_emb"][ids] + state.params["pos_emb"][:L] + state.params["seg_emb"]


def _split_heads(x, h):
    B, L, d = x.shape
    return x.reshape(B, L, h, d // h).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, h, L, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, h * dk)


def encoder_layer(H: np.ndarray, p: dict, l: int, mask: np.ndarray, n_heads: int):
    """One post-LN encoder block. Returns (H', attention (B, h, L, L), cache)."""
    pre = f"layer{l}."
    dk = H.shape[-1] // n_heads
    q = _split_heads(H @ p[pre + "wq"], n_heads)
    k = _split_heads(H @ p[pre + "wk"], n_heads)
    v = _split_heads(H @ p[pre + "wv"], n_heads)
    scores = (q @ k.transpose(0, 1, 3, 2)) / math.sqrt(dk)
    alpha, _ = nx.softmax_rows(scores, mask[:, None, None, :])
    z = _merge_heads(alpha @ v)
    h1, ln1 = nx.layer_norm(H + z @ p[pre + "wo"], p[pre + "ln1_g"], p[pre + "ln1_b"])
    u = h1 @ p[pre + "w1"] + p[pre + "b1"]
    g, gc = nx.gelu(u)
    f = g @ p[pre + "w2"] + p[pre + "b2"]
    h2, ln2 = nx.layer_norm(h1 + f, p[pre + "ln2_g"], p[pre + "ln2_b"])
    cache = (H, q, k, v, alpha, z, h1, ln1, gc, g, ln2)
    return h2, alpha, cache


def encoder_layer_backward(dh2, p, l, cache, n_heads):
    pre = f"layer{l}."
    H, q, k, v, alpha, z, h1, ln1, gc, g, ln2 = cache
    d = H.shape[-1]
    dk = d // n_heads
    grads = {}
    dx2, grads[pre + "ln2_g"], grads[pre + "ln2_b"] = nx.layer_norm_backward(dh2, ln2)
    dh1 = dx2.copy()
    grads[pre + "w2"] = g.reshape(-1, g.shape[-1]).T @ dx2.reshape(-1, d)
    grads[pre + "b2"] = dx2.sum(axis=(0, 1))
    du = nx.gelu_backward(dx2 @ p[pre + "w2"].T, gc)
    grads[pre + "w1"] = h1.reshape(-1, d).T @ du.reshape(-1, du.shape[-1])
    grads[pre + "b1"] = du.sum(axis=(0, 1))
    dh1 += du @ p[pre + "w1"].T
    dx1, grads[pre + "ln1_g"], grads[pre + "ln1_b"] = nx.layer_norm_backward(dh1, ln1)
    dH = dx1.copy()
    grads[pre + "wo"] = z.reshape(-1, d).T @ dx1.reshape(-1, d)
    dz = _split_heads(dx1 @ p[pre + "wo"].T, n_heads)
    dalpha = dz @ v.transpose(0, 1, 3, 2)
    dv = alpha.transpose(0, 1, 3, 2) @ dz
    ds = nx.softmax_rows_backward(dalpha, alpha) / math.sqrt(dk)
    dq = ds @ k
    dkk = ds.transpose(0, 1, 3, 2) @ q
    Hf = H.reshape(-1, d)
    for name, dproj in (("wq", dq), ("wk", dkk), ("wv", dv)):
        dm = _merge_heads(dproj)
        grads[pre + name] = Hf.T @ dm.reshape(-1, d)
        dH += dm @ p[pre + name].T
    return dH, grads


@dataclass
class ForwardPass:
    hidden: np.ndarray  # (B, L, d) final hidden states
    attention: list[np.ndarray]  # per layer (B, h, L, L)
    caches: list
    ids: np.ndarray


def forward(state: EncoderState, ids: np.ndarray, mask: np.ndarray) -> ForwardPass:
    ids = np.atleast_2d(ids)
    mask = np.atleast_2d(mask)
    H = embed(state, ids)
    attn, caches = [], []
    for l in range(1, state.config.n_layers + 1):
        H, a, c = encoder_layer(H, state.params, l, mask, state.config.n_heads)
        attn.append(a)
        caches.append(c)
    return ForwardPass(H, attn, caches, ids)


def backward(state: EncoderState, fp: ForwardPass, dH: np.ndarray, grads: dict | None = None) -> dict:
    grads = {} if grads is None else grads
    for l in range(state.config.n_layers, 0, -1):
        dH, g = encoder_layer_backward(dH, state.params, l, fp.caches[l - 1], state.config.n_heads)
        grads.update(g)
    dtok = np.zeros_like(state.params["tok_emb"])
    np.add.at(dtok, fp.ids, dH)
    grads["tok_emb"] = dtok
    dpos = np.zeros_like(state.params["pos_emb"])
    dpos[: dH.shape[1]] = dH.sum(axis=0)
    grads["pos_emb"] = dpos
    grads["seg_emb"] = dH.sum(axis=(0, 1))
    return grads


# ------------------------------------------------------------------ heads ---

def mlm_loss(state: EncoderState, ids: np.ndarray, mask: np.ndarray, labels: np.ndarray):
    """Cross-entropy over masked positions of a batch.

    ``labels`` is (B, L) holding the true id at masked positions and -1
    elsewhere. Returns ``(loss, grads)``.
    """
    labels = np.atleast_2d(labels)
    b_idx, p_idx = np.nonzero(labels >= 0)
    if b_idx.size == 0:
        raise ValueError("batch has no masked positions")
    fp = forward(state, ids, mask)
    Hm = fp.hidden[b_idx, p_idx]
    logits = Hm @ state.params["mlm_w"] + state.params["mlm_b"]
    loss, dlogits = nx.cross_entropy(logits, labels[b_idx, p_idx])
    grads = {"mlm_w": Hm.T @ dlogits, "mlm_b": dlogits.sum(axis=0)}
    dH = np.zeros_like(fp.hidden)
    np.add.at(dH, (b_idx, p_idx), dlogits @ state.params["mlm_w"].T)
    backward(state, fp, dH, grads)
    return loss, grads


def mlm_eval_loss(state, ids, mask, labels) -> float:
    labels = np.atleast_2d(labels)
    b_idx, p_idx = np.nonzero(labels >= 0)
    fp = forward(state, ids, mask)
    logits = fp.hidden[b_idx, p_idx] @ state.params["mlm_w"] + state.params["mlm_b"]
    lp = nx.log_softmax(logits)
    return float(-lp[np.arange(b_idx.size), labels[b_idx, p_idx]].mean())


def regression_forward(state: EncoderState, ids: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Standardized predictions W_reg . h_CLS + b_reg, one per sequence."""
    fp = forward(state, ids, mask)
    return fp.hidden[:, 0] @ state.params["reg_w"] + state.params["reg_b"]


def regression_loss(state: EncoderState, ids, mask, y):
    fp = forward(state, ids, mask)
    h_cls = fp.hidden[:, 0]
    pred = h_cls @ state.params["reg_w"] + state.params["reg_b"]
    loss, dpred = nx.mse_loss(pred, y)
    grads = {"reg_w": h_cls.T @ dpred, "reg_b": np.array(dpred.sum())}
    dH = np.zeros_like(fp.hidden)
    dH[:, 0] = np.outer(dpred, state.params["reg_w"])
    backward(state, fp, dH, grads)
    return loss, grads, pred


# -------------------------------------------------------------- optimizer ---

def lr_at(t: int, total_steps: int, tcfg: TrainConfig) -> float:
    """Linear warm-up to the peak rate, then linear decay to zero at ``total_steps``."""
    if not 1 <= t <= total_steps:
        raise ValueError(f"step {t} outside 1..{total_steps}")
    eta = tcfg.learning_rate
    warm = tcfg.warmup_fraction * total_steps
    if t < warm:
        return eta * t / warm
    if warm >= total_steps:
        return eta
    return eta * (total_steps - t) / (total_steps - warm)


class AdamW:
    """Adam with decoupled weight decay restricted to chosen parameters.

    Gradients of the updated parameters are clipped jointly to a global L2
    norm of ``grad_clip`` before the moment update.
    """

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict, lr: float, t: int, weight_decay: float,
             decay: set[str], grad_clip: float | None, names: Iterable[str]) -> float:
        names = [n for n in names if n in grads]
        for n in names:
            if not np.all(np.isfinite(grads[n])):
                raise FloatingPointError(f"non-finite gradient for parameter {n}")
        norm = math.sqrt(sum(float(np.sum(grads[n] ** 2)) for n in names))
        factor = 1.0
        if grad_clip is not None and norm > grad_clip:
            factor = grad_clip / (norm + 1e-6)
        b1, b2 = self.beta1, self.beta2
        for n in names:
            g = grads[n] * factor
            m = self.m.setdefault(n, np.zeros_like(params[n]))
            v = self.v.setdefault(n, np.zeros_like(params[n]))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            p = params[n]
            if n in decay and weight_decay:
                p -= lr * weight_decay * p
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)
        return norm


def updatable(state: EncoderState, tcfg: TrainConfig) -> list[str]:
    """Parameter names that receive updates given the per-layer trainable flags."""
    frozen_names = LAYER_PARAMS if tcfg.freeze_scope == "block" else ATTENTION_PARAMS
    out = []
    for name, _ in param_shapes(state.config):
        l = layer_of(name)
        if l is not None and not state.trainable[l - 1] and name.split(".")[1] in frozen_names:
            continue
        out.append(name)
    return out


def decayed_names(state: EncoderState, tcfg: TrainConfig) -> set[str]:
    layers = tcfg.decayed(state.config.n_layers)
    return {n for n in state.params if layer_of(n) in layers}


def adamw_step(state: EncoderState, grads: dict, tcfg: TrainConfig, t: int, lr: float | None = None,
               opt: AdamW | None = None, total_steps: int | None = None) -> AdamW:
    """One optimizer step on ``state`` in place; returns the optimizer holding the moments."""
    if t < 1:
        raise ValueError("step index starts at 1")
    opt = AdamW() if opt is None else opt
    if lr is None:
        lr = tcfg.learning_rate if total_steps is None else lr_at(t, total_steps, tcfg)
    opt.step(state.params, grads, lr, t, tcfg.weight_decay, decayed_names(state, tcfg),
             tcfg.grad_clip, updatable(state, tcfg))
    return opt


# ------------------------------------------------------------------ model ---

@dataclass
class Model:
    """An encoder bundled with its vocabulary and scalers."""

    state: EncoderState
    vocab: Vocabulary
    use_features: bool = False
    feature_scaler: ScalerParams | None = None
    target_scaler: ScalerParams | None = None

    def texts(self, rows) -> list[str]:
        return _texts(rows, self.use_features, self.feature_scaler)


def _texts(rows, use_features: bool, scaler: ScalerParams | None) -> list[str]:
    out = []
    for r in rows:
        feats = None
        if use_features:
            feats = apply_scaler(scaler, r.features) if scaler is not None else r.features
        out.append(compose_input(r.composition, feats))
    return out


def _batch(seqs: Sequence[TokenSequence]):
    return np.stack([s.ids for s in seqs]), np.stack([s.attention_mask for s in seqs])


def _mask_nonempty(seq, prob, rng, tries=100):
    for _ in range(tries):
        masked, labels = mask_tokens(seq, prob, rng)
        if labels:
            return masked, labels
    # fall back to one forced position so every sequence contributes
    eligible = np.flatnonzero((seq.attention_mask == 1) & (seq.ids > MASK_ID))
    if eligible.size == 0:
        return None, {}
    pos = int(eligible[rng.integers(eligible.size)])
    ids = seq.ids.copy()
    ids[pos] = MASK_ID
    return TokenSequence(ids, seq.attention_mask, seq.element_spans), {pos: int(seq.ids[pos])}


def _mlm_batch(seqs, prob, rng):
    ids, masks, labels = [], [], []
    for s in seqs:
        masked, lab = _mask_nonempty(s, prob, rng)
        if masked is None:
            continue
        lbl = np.full(len(s.ids), -1, dtype=np.int64)
        for pos, tok in lab.items():
            lbl[pos] = tok
        ids.append(masked.ids)
        masks.append(masked.attention_mask)
        labels.append(lbl)
    if not ids:
        return None
    return np.stack(ids), np.stack(masks), np.stack(labels)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def pretraining_texts(corpus, use_features: bool = True):
    """Texts for MLM pre-training from ``(composition string, FeatureVector)`` pairs.

    Features are standardized over the corpus before quantization so the
    numeric tokens live on the same scale as during fine-tuning.
    """
    from .chem import parse_composition

    comps = [parse_composition(text) for text, _ in corpus]
    if not use_features:
        return [compose_input(c) for c in comps], None
    X = np.array([fv.as_array() for _, fv in corpus])
    scaler = fit_scaler(X)
    Xs = apply_scaler(scaler, X)
    return [compose_input(c, x) for c, x in zip(comps, Xs)], scaler


@dataclass
class PretrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    initial_val_loss: float = float("nan")
    best_epoch: int = 0

    def log_lines(self) -> list[str]:
        lines = ["epoch,split,loss", f"0,val,{self.initial_val_loss!r}"]
        for e, (tr, va) in enumerate(zip(self.train_loss, self.val_loss), start=1):
            lines += [f"{e},train,{tr!r}", f"{e},val,{va!r}"]
        return lines


def pretrain(
    texts: Sequence[str],
    cfg: EncoderConfig,
    tcfg: TrainConfig,
    vocab: Vocabulary | None = None,
    zero_heads: bool = False,
) -> tuple[EncoderState, Vocabulary, PretrainHistory]:
    """Masked-token pre-training with an 80/20 split and best-validation checkpointing."""
    n = len(texts)
    perm = np.random.default_rng([tcfg.seed, _SPLIT]).permutation(n)
    n_val = max(1, int(round(0.2 * n)))
    val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    if len(train_idx) < tcfg.batch_size:
        raise ValueError(f"corpus of {n} texts is smaller than one training batch")
    # validation-only tokens become [UNK], which is never masked
    vocab = build_vocab([texts[i] for i in train_idx]) if vocab is None else vocab
    cfg = copy.deepcopy(cfg)
    cfg.vocab_size = len(vocab)
    seqs = [encode(t, vocab, cfg.max_len) for t in texts]

    state = init_state(cfg, zero_heads=zero_heads)
    val_batches = []
    vrng = np.random.default_rng([tcfg.seed, _VALMASK])
    for i in range(0, len(val_idx), tcfg.batch_size):
        b = _mlm_batch([seqs[j] for j in val_idx[i : i + tcfg.batch_size]], cfg.mask_prob, vrng)
        if b is not None:
            val_batches.append(b)

    def val_loss(st):
        tot, cnt = 0.0, 0
        for ids, mask, labels in val_batches:
            k = int((labels >= 0).sum())
            tot += mlm_eval_loss(st, ids, mask, labels) * k
            cnt += k
        return tot / cnt

    hist = PretrainHistory(initial_val_loss=val_loss(state))
    best, best_loss = state.copy(), hist.initial_val_loss
    shuffle_rng = np.random.default_rng([tcfg.seed, _SHUFFLE])
    mask_rng = np.random.default_rng([tcfg.seed, _MASK])
    n_batches = math.ceil(len(train_idx) / tcfg.batch_size)
    total = tcfg.epochs * n_batches
    opt, t = AdamW(), 0
    names = updatable(state, tcfg)
    decay = decayed_names(state, tcfg)
    for epoch in range(1, tcfg.epochs + 1):
        losses = []
        for batch in _batches(len(train_idx), tcfg.batch_size, shuffle_rng):
            b = _mlm_batch([seqs[train_idx[j]] for j in batch], cfg.mask_prob, mask_rng)
            t += 1
            if b is None:
                continue
            loss, grads = mlm_loss(state, *b)
            opt.step(state.params, grads, lr_at(t, total, tcfg), t, tcfg.weight_decay, decay, tcfg.grad_clip, names)
            losses.append(loss)
        hist.train_loss.append(float(np.mean(losses)))
        hist.val_loss.append(val_loss(state))
        log.info("pretrain epoch %d train %.4f val %.4f", epoch, hist.train_loss[-1], hist.val_loss[-1])
        if hist.val_loss[-1] < best_loss:
            best, best_loss, hist.best_epoch = state.copy(), hist.val_loss[-1], epoch
    return best, vocab, hist


def _set_selection(state: EncoderState, layer_selection) -> None:
    n = state.config.n_layers
    if layer_selection == ALL or layer_selection is None:
        state.trainable = [True] * n
        return
    chosen = {int(l) for l in layer_selection}
    bad = [l for l in chosen if not 1 <= l <= n]
    if bad:
        raise ValueError(f"layer indices {sorted(bad)} outside 1..{n}")
    state.trainable = [l in chosen for l in range(1, n + 1)]


def _predict_scaled(state, seqs, batch_size=64):
    out = []
    for i in range(0, len(seqs), batch_size):
        ids, mask = _batch(seqs[i : i + batch_size])
        out.append(regression_forward(state, ids, mask))
    return np.concatenate(out) if out else np.zeros(0)


def train_regressor(state, seqs_tr, y_tr, seqs_va, y_va, tcfg: TrainConfig, fold_seed=0):
    """MSE training on standardized targets; keeps the best-validation parameters."""
    shuffle_rng = np.random.default_rng([tcfg.seed, _SHUFFLE, fold_seed])
    n_batches = math.ceil(len(seqs_tr) / tcfg.batch_size)
    total = max(1, tcfg.epochs * n_batches)
    opt, t = AdamW(), 0
    names = updatable(state, tcfg)
    decay = decayed_names(state, tcfg)
    best = {k: v.copy() for k, v in state.params.items()}
    best_mse, history = math.inf, []
    for epoch in range(1, tcfg.epochs + 1):
        losses = []
        for batch in _batches(len(seqs_tr), tcfg.batch_size, shuffle_rng):
            ids, mask = _batch([seqs_tr[j] for j in batch])
            loss, grads, _ = regression_loss(state, ids, mask, y_tr[batch])
            t += 1
            opt.step(state.params, grads, lr_at(t, total, tcfg), t, tcfg.weight_decay, decay, tcfg.grad_clip, names)
            losses.append(loss)
        pred = _predict_scaled(state, seqs_va)
        m = metrics(pred, y_va)
        history.append((epoch, float(np.mean(losses)), m))
        if m.mse < best_mse:
            best_mse = m.mse
            best = {k: v.copy() for k, v in state.params.items()}
    state.params = best
    return history


def finetune(
    rows,
    pretrained: Model | None = None,
    layer_selection=ALL,
    cfg: EncoderConfig | None = None,
    tcfg: TrainConfig | None = None,
    use_features: bool = True,
    folds: int = 5,
    split_seed: int = 0,
) -> tuple[Model, list[FoldReport]]:
    """K-fold fine-tuning of the regression head (and selected layers).

    Returns the model of the fold with the lowest standardized validation MSE
    together with every fold's report.
    """
    tcfg = TrainConfig() if tcfg is None else tcfg
    if len(rows) < folds:
        raise ValueError(f"{len(rows)} rows cannot be split into {folds} folds")
    y = np.array([r.target for r in rows], dtype=np.float64)
    X = np.array([r.features for r in rows], dtype=np.float64)
    reports, models = [], []
    for fold, (tr, va) in enumerate(kfold_split(len(rows), folds, split_seed)):
        fscaler = fit_scaler(X[tr]) if use_features else None
        tscaler = fit_scaler(y[tr])
        texts = _texts(rows, use_features, fscaler)
        if pretrained is not None:
            vocab = pretrained.vocab
            state = pretrained.state.copy()
        else:
            vocab = build_vocab([texts[i] for i in tr])
            fcfg = copy.deepcopy(cfg if cfg is not None else EncoderConfig())
            fcfg.vocab_size = len(vocab)
            fcfg.seed = fcfg.seed + 1000 * fold
            state = init_state(fcfg)
        _set_selection(state, layer_selection)
        L = state.config.max_len
        seqs = [encode(t, vocab, L) for t in texts]
        seqs_tr = [seqs[i] for i in tr]
        seqs_va = [seqs[i] for i in va]
        y_tr = apply_scaler(tscaler, y[tr])
        y_va = apply_scaler(tscaler, y[va])
        hist = train_regressor(state, seqs_tr, y_tr, seqs_va, y_va, tcfg, fold_seed=fold)
        pred = _predict_scaled(state, seqs_va)
        log_rows = [
            (e, "train", loss) for e, loss, _ in hist
        ] + [(e, "val", m.mse, m) for e, _, m in hist]
        reports.append(make_fold_report(fold, tr, va, pred, y, tscaler, fscaler, log_rows))
        models.append(Model(state, vocab, use_features, fscaler, tscaler))
    best = min(range(len(reports)), key=lambda i: reports[i].scaled.mse)
    return models[best], reports


def training_log(reports: Sequence[FoldReport]) -> list[str]:
    """``epoch,split,loss[,mse,mae,r2]`` lines for every fold."""
    lines = ["fold,epoch,split,loss,mse,mae,r2"]
    for r in reports:
        entries = sorted(r.history, key=lambda e: (e[0], e[1] != "train"))
        for e in entries:
            if e[1] == "train":
                lines.append(f"{r.fold},{e[0]},train,{e[2]!r},,,")
            else:
                m = e[3]
                r2 = "" if m.r2 is None else repr(m.r2)
                lines.append(f"{r.fold},{e[0]},val,{e[2]!r},{m.mse!r},{m.mae!r},{r2}")
    return lines


def predict(model: Model, rows) -> np.ndarray:
    """Original-scale predictions: standardize, forward, then y * sigma + mu."""
    if model.target_scaler is None:
        raise ValueError("model has no target scaler; fine-tune it first")
    seqs = [encode(t, model.vocab, model.state.config.max_len) for t in model.texts(rows)]
    z = _predict_scaled(model.state, seqs)
    return z * model.target_scaler.std + model.target_scaler.mean


# --------------------------------------------------------------- artifact ---

MAGIC = b"HEAENC\x00\x01"
FORMAT_VERSION = 1


def save_model(model: Model, path) -> None:
    """Header (magic, version, JSON metadata) then float64 little-endian blocks."""
    cfg = model.state.config
    shapes = param_shapes(cfg)
    header = {
        "config": asdict(cfg),
        "vocab_sha256": model.vocab.digest,
        "vocab": list(model.vocab.tokens),
        "use_features": model.use_features,
        "feature_scaler": None if model.feature_scaler is None else model.feature_scaler.to_dict(),
        "target_scaler": None if model.target_scaler is None else model.target_scaler.to_dict(),
        "trainable": list(model.state.trainable),
        "params": [[name, list(shape)] for name, shape in shapes],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for name, shape in shapes:
            arr = np.asarray(model.state.params[name], dtype="<f8")
            if arr.shape != tuple(shape):
                raise ValueError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            fh.write(arr.tobytes(order="C"))


def load_model(path, vocab: Vocabulary | None = None) -> Model:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a model artifact")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<II", raw, off)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    off += 8
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    off += hlen
    cfg = EncoderConfig(**header["config"])
    stored_vocab = Vocabulary(tuple(header["vocab"]))
    if stored_vocab.digest != header["vocab_sha256"]:
        raise ValueError(f"{path}: embedded vocabulary does not match its hash")
    if vocab is not None and vocab.digest != header["vocab_sha256"]:
        raise ValueError(f"{path}: vocabulary hash mismatch")
    expected = [[n, list(s)] for n, s in param_shapes(cfg)]
    if header["params"] != expected:
        raise ValueError(f"{path}: parameter layout does not match its config")
    params = {}
    for name, shape in param_shapes(cfg):
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if off + nbytes > len(raw):
            raise ValueError(f"{path}: truncated at parameter {name}")
        params[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
        off += nbytes
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    fs = header["feature_scaler"]
    ts = header["target_scaler"]
    state = EncoderState(cfg, params, list(header["trainable"]))
    return Model(
        state,
        stored_vocab,
        header["use_features"],
        None if fs is None else ScalerParams.from_dict(fs),
        None if ts is None else ScalerParams.from_dict(ts),
    )
