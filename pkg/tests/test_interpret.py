import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heaformer.chem import Composition, default_element_table, parse_composition
from heaformer.encoder import EncoderConfig, Model, init_state
from heaformer.interpret import (
    FEATURES_GROUP,
    attention_csv,
    element_attention,
    export_attention,
    read_attention,
    reduce_attention,
)
from heaformer.tokenization import build_vocab

from interp_oracle import hand_model, manual_matrix

SYMBOLS = default_element_table().symbols


def test_hand_weight_oracle():
    model = hand_model()
    m = element_attention(model, parse_composition("Co1 Fe1 Ni1"))
    assert m.elements == ["Co", "Fe", "Ni"]
    want = manual_matrix(model)
    assert np.array_equal(np.isnan(m.matrix), np.isnan(want))
    assert np.allclose(m.off_diagonal(), want[~np.eye(3, dtype=bool)], atol=1e-10, rtol=0)
    assert m.pair("Co", "Ni") == m.pair("Ni", "Co")


def test_reduce_attention_groups():
    A = np.arange(16, dtype=float).reshape(4, 4)
    m = reduce_attention(A, {"a": [0, 1], "b": [2, 3]})
    # mean of A[0:2, 2:4] = 4.5, of A[2:4, 0:2] = 10.5
    assert m.pair("a", "b") == 7.5
    assert np.isnan(m.matrix[0, 0])


@pytest.fixture(scope="module")
def random_model():
    vocab = build_vocab([f"{s}1" for s in SYMBOLS])
    cfg = EncoderConfig(n_layers=2, n_heads=2, d_model=8, d_ff=16, max_len=12, vocab_size=len(vocab), seed=3)
    state = init_state(cfg)
    rng = np.random.default_rng(0)
    for k in state.params:
        state.params[k] = state.params[k] + rng.normal(0, 0.5, size=state.params[k].shape)
    return Model(state, vocab)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(SYMBOLS), min_size=1, max_size=8, unique=True),
       st.lists(st.integers(1, 30), min_size=8, max_size=8))
def test_symmetric_with_masked_diagonal(random_model, symbols, coefs):
    c = Composition(tuple((s, k / 10) for s, k in zip(symbols, coefs)))
    m = element_attention(random_model, c)
    assert m.elements == sorted(symbols)
    assert np.all(np.isnan(np.diag(m.matrix)))
    off = ~m.mask
    assert np.allclose(m.matrix[off], m.matrix.T[off], atol=1e-12, rtol=0)
    assert np.all(np.isfinite(m.matrix[off]))


def test_single_element_is_fully_masked(random_model):
    m = element_attention(random_model, parse_composition("Fe"))
    assert m.matrix.shape == (1, 1) and np.isnan(m.matrix[0, 0])
    assert m.off_diagonal().size == 0


def test_feature_tokens_group():
    from heaformer.features import featurize
    from heaformer.tokenization import compose_input
    c = parse_composition("Fe1 Ni1")
    vocab = build_vocab([compose_input(c, featurize(c).as_array())])
    cfg = EncoderConfig(n_layers=1, n_heads=1, d_model=4, d_ff=4, max_len=20, vocab_size=len(vocab))
    model = Model(init_state(cfg), vocab, use_features=True)
    m = element_attention(model, c, include_feature_tokens=True)
    assert m.elements == ["Fe", "Ni", FEATURES_GROUP]
    assert element_attention(model, c).elements == ["Fe", "Ni"]


def test_export_round_trip_and_bytes(tmp_path, random_model):
    c = parse_composition("Fe1 Ni1")
    m = element_attention(random_model, c)
    lines = attention_csv(m).splitlines()
    assert len(lines) == 3 and lines[0] == ",Fe,Ni"
    cells = [l.split(",") for l in lines[1:]]
    assert cells[0][1] == "" and cells[0][2] == cells[1][1] != ""
    export_attention(m, tmp_path / "a.csv")
    back = read_attention(tmp_path / "a.csv")
    assert back.elements == m.elements
    assert np.array_equal(back.matrix, m.matrix, equal_nan=True)
    export_attention(element_attention(random_model, c), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
