import io
import math

import numpy as np
import pytest

from heaformer.chem import default_element_table, parse_composition
from heaformer.features import (
    FEATURE_NAMES,
    FEATURE_UNITS,
    GAS_CONSTANT,
    deviation_features,
    feature_csv_text,
    featurize,
    mixing_entropy,
    pairwise_features,
    weighted_means,
    write_feature_csv,
)

from conftest import make_record, make_tables

ZERO_FOR_SINGLE = (
    "delta_x", "delta_r", "modulus_mismatch", "shear_modulus_diff",
    "mixing_enthalpy", "pauling_en_diff", "mixing_entropy",
)


def test_weighted_mean_hand_value():
    t, _ = make_tables([make_record("Fe", melting_temp=300.0), make_record("Ni", melting_temp=150.0)])
    m = weighted_means(parse_composition("Fe2 Ni1", t), t)
    assert m["melting_temp"] == pytest.approx(250.0, abs=1e-12)


def test_weighted_mean_equimolar_pair():
    t, _ = make_tables([make_record("Fe", vec=8.0), make_record("Ni", vec=10.0)])
    assert weighted_means(parse_composition("Fe1 Ni1", t), t)["mean_vec"] == pytest.approx(9.0)


def test_delta_x_equimolar_pair():
    t, _ = make_tables([make_record("Fe", electronegativity=1.8), make_record("Ni", electronegativity=2.2)])
    assert deviation_features(parse_composition("FeNi", t), t)["delta_x"] == pytest.approx(0.2, abs=1e-12)


def test_delta_r_equimolar_pair():
    t, _ = make_tables([make_record("Fe", atomic_radius=100.0), make_record("Ni", atomic_radius=120.0)])
    expected = (10 / 110) ** 2 * 100
    got = deviation_features(parse_composition("FeNi", t), t)["delta_r"]
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(0.8264, abs=1e-4)


def test_modulus_terms_hand_values():
    t, _ = make_tables([make_record("Fe", shear_modulus=60.0), make_record("Ni", shear_modulus=100.0)])
    d = deviation_features(parse_composition("FeNi", t), t)
    # G bar = 80
    assert d["modulus_mismatch"] == pytest.approx(0.5 * (2 * -20 / 140) ** 2 + 0.5 * (2 * 20 / 180) ** 2)
    assert d["shear_modulus_diff"] == pytest.approx(0.25 ** 2)


def test_pairwise_hand_values():
    t, p = make_tables(
        [make_record("Fe", electronegativity=1.9), make_record("Ni", electronegativity=2.1)],
        {("Fe", "Ni"): -4.0},
    )
    d = pairwise_features(parse_composition("FeNi", t), t, p)
    assert d["mixing_enthalpy"] == pytest.approx(-2.0, abs=1e-12)
    assert d["pauling_en_diff"] == pytest.approx(0.02, abs=1e-12)


def test_mixing_entropy_values():
    assert mixing_entropy(parse_composition("CoCrFeMnNi")) == pytest.approx(GAS_CONSTANT * math.log(5), abs=1e-12)
    assert mixing_entropy(parse_composition("CoCrFeMnNi")) == pytest.approx(13.3814, abs=1e-3)
    expected = -GAS_CONSTANT * (0.75 * math.log(0.75) + 0.25 * math.log(0.25))
    assert mixing_entropy(parse_composition("Fe3 Ni1")) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(4.6755, abs=1e-4)
    assert mixing_entropy(parse_composition("Fe")) == 0.0


@pytest.mark.parametrize("symbol", default_element_table().symbols)
def test_single_element_identities(symbol):
    fv = featurize(parse_composition(symbol + "2"))
    rec = default_element_table().records[symbol]
    for name in ZERO_FOR_SINGLE:
        assert getattr(fv, name) == 0.0, name
    assert fv.mean_vec == rec.vec
    assert fv.melting_temp == rec.melting_temp
    assert fv.ionization_energy == rec.ionization_energy


def test_schema_is_stable():
    assert len(FEATURE_NAMES) == 14
    assert set(FEATURE_UNITS) == set(FEATURE_NAMES)
    for text in ["Fe", "CoCrFeMnNi", "Al0.3 Ti2"]:
        assert featurize(parse_composition(text)).as_array().shape == (14,)


def test_feature_order_is_permutation_invariant():
    a = featurize(parse_composition("Co1.2 Fe0.8 Ni1")).as_array()
    b = featurize(parse_composition("Ni1 Fe0.8 Co1.2")).as_array()
    assert np.array_equal(a, b)


def test_feature_csv():
    comps = [parse_composition("CoCrFeMnNi"), parse_composition("Fe")]
    text = feature_csv_text([(c, featurize(c)) for c in comps])
    lines = text.splitlines()
    assert lines[0].split(",") == ["composition", *FEATURE_NAMES]
    assert lines[1].startswith("Co1 Cr1 Fe1 Mn1 Ni1,")
    assert float(lines[1].split(",")[1 + FEATURE_NAMES.index("mixing_entropy")]) == featurize(comps[0]).mixing_entropy
    buf = io.StringIO()
    write_feature_csv(buf, [(c, featurize(c)) for c in comps])
    assert buf.getvalue() == text
