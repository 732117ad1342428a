import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heaformer.chem import (
    Composition,
    CompositionError,
    UnknownElementError,
    atomic_fractions,
    canonical_string,
    default_element_table,
    default_pair_table,
    format_number,
    load_element_table,
    looks_normalized,
    lookup,
    parse_composition,
)

SYMBOLS = default_element_table().symbols


def test_parse_explicit_coefficients():
    c = parse_composition("Co1.2 Fe0.8 Ni1")
    assert c.entries == (("Co", 1.2), ("Fe", 0.8), ("Ni", 1.0))


def test_parse_implicit_one_and_glued_symbols():
    assert parse_composition("Fe").entries == (("Fe", 1.0),)
    c = parse_composition("Al0.5CoCrFeNi")
    assert c.entries == (("Al", 0.5), ("Co", 1.0), ("Cr", 1.0), ("Fe", 1.0), ("Ni", 1.0))


def test_parse_sorts_alphabetically():
    assert parse_composition("Ni1 Co1.2 Fe0.8") == parse_composition("Co1.2 Fe0.8 Ni1")


@pytest.mark.parametrize("text", ["", "   ", "fe1", "Fe1 Fe2", "Fe0", "Fe-1", "Fe1,Ni1", "1Fe"])
def test_parse_rejects_malformed(text):
    with pytest.raises(CompositionError):
        parse_composition(text)


def test_parse_unknown_element():
    with pytest.raises(UnknownElementError) as info:
        parse_composition("Fe1 Xx1")
    assert info.value.symbol == "Xx"
    assert "unknown element" in str(info.value)


def test_canonical_string():
    c = Composition((("Ni", 1.0), ("Co", 1.2), ("Fe", 0.8)))
    assert canonical_string(c) == "Co1.2 Fe0.8 Ni1"
    assert canonical_string(Composition((("Fe", 1.0),))) == "Fe1"


def test_format_number():
    assert format_number(1.0) == "1"
    assert format_number(0.8) == "0.8"
    assert format_number(0.12345) == "0.1235"
    assert format_number(-0.00001) == "0"
    assert format_number(300) == "300"


def test_atomic_fractions():
    x = atomic_fractions(parse_composition("Co1.2 Fe0.8 Ni1"))
    assert x == pytest.approx([0.4, 0.8 / 3, 1 / 3], abs=1e-15)
    assert atomic_fractions(parse_composition("CoCrFeMnNi")) == pytest.approx([0.2] * 5)
    assert atomic_fractions(parse_composition("Fe2")) == [1.0]


def test_looks_normalized():
    assert looks_normalized(parse_composition("Fe0.5 Ni0.5"))
    assert not looks_normalized(parse_composition("Fe1 Ni1"))
    assert not looks_normalized(parse_composition("Fe1"))


def test_composition_invariants():
    with pytest.raises(CompositionError):
        Composition(())
    with pytest.raises(CompositionError):
        Composition((("Fe", 1.0), ("Fe", 2.0)))
    with pytest.raises(CompositionError):
        Composition((("Fe", 0.0),))


def test_lookup():
    t = default_element_table()
    assert lookup(t, "Fe").symbol == "Fe"
    assert lookup(t, "Fe") is lookup(t, "Fe")
    with pytest.raises(UnknownElementError, match="unknown element"):
        lookup(t, "Xx")


def test_bundled_tables_cover_dataset_elements():
    t = default_element_table()
    for s in "Ni Fe Co Cr Mn Al Ti Cu V Mo Nb Zr Si Sn Sc".split():
        assert s in t
    p = default_pair_table()
    for i, a in enumerate(t.symbols):
        assert p.get(a, a) == 0.0
        for b in t.symbols[i + 1:]:
            assert p.get(a, b) == p.get(b, a)
    assert t.version.startswith("elements.csv@")


def test_element_table_rejects_bad_rows(tmp_path):
    path = tmp_path / "el.csv"
    header = "symbol,vec,electronegativity,atomic_radius_pm,young_gpa,shear_gpa,melting_k,work_function_ev,cohesive_ev,ionization_ev\n"
    path.write_text(header + "Fe,8,1.83,126,211,82,1811,4.5,4.28,7.9\nNi,10,1.91,124,-1,76,1728,5.0,4.44,7.6\n")
    with pytest.raises(ValueError, match=":3:"):
        load_element_table(path)


def test_table_version_tracks_content(tmp_path):
    header = "symbol,vec,electronegativity,atomic_radius_pm,young_gpa,shear_gpa,melting_k,work_function_ev,cohesive_ev,ionization_ev\n"
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text(header + "Fe,8,1.83,126,211,82,1811,4.5,4.28,7.9\n")
    b.write_text(header + "Fe,8,1.83,126,211,82,1811,4.5,4.28,7.8\n")
    assert load_element_table(a).version.split("@")[1] != load_element_table(b).version.split("@")[1]


coefficient = st.integers(1, 20000).map(lambda k: k / 10000)


@st.composite
def compositions(draw):
    symbols = draw(st.lists(st.sampled_from(SYMBOLS), min_size=1, max_size=8, unique=True))
    return Composition(tuple((s, draw(coefficient)) for s in symbols))


@settings(max_examples=200, deadline=None)
@given(compositions())
def test_canonical_round_trip(c):
    assert parse_composition(canonical_string(c)) == c


@settings(max_examples=100, deadline=None)
@given(compositions())
def test_fractions_sum_to_one(c):
    assert math.isclose(sum(atomic_fractions(c)), 1.0, abs_tol=1e-12)
