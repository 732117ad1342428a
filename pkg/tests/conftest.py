import numpy as np
import pytest

from heaformer.chem import ElementRecord, ElementTable, PairEnthalpyTable


def make_record(symbol, **overrides):
    values = dict(
        vec=5.0, electronegativity=2.0, atomic_radius=125.0, young_modulus=200.0,
        shear_modulus=80.0, melting_temp=1500.0, work_function=4.5,
        cohesive_energy=4.0, ionization_energy=7.0,
    )
    values.update(overrides)
    return ElementRecord(symbol, **values)


def make_tables(records, pairs=None):
    table = ElementTable({r.symbol: r for r in records}, "test@0")
    pairs = pairs or {}
    ptable = PairEnthalpyTable({frozenset(k): v for k, v in pairs.items()}, "test@0")
    return table, ptable


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
