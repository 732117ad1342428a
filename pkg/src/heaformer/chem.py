"""Composition parsing and elemental data tables."""
from __future__ import annotations

import csv
import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

ELEMENT_COLUMNS = (
    "symbol",
    "vec",
    "electronegativity",
    "atomic_radius_pm",
    "young_gpa",
    "shear_gpa",
    "melting_k",
    "work_function_ev",
    "cohesive_ev",
    "ionization_ev",
)
PAIR_COLUMNS = ("element_a", "element_b", "dh_kj_mol")

MAX_FRACTION_DIGITS = 4

_TOKEN = re.compile(r"\s*([A-Z][a-z]?)(\d+(?:\.\d+)?)?\s*")


class CompositionError(ValueError):
    """Raised for formula strings that do not follow the composition grammar."""


class UnknownElementError(KeyError):
    """Raised when a symbol is missing from an element or pair table."""

    def __init__(self, symbol: str, version: str):
        self.symbol = symbol
        self.version = version
        super().__init__(f"unknown element {symbol!r} (table {version})")

    def __str__(self):
        return self.args[0]


@dataclass(frozen=True)
class ElementRecord:
    symbol: str
    vec: float
    electronegativity: float
    atomic_radius: float
    young_modulus: float
    shear_modulus: float
    melting_temp: float
    work_function: float
    cohesive_energy: float
    ionization_energy: float


@dataclass(frozen=True)
class ElementTable:
    records: Mapping[str, ElementRecord]
    version: str

    def __contains__(self, symbol):
        return symbol in self.records

    def __len__(self):
        return len(self.records)

    @property
    def symbols(self) -> list[str]:
        return sorted(self.records)


@dataclass(frozen=True)
class PairEnthalpyTable:
    pairs: Mapping[frozenset, float]
    version: str

    def get(self, a: str, b: str) -> float:
        if a == b:
            return 0.0
        try:
            return self.pairs[frozenset((a, b))]
        except KeyError:
            raise KeyError(f"no mixing enthalpy for pair {a}-{b} (table {self.version})") from None


@dataclass(frozen=True)
class Composition:
    """Alloy composition as (symbol, coefficient) pairs in alphabetical order.

    Coefficients are raw stoichiometric amounts; use :func:`atomic_fractions`
    for the normalized x_i.
    """

    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        entries = tuple(sorted((str(s), float(f)) for s, f in self.entries))
        symbols = [s for s, _ in entries]
        if not entries:
            raise CompositionError("empty composition")
        if len(set(symbols)) != len(symbols):
            dup = next(s for s in symbols if symbols.count(s) > 1)
            raise CompositionError(f"duplicate element {dup!r}")
        for s, f in entries:
            if not f > 0:
                raise CompositionError(f"coefficient of {s} must be positive, got {f}")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_dict(cls, amounts: Mapping[str, float]) -> "Composition":
        return cls(tuple(amounts.items()))

    @property
    def elements(self) -> list[str]:
        return [s for s, _ in self.entries]

    @property
    def coefficients(self) -> list[float]:
        return [f for _, f in self.entries]

    def __len__(self):
        return len(self.entries)

    def __str__(self):
        return canonical_string(self)


def format_number(x: float) -> str:
    """Shortest decimal rendering with at most four fractional digits.

    >>> format_number(1.0), format_number(0.80), format_number(-0.00001)
    ('1', '0.8', '0')
    """
    text = f"{round(float(x), MAX_FRACTION_DIGITS):.{MAX_FRACTION_DIGITS}f}"
    text = text.rstrip("0").rstrip(".")
    if text in ("-0", ""):
        text = "0"
    return text


def parse_composition(text: str, table: ElementTable | None = None) -> Composition:
    """Parse a formula such as ``"Co1.2 Fe0.8 Ni1"`` or ``"Al0.5CoCrFeNi"``.

    A symbol without a trailing number gets coefficient 1. Output entries are
    in alphabetical order regardless of input order.
    """
    if text is None or not text.strip():
        raise CompositionError("empty composition string")
    table = default_element_table() if table is None else table
    pos = 0
    amounts: dict[str, float] = {}
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise CompositionError(f"malformed composition {text!r} at position {pos}")
        symbol, number = m.group(1), m.group(2)
        if symbol not in table:
            raise UnknownElementError(symbol, table.version)
        if symbol in amounts:
            raise CompositionError(f"duplicate element {symbol!r} in {text!r}")
        value = 1.0 if number is None else float(number)
        if value <= 0:
            raise CompositionError(f"non-positive coefficient for {symbol} in {text!r}")
        amounts[symbol] = value
        pos = m.end()
    return Composition.from_dict(amounts)


def canonical_string(c: Composition) -> str:
    return " ".join(f"{s}{format_number(f)}" for s, f in c.entries)


def atomic_fractions(c: Composition) -> list[float]:
    total = sum(c.coefficients)
    return [f / total for f in c.coefficients]


def looks_normalized(c: Composition, tol: float = 1e-6) -> bool:
    """True when the coefficients already sum to 1 (atomic fractions, not ratios)."""
    return len(c) > 1 and abs(sum(c.coefficients) - 1.0) <= tol


def lookup(table: ElementTable, symbol: str) -> ElementRecord:
    try:
        return table.records[symbol]
    except KeyError:
        raise UnknownElementError(symbol, table.version) from None


def _version(path: Path, raw: bytes) -> str:
    return f"{path.name}@{hashlib.sha256(raw).hexdigest()[:12]}"


def _read_rows(path: Path, expected: Iterable[str]):
    raw = path.read_bytes()
    reader = csv.DictReader(raw.decode("utf-8").splitlines())
    header = tuple(reader.fieldnames or ())
    if header != tuple(expected):
        raise ValueError(f"{path}: expected header {','.join(expected)}, got {','.join(header)}")
    return list(reader), _version(path, raw)


def load_element_table(path: str | Path) -> ElementTable:
    path = Path(path)
    rows, version = _read_rows(path, ELEMENT_COLUMNS)
    records = {}
    for lineno, row in enumerate(rows, start=2):
        try:
            values = [float(row[k]) for k in ELEMENT_COLUMNS[1:]]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        if any(v <= 0 for v in values) or values[0] < 1:
            raise ValueError(f"{path}:{lineno}: element constants must be positive (vec >= 1)")
        symbol = row["symbol"].strip()
        if not re.fullmatch(r"[A-Z][a-z]?", symbol):
            raise ValueError(f"{path}:{lineno}: bad element symbol {symbol!r}")
        if symbol in records:
            raise ValueError(f"{path}:{lineno}: duplicate element {symbol}")
        records[symbol] = ElementRecord(symbol, *values)
    return ElementTable(records, version)


def load_pair_table(path: str | Path) -> PairEnthalpyTable:
    path = Path(path)
    rows, version = _read_rows(path, PAIR_COLUMNS)
    pairs = {}
    for lineno, row in enumerate(rows, start=2):
        a, b = row["element_a"].strip(), row["element_b"].strip()
        key = frozenset((a, b))
        if a == b:
            raise ValueError(f"{path}:{lineno}: self pair {a}-{b}")
        if key in pairs:
            raise ValueError(f"{path}:{lineno}: duplicate pair {a}-{b}")
        pairs[key] = float(row["dh_kj_mol"])
    return PairEnthalpyTable(pairs, version)


def _bundled(name: str) -> Path:
    return Path(str(resources.files("heaformer") / "data" / name))


@lru_cache(maxsize=None)
def default_element_table() -> ElementTable:
    return load_element_table(_bundled("elements.csv"))


@lru_cache(maxsize=None)
def default_pair_table() -> PairEnthalpyTable:
    return load_pair_table(_bundled("pair_enthalpy.csv"))
