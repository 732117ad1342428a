"""Thermodynamic descriptors of a multi-component alloy.

All formulas are evaluated on normalized atomic fractions. The two pairwise
descriptors sum over ordered pairs (i, j), i != j, so every unordered pair
contributes twice. The atomic-size descriptor is the fraction-weighted mean
squared relative deviation times 100, with no square root taken.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from .chem import (
    Composition,
    ElementTable,
    PairEnthalpyTable,
    atomic_fractions,
    canonical_string,
    default_element_table,
    default_pair_table,
    lookup,
)

GAS_CONSTANT = 8.314462618  # J/(mol K)


@dataclass(frozen=True)
class FeatureVector:
    mean_vec: float
    delta_x: float
    delta_r: float
    young_modulus: float
    mixing_enthalpy: float
    mixing_entropy: float
    work_function: float
    shear_modulus: float
    modulus_mismatch: float
    shear_modulus_diff: float
    melting_temp: float
    cohesive_energy: float
    ionization_energy: float
    pauling_en_diff: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


FEATURE_NAMES = tuple(f.name for f in fields(FeatureVector))

FEATURE_UNITS = {
    "mean_vec": "electrons/atom",
    "delta_x": "",
    "delta_r": "%",
    "young_modulus": "GPa",
    "mixing_enthalpy": "kJ/mol",
    "mixing_entropy": "J/(mol K)",
    "work_function": "eV",
    "shear_modulus": "GPa",
    "modulus_mismatch": "",
    "shear_modulus_diff": "",
    "melting_temp": "K",
    "cohesive_energy": "eV/atom",
    "ionization_energy": "eV",
    "pauling_en_diff": "",
}


def _props(c: Composition, t: ElementTable, attr: str) -> np.ndarray:
    return np.array([getattr(lookup(t, s), attr) for s in c.elements])


def _wmean(x: np.ndarray, p: np.ndarray) -> float:
    return float(np.dot(x, p))


def weighted_means(c: Composition, t: ElementTable | None = None) -> dict[str, float]:
    """Fraction-weighted means sum_i x_i P_i of the seven additive properties."""
    t = default_element_table() if t is None else t
    x = np.array(atomic_fractions(c))
    return {
        "mean_vec": _wmean(x, _props(c, t, "vec")),
        "young_modulus": _wmean(x, _props(c, t, "young_modulus")),
        "work_function": _wmean(x, _props(c, t, "work_function")),
        "shear_modulus": _wmean(x, _props(c, t, "shear_modulus")),
        "melting_temp": _wmean(x, _props(c, t, "melting_temp")),
        "cohesive_energy": _wmean(x, _props(c, t, "cohesive_energy")),
        "ionization_energy": _wmean(x, _props(c, t, "ionization_energy")),
    }


def deviation_features(c: Composition, t: ElementTable | None = None) -> dict[str, float]:
    t = default_element_table() if t is None else t
    x = np.array(atomic_fractions(c))
    en = _props(c, t, "electronegativity")
    r = _props(c, t, "atomic_radius")
    g = _props(c, t, "shear_modulus")
    en_bar, r_bar, g_bar = _wmean(x, en), _wmean(x, r), _wmean(x, g)
    return {
        "delta_x": math.sqrt(_wmean(x, (en - en_bar) ** 2)),
        "delta_r": _wmean(x, ((r - r_bar) / r_bar) ** 2) * 100.0,
        "modulus_mismatch": _wmean(x, (2.0 * (g - g_bar) / (g + g_bar)) ** 2),
        "shear_modulus_diff": _wmean(x, (1.0 - g / g_bar) ** 2),
    }


def pairwise_features(
    c: Composition, t: ElementTable | None = None, p: PairEnthalpyTable | None = None
) -> dict[str, float]:
    t = default_element_table() if t is None else t
    p = default_pair_table() if p is None else p
    x = atomic_fractions(c)
    syms = c.elements
    en = _props(c, t, "electronegativity")
    dh_mix = 0.0
    dxp = 0.0
    for i, si in enumerate(syms):
        for j, sj in enumerate(syms):
            if i == j:
                continue
            dh_mix += x[i] * x[j] * p.get(si, sj)
            dxp += x[i] * x[j] * (en[i] - en[j]) ** 2
    return {"mixing_enthalpy": dh_mix, "pauling_en_diff": float(dxp)}


def mixing_entropy(c: Composition) -> float:
    """Ideal configurational entropy -R sum x_i ln x_i in J/(mol K)."""
    s = -GAS_CONSTANT * sum(x * math.log(x) for x in atomic_fractions(c))
    # a single element gives -0.0
    return s + 0.0


def featurize(
    c: Composition, t: ElementTable | None = None, p: PairEnthalpyTable | None = None
) -> FeatureVector:
    values = {}
    values.update(weighted_means(c, t))
    values.update(deviation_features(c, t))
    values.update(pairwise_features(c, t, p))
    values["mixing_entropy"] = mixing_entropy(c)
    return FeatureVector(**values)


def feature_matrix(comps, t=None, p=None) -> np.ndarray:
    return np.array([featurize(c, t, p).as_array() for c in comps]).reshape(-1, len(FEATURE_NAMES))


def _fmt(v: float) -> str:
    return repr(float(v))


def write_feature_csv(path_or_buf, rows) -> None:
    """Write ``(composition, FeatureVector)`` rows with a ``composition`` column first.

    Floats are written with ``repr`` so reading the file back is lossless.
    """
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("composition",) + FEATURE_NAMES)
        for comp, fv in rows:
            text = comp if isinstance(comp, str) else canonical_string(comp)
            w.writerow([text] + [_fmt(v) for v in astuple(fv)])
    finally:
        if own:
            fh.close()


def feature_csv_text(rows) -> str:
    buf = io.StringIO()
    write_feature_csv(buf, rows)
    return buf.getvalue()
