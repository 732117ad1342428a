"""
Composition descriptors
=======================

Parse a few alloy formulas and compute the fourteen descriptors.
"""

from heaformer.chem import atomic_fractions, canonical_string, parse_composition
from heaformer.features import FEATURE_NAMES, FEATURE_UNITS, featurize

# symbols without a number get coefficient 1; order in the text does not matter
alloys = ["CoCrFeMnNi", "Al0.5CoCrFeNi", "Ni1 Co1.2 Fe0.8", "Fe"]
comps = [parse_composition(a) for a in alloys]
for text, c in zip(alloys, comps):
    fractions = ", ".join(f"{s}={x:.3f}" for s, x in zip(c.elements, atomic_fractions(c)))
    print(f"{text:>16} -> {canonical_string(c):<28} {fractions}")

# the equimolar five-element alloy has mixing entropy R ln 5
print()
for name in FEATURE_NAMES:
    row = "  ".join(f"{getattr(featurize(c), name):>10.4f}" for c in comps)
    print(f"{name:>20} {FEATURE_UNITS[name]:>14}  {row}")

# a pure element has no mismatch, no mixing enthalpy and no entropy
single = featurize(comps[-1])
print("\nFe deviations:", single.delta_x, single.delta_r, single.mixing_entropy)
