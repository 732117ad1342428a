"""
Classical baselines
===================

Run the five classical regressors through the same leak-free K-fold harness
on the element-fraction design matrix.
"""

from heaformer.baselines import expand_design_matrix, make_fit_predict
from heaformer.chem import parse_composition
from heaformer.datagen import GeneratorConfig, generate_corpus
from heaformer.dataset import Row
from heaformer.evaluate import aggregate, cross_validate

corpus = generate_corpus(GeneratorConfig(corpus_size=300, seed=11))
rows = [Row(parse_composition(t), fv.as_array(), fv.mixing_entropy) for t, fv in corpus]

# element columns only; with use_features=True the descriptor columns come first
dm = expand_design_matrix(rows, use_features=False)
print(f"design matrix {dm.X.shape}, columns {dm.columns[:5]} ...")

for algo in ("gp", "dt", "rf", "gbr", "knn"):
    reports = cross_validate(dm.X, dm.y, make_fit_predict(algo, seed=0), k=5, seed=0)
    agg = aggregate(reports)
    print(f"{algo:>4}: mean mse {agg.mean['mse']:.3f}  mean r2 {agg.mean['r2']:.3f}")
