"""
Element-pair attention
======================

Read last-layer attention out of a fine-tuned encoder and reduce it to a
symmetric element-by-element matrix ready for a heat map.
"""

import numpy as np

from heaformer.chem import parse_composition
from heaformer.datagen import GeneratorConfig, generate_corpus
from heaformer.dataset import Row
from heaformer.encoder import EncoderConfig, TrainConfig, finetune
from heaformer.interpret import attention_csv, element_attention

corpus = generate_corpus(GeneratorConfig(corpus_size=120, seed=3))
rows = [Row(parse_composition(t), fv.as_array(), fv.mixing_enthalpy) for t, fv in corpus]
cfg = EncoderConfig(n_layers=2, n_heads=2, d_model=16, d_ff=32, max_len=32)
model, _ = finetune(rows, None, "all", cfg, TrainConfig(learning_rate=3e-3, epochs=10), use_features=True)

alloy = parse_composition("Al0.5CoCrFeNi")
m = element_attention(model, alloy)
print(attention_csv(m))

# the diagonal is masked; the strongest pair is the largest off-diagonal cell
i, j = np.unravel_index(np.nanargmax(m.matrix), m.matrix.shape)
print(f"strongest pair: {m.elements[i]}-{m.elements[j]} ({m.matrix[i, j]:.4f})")

# numeric descriptor tokens can be kept as one extra group
print(element_attention(model, alloy, include_feature_tokens=True).elements)
