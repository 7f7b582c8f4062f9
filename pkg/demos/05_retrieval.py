"""
Ranking and recall
==================
"""

import numpy as np

from geocaps.retrieval import recall_curve, top_percent_k

rng = np.random.default_rng(0)

# 500 locations; ground descriptors are noisy copies of the satellite ones
sat = rng.standard_normal((500, 32))
ground = sat + 1.2 * rng.standard_normal((500, 32))
sat /= np.linalg.norm(sat, axis=1, keepdims=True)
ground /= np.linalg.norm(ground, axis=1, keepdims=True)

report = recall_curve(ground, sat, k_list=(1, 5, 10, 20, 50), percent_list=(1, 10))
for metric, k, value in report.rows():
    print(f"{metric:<12} {k:>4}  {value}")

# top-p% is recall@K with K rounded up
print("K for 1% of 8884:", top_percent_k(8884, 1), "| of 100:", top_percent_k(100, 1))

# unrelated embeddings sit at chance
noise = rng.standard_normal((1000, 32))
print("random recall@top1%:", recall_curve(noise, rng.standard_normal((1000, 32))).recall_at_top_percent[1.0])
