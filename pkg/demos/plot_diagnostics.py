"""
Confusion mass, entropy and rectification
=========================================

Summaries computed from predicted probabilities rather than hard labels.
"""

import numpy as np

from ptrlab.diagnostics import confusion_mass, diagnostics_report, write_matrix_csv

rng = np.random.default_rng(2)
labels = rng.integers(0, 4, 200)


def fake_probs(sharpness):
    logits = rng.normal(size=(200, 4)) + sharpness * np.eye(4)[labels]
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    return p / p.sum(axis=1, keepdims=True)


baseline, model = fake_probs(1.5), fake_probs(2.5)
rep = diagnostics_report(model, labels, baseline_probs=baseline)
print(f"S {rep['S']:.1f}  S' {rep['S_prime']:.1f}  n {rep['n_samples']}")
print(f"entropy {rep['baseline']['mean_entropy_bits']:.3f} -> {rep['mean_entropy_bits']:.3f} bits")
print("rectification", rep["rectification"]["counts"])

###############################################################################
# The matrix itself: rows are true classes, columns accumulate probability.
C = confusion_mass(model, labels).C
print(np.round(C, 1))
write_matrix_csv("confusion_mass.csv", C)
