"""
Pruning under-optimized weights
===============================

Zeroes an increasing fraction of the weights whose magnitude grew least
during training and measures clean and PGD accuracy after each step.
Writes the curve to pruning.svg.
"""

from dissect.pipeline import ExperimentConfig, run_pruning_sweep
from dissect.plots import line_svg, write_svg

fractions = [k / 10 for k in range(10)]
rows = run_pruning_sweep(ExperimentConfig(seed=0), fractions)

for r in rows:
    print("%.1f  clean %.3f  adversarial %.3f" % (r["fraction"], r["clean_accuracy"], r["adversarial_accuracy"]))

svg = line_svg(
    fractions,
    {"clean": [r["clean_accuracy"] for r in rows],
     "adversarial": [r["adversarial_accuracy"] for r in rows]},
    title="Accuracy after pruning", xlabel="pruned fraction", ylabel="accuracy",
)
write_svg(svg, "pruning.svg")
