"""
Comparing healthy and protruded corneas
=======================================

Distance cells pooled over a synthetic corpus separate the two groups.
This script prints the group test, the box statistics and a text box plot.

Run from the repository root::

    python demos/plot_group_statistics.py [n_per_group]
"""

import sys

import numpy as np

from kcscreen import pipeline, stats, synth
from kcscreen.config import PipelineConfig

n = int(sys.argv[1]) if len(sys.argv) > 1 else 6

# %%
# Build and train
# ---------------

base = synth.SceneSpec(image_size=512, base_gap=22.0, ring_thickness=7.0)
scenes = []
for sid, spec in synth.corpus_specs(n, n, base, rng_seed=3):
    image, truth = synth.render_scene(spec)
    scenes.append(pipeline.Scene(sid, spec.label, image, synth.noiseless_mask(spec), truth))

models, metrics, results = pipeline.train_all(scenes, PipelineConfig(seed=3))

# %%
# Group test on pooled cells
# --------------------------

cells = {label: np.concatenate([r.matrix.values[~np.isnan(r.matrix.values)]
                                for r in results if r.label == label])
         for label in ("kc", "control")}
report = stats.compare_groups(cells["kc"], cells["control"])
print(f"t = {report.t_score:.2f}  df = {report.df:.0f}  p {stats.format_p(report.p_value)}")
print(f"effect size t/sqrt(n1+n2) = {report.effect_size_t:.3f}  Cohen's d = {report.cohens_d:.3f}")
print(f"clustering accuracy {metrics['clustering_accuracy']:.3f}, "
      f"held-out cell accuracy {metrics['cell_accuracy']:.3f}")

# %%
# Box statistics, drawn as text
# -----------------------------

boxes = {k: stats.box_stats(v) for k, v in cells.items()}
lo = min(b.whisker_low for b in boxes.values())
hi = max(b.whisker_high for b in boxes.values())
width = 60


def col(v):
    return int(round((v - lo) / (hi - lo) * (width - 1)))


print()
for label, b in boxes.items():
    line = [" "] * width
    for i in range(col(b.whisker_low), col(b.whisker_high) + 1):
        line[i] = "-"
    for i in range(col(b.q1), col(b.q3) + 1):
        line[i] = "="
    line[col(b.median)] = "|"
    print(f"{label:>8} {''.join(line)}  median {b.median:.1f} px, {len(b.outliers)} outliers")
print(f"{'':>8} {lo:<{width // 2}.1f}{hi:>{width - width // 2}.1f}")
