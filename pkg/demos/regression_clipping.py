"""
Uncertainty away from the data, and how clipping tames it
=========================================================

One-dimensional regression with training inputs in two clusters. The fitted
noise leaves predictions tight on the clusters and spreads them outside.
Clamping each noise coordinate to [-C, C] at test time moves the model back
toward the deterministic network as C shrinks.
"""

import numpy as np

from maxwent import experiment as E
from maxwent.cli import CLIP_SWEEP
from maxwent.data import f_star
from maxwent.evaluation import predict_samples, uncertainty
from maxwent.trainer import pretrain

task = E.make_task("1d-regression", seed=0)
cfg = E.default_config(task, seed=0)
w_bar = pretrain(task.spec, task.train, task.val, cfg)
fitted = E.fit_method(task, "maxwent-svd", cfg, pretrained=[w_bar])

grid = np.linspace(-2, 2, 17)
sample = predict_samples(fitted.predictor(), task.spec, grid[:, None], P=50, seed=0)
u = uncertainty(sample)
print("     x     f*(x)   mean   +-2 sqrt(u)")
for x, m, s in zip(grid, sample.mu.mean(axis=0), 2 * np.sqrt(u)):
    print(f"{x:6.2f} {f_star(x):8.3f} {m:7.3f} {s:9.3f}")

dense = np.linspace(-2, 2, 200)[:, None]
print("\nclip level C -> mean uncertainty on [-2, 2]")
for C in sorted(CLIP_SWEEP):
    s = predict_samples(fitted.with_clip(C).predictor(), task.spec, dense, P=50, seed=0)
    print(f"{C:>6} {np.mean(uncertainty(s)):.4f}")
