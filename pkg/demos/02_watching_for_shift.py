"""A monitor watching a feature stream, and what it says when the stream moves.

Four Gaussian features; at event 3000 the third one moves by two standard
deviations.  The data monitor freezes a reference window, slides a test
window over the stream and runs the per-feature KS bank.  Afterwards the same
two windows are handed to KLIEP for a density-ratio view of the change, and
EDDM watches an error stream whose rate jumps from 1% to 20%.
"""

import numpy as np

from driftline.monitor import DataMonitor
from driftline.shift import EDDM, WindowPair, change_score, kliep_fit, permutation_null

rng = np.random.default_rng(3)
x = rng.normal(size=(6000, 4))
x[3000:, 2] += 2.0

monitor = DataMonitor()
for i, row in enumerate(x):
    report, events = monitor.step(row, i)
    for e in events:
        if "reference_frozen" in e.payload:
            print(f"t={i}: reference frozen over {e.payload['reference_frozen']}")
    if report is not None:
        print(f"t={i}: {report.shift_type} shift, p={report.p_value:.2e}, "
              f"windows ref {report.ref_window} / test {report.test_window}")
        for name, stat in report.top_features:
            print(f"    {name}: KS D = {stat:.3f}")
        break

pair = WindowPair(x[2000:2300, :2], x[3000:3300, :2])
quiet = kliep_fit(pair, n_centers=50, seed=0)
pair = WindowPair(x[2000:2300, 2:], x[3000:3300, 2:])
moved = kliep_fit(pair, n_centers=50, seed=0)
null = permutation_null(pair, 100, seed=0, n_centers=50, sigma_grid=[moved.sigma])
print(f"\nKLIEP change score, unshifted features: {change_score(quiet, x[3000:3300, :2]):.3f}")
print(f"KLIEP change score, shifted features:   {change_score(moved, pair.test):.3f} "
      f"(null 99th percentile {np.percentile(null, 99):.3f})")

eddm = EDDM()
errors = np.concatenate([rng.random(5000) < 0.01, rng.random(2000) < 0.20])
for i, err in enumerate(errors):
    level = eddm.update(bool(err))
    if level != "normal" and i >= 5000:
        print(f"\nEDDM: {level} at step {i} ({i - 5000} steps after the error rate jumped)")
        break
