"""The whole loop: serve, watch, decide, retrain, recover.

Runs the bundled covariate-shift scenario (two Gaussian classes, the
discriminative feature moves by 2 standard deviations at event 50000),
prints the run report and an accuracy timeline, then replays the recorded
input and checks that the policy takes the same decisions.

    python demos/03_self_correcting_loop.py [out_dir]
"""

import sys
import tempfile
from pathlib import Path

from driftline.cli import format_text
from driftline.config import load_config_file
from driftline.pipeline import assess_recovery, replay, run

here = Path(__file__).resolve().parent
cfg = load_config_file(here.parent / "scenarios" / "covariate_shift.yaml")
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="driftline-"))

rep = run(cfg, out / "run")
print(format_text(rep))

print("served accuracy per 1000 events (from event 40000):")
retrain = {m["created_at"] // 1000 for m in rep.retrains()}
for b in range(40, 65):
    acc = rep.bucket_accuracy(b * 1000, (b + 1) * 1000)
    mark = " <- shift" if b == 50 else " <- retrained model live" if b in retrain else ""
    print(f"  {b * 1000:>6}  {acc:.3f}  {'#' * int(acc * 40)}{mark}")

a = assess_recovery(rep, 50_000)
print(f"\naccuracy before the shift {a['pre']:.3f}, right after {a['post']:.3f}; "
      f"retrained at {a['retrain_at']}, back to {a['recovered_accuracy']:.3f} by {a['recovered_at']}")

again = replay(out / "run", out / "replay")
print(f"replay takes the same {len(again.actions)} actions: {again.actions == rep.actions}")
print(f"stores under {out}")
